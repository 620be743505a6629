#include "fastat/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace fastat::analysis {

namespace {

std::ofstream open_out(const std::string& path) {
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write output file: " + path);
    return out;
}

std::string sidecar_csv_path(const std::string& plot_path) {
    fs::path p(plot_path);
    p.replace_extension(".csv");
    return p.string();
}

const char* palette(size_t i) {
    static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                   "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    return colors[i % (sizeof(colors) / sizeof(colors[0]))];
}

std::string star_path(double cx, double cy, double r) {
    std::ostringstream out;
    for (int i = 0; i < 10; ++i) {
        const double angle = -M_PI / 2.0 + i * M_PI / 5.0;
        const double radius = (i % 2 == 0) ? r : 0.45 * r;
        out << (i == 0 ? "M" : "L") << cx + radius * std::cos(angle) << ","
            << cy + radius * std::sin(angle);
    }
    out << "Z";
    return out.str();
}

struct MethodMeans {
    std::string method;
    std::map<std::string, double> means;  // metric key -> mean (NaN when absent)
};

std::vector<MethodMeans> summary_means(const std::vector<evalsuite::AggregateResult>& summary) {
    std::vector<MethodMeans> out;
    for (const auto& agg : summary) {
        MethodMeans m;
        m.method = agg.method;
        for (const auto& key : evalsuite::metric_keys()) {
            auto it = agg.metrics.find(key);
            m.means[key] = (it == agg.metrics.end() || it->second.n == 0) ? std::nan("")
                                                                          : it->second.mean;
        }
        out.push_back(std::move(m));
    }
    std::sort(out.begin(), out.end(),
              [](const MethodMeans& a, const MethodMeans& b) { return a.method < b.method; });
    return out;
}

void emit_markdown(const std::vector<evalsuite::AggregateResult>& summary,
                   const std::string& path) {
    auto out = open_out(path);
    out << "| Method | Clean | PGD-10 | PGD-20 | PGD-50 | AA | Time | Mem |\n";
    out << "|---|---|---|---|---|---|---|---|\n";
    std::vector<evalsuite::AggregateResult> rows = summary;
    std::sort(rows.begin(), rows.end(),
              [](const auto& a, const auto& b) { return a.method < b.method; });
    auto cell = [](const evalsuite::AggregateResult& r, const std::string& key,
                   bool mean_only) -> std::string {
        auto it = r.metrics.find(key);
        if (it == r.metrics.end() || it->second.n == 0 || std::isnan(it->second.mean)) return "—";
        if (mean_only) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.2f", it->second.mean);
            return buf;
        }
        return evalsuite::format_mean_std(it->second);
    };
    for (const auto& r : rows) {
        out << "| " << r.method << " | " << cell(r, "clean_pct", false) << " | "
            << cell(r, "pgd10_pct", false) << " | " << cell(r, "pgd20_pct", false) << " | "
            << cell(r, "pgd50_pct", false) << " | " << cell(r, "aa_lite_pct", false) << " | "
            << cell(r, "train_seconds", true) << " | " << cell(r, "peak_memory_gb", true)
            << " |\n";
    }
}

void emit_csv(const std::vector<evalsuite::AggregateResult>& summary, const std::string& path) {
    auto out = open_out(path);
    out << "method";
    for (const auto& key : evalsuite::metric_keys())
        out << "," << key << "_mean," << key << "_std," << key << "_n";
    out << "\n";
    std::vector<evalsuite::AggregateResult> rows = summary;
    std::sort(rows.begin(), rows.end(),
              [](const auto& a, const auto& b) { return a.method < b.method; });
    for (const auto& r : rows) {
        out << r.method;
        for (const auto& key : evalsuite::metric_keys()) {
            auto it = r.metrics.find(key);
            if (it == r.metrics.end() || it->second.n == 0)
                out << ",,,0";
            else
                out << "," << it->second.mean << "," << it->second.std << "," << it->second.n;
        }
        out << "\n";
    }
}

void emit_pareto_plot(const std::vector<evalsuite::AggregateResult>& summary,
                      const std::string& path) {
    auto points = pareto_points_from_summary(summary);
    if (points.empty()) throw std::invalid_argument("pareto plot: no complete (time, aa) points");
    auto frontier = pareto_frontier(points);
    std::set<std::string> optimal;
    for (const auto& p : frontier) optimal.insert(p.label);

    // sidecar with the exact plotted values
    {
        auto csv = open_out(sidecar_csv_path(path));
        csv << "method,train_seconds,aa_lite_pct,pareto_optimal\n";
        for (const auto& p : points)
            csv << p.label << "," << p.cost << "," << p.score << ","
                << (optimal.count(p.label) ? 1 : 0) << "\n";
    }

    const double width = 720, height = 520;
    const double ml = 70, mr = 30, mt = 30, mb = 55;
    double cmin = points[0].cost, cmax = points[0].cost;
    double smin = points[0].score, smax = points[0].score;
    for (const auto& p : points) {
        cmin = std::min(cmin, p.cost);
        cmax = std::max(cmax, p.cost);
        smin = std::min(smin, p.score);
        smax = std::max(smax, p.score);
    }
    if (cmax == cmin) cmax = cmin + 1;
    if (smax == smin) smax = smin + 1;
    auto sx = [&](double c) { return ml + (c - cmin) / (cmax - cmin) * (width - ml - mr); };
    auto sy = [&](double s) { return height - mb - (s - smin) / (smax - smin) * (height - mt - mb); };

    auto out = open_out(path);
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
        << "'>\n";
    out << "<rect width='100%' height='100%' fill='white'/>\n";
    out << "<line x1='" << ml << "' y1='" << height - mb << "' x2='" << width - mr << "' y2='"
        << height - mb << "' stroke='black'/>\n";
    out << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << height - mb
        << "' stroke='black'/>\n";
    out << "<text x='" << width / 2 << "' y='" << height - 12
        << "' text-anchor='middle' font-size='14'>training time (s)</text>\n";
    out << "<text x='18' y='" << height / 2 << "' text-anchor='middle' font-size='14' "
        << "transform='rotate(-90 18 " << height / 2 << ")'>AA accuracy (%)</text>\n";
    for (int t = 0; t <= 4; ++t) {
        double c = cmin + t * (cmax - cmin) / 4.0;
        double s = smin + t * (smax - smin) / 4.0;
        out << "<text x='" << sx(c) << "' y='" << height - mb + 18
            << "' text-anchor='middle' font-size='11'>" << static_cast<int>(c) << "</text>\n";
        out << "<text x='" << ml - 8 << "' y='" << sy(s) + 4
            << "' text-anchor='end' font-size='11'>" << s << "</text>\n";
    }
    // frontier staircase, cost-ascending
    out << "<polyline fill='none' stroke='#1f77b4' stroke-dasharray='4 3' points='";
    for (const auto& p : frontier) out << sx(p.cost) << "," << sy(p.score) << " ";
    out << "'/>\n";
    for (const auto& p : points) {
        if (optimal.count(p.label))
            out << "<path d='" << star_path(sx(p.cost), sy(p.score), 9)
                << "' fill='#d62728' stroke='black' stroke-width='0.6'/>\n";
        else
            out << "<circle cx='" << sx(p.cost) << "' cy='" << sy(p.score)
                << "' r='4' fill='#1f77b4'/>\n";
        out << "<text x='" << sx(p.cost) + 8 << "' y='" << sy(p.score) - 6
            << "' font-size='10'>" << p.label << "</text>\n";
    }
    out << "</svg>\n";
}

void emit_radar_plot(const std::vector<evalsuite::AggregateResult>& summary,
                     const std::string& path) {
    static const std::vector<RadarMetric> axes = {
        {"Clean", Direction::higher_better},  {"PGD-10", Direction::higher_better},
        {"PGD-20", Direction::higher_better}, {"PGD-50", Direction::higher_better},
        {"AA", Direction::higher_better},     {"Time", Direction::lower_better},
        {"Mem", Direction::lower_better},
    };
    static const std::vector<std::string> keys = {
        "clean_pct", "pgd10_pct", "pgd20_pct",     "pgd50_pct",
        "aa_lite_pct", "train_seconds", "peak_memory_gb",
    };

    std::map<std::string, std::vector<double>> rows;
    for (const auto& m : summary_means(summary)) {
        std::vector<double> vals;
        bool complete = true;
        for (const auto& key : keys) {
            double v = m.means.at(key);
            if (std::isnan(v)) complete = false;
            vals.push_back(v);
        }
        if (complete) rows[m.method] = vals;
    }
    if (rows.empty()) throw std::invalid_argument("radar plot: no methods with complete metrics");

    auto table = radar_select(axes, rows);

    {
        auto csv = open_out(sidecar_csv_path(path));
        csv << "method";
        for (const auto& metric : axes) csv << "," << metric.name;
        csv << "\n";
        for (const auto& method : table.selected) {
            csv << method;
            for (double v : table.normalized.at(method)) csv << "," << v;
            csv << "\n";
        }
    }

    const double size = 560;
    const double cx = size / 2, cy = size / 2 + 10, radius = size / 2 - 90;
    const size_t k = axes.size();
    auto point = [&](size_t axis, double value) {
        const double angle = -M_PI / 2.0 + 2.0 * M_PI * axis / k;
        return std::pair{cx + radius * value * std::cos(angle),
                         cy + radius * value * std::sin(angle)};
    };

    auto out = open_out(path);
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << size << "' height='" << size
        << "'>\n<rect width='100%' height='100%' fill='white'/>\n";
    for (double ring : {0.25, 0.5, 0.75, 1.0}) {
        out << "<polygon fill='none' stroke='#cccccc' points='";
        for (size_t a = 0; a < k; ++a) {
            auto [x, y] = point(a, ring);
            out << x << "," << y << " ";
        }
        out << "'/>\n";
    }
    for (size_t a = 0; a < k; ++a) {
        auto [x, y] = point(a, 1.0);
        out << "<line x1='" << cx << "' y1='" << cy << "' x2='" << x << "' y2='" << y
            << "' stroke='#cccccc'/>\n";
        auto [lx, ly] = point(a, 1.14);
        out << "<text x='" << lx << "' y='" << ly
            << "' text-anchor='middle' font-size='12'>" << axes[a].name << "</text>\n";
    }
    size_t color = 0;
    for (const auto& method : table.selected) {
        out << "<polygon fill='" << palette(color) << "' fill-opacity='0.15' stroke='"
            << palette(color) << "' stroke-width='2' points='";
        const auto& vals = table.normalized.at(method);
        for (size_t a = 0; a < k; ++a) {
            auto [x, y] = point(a, vals[a]);
            out << x << "," << y << " ";
        }
        out << "'/>\n";
        out << "<text x='20' y='" << 24 + 16 * color << "' font-size='12' fill='"
            << palette(color) << "'>" << method << "</text>\n";
        ++color;
    }
    out << "</svg>\n";
}

}  // namespace

std::vector<ParetoPoint> pareto_frontier(const std::vector<ParetoPoint>& points) {
    std::set<std::string> labels;
    for (const auto& p : points)
        if (!labels.insert(p.label).second)
            throw std::invalid_argument("pareto_frontier: duplicate label '" + p.label + "'");

    std::vector<ParetoPoint> kept;
    for (const auto& p : points) {
        bool dominated = false;
        for (const auto& q : points) {
            if (&p == &q) continue;
            if (q.cost <= p.cost && q.score >= p.score &&
                (q.cost < p.cost || q.score > p.score)) {
                dominated = true;
                break;
            }
        }
        if (!dominated) kept.push_back(p);
    }
    std::sort(kept.begin(), kept.end(), [](const ParetoPoint& a, const ParetoPoint& b) {
        if (a.cost != b.cost) return a.cost < b.cost;
        if (a.score != b.score) return a.score > b.score;
        return a.label < b.label;
    });
    return kept;
}

std::vector<double> minmax_normalize(const std::vector<double>& values, Direction direction) {
    if (values.empty()) throw std::invalid_argument("minmax_normalize: empty input");
    double lo = values[0], hi = values[0];
    for (double v : values) {
        if (std::isnan(v)) continue;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    std::vector<double> out;
    out.reserve(values.size());
    for (double v : values) {
        if (std::isnan(v)) {
            out.push_back(v);
        } else if (hi == lo) {
            out.push_back(0.5);
        } else if (direction == Direction::higher_better) {
            out.push_back((v - lo) / (hi - lo));
        } else {
            out.push_back((hi - v) / (hi - lo));
        }
    }
    return out;
}

RadarTable radar_select(const std::vector<RadarMetric>& metrics,
                        const std::map<std::string, std::vector<double>>& rows) {
    if (metrics.empty() || rows.empty())
        throw std::invalid_argument("radar_select: need at least one metric and one method");
    for (const auto& [method, vals] : rows)
        if (vals.size() != metrics.size())
            throw std::invalid_argument("radar_select: row size mismatch for " + method);

    RadarTable table;
    table.metrics = metrics;
    table.rows = rows;

    for (size_t m = 0; m < metrics.size(); ++m) {
        // rank by direction-adjusted value, take the top two
        std::vector<std::pair<double, std::string>> ranked;
        for (const auto& [method, vals] : rows) {
            double v = vals[m];
            if (std::isnan(v)) continue;
            ranked.emplace_back(metrics[m].direction == Direction::higher_better ? v : -v,
                                method);
        }
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (size_t i = 0; i < ranked.size() && i < 2; ++i) {
            const auto& method = ranked[i].second;
            if (std::find(table.selected.begin(), table.selected.end(), method) ==
                table.selected.end())
                table.selected.push_back(method);
        }
    }

    // normalize over ALL methods, then keep rows for everyone (selected or not)
    std::vector<std::string> order;
    for (const auto& [method, vals] : rows) order.push_back(method);
    for (size_t m = 0; m < metrics.size(); ++m) {
        std::vector<double> column;
        for (const auto& method : order) column.push_back(rows.at(method)[m]);
        auto normalized = minmax_normalize(column, metrics[m].direction);
        for (size_t i = 0; i < order.size(); ++i) {
            auto& row = table.normalized[order[i]];
            if (row.empty()) row.resize(metrics.size(), std::nan(""));
            row[m] = normalized[i];
        }
    }
    return table;
}

std::vector<ParetoPoint> pareto_points_from_summary(
    const std::vector<evalsuite::AggregateResult>& summary, const std::string& cost_key,
    const std::string& score_key) {
    std::vector<ParetoPoint> out;
    for (const auto& agg : summary) {
        auto cit = agg.metrics.find(cost_key);
        auto sit = agg.metrics.find(score_key);
        if (cit == agg.metrics.end() || sit == agg.metrics.end()) continue;
        if (cit->second.n == 0 || sit->second.n == 0) continue;
        if (std::isnan(cit->second.mean) || std::isnan(sit->second.mean)) continue;
        out.push_back({agg.method, cit->second.mean, sit->second.mean});
    }
    return out;
}

void emit(const std::vector<evalsuite::AggregateResult>& summary, EmitKind kind,
          const std::string& out_path) {
    if (summary.empty()) throw std::invalid_argument("emit: empty summary");
    switch (kind) {
        case EmitKind::markdown_table: emit_markdown(summary, out_path); break;
        case EmitKind::csv: emit_csv(summary, out_path); break;
        case EmitKind::pareto_plot: emit_pareto_plot(summary, out_path); break;
        case EmitKind::radar_plot: emit_radar_plot(summary, out_path); break;
    }
}

}  // namespace fastat::analysis
