#pragma once

#include <map>
#include <string>
#include <vector>

#include "fastat/evalsuite.hpp"

namespace fastat::analysis {

struct ParetoPoint {
    std::string label;
    double cost = 0.0;   // seconds, minimized
    double score = 0.0;  // percent, maximized
};

// Weak-dominance frontier: p survives iff no q has (q.cost <= p.cost and
// q.score >= p.score) with at least one strict; ties on both coordinates are
// kept. Output sorted by cost ascending. Throws on duplicate labels.
std::vector<ParetoPoint> pareto_frontier(const std::vector<ParetoPoint>& points);

enum class Direction { higher_better, lower_better };

struct RadarMetric {
    std::string name;
    Direction direction = Direction::higher_better;
};

struct RadarTable {
    std::vector<RadarMetric> metrics;
    std::map<std::string, std::vector<double>> rows;        // method -> raw values
    std::vector<std::string> selected;                      // union of per-metric top-2
    std::map<std::string, std::vector<double>> normalized;  // method -> values in [0,1]
};

// Per metric, picks the top-2 methods after direction adjustment; `selected`
// is the deduplicated union. Normalization is minmax over all methods'
// direction-adjusted values (constant columns map to 0.5).
RadarTable radar_select(const std::vector<RadarMetric>& metrics,
                        const std::map<std::string, std::vector<double>>& rows);

std::vector<double> minmax_normalize(const std::vector<double>& values, Direction direction);

enum class EmitKind { markdown_table, csv, pareto_plot, radar_plot };

// Renders one dataset's aggregated results. Tables are "mean ± std" in the
// paper's column order; plots are SVG plus a sidecar CSV of the exact
// plotted values, with Pareto-optimal points star-marked.
void emit(const std::vector<evalsuite::AggregateResult>& summary, EmitKind kind,
          const std::string& out_path);

// (train_seconds, aa_lite) points for pareto analysis; methods missing either
// metric are skipped.
std::vector<ParetoPoint> pareto_points_from_summary(
    const std::vector<evalsuite::AggregateResult>& summary,
    const std::string& cost_key = "train_seconds", const std::string& score_key = "aa_lite_pct");

}  // namespace fastat::analysis
