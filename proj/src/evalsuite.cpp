#include "fastat/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <torch/torch.h>

#include "fastat/attacks.hpp"

namespace fs = std::filesystem;

namespace fastat::evalsuite {

namespace {

std::string utc_timestamp() {
    std::time_t t = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%FT%TZ", std::gmtime(&t));
    return buf;
}

double metric_or_nan(const std::map<std::string, double>& m, const std::string& key) {
    auto it = m.find(key);
    return it == m.end() ? std::nan("") : it->second;
}

void put_number(nlohmann::json& j, const std::string& key, double v) {
    if (std::isnan(v))
        j[key] = nullptr;
    else
        j[key] = v;
}

double get_number(const nlohmann::json& j, const std::string& key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nan("");
    return j.at(key).get<double>();
}

}  // namespace

const std::vector<std::string>& metric_keys() {
    static const std::vector<std::string> keys = {
        "clean_pct",  "pgd10_pct",     "pgd20_pct",      "pgd50_pct",
        "aa_lite_pct", "train_seconds", "peak_memory_gb",
    };
    return keys;
}

RunResult evaluate(const modelzoo::Checkpoint& ckpt, const dataio::DatasetPart& test,
                   const ThreatModel& threat, const config::EvalSpec& suite,
                   const RunProvenance& provenance, uint64_t eval_seed) {
    auto model = modelzoo::model_from_checkpoint(ckpt);
    return evaluate(model, test, threat, suite, provenance, eval_seed);
}

RunResult evaluate(const modelzoo::ModelHandle& model, const dataio::DatasetPart& test,
                   const ThreatModel& threat, const config::EvalSpec& suite,
                   const RunProvenance& provenance, uint64_t eval_seed) {
    model.set_train(false);

    std::vector<int64_t> all(test.size());
    for (int64_t i = 0; i < test.size(); ++i) all[i] = i;
    auto x = dataio::materialize_images(test, all);
    auto y = dataio::materialize_labels(test, all);

    std::vector<attacks::AttackSpec> pgd_suite;
    for (int k : suite.pgd_iters) {
        attacks::AttackSpec spec;
        spec.kind = attacks::AttackKind::pgd;
        spec.iterations = k;
        spec.step = threat.eval_step;
        spec.restarts = suite.restarts;
        spec.random_start = true;
        pgd_suite.push_back(spec);
    }
    auto pgd_result = attacks::ensemble_accuracy(model, x, y, pgd_suite, threat,
                                                 suite.batch_size, eval_seed);

    RunResult r;
    r.method = provenance.method;
    r.dataset = provenance.dataset;
    r.seed = provenance.seed;
    r.clean_pct = pgd_result.clean_pct;
    r.pgd10_pct = metric_or_nan(pgd_result.per_attack_pct, "pgd10");
    r.pgd20_pct = metric_or_nan(pgd_result.per_attack_pct, "pgd20");
    r.pgd50_pct = metric_or_nan(pgd_result.per_attack_pct, "pgd50");

    if (suite.aa_lite) {
        attacks::AttackSpec ce, dlr;
        ce.kind = attacks::AttackKind::apgd_ce;
        ce.iterations = suite.apgd_iters;
        dlr.kind = attacks::AttackKind::apgd_dlr;
        dlr.iterations = suite.apgd_iters;
        auto aa = attacks::ensemble_accuracy(model, x, y, {ce, dlr}, threat, suite.batch_size,
                                             mix_seed({eval_seed, 0xaa11ULL}));
        r.aa_lite_pct = aa.ensemble_pct;
    } else {
        r.aa_lite_pct = std::nan("");
    }

    r.train_seconds = provenance.train_seconds;
    r.peak_memory_gb = provenance.peak_memory_gb;
    r.memory_source = provenance.memory_source;
    r.config_hash = provenance.config_hash;
    r.timestamp = utc_timestamp();
    return r;
}

AggregateResult aggregate(const std::vector<RunResult>& results) {
    if (results.empty()) throw std::invalid_argument("aggregate: empty result list");
    for (const auto& r : results)
        if (r.method != results.front().method || r.dataset != results.front().dataset)
            throw std::invalid_argument("aggregate: mixed (method, dataset) keys");

    AggregateResult agg;
    agg.method = results.front().method;
    agg.dataset = results.front().dataset;

    auto value_of = [](const RunResult& r, const std::string& key) {
        if (key == "clean_pct") return r.clean_pct;
        if (key == "pgd10_pct") return r.pgd10_pct;
        if (key == "pgd20_pct") return r.pgd20_pct;
        if (key == "pgd50_pct") return r.pgd50_pct;
        if (key == "aa_lite_pct") return r.aa_lite_pct;
        if (key == "train_seconds") return r.train_seconds;
        if (key == "peak_memory_gb") return r.peak_memory_gb;
        throw std::invalid_argument("aggregate: unknown metric " + key);
    };

    for (const auto& key : metric_keys()) {
        // collect (seed, value) and sort so the reduction order is invariant
        // under permutations of the input list
        std::vector<std::pair<int, double>> vals;
        for (const auto& r : results) {
            double v = value_of(r, key);
            if (!std::isnan(v)) vals.emplace_back(r.seed, v);
        }
        std::sort(vals.begin(), vals.end());
        MetricStat stat;
        stat.n = static_cast<int>(vals.size());
        if (stat.n == 0) {
            stat.mean = std::nan("");
            stat.std = std::nan("");
        } else {
            double sum = 0.0;
            for (const auto& [seed, v] : vals) sum += v;
            stat.mean = sum / stat.n;
            if (stat.n > 1) {
                double sq = 0.0;
                for (const auto& [seed, v] : vals) sq += (v - stat.mean) * (v - stat.mean);
                stat.std = std::sqrt(sq / (stat.n - 1));
            }
        }
        agg.metrics[key] = stat;
    }
    return agg;
}

std::string format_mean_std(const MetricStat& stat) {
    if (stat.n == 0 || std::isnan(stat.mean)) return "—";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f ± %.2f", stat.mean, stat.std);
    return buf;
}

nlohmann::json to_json(const RunResult& r) {
    nlohmann::json j;
    j["method"] = r.method;
    j["dataset"] = r.dataset;
    j["seed"] = r.seed;
    put_number(j, "clean_pct", r.clean_pct);
    put_number(j, "pgd10_pct", r.pgd10_pct);
    put_number(j, "pgd20_pct", r.pgd20_pct);
    put_number(j, "pgd50_pct", r.pgd50_pct);
    put_number(j, "aa_lite_pct", r.aa_lite_pct);
    j["train_seconds"] = r.train_seconds;
    j["peak_memory_gb"] = r.peak_memory_gb;
    j["memory_source"] = r.memory_source;
    j["config_hash"] = r.config_hash;
    j["timestamp"] = r.timestamp;
    return j;
}

RunResult run_result_from_json(const nlohmann::json& j) {
    RunResult r;
    r.method = j.at("method").get<std::string>();
    r.dataset = j.at("dataset").get<std::string>();
    r.seed = j.at("seed").get<int>();
    r.clean_pct = get_number(j, "clean_pct");
    r.pgd10_pct = get_number(j, "pgd10_pct");
    r.pgd20_pct = get_number(j, "pgd20_pct");
    r.pgd50_pct = get_number(j, "pgd50_pct");
    r.aa_lite_pct = get_number(j, "aa_lite_pct");
    r.train_seconds = get_number(j, "train_seconds");
    r.peak_memory_gb = get_number(j, "peak_memory_gb");
    r.memory_source = j.value("memory_source", "");
    r.config_hash = j.value("config_hash", "");
    r.timestamp = j.value("timestamp", "");
    return r;
}

nlohmann::json to_json(const AggregateResult& r) {
    nlohmann::json metrics;
    for (const auto& [key, stat] : r.metrics) {
        nlohmann::json s;
        put_number(s, "mean", stat.mean);
        put_number(s, "std", stat.std);
        s["n"] = stat.n;
        metrics[key] = s;
    }
    return nlohmann::json{{"method", r.method}, {"dataset", r.dataset}, {"metrics", metrics}};
}

AggregateResult aggregate_from_json(const nlohmann::json& j) {
    AggregateResult r;
    r.method = j.at("method").get<std::string>();
    r.dataset = j.at("dataset").get<std::string>();
    for (const auto& [key, s] : j.at("metrics").items()) {
        MetricStat stat;
        stat.mean = get_number(s, "mean");
        stat.std = get_number(s, "std");
        stat.n = s.at("n").get<int>();
        r.metrics[key] = stat;
    }
    return r;
}

std::string run_result_path(const std::string& root, const RunResult& r) {
    return root + "/" + r.dataset + "/" + r.method + "/seed" + std::to_string(r.seed) + ".json";
}

void write_run_result(const std::string& root, const RunResult& r) {
    fs::path path(run_result_path(root, r));
    fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write run result: " + path.string());
    out << to_json(r).dump(2) << "\n";
}

std::vector<RunResult> read_run_results(const std::string& root) {
    std::vector<RunResult> out;
    if (!fs::exists(root)) return out;
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (!entry.is_regular_file()) continue;
        const auto name = entry.path().filename().string();
        if (name.rfind("seed", 0) == 0 && entry.path().extension() == ".json")
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        std::ifstream in(f);
        nlohmann::json j;
        try {
            in >> j;
            out.push_back(run_result_from_json(j));
        } catch (const std::exception& e) {
            std::cerr << "[fastat] warning: skipping unreadable result " << f << ": " << e.what()
                      << "\n";
        }
    }
    return out;
}

}  // namespace fastat::evalsuite
