#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "fastat/config.hpp"
#include "fastat/dataio.hpp"
#include "fastat/modelzoo.hpp"
#include "fastat/trainer.hpp"

namespace fastat::evalsuite {

// One (method, dataset, seed) record; accuracies in percent, time in
// seconds, memory in gigabytes.
struct RunResult {
    std::string method;
    std::string dataset;
    int seed = 0;
    double clean_pct = 0.0;
    double pgd10_pct = 0.0;
    double pgd20_pct = 0.0;
    double pgd50_pct = 0.0;
    double aa_lite_pct = 0.0;
    double train_seconds = 0.0;
    double peak_memory_gb = 0.0;
    std::string memory_source;
    std::string config_hash;
    std::string timestamp;
};

struct RunProvenance {
    std::string method;
    std::string dataset;
    int seed = 0;
    double train_seconds = 0.0;
    double peak_memory_gb = 0.0;
    std::string memory_source;
    std::string config_hash;
};

// Final evaluation of a selected checkpoint: clean accuracy plus the PGD
// suite and the APGD-CE/APGD-DLR worst-case ensemble (aa_lite).
RunResult evaluate(const modelzoo::Checkpoint& ckpt, const dataio::DatasetPart& test,
                   const ThreatModel& threat, const config::EvalSpec& suite,
                   const RunProvenance& provenance, uint64_t eval_seed);

// Same, against an already-materialized model (stub models included).
RunResult evaluate(const modelzoo::ModelHandle& model, const dataio::DatasetPart& test,
                   const ThreatModel& threat, const config::EvalSpec& suite,
                   const RunProvenance& provenance, uint64_t eval_seed);

struct MetricStat {
    double mean = 0.0;
    double std = 0.0;  // sample (n-1) standard deviation; 0 when n == 1
    int n = 0;
};

struct AggregateResult {
    std::string method;
    std::string dataset;
    std::map<std::string, MetricStat> metrics;
};

// Mean and sample standard deviation per metric. All inputs must share
// (method, dataset); throws std::invalid_argument otherwise or when empty.
AggregateResult aggregate(const std::vector<RunResult>& results);

// "MM.MM ± S.SS" with two decimals.
std::string format_mean_std(const MetricStat& stat);

nlohmann::json to_json(const RunResult& r);
RunResult run_result_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AggregateResult& r);
AggregateResult aggregate_from_json(const nlohmann::json& j);

// results/<dataset>/<method>/seed<k>.json under `root`.
std::string run_result_path(const std::string& root, const RunResult& r);
void write_run_result(const std::string& root, const RunResult& r);
std::vector<RunResult> read_run_results(const std::string& root);

// Metric keys aggregated and emitted, in table column order.
const std::vector<std::string>& metric_keys();

}  // namespace fastat::evalsuite
