#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fastat/common.hpp"

namespace fastat::config {

using json = nlohmann::json;

struct OptimizerSpec {
    std::string kind = "sgd";
    double lr_max = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
};

struct ScheduleSpec {
    std::string kind = "onecycle";
    int epochs = 100;
    double pct_start = 0.3;
    double div_factor = 25.0;
    double final_div_factor = 1e4;
};

struct EvalSpec {
    std::vector<int> pgd_iters = {10, 20, 50};
    int apgd_iters = 50;
    int restarts = 1;
    bool aa_lite = true;
    int batch_size = 256;
};

struct MethodSpec {
    std::string name = "fgsm-at";
    std::map<std::string, double> params;  // resolved against registry defaults at load
    bool use_wa_model = true;
};

// Fully-resolved run description. Instances are frozen after load_layered:
// nothing mutates them, and the hash is computed over the canonical JSON form.
struct ExperimentConfig {
    std::string dataset_name = "cifar10";
    std::string arch = "resnet18";
    double width_multiplier = 1.0;
    MethodSpec method;
    OptimizerSpec optimizer;
    ScheduleSpec schedule;
    int batch_size = 128;
    double label_smoothing = 0.4;
    double wa_decay = 0.9995;
    int seed = 0;
    ThreatModel threat;
    EvalSpec eval;
    int val_size = -1;     // -1 = dataset default, resolved at load
    int train_subset = 0;  // 0 = full training set; desk-scale runs shrink it
    bool deterministic = true;
    std::string output_dir = "runs";
};

// Layered load: built-in defaults <- common file <- method file <- overrides.
// Overrides are dotted key=value strings (e.g. "optimizer.lr_max=0.2").
// Throws ConfigError on missing files, unknown keys, type mismatches, or any
// validation violation; on success the result is resolved and frozen.
ExperimentConfig load_layered(const std::string& common_path,
                              const std::string& method_path,
                              const std::vector<std::string>& overrides = {});

// Same layering from already-parsed trees (tests use this directly).
ExperimentConfig load_layered_trees(const json& common, const json& method,
                                    const std::vector<std::string>& overrides = {});

// Invariant checks; empty result means the config is valid.
std::vector<Violation> validate(const ExperimentConfig& cfg);

json to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const json& j);
bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

// Hash of the canonical JSON form; equal configs hash equal.
std::string config_hash(const ExperimentConfig& cfg);

// Echoes the frozen config (plus decision metadata) to <path>.
void write_resolved(const ExperimentConfig& cfg, const std::string& path);

// Recursive merge with `overlay` taking precedence; lists replace wholesale.
void deep_merge(json& base, const json& overlay);

// Parses a YAML file into a json tree. Throws ConfigError on I/O or parse error.
json load_yaml_tree(const std::string& path);

// Parses one "dotted.key=value" override into a nested single-key tree.
json override_tree(const std::string& key_equals_value);

}  // namespace fastat::config
