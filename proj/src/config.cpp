#include "fastat/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include <yaml-cpp/yaml.h>

#include "fastat/methods.hpp"

namespace fastat::config {

namespace {

json yaml_to_json(const YAML::Node& node) {
    switch (node.Type()) {
        case YAML::NodeType::Null:
            return nullptr;
        case YAML::NodeType::Scalar: {
            // yaml-cpp keeps scalars as strings; recover the natural type.
            const std::string& raw = node.Scalar();
            if (node.Tag() != "!") {  // quoted scalars stay strings
                try {
                    if (raw == "true" || raw == "false") return node.as<bool>();
                    if (raw.find_first_not_of("+-0123456789") == std::string::npos && !raw.empty())
                        return node.as<int64_t>();
                    if (raw.find_first_not_of("+-0123456789.eE") == std::string::npos &&
                        raw.find_first_of("0123456789") != std::string::npos)
                        return node.as<double>();
                } catch (const YAML::Exception&) {
                }
            }
            return raw;
        }
        case YAML::NodeType::Sequence: {
            json arr = json::array();
            for (const auto& item : node) arr.push_back(yaml_to_json(item));
            return arr;
        }
        case YAML::NodeType::Map: {
            json obj = json::object();
            for (const auto& kv : node) obj[kv.first.as<std::string>()] = yaml_to_json(kv.second);
            return obj;
        }
        default:
            return nullptr;
    }
}

// Known-key tree; method.params is validated against the registry instead.
struct SchemaNode {
    std::map<std::string, SchemaNode> children;
    bool open = false;  // accepts arbitrary child keys
};

const SchemaNode& schema() {
    static const SchemaNode root = [] {
        SchemaNode s;
        for (const char* leaf :
             {"dataset", "arch", "width_multiplier", "batch_size", "label_smoothing", "wa_decay",
              "seed", "val_size", "train_subset", "deterministic", "output_dir"})
            s.children[leaf] = {};
        SchemaNode params;
        params.open = true;
        s.children["method"].children = {
            {"name", {}}, {"use_wa_model", {}}, {"params", params}};
        s.children["optimizer"].children = {
            {"kind", {}}, {"lr_max", {}}, {"momentum", {}}, {"weight_decay", {}}};
        s.children["schedule"].children = {{"kind", {}},
                                           {"epochs", {}},
                                           {"pct_start", {}},
                                           {"div_factor", {}},
                                           {"final_div_factor", {}}};
        s.children["threat"].children = {
            {"norm", {}}, {"epsilon", {}}, {"eval_step", {}}, {"data_min", {}}, {"data_max", {}}};
        s.children["eval"].children = {{"pgd_iters", {}},
                                       {"apgd_iters", {}},
                                       {"restarts", {}},
                                       {"aa_lite", {}},
                                       {"batch_size", {}}};
        return s;
    }();
    return root;
}

void check_schema(const json& tree, const SchemaNode& node, const std::string& prefix) {
    if (!tree.is_object()) return;
    for (const auto& [key, value] : tree.items()) {
        std::string path = prefix.empty() ? key : prefix + "." + key;
        if (node.open) continue;
        auto it = node.children.find(key);
        if (it == node.children.end())
            throw ConfigError("config schema violation: unknown key '" + path + "'");
        check_schema(value, it->second, path);
    }
}

template <typename T>
T get_as(const json& j, const std::string& path) {
    const json* cur = &j;
    std::string part, rest = path;
    while (!rest.empty()) {
        auto dot = rest.find('.');
        part = rest.substr(0, dot);
        rest = dot == std::string::npos ? "" : rest.substr(dot + 1);
        if (!cur->is_object() || !cur->contains(part))
            throw ConfigError("config key missing: '" + path + "'");
        cur = &(*cur)[part];
    }
    try {
        return cur->get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config type mismatch at '" + path + "': got " +
                          std::string(cur->type_name()));
    }
}

json defaults_tree() {
    // §-standardized training settings; everything here is shared by every
    // method and can only be changed at the common layer.
    return json{
        {"dataset", "cifar10"},
        {"arch", "resnet18"},
        {"width_multiplier", 1.0},
        {"method", {{"name", "fgsm-at"}, {"params", json::object()}}},
        {"optimizer",
         {{"kind", "sgd"}, {"lr_max", 0.1}, {"momentum", 0.9}, {"weight_decay", 5e-4}}},
        {"schedule",
         {{"kind", "onecycle"},
          {"epochs", 100},
          {"pct_start", 0.3},
          {"div_factor", 25.0},
          {"final_div_factor", 1e4}}},
        {"batch_size", 128},
        {"label_smoothing", 0.4},
        {"wa_decay", 0.9995},
        {"seed", 0},
        {"threat",
         {{"norm", "linf"},
          {"epsilon", 8.0 / 255.0},
          {"eval_step", 2.0 / 255.0},
          {"data_min", 0.0},
          {"data_max", 1.0}}},
        {"eval",
         {{"pgd_iters", json::array({10, 20, 50})},
          {"apgd_iters", 50},
          {"restarts", 1},
          {"aa_lite", true},
          {"batch_size", 256}}},
        {"train_subset", 0},
        {"deterministic", true},
        {"output_dir", "runs"},
    };
}

int default_val_size(const std::string& dataset) {
    if (dataset == "tiny-imagenet") return 2000;
    if (dataset == "synthetic") return 128;
    return 1000;  // cifar10 / cifar100
}

}  // namespace

json load_yaml_tree(const std::string& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file missing: " + path);
    try {
        YAML::Node node = YAML::LoadFile(path);
        if (node.IsNull() || !node.IsDefined()) return json::object();
        json tree = yaml_to_json(node);
        return tree.is_null() ? json::object() : tree;
    } catch (const YAML::Exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
}

void deep_merge(json& base, const json& overlay) {
    if (!overlay.is_object() || !base.is_object()) {
        base = overlay;
        return;
    }
    for (const auto& [key, value] : overlay.items()) {
        if (base.contains(key) && base[key].is_object() && value.is_object())
            deep_merge(base[key], value);
        else
            base[key] = value;  // lists and scalars replace wholesale
    }
}

json override_tree(const std::string& key_equals_value) {
    auto eq = key_equals_value.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override must be key=value: '" + key_equals_value + "'");
    std::string key = key_equals_value.substr(0, eq);
    std::string value = key_equals_value.substr(eq + 1);
    json leaf;
    try {
        leaf = yaml_to_json(YAML::Load(value));
    } catch (const YAML::Exception& e) {
        throw ConfigError("override value parse error for '" + key + "': " + e.what());
    }
    // build nested single-key objects from the dotted path, innermost first
    json tree = leaf;
    for (auto dot = key.rfind('.'); ; dot = key.rfind('.')) {
        std::string part = dot == std::string::npos ? key : key.substr(dot + 1);
        if (part.empty()) throw ConfigError("override has empty key segment: '" + key + "'");
        json wrapped = json::object();
        wrapped[part] = tree;
        tree = std::move(wrapped);
        if (dot == std::string::npos) break;
        key = key.substr(0, dot);
    }
    return tree;
}

ExperimentConfig load_layered_trees(const json& common, const json& method,
                                    const std::vector<std::string>& overrides) {
    json merged = defaults_tree();
    deep_merge(merged, common);
    deep_merge(merged, method);
    for (const auto& ov : overrides) {
        json tree = override_tree(ov);
        check_schema(tree, schema(), "");
        deep_merge(merged, tree);
    }
    check_schema(common, schema(), "");
    check_schema(method, schema(), "");
    check_schema(merged, schema(), "");

    // method-aware resolution: registry defaults for params and the
    // weight-averaged-evaluation flag, dataset default for val_size
    const std::string name = get_as<std::string>(merged, "method.name");
    if (methods::is_registered(name)) {
        const auto& info = methods::registry().at(name);
        json params(info.default_params);
        if (merged["method"].contains("params")) deep_merge(params, merged["method"]["params"]);
        merged["method"]["params"] = params;
        if (!merged["method"].contains("use_wa_model"))
            merged["method"]["use_wa_model"] = info.default_use_wa;
    } else if (!merged["method"].contains("use_wa_model")) {
        merged["method"]["use_wa_model"] = true;
    }
    if (!merged.contains("val_size"))
        merged["val_size"] = default_val_size(get_as<std::string>(merged, "dataset"));

    ExperimentConfig cfg = config_from_json(merged);
    auto violations = validate(cfg);
    if (!violations.empty()) {
        std::string msg = "config validation failed:";
        for (const auto& v : violations) msg += "\n  " + v.key + ": " + v.message;
        throw ConfigError(msg);
    }
    return cfg;
}

ExperimentConfig load_layered(const std::string& common_path, const std::string& method_path,
                              const std::vector<std::string>& overrides) {
    return load_layered_trees(load_yaml_tree(common_path), load_yaml_tree(method_path), overrides);
}

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    c.dataset_name = get_as<std::string>(j, "dataset");
    c.arch = get_as<std::string>(j, "arch");
    c.width_multiplier = get_as<double>(j, "width_multiplier");
    c.method.name = get_as<std::string>(j, "method.name");
    c.method.use_wa_model = get_as<bool>(j, "method.use_wa_model");
    if (j.at("method").contains("params")) {
        for (const auto& [k, v] : j.at("method").at("params").items()) {
            if (!v.is_number())
                throw ConfigError("config type mismatch at 'method.params." + k +
                                  "': expected number");
            c.method.params[k] = v.get<double>();
        }
    }
    c.optimizer.kind = get_as<std::string>(j, "optimizer.kind");
    c.optimizer.lr_max = get_as<double>(j, "optimizer.lr_max");
    c.optimizer.momentum = get_as<double>(j, "optimizer.momentum");
    c.optimizer.weight_decay = get_as<double>(j, "optimizer.weight_decay");
    c.schedule.kind = get_as<std::string>(j, "schedule.kind");
    c.schedule.epochs = get_as<int>(j, "schedule.epochs");
    c.schedule.pct_start = get_as<double>(j, "schedule.pct_start");
    c.schedule.div_factor = get_as<double>(j, "schedule.div_factor");
    c.schedule.final_div_factor = get_as<double>(j, "schedule.final_div_factor");
    c.batch_size = get_as<int>(j, "batch_size");
    c.label_smoothing = get_as<double>(j, "label_smoothing");
    c.wa_decay = get_as<double>(j, "wa_decay");
    c.seed = get_as<int>(j, "seed");
    c.threat.norm = get_as<std::string>(j, "threat.norm");
    c.threat.epsilon = get_as<double>(j, "threat.epsilon");
    c.threat.eval_step = get_as<double>(j, "threat.eval_step");
    c.threat.data_min = get_as<double>(j, "threat.data_min");
    c.threat.data_max = get_as<double>(j, "threat.data_max");
    c.eval.pgd_iters = get_as<std::vector<int>>(j, "eval.pgd_iters");
    c.eval.apgd_iters = get_as<int>(j, "eval.apgd_iters");
    c.eval.restarts = get_as<int>(j, "eval.restarts");
    c.eval.aa_lite = get_as<bool>(j, "eval.aa_lite");
    c.eval.batch_size = get_as<int>(j, "eval.batch_size");
    c.val_size = get_as<int>(j, "val_size");
    c.train_subset = get_as<int>(j, "train_subset");
    c.deterministic = get_as<bool>(j, "deterministic");
    c.output_dir = get_as<std::string>(j, "output_dir");
    return c;
}

json to_json(const ExperimentConfig& c) {
    return json{
        {"dataset", c.dataset_name},
        {"arch", c.arch},
        {"width_multiplier", c.width_multiplier},
        {"method",
         {{"name", c.method.name},
          {"params", json(c.method.params)},
          {"use_wa_model", c.method.use_wa_model}}},
        {"optimizer",
         {{"kind", c.optimizer.kind},
          {"lr_max", c.optimizer.lr_max},
          {"momentum", c.optimizer.momentum},
          {"weight_decay", c.optimizer.weight_decay}}},
        {"schedule",
         {{"kind", c.schedule.kind},
          {"epochs", c.schedule.epochs},
          {"pct_start", c.schedule.pct_start},
          {"div_factor", c.schedule.div_factor},
          {"final_div_factor", c.schedule.final_div_factor}}},
        {"batch_size", c.batch_size},
        {"label_smoothing", c.label_smoothing},
        {"wa_decay", c.wa_decay},
        {"seed", c.seed},
        {"threat",
         {{"norm", c.threat.norm},
          {"epsilon", c.threat.epsilon},
          {"eval_step", c.threat.eval_step},
          {"data_min", c.threat.data_min},
          {"data_max", c.threat.data_max}}},
        {"eval",
         {{"pgd_iters", c.eval.pgd_iters},
          {"apgd_iters", c.eval.apgd_iters},
          {"restarts", c.eval.restarts},
          {"aa_lite", c.eval.aa_lite},
          {"batch_size", c.eval.batch_size}}},
        {"val_size", c.val_size},
        {"train_subset", c.train_subset},
        {"deterministic", c.deterministic},
        {"output_dir", c.output_dir},
    };
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
    return to_json(a) == to_json(b);
}

std::vector<Violation> validate(const ExperimentConfig& c) {
    std::vector<Violation> out;
    auto bad = [&out](const std::string& key, const std::string& msg) {
        out.push_back({key, msg});
    };

    static const std::set<std::string> datasets = {"cifar10", "cifar100", "tiny-imagenet",
                                                   "synthetic"};
    static const std::set<std::string> archs = {"resnet18", "preactresnet18", "tiny-cnn"};
    if (!datasets.count(c.dataset_name)) bad("dataset", "unknown dataset '" + c.dataset_name + "'");
    if (!archs.count(c.arch)) bad("arch", "unknown arch '" + c.arch + "'");
    if (!(c.width_multiplier > 0)) bad("width_multiplier", "must be > 0");

    if (!methods::is_registered(c.method.name)) {
        bad("method.name", "method '" + c.method.name + "' not in registry");
    } else if (!methods::is_implemented(c.method.name)) {
        bad("method.name", "method '" + c.method.name + "' not implemented (registry stub)");
    } else {
        const auto& declared = methods::registry().at(c.method.name).default_params;
        for (const auto& [k, v] : c.method.params)
            if (!declared.count(k))
                bad("method.params." + k, "unknown hyperparameter for '" + c.method.name + "'");
        auto has = [&](const char* k) { return c.method.params.count(k) != 0; };
        auto p = [&](const char* k) { return c.method.params.at(k); };
        if (has("alpha") && !(p("alpha") > 0)) bad("method.params.alpha", "must be > 0");
        if (has("noise_factor") && p("noise_factor") < 0)
            bad("method.params.noise_factor", "must be >= 0");
        if (has("zero_quantile") && (p("zero_quantile") < 0 || p("zero_quantile") > 1))
            bad("method.params.zero_quantile", "must be in [0,1]");
        if (has("reg_weight") && p("reg_weight") < 0) bad("method.params.reg_weight", "must be >= 0");
        if (has("replays") && p("replays") < 1) bad("method.params.replays", "must be >= 1");
        if (has("prior_momentum") && (p("prior_momentum") < 0 || p("prior_momentum") > 1))
            bad("method.params.prior_momentum", "must be in [0,1]");
        if (has("steps") && p("steps") < 0) bad("method.params.steps", "must be >= 0");
        if (has("step") && !(p("step") > 0)) bad("method.params.step", "must be > 0");
    }

    if (c.optimizer.kind != "sgd") bad("optimizer.kind", "only 'sgd' is supported");
    if (!(c.optimizer.lr_max > 0)) bad("optimizer.lr_max", "must be > 0");
    if (c.optimizer.momentum < 0 || c.optimizer.momentum >= 1)
        bad("optimizer.momentum", "must be in [0,1)");
    if (c.optimizer.weight_decay < 0) bad("optimizer.weight_decay", "must be >= 0");

    if (c.schedule.kind != "onecycle") bad("schedule.kind", "only 'onecycle' is supported");
    if (c.schedule.epochs < 0) bad("schedule.epochs", "must be >= 0");
    if (!(c.schedule.pct_start > 0 && c.schedule.pct_start < 1))
        bad("schedule.pct_start", "must be in (0,1)");
    if (!(c.schedule.div_factor > 0)) bad("schedule.div_factor", "must be > 0");
    if (!(c.schedule.final_div_factor > 0)) bad("schedule.final_div_factor", "must be > 0");

    if (c.batch_size < 1) bad("batch_size", "must be >= 1");
    if (c.label_smoothing < 0 || c.label_smoothing > 1)
        bad("label_smoothing", "must be in [0,1]");
    if (c.wa_decay < 0 || c.wa_decay > 1) bad("wa_decay", "must be in [0,1]");

    if (c.threat.norm != "linf") bad("threat.norm", "only 'linf' is supported");
    if (c.threat.epsilon < 0) bad("threat.epsilon", "must be >= 0");
    if (!(c.threat.data_min < c.threat.data_max))
        bad("threat.data_min", "data_min must be < data_max");
    if (!(c.threat.eval_step > 0)) bad("threat.eval_step", "must be > 0");

    if (c.eval.pgd_iters.empty()) bad("eval.pgd_iters", "must be nonempty");
    for (int it : c.eval.pgd_iters)
        if (it < 0) bad("eval.pgd_iters", "iteration counts must be >= 0");
    if (c.eval.apgd_iters < 1) bad("eval.apgd_iters", "must be >= 1");
    if (c.eval.restarts < 1) bad("eval.restarts", "must be >= 1");
    if (c.eval.batch_size < 1) bad("eval.batch_size", "must be >= 1");

    if (c.val_size < 0) bad("val_size", "must be >= 0");
    if (c.train_subset < 0) bad("train_subset", "must be >= 0");
    return out;
}

std::string config_hash(const ExperimentConfig& cfg) {
    return to_hex(fnv1a(to_json(cfg).dump()));
}

void write_resolved(const ExperimentConfig& cfg, const std::string& path) {
    json j = to_json(cfg);
    j["metadata"] = {
        {"config_hash", config_hash(cfg)},
        {"epsilon_source", "shared default; the threat budget is a harness decision"},
        {"lr_interpretation", "lr_max is the OneCycle peak learning rate"},
        {"std_kind", "sample (n-1) standard deviation in aggregation"},
        {"timing_scope", "training plus periodic validation; final evaluation excluded"},
        {"wa_note", "raw and averaged weights are both maintained; "
                    "method.use_wa_model selects which is evaluated"},
    };
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write resolved config to " + path);
    out << j.dump(2) << "\n";
}

}  // namespace fastat::config
