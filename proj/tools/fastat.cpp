// fastat: config-driven harness for training, evaluating, aggregating and
// analyzing fast adversarial training methods under one standardized setup.

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "fastat/analysis.hpp"
#include "fastat/attacks.hpp"
#include "fastat/config.hpp"
#include "fastat/dataio.hpp"
#include "fastat/evalsuite.hpp"
#include "fastat/methods.hpp"
#include "fastat/trainer.hpp"

namespace fs = std::filesystem;
using namespace fastat;

namespace {

struct CommonArgs {
    std::string common_path;
    std::string method_path;
    std::vector<std::string> overrides;
    std::string data_root;
    std::string out;
    int seed = -1;
    bool deterministic = false;
    bool no_profile = false;
};

void add_common_options(CLI::App* cmd, CommonArgs& args, bool need_method = true) {
    cmd->add_option("--common", args.common_path, "shared common.yaml")->required();
    auto* m = cmd->add_option("--method", args.method_path, "method-specific method.yaml");
    if (need_method) m->required();
    cmd->add_option("--set", args.overrides, "config override key=value (repeatable)");
    cmd->add_option("--seed", args.seed, "run seed (overrides config)");
    cmd->add_option("--data-root", args.data_root,
                    "dataset root (default: FASTAT_DATA_ROOT env)");
    cmd->add_option("--out", args.out, "output directory (overrides config output_dir)");
    cmd->add_flag("--deterministic", args.deterministic, "force deterministic mode");
    cmd->add_flag("--no-profile", args.no_profile,
                  "mark time/memory figures as invalid (required for parallel suites)");
}

std::string resolve_data_root(const std::string& flag_value) {
    if (!flag_value.empty()) return flag_value;
    const char* env = std::getenv("FASTAT_DATA_ROOT");
    return env ? env : ".";
}

config::ExperimentConfig load_config(const CommonArgs& args) {
    std::vector<std::string> overrides = args.overrides;
    if (args.seed >= 0) overrides.push_back("seed=" + std::to_string(args.seed));
    if (args.deterministic) overrides.push_back("deterministic=true");
    if (!args.out.empty()) overrides.push_back("output_dir=" + args.out);
    return config::load_layered(args.common_path, args.method_path, overrides);
}

std::string run_dir(const config::ExperimentConfig& cfg) {
    return cfg.output_dir + "/" + cfg.dataset_name + "/" + cfg.method.name + "/seed" +
           std::to_string(cfg.seed);
}

dataio::SplitDataset load_data(const config::ExperimentConfig& cfg, const std::string& root) {
    auto data = dataio::load_split(cfg.dataset_name, root, cfg.val_size,
                                   static_cast<uint64_t>(cfg.seed));
    dataio::apply_train_subset(data, cfg.train_subset);
    return data;
}

int cmd_train(const CommonArgs& args) {
    auto cfg = load_config(args);
    const std::string dir = run_dir(cfg);
    config::write_resolved(cfg, dir + "/config.resolved.json");
    auto data = load_data(cfg, resolve_data_root(args.data_root));
    auto output = trainer::train(cfg, data, dir);
    std::cout << "train done: selected_epoch=" << output.report.selected_epoch
              << " total_seconds=" << output.report.total_seconds << " artifacts=" << dir
              << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& args) {
    auto cfg = load_config(args);
    const std::string dir = run_dir(cfg);
    const std::string ckpt_path = dir + (cfg.method.use_wa_model ? "/best_wa.ckpt"
                                                                 : "/best_raw.ckpt");
    if (!fs::exists(ckpt_path))
        throw std::runtime_error("checkpoint missing (run train first): " + ckpt_path);
    auto ckpt = modelzoo::load_checkpoint(ckpt_path);
    if (ckpt.arch != cfg.arch)
        throw std::runtime_error("checkpoint arch '" + ckpt.arch +
                                 "' does not match config arch '" + cfg.arch + "'");
    if (ckpt.config_hash != config::config_hash(cfg))
        std::cerr << "[fastat] warning: checkpoint was trained under a different config hash\n";

    evalsuite::RunProvenance prov;
    prov.method = cfg.method.name;
    prov.dataset = cfg.dataset_name;
    prov.seed = cfg.seed;
    prov.config_hash = config::config_hash(cfg);
    const std::string report_path = dir + "/report.json";
    if (fs::exists(report_path)) {
        std::ifstream in(report_path);
        nlohmann::json j;
        in >> j;
        auto report = trainer::report_from_json(j);
        prov.train_seconds = report.total_seconds;
        prov.peak_memory_gb = report.peak_memory_gb;
        prov.memory_source = report.memory_source;
    } else {
        std::cerr << "[fastat] warning: no report.json; time/memory reported as NaN\n";
        prov.train_seconds = std::nan("");
        prov.peak_memory_gb = std::nan("");
    }
    if (args.no_profile) {
        prov.train_seconds = std::nan("");
        prov.peak_memory_gb = std::nan("");
        prov.memory_source = "disabled (--no-profile)";
    }

    auto data = load_data(cfg, resolve_data_root(args.data_root));
    auto result = evalsuite::evaluate(ckpt, data.test, cfg.threat, cfg.eval, prov,
                                      mix_seed({static_cast<uint64_t>(cfg.seed), 0xe7a1ULL}));
    evalsuite::write_run_result(cfg.output_dir + "/results", result);
    std::cout << "eval done: clean=" << result.clean_pct << " pgd10=" << result.pgd10_pct
              << " aa_lite=" << result.aa_lite_pct << " -> "
              << evalsuite::run_result_path(cfg.output_dir + "/results", result) << "\n";
    return 0;
}

int cmd_list_methods() {
    std::printf("%-14s %-16s %-14s %s\n", "name", "implemented", "state", "default params");
    for (const auto& [name, info] : methods::registry()) {
        std::string params;
        for (const auto& [k, v] : info.default_params) {
            char buf[48];
            std::snprintf(buf, sizeof(buf), "%s=%g ", k.c_str(), v);
            params += buf;
        }
        std::printf("%-14s %-16s %-14s %s\n", name.c_str(),
                    info.implemented ? "yes" : "not implemented", info.state_kind.c_str(),
                    params.c_str());
    }
    return 0;
}

int cmd_aggregate(const std::string& results_dir, const std::string& out_dir) {
    auto results = evalsuite::read_run_results(results_dir);
    if (results.empty()) throw std::runtime_error("no run results under " + results_dir);

    std::map<std::pair<std::string, std::string>, std::vector<evalsuite::RunResult>> groups;
    for (const auto& r : results) groups[{r.dataset, r.method}].push_back(r);

    nlohmann::json summary = nlohmann::json::array();
    std::map<std::string, std::vector<evalsuite::AggregateResult>> per_dataset;
    for (const auto& [key, group] : groups) {
        if (group.size() < 3)
            std::cerr << "[fastat] warning: " << key.first << "/" << key.second << " has only "
                      << group.size() << " seed(s); aggregating anyway\n";
        auto agg = evalsuite::aggregate(group);
        summary.push_back(evalsuite::to_json(agg));
        per_dataset[key.first].push_back(agg);
    }

    fs::create_directories(out_dir);
    std::ofstream(out_dir + "/summary.json") << summary.dump(2) << "\n";
    for (const auto& [dataset, aggs] : per_dataset) {
        analysis::emit(aggs, analysis::EmitKind::csv, out_dir + "/summary-" + dataset + ".csv");
        analysis::emit(aggs, analysis::EmitKind::markdown_table,
                       out_dir + "/summary-" + dataset + ".md");
    }
    std::cout << "aggregate done: " << groups.size() << " (dataset, method) groups -> "
              << out_dir << "/summary.json\n";
    return 0;
}

std::map<std::string, std::vector<evalsuite::AggregateResult>> read_summary(
    const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read summary: " + path);
    nlohmann::json j;
    in >> j;
    std::map<std::string, std::vector<evalsuite::AggregateResult>> per_dataset;
    for (const auto& entry : j)
        per_dataset[entry.at("dataset").get<std::string>()].push_back(
            evalsuite::aggregate_from_json(entry));
    return per_dataset;
}

int cmd_analyze(const std::string& kind, const std::string& in_path, const std::string& out_dir,
                const std::string& dataset_filter, const std::string& x_key,
                const std::string& y_key) {
    auto per_dataset = read_summary(in_path);
    bool any = false;
    for (const auto& [dataset, aggs] : per_dataset) {
        if (!dataset_filter.empty() && dataset != dataset_filter) continue;
        any = true;
        const std::string base = out_dir + "/" + dataset;
        if (kind == "table") {
            analysis::emit(aggs, analysis::EmitKind::markdown_table, base + "-table.md");
            analysis::emit(aggs, analysis::EmitKind::csv, base + "-table.csv");
        } else if (kind == "pareto") {
            auto points = analysis::pareto_points_from_summary(aggs, x_key, y_key);
            auto frontier = analysis::pareto_frontier(points);
            analysis::emit(aggs, analysis::EmitKind::pareto_plot, base + "-pareto.svg");
            std::cout << dataset << " pareto frontier (" << frontier.size() << "):";
            for (const auto& p : frontier) std::cout << " " << p.label;
            std::cout << "\n";
        } else {
            analysis::emit(aggs, analysis::EmitKind::radar_plot, base + "-radar.svg");
        }
    }
    if (!any) throw std::runtime_error("no datasets matched in " + in_path);
    std::cout << "analyze " << kind << " done -> " << out_dir << "\n";
    return 0;
}

std::string self_path() {
    char buf[4096];
    ssize_t len = readlink("/proc/self/exe", buf, sizeof(buf) - 1);
    if (len <= 0) return "fastat";
    buf[len] = '\0';
    return buf;
}

std::string quoted(const std::string& s) { return "'" + s + "'"; }

int cmd_run_suite(const CommonArgs& args, const std::string& method_dir,
                  std::vector<std::string> method_names, const std::string& seeds_csv,
                  int parallel) {
    if (parallel > 1 && !args.no_profile)
        throw ConfigError("--parallel requires --no-profile: concurrent runs contaminate "
                          "time/memory measurements");
    if (method_names.empty())
        for (const auto& [name, info] : methods::registry())
            if (info.implemented) method_names.push_back(name);

    std::vector<int> seeds;
    std::stringstream ss(seeds_csv);
    for (std::string part; std::getline(ss, part, ',');)
        if (!part.empty()) seeds.push_back(std::stoi(part));
    if (seeds.empty()) throw ConfigError("run-suite: no seeds given");

    struct Job {
        std::string method;
        int seed;
    };
    std::vector<Job> jobs;
    for (const auto& m : method_names) {
        const std::string method_yaml = method_dir + "/" + m + ".yaml";
        if (!fs::exists(method_yaml))
            throw ConfigError("run-suite: missing method config " + method_yaml);
        for (int s : seeds) jobs.push_back({m, s});
    }

    const std::string self = self_path();
    std::mutex log_mutex;
    int worst = 0;
    auto run_job = [&](const Job& job) {
        std::ostringstream cmd;
        cmd << quoted(self) << " train --common " << quoted(args.common_path) << " --method "
            << quoted(method_dir + "/" + job.method + ".yaml") << " --seed " << job.seed;
        for (const auto& ov : args.overrides) cmd << " --set " << quoted(ov);
        if (!args.data_root.empty()) cmd << " --data-root " << quoted(args.data_root);
        if (!args.out.empty()) cmd << " --out " << quoted(args.out);
        if (args.deterministic) cmd << " --deterministic";
        std::ostringstream eval_cmd;
        eval_cmd << quoted(self) << " eval --common " << quoted(args.common_path) << " --method "
                 << quoted(method_dir + "/" + job.method + ".yaml") << " --seed " << job.seed;
        for (const auto& ov : args.overrides) eval_cmd << " --set " << quoted(ov);
        if (!args.data_root.empty()) eval_cmd << " --data-root " << quoted(args.data_root);
        if (!args.out.empty()) eval_cmd << " --out " << quoted(args.out);
        if (args.no_profile) eval_cmd << " --no-profile";

        int rc = std::system(cmd.str().c_str());
        if (rc == 0) rc = std::system(eval_cmd.str().c_str());
        std::scoped_lock lock(log_mutex);
        std::cout << "[suite] method=" << job.method << " seed=" << job.seed
                  << (rc == 0 ? " ok" : " FAILED") << "\n";
        if (rc != 0) worst = 2;
    };

    if (parallel <= 1) {
        for (const auto& job : jobs) run_job(job);
    } else {
        size_t next = 0;
        std::mutex next_mutex;
        std::vector<std::thread> pool;
        for (int t = 0; t < parallel; ++t)
            pool.emplace_back([&] {
                while (true) {
                    size_t mine;
                    {
                        std::scoped_lock lock(next_mutex);
                        if (next >= jobs.size()) return;
                        mine = next++;
                    }
                    run_job(jobs[mine]);
                }
            });
        for (auto& t : pool) t.join();
    }
    return worst;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"FastAT benchmark harness"};
    app.require_subcommand(1);

    CommonArgs train_args, eval_args, suite_args;
    auto* train_cmd = app.add_subcommand("train", "run the standardized training loop");
    add_common_options(train_cmd, train_args);
    auto* eval_cmd = app.add_subcommand("eval", "final evaluation of a trained checkpoint");
    add_common_options(eval_cmd, eval_args);

    auto* agg_cmd = app.add_subcommand("aggregate", "aggregate per-seed results into a summary");
    std::string agg_results, agg_out = ".";
    agg_cmd->add_option("--results", agg_results, "results directory")->required();
    agg_cmd->add_option("--out", agg_out, "output directory");

    auto* analyze_cmd = app.add_subcommand("analyze", "tables, pareto and radar analysis");
    analyze_cmd->require_subcommand(1);
    std::string an_in, an_out = ".", an_dataset, an_x = "train_seconds", an_y = "aa_lite_pct";
    for (const char* kind : {"table", "pareto", "radar"}) {
        auto* sub = analyze_cmd->add_subcommand(kind);
        sub->add_option("--in", an_in, "summary.json path")->required();
        sub->add_option("--out", an_out, "output directory");
        sub->add_option("--dataset", an_dataset, "restrict to one dataset");
        if (std::string(kind) == "pareto") {
            sub->add_option("--x", an_x, "cost metric key");
            sub->add_option("--y", an_y, "score metric key");
        }
    }

    auto* list_cmd = app.add_subcommand("list-methods", "print the method registry");

    auto* suite_cmd = app.add_subcommand("run-suite", "methods x seeds sweep (train + eval)");
    add_common_options(suite_cmd, suite_args, /*need_method=*/false);
    std::string method_dir = "configs/methods", seeds_csv = "0,1,2", methods_csv;
    int parallel = 1;
    suite_cmd->add_option("--method-dir", method_dir, "directory of per-method yaml files");
    suite_cmd->add_option("--methods", methods_csv,
                          "comma-separated method names (default: all implemented)");
    suite_cmd->add_option("--seeds", seeds_csv, "comma-separated seeds");
    suite_cmd->add_option("--parallel", parallel, "process pool size (requires --no-profile)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train_cmd) return cmd_train(train_args);
        if (*eval_cmd) return cmd_eval(eval_args);
        if (*agg_cmd) return cmd_aggregate(agg_results, agg_out);
        if (*analyze_cmd) {
            for (const char* kind : {"table", "pareto", "radar"})
                if (analyze_cmd->get_subcommand(kind)->parsed())
                    return cmd_analyze(kind, an_in, an_out, an_dataset, an_x, an_y);
        }
        if (*list_cmd) return cmd_list_methods();
        if (*suite_cmd) {
            std::vector<std::string> names;
            std::stringstream ss(methods_csv);
            for (std::string part; std::getline(ss, part, ',');)
                if (!part.empty()) names.push_back(part);
            return cmd_run_suite(suite_args, method_dir, names, seeds_csv, parallel);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
