// Acceptance suite: one pass/fail line per criterion. Criteria 4 and 5 need
// the real CIFAR-10 binary files under FASTAT_DATA_ROOT (or --data-root given
// via the environment); without them they fail with a diagnostic rather than
// silently passing on substitute data.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <vector>

#include <torch/torch.h>

#include "fastat/analysis.hpp"
#include "fastat/attacks.hpp"
#include "fastat/config.hpp"
#include "fastat/dataio.hpp"
#include "fastat/evalsuite.hpp"
#include "fastat/methods.hpp"
#include "fastat/modelzoo.hpp"
#include "fastat/trainer.hpp"

using namespace fastat;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int criterion, bool pass, const std::string& what, const std::string& detail = "") {
    std::cout << (pass ? "[PASS]" : "[FAIL]") << " criterion " << criterion << ": " << what;
    if (!detail.empty()) std::cout << " — " << detail;
    std::cout << std::endl;
    if (!pass) ++failures;
}

struct Check {
    bool ok = true;
    std::string why;
    void require(bool cond, const std::string& msg) {
        if (ok && !cond) {
            ok = false;
            why = msg;
        }
    }
};

// ---------------------------------------------------------------------------
// criterion 1: pareto reproduction from the published (Time, AA) columns
// ---------------------------------------------------------------------------

std::vector<analysis::ParetoPoint> cifar10_points() {
    return {
        {"ELLE", 2942.99, 32.46},      {"FGSM-AT", 1996.07, 37.28},
        {"FGSM-CUAP", 2706.19, 49.55}, {"FGSM-FUAP", 2927.89, 49.73},
        {"FGSM-MEP-CS", 2141.50, 45.35}, {"FGSM-PCO", 2997.04, 48.52},
        {"FGSM-PGI", 2646.65, 49.89},  {"FGSM-RS", 1902.17, 43.09},
        {"FGSM-RS-CS", 1824.07, 48.64}, {"FGSM-UAP", 2551.80, 49.44},
        {"FREE-AT", 1978.59, 44.34},   {"GAT", 2875.82, 49.15},
        {"GRAD-ALIGN", 5612.39, 47.99}, {"LIET", 2605.29, 49.99},
        {"N-AAER", 1863.55, 47.38},    {"N-FGSM", 1940.75, 47.77},
        {"NU-AT", 2936.85, 50.10},     {"PGD-AT", 6953.97, 44.33},
        {"PGD-AT-WA", 7026.80, 50.49}, {"SSAT", 2120.88, 38.33},
        {"ZERO-GRAD", 1924.46, 45.94},
    };
}

std::vector<analysis::ParetoPoint> cifar100_points() {
    return {
        {"ELLE", 2934.95, 21.21},      {"FGSM-AT", 2072.48, 16.62},
        {"FGSM-CUAP", 2865.16, 25.85}, {"FGSM-FUAP", 3009.01, 25.95},
        {"FGSM-MEP-CS", 2113.57, 24.86}, {"FGSM-PCO", 2828.23, 19.97},
        {"FGSM-PGI", 2656.53, 26.29},  {"FGSM-RS", 2065.97, 21.42},
        {"FGSM-RS-CS", 1878.41, 26.20}, {"FGSM-UAP", 2662.54, 25.84},
        {"FREE-AT", 1980.92, 21.76},   {"GAT", 2945.59, 22.06},
        {"GRAD-ALIGN", 5613.01, 25.37}, {"LIET", 2343.70, 26.64},
        {"N-AAER", 1731.43, 22.74},    {"N-FGSM", 2063.26, 24.86},
        {"NU-AT", 3092.07, 14.41},     {"PGD-AT", 6724.17, 21.44},
        {"PGD-AT-WA", 7015.43, 26.90}, {"SSAT", 2134.76, 18.83},
        {"ZERO-GRAD", 2025.50, 25.00},
    };
}

std::vector<analysis::ParetoPoint> tiny_imagenet_points() {
    return {
        {"ELLE", 19270.18, 18.81},     {"FGSM-AT", 8109.43, 14.87},
        {"FGSM-CUAP", 12098.58, 19.19}, {"FGSM-FUAP", 13111.93, 19.10},
        {"FGSM-MEP-CS", 10622.89, 18.23}, {"FGSM-PCO", 15338.78, 11.24},
        {"FGSM-PGI", 11200.37, 19.55}, {"FGSM-RS", 8128.66, 16.33},
        {"FGSM-RS-CS", 10000.28, 18.74}, {"FGSM-UAP", 10994.11, 18.90},
        {"FREE-AT", 8293.47, 13.51},   {"GAT", 14382.82, 11.33},
        {"GRAD-ALIGN", 35944.00, 17.87}, {"LIET", 11463.39, 19.88},
        {"N-FGSM", 8163.30, 18.79},    {"NU-AT", 15308.53, 10.20},
        {"PGD-AT", 28575.32, 17.04},   {"PGD-AT-WA", 28572.77, 19.77},
        {"SSAT", 9458.99, 11.94},      {"ZERO-GRAD", 8218.72, 18.15},
    };
}

std::set<std::string> frontier_labels(const std::vector<analysis::ParetoPoint>& pts) {
    std::set<std::string> out;
    for (const auto& p : analysis::pareto_frontier(pts)) out.insert(p.label);
    return out;
}

void criterion_1() {
    Check c;
    auto c10 = frontier_labels(cifar10_points());
    auto c100 = frontier_labels(cifar100_points());
    auto tin = frontier_labels(tiny_imagenet_points());
    c.require(c10.size() == 5, "cifar10 frontier size " + std::to_string(c10.size()) + " != 5");
    c.require(c100.size() == 4, "cifar100 frontier size " + std::to_string(c100.size()) + " != 4");
    c.require(tin.size() == 6,
              "tiny-imagenet frontier size " + std::to_string(tin.size()) + " != 6");
    c.require(c10 == std::set<std::string>{"FGSM-RS-CS", "FGSM-UAP", "LIET", "NU-AT",
                                           "PGD-AT-WA"},
              "cifar10 frontier membership mismatch");
    c.require(c100 == std::set<std::string>{"N-AAER", "FGSM-RS-CS", "LIET", "PGD-AT-WA"},
              "cifar100 frontier membership mismatch");
    report(1, c.ok, "pareto frontiers from the published (Time, AA) columns: sizes 5/4/6",
           c.why);
}

// ---------------------------------------------------------------------------
// criterion 2: attack oracle equivalence on a logistic model over 2-D blobs
// ---------------------------------------------------------------------------

void criterion_2() {
    Check c;
    auto gen = at::detail::createCPUGenerator(2024);
    const int64_t n = 400;
    const double sigma = 0.35;
    auto mu0 = torch::tensor({-1.0, 0.4});
    auto mu1 = torch::tensor({0.8, -0.6});
    auto y = torch::arange(n, torch::kInt64).remainder(2);
    auto noise = torch::randn({n, 2}, gen) * sigma;
    auto means = torch::stack({mu0, mu1}, 0).index_select(0, y);
    auto x = (means + noise).view({n, 2, 1, 1});

    auto w = (mu1 - mu0);
    const double b = -(mu1.square().sum() - mu0.square().sum()).item<double>() / 2.0;
    auto model = modelzoo::custom_model([w, b](const torch::Tensor& input) {
        auto z = input.flatten(1).matmul(w.view({2, 1})) + b;
        return torch::cat({torch::zeros_like(z), z}, 1);
    });

    ThreatModel threat;
    threat.epsilon = 0.25;
    threat.eval_step = 0.02;
    threat.data_min = -10.0;
    threat.data_max = 10.0;

    // closed-form worst case: robust iff margin exceeds eps * ||w||_1
    auto z = x.flatten(1).matmul(w.view({2, 1})).squeeze(1) + b;
    auto signed_margin = torch::where(y.eq(1), z, -z);
    const double radius = threat.epsilon * w.abs().sum().item<double>();
    const double oracle_pct =
        100.0 * (signed_margin > radius).to(torch::kFloat64).mean().item<double>();

    attacks::AttackSpec pgd50;
    pgd50.kind = attacks::AttackKind::pgd;
    pgd50.iterations = 50;
    pgd50.step = 0.02;
    pgd50.random_start = true;
    auto suite = attacks::ensemble_accuracy(model, x, y, {pgd50}, threat, 128, 11);
    const double attacked_pct = suite.per_attack_pct.at("pgd50");
    c.require(std::abs(attacked_pct - oracle_pct) <= 0.5,
              "pgd50 " + std::to_string(attacked_pct) + "% vs closed-form " +
                  std::to_string(oracle_pct) + "%");

    auto fgsm = attacks::fgsm_attack(model, x, y, threat);
    auto pgd1 = attacks::pgd_attack(model, x, y, threat, 1, threat.epsilon, false);
    c.require(fgsm.adversarial_inputs.equal(pgd1.adversarial_inputs),
              "fgsm is not bitwise pgd(k=1, step=eps, no random start)");

    report(2, c.ok, "pgd-50 matches the closed-form minimum-margin oracle within 0.5pp; "
                    "fgsm == pgd(k=1) bitwise", c.why);
}

// ---------------------------------------------------------------------------
// criterion 3: ensemble dominance on the desk model
// ---------------------------------------------------------------------------

void criterion_3() {
    Check c;
    torch::manual_seed(3);
    auto data = dataio::make_synthetic(64, 4, {3, 16, 16}, 33, 0.15, 96);
    auto model = modelzoo::build_model("tiny-cnn", 4, 0.25, 5,
                                       modelzoo::dataset_normalization("synthetic"), 3);
    model.set_train(false);

    ThreatModel threat;
    threat.epsilon = 8.0 / 255.0;
    std::vector<int64_t> all(data.test.size());
    for (int64_t i = 0; i < data.test.size(); ++i) all[i] = i;
    auto x = dataio::materialize_images(data.test, all);
    auto y = data.test.y;

    attacks::AttackSpec ce, dlr;
    ce.kind = attacks::AttackKind::apgd_ce;
    ce.iterations = 10;
    dlr.kind = attacks::AttackKind::apgd_dlr;
    dlr.iterations = 10;
    auto suite = attacks::ensemble_accuracy(model, x, y, {ce, dlr}, threat, 32, 17);

    const double min_member =
        std::min(suite.per_attack_pct.at("apgd-ce"), suite.per_attack_pct.at("apgd-dlr"));
    c.require(suite.ensemble_pct <= min_member + 1e-9, "ensemble exceeds a member attack");
    c.require(suite.ensemble_pct <= suite.clean_pct + 1e-9, "robust exceeds clean");
    for (const auto& [name, acc] : suite.per_attack_pct)
        c.require(acc <= suite.clean_pct + 1e-9, name + " exceeds clean accuracy");

    // the same properties through the full evaluate() path
    config::EvalSpec eval_spec;
    eval_spec.apgd_iters = 10;
    evalsuite::RunProvenance prov{"desk", "synthetic", 0, 1.0, 0.1, "process_peak_rss", "h"};
    auto rr = evalsuite::evaluate(model, data.test, threat, eval_spec, prov, 23);
    c.require(rr.aa_lite_pct <= std::min({rr.pgd50_pct, rr.clean_pct}) + 0.5,
              "aa_lite exceeds min(pgd50, clean) beyond slack");
    c.require(rr.pgd10_pct <= rr.clean_pct + 1e-9, "pgd10 exceeds clean");

    report(3, c.ok, "aa-lite <= min(apgd-ce, apgd-dlr) and robust <= clean on the desk model",
           c.why);
}

// ---------------------------------------------------------------------------
// criteria 4 and 5: the CIFAR-10 desk benchmark
// ---------------------------------------------------------------------------

std::string data_root() {
    const char* env = std::getenv("FASTAT_DATA_ROOT");
    return env ? env : ".";
}

bool cifar10_available() {
    return fs::exists(fs::path(data_root()) / "cifar-10-batches-bin" / "data_batch_1.bin");
}

config::ExperimentConfig desk_cifar_config(const std::string& method, int seed) {
    config::json common = {
        {"dataset", "cifar10"},
        {"arch", "tiny-cnn"},
        {"width_multiplier", 0.5},
        {"batch_size", 128},
        {"wa_decay", 0.99},  // desk step counts; 0.9995 would pin the average at init
        {"train_subset", 5000},
        {"schedule", {{"epochs", 30}}},
        {"val_size", 512},
        {"seed", seed},
    };
    // CO is a phenomenon of the live training trajectory: validate raw weights
    config::json method_tree = {{"method", {{"name", method}, {"use_wa_model", false}}}};
    return config::load_layered_trees(common, method_tree);
}

struct DeskRun {
    trainer::TrainOutput output;
    std::vector<std::pair<double, double>> series;  // (fgsm, pgd10) per epoch
};

DeskRun run_desk(const std::string& method, int seed, const dataio::SplitDataset& data) {
    DeskRun run;
    run.output = trainer::train(desk_cifar_config(method, seed), data);
    for (const auto& e : run.output.report.per_epoch)
        run.series.emplace_back(e.val_fgsm_acc, e.val_pgd10_acc);
    return run;
}

void criteria_4_and_5() {
    if (!cifar10_available()) {
        const std::string why = "CIFAR-10 binaries not found under '" + data_root() +
                                "/cifar-10-batches-bin'; set FASTAT_DATA_ROOT to run the desk "
                                "CO benchmark (no network in this environment)";
        report(4, false, "catastrophic overfitting at desk scale", why);
        report(5, false, "ordering property on the desk benchmark", why);
        return;
    }

    Check c4;
    auto data = dataio::load_split("cifar10", data_root(), 512, 0);
    dataio::apply_train_subset(data, 5000);

    // stochastic criterion: pass if any seed exhibits CO
    int co_seed = -1;
    DeskRun fgsm_run;
    for (int seed : {0, 1, 2}) {
        auto run = run_desk("fgsm-at", seed, data);
        bool detector = methods::detect_catastrophic_overfitting(run.series).has_value();
        bool gates = false;
        for (const auto& [fgsm_acc, pgd10_acc] : run.series)
            if (pgd10_acc < 5.0 && fgsm_acc > 60.0) gates = true;
        if (detector && gates) {
            co_seed = seed;
            fgsm_run = std::move(run);
            break;
        }
    }
    c4.require(co_seed >= 0, "no seed in {0,1,2} exhibited catastrophic overfitting");

    DeskRun nfgsm_run;
    if (co_seed >= 0) {
        nfgsm_run = run_desk("n-fgsm", co_seed, data);
        const double final_pgd10 = nfgsm_run.series.back().second;
        c4.require(final_pgd10 >= 20.0, "n-fgsm final val pgd10 " +
                                            std::to_string(final_pgd10) + "% < 20%");
        c4.require(!methods::detect_catastrophic_overfitting(nfgsm_run.series).has_value(),
                   "n-fgsm triggered the CO detector");
    }
    report(4, c4.ok, "fgsm-at catastrophically overfits at desk scale while n-fgsm does not",
           c4.why);

    if (co_seed < 0) {
        report(5, false, "ordering property on the desk benchmark",
               "skipped: criterion 4 produced no CO run to compare against");
        return;
    }

    Check c5;
    auto pgd_run = run_desk("pgd-at", co_seed, data);

    config::EvalSpec eval_spec;  // aa-lite via the standard 50-iteration apgd pair
    evalsuite::RunProvenance fgsm_prov{"fgsm-at", "cifar10", co_seed,
                                       fgsm_run.output.report.total_seconds,
                                       fgsm_run.output.report.peak_memory_gb,
                                       fgsm_run.output.report.memory_source,
                                       fgsm_run.output.report.config_hash};
    evalsuite::RunProvenance pgd_prov{"pgd-at", "cifar10", co_seed,
                                      pgd_run.output.report.total_seconds,
                                      pgd_run.output.report.peak_memory_gb,
                                      pgd_run.output.report.memory_source,
                                      pgd_run.output.report.config_hash};

    // evaluate the selected checkpoints on a fixed 1000-image test subset
    dataio::DatasetPart test;
    test.x = data.test.x.narrow(0, 0, 1000);
    test.y = data.test.y.narrow(0, 0, 1000);

    auto eval_of = [&](const DeskRun& run, const std::string& method,
                       const evalsuite::RunProvenance& prov) {
        auto cfg = desk_cifar_config(method, co_seed);
        auto model = modelzoo::build_model(cfg.arch, data.num_classes, cfg.width_multiplier, 0,
                                           modelzoo::dataset_normalization("cifar10"), 3);
        modelzoo::load_state(model, cfg.method.use_wa_model ? run.output.best_averaged
                                                            : run.output.best_raw);
        return evalsuite::evaluate(model, test, cfg.threat, eval_spec, prov, 77);
    };
    auto fgsm_result = eval_of(fgsm_run, "fgsm-at", fgsm_prov);
    auto pgd_result = eval_of(pgd_run, "pgd-at", pgd_prov);

    c5.require(pgd_result.aa_lite_pct >= fgsm_result.aa_lite_pct,
               "pgd-at aa-lite " + std::to_string(pgd_result.aa_lite_pct) + "% < fgsm-at " +
                   std::to_string(fgsm_result.aa_lite_pct) + "%");
    c5.require(pgd_run.output.report.total_seconds >=
                   2.0 * fgsm_run.output.report.total_seconds,
               "pgd-at train time is not >= 2x fgsm-at");
    report(5, c5.ok,
           "pgd-at aa-lite >= fgsm-at aa-lite and train time ratio >= 2x on the desk benchmark",
           c5.why);
}

// ---------------------------------------------------------------------------
// criterion 6: unit identities
// ---------------------------------------------------------------------------

void criterion_6() {
    Check c;
    // smoothed CE on uniform logits = ln K for every smoothing factor
    auto logits = torch::zeros({4, 10});
    auto labels = torch::tensor({0L, 3L, 5L, 9L});
    for (double s : {0.0, 0.1, 0.4, 0.9, 1.0}) {
        double loss = trainer::smoothed_cross_entropy(logits, labels, s).item<double>();
        c.require(std::abs(loss - std::log(10.0)) < 1e-6,
                  "smoothed CE != ln K at s=" + std::to_string(s));
    }

    // EMA closed form from zero: avg = v * (1 - d^n)
    const double d = 0.9995, v = 2.5;
    auto avg = modelzoo::NamedTensors{{"w", torch::zeros({1}, torch::kFloat64)}};
    auto live = modelzoo::NamedTensors{{"w", torch::full({1}, v, torch::kFloat64)}};
    for (int n = 1; n <= 10; ++n) {
        trainer::ema_update(avg, live, d);
        double expect = v * (1.0 - std::pow(d, n));
        c.require(std::abs(avg.at("w").item<double>() - expect) < 1e-12,
                  "EMA closed form failed at n=" + std::to_string(n));
    }

    // nuclear penalty: diag(3,4) difference has nuclear norm 7 (formula divides by B)
    auto diff = torch::tensor({{3.0, 0.0}, {0.0, 4.0}});
    double nuclear =
        methods::nuclear_consistency_penalty(torch::zeros({2, 2}), diff, 1.0).item<double>() *
        2.0;
    c.require(std::abs(nuclear - 7.0) < 1e-6, "nuclear norm of diag(3,4) != 7");

    // zero_grad_mask identities at q=0 and q=1
    auto g = torch::tensor({{0.3, -0.7, 0.05, 0.9}});
    c.require(methods::zero_grad_mask(g, 0.0).equal(g), "q=0 must be the identity");
    c.require(methods::zero_grad_mask(g, 1.0).abs().sum().item<double>() == 0.0,
              "q=1 must zero everything");

    // OneCycle endpoints under the declared defaults
    config::ScheduleSpec schedule;
    c.require(std::abs(trainer::onecycle_lr(0, 1000, schedule, 0.1) - 0.004) < 1e-12,
              "onecycle start != lr_max/div_factor");
    c.require(std::abs(trainer::onecycle_lr(300, 1000, schedule, 0.1) - 0.1) < 1e-12,
              "onecycle peak != lr_max");
    c.require(std::abs(trainer::onecycle_lr(999, 1000, schedule, 0.1) - 4e-7) < 1e-12,
              "onecycle end != lr_max/(div*final_div)");

    report(6, c.ok, "unit identities (smoothed CE, EMA, nuclear norm, masking, onecycle)",
           c.why);
}

// ---------------------------------------------------------------------------
// criterion 7: aggregation formatting and permutation invariance
// ---------------------------------------------------------------------------

void criterion_7() {
    Check c;
    std::vector<evalsuite::RunResult> results;
    for (int s = 0; s < 3; ++s) {
        evalsuite::RunResult r;
        r.method = "m";
        r.dataset = "d";
        r.seed = s;
        r.clean_pct = 48.0 + s;
        r.train_seconds = 100;
        r.peak_memory_gb = 1;
        results.push_back(r);
    }
    auto agg = evalsuite::aggregate(results);
    c.require(evalsuite::format_mean_std(agg.metrics.at("clean_pct")) == "49.00 ± 1.00",
              "aggregate of {48,49,50} did not format as 49.00 ± 1.00");

    uint64_t rng = 7;
    auto reference = agg;
    for (int trial = 0; trial < 100; ++trial) {
        auto shuffled = results;
        for (size_t i = shuffled.size() - 1; i > 0; --i)
            std::swap(shuffled[i], shuffled[splitmix64(rng) % (i + 1)]);
        auto again = evalsuite::aggregate(shuffled);
        c.require(again.metrics.at("clean_pct").mean ==
                          reference.metrics.at("clean_pct").mean &&
                      again.metrics.at("clean_pct").std ==
                          reference.metrics.at("clean_pct").std,
                  "aggregation changed under permutation");
    }
    report(7, c.ok, "aggregation formats 49.00 ± 1.00 and is permutation invariant", c.why);
}

// ---------------------------------------------------------------------------
// criterion 8: two deterministic train invocations agree
// ---------------------------------------------------------------------------

void criterion_8() {
    Check c;
    std::string which;
    config::ExperimentConfig cfg;
    dataio::SplitDataset data;
    if (cifar10_available()) {
        which = "cifar10 desk subset";
        cfg = desk_cifar_config("fgsm-rs", 0);
        config::json common = config::to_json(cfg);
        common["train_subset"] = 1000;
        common["schedule"]["epochs"] = 3;
        cfg = config::load_layered_trees(common, config::json::object());
        data = dataio::load_split("cifar10", data_root(), cfg.val_size, 0);
        dataio::apply_train_subset(data, cfg.train_subset);
    } else {
        which = "synthetic desk config (CIFAR-10 unavailable in this environment)";
        config::json common = {
            {"dataset", "synthetic"},   {"arch", "tiny-cnn"},
            {"width_multiplier", 0.25}, {"batch_size", 128},
            {"wa_decay", 0.8},          {"schedule", {{"epochs", 3}}},
            {"val_size", 64},           {"seed", 0},
        };
        cfg = config::load_layered_trees(common, {{"method", {{"name", "fgsm-rs"}}}});
        data = dataio::load_split("synthetic", "", cfg.val_size, 0);
    }

    auto a = trainer::train(cfg, data);
    auto b = trainer::train(cfg, data);
    c.require(a.report.per_epoch.size() == b.report.per_epoch.size(), "epoch count differs");
    for (size_t e = 0; e < a.report.per_epoch.size() && c.ok; ++e)
        c.require(a.report.per_epoch[e].val_pgd10_acc == b.report.per_epoch[e].val_pgd10_acc,
                  "val_pgd10 series differs at epoch " + std::to_string(e));
    c.require(a.report.selected_epoch == b.report.selected_epoch, "selected epoch differs");
    for (const auto& [name, t] : a.best_raw)
        c.require(t.equal(b.best_raw.at(name)), "selected raw weights differ at " + name);
    report(8, c.ok, "deterministic training reproduces the validation series (" + which + ")",
           c.why);
}

// ---------------------------------------------------------------------------
// criterion 9: gradient sanity via central finite differences
// ---------------------------------------------------------------------------

void criterion_9() {
    Check c;
    torch::manual_seed(9);
    auto model = modelzoo::build_model("tiny-cnn", 4, 0.5, 19);
    model.set_train(false);
    model.to_double();

    auto gen = at::detail::createCPUGenerator(91);
    auto x = torch::rand({2, 3, 16, 16}, gen).to(torch::kFloat64);
    auto y = torch::tensor({1L, 2L});

    auto leaf = x.clone().set_requires_grad(true);
    auto loss = torch::cross_entropy_loss(model.forward(leaf), y);
    auto analytic = torch::autograd::grad({loss}, {leaf})[0];

    auto loss_at = [&](const torch::Tensor& probe) {
        torch::NoGradGuard guard;
        return torch::cross_entropy_loss(model.forward(probe), y).item<double>();
    };

    uint64_t rng = 99;
    const double h = 1e-6;
    for (int probe = 0; probe < 10 && c.ok; ++probe) {
        int64_t flat = static_cast<int64_t>(splitmix64(rng) % x.numel());
        auto plus = x.clone(), minus = x.clone();
        plus.view({-1})[flat] += h;
        minus.view({-1})[flat] -= h;
        const double fd = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
        const double an = analytic.view({-1})[flat].item<double>();
        const double denom = std::max({std::abs(an), std::abs(fd), 1e-8});
        c.require(std::abs(fd - an) / denom < 1e-3,
                  "coordinate " + std::to_string(flat) + ": fd=" + std::to_string(fd) +
                      " analytic=" + std::to_string(an));
    }
    report(9, c.ok, "tiny-cnn input gradients match central finite differences (rel 1e-3)",
           c.why);
}

}  // namespace

int main() {
    std::cout << "fastat acceptance suite\n";
    criterion_1();
    criterion_2();
    criterion_3();
    criteria_4_and_5();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9();
    std::cout << (failures == 0 ? "ALL CRITERIA PASSED" :
                                  std::to_string(failures) + " criterion(s) FAILED")
              << std::endl;
    return failures == 0 ? 0 : 1;
}
