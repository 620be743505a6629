#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include <torch/torch.h>

#include "fastat/dataio.hpp"
#include "fastat/evalsuite.hpp"

using namespace fastat;
using evalsuite::RunResult;

namespace {

RunResult result_with(double clean, int seed) {
    RunResult r;
    r.method = "fgsm-rs";
    r.dataset = "synthetic";
    r.seed = seed;
    r.clean_pct = clean;
    r.pgd10_pct = clean - 10;
    r.pgd20_pct = clean - 11;
    r.pgd50_pct = clean - 12;
    r.aa_lite_pct = clean - 15;
    r.train_seconds = 100 + seed;
    r.peak_memory_gb = 1.5;
    return r;
}

}  // namespace

TEST_CASE("aggregate: hand-computed mean and sample std") {
    std::vector<RunResult> results = {result_with(48, 0), result_with(49, 1),
                                      result_with(50, 2)};
    auto agg = evalsuite::aggregate(results);
    const auto& clean = agg.metrics.at("clean_pct");
    CHECK(clean.n == 3);
    CHECK(clean.mean == doctest::Approx(49.0));
    CHECK(clean.std == doctest::Approx(1.0));
    CHECK(evalsuite::format_mean_std(clean) == "49.00 ± 1.00");
}

TEST_CASE("aggregate: single run has zero std") {
    auto agg = evalsuite::aggregate({result_with(73.25, 0)});
    CHECK(agg.metrics.at("clean_pct").n == 1);
    CHECK(agg.metrics.at("clean_pct").std == 0.0);
    CHECK(evalsuite::format_mean_std(agg.metrics.at("clean_pct")) == "73.25 ± 0.00");
}

TEST_CASE("aggregate rejects empty and mixed inputs") {
    CHECK_THROWS_AS(evalsuite::aggregate({}), std::invalid_argument);
    auto a = result_with(50, 0);
    auto b = result_with(51, 1);
    b.method = "n-fgsm";
    CHECK_THROWS_AS(evalsuite::aggregate({a, b}), std::invalid_argument);
}

TEST_CASE("aggregate is invariant under input permutations") {
    std::vector<RunResult> results;
    for (int s = 0; s < 5; ++s) results.push_back(result_with(40.0 + 3.7 * s, s));
    auto reference = evalsuite::aggregate(results);

    std::mt19937 shuffler(123);
    for (int trial = 0; trial < 100; ++trial) {
        auto shuffled = results;
        std::shuffle(shuffled.begin(), shuffled.end(), shuffler);
        auto agg = evalsuite::aggregate(shuffled);
        for (const auto& key : evalsuite::metric_keys()) {
            CHECK(agg.metrics.at(key).mean == reference.metrics.at(key).mean);
            CHECK(agg.metrics.at(key).std == reference.metrics.at(key).std);
        }
    }
}

TEST_CASE("aggregate mean lies within [min, max]; formatting round-trips") {
    uint64_t rng = 8;
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<RunResult> results;
        double lo = 1e18, hi = -1e18;
        const int n = 2 + static_cast<int>(splitmix64(rng) % 4);
        for (int s = 0; s < n; ++s) {
            double v = (splitmix64(rng) % 10000) / 100.0;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
            results.push_back(result_with(v, s));
        }
        auto agg = evalsuite::aggregate(results);
        const auto& stat = agg.metrics.at("clean_pct");
        CHECK(stat.mean >= lo - 1e-12);
        CHECK(stat.mean <= hi + 1e-12);

        auto formatted = evalsuite::format_mean_std(stat);
        double parsed_mean = std::stod(formatted.substr(0, formatted.find(' ')));
        CHECK(std::abs(parsed_mean - stat.mean) <= 0.005 + 1e-9);
    }
}

TEST_CASE("missing metrics aggregate over the available n") {
    auto a = result_with(50, 0);
    auto b = result_with(52, 1);
    b.aa_lite_pct = std::nan("");
    auto agg = evalsuite::aggregate({a, b});
    CHECK(agg.metrics.at("aa_lite_pct").n == 1);
    CHECK(agg.metrics.at("clean_pct").n == 2);
}

TEST_CASE("run result json round-trip, including missing values") {
    auto r = result_with(61.5, 2);
    r.aa_lite_pct = std::nan("");
    r.config_hash = "deadbeef";
    r.timestamp = "2026-01-01T00:00:00Z";
    auto j = evalsuite::to_json(r);
    CHECK(j.at("aa_lite_pct").is_null());
    auto back = evalsuite::run_result_from_json(j);
    CHECK(back.method == r.method);
    CHECK(back.seed == 2);
    CHECK(back.clean_pct == doctest::Approx(61.5));
    CHECK(std::isnan(back.aa_lite_pct));
    CHECK(back.config_hash == "deadbeef");
}

TEST_CASE("run results write to the per-seed path scheme and read back") {
    auto root = std::filesystem::temp_directory_path() / "fastat_evalsuite_tests" / "results";
    std::filesystem::remove_all(root);
    for (int s : {0, 1, 2}) evalsuite::write_run_result(root.string(), result_with(50 + s, s));

    CHECK(std::filesystem::exists(root / "synthetic" / "fgsm-rs" / "seed1.json"));
    auto all = evalsuite::read_run_results(root.string());
    REQUIRE(all.size() == 3);
    CHECK(all[0].seed + all[1].seed + all[2].seed == 3);
}

TEST_CASE("evaluate: stub behaviors") {
    auto data = dataio::make_synthetic(64, 2, {3, 8, 8}, 31, 0.05, 64);
    ThreatModel t;
    t.epsilon = 8.0 / 255.0;
    config::EvalSpec suite;
    suite.apgd_iters = 5;  // desk-sized ensemble
    evalsuite::RunProvenance prov{"stub", "synthetic", 0, 12.0, 0.5, "process_peak_rss", "h", };

    SUBCASE("input-ignoring stub: robust metrics equal clean exactly") {
        auto stub = modelzoo::custom_model([](const torch::Tensor& x) {
            return torch::tensor({{2.0, 0.0}}).expand({x.size(0), 2}).clone();
        });
        auto r = evalsuite::evaluate(stub, data.test, t, suite, prov, 5);
        CHECK(r.pgd10_pct == doctest::Approx(r.clean_pct));
        CHECK(r.pgd20_pct == doctest::Approx(r.clean_pct));
        CHECK(r.pgd50_pct == doctest::Approx(r.clean_pct));
        CHECK(r.aa_lite_pct == doctest::Approx(r.clean_pct));
        CHECK(r.train_seconds == doctest::Approx(12.0));
        CHECK_FALSE(r.timestamp.empty());
    }
    SUBCASE("nearest-mean oracle stub: clean 100, robust bounded by clean") {
        std::vector<int64_t> all(data.test.size());
        for (int64_t i = 0; i < data.test.size(); ++i) all[i] = i;
        auto x = dataio::materialize_images(data.test, all).flatten(1);
        auto y = data.test.y;
        auto mu0 = x.index({y.eq(0)}).mean(0);
        auto mu1 = x.index({y.eq(1)}).mean(0);
        auto oracle = modelzoo::custom_model([mu0, mu1](const torch::Tensor& input) {
            auto flat = input.flatten(1);
            auto d0 = (flat - mu0).square().sum(1);
            auto d1 = (flat - mu1).square().sum(1);
            return torch::stack({-d0, -d1}, 1);
        });
        auto r = evalsuite::evaluate(oracle, data.test, t, suite, prov, 5);
        CHECK(r.clean_pct == doctest::Approx(100.0));
        CHECK(r.pgd50_pct <= r.clean_pct);
        CHECK(r.aa_lite_pct <= std::min(r.pgd50_pct + 0.5, r.clean_pct));
    }
}

TEST_CASE("repeat evaluation is identical except for the timestamp") {
    torch::manual_seed(13);
    auto model = modelzoo::build_model("tiny-cnn", 2, 0.25, 21,
                                       modelzoo::dataset_normalization("synthetic"), 3);
    auto data = dataio::make_synthetic(16, 2, {3, 8, 8}, 71, 0.08, 48);
    ThreatModel t;
    t.epsilon = 0.03;
    config::EvalSpec suite;
    suite.apgd_iters = 5;
    evalsuite::RunProvenance prov{"m", "synthetic", 0, 3.0, 0.2, "process_peak_rss", "h"};

    auto a = evalsuite::evaluate(model, data.test, t, suite, prov, 9);
    auto b = evalsuite::evaluate(model, data.test, t, suite, prov, 9);
    auto ja = evalsuite::to_json(a), jb = evalsuite::to_json(b);
    ja.erase("timestamp");
    jb.erase("timestamp");
    CHECK(ja == jb);
}

TEST_CASE("evaluate applies the worst-case rule on a real checkpoint-shaped model") {
    torch::manual_seed(17);
    auto model = modelzoo::build_model("tiny-cnn", 2, 0.25, 9,
                                       modelzoo::dataset_normalization("synthetic"), 3);
    auto data = dataio::make_synthetic(32, 2, {3, 8, 8}, 47, 0.08, 48);
    ThreatModel t;
    t.epsilon = 8.0 / 255.0;
    config::EvalSpec suite;
    suite.apgd_iters = 5;
    evalsuite::RunProvenance prov{"tiny", "synthetic", 0, 1.0, 0.1, "process_peak_rss", "h"};

    auto r = evalsuite::evaluate(model, data.test, t, suite, prov, 3);
    CHECK(r.pgd10_pct <= r.clean_pct);
    CHECK(r.pgd50_pct <= r.pgd20_pct + 0.5);
    CHECK(r.pgd20_pct <= r.pgd10_pct + 0.5);
    CHECK(r.aa_lite_pct <= std::min(r.pgd50_pct, r.clean_pct) + 0.5);
}
