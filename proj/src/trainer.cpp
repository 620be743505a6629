#include "fastat/trainer.hpp"

#include <sys/resource.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <torch/torch.h>

#include "fastat/attacks.hpp"
#include "fastat/methods.hpp"

namespace fastat::trainer {

namespace {

double now_seconds() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

double peak_rss_gb() {
    struct rusage usage {};
    getrusage(RUSAGE_SELF, &usage);
    return static_cast<double>(usage.ru_maxrss) / (1024.0 * 1024.0);  // KiB -> GiB
}

void set_lr(torch::optim::SGD& opt, double lr) {
    for (auto& group : opt.param_groups())
        static_cast<torch::optim::SGDOptions&>(group.options()).lr(lr);
}

}  // namespace

torch::Tensor smoothed_cross_entropy(const torch::Tensor& logits, const torch::Tensor& labels,
                                     double s) {
    if (s < 0 || s > 1) throw std::invalid_argument("smoothed_cross_entropy: s must be in [0,1]");
    // target (1-s)*onehot + s/K; the uniform part reduces to the mean NLL
    auto log_probs = torch::log_softmax(logits, 1);
    auto nll = -log_probs.gather(1, labels.view({-1, 1})).squeeze(1);
    auto uniform = -log_probs.mean(1);
    return ((1.0 - s) * nll + s * uniform).mean();
}

void ema_update(modelzoo::NamedTensors& avg, const modelzoo::NamedTensors& live, double d) {
    torch::NoGradGuard guard;
    for (const auto& [name, live_t] : live) {
        auto it = avg.find(name);
        if (it == avg.end()) throw std::invalid_argument("ema_update: unknown tensor " + name);
        if (it->second.sizes() != live_t.sizes())
            throw std::invalid_argument("ema_update: shape mismatch for " + name);
        if (live_t.is_floating_point())
            it->second.mul_(d).add_(live_t.detach(), 1.0 - d);
        else
            it->second.copy_(live_t.detach());
    }
}

double onecycle_lr(int64_t step, int64_t total_steps, const config::ScheduleSpec& schedule,
                   double lr_max) {
    if (step < 0 || step >= total_steps)
        throw std::out_of_range("onecycle_lr: step " + std::to_string(step) + " outside [0," +
                                std::to_string(total_steps) + ")");
    const double lr_start = lr_max / schedule.div_factor;
    const double lr_final = lr_max / (schedule.div_factor * schedule.final_div_factor);
    int64_t warm = std::llround(schedule.pct_start * static_cast<double>(total_steps));
    warm = std::min(warm, total_steps - 1);
    if (step <= warm) {
        if (warm == 0) return lr_max;
        return lr_start + (lr_max - lr_start) * static_cast<double>(step) /
                              static_cast<double>(warm);
    }
    const int64_t span = (total_steps - 1) - warm;
    if (span <= 0) return lr_final;
    const double progress = static_cast<double>(step - warm) / static_cast<double>(span);
    return lr_final + (lr_max - lr_final) * 0.5 * (1.0 + std::cos(M_PI * progress));
}

double validate_pgd10(const modelzoo::ModelHandle& model, const torch::Tensor& val_x,
                      const torch::Tensor& val_y, const ThreatModel& threat, uint64_t seed,
                      int batch_size) {
    if (val_x.size(0) == 0) throw std::invalid_argument("validate_pgd10: empty validation set");
    attacks::AttackSpec spec;
    spec.kind = attacks::AttackKind::pgd;
    spec.iterations = 10;
    spec.step = threat.eval_step;
    spec.random_start = true;
    auto suite = attacks::ensemble_accuracy(model, val_x, val_y, {spec}, threat, batch_size, seed);
    return suite.per_attack_pct.at(spec.name());
}

void Profiler::start() { t0_ = now_seconds(); }

ProfileSnapshot Profiler::snapshot() const {
    ProfileSnapshot snap;
    snap.total_seconds = now_seconds() - t0_;
    snap.peak_memory_gb = peak_rss_gb();
    snap.source = torch::cuda::is_available() ? "accelerator" : "process_peak_rss";
    return snap;
}

nlohmann::json report_to_json(const TrainReport& r) {
    nlohmann::json per_epoch = nlohmann::json::array();
    for (const auto& e : r.per_epoch)
        per_epoch.push_back({{"epoch", e.epoch},
                             {"train_loss", e.train_loss},
                             {"val_pgd10_acc", e.val_pgd10_acc},
                             {"val_fgsm_acc", e.val_fgsm_acc},
                             {"lr_last", e.lr_last},
                             {"wall_seconds", e.wall_seconds}});
    return nlohmann::json{
        {"per_epoch", per_epoch},
        {"selected_epoch", r.selected_epoch},
        {"total_seconds", r.total_seconds},
        {"peak_memory_gb", r.peak_memory_gb},
        {"memory_source", r.memory_source},
        {"config_hash", r.config_hash},
        {"optimizer_steps", r.optimizer_steps},
        {"train_forward_passes", r.train_forward_passes},
        {"metadata",
         {{"timing_scope", "training plus periodic validation; final evaluation excluded"}}},
    };
}

TrainReport report_from_json(const nlohmann::json& j) {
    TrainReport r;
    for (const auto& e : j.at("per_epoch")) {
        EpochRecord rec;
        rec.epoch = e.at("epoch").get<int>();
        rec.train_loss = e.at("train_loss").get<double>();
        rec.val_pgd10_acc = e.at("val_pgd10_acc").get<double>();
        rec.val_fgsm_acc = e.value("val_fgsm_acc", 0.0);
        rec.lr_last = e.at("lr_last").get<double>();
        rec.wall_seconds = e.at("wall_seconds").get<double>();
        r.per_epoch.push_back(rec);
    }
    r.selected_epoch = j.at("selected_epoch").get<int>();
    r.total_seconds = j.at("total_seconds").get<double>();
    r.peak_memory_gb = j.at("peak_memory_gb").get<double>();
    r.memory_source = j.value("memory_source", "");
    r.config_hash = j.value("config_hash", "");
    r.optimizer_steps = j.value("optimizer_steps", int64_t{0});
    r.train_forward_passes = j.value("train_forward_passes", int64_t{0});
    return r;
}

TrainOutput train(const config::ExperimentConfig& cfg, const dataio::SplitDataset& data,
                  const std::string& out_dir) {
    torch::manual_seed(static_cast<uint64_t>(cfg.seed));

    auto norm = modelzoo::dataset_normalization(cfg.dataset_name);
    auto model = modelzoo::build_model(cfg.arch, data.num_classes, cfg.width_multiplier,
                                       static_cast<uint64_t>(cfg.seed), norm,
                                       static_cast<int>(data.image_shape[0]));
    methods::MethodRunner runner(cfg.method);
    auto state = runner.init_state(data.original_train_size, data.image_shape, cfg.batch_size);

    torch::optim::SGD opt(model.parameters(), torch::optim::SGDOptions(cfg.optimizer.lr_max)
                                                  .momentum(cfg.optimizer.momentum)
                                                  .weight_decay(cfg.optimizer.weight_decay));
    auto averaged = modelzoo::clone_parameters(model);
    // scratch handle used to evaluate the averaged weights
    auto wa_model = modelzoo::build_model(cfg.arch, data.num_classes, cfg.width_multiplier,
                                          static_cast<uint64_t>(cfg.seed), norm,
                                          static_cast<int>(data.image_shape[0]));

    const int replays = runner.replays();
    const int outer_epochs =
        cfg.schedule.epochs == 0 ? 0 : std::max(1, cfg.schedule.epochs / replays);
    const int64_t n_train = data.train.size();
    const int64_t steps_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;
    const int64_t total_steps =
        std::max<int64_t>(1, outer_epochs * steps_per_epoch * replays);

    torch::Tensor val_x, val_y;
    if (data.val.size() > 0) {
        std::vector<int64_t> all(data.val.size());
        for (int64_t i = 0; i < data.val.size(); ++i) all[i] = i;
        val_x = dataio::materialize_images(data.val, all);
        val_y = dataio::materialize_labels(data.val, all);
    }

    TrainOutput out;
    out.report.config_hash = config::config_hash(cfg);

    Profiler profiler;
    profiler.start();
    const uint64_t seed = static_cast<uint64_t>(cfg.seed);
    int64_t global_step = 0;
    double best_val = -1.0;
    double run_start = now_seconds();

    for (int epoch = 0; epoch < outer_epochs; ++epoch) {
        const double epoch_start = now_seconds();
        state.epoch = epoch;
        model.set_train(true);
        auto plan = dataio::BatchPlan::make(seed, epoch, n_train, cfg.batch_size);
        double loss_sum = 0.0;
        int64_t loss_count = 0;
        double lr_last = 0.0;
        const int64_t forwards_before = model.forward_calls();

        for (int64_t b = 0; b < plan.num_batches(); ++b) {
            auto positions = plan.batch_positions(b);
            methods::Batch batch;
            batch.original_indices.reserve(positions.size());
            for (int64_t p : positions) batch.original_indices.push_back(data.train.indices[p]);
            batch.x = dataio::augment_batch(dataio::materialize_images(data.train, positions),
                                            seed, epoch, batch.original_indices);
            batch.y = dataio::materialize_labels(data.train, positions);

            int reps = 1;
            for (int r = 0; r < reps; ++r) {
                const uint64_t craft_seed =
                    mix_seed({seed, 0xc4af7ULL, static_cast<uint64_t>(epoch),
                              static_cast<uint64_t>(b), static_cast<uint64_t>(r)});
                auto crafted = runner.craft(model, batch, cfg.threat, state, craft_seed);
                reps = std::max(reps, crafted.replay_count);

                auto logits = model.forward(crafted.adversarial_batch);
                auto loss = smoothed_cross_entropy(logits, batch.y, cfg.label_smoothing);
                for (const auto& aux : crafted.aux_loss_terms) loss = loss + aux.value;
                const double loss_value = loss.item<double>();
                if (!std::isfinite(loss_value))
                    throw std::runtime_error("non-finite training loss at epoch " +
                                             std::to_string(epoch) + " batch " +
                                             std::to_string(b));

                lr_last = onecycle_lr(global_step, total_steps, cfg.schedule,
                                      cfg.optimizer.lr_max);
                set_lr(opt, lr_last);
                opt.zero_grad();
                loss.backward();
                runner.after_backward(crafted, batch, cfg.threat, state);
                opt.step();
                ema_update(averaged, model.named_state(), cfg.wa_decay);
                ++global_step;
                ++out.report.optimizer_steps;
                loss_sum += loss_value;
                ++loss_count;
            }
        }
        out.report.train_forward_passes += model.forward_calls() - forwards_before;

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_count > 0 ? loss_sum / static_cast<double>(loss_count) : 0.0;
        rec.lr_last = lr_last;

        if (val_x.defined()) {
            modelzoo::ModelHandle eval_model = model;
            if (cfg.method.use_wa_model) {
                modelzoo::load_state(wa_model, averaged);
                eval_model = wa_model;
            }
            rec.val_pgd10_acc = validate_pgd10(eval_model, val_x, val_y, cfg.threat,
                                               mix_seed({seed, 0x7a11ULL,
                                                         static_cast<uint64_t>(epoch)}),
                                               cfg.eval.batch_size);
            attacks::AttackSpec fgsm_spec;
            fgsm_spec.kind = attacks::AttackKind::fgsm;
            auto fgsm_suite = attacks::ensemble_accuracy(
                eval_model, val_x, val_y, {fgsm_spec}, cfg.threat, cfg.eval.batch_size,
                mix_seed({seed, 0xf65ULL, static_cast<uint64_t>(epoch)}));
            rec.val_fgsm_acc = fgsm_suite.per_attack_pct.at("fgsm");
        } else {
            rec.val_pgd10_acc = -1.0;  // no validation set
            rec.val_fgsm_acc = -1.0;
        }
        rec.wall_seconds = now_seconds() - epoch_start;
        out.report.per_epoch.push_back(rec);

        if (rec.val_pgd10_acc > best_val) {  // strict: ties keep the earliest epoch
            best_val = rec.val_pgd10_acc;
            out.report.selected_epoch = epoch;
            out.best_raw = modelzoo::clone_parameters(model);
            modelzoo::NamedTensors avg_copy;
            for (const auto& [k, v] : averaged) avg_copy[k] = v.clone();
            out.best_averaged = std::move(avg_copy);
        }

        std::printf("epoch=%d val_pgd10=%.2f lr=%.6g t=%.1f\n", epoch, rec.val_pgd10_acc,
                    rec.lr_last, now_seconds() - run_start);
        std::fflush(stdout);
    }

    if (out.report.per_epoch.empty()) {
        // model stays at initialization; keep its snapshot anyway
        out.best_raw = modelzoo::clone_parameters(model);
        out.best_averaged = averaged;
        out.report.selected_epoch = -1;
    }

    auto snap = profiler.snapshot();
    out.report.total_seconds = snap.total_seconds;
    out.report.peak_memory_gb = snap.peak_memory_gb;
    out.report.memory_source = snap.source;
    out.model = model;

    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ofstream rep(out_dir + "/report.json");
        rep << report_to_json(out.report).dump(2) << "\n";
        modelzoo::save_checkpoint(out_dir + "/best_raw.ckpt", model, out.best_raw,
                                  out.report.config_hash, out.report.selected_epoch);
        modelzoo::save_checkpoint(out_dir + "/best_wa.ckpt", model, out.best_averaged,
                                  out.report.config_hash, out.report.selected_epoch);
    }
    return out;
}

}  // namespace fastat::trainer
