#pragma once

#include <string>
#include <vector>

#include <torch/types.h>

#include <json.hpp>

#include "fastat/config.hpp"
#include "fastat/dataio.hpp"
#include "fastat/modelzoo.hpp"

namespace fastat::trainer {

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_pgd10_acc = 0.0;
    double val_fgsm_acc = 0.0;  // feeds the catastrophic-overfitting detector
    double lr_last = 0.0;
    double wall_seconds = 0.0;
};

struct TrainReport {
    std::vector<EpochRecord> per_epoch;
    int selected_epoch = -1;  // argmax val_pgd10, earliest on ties; -1 = none
    double total_seconds = 0.0;
    double peak_memory_gb = 0.0;
    std::string memory_source;  // "accelerator" or "process_peak_rss"
    std::string config_hash;
    int64_t optimizer_steps = 0;
    int64_t train_forward_passes = 0;
};

nlohmann::json report_to_json(const TrainReport& report);
TrainReport report_from_json(const nlohmann::json& j);

// Cross-entropy against (1-s)*onehot + s/K targets, averaged over the batch.
torch::Tensor smoothed_cross_entropy(const torch::Tensor& logits, const torch::Tensor& labels,
                                     double s);

// avg <- d*avg + (1-d)*live per float tensor; integral tensors are copied.
void ema_update(modelzoo::NamedTensors& avg, const modelzoo::NamedTensors& live, double d);

// Linear warmup from lr_max/div_factor to lr_max over pct_start of the run,
// then cosine anneal down to lr_max/(div_factor*final_div_factor).
double onecycle_lr(int64_t step, int64_t total_steps, const config::ScheduleSpec& schedule,
                   double lr_max);

double validate_pgd10(const modelzoo::ModelHandle& model, const torch::Tensor& val_x,
                      const torch::Tensor& val_y, const ThreatModel& threat, uint64_t seed,
                      int batch_size = 256);

struct ProfileSnapshot {
    double total_seconds = 0.0;
    double peak_memory_gb = 0.0;
    std::string source;
};

class Profiler {
  public:
    void start();
    ProfileSnapshot snapshot() const;

  private:
    double t0_ = 0.0;
};

struct TrainOutput {
    TrainReport report;
    modelzoo::ModelHandle model;          // live weights after the last epoch
    modelzoo::NamedTensors best_raw;      // snapshot at the selected epoch
    modelzoo::NamedTensors best_averaged;
};

// Runs the standardized loop: craft -> smoothed CE + aux terms -> SGD step ->
// EMA update, with per-epoch PGD-10 validation on the held-out set. When
// out_dir is nonempty, writes report.json, best_raw.ckpt and best_wa.ckpt.
TrainOutput train(const config::ExperimentConfig& cfg, const dataio::SplitDataset& data,
                  const std::string& out_dir = "");

}  // namespace fastat::trainer
