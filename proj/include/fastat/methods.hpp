#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <torch/types.h>

#include "fastat/common.hpp"
#include "fastat/config.hpp"
#include "fastat/modelzoo.hpp"

namespace fastat::methods {

// Per-method cross-epoch state. prior_buffer is indexed by absolute
// training-set index; every stored perturbation stays inside the eps-ball.
struct MethodState {
    torch::Tensor prior_buffer;   // (N_orig,C,H,W) or undefined
    torch::Tensor carried_delta;  // (batch_size,C,H,W) or undefined
    int64_t epoch = 0;
};

struct AuxTerm {
    std::string name;
    torch::Tensor value;  // scalar, already weighted, participates in backward
};

struct Batch {
    torch::Tensor x;                      // (B,C,H,W) float in [0,1]
    torch::Tensor y;                      // (B) int64
    std::vector<int64_t> original_indices;  // absolute training-set ids
};

struct CraftResult {
    torch::Tensor adversarial_batch;
    std::vector<AuxTerm> aux_loss_terms;
    int replay_count = 1;
    torch::Tensor delta_leaf;  // set when the training backward must reach delta
};

struct MethodInfo {
    std::string name;
    bool implemented = false;
    std::string state_kind;  // "none", "prior-buffer", "carried-delta"
    std::map<std::string, double> default_params;
    bool default_use_wa = true;
    std::string summary;
};

// Full catalog, implemented methods and honest "not implemented" stubs alike.
const std::map<std::string, MethodInfo>& registry();
bool is_registered(const std::string& name);
bool is_implemented(const std::string& name);

// One registered method bound to its resolved hyperparameters. The trainer
// drives every method through this interface and nothing else.
class MethodRunner {
  public:
    explicit MethodRunner(const config::MethodSpec& spec);

    CraftResult craft(const modelzoo::ModelHandle& model, const Batch& batch,
                      const ThreatModel& threat, MethodState& state, uint64_t step_seed) const;

    // Called after the trainer's backward pass; methods that reuse that
    // gradient (FreeAT's carried delta) update their state here.
    void after_backward(const CraftResult& result, const Batch& batch,
                        const ThreatModel& threat, MethodState& state) const;

    // Batch replay factor (1 for all single-pass methods). The trainer runs
    // epochs/replays outer epochs so total passes match the configured budget.
    int replays() const;

    MethodState init_state(int64_t original_train_size, std::array<int64_t, 3> image_shape,
                           int batch_size) const;

    const config::MethodSpec& spec() const { return spec_; }
    double param(const std::string& key) const;

  private:
    config::MethodSpec spec_;
};

// Zeroes the floor(q*n) smallest-magnitude coordinates per example.
torch::Tensor zero_grad_mask(const torch::Tensor& grad, double q);

// lambda * (1 - cos(grad_x loss(x), grad_x loss(x+eta))), eta ~ U[-eps,eps],
// averaged over the batch; differentiable w.r.t. the model parameters.
torch::Tensor grad_align_penalty(const modelzoo::ModelHandle& model, const torch::Tensor& x,
                                 const torch::Tensor& y, const ThreatModel& threat,
                                 double lambda, uint64_t seed);

// The cosine core of the penalty on per-example flattened gradients (B, D).
// Zero-norm pairs count as aligned (cosine 1) and log a warning.
torch::Tensor alignment_penalty_from_gradients(const torch::Tensor& g1, const torch::Tensor& g2,
                                               double lambda);

// lambda * nuclear_norm(logits_adv - logits_clean) / B.
torch::Tensor nuclear_consistency_penalty(const torch::Tensor& logits_clean,
                                          const torch::Tensor& logits_adv, double lambda);

// Squared deviation of the loss from linearity along a random chord:
// mean over the batch of (l(mix) - a*l(x_a) - (1-a)*l(x_b))^2.
torch::Tensor local_linearity_gap(
    const std::function<torch::Tensor(const torch::Tensor&)>& per_example_loss,
    const torch::Tensor& x_a, const torch::Tensor& x_b, const torch::Tensor& alpha);

torch::Tensor local_linearity_penalty(const modelzoo::ModelHandle& model, const torch::Tensor& x,
                                      const torch::Tensor& y, const ThreatModel& threat,
                                      double lambda, uint64_t seed);

// buffer[i] <- project_eps(mu * buffer[i] + (1-mu) * delta_i).
void update_prior_buffer(MethodState& state, const std::vector<int64_t>& indices,
                         const torch::Tensor& delta, double momentum, double epsilon);

// Flags catastrophic overfitting in a per-epoch (fgsm_acc, pgd10_acc) series:
// pgd10 drops more than `drop_points` within `window` epochs while fgsm does
// not drop (beyond `fgsm_tolerance`). Returns the first flagged epoch.
std::optional<int> detect_catastrophic_overfitting(
    const std::vector<std::pair<double, double>>& fgsm_pgd10_series,
    double drop_points = 20.0, int window = 2, double fgsm_tolerance = 5.0);

}  // namespace fastat::methods
