#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <torch/types.h>

#include "fastat/common.hpp"
#include "fastat/modelzoo.hpp"

namespace fastat::attacks {

enum class AttackKind { fgsm, pgd, apgd_ce, apgd_dlr, ensemble };
enum class LossKind { ce, dlr };

struct AttackSpec {
    AttackKind kind = AttackKind::pgd;
    int iterations = 10;
    double step = 2.0 / 255.0;
    int restarts = 1;
    bool random_start = true;

    std::string name() const;  // e.g. "pgd10", "apgd-ce"
};

struct AttackOutcome {
    torch::Tensor adversarial_inputs;   // (B,C,H,W), feasible by construction
    torch::Tensor per_example_correct;  // bool (B): model still right on x_adv
    double robust_accuracy = 0.0;       // percent, 100 * mean(correct)
};

// Per-example cross-entropy / DLR losses used as ascent objectives. DLR falls
// back to the CE margin when fewer than 3 classes are present.
torch::Tensor attack_loss(const torch::Tensor& logits, const torch::Tensor& labels, LossKind kind);
torch::Tensor dlr_loss(const torch::Tensor& logits, const torch::Tensor& labels);

// Gradient of the summed per-example loss w.r.t. the inputs. Throws
// AttackError with a diagnostic if the gradient is non-finite.
torch::Tensor input_gradient(const modelzoo::ModelHandle& model, const torch::Tensor& x,
                             const torch::Tensor& y, LossKind kind = LossKind::ce);

// Single signed step from init_delta: delta = clip_eps(init + eps*sign(grad)),
// x_adv = clamp(x + delta). Bitwise identical to pgd_attack(k=1, step=eps,
// no random start) from the same init.
AttackOutcome fgsm_attack(const modelzoo::ModelHandle& model, const torch::Tensor& x,
                          const torch::Tensor& y, const ThreatModel& threat,
                          const std::optional<torch::Tensor>& init_delta = std::nullopt);

// k projected signed-gradient steps; uniform-in-ball start when requested.
// With restarts > 1 the per-example worst outcome over restarts is kept.
AttackOutcome pgd_attack(const modelzoo::ModelHandle& model, const torch::Tensor& x,
                         const torch::Tensor& y, const ThreatModel& threat, int k, double step,
                         bool random_start, uint64_t seed = 0, int restarts = 1,
                         const std::optional<torch::Tensor>& init_delta = std::nullopt);

// Momentum PGD with the adaptive step-halving schedule; returns the
// per-example highest-loss adversary found over all iterations.
AttackOutcome apgd_attack(const modelzoo::ModelHandle& model, const torch::Tensor& x,
                          const torch::Tensor& y, const ThreatModel& threat, int k,
                          LossKind loss_kind);

// Checkpoint iterations ceil(w_j * k) of the step-halving schedule.
std::vector<int> apgd_checkpoints(int k);

struct SuiteAccuracy {
    double clean_pct = 0.0;
    // Worst-case with the clean forward: an example counts as robust under an
    // attack only if it is also correct on the unperturbed input.
    std::map<std::string, double> per_attack_pct;
    double ensemble_pct = 0.0;  // AND over clean + every listed attack
    int64_t examples = 0;
};

SuiteAccuracy ensemble_accuracy(const modelzoo::ModelHandle& model, const torch::Tensor& x,
                                const torch::Tensor& y, const std::vector<AttackSpec>& attacks,
                                const ThreatModel& threat, int batch_size, uint64_t seed);

}  // namespace fastat::attacks
