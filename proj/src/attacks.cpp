#include "fastat/attacks.hpp"

#include <cmath>

#include <torch/torch.h>

namespace fastat::attacks {

namespace {

// Feasible set: the eps-ball around x0 intersected with the data range.
torch::Tensor project(const torch::Tensor& candidate, const torch::Tensor& x0,
                      const ThreatModel& threat) {
    return torch::min(torch::max(candidate, x0 - threat.epsilon), x0 + threat.epsilon)
        .clamp(threat.data_min, threat.data_max);
}

void assert_feasible(const torch::Tensor& x_adv, const torch::Tensor& x,
                     const ThreatModel& threat) {
    const double slack = 1e-6;
    double linf = (x_adv - x).abs().max().item<double>();
    if (linf > threat.epsilon + slack)
        throw AttackError("adversarial input left the eps-ball: linf=" + std::to_string(linf));
    double lo = x_adv.min().item<double>(), hi = x_adv.max().item<double>();
    if (lo < threat.data_min - slack || hi > threat.data_max + slack)
        throw AttackError("adversarial input left the data range");
}

torch::Tensor correct_mask(const modelzoo::ModelHandle& model, const torch::Tensor& x,
                           const torch::Tensor& y) {
    torch::NoGradGuard guard;
    return model.forward(x).argmax(1).eq(y);
}

AttackOutcome finish(const modelzoo::ModelHandle& model, const torch::Tensor& x_adv,
                     const torch::Tensor& x, const torch::Tensor& y, const ThreatModel& threat) {
    assert_feasible(x_adv, x, threat);
    AttackOutcome out;
    out.adversarial_inputs = x_adv;
    out.per_example_correct = correct_mask(model, x_adv, y);
    out.robust_accuracy = 100.0 * out.per_example_correct.to(torch::kFloat64).mean().item<double>();
    return out;
}

torch::Tensor uniform_like(const torch::Tensor& x, double lo, double hi, uint64_t seed) {
    auto gen = at::detail::createCPUGenerator(seed);
    auto u = torch::empty_like(x);
    u.uniform_(lo, hi, gen);
    return u;
}

}  // namespace

std::string AttackSpec::name() const {
    switch (kind) {
        case AttackKind::fgsm: return "fgsm";
        case AttackKind::pgd: return "pgd" + std::to_string(iterations);
        case AttackKind::apgd_ce: return "apgd-ce";
        case AttackKind::apgd_dlr: return "apgd-dlr";
        case AttackKind::ensemble: return "ensemble";
    }
    return "unknown";
}

torch::Tensor dlr_loss(const torch::Tensor& logits, const torch::Tensor& labels) {
    if (logits.size(1) < 3) return attack_loss(logits, labels, LossKind::ce);
    auto [sorted, order] = logits.sort(1, /*descending=*/true);
    auto z_y = logits.gather(1, labels.view({-1, 1})).squeeze(1);
    auto top = sorted.select(1, 0);
    auto second = sorted.select(1, 1);
    auto is_top = order.select(1, 0).eq(labels);
    auto max_other = torch::where(is_top, second, top);
    auto denom = (sorted.select(1, 0) - sorted.select(1, 2)).clamp_min(1e-12);
    // negated margin over the top-logit gap: ascending this loss erodes z_y
    return -(z_y - max_other) / denom;
}

torch::Tensor attack_loss(const torch::Tensor& logits, const torch::Tensor& labels,
                          LossKind kind) {
    if (kind == LossKind::dlr) return dlr_loss(logits, labels);
    return torch::cross_entropy_loss(logits, labels, {}, at::Reduction::None);
}

torch::Tensor input_gradient(const modelzoo::ModelHandle& model, const torch::Tensor& x,
                             const torch::Tensor& y, LossKind kind) {
    auto leaf = x.detach().clone().set_requires_grad(true);
    auto loss = attack_loss(model.forward(leaf), y, kind).sum();
    // input-independent models (constant-logit stubs) have no graph to the leaf
    if (!loss.requires_grad()) return torch::zeros_like(leaf);
    auto grads = torch::autograd::grad({loss}, {leaf}, {}, c10::nullopt, false,
                                       /*allow_unused=*/true);
    auto grad = grads[0].defined() ? grads[0] : torch::zeros_like(leaf);
    if (!torch::isfinite(grad).all().item<bool>())
        throw AttackError("non-finite input gradient (loss=" +
                          std::to_string(loss.item<double>()) + ")");
    return grad.detach();
}

AttackOutcome pgd_attack(const modelzoo::ModelHandle& model, const torch::Tensor& x,
                         const torch::Tensor& y, const ThreatModel& threat, int k, double step,
                         bool random_start, uint64_t seed, int restarts,
                         const std::optional<torch::Tensor>& init_delta) {
    if (k < 0) throw AttackError("pgd_attack: k must be >= 0");
    if (k > 0 && step < 0) throw AttackError("pgd_attack: step must be >= 0");

    torch::Tensor best_adv, best_loss;
    for (int r = 0; r < std::max(1, restarts); ++r) {
        torch::Tensor start = x;
        if (init_delta.has_value())
            start = x + *init_delta;
        else if (random_start)
            start = x + uniform_like(x, -threat.epsilon, threat.epsilon,
                                     mix_seed({seed, static_cast<uint64_t>(r)}));
        auto x_cur = project(start, x, threat);
        for (int i = 0; i < k; ++i) {
            auto grad = input_gradient(model, x_cur, y, LossKind::ce);
            x_cur = project(x_cur + step * grad.sign(), x, threat);
        }
        torch::NoGradGuard guard;
        auto loss = attack_loss(model.forward(x_cur), y, LossKind::ce);
        if (!best_adv.defined()) {
            best_adv = x_cur;
            best_loss = loss;
        } else {
            auto take = loss > best_loss;
            best_loss = torch::where(take, loss, best_loss);
            best_adv = torch::where(take.view({-1, 1, 1, 1}), x_cur, best_adv);
        }
    }
    return finish(model, best_adv, x, y, threat);
}

AttackOutcome fgsm_attack(const modelzoo::ModelHandle& model, const torch::Tensor& x,
                          const torch::Tensor& y, const ThreatModel& threat,
                          const std::optional<torch::Tensor>& init_delta) {
    // one eps-sized signed step; shares the PGD kernel bit for bit
    return pgd_attack(model, x, y, threat, /*k=*/1, /*step=*/threat.epsilon,
                      /*random_start=*/false, /*seed=*/0, /*restarts=*/1,
                      init_delta.has_value() ? init_delta
                                             : std::optional<torch::Tensor>(torch::zeros_like(x)));
}

std::vector<int> apgd_checkpoints(int k) {
    std::vector<double> w = {0.0, 0.22};
    static const double listed[] = {0.39, 0.53, 0.65, 0.74, 0.81, 0.86};
    for (double v : listed) w.push_back(v);
    while (true) {
        double next = w.back() + std::max(w.back() - w[w.size() - 2] - 0.03, 0.03);
        if (next >= 1.0) break;
        w.push_back(next);
    }
    std::vector<int> out;
    for (size_t j = 1; j < w.size(); ++j) {
        int c = static_cast<int>(std::ceil(w[j] * k));
        if (c >= k) break;
        if (c >= 1 && (out.empty() || c > out.back())) out.push_back(c);
    }
    return out;
}

AttackOutcome apgd_attack(const modelzoo::ModelHandle& model, const torch::Tensor& x,
                          const torch::Tensor& y, const ThreatModel& threat, int k,
                          LossKind loss_kind) {
    if (k < 1) throw AttackError("apgd_attack: k must be >= 1");
    const double alpha = 0.75;  // momentum weight
    const int64_t batch = x.size(0);

    auto objective = [&](const torch::Tensor& inputs) {
        torch::NoGradGuard guard;
        return attack_loss(model.forward(inputs), y, loss_kind);
    };

    auto checkpoints = apgd_checkpoints(k);
    auto eta = torch::full({batch, 1, 1, 1}, 2.0 * threat.epsilon, x.options());

    auto x_cur = x.clone();
    auto x_prev = x.clone();
    auto f_cur = objective(x_cur);
    auto f_best = f_cur.clone();
    auto x_best = x_cur.clone();
    auto fails = torch::zeros({batch}, torch::kInt64);
    int segment_start = 0;
    size_t next_ckpt = 0;

    for (int i = 0; i < k; ++i) {
        auto grad = input_gradient(model, x_cur, y, loss_kind);
        auto z = project(x_cur + eta * grad.sign(), x, threat);
        torch::Tensor x_next;
        if (i == 0)
            x_next = z;
        else
            x_next = project(x_cur + alpha * (z - x_cur) + (1.0 - alpha) * (x_cur - x_prev), x,
                             threat);
        auto f_next = objective(x_next);

        fails += (f_next <= f_cur).to(torch::kInt64);
        auto improved = f_next > f_best;
        f_best = torch::where(improved, f_next, f_best);
        x_best = torch::where(improved.view({-1, 1, 1, 1}), x_next, x_best);

        x_prev = x_cur;
        x_cur = x_next;
        f_cur = f_next;

        const int done = i + 1;
        if (next_ckpt < checkpoints.size() && done == checkpoints[next_ckpt]) {
            const int seg_len = done - segment_start;
            auto halve = fails.to(torch::kFloat64) >= 0.75 * static_cast<double>(seg_len) - 1e-9;
            eta = torch::where(halve.view({-1, 1, 1, 1}), eta * 0.5, eta);
            // every segment restarts from the incumbent best point
            x_cur = x_best.clone();
            x_prev = x_cur.clone();
            f_cur = f_best.clone();
            fails.zero_();
            segment_start = done;
            ++next_ckpt;
        }
    }
    return finish(model, x_best, x, y, threat);
}

SuiteAccuracy ensemble_accuracy(const modelzoo::ModelHandle& model, const torch::Tensor& x,
                                const torch::Tensor& y, const std::vector<AttackSpec>& attacks,
                                const ThreatModel& threat, int batch_size, uint64_t seed) {
    if (attacks.empty()) throw AttackError("ensemble_accuracy: attack list is empty");
    const bool was_training = model.is_training();
    model.set_train(false);

    const int64_t n = x.size(0);
    SuiteAccuracy out;
    out.examples = n;
    int64_t clean_hits = 0, ensemble_hits = 0;
    std::map<std::string, int64_t> attack_hits;
    for (const auto& spec : attacks) attack_hits[spec.name()] = 0;

    for (int64_t begin = 0; begin < n; begin += batch_size) {
        const int64_t len = std::min<int64_t>(batch_size, n - begin);
        auto xb = x.narrow(0, begin, len);
        auto yb = y.narrow(0, begin, len);
        auto clean = correct_mask(model, xb, yb);
        clean_hits += clean.sum().item<int64_t>();
        auto ensemble = clean.clone();
        int attack_idx = 0;
        for (const auto& spec : attacks) {
            const uint64_t attack_seed = mix_seed(
                {seed, static_cast<uint64_t>(begin), static_cast<uint64_t>(attack_idx++)});
            AttackOutcome outcome;
            switch (spec.kind) {
                case AttackKind::fgsm:
                    outcome = fgsm_attack(model, xb, yb, threat);
                    break;
                case AttackKind::pgd:
                    outcome = pgd_attack(model, xb, yb, threat, spec.iterations, spec.step,
                                         spec.random_start, attack_seed, spec.restarts);
                    break;
                case AttackKind::apgd_ce:
                    outcome = apgd_attack(model, xb, yb, threat, spec.iterations, LossKind::ce);
                    break;
                case AttackKind::apgd_dlr:
                    outcome = apgd_attack(model, xb, yb, threat, spec.iterations, LossKind::dlr);
                    break;
                case AttackKind::ensemble:
                    throw AttackError("nested ensemble specs are not supported");
            }
            // worst case with the clean forward: identity is always in the suite
            auto robust = outcome.per_example_correct & clean;
            attack_hits[spec.name()] += robust.sum().item<int64_t>();
            ensemble = ensemble & outcome.per_example_correct;
        }
        ensemble_hits += ensemble.sum().item<int64_t>();
    }

    out.clean_pct = 100.0 * static_cast<double>(clean_hits) / static_cast<double>(n);
    for (const auto& [name, hits] : attack_hits)
        out.per_attack_pct[name] = 100.0 * static_cast<double>(hits) / static_cast<double>(n);
    out.ensemble_pct = 100.0 * static_cast<double>(ensemble_hits) / static_cast<double>(n);

    model.set_train(was_training);
    return out;
}

}  // namespace fastat::attacks
