#include "fastat/methods.hpp"

#include <iostream>

#include <torch/torch.h>

#include "fastat/attacks.hpp"

namespace fastat::methods {

namespace {

constexpr double kReferenceEps = 8.0 / 255.0;

torch::Tensor uniform_like(const torch::Tensor& x, double lo, double hi, uint64_t seed) {
    auto gen = at::detail::createCPUGenerator(seed);
    auto u = torch::empty_like(x);
    u.uniform_(lo, hi, gen);
    return u;
}

torch::Tensor index_tensor(const std::vector<int64_t>& idx) {
    return torch::tensor(idx, torch::kInt64);
}

}  // namespace

const std::map<std::string, MethodInfo>& registry() {
    static const std::map<std::string, MethodInfo> reg = [] {
        std::map<std::string, MethodInfo> m;
        auto add = [&m](MethodInfo info) { m[info.name] = std::move(info); };

        add({"fgsm-at", true, "none", {{"alpha", 1.0}}, true,
             "single signed gradient step from a zero start"});
        add({"fgsm-rs", true, "none", {{"alpha", 1.25}}, true,
             "uniform random start inside the budget, projected step"});
        add({"n-fgsm", true, "none", {{"alpha", 1.0}, {"noise_factor", 2.0}}, true,
             "noise from beyond the budget, no ball projection"});
        add({"zero-grad", true, "none", {{"alpha", 1.25}, {"zero_quantile", 0.35}}, true,
             "random start with the smallest gradient coordinates zeroed"});
        add({"free-at", true, "carried-delta", {{"replays", 4.0}}, true,
             "batch replays reusing the training backward for the perturbation"});
        add({"grad-align", true, "none", {{"alpha", 1.25}, {"reg_weight", 0.2}}, true,
             "random-start step plus input-gradient alignment penalty"});
        add({"fgsm-pgi", true, "prior-buffer", {{"alpha", 1.0}, {"prior_momentum", 0.3}}, true,
             "perturbation initialized from a per-example prior buffer"});
        add({"nuat", true, "none", {{"alpha", 1.0}, {"reg_weight", 4.0}}, true,
             "Bernoulli start plus nuclear-norm logit consistency penalty"});
        add({"elle", true, "none", {{"alpha", 1.25}, {"reg_weight", 2000.0}}, true,
             "random-start step plus local-linearity penalty"});
        add({"pgd-at", true, "none", {{"steps", 10.0}, {"step", 0.25}}, false,
             "multi-step projected gradient baseline, raw weights evaluated"});
        add({"pgd-at-wa", true, "none", {{"steps", 10.0}, {"step", 0.25}}, true,
             "multi-step projected gradient baseline, averaged weights evaluated"});

        for (const char* stub : {"gat", "aaer", "n-aaer", "ssat", "fgsm-uap", "fgsm-cuap",
                                 "fgsm-fuap", "fgsm-mep-cs", "fgsm-rs-cs", "fgsm-pco", "liet"})
            add({stub, false, "none", {}, true,
                 "not implemented; procedure lives in the cited literature"});
        return m;
    }();
    return reg;
}

bool is_registered(const std::string& name) { return registry().count(name) != 0; }

bool is_implemented(const std::string& name) {
    auto it = registry().find(name);
    return it != registry().end() && it->second.implemented;
}

MethodRunner::MethodRunner(const config::MethodSpec& spec) : spec_(spec) {
    if (!is_registered(spec.name))
        throw ConfigError("method '" + spec.name + "' not in registry");
    if (!is_implemented(spec.name))
        throw ConfigError("method '" + spec.name + "' not implemented (registry stub)");
}

double MethodRunner::param(const std::string& key) const {
    auto it = spec_.params.find(key);
    if (it != spec_.params.end()) return it->second;
    const auto& defaults = registry().at(spec_.name).default_params;
    auto dit = defaults.find(key);
    if (dit == defaults.end())
        throw std::out_of_range("method '" + spec_.name + "' has no hyperparameter '" + key + "'");
    return dit->second;
}

int MethodRunner::replays() const {
    return spec_.name == "free-at" ? std::max(1, static_cast<int>(param("replays"))) : 1;
}

MethodState MethodRunner::init_state(int64_t original_train_size,
                                     std::array<int64_t, 3> image_shape, int batch_size) const {
    MethodState state;
    const auto& kind = registry().at(spec_.name).state_kind;
    if (kind == "prior-buffer")
        state.prior_buffer = torch::zeros(
            {original_train_size, image_shape[0], image_shape[1], image_shape[2]});
    else if (kind == "carried-delta")
        state.carried_delta =
            torch::zeros({batch_size, image_shape[0], image_shape[1], image_shape[2]});
    return state;
}

torch::Tensor zero_grad_mask(const torch::Tensor& grad, double q) {
    if (q < 0 || q > 1) throw std::invalid_argument("zero_grad_mask: q must be in [0,1]");
    const int64_t batch = grad.size(0);
    auto flat = grad.reshape({batch, -1});
    const int64_t n = flat.size(1);
    const int64_t k = static_cast<int64_t>(std::floor(q * static_cast<double>(n)));
    if (k <= 0) return grad.clone();
    if (k >= n) return torch::zeros_like(grad);
    auto order = flat.abs().argsort(/*dim=*/1, /*descending=*/false);  // ascending magnitude
    auto mask = torch::ones_like(flat);
    mask.scatter_(1, order.narrow(1, 0, k), 0.0);
    return (flat * mask).view_as(grad);
}

torch::Tensor alignment_penalty_from_gradients(const torch::Tensor& g1, const torch::Tensor& g2,
                                               double lambda) {
    auto dot = (g1 * g2).sum(1);
    auto norms = g1.norm(2, 1) * g2.norm(2, 1);
    auto cos = dot / norms.clamp_min(1e-20);
    auto degenerate = norms.detach() < 1e-20;
    if (degenerate.any().item<bool>()) {
        std::cerr << "[fastat] warning: zero-norm input gradient in grad_align_penalty; "
                     "treating cosine as 1\n";
        cos = torch::where(degenerate, torch::ones_like(cos), cos);
    }
    return lambda * (1.0 - cos).mean();
}

torch::Tensor grad_align_penalty(const modelzoo::ModelHandle& model, const torch::Tensor& x,
                                 const torch::Tensor& y, const ThreatModel& threat, double lambda,
                                 uint64_t seed) {
    if (lambda < 0) throw std::invalid_argument("grad_align_penalty: lambda must be >= 0");
    auto grad_at = [&](const torch::Tensor& point) {
        auto leaf = point.detach().clone().set_requires_grad(true);
        auto loss =
            torch::cross_entropy_loss(model.forward(leaf), y, {}, at::Reduction::None).sum();
        if (!loss.requires_grad()) return torch::zeros_like(leaf);
        auto grads = torch::autograd::grad({loss}, {leaf}, {}, /*retain_graph=*/true,
                                           /*create_graph=*/true, /*allow_unused=*/true);
        return grads[0].defined() ? grads[0] : torch::zeros_like(leaf);
    };
    auto eta = uniform_like(x, -threat.epsilon, threat.epsilon, seed);
    auto g1 = grad_at(x).flatten(1);
    auto g2 = grad_at(x + eta).flatten(1);
    return alignment_penalty_from_gradients(g1, g2, lambda);
}

torch::Tensor nuclear_consistency_penalty(const torch::Tensor& logits_clean,
                                          const torch::Tensor& logits_adv, double lambda) {
    if (logits_clean.sizes() != logits_adv.sizes())
        throw std::invalid_argument("nuclear_consistency_penalty: shape mismatch");
    auto diff = logits_adv - logits_clean;
    auto singular = torch::linalg_svdvals(diff);
    return lambda * singular.sum() / static_cast<double>(logits_clean.size(0));
}

torch::Tensor local_linearity_gap(
    const std::function<torch::Tensor(const torch::Tensor&)>& per_example_loss,
    const torch::Tensor& x_a, const torch::Tensor& x_b, const torch::Tensor& alpha) {
    std::vector<int64_t> shape(x_a.dim(), 1);
    shape[0] = alpha.size(0);
    auto a = alpha.view(shape);
    auto mix = a * x_a + (1.0 - a) * x_b;
    auto gap = per_example_loss(mix) - alpha * per_example_loss(x_a) -
               (1.0 - alpha) * per_example_loss(x_b);
    return gap.square().mean();
}

torch::Tensor local_linearity_penalty(const modelzoo::ModelHandle& model, const torch::Tensor& x,
                                      const torch::Tensor& y, const ThreatModel& threat,
                                      double lambda, uint64_t seed) {
    if (lambda < 0) throw std::invalid_argument("local_linearity_penalty: lambda must be >= 0");
    auto x_a = x + uniform_like(x, -threat.epsilon, threat.epsilon, mix_seed({seed, 1}));
    auto x_b = x + uniform_like(x, -threat.epsilon, threat.epsilon, mix_seed({seed, 2}));
    auto alpha_gen = at::detail::createCPUGenerator(mix_seed({seed, 3}));
    auto alpha = torch::empty({x.size(0)}, x.options());
    alpha.uniform_(0.0, 1.0, alpha_gen);
    auto loss_fn = [&](const torch::Tensor& inputs) {
        return torch::cross_entropy_loss(model.forward(inputs), y, {}, at::Reduction::None);
    };
    return lambda * local_linearity_gap(loss_fn, x_a, x_b, alpha);
}

void update_prior_buffer(MethodState& state, const std::vector<int64_t>& indices,
                         const torch::Tensor& delta, double momentum, double epsilon) {
    if (!state.prior_buffer.defined())
        throw std::logic_error("update_prior_buffer: state has no prior buffer");
    const int64_t n = state.prior_buffer.size(0);
    for (int64_t i : indices)
        if (i < 0 || i >= n)
            throw std::out_of_range("update_prior_buffer: index " + std::to_string(i) +
                                    " out of range [0," + std::to_string(n) + ")");
    torch::NoGradGuard guard;
    auto idx = index_tensor(indices);
    auto cur = state.prior_buffer.index_select(0, idx);
    auto next = (momentum * cur + (1.0 - momentum) * delta.detach()).clamp(-epsilon, epsilon);
    state.prior_buffer.index_copy_(0, idx, next);
}

CraftResult MethodRunner::craft(const modelzoo::ModelHandle& model, const Batch& batch,
                                const ThreatModel& threat, MethodState& state,
                                uint64_t step_seed) const {
    const std::string& name = spec_.name;
    const double eps = threat.epsilon;
    const auto& x = batch.x;
    const auto& y = batch.y;
    CraftResult result;

    if (name == "pgd-at" || name == "pgd-at-wa") {
        auto outcome =
            attacks::pgd_attack(model, x, y, threat, static_cast<int>(param("steps")),
                                param("step") * eps, /*random_start=*/true, step_seed);
        result.adversarial_batch = outcome.adversarial_inputs;
        return result;
    }

    if (name == "free-at") {
        const int64_t b = x.size(0);
        if (!state.carried_delta.defined() || state.carried_delta.size(0) < b)
            throw std::logic_error("free-at: carried delta state missing or too small");
        // the training backward produces the gradient for this leaf; the
        // perturbation update happens in after_backward
        auto delta = state.carried_delta.narrow(0, 0, b).detach().clone().set_requires_grad(true);
        result.delta_leaf = delta;
        result.adversarial_batch = (x + delta).clamp(threat.data_min, threat.data_max);
        result.replay_count = replays();
        return result;
    }

    // single-step family: init, one signed step on the CE input gradient
    torch::Tensor delta0;
    bool project_ball = true;
    if (name == "fgsm-at") {
        delta0 = torch::zeros_like(x);
    } else if (name == "fgsm-rs" || name == "zero-grad" || name == "grad-align" ||
               name == "elle") {
        delta0 = uniform_like(x, -eps, eps, mix_seed({step_seed, 0x72730ULL}));
    } else if (name == "n-fgsm") {
        const double k = param("noise_factor");
        delta0 = uniform_like(x, -k * eps, k * eps, mix_seed({step_seed, 0x6e660ULL}));
        project_ball = false;  // the wider start is the point of the method
    } else if (name == "fgsm-pgi") {
        if (!state.prior_buffer.defined())
            throw std::logic_error("fgsm-pgi: prior buffer state missing");
        delta0 = state.prior_buffer.index_select(0, index_tensor(batch.original_indices));
    } else if (name == "nuat") {
        auto sign = uniform_like(x, -1.0, 1.0, mix_seed({step_seed, 0x6e75ULL})).sign();
        delta0 = sign * (eps / 2.0);
    } else {
        throw ConfigError("method '" + name + "' has no craft procedure");
    }

    auto x_start = (x + delta0).clamp(threat.data_min, threat.data_max);
    auto grad = attacks::input_gradient(model, x_start, y, attacks::LossKind::ce);
    if (name == "zero-grad") grad = zero_grad_mask(grad, param("zero_quantile"));

    auto delta = (x_start - x) + param("alpha") * eps * grad.sign();
    if (project_ball) delta = delta.clamp(-eps, eps);
    auto x_adv = (x + delta).clamp(threat.data_min, threat.data_max);
    result.adversarial_batch = x_adv;

    if (name == "fgsm-pgi")
        update_prior_buffer(state, batch.original_indices, x_adv - x, param("prior_momentum"),
                            eps);

    if (name == "grad-align") {
        result.aux_loss_terms.push_back(
            {"grad_align", grad_align_penalty(model, x, y, threat, param("reg_weight"),
                                              mix_seed({step_seed, 0x6761ULL}))});
    } else if (name == "elle") {
        const double scale = (eps / kReferenceEps) * (eps / kReferenceEps);
        result.aux_loss_terms.push_back(
            {"local_linearity",
             local_linearity_penalty(model, x, y, threat, param("reg_weight") * scale,
                                     mix_seed({step_seed, 0x656cULL}))});
    } else if (name == "nuat") {
        auto logits_clean = model.forward(x);
        auto logits_adv = model.forward(x_adv);
        result.aux_loss_terms.push_back(
            {"nuclear", nuclear_consistency_penalty(logits_clean, logits_adv,
                                                    param("reg_weight"))});
    }
    return result;
}

void MethodRunner::after_backward(const CraftResult& result, const Batch& batch,
                                  const ThreatModel& threat, MethodState& state) const {
    if (spec_.name != "free-at") return;
    if (!result.delta_leaf.defined() || !result.delta_leaf.grad().defined())
        throw std::logic_error("free-at: after_backward called without a delta gradient");
    torch::NoGradGuard guard;
    const int64_t b = batch.x.size(0);
    auto updated = (result.delta_leaf.detach() + threat.epsilon * result.delta_leaf.grad().sign())
                       .clamp(-threat.epsilon, threat.epsilon);
    state.carried_delta.narrow(0, 0, b).copy_(updated);
}

std::optional<int> detect_catastrophic_overfitting(
    const std::vector<std::pair<double, double>>& fgsm_pgd10_series, double drop_points,
    int window, double fgsm_tolerance) {
    const int n = static_cast<int>(fgsm_pgd10_series.size());
    for (int e = 1; e < n; ++e) {
        for (int d = 1; d <= window && d <= e; ++d) {
            const auto& [fgsm_now, pgd_now] = fgsm_pgd10_series[e];
            const auto& [fgsm_then, pgd_then] = fgsm_pgd10_series[e - d];
            if (pgd_now < pgd_then - drop_points && fgsm_now >= fgsm_then - fgsm_tolerance)
                return e;
        }
    }
    return std::nullopt;
}

}  // namespace fastat::methods
