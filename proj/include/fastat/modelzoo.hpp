#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <torch/types.h>

#include "fastat/common.hpp"

namespace fastat::modelzoo {

using NamedTensors = std::map<std::string, torch::Tensor>;

// Per-channel input normalization folded into the model's first layer so the
// data pipeline (and the threat model) stay in raw [0,1] pixel space.
struct Normalization {
    std::vector<double> mean = {0.5, 0.5, 0.5};
    std::vector<double> std = {0.25, 0.25, 0.25};
};

Normalization dataset_normalization(const std::string& dataset_name);

struct ClassifierImpl;

class ModelHandle {
  public:
    ModelHandle() = default;

    // Images (B,C,H,W) in [0,1] -> logits (B,num_classes). Differentiable in
    // both inputs and parameters; every call is counted.
    torch::Tensor forward(const torch::Tensor& images) const;

    std::vector<torch::Tensor> parameters() const;
    NamedTensors named_parameters() const;
    // Parameters plus buffers (batch-norm running stats etc.).
    NamedTensors named_state() const;

    void set_train(bool on) const;
    bool is_training() const;
    int in_channels() const;
    int64_t parameter_count() const;
    int64_t forward_calls() const;
    void reset_forward_calls() const;
    void to_double() const;  // float64 weights, for finite-difference checks
    bool valid() const { return impl_ != nullptr; }

    std::string arch;
    int num_classes = 0;
    double width_multiplier = 1.0;

  private:
    std::shared_ptr<ClassifierImpl> impl_;
    friend ModelHandle build_model(const std::string&, int, double, uint64_t,
                                   const Normalization&, int);
    friend ModelHandle custom_model(std::function<torch::Tensor(const torch::Tensor&)>, int,
                                    const std::string&);
    friend void load_state(const ModelHandle&, const NamedTensors&);
};

// Wraps an arbitrary logits function behind the ModelHandle interface with
// identity input normalization. Closed-form oracle and stub models (constant
// logits, linear/logistic toys) go through here.
ModelHandle custom_model(std::function<torch::Tensor(const torch::Tensor&)> forward,
                         int in_channels = 3, const std::string& arch = "custom");

// arch in {resnet18, preactresnet18, tiny-cnn}; initialization is a pure
// function of the seed. Throws ConfigError on unknown arch.
ModelHandle build_model(const std::string& arch, int num_classes, double width_multiplier,
                        uint64_t seed, const Normalization& norm = {}, int in_channels = 3);

// Detached deep copies of parameters and buffers; mutating the copies never
// affects the model.
NamedTensors clone_parameters(const ModelHandle& model);

// Copies values from `state` into the model's tensors (shape-checked).
void load_state(const ModelHandle& model, const NamedTensors& state);

struct Checkpoint {
    std::string arch;
    int num_classes = 0;
    double width_multiplier = 1.0;
    int in_channels = 3;
    std::string config_hash;
    int epoch = -1;
    NamedTensors tensors;
};

// Named-tensor archive: JSON header plus raw little-endian payload.
void save_checkpoint(const std::string& path, const ModelHandle& model,
                     const NamedTensors& state, const std::string& config_hash, int epoch);
Checkpoint load_checkpoint(const std::string& path);
ModelHandle model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace fastat::modelzoo
