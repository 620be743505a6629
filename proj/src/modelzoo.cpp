#include "fastat/modelzoo.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>
#include <torch/torch.h>

namespace fastat::modelzoo {

namespace {

int scaled(int base, double width) {
    return std::max(1, static_cast<int>(std::lround(base * width)));
}

torch::nn::Conv2d conv3x3(int in, int out, int stride = 1) {
    return torch::nn::Conv2d(
        torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1).bias(false));
}

}  // namespace

// Shared base: input normalization buffers plus a forward-call counter.
struct ClassifierImpl : torch::nn::Module {
    torch::Tensor norm_mean, norm_std;
    int64_t forward_count = 0;

    ClassifierImpl(const Normalization& norm, int channels) {
        auto m = torch::zeros({1, channels, 1, 1});
        auto s = torch::ones({1, channels, 1, 1});
        for (int c = 0; c < channels; ++c) {
            m[0][c][0][0] = norm.mean[std::min<size_t>(c, norm.mean.size() - 1)];
            s[0][c][0][0] = norm.std[std::min<size_t>(c, norm.std.size() - 1)];
        }
        norm_mean = register_buffer("input_mean", m);
        norm_std = register_buffer("input_std", s);
    }

    torch::Tensor normalize(const torch::Tensor& x) { return (x - norm_mean) / norm_std; }
    virtual torch::Tensor logits(const torch::Tensor& x) = 0;
    ~ClassifierImpl() override = default;

    int in_channels() const { return static_cast<int>(norm_mean.size(1)); }
};

namespace {

// Desk-scale model: 4 conv layers and a linear head. Exists so the whole
// pipeline can be exercised in minutes on a CPU.
struct TinyCnn : ClassifierImpl {
    torch::nn::Conv2d c1{nullptr}, c2{nullptr}, c3{nullptr}, c4{nullptr};
    torch::nn::BatchNorm2d b1{nullptr}, b2{nullptr}, b3{nullptr}, b4{nullptr};
    torch::nn::Linear head{nullptr};

    TinyCnn(int num_classes, double width, const Normalization& norm, int in_channels)
        : ClassifierImpl(norm, in_channels) {
        const int c = scaled(32, width);
        c1 = register_module("conv1", conv3x3(in_channels, c));
        b1 = register_module("bn1", torch::nn::BatchNorm2d(c));
        c2 = register_module("conv2", conv3x3(c, 2 * c, 2));
        b2 = register_module("bn2", torch::nn::BatchNorm2d(2 * c));
        c3 = register_module("conv3", conv3x3(2 * c, 4 * c, 2));
        b3 = register_module("bn3", torch::nn::BatchNorm2d(4 * c));
        c4 = register_module("conv4", conv3x3(4 * c, 4 * c, 2));
        b4 = register_module("bn4", torch::nn::BatchNorm2d(4 * c));
        head = register_module("head", torch::nn::Linear(4 * c, num_classes));
    }

    torch::Tensor logits(const torch::Tensor& in) override {
        auto x = torch::relu(b1(c1(in)));
        x = torch::relu(b2(c2(x)));
        x = torch::relu(b3(c3(x)));
        x = torch::relu(b4(c4(x)));
        x = torch::adaptive_avg_pool2d(x, {1, 1}).flatten(1);
        return head(x);
    }
};

struct BasicBlock : torch::nn::Module {
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
    torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr};
    torch::nn::Sequential shortcut{nullptr};

    BasicBlock(int in, int out, int stride) {
        conv1 = register_module("conv1", conv3x3(in, out, stride));
        bn1 = register_module("bn1", torch::nn::BatchNorm2d(out));
        conv2 = register_module("conv2", conv3x3(out, out));
        bn2 = register_module("bn2", torch::nn::BatchNorm2d(out));
        if (stride != 1 || in != out) {
            shortcut = torch::nn::Sequential(
                torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1).stride(stride).bias(false)),
                torch::nn::BatchNorm2d(out));
            register_module("shortcut", shortcut);
        }
    }

    torch::Tensor forward(const torch::Tensor& in) {
        auto x = torch::relu(bn1(conv1(in)));
        x = bn2(conv2(x));
        x = x + (shortcut.is_empty() ? in : shortcut->forward(in));
        return torch::relu(x);
    }
};

// CIFAR-style ResNet-18: 3x3 stem, four stages of two basic blocks.
struct ResNet18 : ClassifierImpl {
    torch::nn::Conv2d stem{nullptr};
    torch::nn::BatchNorm2d stem_bn{nullptr};
    torch::nn::ModuleList blocks;
    torch::nn::Linear head{nullptr};

    ResNet18(int num_classes, double width, const Normalization& norm, int in_channels)
        : ClassifierImpl(norm, in_channels) {
        const int widths[4] = {scaled(64, width), scaled(128, width), scaled(256, width),
                               scaled(512, width)};
        stem = register_module("stem", conv3x3(in_channels, widths[0]));
        stem_bn = register_module("stem_bn", torch::nn::BatchNorm2d(widths[0]));
        blocks = register_module("blocks", torch::nn::ModuleList());
        int in = widths[0];
        for (int stage = 0; stage < 4; ++stage) {
            for (int b = 0; b < 2; ++b) {
                int stride = (b == 0 && stage > 0) ? 2 : 1;
                blocks->push_back(std::make_shared<BasicBlock>(in, widths[stage], stride));
                in = widths[stage];
            }
        }
        head = register_module("head", torch::nn::Linear(in, num_classes));
    }

    torch::Tensor logits(const torch::Tensor& in) override {
        auto x = torch::relu(stem_bn(stem(in)));
        for (auto& block : *blocks) x = block->as<BasicBlock>()->forward(x);
        x = torch::adaptive_avg_pool2d(x, {1, 1}).flatten(1);
        return head(x);
    }
};

struct PreActBlock : torch::nn::Module {
    torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr};
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
    torch::nn::Conv2d shortcut{nullptr};

    PreActBlock(int in, int out, int stride) {
        bn1 = register_module("bn1", torch::nn::BatchNorm2d(in));
        conv1 = register_module("conv1", conv3x3(in, out, stride));
        bn2 = register_module("bn2", torch::nn::BatchNorm2d(out));
        conv2 = register_module("conv2", conv3x3(out, out));
        if (stride != 1 || in != out) {
            shortcut = register_module(
                "shortcut",
                torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1).stride(stride).bias(false)));
        }
    }

    torch::Tensor forward(const torch::Tensor& in) {
        auto pre = torch::relu(bn1(in));
        auto x = conv1(pre);
        x = conv2(torch::relu(bn2(x)));
        return x + (shortcut ? shortcut(pre) : in);
    }
};

struct PreActResNet18 : ClassifierImpl {
    torch::nn::Conv2d stem{nullptr};
    torch::nn::ModuleList blocks;
    torch::nn::BatchNorm2d final_bn{nullptr};
    torch::nn::Linear head{nullptr};

    PreActResNet18(int num_classes, double width, const Normalization& norm, int in_channels)
        : ClassifierImpl(norm, in_channels) {
        const int widths[4] = {scaled(64, width), scaled(128, width), scaled(256, width),
                               scaled(512, width)};
        stem = register_module("stem", conv3x3(in_channels, widths[0]));
        blocks = register_module("blocks", torch::nn::ModuleList());
        int in = widths[0];
        for (int stage = 0; stage < 4; ++stage) {
            for (int b = 0; b < 2; ++b) {
                int stride = (b == 0 && stage > 0) ? 2 : 1;
                blocks->push_back(std::make_shared<PreActBlock>(in, widths[stage], stride));
                in = widths[stage];
            }
        }
        final_bn = register_module("final_bn", torch::nn::BatchNorm2d(in));
        head = register_module("head", torch::nn::Linear(in, num_classes));
    }

    torch::Tensor logits(const torch::Tensor& in) override {
        auto x = stem(in);
        for (auto& block : *blocks) x = block->as<PreActBlock>()->forward(x);
        x = torch::relu(final_bn(x));
        x = torch::adaptive_avg_pool2d(x, {1, 1}).flatten(1);
        return head(x);
    }
};

struct CustomModel : ClassifierImpl {
    std::function<torch::Tensor(const torch::Tensor&)> fn;

    // scalar identity normalization so stubs accept any channel count
    explicit CustomModel(std::function<torch::Tensor(const torch::Tensor&)> forward)
        : ClassifierImpl(Normalization{{0.0}, {1.0}}, 1), fn(std::move(forward)) {}

    torch::Tensor logits(const torch::Tensor& in) override { return fn(in); }
};

}  // namespace

ModelHandle custom_model(std::function<torch::Tensor(const torch::Tensor&)> forward,
                         int in_channels, const std::string& arch) {
    (void)in_channels;
    ModelHandle handle;
    handle.arch = arch;
    handle.impl_ = std::make_shared<CustomModel>(std::move(forward));
    return handle;
}

Normalization dataset_normalization(const std::string& dataset_name) {
    if (dataset_name == "cifar10")
        return {{0.4914, 0.4822, 0.4465}, {0.2471, 0.2435, 0.2616}};
    if (dataset_name == "cifar100")
        return {{0.5071, 0.4865, 0.4409}, {0.2673, 0.2564, 0.2762}};
    if (dataset_name == "tiny-imagenet")
        return {{0.4802, 0.4481, 0.3975}, {0.2770, 0.2691, 0.2821}};
    return {{0.5, 0.5, 0.5}, {0.25, 0.25, 0.25}};  // synthetic fixture
}

torch::Tensor ModelHandle::forward(const torch::Tensor& images) const {
    if (!impl_) throw std::logic_error("forward on an empty ModelHandle");
    ++impl_->forward_count;
    return impl_->logits(impl_->normalize(images));
}

std::vector<torch::Tensor> ModelHandle::parameters() const { return impl_->parameters(); }

NamedTensors ModelHandle::named_parameters() const {
    NamedTensors out;
    for (const auto& p : impl_->named_parameters()) out[p.key()] = p.value();
    return out;
}

NamedTensors ModelHandle::named_state() const {
    NamedTensors out = named_parameters();
    for (const auto& b : impl_->named_buffers()) out[b.key()] = b.value();
    return out;
}

void ModelHandle::set_train(bool on) const { impl_->train(on); }
bool ModelHandle::is_training() const { return impl_->is_training(); }
int ModelHandle::in_channels() const { return impl_->in_channels(); }

int64_t ModelHandle::parameter_count() const {
    int64_t n = 0;
    for (const auto& p : impl_->parameters()) n += p.numel();
    return n;
}

int64_t ModelHandle::forward_calls() const { return impl_->forward_count; }
void ModelHandle::reset_forward_calls() const { impl_->forward_count = 0; }
void ModelHandle::to_double() const { impl_->to(torch::kFloat64); }

ModelHandle build_model(const std::string& arch, int num_classes, double width_multiplier,
                        uint64_t seed, const Normalization& norm, int in_channels) {
    if (num_classes < 1) throw ConfigError("build_model: num_classes must be >= 1");
    if (!(width_multiplier > 0)) throw ConfigError("build_model: width_multiplier must be > 0");
    torch::manual_seed(seed);
    ModelHandle handle;
    handle.arch = arch;
    handle.num_classes = num_classes;
    handle.width_multiplier = width_multiplier;
    if (arch == "tiny-cnn")
        handle.impl_ = std::make_shared<TinyCnn>(num_classes, width_multiplier, norm, in_channels);
    else if (arch == "resnet18")
        handle.impl_ = std::make_shared<ResNet18>(num_classes, width_multiplier, norm, in_channels);
    else if (arch == "preactresnet18")
        handle.impl_ =
            std::make_shared<PreActResNet18>(num_classes, width_multiplier, norm, in_channels);
    else
        throw ConfigError("build_model: unknown arch '" + arch + "'");
    return handle;
}

NamedTensors clone_parameters(const ModelHandle& model) {
    NamedTensors out;
    torch::NoGradGuard guard;
    for (const auto& [name, t] : model.named_state()) out[name] = t.detach().clone();
    return out;
}

void load_state(const ModelHandle& model, const NamedTensors& state) {
    torch::NoGradGuard guard;
    auto live = model.named_state();
    for (const auto& [name, src] : state) {
        auto it = live.find(name);
        if (it == live.end()) throw std::invalid_argument("load_state: unknown tensor " + name);
        if (it->second.sizes() != src.sizes())
            throw std::invalid_argument("load_state: shape mismatch for " + name);
        it->second.copy_(src);
    }
}

namespace {

const char kMagic[9] = "FATCKPT1";

std::string dtype_tag(torch::ScalarType t) {
    switch (t) {
        case torch::kFloat32: return "f32";
        case torch::kFloat64: return "f64";
        case torch::kInt64: return "i64";
        case torch::kUInt8: return "u8";
        default: throw std::invalid_argument("checkpoint: unsupported dtype");
    }
}

torch::ScalarType dtype_from_tag(const std::string& tag) {
    if (tag == "f32") return torch::kFloat32;
    if (tag == "f64") return torch::kFloat64;
    if (tag == "i64") return torch::kInt64;
    if (tag == "u8") return torch::kUInt8;
    throw std::invalid_argument("checkpoint: unknown dtype tag " + tag);
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelHandle& model,
                     const NamedTensors& state, const std::string& config_hash, int epoch) {
    nlohmann::json header;
    header["arch"] = model.arch;
    header["num_classes"] = model.num_classes;
    header["width_multiplier"] = model.width_multiplier;
    header["in_channels"] = model.valid() ? model.in_channels() : 3;
    header["config_hash"] = config_hash;
    header["epoch"] = epoch;
    auto tensors = nlohmann::json::array();
    for (const auto& [name, t] : state) {
        nlohmann::json entry;
        entry["name"] = name;
        entry["dtype"] = dtype_tag(t.scalar_type());
        entry["shape"] = std::vector<int64_t>(t.sizes().begin(), t.sizes().end());
        tensors.push_back(entry);
    }
    header["tensors"] = tensors;

    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    std::string head = header.dump();
    uint64_t head_len = head.size();
    out.write(kMagic, 8);
    out.write(reinterpret_cast<const char*>(&head_len), 8);
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    for (const auto& [name, t] : state) {
        auto c = t.detach().contiguous();
        out.write(static_cast<const char*>(c.data_ptr()),
                  static_cast<std::streamsize>(c.numel() * c.element_size()));
    }
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    uint64_t head_len = 0;
    in.read(magic, 8);
    in.read(reinterpret_cast<char*>(&head_len), 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    std::string head(head_len, '\0');
    in.read(head.data(), static_cast<std::streamsize>(head_len));
    auto header = nlohmann::json::parse(head);

    Checkpoint ckpt;
    ckpt.arch = header.at("arch").get<std::string>();
    ckpt.num_classes = header.at("num_classes").get<int>();
    ckpt.width_multiplier = header.at("width_multiplier").get<double>();
    ckpt.in_channels = header.value("in_channels", 3);
    ckpt.config_hash = header.at("config_hash").get<std::string>();
    ckpt.epoch = header.at("epoch").get<int>();
    for (const auto& entry : header.at("tensors")) {
        auto shape = entry.at("shape").get<std::vector<int64_t>>();
        auto t = torch::empty(shape, dtype_from_tag(entry.at("dtype").get<std::string>()));
        in.read(static_cast<char*>(t.data_ptr()),
                static_cast<std::streamsize>(t.numel() * t.element_size()));
        if (!in) throw std::runtime_error("truncated checkpoint: " + path);
        ckpt.tensors[entry.at("name").get<std::string>()] = t;
    }
    return ckpt;
}

ModelHandle model_from_checkpoint(const Checkpoint& ckpt) {
    auto model = build_model(ckpt.arch, ckpt.num_classes, ckpt.width_multiplier, 0, {},
                             ckpt.in_channels);
    load_state(model, ckpt.tensors);
    return model;
}

}  // namespace fastat::modelzoo
