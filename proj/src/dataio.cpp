#include "fastat/dataio.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <torch/torch.h>

namespace fs = std::filesystem;

namespace fastat::dataio {

namespace {

// Dataset-generation and split permutations must not depend on the run seed:
// every method and every seed trains against the same partition.
constexpr uint64_t kSplitStream = 0;
constexpr uint64_t kSyntheticSeed = 1234;

std::vector<int64_t> fisher_yates(int64_t n, uint64_t stream_seed) {
    std::vector<int64_t> perm(n);
    for (int64_t i = 0; i < n; ++i) perm[i] = i;
    uint64_t state = stream_seed;
    for (int64_t i = n - 1; i > 0; --i) {
        int64_t j = static_cast<int64_t>(splitmix64(state) % static_cast<uint64_t>(i + 1));
        std::swap(perm[i], perm[j]);
    }
    return perm;
}

torch::Tensor take(const torch::Tensor& t, const std::vector<int64_t>& rows) {
    auto idx = torch::tensor(rows, torch::kInt64);
    return t.index_select(0, idx).contiguous();
}

std::vector<char> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open dataset file: " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    return bytes;
}

// CIFAR binary record layout: [labels...][3072 bytes of CHW uint8 pixels].
void parse_cifar_records(const std::vector<char>& bytes, int label_bytes, int label_offset,
                         std::vector<torch::Tensor>& images, std::vector<int64_t>& labels,
                         const std::string& origin) {
    const size_t record = static_cast<size_t>(label_bytes) + 3072;
    if (bytes.empty() || bytes.size() % record != 0)
        throw DataError("corrupt CIFAR file (size " + std::to_string(bytes.size()) +
                        " not a multiple of " + std::to_string(record) + "): " + origin);
    const size_t n = bytes.size() / record;
    for (size_t i = 0; i < n; ++i) {
        const char* rec = bytes.data() + i * record;
        labels.push_back(static_cast<unsigned char>(rec[label_offset]));
        auto img = torch::empty({3, 32, 32}, torch::kUInt8);
        std::memcpy(img.data_ptr<uint8_t>(), rec + label_bytes, 3072);
        images.push_back(img);
    }
}

fs::path locate(const std::string& root, std::initializer_list<const char*> candidates) {
    for (const char* c : candidates) {
        fs::path p = fs::path(root) / c;
        if (fs::exists(p)) return p;
    }
    return fs::path(root) / *candidates.begin();
}

std::pair<DatasetPart, DatasetPart> load_cifar10(const std::string& root) {
    fs::path dir = locate(root, {"cifar-10-batches-bin", "."});
    std::vector<torch::Tensor> train_imgs, test_imgs;
    std::vector<int64_t> train_labels, test_labels;
    for (int b = 1; b <= 5; ++b) {
        fs::path f = dir / ("data_batch_" + std::to_string(b) + ".bin");
        if (!fs::exists(f)) throw DataError("missing CIFAR-10 file: " + f.string());
        parse_cifar_records(read_file(f), 1, 0, train_imgs, train_labels, f.string());
    }
    fs::path tf = dir / "test_batch.bin";
    if (!fs::exists(tf)) throw DataError("missing CIFAR-10 file: " + tf.string());
    parse_cifar_records(read_file(tf), 1, 0, test_imgs, test_labels, tf.string());
    DatasetPart train{torch::stack(train_imgs), torch::tensor(train_labels, torch::kInt64), {}};
    DatasetPart test{torch::stack(test_imgs), torch::tensor(test_labels, torch::kInt64), {}};
    return {train, test};
}

std::pair<DatasetPart, DatasetPart> load_cifar100(const std::string& root) {
    fs::path dir = locate(root, {"cifar-100-binary", "."});
    std::vector<torch::Tensor> train_imgs, test_imgs;
    std::vector<int64_t> train_labels, test_labels;
    fs::path trf = dir / "train.bin", tef = dir / "test.bin";
    if (!fs::exists(trf) || !fs::exists(tef))
        throw DataError("missing CIFAR-100 files under " + dir.string());
    // record: coarse label, fine label, pixels; we train on fine labels
    parse_cifar_records(read_file(trf), 2, 1, train_imgs, train_labels, trf.string());
    parse_cifar_records(read_file(tef), 2, 1, test_imgs, test_labels, tef.string());
    DatasetPart train{torch::stack(train_imgs), torch::tensor(train_labels, torch::kInt64), {}};
    DatasetPart test{torch::stack(test_imgs), torch::tensor(test_labels, torch::kInt64), {}};
    return {train, test};
}

torch::Tensor decode_image_chw(const fs::path& path) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw DataError("cannot decode image: " + path.string());
    if (!bgr.isContinuous()) bgr = bgr.clone();
    auto img = torch::empty({bgr.rows, bgr.cols, 3}, torch::kUInt8);
    std::memcpy(img.data_ptr<uint8_t>(), bgr.data, static_cast<size_t>(bgr.total()) * 3);
    // HWC BGR -> CHW RGB
    return img.permute({2, 0, 1}).flip({0}).contiguous();
}

std::pair<DatasetPart, DatasetPart> load_tiny_imagenet(const std::string& root) {
    fs::path dir = locate(root, {"tiny-imagenet-200", "."});
    fs::path train_dir = dir / "train";
    fs::path val_dir = dir / "val";
    if (!fs::exists(train_dir) || !fs::exists(val_dir))
        throw DataError("missing Tiny-ImageNet tree under " + dir.string());

    std::vector<std::string> wnids;
    for (const auto& entry : fs::directory_iterator(train_dir))
        if (entry.is_directory()) wnids.push_back(entry.path().filename().string());
    std::sort(wnids.begin(), wnids.end());
    if (wnids.empty()) throw DataError("Tiny-ImageNet train/ has no class directories");
    std::map<std::string, int64_t> class_of;
    for (size_t i = 0; i < wnids.size(); ++i) class_of[wnids[i]] = static_cast<int64_t>(i);

    std::vector<torch::Tensor> train_imgs, test_imgs;
    std::vector<int64_t> train_labels, test_labels;
    for (const auto& wnid : wnids) {
        fs::path images = train_dir / wnid / "images";
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(images)) files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            train_imgs.push_back(decode_image_chw(f));
            train_labels.push_back(class_of[wnid]);
        }
    }

    // the labelled val/ set serves as the held-out test set
    std::ifstream ann(val_dir / "val_annotations.txt");
    if (!ann) throw DataError("missing val_annotations.txt under " + val_dir.string());
    std::vector<std::pair<std::string, std::string>> entries;
    std::string line;
    while (std::getline(ann, line)) {
        auto tab1 = line.find('\t');
        if (tab1 == std::string::npos) continue;
        auto tab2 = line.find('\t', tab1 + 1);
        entries.emplace_back(line.substr(0, tab1),
                             line.substr(tab1 + 1, tab2 - tab1 - 1));
    }
    std::sort(entries.begin(), entries.end());
    for (const auto& [name, wnid] : entries) {
        if (!class_of.count(wnid)) throw DataError("val annotation names unknown wnid " + wnid);
        test_imgs.push_back(decode_image_chw(val_dir / "images" / name));
        test_labels.push_back(class_of[wnid]);
    }

    DatasetPart train{torch::stack(train_imgs), torch::tensor(train_labels, torch::kInt64), {}};
    DatasetPart test{torch::stack(test_imgs), torch::tensor(test_labels, torch::kInt64), {}};
    return {train, test};
}

SplitDataset split_off_validation(DatasetPart full_train, DatasetPart test, int num_classes,
                                  int val_size) {
    const int64_t n = full_train.size();
    if (val_size < 0 || val_size >= n)
        throw DataError("val_size " + std::to_string(val_size) +
                        " out of range for training set of " + std::to_string(n));
    auto perm = fisher_yates(n, kSplitStream);
    std::vector<int64_t> train_rows(perm.begin(), perm.end() - val_size);
    std::vector<int64_t> val_rows(perm.end() - val_size, perm.end());

    SplitDataset ds;
    ds.train = {take(full_train.x, train_rows), take(full_train.y, train_rows), train_rows};
    if (val_size > 0)
        ds.val = {take(full_train.x, val_rows), take(full_train.y, val_rows), val_rows};
    ds.test = std::move(test);
    ds.num_classes = num_classes;
    ds.image_shape = {full_train.x.size(1), full_train.x.size(2), full_train.x.size(3)};
    ds.original_train_size = n;
    return ds;
}

}  // namespace

torch::Tensor materialize_images(const DatasetPart& part, const std::vector<int64_t>& positions) {
    auto x = take(part.x, positions);
    if (x.scalar_type() == torch::kUInt8) return x.to(torch::kFloat32).div_(255.0);
    return x.to(torch::kFloat32);
}

torch::Tensor materialize_labels(const DatasetPart& part, const std::vector<int64_t>& positions) {
    return take(part.y, positions);
}

SplitDataset make_synthetic(int64_t n, int classes, std::array<int64_t, 3> shape, uint64_t seed,
                            double sigma, int64_t n_test) {
    if (n < classes) throw DataError("make_synthetic requires n >= classes");
    if (classes > 27) throw DataError("synthetic fixture supports at most 27 classes");
    auto gen = at::detail::createCPUGenerator(seed);
    const int64_t dim = shape[0] * shape[1] * shape[2];

    // Class means are flat per-channel colors from a 3-level grid, so the
    // class signal survives the standardized crop/flip augmentation. The
    // c*7 mod 27 enumeration spreads early classes across the grid.
    auto means = torch::empty({classes, dim});
    static const double levels[3] = {0.35, 0.5, 0.65};
    for (int c = 0; c < classes; ++c) {
        int idx = (c * 7 + 3) % 27;
        auto mean_image = means[c].view({shape[0], shape[1] * shape[2]});
        for (int64_t ch = 0; ch < shape[0]; ++ch) {
            mean_image[ch].fill_(levels[idx % 3]);
            idx /= 3;
        }
    }

    auto draw = [&](int64_t count) {
        auto labels = torch::arange(count, torch::kInt64).remainder(classes);
        auto noise = torch::randn({count, dim}, gen);
        auto x = (means.index_select(0, labels) + sigma * noise).clamp_(0.0, 1.0);
        return std::pair{x.view({count, shape[0], shape[1], shape[2]}).contiguous(), labels};
    };

    SplitDataset ds;
    auto [tx, ty] = draw(n);
    std::vector<int64_t> ids(n);
    for (int64_t i = 0; i < n; ++i) ids[i] = i;
    ds.train = {tx, ty, ids};
    if (n_test > 0) {
        auto [ex, ey] = draw(n_test);
        ds.test = {ex, ey, {}};
    }
    ds.num_classes = classes;
    ds.image_shape = shape;
    ds.original_train_size = n;
    return ds;
}

SplitDataset load_split(const std::string& dataset_name, const std::string& root, int val_size,
                        uint64_t seed) {
    (void)seed;  // the partition is seed-invariant by design; see split_off_validation
    if (dataset_name == "synthetic") {
        auto base = make_synthetic(1024, 10, {3, 32, 32}, kSyntheticSeed, 0.12, 256);
        return split_off_validation(std::move(base.train), std::move(base.test),
                                    base.num_classes, val_size);
    }
    std::pair<DatasetPart, DatasetPart> parts;
    int num_classes = 0;
    if (dataset_name == "cifar10") {
        parts = load_cifar10(root);
        num_classes = 10;
    } else if (dataset_name == "cifar100") {
        parts = load_cifar100(root);
        num_classes = 100;
    } else if (dataset_name == "tiny-imagenet") {
        parts = load_tiny_imagenet(root);
        num_classes = 200;
    } else {
        throw DataError("unknown dataset: " + dataset_name);
    }
    return split_off_validation(std::move(parts.first), std::move(parts.second), num_classes,
                                val_size);
}

void apply_train_subset(SplitDataset& ds, int64_t k) {
    if (k <= 0 || k >= ds.train.size()) return;
    std::vector<int64_t> rows(k);
    for (int64_t i = 0; i < k; ++i) rows[i] = i;
    ds.train.x = take(ds.train.x, rows);
    ds.train.y = take(ds.train.y, rows);
    ds.train.indices.resize(k);
}

BatchPlan BatchPlan::make(uint64_t seed, int64_t epoch, int64_t n_train, int batch_size) {
    BatchPlan plan;
    plan.seed = seed;
    plan.epoch = epoch;
    plan.batch_size = batch_size;
    plan.order = fisher_yates(n_train, mix_seed({seed, 0x6261746368ULL, static_cast<uint64_t>(epoch)}));
    return plan;
}

int64_t BatchPlan::num_batches() const {
    if (batch_size <= 0) return 0;
    return (static_cast<int64_t>(order.size()) + batch_size - 1) / batch_size;
}

std::vector<int64_t> BatchPlan::batch_positions(int64_t batch_idx) const {
    const int64_t begin = batch_idx * batch_size;
    const int64_t end = std::min<int64_t>(begin + batch_size, order.size());
    if (begin < 0 || begin >= static_cast<int64_t>(order.size()))
        throw DataError("batch index out of range");
    return {order.begin() + begin, order.begin() + end};
}

AugmentRng AugmentRng::for_example(uint64_t seed, int64_t epoch, int64_t original_index) {
    return {mix_seed({seed, 0x617567ULL, static_cast<uint64_t>(epoch),
                      static_cast<uint64_t>(original_index)})};
}

uint64_t AugmentRng::next() { return splitmix64(state); }

int64_t AugmentRng::uniform_int(int64_t n) {
    return n <= 1 ? 0 : static_cast<int64_t>(next() % static_cast<uint64_t>(n));
}

torch::Tensor augment(const torch::Tensor& chw, AugmentRng& rng, bool enabled) {
    if (!enabled) return chw.clone();
    if (chw.dim() != 3 || chw.size(1) != chw.size(2))
        throw DataError("augment expects square (C,H,W) input");
    const int64_t size = chw.size(1);
    constexpr int64_t pad = 4;
    auto padded = torch::constant_pad_nd(chw, {pad, pad, pad, pad}, 0.0);
    const int64_t dy = rng.uniform_int(2 * pad + 1);
    const int64_t dx = rng.uniform_int(2 * pad + 1);
    const bool flip = (rng.next() & 1) != 0;
    auto out = padded.narrow(1, dy, size).narrow(2, dx, size);
    if (flip) out = out.flip({2});
    return out.contiguous();
}

torch::Tensor augment_batch(const torch::Tensor& bchw, uint64_t seed, int64_t epoch,
                            const std::vector<int64_t>& original_indices, bool enabled) {
    if (bchw.size(0) != static_cast<int64_t>(original_indices.size()))
        throw DataError("augment_batch: index count does not match batch");
    if (!enabled) return bchw.clone();
    std::vector<torch::Tensor> out;
    out.reserve(original_indices.size());
    for (int64_t i = 0; i < bchw.size(0); ++i) {
        auto rng = AugmentRng::for_example(seed, epoch, original_indices[i]);
        out.push_back(augment(bchw[i], rng, true));
    }
    return torch::stack(out);
}

}  // namespace fastat::dataio
