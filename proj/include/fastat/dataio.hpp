#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <torch/types.h>

#include "fastat/common.hpp"

namespace fastat::dataio {

// One split of a dataset. `x` is (N,C,H,W), either uint8 in [0,255] or
// float32 in [0,1]; `y` is int64 (N). `indices` maps position -> absolute
// index in the original training set (used by per-example method state),
// and is empty for test parts.
struct DatasetPart {
    torch::Tensor x;
    torch::Tensor y;
    std::vector<int64_t> indices;

    int64_t size() const { return x.defined() ? x.size(0) : 0; }
};

struct SplitDataset {
    DatasetPart train;
    DatasetPart val;
    DatasetPart test;
    int num_classes = 0;
    std::array<int64_t, 3> image_shape = {0, 0, 0};  // (C,H,W)
    int64_t original_train_size = 0;
};

// Gathers positions from a part and returns float images scaled to [0,1].
torch::Tensor materialize_images(const DatasetPart& part, const std::vector<int64_t>& positions);
torch::Tensor materialize_labels(const DatasetPart& part, const std::vector<int64_t>& positions);

// Loads one of {cifar10, cifar100, tiny-imagenet, synthetic} from its
// standard on-disk format under `root` and applies the validation split.
// The validation examples are the last `val_size` entries of a fixed
// seed-0 permutation of the training set, so every method and every run
// seed shares the same split. Throws DataError on missing/corrupt files.
SplitDataset load_split(const std::string& dataset_name, const std::string& root,
                        int val_size, uint64_t seed);

// Gaussian-blob fixture with well-separated class means; deterministic per
// seed. Train gets n items (labels round-robin balanced), test gets n_test.
SplitDataset make_synthetic(int64_t n, int classes, std::array<int64_t, 3> shape,
                            uint64_t seed, double sigma = 0.1, int64_t n_test = 0);

// Keeps only the first `k` entries of the (already split) training part,
// following the same fixed permutation as the val split. k=0 keeps all.
void apply_train_subset(SplitDataset& ds, int64_t k);

// Epoch batch order: a pure function of (seed, epoch). Uses an in-repo
// Fisher-Yates so the order is identical across platforms.
struct BatchPlan {
    uint64_t seed = 0;
    int64_t epoch = 0;
    std::vector<int64_t> order;  // positions into the train part
    int batch_size = 0;

    static BatchPlan make(uint64_t seed, int64_t epoch, int64_t n_train, int batch_size);
    int64_t num_batches() const;
    std::vector<int64_t> batch_positions(int64_t batch_idx) const;
};

// Per-example augmentation stream, a pure function of (seed, epoch, index).
struct AugmentRng {
    uint64_t state = 0;
    static AugmentRng for_example(uint64_t seed, int64_t epoch, int64_t original_index);
    uint64_t next();                 // raw 64-bit draw
    int64_t uniform_int(int64_t n);  // [0, n)
};

// 4-pixel zero padding, random crop back to the original size, horizontal
// flip with probability 1/2. Identity when disabled.
torch::Tensor augment(const torch::Tensor& chw, AugmentRng& rng, bool enabled = true);

// Batched convenience wrapper; randomness derives from each example's
// original index so pipelining cannot change results.
torch::Tensor augment_batch(const torch::Tensor& bchw, uint64_t seed, int64_t epoch,
                            const std::vector<int64_t>& original_indices, bool enabled = true);

}  // namespace fastat::dataio
