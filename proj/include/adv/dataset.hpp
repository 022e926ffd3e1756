#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adv/network.hpp"
#include "adv/tensor.hpp"

namespace adv {

struct DataSplit {
  Tensor<float> images;  // [N,H,W,C], values in [0,1]
  std::vector<int> labels;
  std::vector<std::int64_t> ids;  // stable per-sample ids (file index for IDX data)

  Index size() const { return images.shape.empty() ? 0 : images.shape[0]; }
};

struct Dataset {
  DataSplit train, test;
  int class_count = 0;
  std::string provenance;  // mnist | fmnist | synthetic

  Shape input_shape() const {
    return Shape(train.images.shape.begin() + 1, train.images.shape.end());
  }
};

// Parse one IDX image/label file pair (big-endian, magic-checked) and
// normalize pixel bytes to [0,1].
DataSplit load_idx(const std::string& images_path, const std::string& labels_path);

Dataset load_idx_dataset(const std::string& train_images, const std::string& train_labels,
                         const std::string& test_images, const std::string& test_labels,
                         const std::string& provenance);

// Gaussian blobs around seeded class centers inside [0,1]^dim; images have
// shape [1, dim, 1]. Fast substrate for property tests.
Dataset synth_blobs(int k, int per_class, int dim, float spread, std::uint64_t seed);

// Deterministic 28x28 stroke-rendered digits with affine jitter; an offline
// stand-in with MNIST-like shape and difficulty for the desk-scale runs.
Dataset synth_digits(Index train_count, Index test_count, std::uint64_t seed);

// IDX writers (big-endian headers, ubyte payload). Pixels are rounded to the
// nearest byte on the way out.
void write_idx_images(const std::string& path, const Tensor<float>& images);
void write_idx_labels(const std::string& path, const std::vector<int>& labels);

// First-n deterministic subsets (shared eval convention for the sweeps).
DataSplit take(const DataSplit& split, Index n);
Dataset take(const Dataset& data, Index train_n, Index test_n);

// Assemble a batch from split rows [begin, end) of `order`.
Batch<float> gather_batch(const DataSplit& split, const std::vector<std::int64_t>& order, Index begin,
                          Index end);

}  // namespace adv
