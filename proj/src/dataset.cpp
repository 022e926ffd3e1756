#include "adv/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include "adv/errors.hpp"
#include "adv/rng.hpp"

namespace adv {

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return bytes;
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off, const std::string& path) {
  if (off + 4 > b.size()) throw FormatError(path + ": truncated header");
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

}  // namespace

DataSplit load_idx(const std::string& images_path, const std::string& labels_path) {
  const std::vector<unsigned char> img = read_file(images_path);
  const std::vector<unsigned char> lbl = read_file(labels_path);

  const std::uint32_t img_magic = be32(img, 0, images_path);
  if (img_magic != 0x00000803u)
    throw FormatError(images_path + ": bad image magic " + std::to_string(img_magic) +
                      " (expected 2051)");
  const std::uint32_t lbl_magic = be32(lbl, 0, labels_path);
  if (lbl_magic != 0x00000801u)
    throw FormatError(labels_path + ": bad label magic " + std::to_string(lbl_magic) +
                      " (expected 2049)");

  const std::uint32_t n = be32(img, 4, images_path);
  const std::uint32_t rows = be32(img, 8, images_path);
  const std::uint32_t cols = be32(img, 12, images_path);
  const std::uint32_t n_lbl = be32(lbl, 4, labels_path);
  if (n != n_lbl)
    throw FormatError(images_path + ": " + std::to_string(n) + " images but " + std::to_string(n_lbl) +
                      " labels in " + labels_path);
  if (n == 0) throw FormatError(images_path + ": empty image set");

  const std::size_t expect_img = 16 + std::size_t(n) * rows * cols;
  if (img.size() != expect_img)
    throw FormatError(images_path + ": payload size " + std::to_string(img.size()) + " != expected " +
                      std::to_string(expect_img));
  const std::size_t expect_lbl = 8 + std::size_t(n);
  if (lbl.size() != expect_lbl)
    throw FormatError(labels_path + ": payload size " + std::to_string(lbl.size()) + " != expected " +
                      std::to_string(expect_lbl));

  DataSplit split;
  split.images = Tensor<float>({Index(n), Index(rows), Index(cols), 1});
  for (Index i = 0; i < split.images.numel(); ++i)
    split.images.data[i] = float(img[16 + std::size_t(i)]) / 255.0f;
  split.labels.resize(n);
  split.ids.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    split.labels[i] = int(lbl[8 + i]);
    split.ids[i] = std::int64_t(i);
  }
  return split;
}

Dataset load_idx_dataset(const std::string& train_images, const std::string& train_labels,
                         const std::string& test_images, const std::string& test_labels,
                         const std::string& provenance) {
  Dataset d;
  d.train = load_idx(train_images, train_labels);
  d.test = load_idx(test_images, test_labels);
  if (Shape(d.train.images.shape.begin() + 1, d.train.images.shape.end()) !=
      Shape(d.test.images.shape.begin() + 1, d.test.images.shape.end()))
    throw FormatError("train/test image dimensions differ");
  int max_label = 0;
  for (int y : d.train.labels) max_label = std::max(max_label, y);
  for (int y : d.test.labels) max_label = std::max(max_label, y);
  d.class_count = std::max(max_label + 1, 2);
  d.provenance = provenance;
  return d;
}

Dataset synth_blobs(int k, int per_class, int dim, float spread, std::uint64_t seed) {
  if (k < 2) throw ConfigError("synth_blobs: k must be >= 2");
  if (per_class < 1 || dim < 1) throw ConfigError("synth_blobs: per_class and dim must be positive");

  SplitMix64 center_rng(derive_stream(seed, 0));
  std::vector<std::vector<float>> centers(static_cast<std::size_t>(k));
  for (auto& c : centers) {
    c.resize(static_cast<std::size_t>(dim));
    for (auto& v : c) v = static_cast<float>(center_rng.uniform(0.15, 0.85));
  }

  auto fill = [&](DataSplit& split, Index count, std::uint64_t stream, std::int64_t id0) {
    split.images = Tensor<float>({count, 1, static_cast<Index>(dim), 1});
    split.labels.resize(static_cast<std::size_t>(count));
    split.ids.resize(static_cast<std::size_t>(count));
    SplitMix64 rng(derive_stream(seed, stream));
    for (Index i = 0; i < count; ++i) {
      const int cls = static_cast<int>(i % k);
      split.labels[static_cast<std::size_t>(i)] = cls;
      split.ids[static_cast<std::size_t>(i)] = id0 + i;
      for (Index j = 0; j < dim; ++j) {
        float v = centers[static_cast<std::size_t>(cls)][static_cast<std::size_t>(j)] +
                  spread * static_cast<float>(rng.normal());
        split.images.data[i * dim + j] = std::clamp(v, 0.0f, 1.0f);
      }
    }
  };

  Dataset d;
  const Index train_n = Index(k) * per_class;
  const Index test_n = Index(k) * std::max(per_class / 5, 1);
  fill(d.train, train_n, 1, 0);
  fill(d.test, test_n, 2, train_n);
  d.class_count = k;
  d.provenance = "synthetic";
  return d;
}

namespace {

struct Pt {
  double x, y;
};

// Stroke templates per digit in a unit box, y pointing down.
const std::vector<std::vector<Pt>>& digit_strokes(int d) {
  auto ellipse = [](double cx, double cy, double rx, double ry, int n = 14) {
    std::vector<Pt> p;
    for (int i = 0; i <= n; ++i) {
      double a = 2.0 * M_PI * i / n;
      p.push_back({cx + rx * std::sin(a), cy - ry * std::cos(a)});
    }
    return p;
  };
  static const std::array<std::vector<std::vector<Pt>>, 10> glyphs = {{
      // 0
      {ellipse(0.5, 0.5, 0.30, 0.42)},
      // 1
      {{{0.32, 0.26}, {0.52, 0.08}, {0.52, 0.92}}},
      // 2
      {{{0.22, 0.30}, {0.26, 0.14}, {0.48, 0.07}, {0.70, 0.13}, {0.76, 0.30}, {0.60, 0.52}, {0.22, 0.90}},
       {{0.22, 0.90}, {0.80, 0.90}}},
      // 3
      {{{0.24, 0.13}, {0.50, 0.06}, {0.72, 0.16}, {0.74, 0.32}, {0.52, 0.45}},
       {{0.52, 0.45}, {0.77, 0.58}, {0.78, 0.78}, {0.52, 0.93}, {0.24, 0.85}}},
      // 4
      {{{0.62, 0.07}, {0.20, 0.60}, {0.84, 0.60}}, {{0.64, 0.34}, {0.64, 0.93}}},
      // 5
      {{{0.76, 0.08}, {0.28, 0.08}, {0.25, 0.44}},
       {{0.25, 0.44}, {0.55, 0.40}, {0.76, 0.52}, {0.77, 0.74}, {0.54, 0.92}, {0.26, 0.84}}},
      // 6
      {{{0.66, 0.07}, {0.44, 0.26}, {0.29, 0.52}, {0.27, 0.70}},
       ellipse(0.50, 0.71, 0.23, 0.21)},
      // 7
      {{{0.20, 0.10}, {0.80, 0.10}, {0.42, 0.92}}},
      // 8
      {ellipse(0.5, 0.29, 0.21, 0.20), ellipse(0.5, 0.71, 0.25, 0.22)},
      // 9
      {ellipse(0.50, 0.31, 0.22, 0.22), {{0.72, 0.35}, {0.70, 0.62}, {0.58, 0.92}}},
  }};
  return glyphs[static_cast<std::size_t>(d)];
}

double seg_dist(double px, double py, Pt a, Pt b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double wx = px - a.x, wy = py - a.y;
  const double vv = vx * vx + vy * vy;
  double t = vv > 0 ? (wx * vx + wy * vy) / vv : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = px - (a.x + t * vx), dy = py - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

void render_digit(float* out, int side, int cls, SplitMix64& rng) {
  const double angle = rng.uniform(-0.26, 0.26);  // ~15 degrees
  const double sx = rng.uniform(0.80, 1.12), sy = rng.uniform(0.80, 1.12);
  const double shear = rng.uniform(-0.15, 0.15);
  const double jx = rng.uniform(-2.2, 2.2), jy = rng.uniform(-2.2, 2.2);
  const double thickness = rng.uniform(0.9, 1.6);
  const double peak = rng.uniform(0.82, 1.0);
  const double box = side * 0.68;
  const double ca = std::cos(angle), sa = std::sin(angle);

  // jittered control points, transformed to pixel coordinates
  std::vector<std::vector<Pt>> strokes = digit_strokes(cls);
  for (auto& stroke : strokes) {
    for (auto& p : stroke) {
      double gx = p.x - 0.5 + rng.uniform(-0.02, 0.02);
      double gy = p.y - 0.5 + rng.uniform(-0.02, 0.02);
      gx += shear * gy;
      double rx = (ca * gx - sa * gy) * sx, ry = (sa * gx + ca * gy) * sy;
      p = {rx * box + side / 2.0 + jx, ry * box + side / 2.0 + jy};
    }
  }

  const double soft = 0.9;
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      double d = 1e9;
      for (const auto& stroke : strokes)
        for (std::size_t i = 0; i + 1 < stroke.size(); ++i)
          d = std::min(d, seg_dist(x + 0.5, y + 0.5, stroke[i], stroke[i + 1]));
      double v = peak * std::clamp((thickness + soft - d) / soft, 0.0, 1.0);
      out[y * side + x] = static_cast<float>(v);
    }
  }
}

void fill_digits(DataSplit& split, Index count, std::uint64_t seed, std::int64_t id0) {
  const int side = 28;
  split.images = Tensor<float>({count, side, side, 1});
  split.labels.resize(static_cast<std::size_t>(count));
  split.ids.resize(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) {
    SplitMix64 rng(derive_stream(seed, static_cast<std::uint64_t>(id0 + i)));
    const int cls = static_cast<int>(rng.below(10));
    split.labels[static_cast<std::size_t>(i)] = cls;
    split.ids[static_cast<std::size_t>(i)] = id0 + i;
    render_digit(split.images.data.data() + i * side * side, side, cls, rng);
  }
}

}  // namespace

Dataset synth_digits(Index train_count, Index test_count, std::uint64_t seed) {
  if (train_count < 1 || test_count < 1)
    throw ConfigError("synth_digits: counts must be positive");
  Dataset d;
  fill_digits(d.train, train_count, seed, 0);
  fill_digits(d.test, test_count, seed, train_count);
  d.class_count = 10;
  d.provenance = "synthetic";
  return d;
}

namespace {

void put_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

void write_idx_images(const std::string& path, const Tensor<float>& images) {
  if (images.shape.size() != 4 || images.shape[3] != 1)
    throw ShapeError("write_idx_images: expects [N,H,W,1] images, got " + shape_str(images.shape));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  put_be32(out, 0x00000803u);
  put_be32(out, static_cast<std::uint32_t>(images.shape[0]));
  put_be32(out, static_cast<std::uint32_t>(images.shape[1]));
  put_be32(out, static_cast<std::uint32_t>(images.shape[2]));
  for (Index i = 0; i < images.numel(); ++i) {
    const float v = std::clamp(images.data[i], 0.0f, 1.0f);
    const unsigned char b = static_cast<unsigned char>(std::lround(v * 255.0f));
    out.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!out) throw IoError("short write to " + path);
}

void write_idx_labels(const std::string& path, const std::vector<int>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  put_be32(out, 0x00000801u);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (int y : labels) {
    const unsigned char b = static_cast<unsigned char>(y);
    out.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!out) throw IoError("short write to " + path);
}

DataSplit take(const DataSplit& split, Index n) {
  if (n < 0 || n > split.size()) n = split.size();
  DataSplit out;
  Shape s = split.images.shape;
  const Index per = shape_numel(Shape(s.begin() + 1, s.end()));
  s[0] = n;
  out.images = Tensor<float>(s);
  out.images.data = split.images.data.head(n * per);
  out.labels.assign(split.labels.begin(), split.labels.begin() + n);
  out.ids.assign(split.ids.begin(), split.ids.begin() + n);
  return out;
}

Dataset take(const Dataset& data, Index train_n, Index test_n) {
  Dataset out;
  out.train = take(data.train, train_n);
  out.test = take(data.test, test_n);
  out.class_count = data.class_count;
  out.provenance = data.provenance;
  return out;
}

Batch<float> gather_batch(const DataSplit& split, const std::vector<std::int64_t>& order, Index begin,
                          Index end) {
  if (begin < 0 || end > static_cast<Index>(order.size()) || begin >= end)
    throw ShapeError("gather_batch: bad range");
  const Index b = end - begin;
  Shape s = split.images.shape;
  const Index per = shape_numel(Shape(s.begin() + 1, s.end()));
  s[0] = b;
  Batch<float> batch;
  batch.images = Tensor<float>(s);
  batch.labels.resize(static_cast<std::size_t>(b));
  batch.ids.resize(static_cast<std::size_t>(b));
  for (Index i = 0; i < b; ++i) {
    const std::int64_t row = order[static_cast<std::size_t>(begin + i)];
    batch.images.data.segment(i * per, per) = split.images.data.segment(row * per, per);
    batch.labels[static_cast<std::size_t>(i)] = split.labels[static_cast<std::size_t>(row)];
    batch.ids[static_cast<std::size_t>(i)] = split.ids[static_cast<std::size_t>(row)];
  }
  return batch;
}

}  // namespace adv
