#pragma once

#include <atomic>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "adv/loss.hpp"
#include "adv/rng.hpp"
#include "adv/tensor.hpp"

namespace adv {

enum class LayerKind { Dense, Relu, Conv2d, MaxPool2d, Flatten };

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Relu: return "relu";
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::MaxPool2d: return "maxpool2d";
    case LayerKind::Flatten: return "flatten";
  }
  return "?";
}

// Architecture description, independent of weights; what gets serialized.
struct LayerDesc {
  LayerKind kind = LayerKind::Flatten;
  int units = 0;    // dense
  int filters = 0;  // conv2d output channels
  int kernel = 0;   // conv2d square kernel, valid padding, stride 1
  int pool = 2;     // maxpool2d window == stride

  bool has_params() const { return kind == LayerKind::Dense || kind == LayerKind::Conv2d; }
};

inline LayerDesc dense(int units) { return {LayerKind::Dense, units, 0, 0, 0}; }
inline LayerDesc relu() { return {LayerKind::Relu, 0, 0, 0, 0}; }
inline LayerDesc conv2d(int filters, int kernel) { return {LayerKind::Conv2d, 0, filters, kernel, 0}; }
inline LayerDesc maxpool2d(int pool = 2) { return {LayerKind::MaxPool2d, 0, 0, 0, pool}; }
inline LayerDesc flatten() { return {LayerKind::Flatten, 0, 0, 0, 0}; }

template <typename Scalar>
struct Layer {
  LayerDesc desc;
  Tensor<Scalar> weight;  // dense [units, in]; conv [F, K, K, C]
  Tensor<Scalar> bias;    // dense [units]; conv [F]
};

// Per-example shapes: images [H,W,C], flattened vectors [n].
inline Shape layer_output_shape(const LayerDesc& d, const Shape& in, int layer_index) {
  const std::string where =
      "layer " + std::to_string(layer_index) + " (" + layer_kind_name(d.kind) + ")";
  switch (d.kind) {
    case LayerKind::Dense:
      if (in.size() != 1)
        throw ShapeError(where + ": expects a flat input, got " + shape_str(in) + " (missing flatten?)");
      if (d.units < 1) throw ShapeError(where + ": units must be positive");
      return {static_cast<Index>(d.units)};
    case LayerKind::Relu:
    case LayerKind::Flatten:
      if (d.kind == LayerKind::Flatten) return {shape_numel(in)};
      return in;
    case LayerKind::Conv2d: {
      if (in.size() != 3) throw ShapeError(where + ": expects [H,W,C] input, got " + shape_str(in));
      if (d.filters < 1 || d.kernel < 1) throw ShapeError(where + ": filters and kernel must be positive");
      Index oh = in[0] - d.kernel + 1, ow = in[1] - d.kernel + 1;
      if (oh < 1 || ow < 1)
        throw ShapeError(where + ": kernel " + std::to_string(d.kernel) + " too large for input " +
                         shape_str(in));
      return {oh, ow, static_cast<Index>(d.filters)};
    }
    case LayerKind::MaxPool2d: {
      if (in.size() != 3) throw ShapeError(where + ": expects [H,W,C] input, got " + shape_str(in));
      if (d.pool < 1) throw ShapeError(where + ": pool must be positive");
      if (in[0] % d.pool != 0 || in[1] % d.pool != 0)
        throw ShapeError(where + ": input " + shape_str(in) + " not divisible by pool " +
                         std::to_string(d.pool));
      return {in[0] / d.pool, in[1] / d.pool, in[2]};
    }
  }
  throw ShapeError(where + ": unknown layer kind");
}

template <typename Scalar>
struct Network {
  Shape input_shape;  // per-example, e.g. [28,28,1]
  int class_count = 0;
  std::uint64_t seed = 0;
  std::vector<Layer<Scalar>> layers;

  Index param_count() const {
    Index n = 0;
    for (const auto& l : layers) n += l.weight.numel() + l.bias.numel();
    return n;
  }

  std::vector<LayerDesc> descs() const {
    std::vector<LayerDesc> d;
    d.reserve(layers.size());
    for (const auto& l : layers) d.push_back(l.desc);
    return d;
  }

  template <typename T>
  Network<T> cast() const {
    Network<T> out;
    out.input_shape = input_shape;
    out.class_count = class_count;
    out.seed = seed;
    out.layers.reserve(layers.size());
    for (const auto& l : layers)
      out.layers.push_back({l.desc, l.weight.template cast<T>(), l.bias.template cast<T>()});
    return out;
  }
};

// He-uniform weights (bound sqrt(6/fan_in)), zero biases. Values are drawn in
// double and narrowed, so float and double builds of the same seed agree.
template <typename Scalar>
Network<Scalar> build_network(Shape input_shape, int class_count, const std::vector<LayerDesc>& descs,
                              std::uint64_t seed) {
  if (class_count < 2) throw ShapeError("build_network: class_count must be >= 2");
  Network<Scalar> net;
  net.input_shape = std::move(input_shape);
  net.class_count = class_count;
  net.seed = seed;
  Shape cur = net.input_shape;
  for (std::size_t i = 0; i < descs.size(); ++i) {
    const LayerDesc& d = descs[i];
    Shape out = layer_output_shape(d, cur, static_cast<int>(i));
    Layer<Scalar> layer{d, {}, {}};
    if (d.kind == LayerKind::Dense) {
      Index fan_in = cur[0];
      layer.weight = Tensor<Scalar>({static_cast<Index>(d.units), fan_in});
      layer.bias = Tensor<Scalar>({static_cast<Index>(d.units)});
    } else if (d.kind == LayerKind::Conv2d) {
      Index k = d.kernel, c = cur[2];
      layer.weight = Tensor<Scalar>({static_cast<Index>(d.filters), k, k, c});
      layer.bias = Tensor<Scalar>({static_cast<Index>(d.filters)});
    }
    if (d.has_params()) {
      Index fan_in = d.kind == LayerKind::Dense ? layer.weight.shape[1]
                                                : layer.weight.shape[1] * layer.weight.shape[2] *
                                                      layer.weight.shape[3];
      double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      SplitMix64 rng(derive_stream(seed, i));
      for (Index j = 0; j < layer.weight.numel(); ++j)
        layer.weight.data[j] = static_cast<Scalar>(rng.uniform(-bound, bound));
    }
    net.layers.push_back(std::move(layer));
    cur = out;
  }
  if (cur.size() != 1 || cur[0] != class_count)
    throw ShapeError("network output shape " + shape_str(cur) + " does not produce " +
                     std::to_string(class_count) + " logits");
  return net;
}

// conv(8,5x5) -> relu -> pool(2) -> conv(16,5x5) -> relu -> pool(2) -> flatten
// -> dense(128) -> relu -> dense(k)
inline std::vector<LayerDesc> lenet_lite_descs(int class_count) {
  return {conv2d(8, 5), relu(), maxpool2d(2), conv2d(16, 5), relu(), maxpool2d(2),
          flatten(),    dense(128),           relu(),        dense(class_count)};
}

template <typename Scalar>
Network<Scalar> make_lenet_lite(Shape input_shape, int class_count, std::uint64_t seed) {
  return build_network<Scalar>(std::move(input_shape), class_count, lenet_lite_descs(class_count), seed);
}

inline std::vector<LayerDesc> mlp_descs(const std::vector<int>& hidden, int class_count) {
  std::vector<LayerDesc> d{flatten()};
  for (int h : hidden) {
    d.push_back(dense(h));
    d.push_back(relu());
  }
  d.push_back(dense(class_count));
  return d;
}

template <typename Scalar>
Network<Scalar> make_mlp(Shape input_shape, int class_count, const std::vector<int>& hidden,
                         std::uint64_t seed) {
  return build_network<Scalar>(std::move(input_shape), class_count, mlp_descs(hidden, class_count), seed);
}

template <typename Scalar>
struct Batch {
  Tensor<Scalar> images;  // [B,H,W,C] in [0,1]
  std::vector<int> labels;
  std::vector<std::int64_t> ids;  // stable sample ids; may be empty for ad-hoc batches

  Index size() const { return images.shape.empty() ? 0 : images.shape[0]; }
};

namespace detail {

template <typename Scalar>
void check_input(const Network<Scalar>& net, const Tensor<Scalar>& images) {
  Shape per(images.shape.begin() + 1, images.shape.end());
  if (images.shape.empty() || images.shape[0] < 1 || per != net.input_shape)
    throw ShapeError("input shape " + shape_str(images.shape) + " does not match network input " +
                     shape_str(net.input_shape) + " (layer 0)");
}

// Patch matrix [B*OH*OW, K*K*C]; column order matches the [F,K,K,C] weight
// layout flattened row-major.
template <typename Scalar>
MatrixR<Scalar> im2col(const Tensor<Scalar>& in, Index b, Index h, Index w, Index c, Index k) {
  const Index oh = h - k + 1, ow = w - k + 1;
  MatrixR<Scalar> patches(b * oh * ow, k * k * c);
  const Scalar* src = in.data.data();
  for (Index n = 0; n < b; ++n) {
    const Scalar* img = src + n * h * w * c;
    for (Index i = 0; i < oh; ++i) {
      for (Index j = 0; j < ow; ++j) {
        Scalar* row = patches.data() + (((n * oh) + i) * ow + j) * (k * k * c);
        for (Index a = 0; a < k; ++a) {
          const Scalar* line = img + ((i + a) * w + j) * c;
          std::memcpy(row + a * k * c, line, static_cast<std::size_t>(k * c) * sizeof(Scalar));
        }
      }
    }
  }
  return patches;
}

template <typename Scalar>
void col2im_add(const MatrixR<Scalar>& cols, Tensor<Scalar>& out, Index b, Index h, Index w, Index c,
                Index k) {
  const Index oh = h - k + 1, ow = w - k + 1;
  Scalar* dst = out.data.data();
  for (Index n = 0; n < b; ++n) {
    Scalar* img = dst + n * h * w * c;
    for (Index i = 0; i < oh; ++i) {
      for (Index j = 0; j < ow; ++j) {
        const Scalar* row = cols.data() + (((n * oh) + i) * ow + j) * (k * k * c);
        for (Index a = 0; a < k; ++a) {
          Scalar* line = img + ((i + a) * w + j) * c;
          const Scalar* chunk = row + a * k * c;
          for (Index t = 0; t < k * c; ++t) line[t] += chunk[t];
        }
      }
    }
  }
}

}  // namespace detail

template <typename Scalar>
struct ForwardTrace {
  std::vector<Tensor<Scalar>> acts;          // acts[0] = input, acts[i+1] = output of layer i
  std::vector<std::vector<Index>> pool_src;  // per layer; maxpool only: winning input flat index
};

template <typename Scalar>
ForwardTrace<Scalar> forward_trace(const Network<Scalar>& net, const Tensor<Scalar>& images) {
  detail::check_input(net, images);
  const Index b = images.shape[0];
  ForwardTrace<Scalar> tr;
  tr.acts.reserve(net.layers.size() + 1);
  tr.pool_src.resize(net.layers.size());
  tr.acts.push_back(images);
  Shape cur(net.input_shape);
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    const Layer<Scalar>& layer = net.layers[li];
    const Tensor<Scalar>& x = tr.acts.back();
    Shape out_per = layer_output_shape(layer.desc, cur, static_cast<int>(li));
    switch (layer.desc.kind) {
      case LayerKind::Dense: {
        const Index n_in = cur[0], n_out = out_per[0];
        Tensor<Scalar> y({b, n_out});
        as_matrix(y, b, n_out).noalias() = as_matrix(x, b, n_in) * as_matrix(layer.weight, n_out, n_in).transpose();
        as_matrix(y, b, n_out).rowwise() += as_matrix(layer.bias, 1, n_out).row(0);
        tr.acts.push_back(std::move(y));
        break;
      }
      case LayerKind::Relu: {
        Tensor<Scalar> y(x.shape, x.data.max(Scalar(0)));
        tr.acts.push_back(std::move(y));
        break;
      }
      case LayerKind::Flatten: {
        Tensor<Scalar> y = x;
        y.shape = {b, shape_numel(cur)};
        tr.acts.push_back(std::move(y));
        break;
      }
      case LayerKind::Conv2d: {
        const Index h = cur[0], w = cur[1], c = cur[2];
        const Index k = layer.desc.kernel, f = layer.desc.filters;
        const Index oh = out_per[0], ow = out_per[1];
        MatrixR<Scalar> patches = detail::im2col(x, b, h, w, c, k);
        Tensor<Scalar> y({b, oh, ow, f});
        auto ym = as_matrix(y, b * oh * ow, f);
        ym.noalias() = patches * as_matrix(layer.weight, f, k * k * c).transpose();
        ym.rowwise() += as_matrix(layer.bias, 1, f).row(0);
        tr.acts.push_back(std::move(y));
        break;
      }
      case LayerKind::MaxPool2d: {
        const Index h = cur[0], w = cur[1], c = cur[2], p = layer.desc.pool;
        const Index oh = out_per[0], ow = out_per[1];
        Tensor<Scalar> y({b, oh, ow, c});
        std::vector<Index>& src = tr.pool_src[li];
        src.resize(static_cast<std::size_t>(b * oh * ow * c));
        const Scalar* in = x.data.data();
        Scalar* out = y.data.data();
        Index o = 0;
        for (Index n = 0; n < b; ++n) {
          for (Index i = 0; i < oh; ++i) {
            for (Index j = 0; j < ow; ++j) {
              for (Index ch = 0; ch < c; ++ch, ++o) {
                Index best = ((n * h + i * p) * w + j * p) * c + ch;
                Scalar best_v = in[best];
                for (Index di = 0; di < p; ++di) {
                  for (Index dj = 0; dj < p; ++dj) {
                    Index idx = ((n * h + i * p + di) * w + j * p + dj) * c + ch;
                    if (in[idx] > best_v) {  // strict: first max wins ties
                      best_v = in[idx];
                      best = idx;
                    }
                  }
                }
                out[o] = best_v;
                src[static_cast<std::size_t>(o)] = best;
              }
            }
          }
        }
        tr.acts.push_back(std::move(y));
        break;
      }
    }
    cur = std::move(out_per);
  }
  return tr;
}

template <typename Scalar>
Tensor<Scalar> forward_logits(const Network<Scalar>& net, const Tensor<Scalar>& images) {
  return forward_trace(net, images).acts.back();
}

template <typename Scalar>
struct Gradients {
  std::vector<Tensor<Scalar>> weight, bias;  // indexed by layer; empty for parameterless layers
};

template <typename Scalar>
Gradients<Scalar> zero_gradients(const Network<Scalar>& net) {
  Gradients<Scalar> g;
  g.weight.resize(net.layers.size());
  g.bias.resize(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (net.layers[i].desc.has_params()) {
      g.weight[i] = Tensor<Scalar>(net.layers[i].weight.shape);
      g.bias[i] = Tensor<Scalar>(net.layers[i].bias.shape);
    }
  }
  return g;
}

// Pull dlogits back through the trace. Parameter grads accumulate into
// *param_grads when given; the gradient w.r.t. the input lands in *input_grad.
template <typename Scalar>
void backprop(const Network<Scalar>& net, const ForwardTrace<Scalar>& tr, const Tensor<Scalar>& dlogits,
              Gradients<Scalar>* param_grads, Tensor<Scalar>* input_grad) {
  const Index b = tr.acts[0].shape[0];
  if (!same_shape(dlogits, tr.acts.back()))
    throw ShapeError("backprop: dlogits shape " + shape_str(dlogits.shape) + " does not match logits " +
                     shape_str(tr.acts.back().shape));
  Tensor<Scalar> delta = dlogits;
  const bool need_input = input_grad != nullptr;
  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const Layer<Scalar>& layer = net.layers[li];
    const Tensor<Scalar>& x = tr.acts[li];
    const bool last = li == 0;
    const bool want_dx = !last || need_input;
    switch (layer.desc.kind) {
      case LayerKind::Dense: {
        const Index n_out = layer.weight.shape[0], n_in = layer.weight.shape[1];
        auto dy = as_matrix(delta, b, n_out);
        if (param_grads) {
          as_matrix(param_grads->weight[li], n_out, n_in).noalias() += dy.transpose() * as_matrix(x, b, n_in);
          as_matrix(param_grads->bias[li], 1, n_out).row(0) += dy.colwise().sum();
        }
        if (want_dx) {
          Tensor<Scalar> dx(x.shape);
          as_matrix(dx, b, n_in).noalias() = dy * as_matrix(layer.weight, n_out, n_in);
          delta = std::move(dx);
        }
        break;
      }
      case LayerKind::Relu: {
        if (want_dx) delta.data = (x.data > Scalar(0)).template cast<Scalar>() * delta.data;
        break;
      }
      case LayerKind::Flatten: {
        if (want_dx) delta.shape = x.shape;
        break;
      }
      case LayerKind::Conv2d: {
        Shape per(x.shape.begin() + 1, x.shape.end());
        const Index h = per[0], w = per[1], c = per[2];
        const Index k = layer.desc.kernel, f = layer.desc.filters;
        const Index oh = h - k + 1, ow = w - k + 1;
        auto dy = as_matrix(delta, b * oh * ow, f);
        if (param_grads) {
          // dW = dY^T * patches, recomputed from the cached input activation
          MatrixR<Scalar> patches = detail::im2col(x, b, h, w, c, k);
          as_matrix(param_grads->weight[li], f, k * k * c).noalias() += dy.transpose() * patches;
          as_matrix(param_grads->bias[li], 1, f).row(0) += dy.colwise().sum();
        }
        if (want_dx) {
          MatrixR<Scalar> dpatches = dy * as_matrix(layer.weight, f, k * k * c);
          Tensor<Scalar> dx(x.shape);
          detail::col2im_add(dpatches, dx, b, h, w, c, k);
          delta = std::move(dx);
        }
        break;
      }
      case LayerKind::MaxPool2d: {
        if (want_dx) {
          Tensor<Scalar> dx(x.shape);
          const std::vector<Index>& src = tr.pool_src[li];
          for (std::size_t o = 0; o < src.size(); ++o) dx.data[src[o]] += delta.data[static_cast<Index>(o)];
          delta = std::move(dx);
        }
        break;
      }
    }
  }
  if (input_grad) *input_grad = std::move(delta);
}

// Process-wide count of input-gradient batch evaluations; the cost metric the
// trainers and attacks account against.
inline std::atomic<std::uint64_t>& input_grad_eval_count() {
  static std::atomic<std::uint64_t> count{0};
  return count;
}

inline std::uint64_t reset_input_grad_eval_count() {
  return input_grad_eval_count().exchange(0);
}

// Mean cross-entropy loss and its exact parameter gradients.
template <typename Scalar>
Scalar loss_and_param_gradients(const Network<Scalar>& net, const Batch<Scalar>& batch,
                                Gradients<Scalar>& grads) {
  ForwardTrace<Scalar> tr = forward_trace(net, batch.images);
  const Tensor<Scalar>& logits = tr.acts.back();
  Scalar loss = cross_entropy(logits, batch.labels);
  Tensor<Scalar> dlogits =
      cross_entropy_logit_grad(logits, batch.labels, Scalar(1) / static_cast<Scalar>(batch.size()));
  backprop(net, tr, dlogits, &grads, static_cast<Tensor<Scalar>*>(nullptr));
  return loss;
}

template <typename Scalar>
Gradients<Scalar> param_gradients(const Network<Scalar>& net, const Batch<Scalar>& batch) {
  Gradients<Scalar> grads = zero_gradients(net);
  loss_and_param_gradients(net, batch, grads);
  return grads;
}

// Gradient of the summed per-example cross-entropy w.r.t. each input pixel;
// per-example gradients never mix across the batch.
template <typename Scalar>
Tensor<Scalar> input_gradient(const Network<Scalar>& net, const Batch<Scalar>& batch) {
  ForwardTrace<Scalar> tr = forward_trace(net, batch.images);
  Tensor<Scalar> dlogits = cross_entropy_logit_grad(tr.acts.back(), batch.labels, Scalar(1));
  Tensor<Scalar> dx;
  backprop(net, tr, dlogits, static_cast<Gradients<Scalar>*>(nullptr), &dx);
  input_grad_eval_count().fetch_add(1, std::memory_order_relaxed);
  return dx;
}

template <typename Scalar>
struct SgdState {
  Scalar learning_rate = Scalar(0.01);
  Scalar momentum = Scalar(0.9);
  std::vector<Tensor<Scalar>> vel_weight, vel_bias;
};

template <typename Scalar>
SgdState<Scalar> make_sgd_state(const Network<Scalar>& net, Scalar learning_rate, Scalar momentum) {
  SgdState<Scalar> s;
  s.learning_rate = learning_rate;
  s.momentum = momentum;
  s.vel_weight.resize(net.layers.size());
  s.vel_bias.resize(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (net.layers[i].desc.has_params()) {
      s.vel_weight[i] = Tensor<Scalar>(net.layers[i].weight.shape);
      s.vel_bias[i] = Tensor<Scalar>(net.layers[i].bias.shape);
    }
  }
  return s;
}

// v <- momentum*v + g; theta <- theta - alpha*v
template <typename Scalar>
void sgd_step(Network<Scalar>& net, const Gradients<Scalar>& grads, SgdState<Scalar>& opt) {
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    Layer<Scalar>& layer = net.layers[i];
    if (!layer.desc.has_params()) continue;
    if (!same_shape(grads.weight[i], layer.weight))
      throw ShapeError("sgd_step: gradient shape mismatch at layer " + std::to_string(i));
    opt.vel_weight[i].data = opt.momentum * opt.vel_weight[i].data + grads.weight[i].data;
    opt.vel_bias[i].data = opt.momentum * opt.vel_bias[i].data + grads.bias[i].data;
    layer.weight.data -= opt.learning_rate * opt.vel_weight[i].data;
    layer.bias.data -= opt.learning_rate * opt.vel_bias[i].data;
  }
}

// Argmax with lowest-index tie break.
template <typename Scalar>
std::vector<int> predict_classes(const Network<Scalar>& net, const Tensor<Scalar>& images,
                                 Index eval_batch = 256) {
  const Index n = images.shape[0];
  const Index per = shape_numel(net.input_shape);
  std::vector<int> pred(static_cast<std::size_t>(n));
  for (Index start = 0; start < n; start += eval_batch) {
    const Index count = std::min(eval_batch, n - start);
    Shape s = images.shape;
    s[0] = count;
    Tensor<Scalar> chunk(s);
    chunk.data = images.data.segment(start * per, count * per);
    Tensor<Scalar> logits = forward_logits(net, chunk);
    auto z = as_matrix(logits, count, net.class_count);
    for (Index i = 0; i < count; ++i) {
      int best = 0;
      for (int c = 1; c < net.class_count; ++c)
        if (z(i, c) > z(i, best)) best = c;
      pred[static_cast<std::size_t>(start + i)] = best;
    }
  }
  return pred;
}

template <typename Scalar>
double accuracy(const Network<Scalar>& net, const Tensor<Scalar>& images, const std::vector<int>& labels,
                Index eval_batch = 256) {
  const Index n = images.shape.empty() ? 0 : images.shape[0];
  if (n == 0) throw ShapeError("accuracy: empty dataset");
  if (static_cast<Index>(labels.size()) != n)
    throw ShapeError("accuracy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                     " images");
  std::vector<int> pred = predict_classes(net, images, eval_batch);
  Index correct = 0;
  for (Index i = 0; i < n; ++i)
    if (pred[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(i)]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace adv
