#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "adv/loss.hpp"
#include "adv/network.hpp"
#include "fd_oracle.hpp"
#include "test_util.hpp"

using namespace adv;

namespace {

// Single dense layer on a 3-vector input, weights set by hand.
Network<float> tiny_dense(std::initializer_list<float> w, std::initializer_list<float> b) {
  Network<float> net = build_network<float>({3}, 2, {dense(2)}, 0);
  net.layers[0].weight = Tensor<float>::from({2, 3}, w);
  net.layers[0].bias = Tensor<float>::from({2}, b);
  return net;
}

void zero_params(Network<float>& net) {
  for (auto& l : net.layers) {
    l.weight.data.setZero();
    l.bias.data.setZero();
  }
}

}  // namespace

TEST_CASE("all-zero-weight net maps any input to zero logits") {
  Network<float> net = make_mlp<float>({4}, 3, {5}, 1);
  zero_params(net);
  Batch<float> b = fdtest::random_batch(net, 4, 9);
  Tensor<float> logits = forward_logits(net, b.images);
  CHECK(logits.data.abs().maxCoeff() == 0.0f);
}

TEST_CASE("dense forward is Wx + b on a hand case") {
  // W = [[1,2,3],[4,5,6]], b = [0.5,-1], x = [1,0,0.5] -> [3, 6]
  Network<float> net = tiny_dense({1, 2, 3, 4, 5, 6}, {0.5f, -1.f});
  Tensor<float> x = Tensor<float>::from({1, 3}, {1.f, 0.f, 0.5f});
  Tensor<float> y = forward_logits(net, x);
  CHECK(y.data[0] == doctest::Approx(3.0f));
  CHECK(y.data[1] == doctest::Approx(6.0f));
}

TEST_CASE("flatten preserves row-major order") {
  Network<float> net = build_network<float>({2, 2, 1}, 4, {flatten(), dense(4)}, 3);
  // identity dense so the logits expose the flattened vector
  net.layers[1].weight.data.setZero();
  for (Index i = 0; i < 4; ++i) net.layers[1].weight.at({i, i}) = 1.0f;
  net.layers[1].bias.data.setZero();
  Tensor<float> img = Tensor<float>::from({1, 2, 2, 1}, {10, 20, 30, 40});
  Tensor<float> y = forward_logits(net, img);
  for (Index i = 0; i < 4; ++i) CHECK(y.data[i] == img.data[i]);
}

TEST_CASE("shape mismatch errors name the layer") {
  Network<float> net = make_mlp<float>({4}, 3, {5}, 1);
  Tensor<float> bad({2, 5});
  CHECK_THROWS_WITH_AS(forward_logits(net, bad), doctest::Contains("layer 0"), ShapeError);
  CHECK_THROWS_AS(build_network<float>({6, 6, 1}, 2, {maxpool2d(4), flatten(), dense(2)}, 0),
                  ShapeError);
}

TEST_CASE("cross entropy on uniform logits is ln k") {
  Tensor<float> logits({4, 10});
  logits.data.setConstant(0.7f);
  std::vector<int> labels{0, 3, 9, 5};
  CHECK(cross_entropy(logits, labels) == doctest::Approx(std::log(10.0)).epsilon(1e-6));
}

TEST_CASE("cross entropy hand value and limit") {
  Tensor<float> logits = Tensor<float>::from({1, 2}, {1.f, 0.f});
  CHECK(cross_entropy(logits, {0}) == doctest::Approx(0.31326168752).epsilon(1e-6));

  // dominant true-class logit drives the loss to zero
  Tensor<float> confident = Tensor<float>::from({1, 2}, {25.f, 0.f});
  CHECK(cross_entropy(confident, {0}) < 1e-8f);
  CHECK(cross_entropy(confident, {0}) >= 0.0f);
}

TEST_CASE("cross entropy rejects bad labels and stays non-negative") {
  Tensor<float> logits({2, 3});
  CHECK_THROWS_AS(cross_entropy(logits, {0, 3}), std::out_of_range);
  SplitMix64 rng(5);
  for (int t = 0; t < 50; ++t) {
    Tensor<float> z({3, 4});
    for (Index i = 0; i < z.numel(); ++i) z.data[i] = static_cast<float>(rng.uniform(-30, 30));
    std::vector<int> labels{static_cast<int>(rng.below(4)), static_cast<int>(rng.below(4)),
                            static_cast<int>(rng.below(4))};
    CHECK(cross_entropy(z, labels) >= 0.0f);
  }
}

TEST_CASE("softmax rows sum to one under extreme logits") {
  Tensor<float> z = Tensor<float>::from({2, 3}, {1000.f, 999.f, -1000.f, -5.f, -5.f, -5.f});
  Tensor<float> p = softmax(z);
  CHECK(all_finite(p));
  auto m = as_matrix(p, 2, 3);
  CHECK(m.row(0).sum() == doctest::Approx(1.0f));
  CHECK(m.row(1).sum() == doctest::Approx(1.0f));
}

TEST_CASE("linear-softmax parameter gradient matches the closed form") {
  // dL/dW = (p - onehot(y)) x^T / B, hand-checked on a 2x2 case
  Network<float> net = build_network<float>({2}, 2, {dense(2)}, 0);
  net.layers[0].weight = Tensor<float>::from({2, 2}, {0.5f, -0.25f, 0.1f, 0.3f});
  net.layers[0].bias = Tensor<float>::from({2}, {0.05f, -0.05f});
  Batch<float> batch{Tensor<float>::from({2, 2}, {0.2f, 0.9f, 0.7f, 0.4f}), {1, 0}, {}};

  Gradients<float> g = param_gradients(net, batch);
  Tensor<float> logits = forward_logits(net, batch.images);
  Tensor<float> p = softmax(logits);
  auto pm = as_matrix(p, 2, 2);
  auto xm = as_matrix(batch.images, 2, 2);
  for (Index o = 0; o < 2; ++o) {
    for (Index i = 0; i < 2; ++i) {
      float expect = 0.f;
      for (Index n = 0; n < 2; ++n) {
        float resid = pm(n, o) - (batch.labels[static_cast<std::size_t>(n)] == o ? 1.f : 0.f);
        expect += resid * xm(n, i);
      }
      expect /= 2.f;
      CHECK(g.weight[0].at({o, i}) == doctest::Approx(expect).epsilon(1e-5));
    }
  }
}

TEST_CASE("dead input unit receives zero gradient") {
  Network<float> net = build_network<float>({3}, 2, {dense(2)}, 7);
  // input coordinate 2 is always zero, so column 2 of dW must be zero
  Batch<float> batch{Tensor<float>::from({2, 3}, {0.4f, 0.6f, 0.f, 0.9f, 0.1f, 0.f}), {0, 1}, {}};
  Gradients<float> g = param_gradients(net, batch);
  CHECK(g.weight[0].at({0, 2}) == 0.0f);
  CHECK(g.weight[0].at({1, 2}) == 0.0f);
}

TEST_CASE("parameter gradients match finite differences on an MLP") {
  auto build = [](std::uint64_t s) { return make_mlp<double>({6}, 3, {8}, s); };
  auto [net, batch] = fdtest::clean_fixture(build, 3, 100);
  fdtest::FdReport rep = fd_check_params(net, batch);
  INFO("worst ", rep.worst_where, " analytic ", rep.worst_analytic, " numeric ", rep.worst_numeric);
  CHECK(rep.pass(1e-4));
  CHECK(rep.kink_skipped == 0);
}

TEST_CASE("parameter gradients match finite differences on a conv stack") {
  auto build = [](std::uint64_t s) {
    return build_network<double>({8, 8, 1}, 2,
                                 {conv2d(3, 3), relu(), maxpool2d(2), flatten(), dense(2)}, s);
  };
  auto [net, batch] = fdtest::clean_fixture(build, 2, 300);
  fdtest::FdReport rep = fd_check_params(net, batch);
  INFO("worst ", rep.worst_where, " analytic ", rep.worst_analytic, " numeric ", rep.worst_numeric);
  CHECK(rep.pass(1e-4));
}

TEST_CASE("input gradient of a zero net is zero") {
  Network<float> net = make_mlp<float>({4}, 3, {5}, 1);
  zero_params(net);
  Batch<float> b = fdtest::random_batch(net, 3, 2);
  Tensor<float> g = input_gradient(net, b);
  CHECK(g.data.abs().maxCoeff() == 0.0f);
}

TEST_CASE("linear input gradient is W^T (p - onehot)") {
  Network<float> net = tiny_dense({0.5f, -0.2f, 0.3f, -0.4f, 0.8f, 0.1f}, {0.f, 0.f});
  Batch<float> batch{Tensor<float>::from({1, 3}, {0.3f, 0.6f, 0.1f}), {1}, {}};
  Tensor<float> g = input_gradient(net, batch);
  Tensor<float> p = softmax(forward_logits(net, batch.images));
  auto w = as_matrix(net.layers[0].weight, 2, 3);
  for (Index i = 0; i < 3; ++i) {
    float expect = (p.data[0] - 0.f) * w(0, i) + (p.data[1] - 1.f) * w(1, i);
    CHECK(g.data[i] == doctest::Approx(expect).epsilon(1e-5));
  }
}

TEST_CASE("input gradient matches finite differences") {
  auto build = [](std::uint64_t s) {
    return build_network<double>({6, 6, 1}, 2,
                                 {conv2d(2, 3), relu(), maxpool2d(2), flatten(), dense(2)}, s);
  };
  auto [net, batch] = fdtest::clean_fixture(build, 2, 500);
  fdtest::FdReport rep = fd_check_input(net, batch);
  INFO("worst ", rep.worst_where, " analytic ", rep.worst_analytic, " numeric ", rep.worst_numeric);
  CHECK(rep.pass(1e-4));
}

TEST_CASE("input gradients never mix across the batch") {
  Network<float> net = make_lenet_lite<float>({16, 16, 1}, 4, 77);
  Batch<float> batch = fdtest::random_batch(net, 3, 21);
  Tensor<float> base = input_gradient(net, batch);
  // scribble over example 2's pixels; examples 0 and 1 must be untouched
  Batch<float> mutated = batch;
  const Index per = shape_numel(net.input_shape);
  for (Index i = 0; i < per; ++i) mutated.images.data[2 * per + i] = 1.0f - mutated.images.data[2 * per + i];
  Tensor<float> changed = input_gradient(net, mutated);
  for (Index i = 0; i < 2 * per; ++i) CHECK(base.data[i] == changed.data[i]);
}

TEST_CASE("sgd step follows the momentum recurrence") {
  Network<float> net = build_network<float>({2}, 2, {dense(2)}, 3);
  Network<float> original = net;
  Gradients<float> g = zero_gradients(net);
  g.weight[0].data.setConstant(0.25f);
  g.bias[0].data.setConstant(-0.5f);

  SUBCASE("alpha = 0 leaves parameters unchanged") {
    SgdState<float> opt = make_sgd_state(net, 0.0f, 0.9f);
    sgd_step(net, g, opt);
    CHECK((net.layers[0].weight.data == original.layers[0].weight.data).all());
  }

  SUBCASE("momentum 0, alpha 1 subtracts the gradient exactly") {
    SgdState<float> opt = make_sgd_state(net, 1.0f, 0.0f);
    sgd_step(net, g, opt);
    CHECK((net.layers[0].weight.data == original.layers[0].weight.data - 0.25f).all());
    CHECK((net.layers[0].bias.data == original.layers[0].bias.data + 0.5f).all());
  }

  SUBCASE("momentum 0.9: second identical step moves by alpha * 1.9 * |g|") {
    SgdState<float> opt = make_sgd_state(net, 0.1f, 0.9f);
    sgd_step(net, g, opt);
    Tensor<float> after_one = net.layers[0].weight;
    sgd_step(net, g, opt);
    ArrayX<float> second_move = after_one.data - net.layers[0].weight.data;
    CHECK(second_move.isApproxToConstant(0.1f * 1.9f * 0.25f, 1e-6f));
  }
}

TEST_CASE("accuracy counts argmax matches with lowest-index ties") {
  Network<float> net = build_network<float>({2}, 3, {dense(3)}, 0);
  zero_params(net);
  // all logits equal -> every prediction is class 0
  Tensor<float> imgs({4, 2});
  imgs.data.setConstant(0.5f);
  CHECK(accuracy(net, imgs, {0, 0, 0, 0}) == doctest::Approx(1.0));
  CHECK(accuracy(net, imgs, {0, 1, 0, 2}) == doctest::Approx(0.5));
  Tensor<float> empty;
  CHECK_THROWS_AS(accuracy(net, empty, {}), ShapeError);
}

TEST_CASE("weight init is reproducible from the seed") {
  Network<float> a = make_lenet_lite<float>({16, 16, 1}, 10, 1234);
  Network<float> b = make_lenet_lite<float>({16, 16, 1}, 10, 1234);
  Network<float> c = make_lenet_lite<float>({16, 16, 1}, 10, 1235);
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    CHECK((a.layers[i].weight.data == b.layers[i].weight.data).all());
    CHECK((a.layers[i].bias.data == b.layers[i].bias.data).all());
  }
  CHECK_FALSE((a.layers[0].weight.data == c.layers[0].weight.data).all());

  // He-uniform bound for the first conv: sqrt(6 / 25)
  float bound = std::sqrt(6.0f / 25.0f);
  CHECK(a.layers[0].weight.data.abs().maxCoeff() <= bound);
  CHECK(a.layers[0].bias.data.abs().maxCoeff() == 0.0f);
}

TEST_CASE("training steps are bit-deterministic for a fixed seed") {
  auto run = []() {
    Network<float> net = make_mlp<float>({5}, 3, {8}, 99);
    SgdState<float> opt = make_sgd_state(net, 0.05f, 0.9f);
    Batch<float> batch = fdtest::random_batch(net, 6, 4);
    for (int step = 0; step < 10; ++step) {
      Gradients<float> g = param_gradients(net, batch);
      sgd_step(net, g, opt);
    }
    return net;
  };
  Network<float> a = run(), b = run();
  for (std::size_t i = 0; i < a.layers.size(); ++i)
    CHECK((a.layers[i].weight.data == b.layers[i].weight.data).all());
}

TEST_CASE("instrumented counter tracks input-gradient evaluations only") {
  Network<float> net = make_mlp<float>({4}, 2, {6}, 11);
  Batch<float> batch = fdtest::random_batch(net, 3, 8);
  reset_input_grad_eval_count();
  param_gradients(net, batch);
  CHECK(input_grad_eval_count().load() == 0);
  input_gradient(net, batch);
  input_gradient(net, batch);
  CHECK(reset_input_grad_eval_count() == 2);
}
