#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "adv/rng.hpp"
#include "adv/tensor.hpp"

using namespace adv;

TEST_CASE("tensor shape and storage agree") {
  Tensor<float> t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.data.size() == shape_numel(t.shape));
  CHECK_THROWS_AS(Tensor<float>({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor<float>({2, 3}, ArrayX<float>::Zero(5)), ShapeError);
}

TEST_CASE("row-major indexing") {
  Tensor<float> t = Tensor<float>::from({2, 2}, {1, 2, 3, 4});
  CHECK(t.at({0, 0}) == 1);
  CHECK(t.at({0, 1}) == 2);
  CHECK(t.at({1, 0}) == 3);
  CHECK(t.at({1, 1}) == 4);
  CHECK_THROWS_AS(t.at({2, 0}), ShapeError);

  auto m = as_matrix(t, 2, 2);
  CHECK(m(1, 0) == 3);
  CHECK_THROWS_AS(as_matrix(t, 3, 2), ShapeError);
}

TEST_CASE("linf distance and finiteness") {
  Tensor<float> a = Tensor<float>::from({3}, {0.f, 0.5f, 1.f});
  Tensor<float> b = Tensor<float>::from({3}, {0.2f, 0.5f, 0.9f});
  CHECK(linf_dist(a, b) == doctest::Approx(0.2f));
  CHECK(all_finite(a));
  a.data[1] = std::numeric_limits<float>::infinity();
  CHECK_FALSE(all_finite(a));
}

TEST_CASE("splitmix64 streams are deterministic and distinct") {
  SplitMix64 a(42), b(42), c(43);
  for (int i = 0; i < 16; ++i) CHECK(a.next() == b.next());
  CHECK(SplitMix64(42).next() != c.next());
  CHECK(derive_stream(1, 2) != derive_stream(1, 3));
  CHECK(derive_stream(1, 2) != derive_stream(2, 2));
  CHECK(derive_stream(1, 2) == derive_stream(1, 2));
}

TEST_CASE("uniform draws stay in range") {
  SplitMix64 rng(7);
  for (int i = 0; i < 1000; ++i) {
    double u = rng.uniform(-0.25, 0.75);
    CHECK(u >= -0.25);
    CHECK(u < 0.75);
  }
}

TEST_CASE("permutation is a bijection") {
  SplitMix64 rng(11);
  auto p = random_permutation(100, rng);
  std::vector<bool> seen(100, false);
  for (auto v : p) {
    CHECK(v >= 0);
    CHECK(v < 100);
    CHECK_FALSE(seen[static_cast<std::size_t>(v)]);
    seen[static_cast<std::size_t>(v)] = true;
  }
}
