#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>

#include "doctest.h"
#include "seqbench/rng.hpp"
#include "seqbench/tensor.hpp"

using namespace seqbench;

TEST_CASE("factories produce the declared shape and contents") {
  auto z = Tensor<double>::zeros({2, 3});
  CHECK(z.shape() == Shape{2, 3});
  CHECK(z.numel() == 6);
  CHECK(z.rank() == 2);
  CHECK(z.extent(1) == 3);
  for (double v : z.values()) CHECK(v == 0.0);

  auto f = Tensor<float>::full({4}, 2.5f);
  for (float v : f.values()) CHECK(v == 2.5f);

  auto t = Tensor<double>::of({2, 2}, {1, 2, 3, 4});
  CHECK(t.values()[3] == 4.0);

  auto s = Tensor<double>::scalar(7.0);
  CHECK(s.item() == 7.0);
  // scalars are carried as one-element vectors
  CHECK(s.rank() == 1);
  CHECK(s.shape() == Shape{1});
  CHECK(s.numel() == 1);
}

TEST_CASE("of() rejects a value count that disagrees with the shape") {
  CHECK_THROWS_AS(Tensor<double>::of({2, 2}, {1, 2, 3}), ShapeError);
}

TEST_CASE("item() requires a single element") {
  auto t = Tensor<double>::of({2}, {1, 2});
  CHECK_THROWS_AS(t.item(), ContractError);
}

TEST_CASE("copies share storage; fresh tensors do not") {
  auto a = Tensor<double>::zeros({3});
  Tensor<double> b = a;
  b.values_mut()[0] = 9.0;
  CHECK(a.values()[0] == 9.0);
  CHECK(a.same_storage(b));
  CHECK_FALSE(a.same_storage(Tensor<double>::zeros({3})));
}

TEST_CASE("uniform stays in range and is deterministic per seed") {
  RngStream rng1(42);
  RngStream rng2(42);
  auto a = Tensor<double>::uniform({5, 7}, -2.0, 3.0, rng1);
  auto b = Tensor<double>::uniform({5, 7}, -2.0, 3.0, rng2);
  bool all_equal_values = true;
  for (int64_t i = 0; i < a.numel(); ++i) {
    CHECK(a.values()[i] >= -2.0);
    CHECK(a.values()[i] < 3.0);
    CHECK(a.values()[i] == b.values()[i]);
    if (a.values()[i] != a.values()[0]) all_equal_values = false;
  }
  CHECK_FALSE(all_equal_values);

  RngStream rng3(43);
  auto c = Tensor<double>::uniform({5, 7}, -2.0, 3.0, rng3);
  CHECK(std::memcmp(a.values().data(), c.values().data(),
                    sizeof(double) * static_cast<size_t>(a.numel())) != 0);
}

TEST_CASE("glorot bound for a [4,4] kernel is sqrt(6/8)") {
  // sqrt(6 / (fan_in + fan_out)) = sqrt(0.75)
  const double bound = 0.8660254037844386;
  RngStream rng(7);
  auto k = Tensor<double>::glorot_uniform({4, 4}, rng);
  double max_abs = 0.0;
  for (double v : k.values()) max_abs = std::max(max_abs, std::fabs(v));
  CHECK(max_abs <= bound);
  CHECK(max_abs > 0.5 * bound);  // a draw this far below the bound is ~1e-11
}

TEST_CASE("glorot treats leading kernel extents as receptive field") {
  // [k, in, out] = [3, 2, 4]: fan_in 6, fan_out 12, bound sqrt(6/18)
  const double bound = std::sqrt(6.0 / 18.0);
  RngStream rng(11);
  auto k = Tensor<double>::glorot_uniform({3, 2, 4}, rng);
  for (double v : k.values()) CHECK(std::fabs(v) <= bound);
}

TEST_CASE("glorot requires rank >= 2") {
  RngStream rng(1);
  CHECK_THROWS_AS(Tensor<double>::glorot_uniform({4}, rng), ShapeError);
}

TEST_CASE("gradient buffer lifecycle") {
  auto t = Tensor<double>::zeros({3}, true);
  CHECK(t.requires_grad());
  CHECK_FALSE(t.has_grad());
  auto g = t.grad_accum();
  g[1] += 2.0;
  CHECK(t.has_grad());
  CHECK(t.grad()[1] == 2.0);
  CHECK(t.grad()[0] == 0.0);
  t.zero_grad();
  // the buffer survives a zero_grad; only its contents reset
  CHECK(t.has_grad());
  CHECK(t.grad()[1] == 0.0);
}

TEST_CASE("tracked flag is independent of requires_grad") {
  auto t = Tensor<double>::zeros({2});
  CHECK_FALSE(grad_flows(t));
  t.set_tracked(true);
  CHECK(grad_flows(t));
  t.set_tracked(false);
  t.set_requires_grad(true);
  CHECK(grad_flows(t));
}
