#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "seqbench/ops.hpp"
#include "seqbench/rng.hpp"
#include "seqbench/tape.hpp"

using namespace seqbench;
using doctest::Approx;

TEST_CASE("elementwise add / mul / scale") {
  auto a = Tensor<double>::of({2, 2}, {1, 2, 3, 4});
  auto b = Tensor<double>::of({2, 2}, {10, 20, 30, 40});
  auto s = ops::add(a, b);
  CHECK(s.values()[3] == 44.0);
  auto p = ops::mul(a, b);
  CHECK(p.values()[2] == 90.0);
  auto c = ops::scale(a, 0.5);
  CHECK(c.values()[1] == 1.0);
  CHECK_THROWS_AS(ops::add(a, Tensor<double>::zeros({2, 3})), ShapeError);
}

TEST_CASE("matmul oracle") {
  // [[1,2],[3,4]] x [[5,6],[7,8]] = [[19,22],[43,50]]
  auto a = Tensor<double>::of({2, 2}, {1, 2, 3, 4});
  auto b = Tensor<double>::of({2, 2}, {5, 6, 7, 8});
  auto c = ops::matmul(a, b);
  const std::vector<double> want = {19, 22, 43, 50};
  for (int i = 0; i < 4; ++i) CHECK(c.values()[i] == want[static_cast<size_t>(i)]);
}

TEST_CASE("matmul_nt equals matmul against the transpose") {
  RngStream rng(3);
  auto a = Tensor<double>::uniform({3, 4}, -1, 1, rng);
  auto bt = Tensor<double>::uniform({5, 4}, -1, 1, rng);
  auto out = ops::matmul_nt(a, bt);
  CHECK(out.shape() == Shape{3, 5});
  for (int64_t i = 0; i < 3; ++i) {
    for (int64_t j = 0; j < 5; ++j) {
      double dot = 0;
      for (int64_t k = 0; k < 4; ++k) {
        dot += a.values()[static_cast<size_t>(i * 4 + k)] *
               bt.values()[static_cast<size_t>(j * 4 + k)];
      }
      CHECK(out.values()[static_cast<size_t>(i * 5 + j)] == Approx(dot).epsilon(1e-12));
    }
  }
}

TEST_CASE("softmax of [1,2,3]") {
  auto x = Tensor<double>::of({3}, {1, 2, 3});
  auto p = ops::softmax(x);
  CHECK(p.values()[0] == Approx(0.09003057317038046).epsilon(1e-12));
  CHECK(p.values()[1] == Approx(0.24472847105479764).epsilon(1e-12));
  CHECK(p.values()[2] == Approx(0.6652409557748219).epsilon(1e-12));
  const double total = p.values()[0] + p.values()[1] + p.values()[2];
  CHECK(total == Approx(1.0).epsilon(1e-12));
}

TEST_CASE("softmax normalizes each row independently and shrugs off shifts") {
  auto x = Tensor<double>::of({2, 3}, {1, 2, 3, 1001, 1002, 1003});
  auto p = ops::softmax(x);
  for (int64_t r = 0; r < 2; ++r) {
    double total = 0;
    for (int64_t c = 0; c < 3; ++c) total += p.values()[static_cast<size_t>(r * 3 + c)];
    CHECK(total == Approx(1.0).epsilon(1e-12));
  }
  // Rows differ by a constant shift, so the probabilities must agree.
  for (int64_t c = 0; c < 3; ++c) {
    CHECK(p.values()[static_cast<size_t>(c)] ==
          Approx(p.values()[static_cast<size_t>(3 + c)]).epsilon(1e-12));
  }
}

TEST_CASE("activations at known points") {
  auto x = Tensor<double>::of({3}, {-1, 0, 2});
  auto r = ops::activation(x, Activation::kReLU);
  CHECK(r.values()[0] == 0.0);
  CHECK(r.values()[1] == 0.0);
  CHECK(r.values()[2] == 2.0);
  auto t = ops::activation(x, Activation::kTanh);
  CHECK(t.values()[2] == Approx(std::tanh(2.0)).epsilon(1e-15));
  auto s = ops::activation(x, Activation::kSigmoid);
  CHECK(s.values()[1] == Approx(0.5).epsilon(1e-15));
  auto n = ops::activation(x, Activation::kNone);
  CHECK(n.values()[0] == -1.0);
}

TEST_CASE("layer_norm of [1,3] with unit gain is [-1,1] up to eps") {
  auto x = Tensor<double>::of({1, 2}, {1, 3});
  auto gain = Tensor<double>::full({2}, 1.0);
  auto bias = Tensor<double>::zeros({2});
  auto y = ops::layer_norm(x, gain, bias, 1e-5);
  // mean 2, var 1; the eps inside the sqrt pulls values slightly inward
  CHECK(y.values()[0] == Approx(-1.0).epsilon(1e-4));
  CHECK(y.values()[1] == Approx(1.0).epsilon(1e-4));
  CHECK(std::fabs(y.values()[1]) < 1.0);
}

TEST_CASE("conv1d oracle: ones kernel, stride 2") {
  // input [1,2,3,4,5], width-2 sum filter, stride 2 -> [1+2, 3+4] = [3, 7]
  auto x = Tensor<double>::of({5, 1}, {1, 2, 3, 4, 5});
  auto k = Tensor<double>::full({2, 1, 1}, 1.0);
  auto b = Tensor<double>::zeros({1});
  auto y = ops::conv1d(x, k, b, 2);
  CHECK(y.shape() == Shape{2, 1});
  CHECK(y.values()[0] == 3.0);
  CHECK(y.values()[1] == 7.0);
}

TEST_CASE("conv1d bias and channel mixing") {
  // 2 in-channels, 1 out, width 1, kernel picks 2*ch0 - ch1, bias 10
  auto x = Tensor<double>::of({3, 2}, {1, 4, 2, 5, 3, 6});
  auto k = Tensor<double>::of({1, 2, 1}, {2, -1});
  auto b = Tensor<double>::of({1}, {10});
  auto y = ops::conv1d(x, k, b, 1);
  CHECK(y.shape() == Shape{3, 1});
  CHECK(y.values()[0] == 2 * 1 - 4 + 10);
  CHECK(y.values()[2] == 2 * 3 - 6 + 10);
}

TEST_CASE("conv1d rejects windows longer than the input") {
  auto x = Tensor<double>::zeros({3, 1});
  auto k = Tensor<double>::zeros({4, 1, 1});
  auto b = Tensor<double>::zeros({1});
  CHECK_THROWS_AS(ops::conv1d(x, k, b, 1), ShapeError);
}

TEST_CASE("maxpool1d oracle") {
  auto x = Tensor<double>::of({6, 1}, {3, 1, 2, 0, 5, 1});
  auto y = ops::maxpool1d(x, 3, 3);
  CHECK(y.shape() == Shape{2, 1});
  CHECK(y.values()[0] == 3.0);
  CHECK(y.values()[1] == 5.0);
  // leftover steps that do not fill a window are dropped
  auto z = ops::maxpool1d(x, 4, 4);
  CHECK(z.shape() == Shape{1, 1});
  CHECK(z.values()[0] == 3.0);
}

TEST_CASE("global_avg_pool1d oracle") {
  auto x = Tensor<double>::of({2, 2}, {2, 0, 4, 2});
  auto y = ops::global_avg_pool1d(x);
  CHECK(y.shape() == Shape{2});
  CHECK(y.values()[0] == 3.0);
  CHECK(y.values()[1] == 1.0);
}

TEST_CASE("global_avg_pool1d is bit-exact under time permutation") {
  // The mean is accumulated in ascending value order per channel, so any
  // reordering of the rows gives the identical float, not merely a close one.
  RngStream rng(99);
  auto x = Tensor<float>::uniform({37, 5}, -10.f, 10.f, rng);
  auto base = ops::global_avg_pool1d(x);

  std::vector<int64_t> perm(37);
  std::iota(perm.begin(), perm.end(), 0);
  RngStream shuffle_rng(123);
  for (int64_t i = 36; i > 0; --i) {
    const auto j = static_cast<int64_t>(
        shuffle_rng.next_below(static_cast<uint64_t>(i + 1)));
    std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
  }
  auto shuffled = Tensor<float>::zeros({37, 5});
  for (int64_t t = 0; t < 37; ++t) {
    for (int64_t c = 0; c < 5; ++c) {
      shuffled.values_mut()[static_cast<size_t>(t * 5 + c)] =
          x.values()[static_cast<size_t>(perm[static_cast<size_t>(t)] * 5 + c)];
    }
  }
  auto moved = ops::global_avg_pool1d(shuffled);
  CHECK(std::memcmp(base.values().data(), moved.values().data(),
                    sizeof(float) * 5) == 0);
}

TEST_CASE("slice_cols and concat_cols invert each other") {
  auto x = Tensor<double>::of({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  auto left = ops::slice_cols(x, 0, 2);
  auto right = ops::slice_cols(x, 2, 2);
  CHECK(left.values()[3] == 6.0);
  CHECK(right.values()[0] == 3.0);
  auto glued = ops::concat_cols<double>({left, right});
  CHECK(glued.shape() == x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) {
    CHECK(glued.values()[static_cast<size_t>(i)] ==
          x.values()[static_cast<size_t>(i)]);
  }
  CHECK_THROWS_AS(ops::slice_cols(x, 3, 2), IndexError);
}

TEST_CASE("stack_rows oracle") {
  auto a = Tensor<double>::of({3}, {1, 2, 3});
  auto b = Tensor<double>::of({3}, {4, 5, 6});
  auto s = ops::stack_rows<double>({a, b});
  CHECK(s.shape() == Shape{2, 3});
  CHECK(s.values()[4] == 5.0);
  auto c = Tensor<double>::of({2}, {0, 0});
  CHECK_THROWS_AS(ops::stack_rows<double>({a, c}), ShapeError);
}

TEST_CASE("reshape keeps the flat order and checks the element count") {
  auto x = Tensor<double>::of({2, 3}, {1, 2, 3, 4, 5, 6});
  auto y = ops::reshape(x, {3, 2});
  CHECK(y.shape() == Shape{3, 2});
  CHECK(y.values()[3] == 4.0);
  CHECK_THROWS_AS(ops::reshape(x, {4, 2}), ShapeError);
}

TEST_CASE("reverse_time flips rows only") {
  auto x = Tensor<double>::of({3, 2}, {1, 2, 3, 4, 5, 6});
  auto y = ops::reverse_time(x);
  CHECK(y.values()[0] == 5.0);
  CHECK(y.values()[1] == 6.0);
  CHECK(y.values()[4] == 1.0);
}

TEST_CASE("sum and sum_squares") {
  auto x = Tensor<double>::of({2, 2}, {1, -2, 3, -4});
  CHECK(ops::sum(x).item() == -2.0);
  CHECK(ops::sum_squares(x).item() == 30.0);
}

TEST_CASE("ops record on a tape only when a gradient can flow") {
  Tape<double> tape;
  auto plain = Tensor<double>::of({2}, {1, 2});
  auto frozen_out = ops::scale(plain, 2.0, &tape);
  CHECK(tape.size() == 0);
  CHECK_FALSE(frozen_out.tracked());

  auto leaf = Tensor<double>::of({2}, {1, 2}, true);
  auto tracked_out = ops::scale(leaf, 2.0, &tape);
  CHECK(tape.size() == 1);
  CHECK(tracked_out.tracked());

  // tracked output keeps downstream ops recording even without leaves
  auto second = ops::scale(tracked_out, 3.0, &tape);
  CHECK(tape.size() == 2);
  CHECK(second.tracked());
}
