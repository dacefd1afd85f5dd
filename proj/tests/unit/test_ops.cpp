#include <gtest/gtest.h>

#include <cmath>

#include "blocknas/error.hpp"
#include "blocknas/ops.hpp"
#include "oracles.hpp"

using namespace blocknas;
using oracle::random_tensor;

namespace {

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<double> as_vector(const Tensor<double>& t) { return {t.data(), t.data() + t.size()}; }

// Central differences of loss() with respect to every element of t.
std::vector<double> numeric(Tensor<double>& t, const std::function<double()>& loss, double h = 1e-5) {
  std::vector<double> g(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double keep = t[i];
    t[i] = keep + h;
    const double up = loss();
    t[i] = keep - h;
    const double down = loss();
    t[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(SamePadding, Geometry) {
  EXPECT_EQ(ops::same_padding(32, 3, 1).out, 32);
  EXPECT_EQ(ops::same_padding(32, 3, 1).before, 1);
  EXPECT_EQ(ops::same_padding(32, 1, 2).out, 16);
  EXPECT_EQ(ops::same_padding(32, 1, 2).before, 0);
  EXPECT_EQ(ops::same_padding(5, 5, 2).out, 3);
  EXPECT_EQ(ops::same_padding(5, 5, 2).before, 2);
  EXPECT_EQ(ops::same_padding(4, 3, 2).before, 0);
}

TEST(Conv2d, IdentityKernel) {
  Random rng(1);
  const Tensor<double> x = random_tensor({2, 5, 5, 3}, rng);
  Tensor<double> w({1, 1, 3, 3});
  for (std::size_t c = 0; c < 3; ++c) w[c * 3 + c] = 1.0;
  EXPECT_EQ(ops::conv2d(x, w, 1), x);
}

TEST(Conv2d, MatchesNestedLoops) {
  Random rng(2);
  const Tensor<double> x = random_tensor({1, 5, 5, 2}, rng);
  const Tensor<double> w = random_tensor({3, 3, 2, 3}, rng);
  EXPECT_LE(max_abs_diff(ops::conv2d(x, w, 1), oracle::conv2d(x, w, 1)), 1e-12);
  for (int k : {1, 3, 5})
    for (int s : {1, 2}) {
      const Tensor<double> xi = random_tensor({2, 1 + rng.uniform_index(8), 1 + rng.uniform_index(8), 1 + rng.uniform_index(4)}, rng);
      const Tensor<double> wi = random_tensor({static_cast<std::size_t>(k), static_cast<std::size_t>(k), xi.dim(3), 3}, rng);
      EXPECT_LE(max_abs_diff(ops::conv2d(xi, wi, s), oracle::conv2d(xi, wi, s)), 1e-12);
    }
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Random rng(100 + seed);
    const int k = 1 + 2 * static_cast<int>(rng.uniform_index(3));
    const int s = 1 + static_cast<int>(rng.uniform_index(2));
    Tensor<double> x = random_tensor({2, 5, 4, 2}, rng);
    Tensor<double> w = random_tensor({static_cast<std::size_t>(k), static_cast<std::size_t>(k == 5 ? 1 : k), 2, 3}, rng);
    const Tensor<double> r = random_tensor(ops::conv2d(x, w, s).shape(), rng);
    auto loss = [&] { return dot(ops::conv2d(x, w, s), r); };
    Tensor<double> dx(x.shape()), dw(w.shape());
    ops::conv2d_backward(x, w, s, r, &dx, &dw);
    EXPECT_LT(oracle::max_relative_error(as_vector(dx), numeric(x, loss)), 1e-6);
    EXPECT_LT(oracle::max_relative_error(as_vector(dw), numeric(w, loss)), 1e-6);
  }
}

TEST(Conv2d, BackwardAccumulates) {
  Random rng(4);
  const Tensor<double> x = random_tensor({1, 4, 4, 2}, rng), w = random_tensor({3, 3, 2, 2}, rng);
  const Tensor<double> dy = random_tensor({1, 4, 4, 2}, rng);
  Tensor<double> once(x.shape()), twice(x.shape());
  ops::conv2d_backward(x, w, 1, dy, &once, static_cast<Tensor<double>*>(nullptr));
  ops::conv2d_backward(x, w, 1, dy, &twice, static_cast<Tensor<double>*>(nullptr));
  ops::conv2d_backward(x, w, 1, dy, &twice, static_cast<Tensor<double>*>(nullptr));
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_NEAR(twice[i], 2 * once[i], 1e-12);
}

TEST(Depthwise, SingleChannelEqualsConv) {
  Random rng(5);
  const Tensor<double> x = random_tensor({2, 6, 6, 1}, rng);
  const Tensor<double> w = random_tensor({3, 3, 1}, rng);
  Tensor<double> w4({3, 3, 1, 1}, std::vector<double>(w.data(), w.data() + 9));
  for (int s : {1, 2}) EXPECT_LE(max_abs_diff(ops::depthwise_conv(x, w, s), ops::conv2d(x, w4, s)), 1e-12);
}

TEST(Depthwise, OnesIsIdentityAndMatchesLoops) {
  Random rng(6);
  const Tensor<double> x = random_tensor({2, 5, 5, 3}, rng);
  EXPECT_EQ(ops::depthwise_conv(x, Tensor<double>({1, 1, 3}, 1.0), 1), x);
  const Tensor<double> w = random_tensor({5, 5, 3}, rng);
  EXPECT_LE(max_abs_diff(ops::depthwise_conv(x, w, 2), oracle::depthwise(x, w, 2)), 1e-12);
}

TEST(Depthwise, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Random rng(200 + seed);
    const int s = 1 + static_cast<int>(rng.uniform_index(2));
    Tensor<double> x = random_tensor({1, 4, 4, 3}, rng);
    Tensor<double> w = random_tensor({3, 3, 3}, rng);
    const Tensor<double> r = random_tensor(ops::depthwise_conv(x, w, s).shape(), rng);
    auto loss = [&] { return dot(ops::depthwise_conv(x, w, s), r); };
    Tensor<double> dx(x.shape()), dw(w.shape());
    ops::depthwise_conv_backward(x, w, s, r, &dx, &dw);
    EXPECT_LT(oracle::max_relative_error(as_vector(dx), numeric(x, loss)), 1e-6);
    EXPECT_LT(oracle::max_relative_error(as_vector(dw), numeric(w, loss)), 1e-6);
  }
}

TEST(BatchNorm, NormalizesInTrainMode) {
  Random rng(7);
  Tensor<double> x = random_tensor({4, 3, 3, 2}, rng, 3.0);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += i % 2 ? 5.0 : -2.0;
  ops::BatchNormCache<double> cache;
  const Tensor<double> y = ops::batch_norm_train(x, Tensor<double>({2}, 1.0), Tensor<double>({2}, 0.0), cache);
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0, sq = 0, var_x = 0, mean_x = 0;
    const std::size_t m = x.size() / 2;
    for (std::size_t i = c; i < y.size(); i += 2) mean += y[i] / m, mean_x += x[i] / m;
    for (std::size_t i = c; i < y.size(); i += 2) sq += (y[i] - mean) * (y[i] - mean) / m,
                                                  var_x += (x[i] - mean_x) * (x[i] - mean_x) / m;
    EXPECT_NEAR(mean, 0.0, 1e-6);
    EXPECT_NEAR(sq, var_x / (var_x + ops::kBatchNormEpsilon), 1e-6);
  }
}

TEST(BatchNorm, AffineOnNormalizedInput) {
  Tensor<double> x({2, 1, 1, 1}, std::vector<double>{-1.0, 1.0});
  const Tensor<double> rm({1}, 0.0), rv({1}, 1.0 - ops::kBatchNormEpsilon);
  const Tensor<double> y = ops::batch_norm_eval(x, Tensor<double>({1}, 2.0), Tensor<double>({1}, 3.0), rm, rv);
  EXPECT_NEAR(y[0], 1.0, 1e-12);
  EXPECT_NEAR(y[1], 5.0, 1e-12);
}

TEST(BatchNorm, RunningStatistics) {
  Tensor<double> x({2, 1, 1, 1}, std::vector<double>{1.0, 3.0});
  ops::BatchNormCache<double> cache;
  ops::batch_norm_train(x, Tensor<double>({1}, 1.0), Tensor<double>({1}, 0.0), cache);
  Tensor<double> rm({1}, 0.0), rv({1}, 1.0);
  ops::update_running_stats(cache, 2, rm, rv);
  EXPECT_NEAR(rm[0], 0.1 * 2.0, 1e-12);
  EXPECT_NEAR(rv[0], 0.9 * 1.0 + 0.1 * 2.0, 1e-12);  // unbiased variance of {1, 3} is 2
  EXPECT_THROW(ops::batch_norm_train(Tensor<double>({1, 2, 2, 1}), Tensor<double>({1}, 1.0),
                                     Tensor<double>({1}, 0.0), cache),
               ConfigError);
}

TEST(BatchNorm, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Random rng(300 + seed);
    Tensor<double> x = random_tensor({3, 2, 2, 3}, rng);
    Tensor<double> g = random_tensor({3}, rng), b = random_tensor({3}, rng);
    const Tensor<double> r = random_tensor(x.shape(), rng);
    auto loss = [&] {
      ops::BatchNormCache<double> c;
      return dot(ops::batch_norm_train(x, g, b, c), r);
    };
    ops::BatchNormCache<double> cache;
    ops::batch_norm_train(x, g, b, cache);
    Tensor<double> dx(x.shape()), dg(g.shape()), db(b.shape());
    ops::batch_norm_backward(r, g, cache, &dx, &dg, &db);
    EXPECT_LT(oracle::max_relative_error(as_vector(dx), numeric(x, loss)), 1e-5);
    EXPECT_LT(oracle::max_relative_error(as_vector(dg), numeric(g, loss)), 1e-5);
    EXPECT_LT(oracle::max_relative_error(as_vector(db), numeric(b, loss)), 1e-5);
  }
}

TEST(Combine, AddConcatAndStochastic) {
  Random rng(8);
  const Tensor<double> x = random_tensor({1, 2, 2, 3}, rng), y = random_tensor({1, 2, 2, 3}, rng);
  const Tensor<double>* xx[] = {&x, &x};
  const double ones[] = {1.0, 1.0};
  const Tensor<double> two = ops::weighted_sum<double>(xx, ones);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(two[i], 2 * x[i]);
  const Tensor<double>* xy[] = {&x, &y};
  const double half[] = {0.5, 0.5};
  const Tensor<double> avg = ops::weighted_sum<double>(xy, half);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(avg[i], 0.5 * x[i] + 0.5 * y[i]);

  std::vector<Tensor<double>> parts;
  for (int i = 0; i < 4; ++i) parts.push_back(random_tensor({2, 3, 3, 16}, rng));
  const Tensor<double>* ptrs[] = {&parts[0], &parts[1], &parts[2], &parts[3]};
  const Tensor<double> cat = ops::concat_channels<double>(ptrs);
  ASSERT_EQ(cat.dim(3), 64u);
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t h = 0; h < 3; ++h)
        for (std::size_t w = 0; w < 3; ++w)
          for (std::size_t c = 0; c < 16; ++c) EXPECT_EQ(cat.at(n, h, w, p * 16 + c), parts[p].at(n, h, w, c));
  std::vector<Tensor<double>> back(4, Tensor<double>({2, 3, 3, 16}));
  Tensor<double>* outs[] = {&back[0], &back[1], &back[2], &back[3]};
  ops::concat_channels_backward<double>(cat, outs);
  for (std::size_t p = 0; p < 4; ++p) EXPECT_EQ(back[p], parts[p]);
}

TEST(Combine, SimplexWeights) {
  Random rng(9);
  for (int t = 0; t < 1000; ++t) {
    const auto w = ops::simplex_weights(1 + rng.uniform_index(8), rng);
    double s = 0;
    for (double v : w) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Activation, ReluAndSoftmax) {
  Random rng(10);
  const Tensor<double> x = random_tensor({3, 2, 2, 4}, rng);
  EXPECT_EQ(ops::relu(ops::relu(x)), ops::relu(x));
  const Tensor<double> logits = random_tensor({5, 1, 1, 7}, rng, 10.0);
  const Tensor<double> p = ops::softmax(logits);
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 7; ++c) s += p[r * 7 + c];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Activation, CrossEntropyLimits) {
  const int labels[] = {2, 0};
  Tensor<double> uniform({2, 1, 1, 5}, 0.3);
  EXPECT_NEAR(ops::softmax_cross_entropy<double>(uniform, labels, nullptr), std::log(5.0), 1e-12);
  Tensor<double> sharp({2, 1, 1, 5}, 0.0);
  sharp[2] = 200.0;
  sharp[5] = 200.0;
  EXPECT_LT(ops::softmax_cross_entropy<double>(sharp, labels, nullptr), 1e-12);
  const int bad[] = {5, 0};
  EXPECT_THROW(ops::softmax_cross_entropy<double>(uniform, bad, nullptr), ConfigError);
}

TEST(Activation, CrossEntropyGradient) {
  Random rng(11);
  Tensor<double> logits = random_tensor({3, 1, 1, 4}, rng);
  const int labels[] = {1, 3, 0};
  Tensor<double> d(logits.shape());
  ops::softmax_cross_entropy<double>(logits, labels, &d);
  auto loss = [&] { return ops::softmax_cross_entropy<double>(logits, labels, nullptr); };
  EXPECT_LT(oracle::max_relative_error(as_vector(d), numeric(logits, loss)), 1e-7);
}

TEST(Dense, GradientNearLinear) {
  Random rng(12);
  Tensor<double> x = random_tensor({3, 1, 1, 5}, rng), w = random_tensor({5, 4}, rng), b = random_tensor({4}, rng);
  const Tensor<double> r = random_tensor({3, 1, 1, 4}, rng);
  auto loss = [&] { return dot(ops::dense(x, w, b), r); };
  Tensor<double> dx(x.shape()), dw(w.shape()), db(b.shape());
  ops::dense_backward(x, w, r, &dx, &dw, &db);
  EXPECT_LT(oracle::max_relative_error(as_vector(dx), numeric(x, loss)), 1e-8);
  EXPECT_LT(oracle::max_relative_error(as_vector(dw), numeric(w, loss)), 1e-8);
  EXPECT_LT(oracle::max_relative_error(as_vector(db), numeric(b, loss)), 1e-8);
}

TEST(Pool, GlobalAverage) {
  Random rng(13);
  Tensor<double> x = random_tensor({2, 3, 3, 2}, rng);
  const Tensor<double> r = random_tensor({2, 1, 1, 2}, rng);
  auto loss = [&] { return dot(ops::global_avg_pool(x), r); };
  Tensor<double> dx(x.shape());
  ops::global_avg_pool_backward(r, dx);
  EXPECT_LT(oracle::max_relative_error(as_vector(dx), numeric(x, loss)), 1e-8);
}
