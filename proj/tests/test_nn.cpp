#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "doppel/nn.hpp"
#include "doppel/random.hpp"

namespace doppel {
namespace {

using nn::Tensor;

void fill_normal(std::vector<float>& v, Rng& rng) {
  for (float& x : v) x = static_cast<float>(0.3 * rng.normal());
}

Tensor random_tensor(int n, int c, int h, int w, Rng& rng) {
  Tensor t(n, c, h, w);
  for (float& v : t.data) v = static_cast<float>(rng.normal());
  return t;
}

float& at(Tensor& t, int n, int c, int y, int x) {
  return t.data[((static_cast<std::size_t>(n) * t.c + c) * t.h + y) * t.w + x];
}
float at(const Tensor& t, int n, int c, int y, int x) {
  return t.data[((static_cast<std::size_t>(n) * t.c + c) * t.h + y) * t.w + x];
}

struct ConvShape {
  int in, out, k, stride, pad, h, w;
};

// Direct convolution oracle in double precision.
Tensor naive_conv(const Tensor& x, const std::vector<float>& weight, const ConvShape& s) {
  const int oh = (s.h + 2 * s.pad - s.k) / s.stride + 1;
  const int ow = (s.w + 2 * s.pad - s.k) / s.stride + 1;
  Tensor y(x.n, s.out, oh, ow);
  for (int n = 0; n < x.n; ++n) {
    for (int o = 0; o < s.out; ++o) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          for (int i = 0; i < s.in; ++i) {
            for (int ky = 0; ky < s.k; ++ky) {
              for (int kx = 0; kx < s.k; ++kx) {
                const int iy = oy * s.stride - s.pad + ky, ix = ox * s.stride - s.pad + kx;
                if (iy < 0 || ix < 0 || iy >= s.h || ix >= s.w) continue;
                acc += static_cast<double>(weight[((o * s.in + i) * s.k + ky) * s.k + kx]) * at(x, n, i, iy, ix);
              }
            }
          }
          at(y, n, o, oy, ox) = static_cast<float>(acc);
        }
      }
    }
  }
  return y;
}

class ConvTest : public ::testing::TestWithParam<ConvShape> {};

TEST_P(ConvTest, ForwardMatchesDirectConvolution) {
  const ConvShape s = GetParam();
  Rng rng(1);
  nn::Conv2d conv(s.in, s.out, s.k, s.stride, s.pad);
  fill_normal(conv.weight, rng);
  const Tensor x = random_tensor(2, s.in, s.h, s.w, rng);
  const Tensor y = conv.forward(x);
  const Tensor ref = naive_conv(x, conv.weight, s);
  ASSERT_TRUE(y.same_shape(ref));
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y.data[i], ref.data[i], 1e-4);
}

TEST_P(ConvTest, BackwardMatchesDirectGradients) {
  const ConvShape s = GetParam();
  Rng rng(2);
  nn::Conv2d conv(s.in, s.out, s.k, s.stride, s.pad);
  fill_normal(conv.weight, rng);
  const Tensor x = random_tensor(2, s.in, s.h, s.w, rng);
  const Tensor y = conv.forward(x);
  const Tensor dy = random_tensor(y.n, y.c, y.h, y.w, rng);
  conv.grad.assign(conv.weight.size(), 0.0f);
  const Tensor dx = conv.backward(x, dy, true);
  // d/dW and d/dx of sum(dy * conv(x)), accumulated directly.
  std::vector<double> gw(conv.weight.size(), 0.0);
  std::vector<double> gx(x.size(), 0.0);
  for (int n = 0; n < x.n; ++n) {
    for (int o = 0; o < s.out; ++o) {
      for (int oy = 0; oy < y.h; ++oy) {
        for (int ox = 0; ox < y.w; ++ox) {
          const double g = at(dy, n, o, oy, ox);
          for (int i = 0; i < s.in; ++i) {
            for (int ky = 0; ky < s.k; ++ky) {
              for (int kx = 0; kx < s.k; ++kx) {
                const int iy = oy * s.stride - s.pad + ky, ix = ox * s.stride - s.pad + kx;
                if (iy < 0 || ix < 0 || iy >= s.h || ix >= s.w) continue;
                const std::size_t wi = ((o * s.in + i) * s.k + ky) * s.k + kx;
                gw[wi] += g * at(x, n, i, iy, ix);
                gx[((static_cast<std::size_t>(n) * s.in + i) * s.h + iy) * s.w + ix] += g * conv.weight[wi];
              }
            }
          }
        }
      }
    }
  }
  for (std::size_t i = 0; i < gw.size(); ++i) EXPECT_NEAR(conv.grad[i], gw[i], 1e-3 * (1 + std::abs(gw[i])));
  ASSERT_TRUE(dx.same_shape(x));
  for (std::size_t i = 0; i < gx.size(); ++i) EXPECT_NEAR(dx.data[i], gx[i], 1e-3 * (1 + std::abs(gx[i])));
  // Gradients accumulate across calls.
  const std::vector<float> first = conv.grad;
  conv.backward(x, dy, false);
  for (std::size_t i = 0; i < first.size(); ++i) EXPECT_NEAR(conv.grad[i], 2 * first[i], 1e-4 * (1 + std::abs(first[i])));
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvTest,
                         ::testing::Values(ConvShape{3, 4, 7, 2, 3, 13, 11}, ConvShape{4, 5, 3, 2, 1, 9, 8},
                                           ConvShape{3, 3, 3, 1, 1, 7, 7}, ConvShape{4, 6, 1, 2, 0, 8, 9},
                                           ConvShape{5, 2, 1, 1, 0, 6, 5}));

TEST(BatchNorm, TrainForwardNormalizesAndTracksStatistics) {
  Rng rng(3);
  nn::BatchNorm2d bn(3);
  Tensor x = random_tensor(4, 3, 5, 5, rng);
  for (std::size_t i = 0; i < x.size(); ++i) x.data[i] = x.data[i] * 2.0f + 1.0f;
  nn::BatchNorm2d::Cache cache;
  const Tensor y = bn.forward_train(x, cache);
  for (int c = 0; c < 3; ++c) {
    double sum = 0, sq = 0, xs = 0, xsq = 0;
    const int count = 4 * 25;
    for (int n = 0; n < 4; ++n) {
      for (int p = 0; p < 25; ++p) {
        const double v = at(y, n, c, p / 5, p % 5), u = at(x, n, c, p / 5, p % 5);
        sum += v;
        sq += v * v;
        xs += u;
        xsq += u * u;
      }
    }
    EXPECT_NEAR(sum / count, 0.0, 1e-5);
    EXPECT_NEAR(sq / count, 1.0, 1e-3);
    const double mean = xs / count;
    const double unbiased = (xsq - count * mean * mean) / (count - 1);
    EXPECT_NEAR(bn.running_mean[c], 0.1 * mean, 1e-5);
    EXPECT_NEAR(bn.running_var[c], 0.9 + 0.1 * unbiased, 1e-4);
  }
}

TEST(BatchNorm, EvalUsesRunningStatistics) {
  nn::BatchNorm2d bn(2);
  bn.running_mean = {1.0f, -2.0f};
  bn.running_var = {4.0f, 0.25f};
  bn.gamma = {2.0f, 1.0f};
  bn.beta = {0.5f, 0.0f};
  Tensor x(1, 2, 1, 1);
  x.data = {3.0f, -1.0f};
  const Tensor y = bn.forward_eval(x);
  EXPECT_NEAR(y.data[0], 2.0 * (3.0 - 1.0) / std::sqrt(4.0 + 1e-5) + 0.5, 1e-5);
  EXPECT_NEAR(y.data[1], (-1.0 + 2.0) / std::sqrt(0.25 + 1e-5), 1e-4);
}

TEST(BatchNorm, BackwardMatchesFiniteDifferences) {
  Rng rng(4);
  nn::BatchNorm2d bn(2);
  bn.gamma = {1.5f, 0.7f};
  bn.beta = {0.1f, -0.3f};
  const Tensor x = random_tensor(3, 2, 3, 3, rng);
  const Tensor r = random_tensor(3, 2, 3, 3, rng);
  auto loss = [&](const Tensor& in, nn::BatchNorm2d layer) {
    nn::BatchNorm2d::Cache c;
    const Tensor y = layer.forward_train(in, c);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += static_cast<double>(y.data[i]) * r.data[i];
    return s;
  };
  nn::BatchNorm2d::Cache cache;
  nn::BatchNorm2d work = bn;
  work.forward_train(x, cache);
  work.gamma_grad.assign(2, 0.0f);
  work.beta_grad.assign(2, 0.0f);
  const Tensor dx = work.backward(cache, r);
  const double h = 1e-2;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor xp = x, xm = x;
    xp.data[i] += static_cast<float>(h);
    xm.data[i] -= static_cast<float>(h);
    const double fd = (loss(xp, bn) - loss(xm, bn)) / (2 * h);
    EXPECT_NEAR(dx.data[i], fd, 2e-3 + 2e-3 * std::abs(fd));
  }
  for (int c = 0; c < 2; ++c) {
    nn::BatchNorm2d p = bn, m = bn;
    p.gamma[c] += static_cast<float>(h);
    m.gamma[c] -= static_cast<float>(h);
    EXPECT_NEAR(work.gamma_grad[c], (loss(x, p) - loss(x, m)) / (2 * h), 2e-3);
    p = bn;
    m = bn;
    p.beta[c] += static_cast<float>(h);
    m.beta[c] -= static_cast<float>(h);
    EXPECT_NEAR(work.beta_grad[c], (loss(x, p) - loss(x, m)) / (2 * h), 2e-3);
  }
}

TEST(Relu, ForwardAndBackward) {
  Tensor x(1, 1, 1, 4);
  x.data = {-1.0f, 0.0f, 2.0f, -0.5f};
  nn::relu_inplace(x);
  EXPECT_EQ(x.data, (std::vector<float>{0.0f, 0.0f, 2.0f, 0.0f}));
  Tensor dy(1, 1, 1, 4, 1.0f);
  nn::relu_backward(x, dy);
  EXPECT_EQ(dy.data, (std::vector<float>{0.0f, 0.0f, 1.0f, 0.0f}));
}

TEST(MaxPool, ForwardMatchesWindowMaximum) {
  Rng rng(5);
  const Tensor x = random_tensor(2, 3, 9, 8, rng);
  std::vector<std::int32_t> argmax;
  const Tensor y = nn::maxpool_forward(x, &argmax);
  EXPECT_EQ(y.h, 5);
  EXPECT_EQ(y.w, 4);
  for (int n = 0; n < 2; ++n) {
    for (int c = 0; c < 3; ++c) {
      for (int oy = 0; oy < y.h; ++oy) {
        for (int ox = 0; ox < y.w; ++ox) {
          float best = -std::numeric_limits<float>::infinity();
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
              if (iy >= 0 && ix >= 0 && iy < 9 && ix < 8) best = std::max(best, at(x, n, c, iy, ix));
            }
          }
          EXPECT_EQ(at(y, n, c, oy, ox), best);
        }
      }
    }
  }
  // Backward sends each output gradient to its window's maximum.
  Tensor dy(y.n, y.c, y.h, y.w, 1.0f);
  const Tensor dx = nn::maxpool_backward(x, argmax, dy);
  double total = 0;
  for (float v : dx.data) total += v;
  EXPECT_EQ(total, static_cast<double>(y.size()));
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (dx.data[i] != 0.0f) {
      bool is_some_max = false;
      for (float v : y.data) is_some_max |= (v == x.data[i]);
      EXPECT_TRUE(is_some_max);
    }
  }
}

TEST(GlobalAvgPool, ForwardAndBackward) {
  Rng rng(6);
  const Tensor x = random_tensor(2, 3, 4, 5, rng);
  const Tensor y = nn::global_avg_pool(x);
  for (int n = 0; n < 2; ++n) {
    for (int c = 0; c < 3; ++c) {
      double s = 0;
      for (int p = 0; p < 20; ++p) s += at(x, n, c, p / 5, p % 5);
      EXPECT_NEAR(at(y, n, c, 0, 0), s / 20, 1e-5);
    }
  }
  Tensor dy(2, 3, 1, 1);
  for (std::size_t i = 0; i < dy.size(); ++i) dy.data[i] = static_cast<float>(i + 1);
  const Tensor dx = nn::global_avg_pool_backward(x, dy);
  EXPECT_NEAR(at(dx, 1, 2, 3, 4), 6.0 / 20.0, 1e-7);
}

TEST(Linear, ForwardAndBackward) {
  Rng rng(7);
  nn::Linear fc(5, 3);
  fill_normal(fc.weight, rng);
  fill_normal(fc.bias, rng);
  const Tensor x = random_tensor(4, 5, 1, 1, rng);
  const Tensor y = fc.forward(x);
  const Tensor dy = random_tensor(4, 3, 1, 1, rng);
  fc.weight_grad.assign(fc.weight.size(), 0.0f);
  fc.bias_grad.assign(fc.bias.size(), 0.0f);
  const Tensor dx = fc.backward(x, dy);
  for (int n = 0; n < 4; ++n) {
    for (int o = 0; o < 3; ++o) {
      double acc = fc.bias[o];
      for (int i = 0; i < 5; ++i) acc += static_cast<double>(fc.weight[o * 5 + i]) * x.data[n * 5 + i];
      EXPECT_NEAR(y.data[n * 3 + o], acc, 1e-5);
    }
  }
  for (int o = 0; o < 3; ++o) {
    double gb = 0;
    for (int n = 0; n < 4; ++n) gb += dy.data[n * 3 + o];
    EXPECT_NEAR(fc.bias_grad[o], gb, 1e-5);
    for (int i = 0; i < 5; ++i) {
      double gw = 0;
      for (int n = 0; n < 4; ++n) gw += static_cast<double>(dy.data[n * 3 + o]) * x.data[n * 5 + i];
      EXPECT_NEAR(fc.weight_grad[o * 5 + i], gw, 1e-5);
    }
  }
  for (int n = 0; n < 4; ++n) {
    for (int i = 0; i < 5; ++i) {
      double g = 0;
      for (int o = 0; o < 3; ++o) g += static_cast<double>(dy.data[n * 3 + o]) * fc.weight[o * 5 + i];
      EXPECT_NEAR(dx.data[n * 5 + i], g, 1e-5);
    }
  }
}

}  // namespace
}  // namespace doppel
