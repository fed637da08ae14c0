#include "doppel/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include <Eigen/Core>

#include "doppel/error.hpp"

namespace doppel::nn {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void im2col(const float* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo,
            float* col) {
  const std::size_t hw_out = static_cast<std::size_t>(Ho) * Wo;
  for (int c = 0; c < C; ++c) {
    const float* xc = x + static_cast<std::size_t>(c) * H * W;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        float* row = col + (static_cast<std::size_t>(c) * k * k + ki * k + kj) * hw_out;
        for (int oh = 0; oh < Ho; ++oh) {
          const int ih = oh * stride - pad + ki;
          float* dst = row + static_cast<std::size_t>(oh) * Wo;
          if (ih < 0 || ih >= H) {
            std::fill_n(dst, Wo, 0.0f);
            continue;
          }
          const float* src = xc + static_cast<std::size_t>(ih) * W;
          if (stride == 1) {
            for (int ow = 0; ow < Wo; ++ow) {
              const int iw = ow - pad + kj;
              dst[ow] = (iw >= 0 && iw < W) ? src[iw] : 0.0f;
            }
          } else {
            for (int ow = 0; ow < Wo; ++ow) {
              const int iw = ow * stride - pad + kj;
              dst[ow] = (iw >= 0 && iw < W) ? src[iw] : 0.0f;
            }
          }
        }
      }
    }
  }
}

void col2im(const float* col, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo,
            float* x) {
  const std::size_t hw_out = static_cast<std::size_t>(Ho) * Wo;
  for (int c = 0; c < C; ++c) {
    float* xc = x + static_cast<std::size_t>(c) * H * W;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const float* row = col + (static_cast<std::size_t>(c) * k * k + ki * k + kj) * hw_out;
        for (int oh = 0; oh < Ho; ++oh) {
          const int ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= H) continue;
          const float* src = row + static_cast<std::size_t>(oh) * Wo;
          float* dst = xc + static_cast<std::size_t>(ih) * W;
          for (int ow = 0; ow < Wo; ++ow) {
            const int iw = ow * stride - pad + kj;
            if (iw >= 0 && iw < W) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad)
    : weight(static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel, 0.0f),
      grad(weight.size(), 0.0f),
      in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      stride_(stride),
      pad_(pad) {}

Tensor Conv2d::forward(const Tensor& x) const {
  if (x.c != in_) {
    throw Error(ErrorCode::kShapeMismatch, "conv expects " + std::to_string(in_) +
                                               " input channels, got " + std::to_string(x.c));
  }
  const int Ho = out_extent(x.h);
  const int Wo = out_extent(x.w);
  Tensor y(x.n, out_, Ho, Wo);
  const int K = in_ * kernel_ * kernel_;
  const std::size_t hw = static_cast<std::size_t>(Ho) * Wo;
  const bool direct = kernel_ == 1 && stride_ == 1 && pad_ == 0;
  std::vector<float> col(direct ? 0 : static_cast<std::size_t>(K) * hw);
  ConstMapMat Wm(weight.data(), out_, K);
  for (int i = 0; i < x.n; ++i) {
    const float* src = x.sample(i);
    if (!direct) {
      im2col(src, x.c, x.h, x.w, kernel_, stride_, pad_, Ho, Wo, col.data());
      src = col.data();
    }
    MapMat Y(y.sample(i), out_, static_cast<Eigen::Index>(hw));
    Y.noalias() = Wm * ConstMapMat(src, K, static_cast<Eigen::Index>(hw));
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& x, const Tensor& dy, bool need_input_grad) {
  const int Ho = dy.h;
  const int Wo = dy.w;
  const int K = in_ * kernel_ * kernel_;
  const auto hw = static_cast<Eigen::Index>(Ho) * Wo;
  const bool direct = kernel_ == 1 && stride_ == 1 && pad_ == 0;
  std::vector<float> col(direct ? 0 : static_cast<std::size_t>(K) * hw);
  std::vector<float> dcol(need_input_grad && !direct ? static_cast<std::size_t>(K) * hw : 0);
  Tensor dx;
  if (need_input_grad) dx = Tensor(x.n, x.c, x.h, x.w);
  MapMat dW(grad.data(), out_, K);
  ConstMapMat Wm(weight.data(), out_, K);
  for (int i = 0; i < x.n; ++i) {
    const float* src = x.sample(i);
    if (!direct) {
      im2col(src, x.c, x.h, x.w, kernel_, stride_, pad_, Ho, Wo, col.data());
      src = col.data();
    }
    ConstMapMat dY(dy.sample(i), out_, hw);
    dW.noalias() += dY * ConstMapMat(src, K, hw).transpose();
    if (need_input_grad) {
      if (direct) {
        MapMat(dx.sample(i), K, hw).noalias() = Wm.transpose() * dY;
      } else {
        MapMat(dcol.data(), K, hw).noalias() = Wm.transpose() * dY;
        col2im(dcol.data(), x.c, x.h, x.w, kernel_, stride_, pad_, Ho, Wo, dx.sample(i));
      }
    }
  }
  return dx;
}

BatchNorm2d::BatchNorm2d(int channels)
    : gamma(static_cast<std::size_t>(channels), 1.0f),
      beta(static_cast<std::size_t>(channels), 0.0f),
      gamma_grad(static_cast<std::size_t>(channels), 0.0f),
      beta_grad(static_cast<std::size_t>(channels), 0.0f),
      running_mean(static_cast<std::size_t>(channels), 0.0f),
      running_var(static_cast<std::size_t>(channels), 1.0f) {}

Tensor BatchNorm2d::forward_train(const Tensor& x, Cache& cache) {
  if (static_cast<std::size_t>(x.c) != gamma.size()) {
    throw Error(ErrorCode::kShapeMismatch, "batch norm channel mismatch");
  }
  const std::size_t plane = x.plane();
  const double count = static_cast<double>(plane) * x.n;
  Tensor y(x.n, x.c, x.h, x.w);
  cache.xhat.resize(x.size());
  cache.inv_std.resize(static_cast<std::size_t>(x.c));
  for (int c = 0; c < x.c; ++c) {
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < x.n; ++i) {
      const float* p = x.sample(i) + c * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        sum += p[k];
        sq += static_cast<double>(p[k]) * p[k];
      }
    }
    const double mean = sum / count;
    const double var = std::max(sq / count - mean * mean, 0.0);
    const auto inv = static_cast<float>(1.0 / std::sqrt(var + eps));
    cache.inv_std[static_cast<std::size_t>(c)] = inv;
    const float g = gamma[static_cast<std::size_t>(c)];
    const float b = beta[static_cast<std::size_t>(c)];
    const auto m = static_cast<float>(mean);
    for (int i = 0; i < x.n; ++i) {
      const std::size_t off = static_cast<std::size_t>(i) * x.sample_size() + c * plane;
      const float* p = x.data.data() + off;
      float* xh = cache.xhat.data() + off;
      float* out = y.data.data() + off;
      for (std::size_t k = 0; k < plane; ++k) {
        xh[k] = (p[k] - m) * inv;
        out[k] = g * xh[k] + b;
      }
    }
    const double unbiased = count > 1 ? var * count / (count - 1) : var;
    running_mean[static_cast<std::size_t>(c)] =
        (1.0f - momentum) * running_mean[static_cast<std::size_t>(c)] + momentum * m;
    running_var[static_cast<std::size_t>(c)] =
        (1.0f - momentum) * running_var[static_cast<std::size_t>(c)] +
        momentum * static_cast<float>(unbiased);
  }
  return y;
}

Tensor BatchNorm2d::forward_eval(const Tensor& x) const {
  if (static_cast<std::size_t>(x.c) != gamma.size()) {
    throw Error(ErrorCode::kShapeMismatch, "batch norm channel mismatch");
  }
  const std::size_t plane = x.plane();
  Tensor y(x.n, x.c, x.h, x.w);
  for (int c = 0; c < x.c; ++c) {
    const auto cc = static_cast<std::size_t>(c);
    const float scale = gamma[cc] / std::sqrt(running_var[cc] + eps);
    const float shift = beta[cc] - running_mean[cc] * scale;
    for (int i = 0; i < x.n; ++i) {
      const std::size_t off = static_cast<std::size_t>(i) * x.sample_size() + c * plane;
      const float* p = x.data.data() + off;
      float* out = y.data.data() + off;
      for (std::size_t k = 0; k < plane; ++k) out[k] = p[k] * scale + shift;
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Cache& cache, const Tensor& dy) {
  const std::size_t plane = dy.plane();
  const double count = static_cast<double>(plane) * dy.n;
  Tensor dx(dy.n, dy.c, dy.h, dy.w);
  for (int c = 0; c < dy.c; ++c) {
    const auto cc = static_cast<std::size_t>(c);
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int i = 0; i < dy.n; ++i) {
      const std::size_t off = static_cast<std::size_t>(i) * dy.sample_size() + c * plane;
      const float* g = dy.data.data() + off;
      const float* xh = cache.xhat.data() + off;
      for (std::size_t k = 0; k < plane; ++k) {
        sum_dy += g[k];
        sum_dy_xhat += static_cast<double>(g[k]) * xh[k];
      }
    }
    gamma_grad[cc] += static_cast<float>(sum_dy_xhat);
    beta_grad[cc] += static_cast<float>(sum_dy);
    const float scale = gamma[cc] * cache.inv_std[cc];
    const auto mean_dy = static_cast<float>(sum_dy / count);
    const auto mean_dy_xhat = static_cast<float>(sum_dy_xhat / count);
    for (int i = 0; i < dy.n; ++i) {
      const std::size_t off = static_cast<std::size_t>(i) * dy.sample_size() + c * plane;
      const float* g = dy.data.data() + off;
      const float* xh = cache.xhat.data() + off;
      float* out = dx.data.data() + off;
      for (std::size_t k = 0; k < plane; ++k) {
        out[k] = scale * (g[k] - mean_dy - xh[k] * mean_dy_xhat);
      }
    }
  }
  return dx;
}

void relu_inplace(Tensor& x) {
  for (float& v : x.data) v = v > 0.0f ? v : 0.0f;
}

void relu_backward(const Tensor& y, Tensor& dy) {
  for (std::size_t i = 0; i < dy.data.size(); ++i) {
    if (!(y.data[i] > 0.0f)) dy.data[i] = 0.0f;
  }
}

Tensor maxpool_forward(const Tensor& x, std::vector<std::int32_t>* argmax) {
  constexpr int k = 3, stride = 2, pad = 1;
  const int Ho = (x.h + 2 * pad - k) / stride + 1;
  const int Wo = (x.w + 2 * pad - k) / stride + 1;
  Tensor y(x.n, x.c, Ho, Wo);
  if (argmax) argmax->assign(y.size(), 0);
  for (int nc = 0; nc < x.n * x.c; ++nc) {
    const float* src = x.data.data() + static_cast<std::size_t>(nc) * x.plane();
    float* dst = y.data.data() + static_cast<std::size_t>(nc) * y.plane();
    std::int32_t* am = argmax ? argmax->data() + static_cast<std::size_t>(nc) * y.plane() : nullptr;
    for (int oh = 0; oh < Ho; ++oh) {
      for (int ow = 0; ow < Wo; ++ow) {
        float best = -std::numeric_limits<float>::infinity();
        std::int32_t best_idx = 0;
        for (int ki = 0; ki < k; ++ki) {
          const int ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= x.h) continue;
          for (int kj = 0; kj < k; ++kj) {
            const int iw = ow * stride - pad + kj;
            if (iw < 0 || iw >= x.w) continue;
            const float v = src[ih * x.w + iw];
            if (v > best) {
              best = v;
              best_idx = ih * x.w + iw;
            }
          }
        }
        dst[oh * Wo + ow] = best;
        if (am) am[oh * Wo + ow] = best_idx;
      }
    }
  }
  return y;
}

Tensor maxpool_backward(const Tensor& x_shape, const std::vector<std::int32_t>& argmax,
                        const Tensor& dy) {
  Tensor dx(x_shape.n, x_shape.c, x_shape.h, x_shape.w);
  const std::size_t out_plane = dy.plane();
  for (int nc = 0; nc < dy.n * dy.c; ++nc) {
    float* dst = dx.data.data() + static_cast<std::size_t>(nc) * dx.plane();
    const float* g = dy.data.data() + static_cast<std::size_t>(nc) * out_plane;
    const std::int32_t* am = argmax.data() + static_cast<std::size_t>(nc) * out_plane;
    for (std::size_t k = 0; k < out_plane; ++k) dst[am[k]] += g[k];
  }
  return dx;
}

Tensor global_avg_pool(const Tensor& x) {
  Tensor y(x.n, x.c, 1, 1);
  const std::size_t plane = x.plane();
  for (int nc = 0; nc < x.n * x.c; ++nc) {
    const float* p = x.data.data() + static_cast<std::size_t>(nc) * plane;
    double s = 0.0;
    for (std::size_t k = 0; k < plane; ++k) s += p[k];
    y.data[static_cast<std::size_t>(nc)] = static_cast<float>(s / static_cast<double>(plane));
  }
  return y;
}

Tensor global_avg_pool_backward(const Tensor& x_shape, const Tensor& dy) {
  Tensor dx(x_shape.n, x_shape.c, x_shape.h, x_shape.w);
  const std::size_t plane = dx.plane();
  const float inv = 1.0f / static_cast<float>(plane);
  for (int nc = 0; nc < dx.n * dx.c; ++nc) {
    const float g = dy.data[static_cast<std::size_t>(nc)] * inv;
    std::fill_n(dx.data.data() + static_cast<std::size_t>(nc) * plane, plane, g);
  }
  return dx;
}

Linear::Linear(int in_features, int out_features)
    : weight(static_cast<std::size_t>(in_features) * out_features, 0.0f),
      bias(static_cast<std::size_t>(out_features), 0.0f),
      weight_grad(weight.size(), 0.0f),
      bias_grad(bias.size(), 0.0f),
      in_(in_features),
      out_(out_features) {}

Tensor Linear::forward(const Tensor& x) const {
  if (static_cast<int>(x.sample_size()) != in_) {
    throw Error(ErrorCode::kShapeMismatch, "dense layer expects " + std::to_string(in_) + " features");
  }
  Tensor y(x.n, out_, 1, 1);
  for (int i = 0; i < x.n; ++i) {
    const float* xi = x.sample(i);
    for (int o = 0; o < out_; ++o) {
      const float* wr = weight.data() + static_cast<std::size_t>(o) * in_;
      double s = bias[static_cast<std::size_t>(o)];
      for (int k = 0; k < in_; ++k) s += static_cast<double>(wr[k]) * xi[k];
      y.data[static_cast<std::size_t>(i) * out_ + o] = static_cast<float>(s);
    }
  }
  return y;
}

Tensor Linear::backward(const Tensor& x, const Tensor& dy) {
  Tensor dx(x.n, x.c, x.h, x.w);
  for (int i = 0; i < x.n; ++i) {
    const float* xi = x.sample(i);
    float* dxi = dx.sample(i);
    for (int o = 0; o < out_; ++o) {
      const float g = dy.data[static_cast<std::size_t>(i) * out_ + o];
      bias_grad[static_cast<std::size_t>(o)] += g;
      float* wg = weight_grad.data() + static_cast<std::size_t>(o) * in_;
      const float* wr = weight.data() + static_cast<std::size_t>(o) * in_;
      for (int k = 0; k < in_; ++k) {
        wg[k] += g * xi[k];
        dxi[k] += g * wr[k];
      }
    }
  }
  return dx;
}

}  // namespace doppel::nn
