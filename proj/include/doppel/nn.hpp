#pragma once

// Minimal CPU building blocks for the pair classifier: NCHW float tensors,
// convolution via im2col + GEMM, batch normalization, pooling and a dense
// layer. Each layer's forward is a pure function of its parameters; the
// backward passes take whatever the forward cached and accumulate
// parameter gradients.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace doppel::nn {

struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, float fill = 0.0f)
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
  float* sample(int i) { return data.data() + static_cast<std::size_t>(i) * sample_size(); }
  const float* sample(int i) const { return data.data() + static_cast<std::size_t>(i) * sample_size(); }
  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

// Named view of a trainable array and its gradient accumulator.
struct ParamRef {
  std::string name;
  std::vector<float>* value = nullptr;
  std::vector<float>* grad = nullptr;
};

// Named view of a non-trained state array (normalization statistics).
struct BufferRef {
  std::string name;
  std::vector<float>* value = nullptr;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad);

  Tensor forward(const Tensor& x) const;
  // Accumulates the weight gradient; returns dL/dx when requested.
  Tensor backward(const Tensor& x, const Tensor& dy, bool need_input_grad);

  int out_extent(int in) const { return (in + 2 * pad_ - kernel_) / stride_ + 1; }
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

  std::vector<float> weight;  // (out, in * k * k)
  std::vector<float> grad;

 private:
  int in_ = 0, out_ = 0, kernel_ = 1, stride_ = 1, pad_ = 0;
};

class BatchNorm2d {
 public:
  struct Cache {
    std::vector<float> xhat;
    std::vector<float> inv_std;
  };

  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels);

  // Normalizes with batch statistics and updates the running estimates.
  Tensor forward_train(const Tensor& x, Cache& cache);
  // Normalizes with the running estimates.
  Tensor forward_eval(const Tensor& x) const;
  Tensor backward(const Cache& cache, const Tensor& dy);

  std::vector<float> gamma, beta, gamma_grad, beta_grad;
  std::vector<float> running_mean, running_var;
  float eps = 1e-5f;
  float momentum = 0.1f;
};

void relu_inplace(Tensor& x);
// dy *= (y > 0), where y is the ReLU output.
void relu_backward(const Tensor& y, Tensor& dy);

// 3x3 / stride 2 / pad 1 max pooling.
Tensor maxpool_forward(const Tensor& x, std::vector<std::int32_t>* argmax);
Tensor maxpool_backward(const Tensor& x_shape, const std::vector<std::int32_t>& argmax,
                        const Tensor& dy);

// (N, C, H, W) -> (N, C, 1, 1)
Tensor global_avg_pool(const Tensor& x);
Tensor global_avg_pool_backward(const Tensor& x_shape, const Tensor& dy);

class Linear {
 public:
  Linear() = default;
  Linear(int in_features, int out_features);

  // x: (N, in, 1, 1) -> (N, out) stored as (N, out, 1, 1)
  Tensor forward(const Tensor& x) const;
  Tensor backward(const Tensor& x, const Tensor& dy);

  int in_features() const { return in_; }
  int out_features() const { return out_; }

  std::vector<float> weight, bias, weight_grad, bias_grad;

 private:
  int in_ = 0, out_ = 0;
};

}  // namespace doppel::nn
