#pragma once

// The pair classifier: a ResNet-style network over the stacked pair input
// producing two logits (index 0: negative, index 1: positive), the focal
// loss, the training loop and checkpoint I/O.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "doppel/nn.hpp"
#include "doppel/rasterize.hpp"

namespace doppel::model {

inline constexpr int kNegativeClass = 0;
inline constexpr int kPositiveClass = 1;

struct ArchConfig {
  raster::InputConfig channels;  // which input groups the network consumes
  int stem_channels = 64;
  std::array<int, 3> widths{128, 256, 512};
  int in_channels() const { return channels.channels(); }
  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

// Stem: 7x7/2 conv -> BN -> ReLU -> 3x3/2 max pool. Three pre-activation
// residual blocks (BN-ReLU-3x3/2 conv, BN-ReLU-3x3 conv, 1x1/2 projection
// shortcut). Head: BN -> ReLU -> global average pool -> dense to 2 logits.
class Classifier {
 public:
  explicit Classifier(ArchConfig arch = {}, std::uint64_t seed = 0);

  const ArchConfig& arch() const { return arch_; }
  int pooled_features() const { return arch_.widths[2]; }

  // Evaluation mode (running normalization statistics): B x 2 logits, row-major.
  std::vector<float> logits(const nn::Tensor& x) const;
  // Evaluation mode: softmax probability of the positive class per sample.
  std::vector<double> forward(const nn::Tensor& x) const;

  // Training mode: batch statistics, caches activations for backward().
  std::vector<float> forward_train(const nn::Tensor& x);
  // Accumulates parameter gradients given dL/dlogits (B x 2, row-major).
  void backward(std::span<const float> dlogits);
  void zero_grad();

  std::vector<nn::ParamRef> parameters();
  std::vector<nn::BufferRef> buffers();
  std::size_t num_parameters() const;

 private:
  struct Block {
    nn::BatchNorm2d bn1, bn2;
    nn::Conv2d conv1, conv2, shortcut;
  };
  struct BlockCache {
    nn::BatchNorm2d::Cache bn1, bn2;
    nn::Tensor a;  // relu(bn1(x))
    nn::Tensor h;  // conv1(a)
    nn::Tensor b;  // relu(bn2(h))
  };
  struct Cache {
    nn::Tensor input, stem_act, pooled;
    nn::BatchNorm2d::Cache stem_bn;
    std::vector<std::int32_t> pool_argmax;
    std::array<BlockCache, 3> blocks;
    nn::Tensor trunk, head_act, features;
    nn::BatchNorm2d::Cache head_bn;
  };

  void check_input(const nn::Tensor& x) const;

  ArchConfig arch_;
  nn::Conv2d stem_conv_;
  nn::BatchNorm2d stem_bn_;
  std::array<Block, 3> blocks_;
  nn::BatchNorm2d head_bn_;
  nn::Linear fc_;
  Cache cache_;
};

// Softmax of a logit pair, returned as the positive-class probability.
double positive_probability(float negative_logit, float positive_logit);

struct LossConfig {
  double alpha = 0.5;  // weight of the positive class; negatives get 1 - alpha
  double gamma = 2.0;  // focusing exponent
  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

inline constexpr double kProbabilityEpsilon = 1e-7;

// Mean over the batch of -alpha_t (1 - p_t)^gamma log(p_t), where `probs`
// holds positive-class probabilities and `labels` is 1 for positives.
double focal_loss(std::span<const double> probs, std::span<const int> labels,
                  const LossConfig& cfg = {});

struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> grad;  // dL/dlogits, B x 2 row-major
};

// Focal loss evaluated from B x 2 logits with its analytic gradient.
LossAndGradient focal_loss_with_grad(std::span<const double> logits, std::span<const int> labels,
                                     const LossConfig& cfg = {});

struct TrainConfig {
  int epochs = 10;
  int batch_size = 16;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double lr_start = 5e-4;
  double lr_end = 5e-6;
  int decay_start_epoch = 5;  // constant through this epoch, then linear to lr_end
  std::uint64_t seed = 0;
  int input_size = raster::kCanvasSize;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Learning rate used throughout `epoch` (1-based).
double learning_rate(const TrainConfig& cfg, int epoch);

// Labeled stacked inputs. `load` writes channels.channels() * size * size
// floats for sample i.
class Dataset {
 public:
  virtual ~Dataset() = default;
  virtual std::size_t size() const = 0;
  virtual int input_size() const = 0;
  virtual int label(std::size_t i) const = 0;  // 1 positive, 0 negative
  virtual void load(std::size_t i, raster::InputConfig channels, float* out) const = 0;
};

class InMemoryDataset final : public Dataset {
 public:
  InMemoryDataset() = default;
  void add(raster::PackedInput input, int label);
  std::size_t size() const override { return inputs_.size(); }
  int input_size() const override;
  int label(std::size_t i) const override { return labels_[i]; }
  void load(std::size_t i, raster::InputConfig channels, float* out) const override;

 private:
  std::vector<raster::PackedInput> inputs_;
  std::vector<int> labels_;
};

struct EpochRecord {
  int epoch = 0;
  double learning_rate = 0.0;
  double loss = 0.0;                 // mean training loss over the epoch
  std::optional<double> ap;          // validation AP, or training AP without a validation set
  bool ap_is_validation = false;
};

struct TrainOptions {
  const Dataset* validation = nullptr;
  std::optional<std::filesystem::path> checkpoint_dir;  // epoch_NN.ckpt per epoch
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(int epoch, int batch, double loss)> on_batch;
};

struct TrainResult {
  Classifier model;
  std::vector<EpochRecord> history;
};

// Throws EmptyDataset, ShapeMismatch (input size differs from the config),
// DivergedLoss (non-finite loss; message names epoch and batch).
TrainResult train(const Dataset& data, const ArchConfig& arch, const TrainConfig& cfg,
                  const LossConfig& loss_cfg = {}, const TrainOptions& options = {});

// Positive-class probabilities for every sample, in evaluation mode.
std::vector<double> predict(const Classifier& model, const Dataset& data, int batch_size = 16);
double predict_pair(const Classifier& model, const raster::PairArtifacts& artifacts);

struct CheckpointMeta {
  TrainConfig train;
  LossConfig loss;
  int epoch = 0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, Classifier& model,
                     const CheckpointMeta& meta);

struct LoadedCheckpoint {
  Classifier model;
  CheckpointMeta meta;
};

// Throws VersionMismatch / ParseError on malformed files and ShapeMismatch
// when `expected_channels` is given and differs from the stored flags.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 std::optional<raster::InputConfig> expected_channels = {});

}  // namespace doppel::model
