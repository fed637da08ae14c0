#include "doppel/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "doppel/error.hpp"
#include "doppel/eval.hpp"
#include "doppel/random.hpp"

namespace doppel::model {
namespace {

using nn::Tensor;

void init_conv(nn::Conv2d& conv, Rng& rng) {
  // Kaiming normal, fan-out mode: std = sqrt(2 / (out * k * k)).
  const double fan_out = static_cast<double>(conv.weight.size()) / conv.in_channels();
  const double std = std::sqrt(2.0 / fan_out);
  for (float& w : conv.weight) w = static_cast<float>(rng.normal() * std);
}

void add_inplace(Tensor& y, const Tensor& x) {
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += x.data[i];
}

}  // namespace

Classifier::Classifier(ArchConfig arch, std::uint64_t seed) : arch_(arch) {
  if (arch_.in_channels() <= 0 || arch_.stem_channels <= 0 ||
      std::any_of(arch_.widths.begin(), arch_.widths.end(), [](int w) { return w <= 0; })) {
    throw Error(ErrorCode::kInvalidParams, "classifier needs positive channel counts");
  }
  stem_conv_ = nn::Conv2d(arch_.in_channels(), arch_.stem_channels, 7, 2, 3);
  stem_bn_ = nn::BatchNorm2d(arch_.stem_channels);
  int in = arch_.stem_channels;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const int out = arch_.widths[i];
    Block& b = blocks_[i];
    b.bn1 = nn::BatchNorm2d(in);
    b.conv1 = nn::Conv2d(in, out, 3, 2, 1);
    b.bn2 = nn::BatchNorm2d(out);
    b.conv2 = nn::Conv2d(out, out, 3, 1, 1);
    b.shortcut = nn::Conv2d(in, out, 1, 2, 0);
    in = out;
  }
  head_bn_ = nn::BatchNorm2d(in);
  fc_ = nn::Linear(in, 2);

  Rng rng(mix_seed(seed, 0x5eed));
  init_conv(stem_conv_, rng);
  for (Block& b : blocks_) {
    init_conv(b.conv1, rng);
    init_conv(b.conv2, rng);
    init_conv(b.shortcut, rng);
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (float& w : fc_.weight) w = static_cast<float>(rng.uniform(-bound, bound));
  std::fill(fc_.bias.begin(), fc_.bias.end(), 0.0f);
}

void Classifier::check_input(const Tensor& x) const {
  if (x.c != arch_.in_channels()) {
    throw Error(ErrorCode::kShapeMismatch, "classifier expects " +
                                               std::to_string(arch_.in_channels()) +
                                               " input channels, got " + std::to_string(x.c));
  }
  if (x.n <= 0 || x.h <= 0 || x.w <= 0 || x.size() != static_cast<std::size_t>(x.n) * x.sample_size()) {
    throw Error(ErrorCode::kShapeMismatch, "classifier input must be a non-empty N x C x H x W batch");
  }
}

std::vector<float> Classifier::logits(const Tensor& x) const {
  check_input(x);
  Tensor s = stem_bn_.forward_eval(stem_conv_.forward(x));
  nn::relu_inplace(s);
  Tensor p = nn::maxpool_forward(s, nullptr);
  for (const Block& b : blocks_) {
    Tensor a = b.bn1.forward_eval(p);
    nn::relu_inplace(a);
    Tensor h = b.bn2.forward_eval(b.conv1.forward(a));
    nn::relu_inplace(h);
    Tensor y = b.conv2.forward(h);
    add_inplace(y, b.shortcut.forward(a));
    p = std::move(y);
  }
  Tensor t = head_bn_.forward_eval(p);
  nn::relu_inplace(t);
  return fc_.forward(nn::global_avg_pool(t)).data;
}

double positive_probability(float negative_logit, float positive_logit) {
  const double d = static_cast<double>(negative_logit) - static_cast<double>(positive_logit);
  return 1.0 / (1.0 + std::exp(d));
}

std::vector<double> Classifier::forward(const Tensor& x) const {
  const std::vector<float> z = logits(x);
  std::vector<double> probs(static_cast<std::size_t>(x.n));
  for (std::size_t i = 0; i < probs.size(); ++i) {
    probs[i] = positive_probability(z[2 * i], z[2 * i + 1]);
  }
  return probs;
}

std::vector<float> Classifier::forward_train(const Tensor& x) {
  check_input(x);
  Cache& c = cache_;
  c.input = x;
  c.stem_act = stem_bn_.forward_train(stem_conv_.forward(x), c.stem_bn);
  nn::relu_inplace(c.stem_act);
  c.pooled = nn::maxpool_forward(c.stem_act, &c.pool_argmax);
  Tensor p = c.pooled;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    Block& b = blocks_[i];
    BlockCache& bc = c.blocks[i];
    bc.a = b.bn1.forward_train(p, bc.bn1);
    nn::relu_inplace(bc.a);
    bc.h = b.conv1.forward(bc.a);
    bc.b = b.bn2.forward_train(bc.h, bc.bn2);
    nn::relu_inplace(bc.b);
    Tensor y = b.conv2.forward(bc.b);
    add_inplace(y, b.shortcut.forward(bc.a));
    p = std::move(y);
  }
  c.trunk = std::move(p);
  c.head_act = head_bn_.forward_train(c.trunk, c.head_bn);
  nn::relu_inplace(c.head_act);
  c.features = nn::global_avg_pool(c.head_act);
  return fc_.forward(c.features).data;
}

void Classifier::backward(std::span<const float> dlogits) {
  Cache& c = cache_;
  if (c.features.n <= 0 || dlogits.size() != static_cast<std::size_t>(c.features.n) * 2) {
    throw Error(ErrorCode::kShapeMismatch, "backward needs a B x 2 gradient after forward_train");
  }
  Tensor dz(c.features.n, 2, 1, 1);
  std::copy(dlogits.begin(), dlogits.end(), dz.data.begin());
  Tensor dt = nn::global_avg_pool_backward(c.head_act, fc_.backward(c.features, dz));
  nn::relu_backward(c.head_act, dt);
  Tensor dp = head_bn_.backward(c.head_bn, dt);
  for (std::size_t i = blocks_.size(); i-- > 0;) {
    Block& b = blocks_[i];
    BlockCache& bc = c.blocks[i];
    Tensor db = b.conv2.backward(bc.b, dp, true);
    Tensor da = b.shortcut.backward(bc.a, dp, true);
    nn::relu_backward(bc.b, db);
    const Tensor dh = b.bn2.backward(bc.bn2, db);
    add_inplace(da, b.conv1.backward(bc.a, dh, true));
    nn::relu_backward(bc.a, da);
    dp = b.bn1.backward(bc.bn1, da);
    bc = BlockCache();
  }
  Tensor ds = nn::maxpool_backward(c.stem_act, c.pool_argmax, dp);
  nn::relu_backward(c.stem_act, ds);
  const Tensor dstem = stem_bn_.backward(c.stem_bn, ds);
  stem_conv_.backward(c.input, dstem, false);
  c = Cache();
}

void Classifier::zero_grad() {
  for (nn::ParamRef& p : parameters()) std::fill(p.grad->begin(), p.grad->end(), 0.0f);
}

std::vector<nn::ParamRef> Classifier::parameters() {
  std::vector<nn::ParamRef> out;
  auto bn = [&](const std::string& prefix, nn::BatchNorm2d& layer) {
    out.push_back({prefix + ".gamma", &layer.gamma, &layer.gamma_grad});
    out.push_back({prefix + ".beta", &layer.beta, &layer.beta_grad});
  };
  out.push_back({"stem.conv.weight", &stem_conv_.weight, &stem_conv_.grad});
  bn("stem.bn", stem_bn_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    Block& b = blocks_[i];
    const std::string prefix = "block" + std::to_string(i + 1);
    bn(prefix + ".bn1", b.bn1);
    out.push_back({prefix + ".conv1.weight", &b.conv1.weight, &b.conv1.grad});
    bn(prefix + ".bn2", b.bn2);
    out.push_back({prefix + ".conv2.weight", &b.conv2.weight, &b.conv2.grad});
    out.push_back({prefix + ".shortcut.weight", &b.shortcut.weight, &b.shortcut.grad});
  }
  bn("head.bn", head_bn_);
  out.push_back({"head.fc.weight", &fc_.weight, &fc_.weight_grad});
  out.push_back({"head.fc.bias", &fc_.bias, &fc_.bias_grad});
  return out;
}

std::vector<nn::BufferRef> Classifier::buffers() {
  std::vector<nn::BufferRef> out;
  auto bn = [&](const std::string& prefix, nn::BatchNorm2d& layer) {
    out.push_back({prefix + ".running_mean", &layer.running_mean});
    out.push_back({prefix + ".running_var", &layer.running_var});
  };
  bn("stem.bn", stem_bn_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string prefix = "block" + std::to_string(i + 1);
    bn(prefix + ".bn1", blocks_[i].bn1);
    bn(prefix + ".bn2", blocks_[i].bn2);
  }
  bn("head.bn", head_bn_);
  return out;
}

std::size_t Classifier::num_parameters() const {
  std::size_t n = 0;
  for (const nn::ParamRef& p : const_cast<Classifier*>(this)->parameters()) n += p.value->size();
  return n;
}

double focal_loss(std::span<const double> probs, std::span<const int> labels,
                  const LossConfig& cfg) {
  if (probs.size() != labels.size() || probs.empty()) {
    throw Error(ErrorCode::kShapeMismatch, "focal loss needs equal, non-empty probs and labels");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool positive = labels[i] == kPositiveClass;
    const double p_true = positive ? probs[i] : 1.0 - probs[i];
    const double pt = std::clamp(p_true, kProbabilityEpsilon, 1.0);
    const double alpha_t = positive ? cfg.alpha : 1.0 - cfg.alpha;
    total += -alpha_t * std::pow(1.0 - pt, cfg.gamma) * std::log(pt);
  }
  return total / static_cast<double>(probs.size());
}

LossAndGradient focal_loss_with_grad(std::span<const double> logits, std::span<const int> labels,
                                     const LossConfig& cfg) {
  const std::size_t batch = labels.size();
  if (batch == 0 || logits.size() != 2 * batch) {
    throw Error(ErrorCode::kShapeMismatch, "focal loss needs B x 2 logits for B labels");
  }
  LossAndGradient out;
  out.grad.assign(2 * batch, 0.0);
  const double inv_batch = 1.0 / static_cast<double>(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    const bool positive = labels[i] == kPositiveClass;
    const std::size_t t = positive ? kPositiveClass : kNegativeClass;
    const double z_true = logits[2 * i + t];
    const double z_other = logits[2 * i + (1 - t)];
    // p_t = softmax(z)[t], computed stably.
    const double d = z_other - z_true;
    const double p_raw = d > 0 ? std::exp(-d) / (1.0 + std::exp(-d)) : 1.0 / (1.0 + std::exp(d));
    const double pt = std::max(p_raw, kProbabilityEpsilon);
    const double alpha_t = positive ? cfg.alpha : 1.0 - cfg.alpha;
    const double q = 1.0 - pt;
    out.loss += -alpha_t * std::pow(q, cfg.gamma) * std::log(pt);
    // dL/dz_t = alpha_t [gamma q^gamma p_t log p_t - q^(gamma+1)]; dz_other = -dz_t.
    const double g =
        alpha_t * (cfg.gamma * std::pow(q, cfg.gamma) * pt * std::log(pt) - std::pow(q, cfg.gamma + 1.0));
    out.grad[2 * i + t] = g * inv_batch;
    out.grad[2 * i + (1 - t)] = -g * inv_batch;
  }
  out.loss *= inv_batch;
  return out;
}

double learning_rate(const TrainConfig& cfg, int epoch) {
  if (epoch <= cfg.decay_start_epoch || cfg.epochs <= cfg.decay_start_epoch) return cfg.lr_start;
  const double span = static_cast<double>(cfg.epochs - cfg.decay_start_epoch);
  const double f = std::min(1.0, static_cast<double>(epoch - cfg.decay_start_epoch) / span);
  return cfg.lr_start + (cfg.lr_end - cfg.lr_start) * f;
}

void InMemoryDataset::add(raster::PackedInput input, int label) {
  if (!inputs_.empty() && input.size != inputs_.front().size) {
    throw Error(ErrorCode::kShapeMismatch, "dataset inputs must share one canvas size");
  }
  inputs_.push_back(std::move(input));
  labels_.push_back(label);
}

int InMemoryDataset::input_size() const { return inputs_.empty() ? 0 : inputs_.front().size; }

void InMemoryDataset::load(std::size_t i, raster::InputConfig channels, float* out) const {
  raster::unpack(inputs_[i], channels, out);
}

namespace {

struct Adam {
  std::vector<std::vector<float>> m, v;
  long step = 0;

  void update(std::vector<nn::ParamRef>& params, const TrainConfig& cfg, double lr) {
    if (m.empty()) {
      for (const nn::ParamRef& p : params) {
        m.emplace_back(p.value->size(), 0.0f);
        v.emplace_back(p.value->size(), 0.0f);
      }
    }
    ++step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    const auto b1 = static_cast<float>(cfg.beta1);
    const auto b2 = static_cast<float>(cfg.beta2);
    const auto step_size = static_cast<float>(lr / bc1);
    const auto inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
    const auto eps = static_cast<float>(cfg.adam_eps);
    for (std::size_t k = 0; k < params.size(); ++k) {
      std::vector<float>& w = *params[k].value;
      const std::vector<float>& g = *params[k].grad;
      std::vector<float>& mk = m[k];
      std::vector<float>& vk = v[k];
      for (std::size_t j = 0; j < w.size(); ++j) {
        mk[j] = b1 * mk[j] + (1.0f - b1) * g[j];
        vk[j] = b2 * vk[j] + (1.0f - b2) * g[j] * g[j];
        w[j] -= step_size * mk[j] / (std::sqrt(vk[j]) * inv_sqrt_bc2 + eps);
      }
    }
  }
};

std::optional<double> safe_ap(const std::vector<double>& scores, const std::vector<int>& labels) {
  std::vector<char> pos(labels.size());
  bool any_pos = false, any_neg = false;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    pos[i] = labels[i] == kPositiveClass ? 1 : 0;
    (pos[i] ? any_pos : any_neg) = true;
  }
  if (!any_pos || !any_neg) return std::nullopt;
  return eval::average_precision(
      scores, std::span<const bool>(reinterpret_cast<const bool*>(pos.data()), pos.size()));
}

}  // namespace

TrainResult train(const Dataset& data, const ArchConfig& arch, const TrainConfig& cfg,
                  const LossConfig& loss_cfg, const TrainOptions& options) {
  if (data.size() == 0) throw Error(ErrorCode::kEmptyDataset, "training set is empty");
  if (cfg.epochs <= 0 || cfg.batch_size <= 0) {
    throw Error(ErrorCode::kInvalidParams, "epochs and batch size must be positive");
  }
  if (data.input_size() != cfg.input_size) {
    throw Error(ErrorCode::kShapeMismatch,
                "training inputs are " + std::to_string(data.input_size()) +
                    " pixels but the config asks for " + std::to_string(cfg.input_size));
  }
  if (options.validation && options.validation->size() > 0 &&
      options.validation->input_size() != cfg.input_size) {
    throw Error(ErrorCode::kShapeMismatch, "validation inputs differ in size from training inputs");
  }
  if (options.checkpoint_dir) std::filesystem::create_directories(*options.checkpoint_dir);

  TrainResult result{Classifier(arch, cfg.seed), {}};
  Classifier& model = result.model;
  std::vector<nn::ParamRef> params = model.parameters();
  Adam adam;
  const int S = cfg.input_size;
  const int C = arch.in_channels();
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = learning_rate(cfg, epoch);
    Rng rng(mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t seen = 0;
    std::vector<double> train_scores;
    std::vector<int> train_labels;
    int batch_id = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size), ++batch_id) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const int B = static_cast<int>(end - start);
      Tensor batch(B, C, S, S);
      std::vector<int> labels(static_cast<std::size_t>(B));
      for (int j = 0; j < B; ++j) {
        const std::size_t idx = order[start + static_cast<std::size_t>(j)];
        data.load(idx, arch.channels, batch.sample(j));
        labels[static_cast<std::size_t>(j)] = data.label(idx);
      }
      model.zero_grad();
      const std::vector<float> z = model.forward_train(batch);
      const std::vector<double> zd(z.begin(), z.end());
      const LossAndGradient lg = focal_loss_with_grad(zd, labels, loss_cfg);
      if (!std::isfinite(lg.loss)) {
        throw Error(ErrorCode::kDivergedLoss, "non-finite loss at epoch " + std::to_string(epoch) +
                                                  " batch " + std::to_string(batch_id));
      }
      const std::vector<float> g(lg.grad.begin(), lg.grad.end());
      model.backward(g);
      adam.update(params, cfg, lr);
      loss_sum += lg.loss * B;
      seen += static_cast<std::size_t>(B);
      for (int j = 0; j < B; ++j) {
        train_scores.push_back(positive_probability(z[2 * static_cast<std::size_t>(j)],
                                                    z[2 * static_cast<std::size_t>(j) + 1]));
        train_labels.push_back(labels[static_cast<std::size_t>(j)]);
      }
      if (options.on_batch) options.on_batch(epoch, batch_id, lg.loss);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = lr;
    rec.loss = loss_sum / static_cast<double>(seen);
    if (options.validation && options.validation->size() > 0) {
      const std::vector<double> scores = predict(model, *options.validation, cfg.batch_size);
      std::vector<int> labels(options.validation->size());
      for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = options.validation->label(i);
      rec.ap = safe_ap(scores, labels);
      rec.ap_is_validation = true;
    } else {
      rec.ap = safe_ap(train_scores, train_labels);
    }
    result.history.push_back(rec);
    if (options.checkpoint_dir) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%02d.ckpt", epoch);
      save_checkpoint(*options.checkpoint_dir / name, model, {cfg, loss_cfg, epoch});
    }
    if (options.on_epoch) options.on_epoch(rec);
  }
  return result;
}

std::vector<double> predict(const Classifier& model, const Dataset& data, int batch_size) {
  if (batch_size <= 0) throw Error(ErrorCode::kInvalidParams, "batch size must be positive");
  std::vector<double> out;
  out.reserve(data.size());
  const int S = data.input_size();
  const int C = model.arch().in_channels();
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(data.size(), start + static_cast<std::size_t>(batch_size));
    Tensor batch(static_cast<int>(end - start), C, S, S);
    for (std::size_t i = start; i < end; ++i) {
      data.load(i, model.arch().channels, batch.sample(static_cast<int>(i - start)));
    }
    const std::vector<double> p = model.forward(batch);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

double predict_pair(const Classifier& model, const raster::PairArtifacts& artifacts) {
  std::vector<float> input = raster::assemble_input(artifacts, model.arch().channels);
  Tensor x;
  x.n = 1;
  x.c = model.arch().in_channels();
  x.h = artifacts.rgb_b.height;
  x.w = artifacts.rgb_b.width;
  x.data = std::move(input);
  return model.forward(x).front();
}

namespace {

constexpr char kMagic[6] = {'D', 'G', 'C', 'K', 'P', 'T'};

nlohmann::json to_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},         {"batch_size", t.batch_size},
          {"beta1", t.beta1},           {"beta2", t.beta2},
          {"adam_eps", t.adam_eps},     {"lr_start", t.lr_start},
          {"lr_end", t.lr_end},         {"decay_start_epoch", t.decay_start_epoch},
          {"seed", t.seed},             {"input_size", t.input_size}};
}

TrainConfig train_from_json(const nlohmann::json& j) {
  TrainConfig t;
  t.epochs = j.at("epochs").get<int>();
  t.batch_size = j.at("batch_size").get<int>();
  t.beta1 = j.at("beta1").get<double>();
  t.beta2 = j.at("beta2").get<double>();
  t.adam_eps = j.at("adam_eps").get<double>();
  t.lr_start = j.at("lr_start").get<double>();
  t.lr_end = j.at("lr_end").get<double>();
  t.decay_start_epoch = j.at("decay_start_epoch").get<int>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.input_size = j.at("input_size").get<int>();
  return t;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, Classifier& model,
                     const CheckpointMeta& meta) {
  const ArchConfig& arch = model.arch();
  nlohmann::json header;
  header["arch"] = {{"rgb", arch.channels.rgb},
                    {"masks", arch.channels.masks},
                    {"stem_channels", arch.stem_channels},
                    {"widths", arch.widths}};
  header["train"] = to_json(meta.train);
  header["loss"] = {{"alpha", meta.loss.alpha}, {"gamma", meta.loss.gamma}};
  header["epoch"] = meta.epoch;
  std::vector<std::pair<std::string, const std::vector<float>*>> arrays;
  for (const nn::ParamRef& p : model.parameters()) arrays.emplace_back(p.name, p.value);
  for (const nn::BufferRef& b : model.buffers()) arrays.emplace_back(b.name, b.value);
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, values] : arrays) tensors.push_back({{"name", name}, {"count", values->size()}});
  header["tensors"] = tensors;
  const std::string text = header.dump();

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof(kMagic));
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t length = text.size();
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&length), sizeof(length));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, values] : arrays) {
      out.write(reinterpret_cast<const char*>(values->data()),
                static_cast<std::streamsize>(values->size() * sizeof(float)));
    }
    if (!out) throw Error(ErrorCode::kIoError, "failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 std::optional<raster::InputConfig> expected_channels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)] = {};
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorCode::kParseError, path.string() + ": not a checkpoint file");
  }
  std::uint32_t version = 0;
  std::uint64_t length = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&length), sizeof(length));
  if (!in) throw Error(ErrorCode::kParseError, path.string() + ": truncated checkpoint header");
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kVersionMismatch,
                path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  if (length > (1u << 24)) throw Error(ErrorCode::kParseError, path.string() + ": bad header length");
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw Error(ErrorCode::kParseError, path.string() + ": truncated checkpoint header");

  ArchConfig arch;
  CheckpointMeta meta;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
    const auto& a = header.at("arch");
    arch.channels.rgb = a.at("rgb").get<bool>();
    arch.channels.masks = a.at("masks").get<bool>();
    arch.stem_channels = a.at("stem_channels").get<int>();
    arch.widths = a.at("widths").get<std::array<int, 3>>();
    meta.train = train_from_json(header.at("train"));
    meta.loss.alpha = header.at("loss").at("alpha").get<double>();
    meta.loss.gamma = header.at("loss").at("gamma").get<double>();
    meta.epoch = header.at("epoch").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, path.string() + ": bad checkpoint header: " + e.what());
  }
  if (expected_channels && !(*expected_channels == arch.channels)) {
    throw Error(ErrorCode::kShapeMismatch,
                path.string() + ": checkpoint was trained with " +
                    std::to_string(arch.channels.channels()) + " input channels (rgb=" +
                    (arch.channels.rgb ? "1" : "0") + ", masks=" + (arch.channels.masks ? "1" : "0") +
                    ") but " + std::to_string(expected_channels->channels()) + " were requested");
  }

  LoadedCheckpoint loaded{Classifier(arch, 0), meta};
  std::vector<std::pair<std::string, std::vector<float>*>> arrays;
  for (const nn::ParamRef& p : loaded.model.parameters()) arrays.emplace_back(p.name, p.value);
  for (const nn::BufferRef& b : loaded.model.buffers()) arrays.emplace_back(b.name, b.value);
  const auto& tensors = header.at("tensors");
  if (tensors.size() != arrays.size()) {
    throw Error(ErrorCode::kShapeMismatch, path.string() + ": tensor list does not match the architecture");
  }
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    const std::string name = tensors[i].at("name").get<std::string>();
    const auto count = tensors[i].at("count").get<std::size_t>();
    if (name != arrays[i].first || count != arrays[i].second->size()) {
      throw Error(ErrorCode::kShapeMismatch, path.string() + ": tensor '" + name +
                                                 "' does not match layer '" + arrays[i].first + "'");
    }
    in.read(reinterpret_cast<char*>(arrays[i].second->data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (!in) throw Error(ErrorCode::kParseError, path.string() + ": truncated tensor data for " + name);
  }
  return loaded;
}

}  // namespace doppel::model
