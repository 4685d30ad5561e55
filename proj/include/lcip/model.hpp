#pragma once

// Transformer-encoder classifier over (50 x 36) windows: input projection,
// learned positional embedding, pre-norm encoder layers, temporal pooling
// and a linear head. Training uses Adam over the in-repo autodiff graph.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lcip/autodiff.hpp"
#include "lcip/common.hpp"
#include "lcip/csv.hpp"
#include "lcip/features.hpp"

#ifndef LCIP_GIT_REVISION
#define LCIP_GIT_REVISION "unknown"
#endif

namespace lcip {

enum class Pooling { Mean, ClsToken };

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  double dropout = 0.1;
  Pooling pooling = Pooling::Mean;
  std::size_t n_classes = 3;
  std::size_t seq_len = kWindowRows;
  std::size_t n_features = kFeatureCount;
  std::uint64_t seed = 0;

  std::size_t head_dim() const { return d_model / n_heads; }

  void validate() const {
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
      throw Error(ErrorCode::InvalidConfig, "d_model=" + std::to_string(d_model) + " not divisible by n_heads=" +
                                                std::to_string(n_heads));
    }
    if (n_classes != 3) throw Error(ErrorCode::InvalidConfig, "n_classes must be 3");
    if (n_layers == 0 || d_ff == 0 || seq_len == 0 || n_features == 0) {
      throw Error(ErrorCode::InvalidConfig, "zero-sized model dimension");
    }
    if (dropout < 0.0 || dropout >= 1.0) throw Error(ErrorCode::InvalidConfig, "dropout must be in [0, 1)");
  }

  nlohmann::json to_json() const {
    return {{"d_model", d_model}, {"n_layers", n_layers},   {"n_heads", n_heads},
            {"d_ff", d_ff},       {"dropout", dropout},     {"pooling", pooling == Pooling::Mean ? "mean" : "cls"},
            {"n_classes", n_classes}, {"seq_len", seq_len}, {"n_features", n_features},
            {"seed", seed}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.d_model = j.value("d_model", c.d_model);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.d_ff = j.value("d_ff", c.d_ff);
    c.dropout = j.value("dropout", c.dropout);
    const std::string pool = j.value("pooling", std::string("mean"));
    if (pool == "mean") c.pooling = Pooling::Mean;
    else if (pool == "cls" || pool == "cls-token") c.pooling = Pooling::ClsToken;
    else throw Error(ErrorCode::InvalidConfig, "pooling=" + pool);
    c.n_classes = j.value("n_classes", c.n_classes);
    c.seq_len = j.value("seq_len", c.seq_len);
    c.n_features = j.value("n_features", c.n_features);
    c.seed = j.value("seed", c.seed);
    return c;
  }
};

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 30;
  std::size_t patience = 8;
  std::optional<double> target_val_accuracy;  // stop once reached
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr >= 0.0)) throw Error(ErrorCode::InvalidConfig, "lr must be >= 0");
    if (batch_size == 0) throw Error(ErrorCode::InvalidConfig, "batch_size must be >= 1");
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"lr", lr},
                        {"beta1", beta1},
                        {"beta2", beta2},
                        {"eps", eps},
                        {"batch_size", batch_size},
                        {"max_epochs", max_epochs},
                        {"patience", patience},
                        {"seed", seed}};
    if (target_val_accuracy) j["target_val_accuracy"] = *target_val_accuracy;
    return j;
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    if (j.contains("target_val_accuracy")) c.target_val_accuracy = j.at("target_val_accuracy").get<double>();
    c.seed = j.value("seed", c.seed);
    return c;
  }
};

template <typename T>
using TensorMap = std::map<std::string, ad::Tensor<T>>;

template <typename T>
struct ModelParams {
  ModelConfig config;
  TensorMap<T> tensors;

  const ad::Tensor<T>& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw Error(ErrorCode::ShapeMismatch, "missing tensor " + name);
    return it->second;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : tensors) n += t.size();
    return n;
  }

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    out.config = config;
    for (const auto& [name, t] : tensors) {
      ad::Tensor<U> u(t.rows, t.cols);
      for (std::size_t i = 0; i < t.size(); ++i) u.data[i] = static_cast<U>(t.data[i]);
      out.tensors.emplace(name, std::move(u));
    }
    return out;
  }
};

inline std::string layer_prefix(std::size_t i) { return "layers." + std::to_string(i) + "."; }

/// Deterministic from config.seed: Xavier-uniform projections, small uniform
/// embeddings, zero biases, unit layer-norm scales.
template <typename T>
ModelParams<T> init_model(const ModelConfig& config) {
  config.validate();
  ModelParams<T> p;
  p.config = config;
  Rng rng = derive_rng(config.seed, 0x1417);
  auto xavier = [&](std::size_t fan_in, std::size_t fan_out) {
    ad::Tensor<T> t(fan_in, fan_out);
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& v : t.data) v = static_cast<T>(uniform(rng, -a, a));
    return t;
  };
  auto small = [&](std::size_t r, std::size_t c) {
    ad::Tensor<T> t(r, c);
    for (auto& v : t.data) v = static_cast<T>(uniform(rng, -0.02, 0.02));
    return t;
  };
  auto zeros = [](std::size_t n) { return ad::Tensor<T>(1, n, T(0)); };
  auto ones = [](std::size_t n) { return ad::Tensor<T>(1, n, T(1)); };

  const std::size_t d = config.d_model;
  const std::size_t positions = config.seq_len + (config.pooling == Pooling::ClsToken ? 1 : 0);
  p.tensors["input.weight"] = xavier(config.n_features, d);
  p.tensors["input.bias"] = zeros(d);
  p.tensors["pos_embedding"] = small(positions, d);
  if (config.pooling == Pooling::ClsToken) p.tensors["cls_token"] = small(1, d);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const std::string pre = layer_prefix(l);
    p.tensors[pre + "ln1.gamma"] = ones(d);
    p.tensors[pre + "ln1.beta"] = zeros(d);
    for (const char* w : {"wq", "wk", "wv", "wo"}) {
      p.tensors[pre + "attn." + w] = xavier(d, d);
      p.tensors[pre + "attn.b" + std::string(w + 1)] = zeros(d);
    }
    p.tensors[pre + "ln2.gamma"] = ones(d);
    p.tensors[pre + "ln2.beta"] = zeros(d);
    p.tensors[pre + "ff.w1"] = xavier(d, config.d_ff);
    p.tensors[pre + "ff.b1"] = zeros(config.d_ff);
    p.tensors[pre + "ff.w2"] = xavier(config.d_ff, d);
    p.tensors[pre + "ff.b2"] = zeros(d);
  }
  p.tensors["final_ln.gamma"] = ones(d);
  p.tensors["final_ln.beta"] = zeros(d);
  p.tensors["head.weight"] = xavier(d, config.n_classes);
  p.tensors["head.bias"] = zeros(config.n_classes);
  return p;
}

/// Stacks samples into a (B*T) x F input tensor.
template <typename T>
ad::Tensor<T> make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices = {}) {
  const std::size_t b = indices.empty() ? samples.size() : indices.size();
  if (b == 0) throw Error(ErrorCode::EmptySet, "empty batch");
  const auto& first = samples[indices.empty() ? 0 : indices[0]].matrix;
  ad::Tensor<T> x(b * first.rows, first.cols);
  for (std::size_t i = 0; i < b; ++i) {
    const auto& m = samples[indices.empty() ? i : indices[i]].matrix;
    if (m.rows != first.rows || m.cols != first.cols) throw Error(ErrorCode::ShapeMismatch, "ragged batch");
    for (std::size_t k = 0; k < m.data.size(); ++k) x.data[i * m.data.size() + k] = static_cast<T>(m.data[k]);
  }
  return x;
}

template <typename T>
struct ForwardPass {
  ad::Graph<T> graph;
  typename ad::Graph<T>::Var logits = 0;
  std::map<std::string, typename ad::Graph<T>::Var> params;
  std::vector<ad::Tensor<T>> attention;  // per layer, when recorded
};

/// Builds the graph for a batch. Dropout is active only when rng is given.
template <typename T>
ForwardPass<T> forward_graph(const ModelParams<T>& p, const ad::Tensor<T>& input, std::size_t batch, Rng* rng,
                             bool record_attention = false) {
  const ModelConfig& cfg = p.config;
  if (input.cols != cfg.n_features || input.rows != batch * cfg.seq_len) {
    throw Error(ErrorCode::ShapeMismatch, "expected " + std::to_string(batch) + " x " + std::to_string(cfg.seq_len) +
                                              " x " + std::to_string(cfg.n_features));
  }
  ForwardPass<T> fp;
  auto& g = fp.graph;
  g.record_attention(record_attention);
  for (const auto& [name, t] : p.tensors) fp.params[name] = g.parameter(t);
  auto P = [&](const std::string& name) { return fp.params.at(name); };
  const double drop = rng ? cfg.dropout : 0.0;

  auto x = g.constant(input);
  auto h = g.add_row(g.matmul(x, P("input.weight")), P("input.bias"));
  std::size_t seq = cfg.seq_len;
  if (cfg.pooling == Pooling::ClsToken) {
    h = g.prepend_token(h, P("cls_token"), batch, seq);
    ++seq;
  }
  h = g.add_tiled(h, P("pos_embedding"));
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = layer_prefix(l);
    auto a = g.layer_norm(h, P(pre + "ln1.gamma"), P(pre + "ln1.beta"));
    auto q = g.add_row(g.matmul(a, P(pre + "attn.wq")), P(pre + "attn.bq"));
    auto k = g.add_row(g.matmul(a, P(pre + "attn.wk")), P(pre + "attn.bk"));
    auto v = g.add_row(g.matmul(a, P(pre + "attn.wv")), P(pre + "attn.bv"));
    auto att = g.attention(q, k, v, batch, seq, cfg.n_heads);
    if (record_attention) fp.attention.push_back(g.attention_probs());
    auto o = g.add_row(g.matmul(att, P(pre + "attn.wo")), P(pre + "attn.bo"));
    if (drop > 0.0) o = g.dropout(o, drop, *rng);
    h = g.add(h, o);
    auto b = g.layer_norm(h, P(pre + "ln2.gamma"), P(pre + "ln2.beta"));
    auto f = g.gelu(g.add_row(g.matmul(b, P(pre + "ff.w1")), P(pre + "ff.b1")));
    f = g.add_row(g.matmul(f, P(pre + "ff.w2")), P(pre + "ff.b2"));
    if (drop > 0.0) f = g.dropout(f, drop, *rng);
    h = g.add(h, f);
  }
  h = g.layer_norm(h, P("final_ln.gamma"), P("final_ln.beta"));
  auto pooled = cfg.pooling == Pooling::Mean ? g.mean_pool(h, batch, seq) : g.first_of_block(h, batch, seq);
  fp.logits = g.add_row(g.matmul(pooled, P("head.weight")), P("head.bias"));
  return fp;
}

/// Eval-mode logits, B x 3.
template <typename T>
ad::Tensor<T> forward(const ModelParams<T>& p, const ad::Tensor<T>& input, std::size_t batch) {
  auto fp = forward_graph(p, input, batch, nullptr);
  return fp.graph.value(fp.logits);
}

template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
  const T mx = *std::max_element(logits.begin(), logits.end());
  std::vector<T> out(logits.size());
  T z = T(0);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    z += out[i];
  }
  for (auto& v : out) v /= z;
  return out;
}

/// Index of the largest value, ties to the lowest index.
template <typename T>
std::size_t argmax(std::span<const T> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

template <typename T>
struct LossAndGrads {
  T loss = T(0);
  TensorMap<T> grads;
};

template <typename T>
LossAndGrads<T> loss_and_grads(const ModelParams<T>& p, const ad::Tensor<T>& input, std::size_t batch,
                               std::span<const int> labels, Rng* dropout_rng = nullptr) {
  if (labels.size() != batch) throw Error(ErrorCode::ShapeMismatch, "labels vs batch");
  auto fp = forward_graph(p, input, batch, dropout_rng);
  auto& g = fp.graph;
  const auto loss = g.cross_entropy(fp.logits, labels);
  g.backward(loss);
  LossAndGrads<T> out;
  out.loss = g.value(loss).data[0];
  for (const auto& [name, var] : fp.params) {
    const auto& gr = g.grad(var);
    out.grads[name] = gr.data.empty() ? ad::Tensor<T>(p.at(name).rows, p.at(name).cols) : gr;
  }
  return out;
}

template <typename T>
struct AdamState {
  TensorMap<T> m;
  TensorMap<T> v;
  std::size_t step = 0;
};

template <typename T>
void adam_step(ModelParams<T>& p, const TensorMap<T>& grads, AdamState<T>& st, const TrainConfig& cfg) {
  ++st.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T step = static_cast<T>(cfg.lr / bc1);
  const T inv_bc2 = static_cast<T>(1.0 / bc2);
  const T eps = static_cast<T>(cfg.eps);
  for (auto& [name, t] : p.tensors) {
    const auto& g = grads.at(name);
    auto& m = st.m.try_emplace(name, t.rows, t.cols).first->second;
    auto& v = st.v.try_emplace(name, t.rows, t.cols).first->second;
    for (std::size_t i = 0; i < t.size(); ++i) {
      m.data[i] = b1 * m.data[i] + (T(1) - b1) * g.data[i];
      v.data[i] = b2 * v.data[i] + (T(1) - b2) * g.data[i] * g.data[i];
      t.data[i] -= step * m.data[i] / (std::sqrt(v.data[i] * inv_bc2) + eps);
    }
  }
}

struct Prediction {
  Label label = Label::LK;
  std::array<double, 3> probabilities{};
};

template <typename T>
std::vector<Prediction> predict_batch(const ModelParams<T>& p, std::span<const Sample> samples,
                                      std::size_t chunk = 128) {
  std::vector<Prediction> out;
  out.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += chunk) {
    const std::size_t n = std::min(chunk, samples.size() - start);
    const auto x = make_batch<T>(samples.subspan(start, n));
    const auto logits = forward(p, x, n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::span<const T> row(logits.row(i), logits.cols);
      const auto probs = softmax(row);
      Prediction pr;
      pr.label = static_cast<Label>(argmax(row));
      for (std::size_t c = 0; c < 3; ++c) pr.probabilities[c] = static_cast<double>(probs[c]);
      out.push_back(pr);
    }
  }
  return out;
}

template <typename T>
Prediction predict(const ModelParams<T>& p, const Sample& sample) {
  return predict_batch(p, std::span<const Sample>(&sample, 1)).front();
}

template <typename T>
double accuracy(const ModelParams<T>& p, std::span<const Sample> samples) {
  if (samples.empty()) return 0.0;
  const auto preds = predict_batch(p, samples);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) ok += preds[i].label == samples[i].label ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(samples.size());
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

template <typename T>
struct TrainResult {
  ModelParams<T> params;  // best validation checkpoint
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_accuracy = -1.0;
};

/// Adam over seeded shuffled mini-batches; keeps the best-validation
/// parameters and stops after `patience` epochs without improvement.
template <typename T>
TrainResult<T> train(ModelParams<T> params, std::span<const Sample> train_set, std::span<const Sample> val_set,
                     const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.empty() || val_set.empty()) throw Error(ErrorCode::EmptySet, "train/val set");
  TrainResult<T> result;
  result.params = params;
  AdamState<T> adam;
  Rng shuffle_rng = derive_rng(cfg.seed, 0x5348);
  Rng dropout_rng = derive_rng(cfg.seed, 0xD409);
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<int> labels;
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      const std::span<const std::size_t> idx(order.data() + start, n);
      labels.resize(n);
      for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(train_set[idx[i]].label);
      const auto x = make_batch<T>(train_set, idx);
      auto lg = loss_and_grads(params, x, n, labels, &dropout_rng);
      adam_step(params, lg.grads, adam, cfg);
      loss_sum += static_cast<double>(lg.loss) * static_cast<double>(n);
      seen += n;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.val_accuracy = accuracy(params, val_set);
    result.history.push_back(rec);
    if (rec.val_accuracy > result.best_val_accuracy) {
      result.best_val_accuracy = rec.val_accuracy;
      result.best_epoch = epoch;
      result.params = params;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
    if (cfg.target_val_accuracy && rec.val_accuracy >= *cfg.target_val_accuracy) break;
  }
  return result;
}

// Checkpoint: 8-byte magic, u64 LE header length, JSON header with a tensor
// manifest (name, shape, byte offset into the blob), float32 LE blob.

inline constexpr char kCheckpointMagic[8] = {'L', 'C', 'I', 'P', 'C', 'K', '0', '1'};

template <typename T>
std::string encode_checkpoint(const ModelParams<T>& p, nlohmann::json header) {
  header["config"] = p.config.to_json();
  header["columns"] = feature_columns();
  header["label_map"] = {{"LK", 0}, {"LLC", 1}, {"RLC", 2}};
  header["seed"] = p.config.seed;
  header["git_revision"] = LCIP_GIT_REVISION;
  header["dtype"] = "float32-le";
  nlohmann::json manifest = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : p.tensors) {
    manifest.push_back({{"name", name}, {"shape", {t.rows, t.cols}}, {"offset", offset}});
    offset += t.size() * 4;
  }
  header["manifest"] = manifest;
  const std::string h = header.dump();
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_u64(out, h.size());
  out += h;
  for (const auto& [name, t] : p.tensors) {
    for (T v : t.data) detail::put_f32(out, static_cast<float>(v));
  }
  return out;
}

struct Checkpoint {
  ModelParams<float> params;
  nlohmann::json header;
};

inline Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source = "<memory>") {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw Error(ErrorCode::MalformedRow, source + ": not a checkpoint");
  }
  const std::uint64_t hlen = detail::get_u64(bytes.data() + 8);
  if (16 + hlen > bytes.size()) throw Error(ErrorCode::MalformedRow, source + ": truncated header");
  Checkpoint ck;
  ck.header = nlohmann::json::parse(bytes.substr(16, hlen));
  ck.params.config = ModelConfig::from_json(ck.header.at("config"));
  const char* blob = bytes.data() + 16 + hlen;
  const std::size_t blob_size = bytes.size() - 16 - hlen;
  for (const auto& e : ck.header.at("manifest")) {
    const auto shape = e.at("shape").get<std::vector<std::size_t>>();
    const std::size_t off = e.at("offset").get<std::size_t>();
    ad::Tensor<float> t(shape.at(0), shape.at(1));
    if (off + t.size() * 4 > blob_size) throw Error(ErrorCode::MalformedRow, source + ": tensor out of range");
    for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = detail::get_f32(blob + off + 4 * i);
    ck.params.tensors.emplace(e.at("name").get<std::string>(), std::move(t));
  }
  return ck;
}

}  // namespace lcip
