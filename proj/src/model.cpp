#include "bimamba/model.hpp"

#include <cmath>
#include <json.hpp>

#include "bimamba/errors.hpp"
#include "bimamba/ops.hpp"

namespace bimamba::model {

using nlohmann::ordered_json;

void StageModelConfig::validate() const {
  if (channels < 1) throw ConfigError("stage model: channels must be >= 1");
  if (epoch_samples < 64) throw ConfigError("stage model: epoch_samples must be >= 64");
  if (n_bimamba < 1) throw ConfigError("stage model: n_bimamba must be >= 1");
  if (state_dim < 1) throw ConfigError("stage model: state_dim must be >= 1");
  if (cnn.empty()) throw ConfigError("stage model: CNN front end needs at least one layer");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("stage model: dropout must lie in [0, 1)");
  if (eca_kernel != 0 && eca_kernel % 2 == 0) throw ConfigError("stage model: eca_kernel must be odd");
  for (const auto& l : cnn) {
    if (l.out_channels < 1 || l.kernel < 1 || l.stride < 1 || l.pool < 1) {
      throw ConfigError("stage model: CNN layer sizes must be >= 1");
    }
  }
  const std::size_t len = feature_length();
  if (len < 1 || len > epoch_samples / 8) {
    throw ConfigError("stage model: CNN front end leaves " + std::to_string(len) +
                      " steps; it must downsample to between 1 and epoch_samples/8 = " +
                      std::to_string(epoch_samples / 8));
  }
}

std::size_t StageModelConfig::feature_length() const {
  std::size_t len = epoch_samples;
  for (const auto& l : cnn) {
    const std::size_t padded = len + 2 * l.padding();
    if (l.kernel > padded) return 0;
    len = (padded - l.kernel) / l.stride + 1;
    if (l.pool > 1) {
      if (l.pool > len) return 0;
      len = (len - l.pool) / l.pool + 1;
    }
  }
  return len;
}

void HealthModelConfig::validate() const {
  if (max_cycles < 1) throw ConfigError("health model: max_cycles must be >= 1");
  if (n_bimamba < 1) throw ConfigError("health model: n_bimamba must be >= 1");
  if (state_dim < 1) throw ConfigError("health model: state_dim must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("health model: dropout must lie in [0, 1)");
}

Tensor Classifier::forward_eval(const Tensor& x) const {
  Rng unused(0);
  return forward(x, false, unused);
}

std::size_t Classifier::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : parameters()) n += t.numel();
  return n;
}

namespace {

ssm::BranchConfig branch_config(std::size_t width, std::size_t state_dim, std::size_t expand, std::size_t conv_width) {
  ssm::BranchConfig bc;
  bc.d_model = width;
  bc.state_dim = state_dim;
  bc.expand = expand;
  bc.conv_width = conv_width;
  return bc;
}

}  // namespace

StageModel::StageModel(StageModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  std::size_t in = cfg_.channels;
  for (const auto& l : cfg_.cnn) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * l.kernel));
    cnn.push_back({Tensor::uniform({l.out_channels, in, l.kernel}, rng, -bound, bound, true),
                   Tensor::uniform({l.out_channels}, rng, -bound, bound, true)});
    in = l.out_channels;
  }
  const std::size_t width = cfg_.hidden_width();
  const std::size_t k = cfg_.eca_kernel ? cfg_.eca_kernel : eca::adaptive_kernel_size(width);
  eca = eca::EcaAttention(width, k, rng);
  for (std::size_t i = 0; i < cfg_.n_bimamba; ++i) {
    blocks.emplace_back(branch_config(width, cfg_.state_dim, cfg_.expand, cfg_.conv_width), rng);
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(width));
  head_w = Tensor::uniform({kNumStages, width}, rng, -bound, bound, true);
  head_b = Tensor::zeros({kNumStages}, true);
}

Tensor StageModel::features(const Tensor& x, bool train, Rng& rng) const {
  if (x.rank() != 3 || x.dim(1) != cfg_.channels || x.dim(2) != cfg_.epoch_samples) {
    throw DimensionError("stage model expects [B, " + std::to_string(cfg_.channels) + ", " +
                         std::to_string(cfg_.epoch_samples) + "], got " + shape_str(x.shape()));
  }
  Tensor h = x;
  for (std::size_t i = 0; i < cnn.size(); ++i) {
    const auto& spec = cfg_.cnn[i];
    h = ops::relu(ops::conv1d(h, cnn[i].weight, cnn[i].bias, spec.stride, spec.padding()));
    if (spec.pool > 1) h = ops::max_pool1d(h, spec.pool, spec.pool);
    h = ops::dropout(h, cfg_.dropout, train, rng);
  }
  return h;
}

Tensor StageModel::forward(const Tensor& x, bool train, Rng& rng) const {
  Tensor h = features(x, train, rng);
  if (cfg_.use_eca) h = eca.forward(h);
  for (const auto& block : blocks) h = block.forward(h);
  Tensor pooled = ops::mean(h, 2);
  pooled = ops::dropout(pooled, cfg_.dropout, train, rng);
  return ops::linear(pooled, head_w, head_b);
}

NamedTensors StageModel::parameters() const {
  NamedTensors out;
  for (std::size_t i = 0; i < cnn.size(); ++i) {
    out.emplace_back("cnn." + std::to_string(i) + ".w", cnn[i].weight);
    out.emplace_back("cnn." + std::to_string(i) + ".b", cnn[i].bias);
  }
  // The ECA kernel is only a parameter when the module is in the graph.
  if (cfg_.use_eca) eca.collect("eca.", out);
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect("bimamba." + std::to_string(i) + ".", out);
  out.emplace_back("head.w", head_w);
  out.emplace_back("head.b", head_b);
  return out;
}

std::string StageModel::config_json() const {
  ordered_json j;
  j["model"] = "stage";
  j["config"] = ordered_json::parse(to_json(cfg_));
  return j.dump();
}

HealthModel::HealthModel(HealthModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const std::size_t width = HealthModelConfig::kInputRows;
  for (std::size_t i = 0; i < cfg_.n_bimamba; ++i) {
    blocks.emplace_back(branch_config(width, cfg_.state_dim, cfg_.expand, cfg_.conv_width), rng);
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(width));
  head_w = Tensor::uniform({HealthModelConfig::kClasses, width}, rng, -bound, bound, true);
  head_b = Tensor::zeros({HealthModelConfig::kClasses}, true);
}

Tensor HealthModel::forward(const Tensor& x, bool train, Rng& rng) const {
  constexpr std::size_t rows = HealthModelConfig::kInputRows;
  if (x.rank() != 3 || x.dim(1) != rows) {
    throw DimensionError("health model expects [B, 6, T], got " + shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0), steps = x.dim(2);
  const auto xv = x.data();
  std::vector<std::size_t> lengths(batch, 0);
  std::vector<double> mask(batch * steps, 0.0);
  std::vector<double> inv_len(batch, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* m = xv.data() + (b * rows + rows - 1) * steps;
    while (lengths[b] < steps && m[lengths[b]] > 0.5) ++lengths[b];
    for (std::size_t t = 0; t < lengths[b]; ++t) mask[b * steps + t] = 1.0;
    // Mean over an empty sequence is defined as zero.
    inv_len[b] = lengths[b] ? 1.0 / static_cast<double>(lengths[b]) : 0.0;
  }
  Tensor h = x;
  for (const auto& block : blocks) h = block.forward(h, lengths);
  Tensor masked = ops::mul(h, Tensor({batch, 1, steps}, std::move(mask)));
  Tensor pooled = ops::mul(ops::sum(masked, 2), Tensor({batch, 1}, std::move(inv_len)));
  pooled = ops::dropout(pooled, cfg_.dropout, train, rng);
  return ops::linear(pooled, head_w, head_b);
}

NamedTensors HealthModel::parameters() const {
  NamedTensors out;
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect("bimamba." + std::to_string(i) + ".", out);
  out.emplace_back("head.w", head_w);
  out.emplace_back("head.b", head_b);
  return out;
}

std::string HealthModel::config_json() const {
  ordered_json j;
  j["model"] = "health";
  j["config"] = ordered_json::parse(to_json(cfg_));
  return j.dump();
}

std::unique_ptr<StageModel> build_stage_model(const StageModelConfig& cfg, std::uint64_t seed) {
  return std::make_unique<StageModel>(cfg, seed);
}

std::unique_ptr<HealthModel> build_health_model(const HealthModelConfig& cfg, std::uint64_t seed) {
  return std::make_unique<HealthModel>(cfg, seed);
}

Tensor forward_stage(const StageModel& m, const EpochBatch& batch, bool train, Rng& rng) {
  if (batch.data.rank() != 3 || batch.data.dim(0) != batch.size()) {
    throw DimensionError("forward_stage: batch data " + shape_str(batch.data.shape()) + " does not match " +
                         std::to_string(batch.size()) + " labels");
  }
  return m.forward(batch.data, train, rng);
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("argmax_rows expects [B, K], got " + shape_str(logits.shape()));
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  const auto v = logits.data();
  std::vector<int> out(rows, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c) {
      if (v[r * cols + c] > v[r * cols + best]) best = c;  // strict: ties keep the lower index
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

Hypnogram predict_hypnogram(const Classifier& m, std::span<const EpochBatch> epochs) {
  NoGradGuard guard;
  Hypnogram h;
  for (const auto& batch : epochs) {
    if (batch.size() == 0) continue;
    if (h.subject.empty() && !batch.subjects.empty()) h.subject = batch.subjects.front();
    for (int c : argmax_rows(m.forward_eval(batch.data))) h.stages.push_back(static_cast<StageLabel>(c));
  }
  h.mask.assign(h.stages.size(), true);
  return h;
}

std::string to_json(const StageModelConfig& cfg) {
  ordered_json j;
  j["channels"] = cfg.channels;
  j["epoch_samples"] = cfg.epoch_samples;
  j["n_bimamba"] = cfg.n_bimamba;
  j["state_dim"] = cfg.state_dim;
  j["cnn"] = ordered_json::array();
  for (const auto& l : cfg.cnn) {
    j["cnn"].push_back({{"out_channels", l.out_channels}, {"kernel", l.kernel}, {"stride", l.stride}, {"pool", l.pool}});
  }
  j["dropout"] = cfg.dropout;
  j["expand"] = cfg.expand;
  j["conv_width"] = cfg.conv_width;
  j["use_eca"] = cfg.use_eca;
  j["eca_kernel"] = cfg.eca_kernel;
  return j.dump();
}

namespace {

template <typename T>
void read_field(const ordered_json& j, const char* key, T& dst) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw SchemaError(std::string("model config: field '") + key + "' has the wrong type");
  }
}

ordered_json parse_object(const std::string& text, const char* what) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string(what) + ": " + e.what());
  }
  if (!j.is_object()) throw SchemaError(std::string(what) + ": expected a JSON object");
  return j;
}

}  // namespace

StageModelConfig stage_config_from_json(const std::string& text) {
  const auto j = parse_object(text, "stage model config");
  StageModelConfig cfg;
  read_field(j, "channels", cfg.channels);
  read_field(j, "epoch_samples", cfg.epoch_samples);
  read_field(j, "n_bimamba", cfg.n_bimamba);
  read_field(j, "state_dim", cfg.state_dim);
  read_field(j, "dropout", cfg.dropout);
  read_field(j, "expand", cfg.expand);
  read_field(j, "conv_width", cfg.conv_width);
  read_field(j, "use_eca", cfg.use_eca);
  read_field(j, "eca_kernel", cfg.eca_kernel);
  if (j.contains("cnn")) {
    if (!j["cnn"].is_array()) throw SchemaError("model config: field 'cnn' must be an array");
    cfg.cnn.clear();
    for (const auto& l : j["cnn"]) {
      ConvLayerSpec spec;
      read_field(l, "out_channels", spec.out_channels);
      read_field(l, "kernel", spec.kernel);
      read_field(l, "stride", spec.stride);
      read_field(l, "pool", spec.pool);
      cfg.cnn.push_back(spec);
    }
  }
  return cfg;
}

std::string to_json(const HealthModelConfig& cfg) {
  ordered_json j;
  j["max_cycles"] = cfg.max_cycles;
  j["n_bimamba"] = cfg.n_bimamba;
  j["state_dim"] = cfg.state_dim;
  j["expand"] = cfg.expand;
  j["conv_width"] = cfg.conv_width;
  j["dropout"] = cfg.dropout;
  return j.dump();
}

HealthModelConfig health_config_from_json(const std::string& text) {
  const auto j = parse_object(text, "health model config");
  HealthModelConfig cfg;
  read_field(j, "max_cycles", cfg.max_cycles);
  read_field(j, "n_bimamba", cfg.n_bimamba);
  read_field(j, "state_dim", cfg.state_dim);
  read_field(j, "expand", cfg.expand);
  read_field(j, "conv_width", cfg.conv_width);
  read_field(j, "dropout", cfg.dropout);
  return cfg;
}

void save_model(const Classifier& m, const std::filesystem::path& stem) {
  Checkpoint ckpt;
  ckpt.tensors = m.parameters();
  ckpt.meta_json = m.config_json();
  save_checkpoint(stem, ckpt);
}

std::unique_ptr<Classifier> load_model(const std::filesystem::path& stem) {
  Checkpoint ckpt = load_checkpoint(stem);
  const auto meta = parse_object(ckpt.meta_json, "checkpoint meta");
  const auto kind = meta.value("model", "");
  if (!meta.contains("config")) throw SchemaError("checkpoint meta: field 'config'");
  std::unique_ptr<Classifier> m;
  if (kind == "stage") {
    m = build_stage_model(stage_config_from_json(meta["config"].dump()), 0);
  } else if (kind == "health") {
    m = build_health_model(health_config_from_json(meta["config"].dump()), 0);
  } else {
    throw SchemaError("checkpoint meta: field 'model' must be 'stage' or 'health'");
  }
  NamedTensors params = m->parameters();
  assign_tensors(params, ckpt.tensors);
  return m;
}

}  // namespace bimamba::model
