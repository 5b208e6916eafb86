#include "dgsml/model.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>

#include "dgsml/errors.hpp"
#include "dgsml/rng.hpp"

#include "json.hpp"

namespace dgsml {

void ModelConfig::validate() const {
  if (input_dim < 1) throw ConfigError("input_dim must be >= 1");
  if (feature_dim < 1) throw ConfigError("feature_dim must be >= 1");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  for (std::size_t h : hidden_dims)
    if (h < 1) throw ConfigError("hidden dims must be >= 1");
}

std::vector<Tensor> ModelParams::all() const {
  std::vector<Tensor> out;
  out.reserve(count());
  for (const ParamEntry& e : theta) out.push_back(e.value);
  for (const ParamEntry& e : phi) out.push_back(e.value);
  return out;
}

namespace {

Tensor xavier_weight(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> w(fan_in * fan_out);
  for (double& v : w) v = rng.uniform(-bound, bound);
  return matrix(fan_in, fan_out, std::move(w));
}

}  // namespace

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(mix_seed(seed, 0x6d6f64656cULL));  // init stream
  ModelParams p;
  std::size_t in = config.input_dim;
  std::size_t layer = 0;
  for (std::size_t h : config.hidden_dims) {
    const std::string base = "theta.fc" + std::to_string(layer++);
    p.theta.push_back({base + ".weight", xavier_weight(in, h, rng)});
    p.theta.push_back({base + ".bias", zeros({h})});
    in = h;
  }
  p.theta.push_back({"theta.feat.weight", xavier_weight(in, config.feature_dim, rng)});
  p.theta.push_back({"theta.feat.bias", zeros({config.feature_dim})});
  p.phi.push_back({"phi.head.weight", xavier_weight(config.feature_dim, config.num_classes, rng)});
  p.phi.push_back({"phi.head.bias", zeros({config.num_classes})});
  return p;
}

ModelParams lift(Graph& graph, const ModelParams& params) {
  ModelParams out;
  for (const ParamEntry& e : params.theta) out.theta.push_back({e.name, graph.leaf(e.value)});
  for (const ParamEntry& e : params.phi) out.phi.push_back({e.name, graph.leaf(e.value)});
  return out;
}

ModelParams detach(const ModelParams& params) {
  ModelParams out;
  for (const ParamEntry& e : params.theta) out.theta.push_back({e.name, detach(e.value)});
  for (const ParamEntry& e : params.phi) out.phi.push_back({e.name, detach(e.value)});
  return out;
}

ModelParams with_tensors(const ModelParams& like, const std::vector<Tensor>& tensors) {
  if (tensors.size() != like.count())
    throw ContractError("with_tensors: expected " + std::to_string(like.count()) + " tensors");
  ModelParams out;
  std::size_t i = 0;
  for (const ParamEntry& e : like.theta) out.theta.push_back({e.name, tensors[i++]});
  for (const ParamEntry& e : like.phi) out.phi.push_back({e.name, tensors[i++]});
  return out;
}

Tensor extract_features(const ModelParams& params, const Tensor& x) {
  if (x.rank() != 2)
    throw DimensionError("extract_features expects a [batch x input_dim] matrix");
  Tensor h = x;
  // theta holds (weight, bias) pairs; all but the last pair get a relu
  const std::size_t pairs = params.theta.size() / 2;
  for (std::size_t l = 0; l < pairs; ++l) {
    const Tensor& w = params.theta[2 * l].value;
    const Tensor& b = params.theta[2 * l + 1].value;
    h = add(matmul(h, w), b);
    if (l + 1 < pairs) h = relu(h);
  }
  return h;
}

Tensor head_logits(const ModelParams& params, const Tensor& features) {
  return add(matmul(features, params.phi[0].value), params.phi[1].value);
}

Tensor logits(const ModelParams& params, const Tensor& x) {
  return head_logits(params, extract_features(params, x));
}

Tensor predict(const ModelParams& params, const Tensor& x) {
  return softmax(logits(params, x));
}

ModelParams sgd_step(const ModelParams& params, const std::vector<Tensor>& grads,
                     double lr, bool track) {
  if (!(lr >= 0.0)) throw ContractError("sgd_step: learning rate must be >= 0");
  const std::vector<Tensor> cur = params.all();
  if (grads.size() != cur.size())
    throw ContractError("sgd_step: gradient count mismatch");
  std::optional<NoGradGuard> guard;
  if (!track) guard.emplace();
  std::vector<Tensor> next;
  next.reserve(cur.size());
  for (std::size_t i = 0; i < cur.size(); ++i) {
    if (grads[i].shape != cur[i].shape)
      throw DimensionError("sgd_step: gradient shape mismatch for " + std::to_string(i));
    next.push_back(sub(cur[i], scalar_mul(grads[i], lr)));
  }
  return with_tensors(params, next);
}

std::vector<int> argmax_rows(const Tensor& probs) {
  const std::size_t m = probs.rows(), n = probs.cols();
  std::vector<int> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j)
      if (probs(i, j) > probs(i, best)) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_entries(std::ostream& os, const std::vector<ParamEntry>& entries, bool& first) {
  for (const ParamEntry& e : entries) {
    if (!first) os << ",\n";
    first = false;
    os << "    {\"name\": \"" << e.name << "\", \"shape\": [";
    for (std::size_t i = 0; i < e.value.shape.size(); ++i) {
      if (i) os << ", ";
      os << e.value.shape[i];
    }
    os << "], \"values\": [";
    const auto& vals = e.value.values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      if (i) os << ", ";
      os << format_double(vals[i]);
    }
    os << "]}";
  }
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open checkpoint file for writing: " + path);
  os << "{\n  \"format\": \"dgsml-checkpoint\",\n  \"version\": 1,\n  \"tensors\": [\n";
  bool first = true;
  write_entries(os, params.theta, first);
  write_entries(os, params.phi, first);
  os << "\n  ]\n}\n";
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open checkpoint file: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("invalid checkpoint JSON: " + std::string(e.what()));
  }
  if (j.value("format", "") != "dgsml-checkpoint")
    throw ParseError("not a dgsml checkpoint: " + path);
  ModelParams p;
  for (const auto& t : j.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    std::vector<std::size_t> shape = t.at("shape").get<std::vector<std::size_t>>();
    std::vector<double> values = t.at("values").get<std::vector<double>>();
    ParamEntry entry{name, tensor(std::move(shape), std::move(values))};
    if (name.rfind("phi.", 0) == 0)
      p.phi.push_back(std::move(entry));
    else
      p.theta.push_back(std::move(entry));
  }
  return p;
}

}  // namespace dgsml
