#ifndef DGSML_MODEL_HPP_
#define DGSML_MODEL_HPP_

// Feature extractor F (stack of affine+relu layers, affine final layer) and
// linear task head T. Parameters are immutable value tensors; updates produce
// new parameter sets.

#include <cstdint>
#include <string>
#include <vector>

#include "dgsml/diffengine.hpp"

namespace dgsml {

struct ModelConfig {
  std::size_t input_dim = 2;
  std::vector<std::size_t> hidden_dims = {32, 32};
  std::size_t feature_dim = 16;
  std::size_t num_classes = 2;

  void validate() const;
};

struct ParamEntry {
  std::string name;
  Tensor value;
};

struct ModelParams {
  std::vector<ParamEntry> theta;  // feature extractor layers
  std::vector<ParamEntry> phi;    // task head

  // All tensors in a fixed order (theta entries, then phi entries).
  std::vector<Tensor> all() const;
  std::size_t count() const { return theta.size() + phi.size(); }
};

// Xavier-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

// Attaches every parameter tensor to the graph as a leaf.
ModelParams lift(Graph& graph, const ModelParams& params);
ModelParams detach(const ModelParams& params);

// Rebuilds a ModelParams whose tensors are given in all() order.
ModelParams with_tensors(const ModelParams& like, const std::vector<Tensor>& tensors);

Tensor extract_features(const ModelParams& params, const Tensor& x);
Tensor head_logits(const ModelParams& params, const Tensor& features);
Tensor logits(const ModelParams& params, const Tensor& x);
Tensor predict(const ModelParams& params, const Tensor& x);  // softmax rows

// p - lr * g for every parameter; with track set the result stays on the
// graph so losses evaluated at the new parameters differentiate through the
// update.
ModelParams sgd_step(const ModelParams& params, const std::vector<Tensor>& grads,
                     double lr, bool track);

std::vector<int> argmax_rows(const Tensor& probs);  // ties -> lowest index

// JSON checkpoint: flat list of (name, shape, values); doubles are written
// with 17 significant digits so values round-trip exactly.
void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace dgsml

#endif  // DGSML_MODEL_HPP_
