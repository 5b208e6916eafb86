#ifndef DGSML_LOSSES_HPP_
#define DGSML_LOSSES_HPP_

// The three training losses: task cross-entropy, entropy-weighted
// pseudo-label centroid discrepancy, and cross-domain centroid-distance
// alignment.

#include <cstddef>
#include <optional>
#include <vector>

#include "dgsml/diffengine.hpp"
#include "dgsml/model.hpp"

namespace dgsml {

struct PseudoLabeledBatch {
  Tensor features;            // [m x D], on the graph
  std::vector<int> labels;    // argmax class per row, ties -> lowest index
  Tensor weights;             // [m x 1] confidence weights in [0,1], on the graph
  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
};

struct CentroidSet {
  enum class Variant { kLabeledOnly, kLabeledUnlabeled };

  int domain_id = 0;
  Variant variant = Variant::kLabeledOnly;
  // one entry per class; nullopt when no sample of that class contributed
  std::vector<std::optional<Tensor>> centroids;

  std::size_t num_classes() const { return centroids.size(); }
  bool present(std::size_t c) const { return centroids[c].has_value(); }
};

// Mean over the batch of -log p(y_i); computed from logits in log-sum-exp
// form. Labels outside [0, C) are a contract violation.
Tensor task_loss(const ModelParams& params, const Tensor& x, const std::vector<int>& y);

// Assigns argmax pseudo-labels and confidence weights w = 1 - H(p)/ln C
// (normalized entropy; w = 0 for uniform predictions, 1 for one-hot). The
// weights stay on the graph and differentiate through the predictions.
PseudoLabeledBatch pseudo_label(const ModelParams& params, const Tensor& x_unlabeled);

// Per-class mean of the feature rows with that label.
CentroidSet labeled_centroids(const Tensor& features, const std::vector<int>& y,
                              std::size_t num_classes, int domain_id = 0);

// Per-class (sum of labeled class rows + sum of w_i * pseudo class rows) /
// (N_c + N_pseudo_c). With an empty pseudo batch this reproduces
// labeled_centroids bit for bit.
CentroidSet combined_centroids(const Tensor& labeled_features, const std::vector<int>& y,
                               const PseudoLabeledBatch& pseudo, std::size_t num_classes,
                               int domain_id = 0);

// Sum over classes present in both sets of ||a_c - b_c||_2.
Tensor semi_supervised_loss(const CentroidSet& labeled_only, const CentroidSet& combined);

// Pairwise distances from class c's centroid to every other class centroid,
// in ascending class order; entries whose partner class is absent are
// nullopt. Requesting an absent class throws AbsentClassError.
struct DistanceVector {
  std::size_t cls = 0;
  std::vector<std::optional<Tensor>> entries;  // length C-1, scalars
};
DistanceVector centroid_distance_vector(const CentroidSet& set, std::size_t cls);

// Sum over classes and (train, test) domain pairs of the distance between
// the two domains' centroid-distance vectors, computed over vector positions
// where both domains have both endpoint centroids. Requires the
// labeled+unlabeled centroid variant.
Tensor alignment_loss(const std::vector<CentroidSet>& train_sets,
                      const std::vector<CentroidSet>& test_sets);

}  // namespace dgsml

#endif  // DGSML_LOSSES_HPP_
