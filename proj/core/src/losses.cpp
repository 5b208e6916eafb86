#include "dgsml/losses.hpp"

#include <cmath>
#include <string>

#include "dgsml/errors.hpp"

namespace dgsml {

namespace {

void check_labels(const std::vector<int>& y, std::size_t num_classes, std::size_t rows) {
  if (y.size() != rows)
    throw ContractError("label count " + std::to_string(y.size()) + " does not match batch rows " +
                        std::to_string(rows));
  for (int label : y)
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes)
      throw ContractError("label " + std::to_string(label) + " out of range [0, " +
                          std::to_string(num_classes) + ")");
}

// ||a - b||_2 with subgradient 0 when the points coincide.
Tensor distance(const Tensor& a, const Tensor& b) { return l2_norm(sub(a, b)); }

// Shared centroid arithmetic: (sum of selected rows [+ weighted pseudo sum])
// scaled by 1/denominator. labeled_centroids and combined_centroids must go
// through the same op sequence so an empty pseudo set reproduces the
// labeled-only centroid bitwise.
Tensor centroid_value(const Tensor& features, const std::vector<std::size_t>& idx,
                      const std::optional<Tensor>& pseudo_sum, double denom) {
  Tensor total = idx.empty() ? *pseudo_sum : sum_axis0(select_rows(features, idx));
  if (!idx.empty() && pseudo_sum) total = add(total, *pseudo_sum);
  const Tensor scaled = scalar_mul(total, 1.0 / denom);
  return reshape(scaled, {scaled.cols()});
}

}  // namespace

Tensor task_loss(const ModelParams& params, const Tensor& x, const std::vector<int>& y) {
  const std::size_t num_classes = params.phi[0].value.cols();
  check_labels(y, num_classes, x.rows());
  const Tensor z = logits(params, x);
  // -log softmax(z)[y] = logsumexp(z) - z_y, stable for any logit magnitude
  const Tensor lse = logsumexp_rows(z);
  std::vector<double> onehot(z.rows() * num_classes, 0.0);
  for (std::size_t i = 0; i < y.size(); ++i)
    onehot[i * num_classes + static_cast<std::size_t>(y[i])] = 1.0;
  const Tensor true_logit = sum_axis1(mul(z, matrix(z.rows(), num_classes, std::move(onehot))));
  return mean(sub(lse, true_logit));
}

PseudoLabeledBatch pseudo_label(const ModelParams& params, const Tensor& x_unlabeled) {
  const std::size_t num_classes = params.phi[0].value.cols();
  PseudoLabeledBatch batch;
  batch.features = extract_features(params, x_unlabeled);
  const Tensor z = head_logits(params, batch.features);
  const Tensor probs = softmax(z);
  batch.labels = argmax_rows(probs);

  // normalized Shannon entropy; p log p terms with underflowed p contribute
  // exactly 0 because log_softmax stays finite
  const Tensor log_probs = log_softmax_rows(z);
  const Tensor entropy = neg(sum_axis1(mul(probs, log_probs)));
  const Tensor raw = sub(scalar(1.0), scalar_mul(entropy, 1.0 / std::log(static_cast<double>(num_classes))));
  // clamp to [0,1]; rounding can leave raw a few ulp outside
  batch.weights = sub(scalar(1.0), relu(sub(scalar(1.0), relu(raw))));
  return batch;
}

CentroidSet labeled_centroids(const Tensor& features, const std::vector<int>& y,
                              std::size_t num_classes, int domain_id) {
  check_labels(y, num_classes, features.rows());
  CentroidSet set;
  set.domain_id = domain_id;
  set.variant = CentroidSet::Variant::kLabeledOnly;
  set.centroids.resize(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (static_cast<std::size_t>(y[i]) == c) idx.push_back(i);
    if (idx.empty()) continue;  // absent class
    set.centroids[c] = centroid_value(features, idx, std::nullopt,
                                      static_cast<double>(idx.size()));
  }
  return set;
}

CentroidSet combined_centroids(const Tensor& labeled_features, const std::vector<int>& y,
                               const PseudoLabeledBatch& pseudo, std::size_t num_classes,
                               int domain_id) {
  check_labels(y, num_classes, labeled_features.rows());
  if (!pseudo.empty() && pseudo.features.cols() != labeled_features.cols())
    throw DimensionError("combined_centroids: feature dimension mismatch");
  CentroidSet set;
  set.domain_id = domain_id;
  set.variant = CentroidSet::Variant::kLabeledUnlabeled;
  set.centroids.resize(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::vector<std::size_t> labeled_idx;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (static_cast<std::size_t>(y[i]) == c) labeled_idx.push_back(i);
    std::vector<std::size_t> pseudo_idx;
    for (std::size_t i = 0; i < pseudo.labels.size(); ++i)
      if (static_cast<std::size_t>(pseudo.labels[i]) == c) pseudo_idx.push_back(i);
    if (labeled_idx.empty() && pseudo_idx.empty()) continue;

    std::optional<Tensor> pseudo_sum;
    if (!pseudo_idx.empty()) {
      const Tensor rows = select_rows(pseudo.features, pseudo_idx);
      const Tensor w = select_rows(pseudo.weights, pseudo_idx);  // [k x 1]
      pseudo_sum = sum_axis0(mul(w, rows));
    }
    // Denominator counts samples (not weight mass); a zero-weight pseudo
    // sample still enlarges it.
    const double denom = static_cast<double>(labeled_idx.size() + pseudo_idx.size());
    set.centroids[c] = centroid_value(labeled_features, labeled_idx, pseudo_sum, denom);
  }
  return set;
}

Tensor semi_supervised_loss(const CentroidSet& labeled_only, const CentroidSet& combined) {
  if (labeled_only.num_classes() != combined.num_classes())
    throw ContractError("semi_supervised_loss: class count mismatch");
  Tensor total = scalar(0.0);
  for (std::size_t c = 0; c < labeled_only.num_classes(); ++c) {
    if (!labeled_only.present(c) || !combined.present(c)) continue;
    total = add(total, distance(*labeled_only.centroids[c], *combined.centroids[c]));
  }
  return total;
}

DistanceVector centroid_distance_vector(const CentroidSet& set, std::size_t cls) {
  if (cls >= set.num_classes() || !set.present(cls))
    throw AbsentClassError("no centroid for class " + std::to_string(cls));
  DistanceVector v;
  v.cls = cls;
  for (std::size_t other = 0; other < set.num_classes(); ++other) {
    if (other == cls) continue;
    if (set.present(other))
      v.entries.push_back(distance(*set.centroids[cls], *set.centroids[other]));
    else
      v.entries.push_back(std::nullopt);
  }
  return v;
}

Tensor alignment_loss(const std::vector<CentroidSet>& train_sets,
                      const std::vector<CentroidSet>& test_sets) {
  for (const auto& s : train_sets)
    if (s.variant != CentroidSet::Variant::kLabeledUnlabeled)
      throw ContractError("alignment_loss requires labeled+unlabeled centroids");
  for (const auto& s : test_sets)
    if (s.variant != CentroidSet::Variant::kLabeledUnlabeled)
      throw ContractError("alignment_loss requires labeled+unlabeled centroids");

  Tensor total = scalar(0.0);
  for (const CentroidSet& tr : train_sets) {
    for (const CentroidSet& ts : test_sets) {
      const std::size_t num_classes = tr.num_classes();
      if (ts.num_classes() != num_classes)
        throw ContractError("alignment_loss: class count mismatch across domains");
      for (std::size_t c = 0; c < num_classes; ++c) {
        if (!tr.present(c) || !ts.present(c)) continue;
        // distance-vector positions where both domains have both endpoints
        std::vector<Tensor> diffs;
        for (std::size_t other = 0; other < num_classes; ++other) {
          if (other == c || !tr.present(other) || !ts.present(other)) continue;
          const Tensor d_tr = distance(*tr.centroids[c], *tr.centroids[other]);
          const Tensor d_ts = distance(*ts.centroids[c], *ts.centroids[other]);
          diffs.push_back(reshape(sub(d_tr, d_ts), {1}));
        }
        if (diffs.empty()) continue;
        total = add(total, l2_norm(concat_rows(diffs)));
      }
    }
  }
  return total;
}

}  // namespace dgsml
