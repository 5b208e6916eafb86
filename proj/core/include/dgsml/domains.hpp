#ifndef DGSML_DOMAINS_HPP_
#define DGSML_DOMAINS_HPP_

// Synthetic multi-domain datasets, label masking to a target unlabeled rate,
// leave-one-domain-out splitting, and dataset file I/O.

#include <cstdint>
#include <string>
#include <vector>

#include "dgsml/diffengine.hpp"

namespace dgsml {

inline constexpr int kUnlabeled = -1;

struct Sample {
  std::vector<double> features;
  int label = kUnlabeled;  // class index, or kUnlabeled
  int domain_id = 0;
};

struct DomainDataset {
  int domain_id = 0;
  std::vector<Sample> labeled;
  std::vector<Sample> unlabeled;
  std::size_t size() const { return labeled.size() + unlabeled.size(); }
};

struct DomainCollection {
  std::vector<DomainDataset> domains;
  std::size_t num_classes = 0;
  std::size_t input_dim = 0;
  std::string generator_json;  // generator metadata, carried into the manifest

  const DomainDataset& domain_by_id(int id) const;
  std::vector<int> domain_ids() const;
};

// Two interleaving half-circles (C = 2), one domain per rotation angle. All
// domains share the same evenly spaced base points; each domain applies its
// rotation about the origin and adds its own Gaussian coordinate noise.
// samples_per_domain must be even so classes balance exactly.
DomainCollection generate_rotated_moons(std::size_t samples_per_domain,
                                        const std::vector<double>& rotations_deg,
                                        double noise_sd, std::uint64_t seed);

// C Gaussian blobs per domain, centers evenly spaced on a circle of radius
// class_separation (padded with zeros past the first two dimensions), each
// domain translated by its own offset vector.
DomainCollection generate_shifted_gaussians(std::size_t num_classes,
                                            std::size_t samples_per_domain,
                                            std::size_t input_dim, double class_separation,
                                            const std::vector<std::vector<double>>& translations,
                                            double noise_sd, std::uint64_t seed);

// True labels of masked samples, kept outside the collection so training code
// cannot see them; used only for diagnostics.
struct MaskDiagnostics {
  struct Row {
    int domain_id;
    std::size_t unlabeled_index;  // position within the domain's unlabeled set
    int true_label;
  };
  std::vector<Row> rows;
};

struct MaskResult {
  DomainCollection collection;
  MaskDiagnostics diagnostics;
};

// Moves floor(rate * |L|) uniformly chosen samples per domain from the
// labeled to the unlabeled set. The selection is redrawn until every class
// keeps at least one labeled sample per domain; when that is impossible the
// call fails with ConfigError.
MaskResult mask_labels(const DomainCollection& collection, double rate, std::uint64_t seed);

struct LodoSplit {
  DomainCollection sources;
  DomainDataset target;
};

LodoSplit leave_one_domain_out(const DomainCollection& collection, int target_id);

// CSV format: header `domain,label,f0,...,f{k-1}`, one sample per row,
// label -1 meaning unlabeled; doubles printed with 17 significant digits so a
// write/read round-trip is exact. Companion files: a JSON manifest with
// generator metadata and a diagnostics CSV with the true labels of masked
// rows.
void write_csv(const DomainCollection& collection, const std::string& path);
DomainCollection read_csv(const std::string& path);
void write_manifest(const DomainCollection& collection, const std::string& path);
void apply_manifest(DomainCollection& collection, const std::string& path);
void write_diagnostics_csv(const DomainCollection& collection, const MaskDiagnostics& diag,
                           const std::string& path);

// Dense views used by the trainer.
Tensor features_tensor(const std::vector<Sample>& samples);
std::vector<int> labels_of(const std::vector<Sample>& samples);

std::string format_double17(double v);

}  // namespace dgsml

#endif  // DGSML_DOMAINS_HPP_
