#ifndef DGSML_TRAINER_HPP_
#define DGSML_TRAINER_HPP_

// Episodic meta-train / meta-test loop with an inner SGD update and a
// second-order outer update, plus the pooled supervised baseline (DeepAll).

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "dgsml/diffengine.hpp"
#include "dgsml/domains.hpp"
#include "dgsml/losses.hpp"
#include "dgsml/model.hpp"
#include "dgsml/rng.hpp"

namespace dgsml {

struct HyperParams {
  // Defaults are tuned for the bundled synthetic benchmarks. The norm-based
  // losses keep unit-magnitude gradients however small the discrepancy gets,
  // so beta well below 1 is needed for the task loss to stay in charge.
  double alpha0 = 0.1;  // inner learning rate
  double alpha1 = 0.1;  // outer learning rate
  double beta0 = 0.1;   // semi-supervised loss coefficient
  double beta1 = 0.5;   // alignment loss coefficient
  std::size_t batch_per_domain = 16;
  std::size_t iterations = 2000;
  // With second_order set, the outer update differentiates the meta-test loss
  // through the inner update (Hessian-vector terms). Without it, the inner
  // gradients are treated as constants (first-order approximation).
  bool second_order = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpisodeSplit {
  std::vector<int> train_ids;  // meta-train domains
  int test_id = -1;            // held-out meta-test domain
};

// One uniformly chosen domain becomes the meta-test set; the rest meta-train.
EpisodeSplit split_domains(const std::vector<int>& domain_ids, Rng& rng);

struct DomainBatch {
  int domain_id = 0;
  Tensor labeled_x;                   // [b x input_dim]
  std::vector<int> labels;
  std::optional<Tensor> unlabeled_x;  // absent when the domain has no unlabeled pool
};

struct MetaTrainResult {
  ModelParams inner;   // (theta', phi'), on the graph
  Tensor loss;         // l_task + beta0 * sum of per-domain semi-supervised losses
  double task_value = 0.0;
  double semi_supervised_value = 0.0;
};

// Inner phase: pooled cross-entropy over every meta-train labeled sample plus
// the per-domain centroid-discrepancy losses, followed by one tracked SGD
// step at rate alpha0. Inner gradients keep their graph history only in
// second-order mode.
MetaTrainResult meta_train_step(const ModelParams& params,
                                const std::vector<DomainBatch>& train_batches,
                                const HyperParams& hp);

struct MetaTestResult {
  Tensor loss;  // l_task at inner params + beta1 * alignment
  double task_value = 0.0;
  double alignment_value = 0.0;
};

// Outer phase objective: cross-entropy of the meta-test labeled samples under
// the inner parameters, plus the cross-domain alignment loss with every
// centroid (train and test domains alike) recomputed under the inner
// parameters.
MetaTestResult meta_test_step(const ModelParams& inner,
                              const std::vector<DomainBatch>& train_batches,
                              const std::vector<DomainBatch>& test_batches,
                              const HyperParams& hp);

// params <- params - alpha1 * d(l_meta_train + l_meta_test)/d(params).
// Returns detached parameter values; throws DivergenceError (tagged with
// `iteration`) if a gradient or updated parameter is non-finite.
ModelParams outer_update(const ModelParams& lifted_params, const Tensor& meta_train_loss,
                         const Tensor& meta_test_loss, const HyperParams& hp,
                         std::size_t iteration = 0);

struct IterationRecord {
  std::size_t iteration;
  double task_train;
  double semi_supervised;
  double task_test;
  double alignment;
  double total;
};

struct EvalRecord {
  std::size_t iteration;
  double accuracy;
};

struct TrainLog {
  std::vector<IterationRecord> iterations;
  std::vector<EvalRecord> evals;
};

struct TrainResult {
  ModelParams params;
  TrainLog log;
};

// Called every eval_interval iterations (and after the last one) with the
// current detached parameters; returns an accuracy to record.
using EvalHook = std::function<double(std::size_t iteration, const ModelParams&)>;

inline constexpr std::size_t kEvalInterval = 100;

TrainResult train(const DomainCollection& sources, const ModelConfig& config,
                  const HyperParams& hp, const EvalHook& eval_hook = nullptr);

// Pooled supervised baseline: plain SGD on the cross-entropy of all source
// domains' labeled samples; unlabeled samples are ignored.
TrainResult deepall_train(const DomainCollection& sources, const ModelConfig& config,
                          const HyperParams& hp, const EvalHook& eval_hook = nullptr);

// Fraction of samples whose argmax prediction matches the label.
double evaluate_accuracy(const ModelParams& params, const std::vector<Sample>& samples);

}  // namespace dgsml

#endif  // DGSML_TRAINER_HPP_
