#ifndef DGSML_EXPERIMENT_HPP_
#define DGSML_EXPERIMENT_HPP_

// Experiment harness: leave-one-domain-out sweeps over unlabeled rates and
// seeds, metrics emission, summary statistics, and the ablation protocol.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dgsml/domains.hpp"
#include "dgsml/model.hpp"
#include "dgsml/trainer.hpp"

namespace dgsml {

struct DataSpec {
  std::string csv_path;  // when set, load from file; otherwise generate

  std::string generator = "moons";  // moons | gaussians
  std::size_t samples_per_domain = 200;
  std::uint64_t data_seed = 7;
  double noise_sd = 0.1;
  // moons
  std::vector<double> rotations_deg = {0.0, 30.0, 60.0, 90.0};
  // gaussians
  std::size_t num_classes = 3;
  std::size_t input_dim = 2;
  double class_separation = 2.0;
  std::vector<std::vector<double>> translations;
};

DomainCollection load_data(const DataSpec& spec);

inline const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> methods = {
      "dgsml", "deepall", "dgsml_no_sl", "dgsml_no_align", "dgsml_neither",
      "dgsml_first_order"};
  return methods;
}

// The four DGSML ablation variants run against the full method.
inline const std::vector<std::string>& ablation_methods() {
  static const std::vector<std::string> methods = {
      "dgsml", "dgsml_no_sl", "dgsml_no_align", "dgsml_neither", "dgsml_first_order"};
  return methods;
}

struct ExperimentConfig {
  DataSpec data;
  ModelConfig model;  // input_dim / num_classes are overridden by the dataset
  HyperParams hyper;
  std::vector<double> rates = {0.95};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::optional<int> target;  // nullopt: every domain takes a turn as target
  std::string method = "dgsml";
  std::string out_dir;
  std::size_t jobs = 1;
  bool save_params = false;
  bool write_diagnostics = false;

  void validate() const;
};

struct MetricsRecord {
  std::string method;
  int target = 0;
  double rate = 0.0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;  // NaN for failed (diverged) runs
  double l_task = 0.0;
  double l_sl = 0.0;
  double l_align = 0.0;
  std::int64_t wall_ms = 0;
  bool failed = false;
};

// One (method, target, rate, seed) run: mask the sources, train, evaluate on
// the fully labeled target.
MetricsRecord run_single(const std::string& method, const DomainCollection& collection,
                         int target_id, double rate, std::uint64_t seed,
                         const ModelConfig& model, const HyperParams& hyper,
                         const std::string& params_out_path = "",
                         const std::string& diagnostics_out_path = "");

// Runs the config's full (rate x target x seed) grid for the configured
// method(s), streaming rows to <out>/metrics.csv in deterministic order and
// writing <out>/summary.json. Throws ConfigError if every run failed.
std::vector<MetricsRecord> run_sweep(const ExperimentConfig& config,
                                     const std::vector<std::string>& methods);

struct SummaryCell {
  std::string method;
  int target = 0;
  double rate = 0.0;
  std::size_t n = 0;       // successful runs
  std::size_t failed = 0;  // diverged runs
  double mean_accuracy = 0.0;
  double stderr_accuracy = 0.0;  // sample sd / sqrt(n)
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracies;
};

std::vector<SummaryCell> summarize(const std::vector<MetricsRecord>& records);

double mean_of(const std::vector<double>& v);
double sample_sd(const std::vector<double>& v);      // n-1 denominator
double standard_error(const std::vector<double>& v);

// metrics CSV: method,target,rate,seed,accuracy,l_task,l_sl,l_align,wall_ms,
// schema_version (append-only; header written once)
void append_metrics_csv(const std::string& path, const MetricsRecord& record);
std::vector<MetricsRecord> read_metrics_csv(const std::string& path);
void write_summary_json(const std::string& path, const std::vector<SummaryCell>& cells);

std::string ablation_table(const std::vector<SummaryCell>& cells);

}  // namespace dgsml

#endif  // DGSML_EXPERIMENT_HPP_
