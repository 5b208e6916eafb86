#include "dgsml/experiment.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "dgsml/errors.hpp"
#include "dgsml/rng.hpp"

namespace dgsml {

namespace fs = std::filesystem;

DomainCollection load_data(const DataSpec& spec) {
  if (!spec.csv_path.empty()) {
    DomainCollection c = read_csv(spec.csv_path);
    const fs::path p(spec.csv_path);
    fs::path manifest = p;
    manifest.replace_extension(".manifest.json");
    apply_manifest(c, manifest.string());
    return c;
  }
  if (spec.generator == "moons") {
    return generate_rotated_moons(spec.samples_per_domain, spec.rotations_deg, spec.noise_sd,
                                  spec.data_seed);
  }
  if (spec.generator == "gaussians") {
    std::vector<std::vector<double>> translations = spec.translations;
    if (translations.empty())
      throw ConfigError("gaussians generator needs per-domain translations");
    return generate_shifted_gaussians(spec.num_classes, spec.samples_per_domain,
                                      spec.input_dim, spec.class_separation, translations,
                                      spec.noise_sd, spec.data_seed);
  }
  throw ConfigError("unknown generator '" + spec.generator + "'");
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("need at least one seed");
  for (double r : rates)
    if (r < 0.0 || r >= 1.0) throw ConfigError("rates must be in [0, 1)");
  const auto& methods = known_methods();
  if (std::find(methods.begin(), methods.end(), method) == methods.end())
    throw ConfigError("unknown method '" + method + "'");
  if (out_dir.empty()) throw ConfigError("output directory not set");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
}

namespace {

HyperParams variant_hyper(const std::string& method, HyperParams hp) {
  if (method == "dgsml_no_sl") hp.beta0 = 0.0;
  if (method == "dgsml_no_align") hp.beta1 = 0.0;
  if (method == "dgsml_neither") {
    hp.beta0 = 0.0;
    hp.beta1 = 0.0;
  }
  if (method == "dgsml_first_order") hp.second_order = false;
  return hp;
}

}  // namespace

MetricsRecord run_single(const std::string& method, const DomainCollection& collection,
                         int target_id, double rate, std::uint64_t seed,
                         const ModelConfig& model, const HyperParams& hyper,
                         const std::string& params_out_path,
                         const std::string& diagnostics_out_path) {
  MetricsRecord rec;
  rec.method = method;
  rec.target = target_id;
  rec.rate = rate;
  rec.seed = seed;

  const LodoSplit split = leave_one_domain_out(collection, target_id);
  // masking depends only on (rate, seed), so ablation variants share it
  const std::uint64_t mask_seed = mix_seed(seed, std::bit_cast<std::uint64_t>(rate));
  MaskResult masked = mask_labels(split.sources, rate, mask_seed);
  if (!diagnostics_out_path.empty())
    write_diagnostics_csv(masked.collection, masked.diagnostics, diagnostics_out_path);

  ModelConfig config = model;
  config.input_dim = collection.input_dim;
  config.num_classes = collection.num_classes;
  HyperParams hp = variant_hyper(method, hyper);
  hp.seed = seed;

  const auto start = std::chrono::steady_clock::now();
  const EvalHook eval = [&split](std::size_t, const ModelParams& p) {
    return evaluate_accuracy(p, split.target.labeled);
  };
  try {
    TrainResult result = method == "deepall"
                             ? deepall_train(masked.collection, config, hp, eval)
                             : train(masked.collection, config, hp, eval);
    rec.accuracy = result.log.evals.empty()
                       ? evaluate_accuracy(result.params, split.target.labeled)
                       : result.log.evals.back().accuracy;
    if (!result.log.iterations.empty()) {
      const IterationRecord& last = result.log.iterations.back();
      rec.l_task = last.task_train;
      rec.l_sl = last.semi_supervised;
      rec.l_align = last.alignment;
    }
    if (!params_out_path.empty()) save_checkpoint(result.params, params_out_path);
  } catch (const DivergenceError&) {
    rec.failed = true;
    rec.accuracy = std::numeric_limits<double>::quiet_NaN();
  }
  rec.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                    std::chrono::steady_clock::now() - start)
                    .count();
  return rec;
}

namespace {

struct RunSpec {
  std::string method;
  int target;
  double rate;
  std::uint64_t seed;
};

std::string metrics_row(const MetricsRecord& r) {
  std::ostringstream os;
  os << r.method << ',' << r.target << ',' << format_double17(r.rate) << ',' << r.seed << ','
     << format_double17(r.accuracy) << ',' << format_double17(r.l_task) << ','
     << format_double17(r.l_sl) << ',' << format_double17(r.l_align) << ',' << r.wall_ms
     << ",1\n";
  return os.str();
}

constexpr const char* kMetricsHeader =
    "method,target,rate,seed,accuracy,l_task,l_sl,l_align,wall_ms,schema_version\n";

}  // namespace

void append_metrics_csv(const std::string& path, const MetricsRecord& record) {
  const bool need_header = !fs::exists(path) || fs::file_size(path) == 0;
  std::ofstream os(path, std::ios::app);
  if (!os) throw ConfigError("cannot open metrics file: " + path);
  if (need_header) os << kMetricsHeader;
  os << metrics_row(record);
}

std::vector<MetricsRecord> read_metrics_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open metrics file: " + path);
  std::string line;
  std::vector<MetricsRecord> records;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;  // header
    std::istringstream ss(line);
    std::string field;
    MetricsRecord r;
    std::getline(ss, r.method, ',');
    std::getline(ss, field, ',');
    r.target = std::stoi(field);
    std::getline(ss, field, ',');
    r.rate = std::stod(field);
    std::getline(ss, field, ',');
    r.seed = std::stoull(field);
    std::getline(ss, field, ',');
    r.accuracy = std::stod(field);
    r.failed = std::isnan(r.accuracy);
    std::getline(ss, field, ',');
    r.l_task = std::stod(field);
    std::getline(ss, field, ',');
    r.l_sl = std::stod(field);
    std::getline(ss, field, ',');
    r.l_align = std::stod(field);
    std::getline(ss, field, ',');
    r.wall_ms = std::stoll(field);
    records.push_back(std::move(r));
  }
  return records;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

double standard_error(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  return sample_sd(v) / std::sqrt(static_cast<double>(v.size()));
}

std::vector<SummaryCell> summarize(const std::vector<MetricsRecord>& records) {
  std::vector<SummaryCell> cells;
  const auto find_cell = [&](const MetricsRecord& r) -> SummaryCell& {
    for (SummaryCell& c : cells)
      if (c.method == r.method && c.target == r.target && c.rate == r.rate) return c;
    cells.push_back({r.method, r.target, r.rate, 0, 0, 0.0, 0.0, {}, {}});
    return cells.back();
  };
  for (const MetricsRecord& r : records) {
    SummaryCell& c = find_cell(r);
    if (r.failed) {
      ++c.failed;
      continue;
    }
    c.seeds.push_back(r.seed);
    c.accuracies.push_back(r.accuracy);
  }
  for (SummaryCell& c : cells) {
    c.n = c.accuracies.size();
    c.mean_accuracy = mean_of(c.accuracies);
    c.stderr_accuracy = standard_error(c.accuracies);
  }
  return cells;
}

void write_summary_json(const std::string& path, const std::vector<SummaryCell>& cells) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open summary file: " + path);
  os << "{\n  \"schema_version\": 1,\n  \"cells\": [\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const SummaryCell& c = cells[i];
    os << "    {\"method\": \"" << c.method << "\", \"target\": " << c.target
       << ", \"rate\": " << format_double17(c.rate) << ", \"n\": " << c.n
       << ", \"failed\": " << c.failed
       << ", \"mean_accuracy\": " << format_double17(c.mean_accuracy)
       << ", \"stderr_accuracy\": " << format_double17(c.stderr_accuracy) << ", \"seeds\": [";
    for (std::size_t k = 0; k < c.seeds.size(); ++k) {
      if (k) os << ", ";
      os << c.seeds[k];
    }
    os << "], \"accuracies\": [";
    for (std::size_t k = 0; k < c.accuracies.size(); ++k) {
      if (k) os << ", ";
      os << format_double17(c.accuracies[k]);
    }
    os << "]}" << (i + 1 < cells.size() ? "," : "") << "\n";
  }
  os << "  ]\n}\n";
}

std::vector<MetricsRecord> run_sweep(const ExperimentConfig& config,
                                     const std::vector<std::string>& methods) {
  config.validate();
  const DomainCollection collection = load_data(config.data);
  if (collection.domains.size() < 2) throw ConfigError("need >= 2 domains");

  std::vector<int> targets;
  if (config.target) {
    targets.push_back(*config.target);
  } else {
    targets = collection.domain_ids();
  }

  // fixed grid order: method, rate, target, seed
  std::vector<RunSpec> runs;
  for (const std::string& method : methods)
    for (double rate : config.rates)
      for (int target : targets)
        for (std::uint64_t seed : config.seeds) runs.push_back({method, target, rate, seed});

  fs::create_directories(config.out_dir);
  const std::string metrics_path = (fs::path(config.out_dir) / "metrics.csv").string();

  std::vector<std::optional<MetricsRecord>> results(runs.size());
  std::mutex mu;
  std::condition_variable cv;
  std::size_t next_claim = 0;
  std::exception_ptr first_error;

  const auto worker = [&]() {
    while (true) {
      std::size_t idx;
      {
        std::lock_guard lock(mu);
        if (next_claim >= runs.size() || first_error) return;
        idx = next_claim++;
      }
      const RunSpec& spec = runs[idx];
      std::string params_path, diag_path;
      if (config.save_params || config.write_diagnostics) {
        std::ostringstream base;
        base << spec.method << "_t" << spec.target << "_r" << spec.rate << "_s" << spec.seed;
        if (config.save_params)
          params_path = (fs::path(config.out_dir) / (base.str() + ".params.json")).string();
        if (config.write_diagnostics)
          diag_path = (fs::path(config.out_dir) / (base.str() + ".diagnostics.csv")).string();
      }
      try {
        MetricsRecord rec = run_single(spec.method, collection, spec.target, spec.rate,
                                       spec.seed, config.model, config.hyper, params_path,
                                       diag_path);
        std::lock_guard lock(mu);
        results[idx] = std::move(rec);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!first_error) first_error = std::current_exception();
      }
      cv.notify_all();
    }
  };

  std::vector<std::thread> threads;
  const std::size_t n_workers = std::min(config.jobs, runs.size());
  threads.reserve(n_workers);
  for (std::size_t i = 0; i < n_workers; ++i) threads.emplace_back(worker);

  // stream rows in grid order regardless of completion order, so the metrics
  // file is identical for any --jobs value
  std::vector<MetricsRecord> records;
  records.reserve(runs.size());
  for (std::size_t i = 0; i < runs.size(); ++i) {
    std::unique_lock lock(mu);
    cv.wait(lock, [&] { return results[i].has_value() || first_error != nullptr; });
    if (first_error) break;
    MetricsRecord rec = *results[i];
    lock.unlock();
    append_metrics_csv(metrics_path, rec);
    records.push_back(std::move(rec));
  }
  for (std::thread& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);

  write_summary_json((fs::path(config.out_dir) / "summary.json").string(),
                     summarize(records));

  const bool any_ok = std::any_of(records.begin(), records.end(),
                                  [](const MetricsRecord& r) { return !r.failed; });
  if (!any_ok) throw ConfigError("all runs failed");
  return records;
}

std::string ablation_table(const std::vector<SummaryCell>& cells) {
  std::ostringstream os;
  os << std::left << std::setw(20) << "variant" << std::setw(8) << "target" << std::setw(8)
     << "rate" << std::setw(12) << "accuracy" << "stderr\n";
  for (const SummaryCell& c : cells) {
    std::ostringstream acc;
    acc << std::fixed << std::setprecision(4) << c.mean_accuracy;
    std::ostringstream se;
    se << std::fixed << std::setprecision(4) << c.stderr_accuracy;
    std::ostringstream rate;
    rate << std::setprecision(3) << c.rate;
    os << std::left << std::setw(20) << c.method << std::setw(8) << c.target << std::setw(8)
       << rate.str() << std::setw(12) << acc.str() << se.str() << "\n";
  }
  return os.str();
}

}  // namespace dgsml
