// dgsml command-line experiment harness: dataset generation, training
// sweeps, ablations, and gradient self-checks.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dgsml/domains.hpp"
#include "dgsml/errors.hpp"
#include "dgsml/experiment.hpp"
#include "dgsml/gradcheck.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

std::string default_out_dir() {
  const char* env = std::getenv("DGSML_OUT");
  return env ? env : "";
}

void apply_config_file(const std::string& path, dgsml::ExperimentConfig& config) {
  std::ifstream is(path);
  if (!is) throw dgsml::ConfigError("cannot open config file: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::parse_error& e) {
    throw dgsml::ConfigError("invalid config JSON: " + std::string(e.what()));
  }
  if (j.contains("data")) {
    const json& d = j["data"];
    if (d.contains("csv")) config.data.csv_path = d["csv"].get<std::string>();
    if (d.contains("generator")) config.data.generator = d["generator"].get<std::string>();
    if (d.contains("samples_per_domain"))
      config.data.samples_per_domain = d["samples_per_domain"].get<std::size_t>();
    if (d.contains("seed")) config.data.data_seed = d["seed"].get<std::uint64_t>();
    if (d.contains("noise_sd")) config.data.noise_sd = d["noise_sd"].get<double>();
    if (d.contains("rotations_deg"))
      config.data.rotations_deg = d["rotations_deg"].get<std::vector<double>>();
    if (d.contains("num_classes")) config.data.num_classes = d["num_classes"].get<std::size_t>();
    if (d.contains("input_dim")) config.data.input_dim = d["input_dim"].get<std::size_t>();
    if (d.contains("class_separation"))
      config.data.class_separation = d["class_separation"].get<double>();
    if (d.contains("translations"))
      config.data.translations = d["translations"].get<std::vector<std::vector<double>>>();
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    if (m.contains("hidden_dims"))
      config.model.hidden_dims = m["hidden_dims"].get<std::vector<std::size_t>>();
    if (m.contains("feature_dim")) config.model.feature_dim = m["feature_dim"].get<std::size_t>();
  }
  if (j.contains("hyper")) {
    const json& h = j["hyper"];
    if (h.contains("alpha0")) config.hyper.alpha0 = h["alpha0"].get<double>();
    if (h.contains("alpha1")) config.hyper.alpha1 = h["alpha1"].get<double>();
    if (h.contains("beta0")) config.hyper.beta0 = h["beta0"].get<double>();
    if (h.contains("beta1")) config.hyper.beta1 = h["beta1"].get<double>();
    if (h.contains("batch_per_domain"))
      config.hyper.batch_per_domain = h["batch_per_domain"].get<std::size_t>();
    if (h.contains("iterations")) config.hyper.iterations = h["iterations"].get<std::size_t>();
    if (h.contains("second_order")) config.hyper.second_order = h["second_order"].get<bool>();
  }
  if (j.contains("rates")) config.rates = j["rates"].get<std::vector<double>>();
  if (j.contains("seeds")) config.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  if (j.contains("target") && !j["target"].is_null())
    config.target = j["target"].get<int>();
  if (j.contains("method")) config.method = j["method"].get<std::string>();
  if (j.contains("out")) config.out_dir = j["out"].get<std::string>();
  if (j.contains("jobs")) config.jobs = j["jobs"].get<std::size_t>();
  if (j.contains("save_params")) config.save_params = j["save_params"].get<bool>();
  if (j.contains("write_diagnostics"))
    config.write_diagnostics = j["write_diagnostics"].get<bool>();
}

struct SweepFlags {
  std::string config_file;
  std::string csv;
  std::string generator;
  std::string method;
  std::string out = default_out_dir();
  std::vector<double> rates;
  std::vector<std::uint64_t> seeds;
  int target = -1;
  bool all_targets = false;
  double alpha0 = -1.0, alpha1 = -1.0, beta0 = -1.0, beta1 = -1.0;
  long long iterations = -1, batch = -1;
  int second_order = -1;  // tri-state: unset / off / on
  std::size_t jobs = 0;
  bool save_params = false;
  bool write_diagnostics = false;
};

void add_sweep_flags(CLI::App* cmd, SweepFlags& f, bool with_method) {
  cmd->add_option("--config", f.config_file, "JSON config file; flags override its values");
  cmd->add_option("--data", f.csv, "dataset CSV (overrides generator settings)");
  cmd->add_option("--generator", f.generator, "moons | gaussians");
  if (with_method)
    cmd->add_option("--method", f.method, "dgsml | deepall | dgsml_no_sl | dgsml_no_align | "
                                          "dgsml_neither | dgsml_first_order");
  cmd->add_option("--out", f.out, "output directory (default: $DGSML_OUT)");
  cmd->add_option("--rates", f.rates, "unlabeled rates to sweep")->delimiter(',');
  cmd->add_option("--seeds", f.seeds, "seeds to sweep")->delimiter(',');
  cmd->add_option("--target", f.target, "target domain id (default: all, leave-one-out)");
  cmd->add_flag("--all-targets", f.all_targets, "rotate every domain as target");
  cmd->add_option("--alpha0", f.alpha0, "inner learning rate");
  cmd->add_option("--alpha1", f.alpha1, "outer learning rate");
  cmd->add_option("--beta0", f.beta0, "semi-supervised loss coefficient");
  cmd->add_option("--beta1", f.beta1, "alignment loss coefficient");
  cmd->add_option("--iterations", f.iterations, "training iterations");
  cmd->add_option("--batch", f.batch, "batch size per domain");
  cmd->add_option("--second-order", f.second_order, "1: exact meta-gradient, 0: first-order");
  cmd->add_option("--jobs", f.jobs, "concurrent runs");
  cmd->add_flag("--save-params", f.save_params, "write a parameter checkpoint per run");
  cmd->add_flag("--write-diagnostics", f.write_diagnostics,
                "write masked-label diagnostics per run");
}

dgsml::ExperimentConfig build_config(const SweepFlags& f) {
  dgsml::ExperimentConfig config;
  config.out_dir = default_out_dir();
  if (!f.config_file.empty()) apply_config_file(f.config_file, config);
  if (!f.csv.empty()) config.data.csv_path = f.csv;
  if (!f.generator.empty()) config.data.generator = f.generator;
  if (!f.method.empty()) config.method = f.method;
  if (!f.out.empty()) config.out_dir = f.out;
  if (!f.rates.empty()) config.rates = f.rates;
  if (!f.seeds.empty()) config.seeds = f.seeds;
  if (f.target >= 0) config.target = f.target;
  if (f.all_targets) config.target.reset();
  if (f.alpha0 > 0.0) config.hyper.alpha0 = f.alpha0;
  if (f.alpha1 > 0.0) config.hyper.alpha1 = f.alpha1;
  if (f.beta0 >= 0.0) config.hyper.beta0 = f.beta0;
  if (f.beta1 >= 0.0) config.hyper.beta1 = f.beta1;
  if (f.iterations >= 0) config.hyper.iterations = static_cast<std::size_t>(f.iterations);
  if (f.batch > 0) config.hyper.batch_per_domain = static_cast<std::size_t>(f.batch);
  if (f.second_order >= 0) config.hyper.second_order = f.second_order != 0;
  if (f.jobs > 0) config.jobs = f.jobs;
  if (f.save_params) config.save_params = true;
  if (f.write_diagnostics) config.write_diagnostics = true;
  return config;
}

int cmd_gen_data(const std::string& generator, std::size_t domains, std::size_t n,
                 const std::vector<double>& rotations, double noise, std::uint64_t seed,
                 std::size_t num_classes, double separation,
                 const std::vector<double>& shifts, double rate, const std::string& out,
                 const std::string& name) {
  if (out.empty()) {
    std::cerr << "gen-data: --out is required (or set DGSML_OUT)\n";
    return kExitUsage;
  }
  dgsml::DomainCollection collection;
  if (generator == "moons") {
    std::vector<double> rot = rotations;
    if (rot.empty()) {
      for (std::size_t d = 0; d < domains; ++d)
        rot.push_back(domains > 1 ? 90.0 * static_cast<double>(d) /
                                        static_cast<double>(domains - 1)
                                  : 0.0);
    }
    collection = dgsml::generate_rotated_moons(n, rot, noise, seed);
  } else if (generator == "gaussians") {
    std::vector<std::vector<double>> translations;
    if (!shifts.empty()) {
      for (double s : shifts) translations.push_back({s, s});
    } else {
      for (std::size_t d = 0; d < domains; ++d)
        translations.push_back({static_cast<double>(d), static_cast<double>(d)});
    }
    collection = dgsml::generate_shifted_gaussians(num_classes, n, 2, separation,
                                                   translations, noise, seed);
  } else {
    std::cerr << "gen-data: unknown generator '" << generator << "'\n";
    return kExitUsage;
  }

  dgsml::MaskDiagnostics diagnostics;
  if (rate > 0.0) {
    dgsml::MaskResult masked = dgsml::mask_labels(collection, rate, seed);
    collection = std::move(masked.collection);
    diagnostics = std::move(masked.diagnostics);
  }

  fs::create_directories(out);
  const fs::path base = fs::path(out) / name;
  dgsml::write_csv(collection, base.string() + ".csv");
  dgsml::write_manifest(collection, base.string() + ".manifest.json");
  dgsml::write_diagnostics_csv(collection, diagnostics, base.string() + ".diagnostics.csv");
  std::cout << "wrote " << base.string() << ".csv, .manifest.json, .diagnostics.csv\n";
  return kExitOk;
}

int cmd_train(const SweepFlags& flags) {
  dgsml::ExperimentConfig config = build_config(flags);
  const std::vector<dgsml::MetricsRecord> records =
      dgsml::run_sweep(config, {config.method});
  std::size_t failed = 0;
  for (const auto& r : records) failed += r.failed ? 1 : 0;
  std::cout << "completed " << records.size() << " runs (" << failed << " failed); metrics in "
            << (fs::path(config.out_dir) / "metrics.csv").string() << "\n";
  return kExitOk;
}

int cmd_ablate(const SweepFlags& flags) {
  dgsml::ExperimentConfig config = build_config(flags);
  const std::vector<dgsml::MetricsRecord> records =
      dgsml::run_sweep(config, dgsml::ablation_methods());
  const std::vector<dgsml::SummaryCell> cells = dgsml::summarize(records);
  const std::string table = dgsml::ablation_table(cells);
  std::cout << table;
  std::ofstream os(fs::path(config.out_dir) / "ablation_table.txt");
  os << table;
  return kExitOk;
}

int cmd_gradcheck(std::size_t cases, std::uint64_t seed, bool inject_fault) {
  dgsml::GradCheckOptions options;
  options.cases_per_op = cases;
  options.seed = seed;
  options.inject_fault = inject_fault;

  bool all_pass = true;
  const auto report = [&](const dgsml::CheckResult& r) {
    std::printf("%-28s cases=%-4zu max_rel_err=%.3e tol=%.0e %s\n", r.name.c_str(), r.cases,
                r.max_rel_err, r.tolerance, r.pass ? "PASS" : "FAIL");
    all_pass = all_pass && r.pass;
  };

  for (const dgsml::CheckResult& r : dgsml::run_op_checks(options)) report(r);
  report(dgsml::run_meta_gradient_check(options));
  report(dgsml::run_toy_quadratic_check());
  report(dgsml::run_first_order_toy_check());
  std::printf("%s\n", all_pass ? "ALL CHECKS PASSED" : "CHECKS FAILED");
  return all_pass ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DGSML experiment harness"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic multi-domain dataset");
  std::string generator = "moons";
  std::size_t domains = 4, n = 200, num_classes = 3;
  std::vector<double> rotations, shifts;
  double noise = 0.1, separation = 2.0, rate = 0.0;
  std::uint64_t data_seed = 7;
  std::string out = default_out_dir(), name = "dataset";
  gen->add_option("--generator", generator, "moons | gaussians");
  gen->add_option("--domains", domains, "number of domains");
  gen->add_option("--n", n, "samples per domain");
  gen->add_option("--rotations", rotations, "per-domain rotation in degrees (moons)")
      ->delimiter(',');
  gen->add_option("--noise", noise, "coordinate noise sd");
  gen->add_option("--seed", data_seed, "generation seed");
  gen->add_option("--classes", num_classes, "classes (gaussians)");
  gen->add_option("--separation", separation, "class separation (gaussians)");
  gen->add_option("--shifts", shifts, "per-domain translation magnitude (gaussians)")
      ->delimiter(',');
  gen->add_option("--rate", rate, "pre-mask this fraction of labels");
  gen->add_option("--out", out, "output directory (default: $DGSML_OUT)");
  gen->add_option("--name", name, "output file base name");

  // train
  auto* train_cmd = app.add_subcommand("train", "run a training sweep");
  SweepFlags train_flags;
  add_sweep_flags(train_cmd, train_flags, /*with_method=*/true);

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "run the ablation variants");
  SweepFlags ablate_flags;
  add_sweep_flags(ablate_cmd, ablate_flags, /*with_method=*/false);

  // gradcheck
  auto* check_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  std::size_t cases = 100;
  std::uint64_t check_seed = 12345;
  bool inject_fault = false;
  check_cmd->add_option("--cases", cases, "random cases per op");
  check_cmd->add_option("--seed", check_seed, "random seed");
  check_cmd->add_flag("--inject-fault", inject_fault,
                      "corrupt one gradient to exercise the failure path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (gen->parsed())
      return cmd_gen_data(generator, domains, n, rotations, noise, data_seed, num_classes,
                          separation, shifts, rate, out, name);
    if (train_cmd->parsed()) return cmd_train(train_flags);
    if (ablate_cmd->parsed()) return cmd_ablate(ablate_flags);
    if (check_cmd->parsed()) return cmd_gradcheck(cases, check_seed, inject_fault);
  } catch (const dgsml::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
