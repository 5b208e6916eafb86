#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "dgsml/domains.hpp"
#include "dgsml/errors.hpp"

using namespace dgsml;
namespace fs = std::filesystem;

namespace {

bool same_sample(const Sample& a, const Sample& b) {
  return a.domain_id == b.domain_id && a.label == b.label && a.features == b.features;
}

bool same_collection(const DomainCollection& a, const DomainCollection& b) {
  if (a.domains.size() != b.domains.size()) return false;
  if (a.input_dim != b.input_dim || a.num_classes != b.num_classes) return false;
  for (std::size_t d = 0; d < a.domains.size(); ++d) {
    const DomainDataset& da = a.domains[d];
    const DomainDataset& db = b.domains[d];
    if (da.domain_id != db.domain_id) return false;
    if (da.labeled.size() != db.labeled.size()) return false;
    if (da.unlabeled.size() != db.unlabeled.size()) return false;
    for (std::size_t i = 0; i < da.labeled.size(); ++i)
      if (!same_sample(da.labeled[i], db.labeled[i])) return false;
    for (std::size_t i = 0; i < da.unlabeled.size(); ++i)
      if (!same_sample(da.unlabeled[i], db.unlabeled[i])) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("moons: class balance and reproducibility") {
  const DomainCollection c = generate_rotated_moons(200, {0, 30, 60, 90}, 0.1, 7);
  CHECK(c.domains.size() == 4);
  CHECK(c.num_classes == 2);
  for (const DomainDataset& d : c.domains) {
    std::size_t class0 = 0, class1 = 0;
    for (const Sample& s : d.labeled) (s.label == 0 ? class0 : class1)++;
    CHECK(class0 == 100);
    CHECK(class1 == 100);
  }
  const DomainCollection again = generate_rotated_moons(200, {0, 30, 60, 90}, 0.1, 7);
  CHECK(same_collection(c, again));
}

TEST_CASE("moons: 180 degree rotation negates the zero-noise points") {
  const DomainCollection c = generate_rotated_moons(20, {0, 180}, 0.0, 3);
  const DomainDataset& d0 = c.domains[0];
  const DomainDataset& d1 = c.domains[1];
  for (std::size_t i = 0; i < d0.labeled.size(); ++i) {
    CHECK(d1.labeled[i].features[0] == doctest::Approx(-d0.labeled[i].features[0]).epsilon(1e-12));
    CHECK(d1.labeled[i].features[1] == doctest::Approx(-d0.labeled[i].features[1]).epsilon(1e-12));
    CHECK(d1.labeled[i].label == d0.labeled[i].label);
  }
}

TEST_CASE("moons: equal rotations differ only by noise draws") {
  const DomainCollection clean = generate_rotated_moons(20, {0, 0}, 0.0, 5);
  for (std::size_t i = 0; i < 20; ++i)
    CHECK(clean.domains[0].labeled[i].features == clean.domains[1].labeled[i].features);

  const DomainCollection noisy = generate_rotated_moons(20, {0, 0}, 0.1, 5);
  bool any_diff = false;
  for (std::size_t i = 0; i < 20; ++i)
    if (noisy.domains[0].labeled[i].features != noisy.domains[1].labeled[i].features)
      any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("moons: configuration errors") {
  CHECK_THROWS_AS(generate_rotated_moons(200, {0}, 0.1, 1), ConfigError);
  CHECK_THROWS_AS(generate_rotated_moons(7, {0, 90}, 0.1, 1), ConfigError);  // odd
  CHECK_THROWS_AS(generate_rotated_moons(2, {0, 90}, 0.1, 1), ConfigError);  // too small
}

TEST_CASE("gaussians: degenerate noise, zero shift, centroid bound") {
  const std::vector<std::vector<double>> shifts = {{0, 0}, {0, 0}};
  const DomainCollection degenerate = generate_shifted_gaussians(3, 30, 2, 2.0, shifts, 0.0, 1);
  for (const DomainDataset& d : degenerate.domains) {
    // zero noise: all class-c points coincide
    std::vector<std::vector<double>> first(3);
    for (const Sample& s : d.labeled) {
      auto& f = first[static_cast<std::size_t>(s.label)];
      if (f.empty())
        f = s.features;
      else
        CHECK(f == s.features);
    }
  }
  // zero translation everywhere: the domains share the same class centers
  CHECK(degenerate.domains[0].labeled[0].features ==
        degenerate.domains[1].labeled[0].features);

  const double noise = 0.3;
  const std::size_t n = 300;
  const DomainCollection c = generate_shifted_gaussians(3, n, 2, 2.0, shifts, noise, 11);
  for (std::size_t cls = 0; cls < 3; ++cls) {
    double mx = 0, my = 0;
    std::size_t count = 0;
    for (const Sample& s : c.domains[0].labeled) {
      if (static_cast<std::size_t>(s.label) != cls) continue;
      mx += s.features[0];
      my += s.features[1];
      ++count;
    }
    mx /= static_cast<double>(count);
    my /= static_cast<double>(count);
    const double a = 2.0 * std::numbers::pi * static_cast<double>(cls) / 3.0;
    const double bound = 3.0 * noise / std::sqrt(static_cast<double>(count));
    CHECK(std::abs(mx - 2.0 * std::cos(a)) < bound);
    CHECK(std::abs(my - 2.0 * std::sin(a)) < bound);
  }
}

TEST_CASE("mask_labels: identity at rate zero") {
  const DomainCollection c = generate_rotated_moons(40, {0, 90}, 0.1, 2);
  const MaskResult masked = mask_labels(c, 0.0, 9);
  CHECK(same_collection(c, masked.collection));
  CHECK(masked.diagnostics.rows.empty());
}

TEST_CASE("mask_labels: exact counts at 95 percent") {
  const DomainCollection c = generate_rotated_moons(200, {0, 30, 60, 90}, 0.1, 7);
  const MaskResult masked = mask_labels(c, 0.95, 13);
  for (const DomainDataset& d : masked.collection.domains) {
    CHECK(d.labeled.size() == 10);
    CHECK(d.unlabeled.size() == 190);
    for (const Sample& s : d.unlabeled) CHECK(s.label == kUnlabeled);
    // every class keeps a labeled survivor
    std::set<int> survivors;
    for (const Sample& s : d.labeled) survivors.insert(s.label);
    CHECK(survivors.size() == 2);
  }
  CHECK(masked.diagnostics.rows.size() == 4 * 190);
}

TEST_CASE("mask_labels: deterministic and content-preserving") {
  const DomainCollection c = generate_rotated_moons(60, {0, 45, 90}, 0.1, 21);
  const MaskResult a = mask_labels(c, 0.5, 77);
  const MaskResult b = mask_labels(c, 0.5, 77);
  CHECK(same_collection(a.collection, b.collection));

  // total count and multiset of feature rows unchanged
  for (std::size_t d = 0; d < c.domains.size(); ++d) {
    CHECK(a.collection.domains[d].size() == c.domains[d].size());
    std::multiset<std::vector<double>> before, after;
    for (const Sample& s : c.domains[d].labeled) before.insert(s.features);
    for (const Sample& s : a.collection.domains[d].labeled) after.insert(s.features);
    for (const Sample& s : a.collection.domains[d].unlabeled) after.insert(s.features);
    CHECK(before == after);
  }

  // diagnostics carry the true labels of exactly the masked rows
  for (const MaskDiagnostics::Row& r : a.diagnostics.rows) {
    CHECK(r.true_label >= 0);
    const DomainDataset& d = a.collection.domain_by_id(r.domain_id);
    CHECK(r.unlabeled_index < d.unlabeled.size());
  }
}

TEST_CASE("mask_labels: impossible rates fail") {
  const DomainCollection c = generate_rotated_moons(10, {0, 90}, 0.1, 2);
  // floor(0.9 * 10) = 9 masked leaves 1 labeled < 2 classes
  CHECK_THROWS_AS(mask_labels(c, 0.9, 1), ConfigError);
  CHECK_THROWS_AS(mask_labels(c, 1.0, 1), ConfigError);
  CHECK_THROWS_AS(mask_labels(c, -0.1, 1), ConfigError);
}

TEST_CASE("leave-one-domain-out") {
  const DomainCollection c = generate_rotated_moons(20, {0, 30, 60, 90}, 0.1, 4);
  const LodoSplit split = leave_one_domain_out(c, 2);
  CHECK(split.target.domain_id == 2);
  CHECK(split.sources.domains.size() == 3);
  const std::vector<int> ids = split.sources.domain_ids();
  CHECK(ids == std::vector<int>{0, 1, 3});

  // every domain appears as target exactly once across the protocol, and
  // sources + target partition the collection
  for (int target : c.domain_ids()) {
    const LodoSplit s = leave_one_domain_out(c, target);
    CHECK(s.sources.domains.size() + 1 == c.domains.size());
    std::size_t total = s.target.size();
    for (const DomainDataset& d : s.sources.domains) total += d.size();
    std::size_t expected = 0;
    for (const DomainDataset& d : c.domains) expected += d.size();
    CHECK(total == expected);
  }

  CHECK_THROWS_AS(leave_one_domain_out(c, 9), ConfigError);
}

TEST_CASE("csv round-trip is exact") {
  const DomainCollection c = generate_rotated_moons(30, {0, 55, 110}, 0.07, 19);
  const MaskResult masked = mask_labels(c, 0.4, 3);

  const fs::path dir = fs::temp_directory_path() / "dgsml_domains_test";
  fs::create_directories(dir);
  const std::string base = (dir / "data").string();
  write_csv(masked.collection, base + ".csv");
  write_manifest(masked.collection, base + ".manifest.json");
  write_diagnostics_csv(masked.collection, masked.diagnostics, base + ".diagnostics.csv");

  DomainCollection loaded = read_csv(base + ".csv");
  apply_manifest(loaded, base + ".manifest.json");
  CHECK(same_collection(masked.collection, loaded));
  CHECK(loaded.num_classes == 2);

  // unlabeled samples are the label -1 rows
  std::ifstream is(base + ".csv");
  std::string line;
  std::getline(is, line);
  CHECK(line == "domain,label,f0,f1");
  std::size_t minus_one = 0;
  while (std::getline(is, line))
    if (line.find(",-1,") != std::string::npos) ++minus_one;
  std::size_t unlabeled = 0;
  for (const DomainDataset& d : masked.collection.domains) unlabeled += d.unlabeled.size();
  CHECK(minus_one == unlabeled);

  fs::remove_all(dir);
}

TEST_CASE("csv parse errors carry location") {
  const fs::path dir = fs::temp_directory_path() / "dgsml_domains_err";
  fs::create_directories(dir);

  {
    std::ofstream os(dir / "bad_header.csv");
    os << "domain,label,feat0\n0,0,1.0\n";
  }
  CHECK_THROWS_WITH_AS(read_csv((dir / "bad_header.csv").string()),
                       doctest::Contains("feat0"), ParseError);

  {
    std::ofstream os(dir / "bad_row.csv");
    os << "domain,label,f0\n0,0,1.0\n0,zero,2.0\n";
  }
  try {
    read_csv((dir / "bad_row.csv").string());
    CHECK(false);
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }

  {
    std::ofstream os(dir / "short_row.csv");
    os << "domain,label,f0,f1\n0,0,1.0\n";
  }
  CHECK_THROWS_AS(read_csv((dir / "short_row.csv").string()), ParseError);

  fs::remove_all(dir);
}
