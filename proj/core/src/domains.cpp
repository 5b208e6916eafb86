#include "dgsml/domains.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "dgsml/errors.hpp"
#include "dgsml/rng.hpp"

#include "json.hpp"

namespace dgsml {

const DomainDataset& DomainCollection::domain_by_id(int id) const {
  for (const DomainDataset& d : domains)
    if (d.domain_id == id) return d;
  throw ConfigError("unknown domain id " + std::to_string(id));
}

std::vector<int> DomainCollection::domain_ids() const {
  std::vector<int> ids;
  ids.reserve(domains.size());
  for (const DomainDataset& d : domains) ids.push_back(d.domain_id);
  return ids;
}

std::string format_double17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

DomainCollection generate_rotated_moons(std::size_t samples_per_domain,
                                        const std::vector<double>& rotations_deg,
                                        double noise_sd, std::uint64_t seed) {
  const std::size_t n_domains = rotations_deg.size();
  if (n_domains < 2) throw ConfigError("rotated moons needs >= 2 domains");
  if (samples_per_domain < 4 || samples_per_domain % 2 != 0)
    throw ConfigError("samples_per_domain must be even and >= 4");
  if (noise_sd < 0.0) throw ConfigError("noise_sd must be >= 0");

  const std::size_t per_class = samples_per_domain / 2;
  // shared base points: evenly spaced arcs, as in the usual two-moons layout
  std::vector<double> base_x(samples_per_domain), base_y(samples_per_domain);
  std::vector<int> base_label(samples_per_domain);
  for (std::size_t i = 0; i < per_class; ++i) {
    const double t = per_class == 1 ? 0.0
                                    : std::numbers::pi * static_cast<double>(i) /
                                          static_cast<double>(per_class - 1);
    base_x[i] = std::cos(t);
    base_y[i] = std::sin(t);
    base_label[i] = 0;
    base_x[per_class + i] = 1.0 - std::cos(t);
    base_y[per_class + i] = 0.5 - std::sin(t);
    base_label[per_class + i] = 1;
  }

  DomainCollection out;
  out.num_classes = 2;
  out.input_dim = 2;
  for (std::size_t d = 0; d < n_domains; ++d) {
    DomainDataset ds;
    ds.domain_id = static_cast<int>(d);
    Rng noise(mix_seed(seed, 0x6d6f6f6e00ULL + d));  // per-domain noise stream
    const double angle = rotations_deg[d] * std::numbers::pi / 180.0;
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (std::size_t i = 0; i < samples_per_domain; ++i) {
      const double x = ca * base_x[i] - sa * base_y[i] + noise.normal(0.0, noise_sd);
      const double y = sa * base_x[i] + ca * base_y[i] + noise.normal(0.0, noise_sd);
      ds.labeled.push_back({{x, y}, base_label[i], ds.domain_id});
    }
    out.domains.push_back(std::move(ds));
  }

  std::ostringstream meta;
  meta << "{\"generator\": \"moons\", \"seed\": " << seed
       << ", \"samples_per_domain\": " << samples_per_domain << ", \"rotations_deg\": [";
  for (std::size_t i = 0; i < rotations_deg.size(); ++i) {
    if (i) meta << ", ";
    meta << format_double17(rotations_deg[i]);
  }
  meta << "], \"noise_sd\": " << format_double17(noise_sd) << "}";
  out.generator_json = meta.str();
  return out;
}

DomainCollection generate_shifted_gaussians(std::size_t num_classes,
                                            std::size_t samples_per_domain,
                                            std::size_t input_dim, double class_separation,
                                            const std::vector<std::vector<double>>& translations,
                                            double noise_sd, std::uint64_t seed) {
  const std::size_t n_domains = translations.size();
  if (n_domains < 2) throw ConfigError("shifted gaussians needs >= 2 domains");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (input_dim < 2) throw ConfigError("input_dim must be >= 2");
  if (samples_per_domain < num_classes)
    throw ConfigError("samples_per_domain must be >= num_classes");
  if (noise_sd < 0.0) throw ConfigError("noise_sd must be >= 0");
  for (const auto& t : translations)
    if (t.size() != input_dim)
      throw ConfigError("translation vectors must have length input_dim");

  // class centers evenly spaced on a circle in the first two dimensions
  std::vector<std::vector<double>> centers(num_classes, std::vector<double>(input_dim, 0.0));
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(c) /
                     static_cast<double>(num_classes);
    centers[c][0] = class_separation * std::cos(a);
    centers[c][1] = class_separation * std::sin(a);
  }

  DomainCollection out;
  out.num_classes = num_classes;
  out.input_dim = input_dim;
  for (std::size_t d = 0; d < n_domains; ++d) {
    DomainDataset ds;
    ds.domain_id = static_cast<int>(d);
    Rng noise(mix_seed(seed, 0x6761757373ULL + d));
    for (std::size_t i = 0; i < samples_per_domain; ++i) {
      const std::size_t c = i % num_classes;  // near-balanced classes
      Sample s;
      s.domain_id = ds.domain_id;
      s.label = static_cast<int>(c);
      s.features.resize(input_dim);
      for (std::size_t k = 0; k < input_dim; ++k)
        s.features[k] = centers[c][k] + translations[d][k] + noise.normal(0.0, noise_sd);
      ds.labeled.push_back(std::move(s));
    }
    out.domains.push_back(std::move(ds));
  }

  std::ostringstream meta;
  meta << "{\"generator\": \"gaussians\", \"seed\": " << seed
       << ", \"samples_per_domain\": " << samples_per_domain
       << ", \"class_separation\": " << format_double17(class_separation)
       << ", \"noise_sd\": " << format_double17(noise_sd) << ", \"translations\": [";
  for (std::size_t d = 0; d < translations.size(); ++d) {
    if (d) meta << ", ";
    meta << "[";
    for (std::size_t k = 0; k < input_dim; ++k) {
      if (k) meta << ", ";
      meta << format_double17(translations[d][k]);
    }
    meta << "]";
  }
  meta << "]}";
  out.generator_json = meta.str();
  return out;
}

MaskResult mask_labels(const DomainCollection& collection, double rate, std::uint64_t seed) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("mask rate must be in [0, 1)");
  MaskResult result;
  result.collection = collection;
  if (rate == 0.0) return result;

  Rng rng(mix_seed(seed, 0x6d61736bULL));
  for (DomainDataset& ds : result.collection.domains) {
    const std::size_t n = ds.labeled.size();
    const std::size_t k = static_cast<std::size_t>(
        std::floor(rate * static_cast<double>(n)));
    if (k == 0) continue;

    std::set<int> classes;
    for (const Sample& s : ds.labeled) classes.insert(s.label);
    if (n - k < classes.size())
      throw ConfigError("mask rate leaves fewer labeled samples than classes in domain " +
                        std::to_string(ds.domain_id));

    // redraw until every class keeps at least one labeled survivor
    std::vector<std::size_t> chosen;
    constexpr int kMaxAttempts = 100000;
    int attempt = 0;
    for (; attempt < kMaxAttempts; ++attempt) {
      std::vector<std::size_t> pool(n);
      for (std::size_t i = 0; i < n; ++i) pool[i] = i;
      for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + rng.uniform_index(n - i);
        std::swap(pool[i], pool[j]);
      }
      chosen.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
      std::set<int> survivors;
      for (std::size_t i = k; i < n; ++i) survivors.insert(ds.labeled[pool[i]].label);
      if (survivors.size() == classes.size()) break;
    }
    if (attempt == kMaxAttempts)
      throw ConfigError("could not find a masking that keeps every class labeled in domain " +
                        std::to_string(ds.domain_id));

    std::sort(chosen.begin(), chosen.end());
    std::vector<Sample> kept;
    kept.reserve(n - k);
    std::size_t next = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (next < chosen.size() && chosen[next] == i) {
        Sample moved = ds.labeled[i];
        result.diagnostics.rows.push_back(
            {ds.domain_id, ds.unlabeled.size(), moved.label});
        moved.label = kUnlabeled;
        ds.unlabeled.push_back(std::move(moved));
        ++next;
      } else {
        kept.push_back(ds.labeled[i]);
      }
    }
    ds.labeled = std::move(kept);
  }
  return result;
}

LodoSplit leave_one_domain_out(const DomainCollection& collection, int target_id) {
  if (collection.domains.size() < 2)
    throw ConfigError("leave-one-domain-out needs >= 2 domains");
  LodoSplit split;
  split.sources.num_classes = collection.num_classes;
  split.sources.input_dim = collection.input_dim;
  split.sources.generator_json = collection.generator_json;
  bool found = false;
  for (const DomainDataset& d : collection.domains) {
    if (d.domain_id == target_id) {
      split.target = d;
      found = true;
    } else {
      split.sources.domains.push_back(d);
    }
  }
  if (!found) throw ConfigError("unknown target domain id " + std::to_string(target_id));
  return split;
}

void write_csv(const DomainCollection& collection, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open for writing: " + path);
  os << "domain,label";
  for (std::size_t k = 0; k < collection.input_dim; ++k) os << ",f" << k;
  os << "\n";
  const auto write_sample = [&](const Sample& s) {
    os << s.domain_id << "," << s.label;
    for (double v : s.features) os << "," << format_double17(v);
    os << "\n";
  };
  for (const DomainDataset& d : collection.domains) {
    for (const Sample& s : d.labeled) write_sample(s);
    for (const Sample& s : d.unlabeled) write_sample(s);
  }
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

}  // namespace

DomainCollection read_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open dataset: " + path);
  std::string line;
  if (!std::getline(is, line)) throw ParseError("empty dataset file: " + path, 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const std::vector<std::string> header = split_fields(line);
  if (header.size() < 3 || header[0] != "domain" || header[1] != "label")
    throw ParseError("bad header: expected 'domain,label,f0,...', got '" + line + "'", 1);
  for (std::size_t k = 2; k < header.size(); ++k) {
    const std::string expect = "f" + std::to_string(k - 2);
    if (header[k] != expect)
      throw ParseError("bad header column '" + header[k] + "', expected '" + expect + "'", 1);
  }
  const std::size_t input_dim = header.size() - 2;

  DomainCollection out;
  out.input_dim = input_dim;
  int max_label = -1;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_fields(line);
    if (fields.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " fields, got " +
                           std::to_string(fields.size()),
                       line_no);
    Sample s;
    try {
      std::size_t pos = 0;
      s.domain_id = std::stoi(fields[0], &pos);
      if (pos != fields[0].size()) throw std::invalid_argument(fields[0]);
      s.label = std::stoi(fields[1], &pos);
      if (pos != fields[1].size()) throw std::invalid_argument(fields[1]);
      s.features.resize(input_dim);
      for (std::size_t k = 0; k < input_dim; ++k) {
        s.features[k] = std::stod(fields[2 + k], &pos);
        if (pos != fields[2 + k].size()) throw std::invalid_argument(fields[2 + k]);
      }
    } catch (const std::exception&) {
      throw ParseError("malformed value in row '" + line + "'", line_no);
    }
    if (s.label < kUnlabeled)
      throw ParseError("label must be >= -1, got " + std::to_string(s.label), line_no);
    max_label = std::max(max_label, s.label);

    DomainDataset* ds = nullptr;
    for (DomainDataset& d : out.domains)
      if (d.domain_id == s.domain_id) ds = &d;
    if (ds == nullptr) {
      out.domains.push_back({});
      ds = &out.domains.back();
      ds->domain_id = s.domain_id;
    }
    if (s.label == kUnlabeled)
      ds->unlabeled.push_back(std::move(s));
    else
      ds->labeled.push_back(std::move(s));
  }
  out.num_classes = max_label >= 1 ? static_cast<std::size_t>(max_label) + 1 : 2;
  return out;
}

void write_manifest(const DomainCollection& collection, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open for writing: " + path);
  os << "{\n  \"format\": \"dgsml-dataset\",\n  \"version\": 1,\n"
     << "  \"num_classes\": " << collection.num_classes << ",\n"
     << "  \"input_dim\": " << collection.input_dim << ",\n"
     << "  \"num_domains\": " << collection.domains.size() << ",\n"
     << "  \"generator\": "
     << (collection.generator_json.empty() ? "null" : collection.generator_json) << "\n}\n";
}

void apply_manifest(DomainCollection& collection, const std::string& path) {
  std::ifstream is(path);
  if (!is) return;  // manifest is optional
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("invalid manifest JSON: " + std::string(e.what()));
  }
  if (j.contains("num_classes")) collection.num_classes = j["num_classes"].get<std::size_t>();
  if (j.contains("generator") && !j["generator"].is_null())
    collection.generator_json = j["generator"].dump();
}

void write_diagnostics_csv(const DomainCollection& collection, const MaskDiagnostics& diag,
                           const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open for writing: " + path);
  os << "row,domain,true_label\n";
  // map (domain, unlabeled index) to the data-CSV row the sample occupies
  std::size_t offset = 0;
  std::vector<std::pair<int, std::size_t>> domain_offsets;  // id -> labeled offset
  for (const DomainDataset& d : collection.domains) {
    domain_offsets.emplace_back(d.domain_id, offset);
    offset += d.size();
  }
  for (const MaskDiagnostics::Row& r : diag.rows) {
    std::size_t base = 0;
    for (const auto& [id, off] : domain_offsets)
      if (id == r.domain_id) base = off;
    const std::size_t labeled_count = collection.domain_by_id(r.domain_id).labeled.size();
    os << base + labeled_count + r.unlabeled_index << "," << r.domain_id << ","
       << r.true_label << "\n";
  }
}

Tensor features_tensor(const std::vector<Sample>& samples) {
  if (samples.empty()) throw ContractError("features_tensor of empty sample list");
  const std::size_t dim = samples.front().features.size();
  std::vector<double> data;
  data.reserve(samples.size() * dim);
  for (const Sample& s : samples) {
    if (s.features.size() != dim) throw DimensionError("inconsistent feature dimensions");
    data.insert(data.end(), s.features.begin(), s.features.end());
  }
  return matrix(samples.size(), dim, std::move(data));
}

std::vector<int> labels_of(const std::vector<Sample>& samples) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) out.push_back(s.label);
  return out;
}

}  // namespace dgsml
