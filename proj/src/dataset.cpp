#include "shotfree/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "shotfree/errors.hpp"

namespace shotfree {

const char* split_tag(Split s) {
  switch (s) {
    case Split::kBase: return "BASE";
    case Split::kVal: return "VAL";
    case Split::kNovel: return "NOVEL";
  }
  throw ContractError("unknown split");
}

Split parse_split_tag(const std::string& tag) {
  if (tag == "BASE") return Split::kBase;
  if (tag == "VAL") return Split::kVal;
  if (tag == "NOVEL") return Split::kNovel;
  throw ProtocolError("unknown split tag '" + tag + "'");
}

std::vector<std::int64_t> SplitDataset::classes_in_split(Split s) const {
  std::vector<std::int64_t> out;
  for (const auto& [cid, sp] : split_of_class) {
    if (sp == s) out.push_back(cid);
  }
  return out;  // std::map iteration keeps ids sorted
}

const std::vector<std::size_t>& SplitDataset::rows_of_class(std::int64_t class_id) const {
  if (row_index_.empty()) {
    for (std::size_t i = 0; i < labels.size(); ++i) row_index_[labels[i]].push_back(i);
  }
  auto it = row_index_.find(class_id);
  if (it == row_index_.end()) {
    throw ProtocolError("class " + std::to_string(class_id) + " has no rows");
  }
  return it->second;
}

void SplitDataset::validate() const {
  if (!features.defined() || features.ndim() != 2 || features.rows() != labels.size()) {
    throw ContractError("dataset features/labels shapes disagree");
  }
  std::map<std::int64_t, std::size_t> counts;
  for (std::int64_t l : labels) ++counts[l];
  for (const auto& [cid, count] : counts) {
    if (!split_of_class.contains(cid)) {
      throw ProtocolError("class " + std::to_string(cid) + " has rows but no split assignment");
    }
    if (count < 2) {
      throw ProtocolError("class " + std::to_string(cid) + " has fewer than 2 samples");
    }
  }
  for (const auto& [cid, sp] : split_of_class) {
    (void)sp;
    if (!counts.contains(cid)) {
      throw ProtocolError("class " + std::to_string(cid) + " declared but has no rows");
    }
  }
}

SplitDataset gen_synthetic(const SyntheticConfig& cfg) {
  if (cfg.num_classes < 3) throw ConfigError("gen_synthetic: need at least 3 classes");
  if (cfg.dim < 2) throw ConfigError("gen_synthetic: need dim >= 2");
  if (cfg.samples_per_class < 2) throw ConfigError("gen_synthetic: need >= 2 samples per class");
  if (cfg.intra_spread < 0.0) throw ConfigError("gen_synthetic: spread must be >= 0");

  Rng rng = make_rng(cfg.seed, /*stream_id=*/10);
  const std::size_t n = cfg.num_classes, d = cfg.dim, per = cfg.samples_per_class;
  std::vector<double> feats;
  feats.reserve(n * per * d);
  std::vector<std::int64_t> labels;
  labels.reserve(n * per);

  std::vector<double> mean(d), axis(d);
  for (std::size_t c = 0; c < n; ++c) {
    double sq = 0.0;
    for (double& v : mean) {
      v = gaussian(rng);
      sq += v * v;
    }
    const double norm = std::sqrt(sq);
    for (double& v : mean) v /= norm;

    double sigma = cfg.intra_spread;
    std::fill(axis.begin(), axis.end(), 1.0);
    if (cfg.heteroscedastic) {
      // log-uniform class sigma and an anisotropic stretch per coordinate
      const double lo = std::log(cfg.intra_spread / cfg.sigma_factor);
      const double hi = std::log(cfg.intra_spread * cfg.sigma_factor);
      sigma = std::exp(uniform(rng, lo, hi));
      for (double& a : axis) a = std::exp(uniform(rng, -std::log(cfg.axis_factor),
                                                  std::log(cfg.axis_factor)));
    }
    for (std::size_t j = 0; j < per; ++j) {
      labels.push_back(static_cast<std::int64_t>(c));
      for (std::size_t k = 0; k < d; ++k) {
        feats.push_back(mean[k] + sigma * axis[k] * gaussian(rng));
      }
    }
  }

  SplitDataset ds;
  ds.features = Tensor(Shape{n * per, d}, std::move(feats));
  ds.labels = std::move(labels);
  // 64/16/20 by class count, assigned in class-id order.
  const std::size_t base_n = std::max<std::size_t>(1, (n * 64 + 50) / 100);
  const std::size_t val_n = std::max<std::size_t>(1, (n * 16 + 50) / 100);
  for (std::size_t c = 0; c < n; ++c) {
    Split sp = c < base_n ? Split::kBase : (c < base_n + val_n ? Split::kVal : Split::kNovel);
    ds.split_of_class[static_cast<std::int64_t>(c)] = sp;
  }
  if (ds.classes_in_split(Split::kNovel).empty()) {
    throw ConfigError("gen_synthetic: too few classes to populate all three splits");
  }
  ds.validate();
  return ds;
}

SplitDataset gen_synthetic(std::size_t num_classes, std::size_t dim, std::size_t samples_per_class,
                           double intra_spread, std::uint64_t seed) {
  SyntheticConfig cfg;
  cfg.num_classes = num_classes;
  cfg.dim = dim;
  cfg.samples_per_class = samples_per_class;
  cfg.intra_spread = intra_spread;
  cfg.seed = seed;
  return gen_synthetic(cfg);
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) {
    // trim surrounding spaces
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
  }
  return out;
}

}  // namespace

SplitDataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path);

  std::vector<std::string> problems;
  auto complain = [&](std::size_t line_no, const std::string& what) {
    if (problems.size() < 20) {
      problems.push_back("line " + std::to_string(line_no) + ": " + what);
    }
  };

  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::size_t dim = 0;
  std::vector<double> feats;
  std::vector<std::int64_t> labels;
  std::map<std::int64_t, Split> splits;

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      auto fields = split_fields(line);
      if (fields.size() < 3 || fields[0] != "class_id" || fields[1] != "split_tag") {
        throw ProtocolError(path + ": first row must be the header 'class_id,split_tag,v1,...'");
      }
      dim = fields.size() - 2;
      header_seen = true;
      continue;
    }
    auto fields = split_fields(line);
    if (fields.size() != dim + 2) {
      complain(line_no, "expected " + std::to_string(dim + 2) + " fields, found " +
                            std::to_string(fields.size()));
      continue;
    }
    std::int64_t cid = 0;
    Split sp = Split::kBase;
    try {
      cid = std::stoll(fields[0]);
    } catch (const std::exception&) {
      complain(line_no, "bad class id '" + fields[0] + "'");
      continue;
    }
    try {
      sp = parse_split_tag(fields[1]);
    } catch (const ProtocolError&) {
      complain(line_no, "unknown split tag '" + fields[1] + "'");
      continue;
    }
    auto [it, inserted] = splits.emplace(cid, sp);
    if (!inserted && it->second != sp) {
      complain(line_no, "class " + std::to_string(cid) + " appears in both " +
                            split_tag(it->second) + " and " + fields[1]);
      continue;
    }
    bool bad_value = false;
    std::vector<double> row(dim);
    for (std::size_t k = 0; k < dim; ++k) {
      try {
        std::size_t used = 0;
        row[k] = std::stod(fields[k + 2], &used);
        if (used != fields[k + 2].size()) throw std::invalid_argument("trailing junk");
      } catch (const std::exception&) {
        complain(line_no, "bad value '" + fields[k + 2] + "' in column v" + std::to_string(k + 1));
        bad_value = true;
        break;
      }
    }
    if (bad_value) continue;
    labels.push_back(cid);
    feats.insert(feats.end(), row.begin(), row.end());
  }

  if (!header_seen) throw ProtocolError(path + ": empty file, header required");
  if (!problems.empty()) {
    std::string msg = path + ": " + std::to_string(problems.size()) + " invalid line(s):";
    for (const std::string& p : problems) msg += "\n  " + p;
    throw ProtocolError(msg);
  }
  if (labels.empty()) throw ProtocolError(path + ": no data rows");

  SplitDataset ds;
  ds.features = Tensor(Shape{labels.size(), dim}, std::move(feats));
  ds.labels = std::move(labels);
  ds.split_of_class = std::move(splits);
  ds.validate();
  return ds;
}

void save_csv(const SplitDataset& ds, const std::string& path,
              const std::vector<std::string>& comment_lines) {
  ds.validate();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset file: " + path);
  for (const std::string& c : comment_lines) out << "# " << c << "\n";
  out << "class_id,split_tag";
  for (std::size_t k = 0; k < ds.dim(); ++k) out << ",v" << (k + 1);
  out << "\n";
  auto fv = ds.features.values();
  char buf[40];
  for (std::size_t i = 0; i < ds.num_rows(); ++i) {
    out << ds.labels[i] << ',' << split_tag(ds.split_of_class.at(ds.labels[i]));
    for (std::size_t k = 0; k < ds.dim(); ++k) {
      std::snprintf(buf, sizeof(buf), "%.17g", fv[i * ds.dim() + k]);
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

namespace {

// First `count` elements of a seeded partial Fisher-Yates over `pool`.
template <typename T>
std::vector<T> sample_without_replacement(std::vector<T> pool, std::size_t count, Rng& rng) {
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(count);
  return pool;
}

Episode sample_episode(const SplitDataset& ds, Split split, std::size_t ways,
                       std::size_t per_class, Rng& rng) {
  if (ways == 0 || per_class == 0) throw ContractError("episode needs ways and samples");
  std::vector<std::int64_t> classes = ds.classes_in_split(split);
  if (classes.size() < ways) {
    throw ProtocolError(std::string("split ") + split_tag(split) + " has " +
                        std::to_string(classes.size()) + " classes, episode wants " +
                        std::to_string(ways));
  }
  Episode ep;
  ep.class_ids = sample_without_replacement(std::move(classes), ways, rng);
  for (std::int64_t cid : ep.class_ids) {
    const auto& rows = ds.rows_of_class(cid);
    if (rows.size() < per_class) {
      throw ProtocolError("class " + std::to_string(cid) + " has " +
                          std::to_string(rows.size()) + " samples, episode wants " +
                          std::to_string(per_class));
    }
    ep.sample_indices.push_back(sample_without_replacement(rows, per_class, rng));
  }
  return ep;
}

}  // namespace

Episode sample_episode_unsplit(const SplitDataset& ds, Split split, std::size_t ways,
                               std::size_t per_class, Rng& rng) {
  return sample_episode(ds, split, ways, per_class, rng);
}

Episode sample_episode_support_query(const SplitDataset& ds, Split split, std::size_t ways,
                                     std::size_t shots, std::size_t queries, Rng& rng) {
  if (shots == 0 || queries == 0) {
    throw ContractError("support/query episode needs shots and queries > 0");
  }
  Episode ep = sample_episode(ds, split, ways, shots + queries, rng);
  ep.support_count = shots;
  return ep;
}

Tensor gather_feature_rows(const SplitDataset& ds, const std::vector<std::size_t>& rows) {
  const std::size_t d = ds.dim();
  std::vector<double> out(rows.size() * d);
  auto fv = ds.features.values();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= ds.num_rows()) throw ContractError("feature row index out of range");
    std::copy_n(fv.data() + rows[i] * d, d, out.data() + i * d);
  }
  return Tensor(Shape{rows.size(), d}, std::move(out));
}

}  // namespace shotfree
