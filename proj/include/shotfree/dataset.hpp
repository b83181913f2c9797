#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "shotfree/rng.hpp"
#include "shotfree/tensor.hpp"

namespace shotfree {

enum class Split { kBase, kVal, kNovel };

const char* split_tag(Split s);
Split parse_split_tag(const std::string& tag);

/// Feature matrix with one class id per row and a disjoint class->split
/// assignment (meta-training, validation, and novel classes never overlap).
struct SplitDataset {
  Tensor features;  // M × input_dim
  std::vector<std::int64_t> labels;
  std::map<std::int64_t, Split> split_of_class;

  std::size_t num_rows() const { return labels.size(); }
  std::size_t dim() const { return features.defined() ? features.cols() : 0; }
  std::vector<std::int64_t> classes_in_split(Split s) const;
  const std::vector<std::size_t>& rows_of_class(std::int64_t class_id) const;
  void validate() const;

 private:
  mutable std::map<std::int64_t, std::vector<std::size_t>> row_index_;  // built lazily
};

/// One sampled episode: K classes, N_e distinct row indices per class.
/// support_count is set only by the support/query sampler.
struct Episode {
  std::vector<std::int64_t> class_ids;
  std::vector<std::vector<std::size_t>> sample_indices;  // per class
  std::optional<std::size_t> support_count;
};

struct SyntheticConfig {
  std::size_t num_classes = 100;
  std::size_t dim = 16;
  std::size_t samples_per_class = 50;
  double intra_spread = 0.1;
  // Heteroscedastic mode: per-class sigma log-uniform in
  // [intra_spread/sigma_factor, intra_spread*sigma_factor] plus random
  // per-axis stretch in [1/axis_factor, axis_factor].
  bool heteroscedastic = false;
  double sigma_factor = 3.0;
  double axis_factor = 2.0;
  std::uint64_t seed = 0;
};

/// Class means uniform on the unit sphere, samples = mean + Gaussian noise;
/// classes split BASE/VAL/NOVEL at a 64/16/20 ratio by class count.
SplitDataset gen_synthetic(const SyntheticConfig& cfg);
SplitDataset gen_synthetic(std::size_t num_classes, std::size_t dim, std::size_t samples_per_class,
                           double intra_spread, std::uint64_t seed);

/// CSV: header "class_id,split_tag,v1,...,vD"; lines starting with '#' are
/// comments. Doubles print with %.17g so save->load round trips exactly.
/// Load gathers all malformed lines and reports them together.
SplitDataset load_csv(const std::string& path);
void save_csv(const SplitDataset& ds, const std::string& path,
              const std::vector<std::string>& comment_lines = {});

/// K classes uniform without replacement from the split, then N_e distinct
/// rows per class; no support/query boundary.
Episode sample_episode_unsplit(const SplitDataset& ds, Split split, std::size_t ways,
                               std::size_t per_class, Rng& rng);

/// Baseline sampler: per class, the first `shots` sampled indices form the
/// support set and the next `queries` the query set.
Episode sample_episode_support_query(const SplitDataset& ds, Split split, std::size_t ways,
                                     std::size_t shots, std::size_t queries, Rng& rng);

/// Rows of `ds.features` selected by flat index list, as a k×dim tensor.
Tensor gather_feature_rows(const SplitDataset& ds, const std::vector<std::size_t>& rows);

}  // namespace shotfree
