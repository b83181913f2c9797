#pragma once

#include <string>
#include <vector>

#include "shotfree/checkpoint.hpp"
#include "shotfree/dataset.hpp"

namespace shotfree {

struct TrainLogRow {
  std::size_t iteration = 0;
  double loss = 0.0;
  double cross_entropy = 0.0;
  double entropy = 0.0;
  double lr = 0.0;
  double validation_accuracy = 0.0;  // NaN on iterations without a check
};

struct TrainingLog {
  std::vector<TrainLogRow> rows;
  void save_csv(const std::string& path, const std::vector<std::string>& comment_lines = {}) const;
};

struct TrainResult {
  Checkpoint best;         // highest validation score seen
  Checkpoint final_state;  // parameters after the last iteration
  TrainingLog log;
};

/// Joint meta-training of embedding weights, metric map, scale, and the base
/// prototype table on unsplit episodes. Validation every
/// cfg.validation_interval iterations (5-way mean-path accuracy on VAL)
/// selects the best checkpoint. Throws NumericError with iteration and lr
/// context if the loss leaves the finite range.
TrainResult meta_train(const SplitDataset& ds, const TrainConfig& cfg);

/// Deep copy: checkpoints share tensor storage by default, so snapshots of a
/// live training run must clone.
Checkpoint clone_checkpoint(const Checkpoint& ckpt);

}  // namespace shotfree
