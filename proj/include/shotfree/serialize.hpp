#pragma once

#include <string>

#include "shotfree/checkpoint.hpp"

namespace shotfree {

/// JSON checkpoint blob; numbers use shortest-round-trip formatting so
/// save -> load -> save is byte-identical. A non-empty `manifest_ref` is
/// stored alongside the model so the blob names the run that produced it;
/// load ignores it.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path,
                     const std::string& manifest_ref = "");
Checkpoint load_checkpoint(const std::string& path);

/// FNV-1a over the canonical serialized form; stable across runs.
std::string checkpoint_id(const Checkpoint& ckpt);

/// FNV-1a of a file's bytes, for reproducibility comparisons.
std::string file_hash(const std::string& path);

std::string config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const std::string& text);

}  // namespace shotfree
