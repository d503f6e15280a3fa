#pragma once

#include "sge/model.hpp"
#include "sge/runconfig.hpp"
#include "sge/schedule.hpp"

#include <cstdint>
#include <set>
#include <string>
#include <vector>

namespace sge {

struct CheckpointMeta {
  int version = 0;
  ordered_json topology;
  std::set<int> stages_completed;
  std::vector<std::pair<std::string, Shape>> params;  // file order
  std::vector<std::string> optimizer_params;
  std::int64_t scalar_count = 0;
};

// Binary layout: magic "SGECKPT1\n", then a little-endian payload —
// u32 format version, topology JSON, completed stages, named f64 tensor
// records in registration order, optimizer moments — and a CRC32 of the
// payload. Writes are atomic; identical inputs produce identical bytes.
void save_checkpoint(const std::string& path, const Model& model, const AdamW* opt,
                     const std::set<int>& stages_completed);

// Validates magic, version, checksum, topology, and every tensor name and
// shape before mutating anything; on mismatch the model and optimizer are
// untouched. Returns the stage provenance. When opt is non-null its state is
// replaced by the stored moments (possibly empty).
std::set<int> load_checkpoint(const std::string& path, Model& model,
                              AdamW* opt = nullptr);

// Header + shape summary without needing a model to load into.
CheckpointMeta inspect_checkpoint(const std::string& path);

}  // namespace sge
