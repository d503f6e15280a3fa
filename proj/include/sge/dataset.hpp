#pragma once

#include "sge/qa.hpp"
#include "sge/scene.hpp"

#include <string>
#include <vector>

namespace sge {

struct SceneRecord {
  SyntheticScene scene;
  std::vector<QASample> qa;
};

// Generates n fully annotated records starting at seed0. Seeds whose
// placement search fails are skipped by advancing to the next seed, so the
// output depends only on (config, seed0). The first unconsumed seed is
// written to *next_seed when given, letting callers carve disjoint splits.
std::vector<SceneRecord> build_records(const SceneConfig& cfg, const Vocab& vocab, int n,
                                       std::uint64_t seed0,
                                       std::uint64_t* next_seed = nullptr);

// File layout: magic "SGESYN" + version byte '1' + '\n', little-endian u64
// record count, length-prefixed records, then a CRC32 of everything between
// the magic and the checksum. Round-trips are byte-exact.
void save_dataset(const std::vector<SceneRecord>& records, const std::string& path);
std::vector<SceneRecord> load_dataset(const std::string& path);

}  // namespace sge
