#include "sge/dataset.hpp"

#include "sge/io_util.hpp"

#include <cstring>
#include <stdexcept>

namespace sge {

namespace {

constexpr char kMagicPrefix[] = "SGESYN";
constexpr char kVersion = '1';

void write_mask_rle(ByteWriter& w, const std::vector<std::uint8_t>& mask) {
  std::vector<std::uint32_t> runs;
  std::uint8_t value = 0;  // runs alternate starting with zeros
  std::uint32_t run = 0;
  for (std::uint8_t px : mask) {
    if (px == value) {
      ++run;
    } else {
      runs.push_back(run);
      value = px;
      run = 1;
    }
  }
  runs.push_back(run);
  w.u32(static_cast<std::uint32_t>(runs.size()));
  for (std::uint32_t r : runs) w.u32(r);
}

std::vector<std::uint8_t> read_mask_rle(ByteReader& r, std::size_t expected) {
  std::vector<std::uint8_t> mask;
  mask.reserve(expected);
  const std::uint32_t n_runs = r.u32();
  std::uint8_t value = 0;
  for (std::uint32_t i = 0; i < n_runs; ++i) {
    const std::uint32_t run = r.u32();
    mask.insert(mask.end(), run, value);
    value = static_cast<std::uint8_t>(1 - value);
    if (mask.size() > expected) break;
  }
  if (mask.size() != expected) {
    throw io_error(io_error::kind::bad_content,
                   "mask run-length data decodes to " + std::to_string(mask.size()) +
                       " pixels, expected " + std::to_string(expected));
  }
  return mask;
}

void write_tokens(ByteWriter& w, const std::vector<int>& ids) {
  w.u32(static_cast<std::uint32_t>(ids.size()));
  for (int id : ids) w.u32(static_cast<std::uint32_t>(id));
}

std::vector<int> read_tokens(ByteReader& r) {
  const std::uint32_t n = r.u32();
  std::vector<int> ids(n);
  for (auto& id : ids) id = static_cast<int>(r.u32());
  return ids;
}

void write_record(ByteWriter& w, const SceneRecord& rec) {
  const SyntheticScene& s = rec.scene;
  w.u64(s.seed);
  w.i64(s.config.canvas_h);
  w.i64(s.config.canvas_w);
  w.i64(s.config.n_entities_min);
  w.i64(s.config.n_entities_max);
  w.i64(s.config.category_count);
  w.i64(s.config.predicate_count);
  w.f64(s.config.nest_prob);
  w.i64(s.config.min_pair_sep);
  w.i64(s.config.max_pair_gap);

  w.u32(static_cast<std::uint32_t>(s.entities.size()));
  for (std::size_t i = 0; i < s.entities.size(); ++i) {
    const Entity& e = s.entities[i];
    w.i64(e.category_id);
    w.i64(e.x0);
    w.i64(e.y0);
    w.i64(e.x1);
    w.i64(e.y1);
    write_mask_rle(w, s.masks[i]);
  }

  w.u32(static_cast<std::uint32_t>(s.relations.size()));
  for (const Relation& r : s.relations) {
    w.u32(static_cast<std::uint32_t>(r.subject));
    w.u32(static_cast<std::uint32_t>(r.predicate));
    w.u32(static_cast<std::uint32_t>(r.object));
  }

  w.u32(static_cast<std::uint32_t>(rec.qa.size()));
  for (const QASample& qa : rec.qa) {
    w.u8(static_cast<std::uint8_t>(qa.task));
    write_tokens(w, qa.prompt);
    write_tokens(w, qa.answer);
    w.i64(qa.subject);
    w.i64(qa.object);
    w.i64(qa.predicate_label);
    w.i64(qa.category);
    w.i64(qa.expected_count);
  }
}

SceneRecord read_record(ByteReader& r) {
  SceneRecord rec;
  SyntheticScene& s = rec.scene;
  s.seed = r.u64();
  s.config.canvas_h = r.i64();
  s.config.canvas_w = r.i64();
  s.config.n_entities_min = static_cast<int>(r.i64());
  s.config.n_entities_max = static_cast<int>(r.i64());
  s.config.category_count = static_cast<int>(r.i64());
  s.config.predicate_count = static_cast<int>(r.i64());
  s.config.nest_prob = r.f64();
  s.config.min_pair_sep = r.i64();
  s.config.max_pair_gap = r.i64();

  const auto expected = static_cast<std::size_t>(s.config.canvas_h * s.config.canvas_w);
  const std::uint32_t n_entities = r.u32();
  for (std::uint32_t i = 0; i < n_entities; ++i) {
    Entity e;
    e.category_id = static_cast<int>(r.i64());
    e.x0 = r.i64();
    e.y0 = r.i64();
    e.x1 = r.i64();
    e.y1 = r.i64();
    s.entities.push_back(e);
    s.masks.push_back(read_mask_rle(r, expected));
  }

  const std::uint32_t n_rel = r.u32();
  for (std::uint32_t i = 0; i < n_rel; ++i) {
    Relation rel;
    rel.subject = static_cast<int>(r.u32());
    rel.predicate = static_cast<int>(r.u32());
    rel.object = static_cast<int>(r.u32());
    s.relations.push_back(rel);
  }

  const std::uint32_t n_qa = r.u32();
  for (std::uint32_t i = 0; i < n_qa; ++i) {
    QASample qa;
    const auto task = r.u8();
    if (task > 2) {
      throw io_error(io_error::kind::bad_content,
                     "unknown task tag " + std::to_string(task));
    }
    qa.task = static_cast<Task>(task);
    qa.prompt = read_tokens(r);
    qa.answer = read_tokens(r);
    qa.subject = static_cast<int>(r.i64());
    qa.object = static_cast<int>(r.i64());
    qa.predicate_label = static_cast<int>(r.i64());
    qa.category = static_cast<int>(r.i64());
    qa.expected_count = static_cast<int>(r.i64());
    rec.qa.push_back(std::move(qa));
  }
  return rec;
}

}  // namespace

std::vector<SceneRecord> build_records(const SceneConfig& cfg, const Vocab& vocab, int n,
                                       std::uint64_t seed0, std::uint64_t* next_seed) {
  if (n < 0) throw std::invalid_argument("build_records: n must be >= 0");
  std::vector<SceneRecord> out;
  out.reserve(static_cast<std::size_t>(n));
  std::uint64_t s = seed0;
  int consecutive_failures = 0;
  while (static_cast<int>(out.size()) < n) {
    try {
      SceneRecord rec;
      rec.scene = generate_scene(s, cfg);
      rec.qa = make_all_qa(rec.scene, vocab);
      out.push_back(std::move(rec));
      consecutive_failures = 0;
    } catch (const std::invalid_argument&) {
      // distinguishes a seed-specific placement failure from a config that
      // can never succeed
      if (++consecutive_failures >= 10000) throw;
    }
    ++s;
  }
  if (next_seed != nullptr) *next_seed = s;
  return out;
}

void save_dataset(const std::vector<SceneRecord>& records, const std::string& path) {
  ByteWriter payload;
  payload.u64(records.size());
  for (const SceneRecord& rec : records) {
    ByteWriter body;
    write_record(body, rec);
    payload.u32(static_cast<std::uint32_t>(body.size()));
    payload.bytes(body.buffer().data(), body.size());
  }

  ByteWriter file;
  file.bytes(kMagicPrefix, 6);
  file.u8(static_cast<std::uint8_t>(kVersion));
  file.u8('\n');
  file.bytes(payload.buffer().data(), payload.size());
  file.u32(crc32(payload.buffer().data(), payload.size()));
  write_file_atomic(path, file.buffer());
}

std::vector<SceneRecord> load_dataset(const std::string& path) {
  const auto buf = read_file(path);
  if (buf.size() < 12) {
    throw io_error(io_error::kind::truncated, "dataset file too short: " + path);
  }
  if (std::memcmp(buf.data(), kMagicPrefix, 6) != 0 || buf[7] != '\n') {
    throw io_error(io_error::kind::bad_magic, "not a dataset file: " + path);
  }
  if (buf[6] != static_cast<std::uint8_t>(kVersion)) {
    throw io_error(io_error::kind::bad_version,
                   "unsupported dataset version '" + std::string(1, char(buf[6])) +
                       "' in " + path);
  }
  const std::size_t payload_len = buf.size() - 12;
  const std::uint32_t stored = ByteReader(buf.data() + buf.size() - 4, 4).u32();
  const std::uint32_t actual = crc32(buf.data() + 8, payload_len);
  if (stored != actual) {
    throw io_error(io_error::kind::bad_checksum, "dataset checksum mismatch in " + path);
  }

  ByteReader r(buf.data() + 8, payload_len);
  const std::uint64_t count = r.u64();
  std::vector<SceneRecord> records;
  records.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.u32();
    const std::size_t before = r.pos();
    records.push_back(read_record(r));
    if (r.pos() - before != len) {
      throw io_error(io_error::kind::bad_content,
                     "record " + std::to_string(i) + " length mismatch in " + path);
    }
  }
  if (r.remaining() != 0) {
    throw io_error(io_error::kind::bad_content, "trailing bytes in " + path);
  }
  return records;
}

}  // namespace sge
