#include "sge/checkpoint.hpp"

#include "sge/io_util.hpp"

#include <cstring>
#include <stdexcept>

namespace sge {

namespace {

constexpr char kMagic[] = "SGECKPT1\n";  // 9 bytes
constexpr std::uint32_t kVersion = 1;

struct TensorRecord {
  std::string name;
  Shape shape;
  Eigen::ArrayXd values;
};

struct OptRecord {
  std::string name;
  std::int64_t t = 0;
  Eigen::ArrayXd m, v;
};

struct Parsed {
  std::uint32_t version = 0;
  std::string topology;
  std::set<int> stages;
  std::vector<TensorRecord> tensors;
  std::vector<OptRecord> opt;
};

void write_f64s(ByteWriter& w, const Eigen::ArrayXd& a) {
  for (Eigen::Index i = 0; i < a.size(); ++i) w.f64(a[i]);
}

Eigen::ArrayXd read_f64s(ByteReader& r, std::int64_t n) {
  Eigen::ArrayXd a(n);
  for (std::int64_t i = 0; i < n; ++i) a[i] = r.f64();
  return a;
}

// Raw file checks shared by load and inspect: magic, checksum, then the
// parsed payload (version checked before anything else in it).
Parsed parse_file(const std::string& path) {
  const auto buf = read_file(path);
  if (buf.size() < 9 + 4 + 4) {
    throw io_error(io_error::kind::truncated, "checkpoint file too short: " + path);
  }
  if (std::memcmp(buf.data(), kMagic, 9) != 0) {
    throw io_error(io_error::kind::bad_magic, "not a checkpoint file: " + path);
  }
  const std::size_t payload_len = buf.size() - 9 - 4;
  const std::uint32_t stored = ByteReader(buf.data() + buf.size() - 4, 4).u32();
  const std::uint32_t actual = crc32(buf.data() + 9, payload_len);
  if (stored != actual) {
    throw io_error(io_error::kind::bad_checksum,
                   "checkpoint checksum mismatch in " + path);
  }

  ByteReader r(buf.data() + 9, payload_len);
  Parsed p;
  p.version = r.u32();
  if (p.version != kVersion) {
    throw io_error(io_error::kind::bad_version,
                   "unsupported checkpoint version " + std::to_string(p.version) +
                       " in " + path);
  }
  p.topology = r.str();

  const std::uint32_t n_stages = r.u32();
  for (std::uint32_t i = 0; i < n_stages; ++i) p.stages.insert(static_cast<int>(r.u32()));

  const std::uint32_t n_params = r.u32();
  for (std::uint32_t i = 0; i < n_params; ++i) {
    TensorRecord rec;
    rec.name = r.str();
    const std::uint32_t ndims = r.u32();
    for (std::uint32_t d = 0; d < ndims; ++d) rec.shape.push_back(r.i64());
    rec.values = read_f64s(r, shape_size(rec.shape));
    p.tensors.push_back(std::move(rec));
  }

  const std::uint32_t n_opt = r.u32();
  for (std::uint32_t i = 0; i < n_opt; ++i) {
    OptRecord rec;
    rec.name = r.str();
    rec.t = r.i64();
    const std::int64_t n = r.i64();
    rec.m = read_f64s(r, n);
    rec.v = read_f64s(r, n);
    p.opt.push_back(std::move(rec));
  }

  if (r.remaining() != 0) {
    throw io_error(io_error::kind::bad_content, "trailing bytes in " + path);
  }
  return p;
}

std::string first_difference(const std::string& a_dump, const std::string& b_dump) {
  const auto a = nlohmann::json::parse(a_dump);
  const auto b = nlohmann::json::parse(b_dump);
  const auto patch = nlohmann::json::diff(a, b);
  if (patch.empty()) return "(string form differs)";
  return patch.front().value("path", "(unknown)");
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const AdamW* opt,
                     const std::set<int>& stages_completed) {
  for (int s : stages_completed) {
    if (s < 1 || s > 3) throw std::invalid_argument("stage provenance must be in {1,2,3}");
  }

  ByteWriter payload;
  payload.u32(kVersion);
  payload.str(topology_json(model.config()).dump());

  payload.u32(static_cast<std::uint32_t>(stages_completed.size()));
  for (int s : stages_completed) payload.u32(static_cast<std::uint32_t>(s));

  const auto params = model.params().all();
  payload.u32(static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    payload.str(p->name);
    const Shape shape = {p->tensor.rows(), p->tensor.cols()};
    payload.u32(static_cast<std::uint32_t>(shape.size()));
    for (std::int64_t d : shape) payload.i64(d);
    write_f64s(payload, p->tensor.values());
  }

  if (opt != nullptr) {
    payload.u32(static_cast<std::uint32_t>(opt->state().size()));
    for (const auto& [name, st] : opt->state()) {  // std::map: sorted, deterministic
      const Parameter* p = model.params().find(name);
      if (p == nullptr || st.m.size() != p->tensor.values().size()) {
        throw std::logic_error("optimizer state for unknown or resized parameter " + name);
      }
      payload.str(name);
      payload.i64(st.t);
      payload.i64(st.m.size());
      write_f64s(payload, st.m);
      write_f64s(payload, st.v);
    }
  } else {
    payload.u32(0);
  }

  ByteWriter file;
  file.bytes(kMagic, 9);
  file.bytes(payload.buffer().data(), payload.size());
  file.u32(crc32(payload.buffer().data(), payload.size()));
  write_file_atomic(path, file.buffer());
}

std::set<int> load_checkpoint(const std::string& path, Model& model, AdamW* opt) {
  const Parsed p = parse_file(path);

  const std::string want = topology_json(model.config()).dump();
  if (p.topology != want) {
    throw io_error(io_error::kind::mismatch,
                   "checkpoint topology does not match the model (first difference at " +
                       first_difference(p.topology, want) + ") in " + path);
  }
  if (p.tensors.size() != model.params().count()) {
    throw io_error(io_error::kind::mismatch,
                   "checkpoint holds " + std::to_string(p.tensors.size()) +
                       " tensors but the model has " +
                       std::to_string(model.params().count()));
  }
  // full validation pass before any mutation
  for (const TensorRecord& rec : p.tensors) {
    const Parameter* param = model.params().find(rec.name);
    if (param == nullptr) {
      throw io_error(io_error::kind::mismatch,
                     "checkpoint tensor " + rec.name + " is not a model parameter");
    }
    const Shape want_shape = {param->tensor.rows(), param->tensor.cols()};
    if (rec.shape != want_shape) {
      throw io_error(io_error::kind::mismatch,
                     "shape mismatch for " + rec.name + ": file " + shape_str(rec.shape) +
                         ", model " + shape_str(want_shape));
    }
  }
  for (const OptRecord& rec : p.opt) {
    const Parameter* param = model.params().find(rec.name);
    if (param == nullptr || rec.m.size() != param->tensor.values().size() || rec.t < 1) {
      throw io_error(io_error::kind::mismatch,
                     "optimizer state does not fit parameter " + rec.name);
    }
  }

  for (const TensorRecord& rec : p.tensors) {
    model.params().find(rec.name)->tensor.values_mut() = rec.values;
  }
  if (opt != nullptr) {
    opt->state().clear();
    for (const OptRecord& rec : p.opt) {
      AdamW::State st;
      st.m = rec.m;
      st.v = rec.v;
      st.t = rec.t;
      opt->state().emplace(rec.name, std::move(st));
    }
  }
  return p.stages;
}

CheckpointMeta inspect_checkpoint(const std::string& path) {
  const Parsed p = parse_file(path);
  CheckpointMeta meta;
  meta.version = static_cast<int>(p.version);
  meta.topology = ordered_json::parse(p.topology);
  meta.stages_completed = p.stages;
  for (const TensorRecord& rec : p.tensors) {
    meta.params.emplace_back(rec.name, rec.shape);
    meta.scalar_count += shape_size(rec.shape);
  }
  for (const OptRecord& rec : p.opt) meta.optimizer_params.push_back(rec.name);
  return meta;
}

}  // namespace sge
