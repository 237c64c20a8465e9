#pragma once

// Persistence: JSONL record streams, binary router checkpoints, run
// manifests and content hashes. Every save goes through a temp file and a
// rename, so a crashed write never leaves a partial artifact behind.

#include <openssl/evp.h>
#include <unistd.h>

#include <bit>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>

#include "hera/config.hpp"

namespace hera {

namespace fs = std::filesystem;

inline constexpr int kTrajectorySchemaVersion = 1;
inline constexpr int kLabeledStepSchemaVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = 1;

class SchemaVersionError : public DataError {
 public:
  using DataError::DataError;
};

// ---------------------------------------------------------------------------
// Files and hashes.

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void atomic_write(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw DataError("write failed for " + path.string());
    }
  }
  fs::rename(tmp, path);
}

inline std::string sha1_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha1(), nullptr) != 1)
    throw Error("sha1 digest failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

// Same id git assigns to a blob with this content.
inline std::string content_hash(std::string_view data) {
  std::string blob = "blob " + std::to_string(data.size());
  blob.push_back('\0');
  blob.append(data);
  return sha1_hex(blob);
}

inline std::string file_hash(const fs::path& path) { return content_hash(read_file(path)); }

inline std::string config_hash(const Config& c) { return content_hash(config_to_json(c).dump()); }

// ---------------------------------------------------------------------------
// Trajectories.

inline Json trajectory_to_json(const Trajectory& t) {
  Json steps = Json::array();
  for (const auto& s : t.steps)
    steps.push_back(Json{{"t", s.t},
                         {"canonical_key", s.canonical_key},
                         {"features", s.features},
                         {"d", s.decision},
                         {"route_prob", s.route_prob},
                         {"action", s.action},
                         {"reward", s.reward},
                         {"device_entropy", s.device_entropy},
                         {"reasoning_length", s.reasoning_length}});
  return Json{{"schema_version", kTrajectorySchemaVersion},
              {"trajectory_id", t.trajectory_id},
              {"task_id", t.task_id},
              {"mode", t.mode},
              {"steps", std::move(steps)},
              {"return", t.ret},
              {"cloud_calls", t.cloud_calls},
              {"terminal_status", std::string(to_string(t.status))}};
}

inline Trajectory trajectory_from_json(const Json& j) {
  const int version = j.at("schema_version").get<int>();
  if (version != kTrajectorySchemaVersion)
    throw SchemaVersionError("trajectory schema_version " + std::to_string(version) + " needs migration to " +
                             std::to_string(kTrajectorySchemaVersion));
  Trajectory t;
  t.trajectory_id = j.at("trajectory_id").get<std::string>();
  t.task_id = j.at("task_id").get<std::string>();
  t.mode = j.at("mode").get<std::string>();
  for (const auto& s : j.at("steps")) {
    StepRecord r;
    r.t = s.at("t").get<int>();
    r.canonical_key = s.at("canonical_key").get<std::string>();
    r.features = s.at("features").get<std::vector<double>>();
    r.decision = s.at("d").get<int>();
    r.route_prob = s.at("route_prob").get<double>();
    r.action = s.at("action").get<int>();
    r.reward = s.at("reward").get<double>();
    r.device_entropy = s.at("device_entropy").get<double>();
    r.reasoning_length = s.at("reasoning_length").get<int>();
    t.steps.push_back(std::move(r));
  }
  t.ret = j.at("return").get<double>();
  t.cloud_calls = j.at("cloud_calls").get<int>();
  t.status = parse_terminal_status(j.at("terminal_status").get<std::string>());
  return t;
}

inline LabeledStep labeled_step_from_json(const Json& j) {
  const int version = j.at("schema_version").get<int>();
  if (version != kLabeledStepSchemaVersion)
    throw SchemaVersionError("labeled-step schema_version " + std::to_string(version) + " needs migration to " +
                             std::to_string(kLabeledStepSchemaVersion));
  LabeledStep s;
  s.task_id = j.at("task_id").get<std::string>();
  s.canonical_key = j.at("canonical_key").get<std::string>();
  s.features = j.at("features").get<std::vector<double>>();
  s.label = j.at("label").get<int>();
  if (s.label != 0 && s.label != 1) throw DataError("label must be 0 or 1");
  s.stage = parse_stage(j.at("stage").get<std::string>());
  s.source = j.at("source").get<std::string>();
  s.step_index = j.at("step_index").get<int>();
  return s;
}

inline Json labeled_step_to_json(const LabeledStep& s) {
  return Json{{"schema_version", kLabeledStepSchemaVersion},
              {"task_id", s.task_id},
              {"canonical_key", s.canonical_key},
              {"features", s.features},
              {"label", s.label},
              {"stage", std::string(to_string(s.stage))},
              {"source", s.source},
              {"step_index", s.step_index}};
}

template <typename T, typename ToJson>
std::string to_jsonl(const std::vector<T>& items, ToJson&& to_json) {
  std::string out;
  for (const auto& x : items) {
    out += to_json(x).dump();
    out += '\n';
  }
  return out;
}

template <typename FromJson>
auto parse_jsonl(const std::string& text, const std::string& origin, FromJson&& from_json) {
  using T = decltype(from_json(std::declval<const Json&>()));
  std::vector<T> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(from_json(Json::parse(line)));
    } catch (const SchemaVersionError& e) {
      throw SchemaVersionError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const std::exception& e) {
      throw DataError(origin + ":" + std::to_string(lineno) + ": corrupt record: " + e.what());
    }
  }
  return out;
}

inline void save_trajectories(const fs::path& path, const std::vector<Trajectory>& trajs) {
  atomic_write(path, to_jsonl(trajs, trajectory_to_json));
}

inline std::vector<Trajectory> load_trajectories(const fs::path& path) {
  return parse_jsonl(read_file(path), path.string(), trajectory_from_json);
}

inline void save_labeled_steps(const fs::path& path, const std::vector<LabeledStep>& data) {
  atomic_write(path, to_jsonl(data, labeled_step_to_json));
}

inline std::vector<LabeledStep> load_labeled_steps(const fs::path& path) {
  return parse_jsonl(read_file(path), path.string(), labeled_step_from_json);
}

// ---------------------------------------------------------------------------
// Checkpoints.
//
// Layout (little-endian):
//   "HERACKPT" | u32 version | u32 section count |
//   sections: 4-byte tag | u64 payload length | payload
// Sections: META (JSON text), PARM (f64[]), ANCH (f64[], optional),
// OPTM (optimizer state, optional), and a closing SUM_ holding the FNV-1a
// hash of every byte before it.

struct Checkpoint {
  RouterParams params;
  std::optional<AnchorParams> anchor;
  std::optional<OptimizerState> optimizer;
  Stage stage = Stage::kIL;
  std::string config_hash;
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view s) { buf_.append(s); }
  void f64s(std::span<const double> v) {
    for (double x : v) f64(x);
  }
  std::string& str() { return buf_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string_view data, std::string origin) : data_(data), origin_(std::move(origin)) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<double> f64s(std::size_t n) {
    need(n * 8);
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == data_.size(); }

  [[noreturn]] void corrupt(const std::string& why) const {
    throw DataError("corrupt checkpoint " + origin_ + ": " + why);
  }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) corrupt("truncated at byte " + std::to_string(pos_));
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string_view data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

inline void section(ByteWriter& w, const char tag[5], std::string_view payload) {
  w.bytes(std::string_view(tag, 4));
  w.u64(payload.size());
  w.bytes(payload);
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.bytes("HERACKPT");
  w.u32(kCheckpointVersion);
  const std::uint32_t count = 3 + (ck.anchor ? 1 : 0) + (ck.optimizer ? 1 : 0);
  w.u32(count);
  const Json meta{{"architecture", ck.params.arch.describe()},
                  {"stage", std::string(to_string(ck.stage))},
                  {"config_hash", ck.config_hash},
                  {"param_count", ck.params.values.size()},
                  {"version", ck.params.version}};
  detail::section(w, "META", meta.dump());
  {
    detail::ByteWriter p;
    p.f64s(ck.params.values);
    detail::section(w, "PARM", p.str());
  }
  if (ck.anchor) {
    detail::ByteWriter p;
    p.f64s(ck.anchor->values());
    detail::section(w, "ANCH", p.str());
  }
  if (ck.optimizer) {
    const auto& o = *ck.optimizer;
    detail::ByteWriter p;
    p.u64(o.step);
    p.f64(o.lr);
    p.f64(o.weight_decay);
    p.f64(o.beta1);
    p.f64(o.beta2);
    p.f64(o.eps);
    p.f64s(o.m);
    p.f64s(o.v);
    detail::section(w, "OPTM", p.str());
  }
  detail::ByteWriter sum;
  sum.u64(fnv1a(w.str()));
  detail::section(w, "SUM_", sum.str());
  return std::move(w.str());
}

inline Checkpoint decode_checkpoint(std::string_view data, const std::string& origin = "<memory>") {
  detail::ByteReader r(data, origin);
  if (r.bytes(8) != "HERACKPT") r.corrupt("bad magic");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw SchemaVersionError("checkpoint " + origin + " has version " + std::to_string(version) +
                             ", expected " + std::to_string(kCheckpointVersion));
  const auto count = r.u32();
  Checkpoint ck;
  bool have_meta = false, have_params = false, have_sum = false;
  std::size_t n_params = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t section_start = r.pos();
    const std::string tag(r.bytes(4));
    const auto len = r.u64();
    if (len > data.size()) r.corrupt("section " + tag + " overruns the file");
    const std::string_view payload = r.bytes(static_cast<std::size_t>(len));
    detail::ByteReader p(payload, origin);
    if (tag == "META") {
      Json meta;
      try {
        meta = Json::parse(payload);
        ck.params.arch = Architecture::parse(meta.at("architecture").get<std::string>());
        ck.stage = parse_stage(meta.at("stage").get<std::string>());
        ck.config_hash = meta.at("config_hash").get<std::string>();
        n_params = meta.at("param_count").get<std::size_t>();
        ck.params.version = meta.at("version").get<std::uint64_t>();
      } catch (const std::exception& e) {
        r.corrupt(std::string("bad META section: ") + e.what());
      }
      if (n_params != ck.params.arch.param_count()) r.corrupt("parameter count does not match architecture");
      have_meta = true;
    } else if (tag == "PARM") {
      if (!have_meta || len != n_params * 8) r.corrupt("PARM section size mismatch");
      ck.params.values = p.f64s(n_params);
      have_params = true;
    } else if (tag == "ANCH") {
      if (!have_meta || len != n_params * 8) r.corrupt("ANCH section size mismatch");
      RouterParams a;
      a.arch = ck.params.arch;
      a.values = p.f64s(n_params);
      ck.anchor.emplace(std::move(a));
    } else if (tag == "OPTM") {
      if (!have_meta || len != 8 + 5 * 8 + 2 * n_params * 8) r.corrupt("OPTM section size mismatch");
      OptimizerState o;
      o.step = p.u64();
      o.lr = p.f64();
      o.weight_decay = p.f64();
      o.beta1 = p.f64();
      o.beta2 = p.f64();
      o.eps = p.f64();
      o.m = p.f64s(n_params);
      o.v = p.f64s(n_params);
      ck.optimizer = std::move(o);
    } else if (tag == "SUM_") {
      if (len != 8) r.corrupt("bad checksum section");
      if (p.u64() != fnv1a(data.substr(0, section_start))) r.corrupt("checksum mismatch");
      have_sum = true;
    } else {
      r.corrupt("unknown section '" + tag + "'");
    }
  }
  if (!have_meta || !have_params || !have_sum) r.corrupt("missing required section");
  if (!r.done()) r.corrupt("trailing bytes");
  return ck;
}

inline void save_checkpoint(const fs::path& path, const Checkpoint& ck) { atomic_write(path, encode_checkpoint(ck)); }

inline Checkpoint load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("checkpoint " + path.string() + " does not exist");
  return decode_checkpoint(read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Run manifests.

struct ArtifactEntry {
  std::string path;  // relative to the run directory
  std::string hash;
};

struct RunManifest {
  std::string run_id;
  std::string stage;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> eval_seeds;
  std::string created_at;
  std::vector<std::string> command;
  std::vector<ArtifactEntry> artifacts;
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

inline Json manifest_to_json(const RunManifest& m) {
  Json arts = Json::array();
  for (const auto& a : m.artifacts) arts.push_back(Json{{"path", a.path}, {"hash", a.hash}});
  return Json{{"run_id", m.run_id},         {"stage", m.stage},          {"config_hash", m.config_hash},
              {"seed", m.seed},             {"eval_seeds", m.eval_seeds}, {"created_at", m.created_at},
              {"command", m.command},       {"artifacts", std::move(arts)}};
}

inline RunManifest manifest_from_json(const Json& j) {
  RunManifest m;
  try {
    m.run_id = j.at("run_id").get<std::string>();
    m.stage = j.at("stage").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.eval_seeds = j.at("eval_seeds").get<std::vector<std::uint64_t>>();
    m.created_at = j.at("created_at").get<std::string>();
    m.command = j.at("command").get<std::vector<std::string>>();
    for (const auto& a : j.at("artifacts")) m.artifacts.push_back({a.at("path"), a.at("hash")});
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("corrupt manifest: ") + e.what());
  }
  return m;
}

// Hashes every regular file under the run directory except the manifest.
inline std::vector<ArtifactEntry> scan_artifacts(const fs::path& run_dir) {
  std::vector<ArtifactEntry> out;
  for (const auto& e : fs::recursive_directory_iterator(run_dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), run_dir).generic_string();
    if (rel == "manifest.json" || rel.find(".tmp.") != std::string::npos) continue;
    out.push_back({rel, file_hash(e.path())});
  }
  std::sort(out.begin(), out.end(), [](const ArtifactEntry& a, const ArtifactEntry& b) { return a.path < b.path; });
  return out;
}

inline void save_manifest(const fs::path& run_dir, const RunManifest& m) {
  atomic_write(run_dir / "manifest.json", manifest_to_json(m).dump(2) + "\n");
}

inline RunManifest load_manifest(const fs::path& run_dir) {
  try {
    return manifest_from_json(Json::parse(read_file(run_dir / "manifest.json")));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("corrupt manifest: ") + e.what());
  }
}

// Returns the artifacts that are missing or whose content changed.
inline std::vector<std::string> verify_manifest(const fs::path& run_dir, const RunManifest& m) {
  std::vector<std::string> bad;
  for (const auto& a : m.artifacts) {
    const fs::path p = run_dir / a.path;
    if (!fs::exists(p) || file_hash(p) != a.hash) bad.push_back(a.path);
  }
  return bad;
}

}  // namespace hera
