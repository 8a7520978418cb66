#pragma once

#include "d2r/cli/config.hpp"
#include "d2r/sacmt/agent.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace d2r::cli {

static_assert(std::endian::native == std::endian::little, "checkpoints are written little-endian");

inline constexpr char kCheckpointMagic[8] = {'D', '2', 'R', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Written by a different format version; both versions are in the message.
class CheckpointVersionError : public CheckpointError {
 public:
  CheckpointVersionError(std::uint32_t found, std::uint32_t supported)
      : CheckpointError("checkpoint format version " + std::to_string(found) + " is not supported (this build reads " +
                        std::to_string(supported) + ")"),
        found_(found) {}
  std::uint32_t found() const { return found_; }

 private:
  std::uint32_t found_;
};

struct Checkpoint {
  RunConfig config;
  std::string config_hash;
  long env_steps = 0;
  sacmt::Agent agent;
};

namespace detail {

struct NamedTensor {
  std::string name;
  Matrix* value;
};

inline void add_store(std::vector<NamedTensor>& out, const std::string& prefix, ad::ParameterStore& s) {
  for (std::size_t p = 0; p < s.size(); ++p) out.push_back({prefix + s.name(p), &s.value(p)});
}

/// Optimiser moments and per-row step counts, as matrices.
struct AdamState {
  std::vector<Matrix> m, v, steps;

  explicit AdamState(const ad::Adam& a) : m(a.first_moments()), v(a.second_moments()) {
    for (const auto& s : a.step_counts()) steps.push_back(s.matrix());
  }
  void add(std::vector<NamedTensor>& out, const std::string& prefix, const ad::ParameterStore& store) {
    for (std::size_t p = 0; p < store.size(); ++p) {
      out.push_back({prefix + "m/" + store.name(p), &m[p]});
      out.push_back({prefix + "v/" + store.name(p), &v[p]});
      out.push_back({prefix + "steps/" + store.name(p), &steps[p]});
    }
  }
  void apply(ad::Adam& a) const {
    std::vector<Eigen::ArrayXd> s;
    for (const auto& x : steps) s.push_back(x.col(0).array());
    a.restore(m, v, std::move(s));
  }
};

struct AgentTensors {
  AdamState actor, q1, q2, alpha;
  std::vector<NamedTensor> list;

  explicit AgentTensors(sacmt::Agent& a)
      : actor(a.actor_optimizer()), q1(a.q1_optimizer()), q2(a.q2_optimizer()), alpha(a.alpha_optimizer()) {
    add_store(list, "actor/", a.actor().parameters());
    add_store(list, "q1/", a.q1().parameters());
    add_store(list, "q2/", a.q2().parameters());
    add_store(list, "q1_target/", a.q1_target().parameters());
    add_store(list, "q2_target/", a.q2_target().parameters());
    add_store(list, "temperature/", a.log_alpha());
    actor.add(list, "adam/actor/", a.actor().parameters());
    q1.add(list, "adam/q1/", a.q1().parameters());
    q2.add(list, "adam/q2/", a.q2().parameters());
    alpha.add(list, "adam/temperature/", a.log_alpha());
  }
  void apply_optimizers(sacmt::Agent& a) const {
    actor.apply(a.actor_optimizer());
    q1.apply(a.q1_optimizer());
    q2.apply(a.q2_optimizer());
    alpha.apply(a.alpha_optimizer());
  }
};

template <class T>
void put(std::string& out, const T& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw CheckpointError("checkpoint is truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof v);
  pos += sizeof v;
  return v;
}

}  // namespace detail

/// Layout: magic, u32 version, u64 manifest length, JSON manifest, the
/// tensors as column-major float64 in manifest order, u64 FNV-1a of all
/// preceding bytes.
inline std::string encode_checkpoint(const RunConfig& config, long env_steps, const sacmt::Agent& agent) {
  sacmt::Agent copy = agent;
  detail::AgentTensors tensors(copy);
  json manifest;
  manifest["config"] = to_json(config);
  manifest["config_hash"] = config_hash(config);
  manifest["env_steps"] = env_steps;
  manifest["tasks"] = agent.tasks();
  json list = json::array();
  for (const auto& t : tensors.list) list.push_back({{"name", t.name}, {"rows", t.value->rows()}, {"cols", t.value->cols()}});
  manifest["tensors"] = list;
  const std::string text = manifest.dump();

  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put(out, kCheckpointVersion);
  detail::put(out, static_cast<std::uint64_t>(text.size()));
  out += text;
  for (const auto& t : tensors.list)
    out.append(reinterpret_cast<const char*>(t.value->data()), static_cast<std::size_t>(t.value->size()) * sizeof(double));
  detail::put(out, fnv1a(out));
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  std::size_t pos = 0;
  if (bytes.size() < sizeof kCheckpointMagic || std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic))
    throw CheckpointError("not a checkpoint file (bad magic)");
  pos = sizeof kCheckpointMagic;
  const auto version = detail::take<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) throw CheckpointVersionError(version, kCheckpointVersion);
  if (bytes.size() < pos + 2 * sizeof(std::uint64_t)) throw CheckpointError("checkpoint is truncated");
  std::size_t tail = bytes.size() - sizeof(std::uint64_t);
  const auto stored = detail::take<std::uint64_t>(bytes, tail);
  if (stored != fnv1a(std::string_view(bytes.data(), bytes.size() - sizeof(std::uint64_t))))
    throw CheckpointError("checkpoint checksum mismatch");

  const auto length = detail::take<std::uint64_t>(bytes, pos);
  if (pos + length > bytes.size() - sizeof(std::uint64_t)) throw CheckpointError("checkpoint is truncated");
  json manifest;
  try {
    manifest = json::parse(bytes.substr(pos, length));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint manifest: ") + e.what());
  }
  pos += length;

  Checkpoint ck;
  ck.config = config_from_json(manifest.at("config"));
  ck.config_hash = manifest.at("config_hash").get<std::string>();
  ck.env_steps = manifest.at("env_steps").get<long>();
  Rng unused(0);
  ck.agent = sacmt::Agent(ck.config.network, ck.config.sac, static_cast<int>(ck.config.suite.size()),
                          env::kObservationDim, env::kActionDim, unused);
  detail::AgentTensors tensors(ck.agent);
  const auto& list = manifest.at("tensors");
  if (list.size() != tensors.list.size())
    throw CheckpointError("checkpoint holds " + std::to_string(list.size()) + " tensors, the configuration needs " +
                          std::to_string(tensors.list.size()));
  for (std::size_t i = 0; i < list.size(); ++i) {
    auto& t = tensors.list[i];
    const auto name = list[i].at("name").get<std::string>();
    const auto rows = list[i].at("rows").get<Eigen::Index>();
    const auto cols = list[i].at("cols").get<Eigen::Index>();
    if (name != t.name || rows != t.value->rows() || cols != t.value->cols())
      throw CheckpointError("checkpoint tensor " + name + " does not match " + t.name + " " + ad::shape_of(*t.value));
    const std::size_t n = static_cast<std::size_t>(rows * cols) * sizeof(double);
    if (pos + n > bytes.size() - sizeof(std::uint64_t)) throw CheckpointError("checkpoint is truncated");
    std::memcpy(t.value->data(), bytes.data() + pos, n);
    pos += n;
  }
  if (pos != bytes.size() - sizeof(std::uint64_t)) throw CheckpointError("checkpoint has trailing bytes");
  tensors.apply_optimizers(ck.agent);
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const RunConfig& config, long env_steps,
                            const sacmt::Agent& agent) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = encode_checkpoint(config, env_steps, agent);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace d2r::cli
