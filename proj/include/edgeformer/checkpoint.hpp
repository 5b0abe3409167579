#pragma once

// Binary checkpoints.  The layout is magic, format version, a JSON header
// carrying the model/plan/adaptation description plus its digest, every
// named parameter exactly once as little-endian 32-bit reals, optional
// optimizer state kept at full accumulator precision, an optional RNG
// stream snapshot, and a trailing sentinel that catches truncation.
// Shared slots rebind when the model is reconstructed, so one stored
// tensor restores every site that shares it.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <type_traits>

#include "edgeformer/adaptation.hpp"
#include "edgeformer/train.hpp"

namespace edgeformer {

inline constexpr char kCheckpointMagic[4] = {'E', 'F', 'C', 'K'};
inline constexpr char kCheckpointSentinel[4] = {'K', 'C', 'F', 'E'};
inline constexpr std::uint32_t kCheckpointFormat = 1;

// FNV-1a over the canonical (key-sorted) dump of a JSON document.
inline std::uint64_t json_digest(const json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// The description a checkpoint must match to be loadable against a config.
inline json model_description(const ModelConfig& config, const SharingPlan& plan,
                              const AdaptationSpec& adaptation) {
  return json{{"model", model_config_to_json(config)},
              {"plan", plan_to_json(plan)},
              {"adaptation", adaptation_to_json(adaptation)}};
}

template <typename T>
std::uint64_t model_digest(const Model<T>& m) {
  return json_digest(model_description(m.config, m.plan, m.adaptation));
}

namespace detail {

inline void write_bytes(std::ostream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), std::streamsize(n));
}

template <typename U>
void write_le(std::ostream& out, U value) {
  static_assert(std::is_integral_v<U>);
  unsigned char buf[sizeof(U)];
  auto u = std::make_unsigned_t<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = (unsigned char)(u >> (8 * i));
  write_bytes(out, buf, sizeof(U));
}

inline void write_f32(std::ostream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_le(out, bits);
}

inline void write_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_le(out, bits);
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_le(out, std::uint64_t(s.size()));
  write_bytes(out, s.data(), s.size());
}

inline void read_bytes(std::istream& in, void* p, std::size_t n, const char* what) {
  in.read(static_cast<char*>(p), std::streamsize(n));
  if (std::size_t(in.gcount()) != n)
    throw std::runtime_error(std::string("checkpoint truncated while reading ") + what);
}

template <typename U>
U read_le(std::istream& in, const char* what) {
  static_assert(std::is_integral_v<U>);
  unsigned char buf[sizeof(U)];
  read_bytes(in, buf, sizeof(U), what);
  std::make_unsigned_t<U> u = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    u |= std::make_unsigned_t<U>(buf[i]) << (8 * i);
  return U(u);
}

inline float read_f32(std::istream& in, const char* what) {
  auto bits = read_le<std::uint32_t>(in, what);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline double read_f64(std::istream& in, const char* what) {
  auto bits = read_le<std::uint64_t>(in, what);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

inline std::string read_string(std::istream& in, const char* what) {
  auto n = read_le<std::uint64_t>(in, what);
  if (n > (1ULL << 32)) throw std::runtime_error("checkpoint field length is implausible");
  std::string s(std::size_t(n), '\0');
  read_bytes(in, s.data(), s.size(), what);
  return s;
}

}  // namespace detail

template <typename T>
struct OptimizerSnapshot {
  std::vector<std::vector<double>> m, v;
  std::int64_t steps = 0;

  static OptimizerSnapshot take(const Adam<T>& opt) {
    return {opt.slot_m(), opt.slot_v(), opt.steps_done()};
  }
};

template <typename T>
struct LoadedCheckpoint {
  Model<T> model;
  std::uint64_t digest = 0;
  bool has_optimizer = false;
  OptimizerSnapshot<T> optimizer;
  std::string rng_state;  // empty if none was stored
};

// Writes the model (and optionally optimizer + RNG stream) to `path`.
// Values are stored as 32-bit reals: the round trip is bitwise for float
// models.  The write goes through a temp file and a rename.
template <typename T>
void save_checkpoint(const std::string& path, const Model<T>& m,
                     const OptimizerSnapshot<T>* opt = nullptr,
                     const std::string& rng_state = "") {
  const json desc = model_description(m.config, m.plan, m.adaptation);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp + " for writing");
    detail::write_bytes(out, kCheckpointMagic, 4);
    detail::write_le(out, kCheckpointFormat);
    detail::write_le(out, json_digest(desc));
    detail::write_string(out, desc.dump());
    detail::write_le(out, std::uint64_t(m.init_seed));

    detail::write_le(out, std::uint64_t(m.named_params.size()));
    for (const auto& [name, p] : m.named_params) {
      detail::write_string(out, name);
      detail::write_le(out, std::uint64_t(p.shape().size()));
      for (auto d : p.shape()) detail::write_le(out, std::uint64_t(d));
      for (std::size_t i = 0; i < p.numel(); ++i) detail::write_f32(out, float(p.at(i)));
    }

    detail::write_le(out, std::uint8_t(opt ? 1 : 0));
    if (opt) {
      if (opt->m.size() != m.named_params.size() || opt->v.size() != m.named_params.size())
        throw std::runtime_error("optimizer snapshot does not match the parameter list");
      detail::write_le(out, opt->steps);
      for (std::size_t i = 0; i < opt->m.size(); ++i) {
        detail::write_le(out, std::uint64_t(opt->m[i].size()));
        for (double x : opt->m[i]) detail::write_f64(out, x);
        for (double x : opt->v[i]) detail::write_f64(out, x);
      }
    }
    detail::write_string(out, rng_state);
    detail::write_bytes(out, kCheckpointSentinel, 4);
    if (!out) throw std::runtime_error("write to " + tmp + " failed");
  }
  std::filesystem::rename(tmp, path);
}

// Rebuilds the model described in the header and fills every parameter
// from the stored tensors.  Pass `expect_digest` to insist the checkpoint
// matches a configuration computed elsewhere.
template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path, std::uint64_t expect_digest = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);

  char magic[4];
  detail::read_bytes(in, magic, 4, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw std::runtime_error(path + " is not a checkpoint (bad magic)");
  const auto format = detail::read_le<std::uint32_t>(in, "format version");
  if (format != kCheckpointFormat)
    throw std::runtime_error("unsupported checkpoint format version " + std::to_string(format));

  const auto stored_digest = detail::read_le<std::uint64_t>(in, "digest");
  const std::string desc_text = detail::read_string(in, "header");
  json desc;
  try {
    desc = json::parse(desc_text);
  } catch (const json::exception&) {
    throw std::runtime_error("checkpoint header is not valid JSON");
  }
  if (json_digest(desc) != stored_digest)
    throw std::runtime_error("checkpoint header does not match its digest");
  if (expect_digest != 0 && stored_digest != expect_digest)
    throw ConfigError("checkpoint was written for a different configuration (digest mismatch)");

  const auto config = model_config_from_json(desc.at("model"));
  const auto plan = plan_from_json(desc.at("plan"));
  const auto adaptation = adaptation_from_json(desc.at("adaptation"));
  const auto init_seed = detail::read_le<std::uint64_t>(in, "init seed");

  LoadedCheckpoint<T> out{build_model<T>(config, plan, adaptation, init_seed), stored_digest};
  Model<T>& m = out.model;

  const auto n_tensors = detail::read_le<std::uint64_t>(in, "tensor count");
  if (n_tensors != m.named_params.size())
    throw std::runtime_error("checkpoint holds " + std::to_string(n_tensors) +
                             " tensors but the configuration binds " +
                             std::to_string(m.named_params.size()));
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    const std::string name = detail::read_string(in, "tensor name");
    auto* p = m.find_param(name);
    if (!p) throw std::runtime_error("checkpoint tensor " + name + " has no home in the model");
    const auto rank = detail::read_le<std::uint64_t>(in, "tensor rank");
    if (rank != p->shape().size())
      throw std::runtime_error("checkpoint tensor " + name + " has wrong rank");
    for (std::size_t d = 0; d < rank; ++d)
      if (detail::read_le<std::uint64_t>(in, "tensor shape") != p->shape()[d])
        throw std::runtime_error("checkpoint tensor " + name + " has wrong shape");
    for (std::size_t e = 0; e < p->numel(); ++e)
      p->at(e) = T(detail::read_f32(in, "tensor data"));
  }

  out.has_optimizer = detail::read_le<std::uint8_t>(in, "optimizer flag") != 0;
  if (out.has_optimizer) {
    out.optimizer.steps = detail::read_le<std::int64_t>(in, "optimizer step");
    out.optimizer.m.resize(m.named_params.size());
    out.optimizer.v.resize(m.named_params.size());
    for (std::size_t i = 0; i < m.named_params.size(); ++i) {
      const auto n = detail::read_le<std::uint64_t>(in, "optimizer slot size");
      if (n != m.named_params[i].second.numel())
        throw std::runtime_error("optimizer state for " + m.named_params[i].first +
                                 " has wrong size");
      out.optimizer.m[i].resize(n);
      out.optimizer.v[i].resize(n);
      for (auto& x : out.optimizer.m[i]) x = detail::read_f64(in, "optimizer m");
      for (auto& x : out.optimizer.v[i]) x = detail::read_f64(in, "optimizer v");
    }
  }
  out.rng_state = detail::read_string(in, "rng state");

  char sentinel[4];
  detail::read_bytes(in, sentinel, 4, "sentinel");
  if (std::memcmp(sentinel, kCheckpointSentinel, 4) != 0)
    throw std::runtime_error("checkpoint is damaged (bad end sentinel)");
  return out;
}

inline std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

inline std::mt19937_64 rng_from_string(const std::string& s) {
  std::mt19937_64 rng;
  std::istringstream ss(s);
  ss >> rng;
  if (!ss) throw std::runtime_error("stored RNG state is unreadable");
  return rng;
}

}  // namespace edgeformer
