#pragma once

// TRJM checkpoint: magic, u32 version, length-prefixed key=value metadata
// (model.*, norm.*, and caller keys), u32 parameter count, then per parameter
// its name, u32 rank, u32 dims and row-major f32 values.

#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include "wildtraj/core/binary_io.hpp"
#include "wildtraj/features.hpp"
#include "wildtraj/models/factory.hpp"

namespace wildtraj::models {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class S>
struct Checkpoint {
  std::unique_ptr<SequenceModel<S>> model;
  std::optional<NormStats> norm;
  KeyValues metadata;  // everything outside model.* and norm.*
};

template <class S>
void save_checkpoint(std::ostream& out, const SequenceModel<S>& model, const NormStats* norm = nullptr,
                     const KeyValues& extra = {}) {
  KeyValues meta = model.config().to_key_values();
  if (norm) {
    const KeyValues nk = norm->to_key_values();
    for (const auto& [k, v] : nk.entries()) meta.add(k, v);
  }
  for (const auto& [k, v] : extra.entries()) {
    if (k.starts_with("model.") || k.starts_with("norm."))
      throw ProgrammingError("checkpoint metadata key '" + k + "' is reserved");
    meta.add(k, v);
  }
  out.write("TRJM", 4);
  binary::write_u32(out, kCheckpointVersion);
  binary::write_string(out, meta.to_string());
  binary::write_u32(out, static_cast<std::uint32_t>(model.parameters().size()));
  for (const auto& p : model.parameters()) {
    binary::write_string(out, p.name);
    binary::write_u32(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (auto d : p.tensor.shape()) binary::write_u32(out, static_cast<std::uint32_t>(d));
    for (S v : p.tensor.values()) binary::write_f32(out, static_cast<float>(v));
  }
  if (!out) throw Error("checkpoint write failed");
}

template <class S>
void save_checkpoint(const std::string& path, const SequenceModel<S>& model, const NormStats* norm = nullptr,
                     const KeyValues& extra = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint '" + path + "'");
  save_checkpoint(out, model, norm, extra);
}

template <class S>
Checkpoint<S> load_checkpoint(std::istream& in) {
  binary::expect_magic(in, "TRJM");
  const auto version = binary::read_u32(in);
  if (version != kCheckpointVersion)
    throw SchemaError("unsupported checkpoint version " + std::to_string(version));
  const KeyValues meta = KeyValues::parse_string(binary::read_string(in));
  Checkpoint<S> ck;
  ck.model = make_model<S>(ModelConfig::from_key_values(meta));
  if (meta.contains("norm.schema")) ck.norm = NormStats::from_key_values(meta);
  for (const auto& [k, v] : meta.entries())
    if (!k.starts_with("model.") && !k.starts_with("norm.")) ck.metadata.add(k, v);

  auto& params = ck.model->parameters();
  const auto count = binary::read_u32(in);
  if (count != params.size())
    throw SchemaError("checkpoint holds " + std::to_string(count) + " parameters, model expects " +
                      std::to_string(params.size()));
  for (auto& p : params) {
    const std::string name = binary::read_string(in);
    if (name != p.name) throw SchemaError("checkpoint parameter '" + name + "' where '" + p.name + "' expected");
    const auto rank = binary::read_u32(in);
    engine::Shape shape(rank);
    for (auto& d : shape) d = binary::read_u32(in);
    if (shape != p.tensor.shape())
      throw SchemaError("checkpoint parameter '" + name + "' has shape " + engine::to_string(shape) +
                        ", model expects " + engine::to_string(p.tensor.shape()));
    for (auto& v : p.tensor.mutable_values()) v = static_cast<S>(binary::read_f32(in));
  }
  return ck;
}

template <class S>
Checkpoint<S> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path + "'");
  return load_checkpoint<S>(in);
}

}  // namespace wildtraj::models
