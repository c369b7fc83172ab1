#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wildtraj/core/error.hpp"
#include "wildtraj/core/key_values.hpp"
#include "wildtraj/core/text.hpp"

namespace wildtraj::models {

enum class Architecture : std::uint8_t { transformer, lstm, cnn1d, tcn };

inline std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::transformer: return "transformer";
    case Architecture::lstm: return "lstm";
    case Architecture::cnn1d: return "cnn1d";
    case Architecture::tcn: return "tcn";
  }
  return "?";
}

inline Architecture parse_architecture(const std::string& s) {
  if (s == "transformer") return Architecture::transformer;
  if (s == "lstm") return Architecture::lstm;
  if (s == "cnn1d" || s == "cnn") return Architecture::cnn1d;
  if (s == "tcn") return Architecture::tcn;
  throw SchemaError("unknown architecture '" + s + "' (expected transformer, lstm, cnn1d or tcn)");
}

enum class Activation : std::uint8_t { gelu, relu };

inline std::string to_string(Activation a) { return a == Activation::gelu ? "gelu" : "relu"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "gelu") return Activation::gelu;
  if (s == "relu") return Activation::relu;
  throw SchemaError("unknown activation '" + s + "'");
}

inline std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& part : split(s, ',')) {
    auto v = parse_int(part);
    if (!v || *v <= 0) throw SchemaError("config key '" + key + "': bad list '" + s + "'");
    out.push_back(static_cast<std::size_t>(*v));
  }
  return out;
}

struct ModelConfig {
  Architecture arch = Architecture::transformer;
  std::size_t features = 10;  // F
  std::size_t steps = 24;     // T (nominal; forward accepts any length)
  std::size_t num_classes = 2;
  std::uint64_t seed = 0;
  double dropout = 0.1;

  // transformer
  std::size_t d_model = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ff_dim = 256;
  Activation activation = Activation::gelu;
  bool positional_encoding = true;

  // lstm
  std::size_t lstm_hidden = 64;
  std::size_t lstm_layers = 2;

  // cnn1d
  std::size_t cnn_filters = 64;
  std::vector<std::size_t> cnn_kernels{3, 5, 7};
  std::size_t cnn_groups = 8;

  // tcn
  std::size_t tcn_channels = 64;
  std::size_t tcn_kernel = 3;
  std::vector<std::size_t> tcn_dilations{1, 2, 4, 8};
  double tcn_dropout = 0.2;

  void validate() const {
    auto fail = [](const std::string& m) { throw SchemaError("model config: " + m); };
    if (features == 0 || steps == 0) fail("features and steps must be positive");
    if (num_classes < 2) fail("num_classes must be >= 2");
    if (dropout < 0.0 || dropout >= 1.0 || tcn_dropout < 0.0 || tcn_dropout >= 1.0) fail("dropout must be in [0, 1)");
    if (d_model == 0 || heads == 0 || d_model % heads != 0) fail("d_model must be a positive multiple of heads");
    if (d_model % 2 != 0) fail("d_model must be even for sinusoidal encodings");
    if (layers == 0 || ff_dim == 0) fail("transformer layers and ff_dim must be positive");
    if (lstm_hidden == 0 || lstm_layers == 0) fail("lstm sizes must be positive");
    if (cnn_filters == 0 || cnn_groups == 0 || cnn_filters % cnn_groups != 0)
      fail("cnn_filters must be a positive multiple of cnn_groups");
    for (auto k : cnn_kernels)
      if (k % 2 == 0) fail("cnn kernels must be odd");
    if (cnn_kernels.empty()) fail("cnn needs at least one branch");
    if (tcn_channels == 0 || tcn_kernel == 0 || tcn_dilations.empty()) fail("tcn sizes must be positive");
  }

  // 1 + 2 (k - 1) sum(dilations): two causal convolutions per residual block.
  std::size_t tcn_receptive_field() const {
    std::size_t s = 0;
    for (auto d : tcn_dilations) s += d;
    return 1 + 2 * (tcn_kernel - 1) * s;
  }

  KeyValues to_key_values() const {
    KeyValues kv;
    kv.add("model.arch", to_string(arch));
    kv.add("model.features", std::to_string(features));
    kv.add("model.steps", std::to_string(steps));
    kv.add("model.num_classes", std::to_string(num_classes));
    kv.add("model.seed", std::to_string(seed));
    kv.add("model.dropout", format_double(dropout));
    kv.add("model.d_model", std::to_string(d_model));
    kv.add("model.layers", std::to_string(layers));
    kv.add("model.heads", std::to_string(heads));
    kv.add("model.ff_dim", std::to_string(ff_dim));
    kv.add("model.activation", to_string(activation));
    kv.add("model.positional_encoding", positional_encoding ? "true" : "false");
    kv.add("model.lstm_hidden", std::to_string(lstm_hidden));
    kv.add("model.lstm_layers", std::to_string(lstm_layers));
    kv.add("model.cnn_filters", std::to_string(cnn_filters));
    kv.add("model.cnn_kernels", join(cnn_kernels));
    kv.add("model.cnn_groups", std::to_string(cnn_groups));
    kv.add("model.tcn_channels", std::to_string(tcn_channels));
    kv.add("model.tcn_kernel", std::to_string(tcn_kernel));
    kv.add("model.tcn_dilations", join(tcn_dilations));
    kv.add("model.tcn_dropout", format_double(tcn_dropout));
    return kv;
  }

  // Reads `model.*` keys; missing keys keep their defaults.
  static ModelConfig from_key_values(const KeyValues& kv) {
    ModelConfig c;
    auto size = [&](const char* key, std::size_t fallback) {
      const auto v = kv.get_int(key, static_cast<long long>(fallback));
      if (v < 0) throw SchemaError(std::string("config key '") + key + "' must be non-negative");
      return static_cast<std::size_t>(v);
    };
    if (auto v = kv.get("model.arch")) c.arch = parse_architecture(*v);
    c.features = size("model.features", c.features);
    c.steps = size("model.steps", c.steps);
    c.num_classes = size("model.num_classes", c.num_classes);
    c.seed = static_cast<std::uint64_t>(kv.get_int("model.seed", 0));
    c.dropout = kv.get_double("model.dropout", c.dropout);
    c.d_model = size("model.d_model", c.d_model);
    c.layers = size("model.layers", c.layers);
    c.heads = size("model.heads", c.heads);
    c.ff_dim = size("model.ff_dim", c.ff_dim);
    if (auto v = kv.get("model.activation")) c.activation = parse_activation(*v);
    c.positional_encoding = kv.get_bool("model.positional_encoding", c.positional_encoding);
    c.lstm_hidden = size("model.lstm_hidden", c.lstm_hidden);
    c.lstm_layers = size("model.lstm_layers", c.lstm_layers);
    c.cnn_filters = size("model.cnn_filters", c.cnn_filters);
    if (auto v = kv.get("model.cnn_kernels")) c.cnn_kernels = parse_list("model.cnn_kernels", *v);
    c.cnn_groups = size("model.cnn_groups", c.cnn_groups);
    c.tcn_channels = size("model.tcn_channels", c.tcn_channels);
    c.tcn_kernel = size("model.tcn_kernel", c.tcn_kernel);
    if (auto v = kv.get("model.tcn_dilations")) c.tcn_dilations = parse_list("model.tcn_dilations", *v);
    c.tcn_dropout = kv.get_double("model.tcn_dropout", c.tcn_dropout);
    c.validate();
    return c;
  }
};

}  // namespace wildtraj::models
