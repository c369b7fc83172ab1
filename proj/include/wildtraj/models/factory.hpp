#pragma once

#include <memory>

#include "wildtraj/models/cnn1d.hpp"
#include "wildtraj/models/lstm.hpp"
#include "wildtraj/models/tcn.hpp"
#include "wildtraj/models/transformer.hpp"

namespace wildtraj::models {

template <class S>
std::unique_ptr<SequenceModel<S>> make_model(const ModelConfig& config) {
  switch (config.arch) {
    case Architecture::transformer: return std::make_unique<TransformerClassifier<S>>(config);
    case Architecture::lstm: return std::make_unique<LstmClassifier<S>>(config);
    case Architecture::cnn1d: return std::make_unique<Cnn1dClassifier<S>>(config);
    case Architecture::tcn: return std::make_unique<TcnClassifier<S>>(config);
  }
  throw ProgrammingError("make_model: unhandled architecture");
}

}  // namespace wildtraj::models
