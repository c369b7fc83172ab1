#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <random>
#include <sstream>

#include "support/gradcheck.hpp"
#include "support/model_fixtures.hpp"
#include "wildtraj/models/checkpoint.hpp"
#include "wildtraj/models/tcn.hpp"
#include "wildtraj/models/transformer.hpp"

using namespace wildtraj;
using namespace wildtraj::models;
using fixtures::kAllArchitectures;
using fixtures::small_config;

namespace {

template <class S>
std::vector<S> logits_of(SequenceModel<S>& m, const Batch<S>& b) {
  engine::NoGradGuard g;
  const auto y = m.forward(b);
  return {y.values().begin(), y.values().end()};
}

template <class S>
bool bit_equal(const std::vector<S>& a, const std::vector<S>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(S)) == 0;
}

template <class S>
Batch<S> with_x(const Batch<S>& b, std::vector<S> x) {
  return {Tensor<S>::constant(b.x.shape(), std::move(x)), b.mask};
}

class PerArch : public ::testing::TestWithParam<Architecture> {};

std::string arch_name(const ::testing::TestParamInfo<Architecture>& i) { return to_string(i.param); }

}  // namespace

TEST_P(PerArch, FullModelGradientCheck) {
  // Draw chosen so no ReLU pre-activation sits within h of its kink.
  std::mt19937_64 rng(2);
  auto model = make_model<double>(small_config(GetParam()));
  const auto batch = fixtures::random_batch<double>(rng, 2, 8, 5);
  const std::vector<int> labels{0, 1};
  const std::vector<double> cw{1.0, 1.0};
  std::vector<Tensor<double>> inputs;
  std::vector<std::string> names;
  for (auto& p : model->parameters()) {
    inputs.push_back(p.tensor);
    names.push_back(p.name);
  }
  auto loss = [&] { return engine::weighted_cross_entropy(model->forward(batch), labels, cw); };
  const auto r = gradcheck::check(loss, inputs, names);
  EXPECT_LT(r.max_rel_error, 1e-4) << "worst tensor " << r.worst;
}

TEST_P(PerArch, PaddedContentNeverChangesLogits) {
  std::mt19937_64 rng(2);
  for (auto features : {5u, 10u}) {
    auto model = make_model<float>(small_config(GetParam(), features, 24));
    const auto batch = fixtures::random_batch<float>(rng, 4, 24, features, 0.6);
    const auto base = logits_of(*model, batch);
    std::normal_distribution<float> n(0, 100);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<float> x(batch.x.values().begin(), batch.x.values().end());
      for (std::size_t i = 0; i < batch.mask.size(); ++i)
        if (!batch.mask[i])
          for (std::size_t f = 0; f < features; ++f) x[i * features + f] = n(rng);
      ASSERT_TRUE(bit_equal(base, logits_of(*model, with_x(batch, x)))) << "trial " << trial;
    }
  }
}

TEST_P(PerArch, AddingObservedStepChangesLogits) {
  std::mt19937_64 rng(3);
  auto model = make_model<double>(small_config(GetParam()));
  auto batch = fixtures::random_batch<double>(rng, 1, 8, 5, 0.5);
  const auto base = logits_of(*model, batch);
  auto it = std::find(batch.mask.begin() + 1, batch.mask.end(), std::uint8_t{0});
  if (it == batch.mask.end()) GTEST_SKIP() << "no padded slot drawn";
  const auto t = static_cast<std::size_t>(it - batch.mask.begin());
  std::vector<double> x(batch.x.values().begin(), batch.x.values().end());
  for (std::size_t f = 0; f < 5; ++f) x[t * 5 + f] = 0.5 + static_cast<double>(f);
  auto more = with_x(batch, x);
  more.mask[t] = 1;
  EXPECT_FALSE(bit_equal(base, logits_of(*model, more)));
}

TEST_P(PerArch, SameSeedSameInitialization) {
  auto a = make_model<float>(small_config(GetParam(), 10, 24, 42));
  auto b = make_model<float>(small_config(GetParam(), 10, 24, 42));
  auto c = make_model<float>(small_config(GetParam(), 10, 24, 43));
  ASSERT_EQ(a->parameters().size(), b->parameters().size());
  bool differs = false;
  for (std::size_t i = 0; i < a->parameters().size(); ++i) {
    const auto va = a->parameters()[i].tensor.values(), vb = b->parameters()[i].tensor.values(),
               vc = c->parameters()[i].tensor.values();
    EXPECT_TRUE(std::equal(va.begin(), va.end(), vb.begin()));
    differs = differs || !std::equal(va.begin(), va.end(), vc.begin());
  }
  EXPECT_TRUE(differs);
}

TEST_P(PerArch, CheckpointRoundTripIsBitExact) {
  std::mt19937_64 rng(4);
  auto model = make_model<float>(small_config(GetParam(), 10, 24));
  NormStats norm;
  norm.schema = FeatureSchema::augmented10;
  norm.mean.assign(8, 0.25);
  norm.stddev.assign(8, 2.0);
  KeyValues extra;
  extra.add("task.species", "lion");
  std::stringstream s;
  save_checkpoint(s, *model, &norm, extra);
  auto ck = load_checkpoint<float>(s);
  ASSERT_TRUE(ck.norm);
  EXPECT_EQ(ck.norm->mean, norm.mean);
  EXPECT_EQ(ck.metadata.get_or("task.species", ""), "lion");
  EXPECT_EQ(ck.model->config().to_key_values().entries(), model->config().to_key_values().entries());
  const auto batch = fixtures::random_batch<float>(rng, 3, 24, 10);
  EXPECT_TRUE(bit_equal(logits_of(*model, batch), logits_of(*ck.model, batch)));
}

TEST_P(PerArch, AllPaddingInputGivesFiniteLogits) {
  auto model = make_model<double>(small_config(GetParam()));
  Batch<double> b{Tensor<double>::zeros({2, 8, 5}), std::vector<std::uint8_t>(16, 0)};
  for (double v : logits_of(*model, b)) EXPECT_TRUE(std::isfinite(v));
  EXPECT_EQ(model->diagnostics().empty_sequences, 2u);
}

TEST_P(PerArch, EvalIsDeterministicTrainingDropoutIsSeeded) {
  std::mt19937_64 rng(5);
  auto cfg = small_config(GetParam());
  cfg.dropout = 0.3;
  auto model = make_model<double>(cfg);
  const auto batch = fixtures::random_batch<double>(rng, 2, 8, 5);
  EXPECT_TRUE(bit_equal(logits_of(*model, batch), logits_of(*model, batch)));
  auto train_logits = [&](std::uint64_t seed) {
    std::mt19937_64 r(seed);
    const auto y = model->forward(batch, {true, &r});
    return std::vector<double>(y.values().begin(), y.values().end());
  };
  EXPECT_TRUE(bit_equal(train_logits(7), train_logits(7)));
  EXPECT_FALSE(bit_equal(train_logits(7), logits_of(*model, batch)));
}

INSTANTIATE_TEST_SUITE_P(Architectures, PerArch, ::testing::ValuesIn(kAllArchitectures), arch_name);

TEST(Transformer, PositionalTableAtZero) {
  const auto pe = sinusoidal_table(3, 64);
  for (std::size_t i = 0; i < 32; ++i) {
    EXPECT_EQ(pe[2 * i], 0.0);
    EXPECT_EQ(pe[2 * i + 1], 1.0);
  }
  EXPECT_NEAR(pe[64 + 0], std::sin(1.0), 1e-15);
  EXPECT_NEAR(pe[64 + 3], std::cos(1.0 / std::pow(10000.0, 2.0 / 64.0)), 1e-15);
}

TEST(Transformer, PermutationInvarianceOnlyWithoutPositions) {
  std::mt19937_64 rng(6);
  for (bool pe : {false, true}) {
    auto cfg = small_config(Architecture::transformer);
    cfg.positional_encoding = pe;
    auto model = make_model<double>(cfg);
    const auto batch = fixtures::random_batch<double>(rng, 1, 8, 5, 1.0);
    std::vector<std::size_t> perm{3, 0, 7, 1, 6, 2, 5, 4};
    std::vector<double> x(40);
    for (std::size_t t = 0; t < 8; ++t)
      for (std::size_t f = 0; f < 5; ++f) x[t * 5 + f] = batch.x.values()[perm[t] * 5 + f];
    const auto a = logits_of(*model, batch), b = logits_of(*model, with_x(batch, x));
    double diff = 0;
    for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
    if (pe) {
      EXPECT_GT(diff, 1e-6);
    } else {
      EXPECT_LT(diff, 1e-5);
    }
  }
}

TEST(Transformer, FullyMaskedInputAttendsOnlyToCls) {
  auto model = make_model<double>(small_config(Architecture::transformer));
  auto& tr = dynamic_cast<TransformerClassifier<double>&>(*model);
  Batch<double> b{Tensor<double>::zeros({1, 8, 5}), std::vector<std::uint8_t>(8, 0)};
  for (double v : logits_of(*model, b)) EXPECT_TRUE(std::isfinite(v));
  EXPECT_EQ(tr.softmax_diagnostics().fully_masked_rows, 0u);  // CLS key always visible
}

TEST(Lstm, DefaultsAndPaddedTailMatchesTruncation) {
  ModelConfig defaults;
  EXPECT_EQ(defaults.lstm_hidden, 64u);
  EXPECT_EQ(defaults.lstm_layers, 2u);
  std::mt19937_64 rng(7);
  auto model = make_model<double>(small_config(Architecture::lstm));
  const auto full = fixtures::random_batch<double>(rng, 1, 8, 5, 1.0);
  std::vector<double> head(full.x.values().begin(), full.x.values().begin() + 5 * 5);
  Batch<double> truncated{Tensor<double>::constant({1, 5, 5}, head), std::vector<std::uint8_t>(5, 1)};
  auto padded = full;
  std::fill(padded.mask.begin() + 5, padded.mask.end(), std::uint8_t{0});
  EXPECT_TRUE(bit_equal(logits_of(*model, truncated), logits_of(*model, padded)));
}

TEST(Lstm, EmptySequenceFeedsZeroStateToHead) {
  auto model = make_model<double>(small_config(Architecture::lstm));
  Batch<double> b{Tensor<double>::zeros({1, 8, 5}), std::vector<std::uint8_t>(8, 0)};
  const auto y = logits_of(*model, b);
  const Parameter<double>* bias = nullptr;
  for (const auto& p : model->parameters())
    if (p.name == "head.bias") bias = &p;
  ASSERT_NE(bias, nullptr);
  for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(y[k], bias->tensor.values()[k]);
}

TEST(Cnn1d, DefaultsAndConstantInputPoolsToConstant) {
  ModelConfig defaults;
  EXPECT_EQ(defaults.cnn_kernels, (std::vector<std::size_t>{3, 5, 7}));
  EXPECT_EQ(defaults.cnn_filters, 64u);
  EXPECT_EQ(defaults.cnn_groups, 8u);
  // Masked mean over observed steps returns the constant itself.
  std::vector<double> x(2 * 6 * 3, 0.0);
  std::vector<std::uint8_t> m{1, 0, 1, 1, 0, 1, 0, 0, 1, 0, 0, 0};
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t c = 0; c < 3; ++c) x[i * 3 + c] = m[i] ? 2.5 + static_cast<double>(c) : -99.0;
  const auto y = engine::masked_mean(Tensor<double>::constant({2, 6, 3}, x), m);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(y.values()[b * 3 + c], 2.5 + static_cast<double>(c));
}

TEST(Tcn, DefaultsAndReceptiveField) {
  ModelConfig defaults;
  EXPECT_EQ(defaults.tcn_dilations, (std::vector<std::size_t>{1, 2, 4, 8}));
  EXPECT_EQ(defaults.tcn_dropout, 0.2);
  EXPECT_EQ(defaults.tcn_receptive_field(), 61u);
  EXPECT_GE(defaults.tcn_receptive_field(), 49u);
}

TEST(Tcn, PreviousActivationsIgnoreLaterInputs) {
  std::mt19937_64 rng(8);
  auto model = make_model<double>(small_config(Architecture::tcn, 5, 16));
  auto& tcn = dynamic_cast<TcnClassifier<double>&>(*model);
  const auto batch = fixtures::random_batch<double>(rng, 1, 16, 5, 1.0);
  engine::NoGradGuard g;
  const auto h0 = tcn.encode(batch);
  const std::size_t C = h0.dim(2);
  for (std::size_t t = 0; t < 16; ++t) {
    std::vector<double> x(batch.x.values().begin(), batch.x.values().end());
    for (std::size_t f = 0; f < 5; ++f) x[t * 5 + f] += 3.0;
    const auto h1 = tcn.encode(with_x(batch, x));
    for (std::size_t s = 0; s < t * C; ++s) ASSERT_EQ(h0.values()[s], h1.values()[s]) << "t=" << t;
  }
}

TEST(Tcn, TemporalDropoutOnlyWhenTraining) {
  std::mt19937_64 rng(9);
  auto cfg = small_config(Architecture::tcn, 5, 16);
  cfg.dropout = 0.0;
  auto model = make_model<double>(cfg);
  auto& tcn = dynamic_cast<TcnClassifier<double>&>(*model);
  const auto batch = fixtures::random_batch<double>(rng, 2, 16, 5, 1.0);
  engine::NoGradGuard g;
  const auto eval1 = tcn.encode(batch), eval2 = tcn.encode(batch);
  EXPECT_TRUE(std::equal(eval1.values().begin(), eval1.values().end(), eval2.values().begin()));
  std::mt19937_64 r(1);
  const auto tr = tcn.encode(batch, {true, &r});
  EXPECT_FALSE(std::equal(eval1.values().begin(), eval1.values().end(), tr.values().begin()));
}

TEST(Checkpoint, RejectsMismatchedParameters) {
  auto model = make_model<float>(small_config(Architecture::cnn1d));
  std::stringstream s;
  save_checkpoint(s, *model);
  std::string bytes = s.str();
  bytes[0] = 'X';
  std::istringstream bad(bytes);
  EXPECT_THROW(load_checkpoint<float>(bad), SchemaError);
  std::istringstream truncated(s.str().substr(0, s.str().size() - 7));
  EXPECT_THROW(load_checkpoint<float>(truncated), SchemaError);
}

TEST(Factory, ParsesArchitectureNames) {
  EXPECT_EQ(parse_architecture("lstm"), Architecture::lstm);
  EXPECT_THROW(parse_architecture("gru"), SchemaError);
}
