#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "wildtraj/core/error.hpp"
#include "wildtraj/core/text.hpp"
#include "wildtraj/train.hpp"

namespace wildtraj {

// Rows are true classes, columns predictions.
struct ConfusionMatrix {
  std::size_t classes = 2;
  std::vector<std::size_t> counts;

  explicit ConfusionMatrix(std::size_t k = 2) : classes(k), counts(k * k, 0) {}

  std::size_t& at(std::size_t truth, std::size_t pred) { return counts.at(truth * classes + pred); }
  std::size_t at(std::size_t truth, std::size_t pred) const { return counts.at(truth * classes + pred); }

  std::size_t total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

  std::size_t support(std::size_t truth) const {
    std::size_t s = 0;
    for (std::size_t p = 0; p < classes; ++p) s += at(truth, p);
    return s;
  }

  void add(std::size_t truth, std::size_t pred) { ++at(truth, pred); }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    if (o.classes != classes) throw ProgrammingError("confusion matrix: class count mismatch");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
    return *this;
  }

  bool operator==(const ConfusionMatrix&) const = default;
};

// Mean recall over classes with non-zero support. Classes without support
// are appended to `zero_support` when given.
inline double balanced_accuracy(const ConfusionMatrix& cm, std::vector<std::size_t>* zero_support = nullptr) {
  double sum = 0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < cm.classes; ++c) {
    const std::size_t n = cm.support(c);
    if (n == 0) {
      if (zero_support) zero_support->push_back(c);
      continue;
    }
    sum += static_cast<double>(cm.at(c, c)) / static_cast<double>(n);
    ++counted;
  }
  if (counted == 0) throw Error("balanced accuracy: confusion matrix is empty");
  return sum / static_cast<double>(counted);
}

// Binary F1 of `positive`; 0 when precision + recall = 0.
inline double f1_positive(const ConfusionMatrix& cm, std::size_t positive = 1) {
  const double tp = static_cast<double>(cm.at(positive, positive));
  double fp = 0, fn = 0;
  for (std::size_t c = 0; c < cm.classes; ++c) {
    if (c == positive) continue;
    fp += static_cast<double>(cm.at(c, positive));
    fn += static_cast<double>(cm.at(positive, c));
  }
  if (tp == 0) return 0.0;
  const double p = tp / (tp + fp);
  const double r = tp / (tp + fn);
  return 2 * p * r / (p + r);
}

// Mann-Whitney AUC with ties counted 1/2, from tie-averaged ranks. Ranks are
// kept doubled so the statistic is an exact integer. Absent when only one
// class is present.
inline std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ProgrammingError("roc_auc: size mismatch");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::uint64_t n_pos = 0, n_neg = 0, rank2_pos = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    // 1-based ranks i+1..j average to (i+1+j)/2; doubled: i+1+j.
    const std::uint64_t r2 = i + 1 + j;
    for (std::size_t k = i; k < j; ++k) {
      if (labels[idx[k]] == 1) {
        ++n_pos;
        rank2_pos += r2;
      } else {
        ++n_neg;
      }
    }
    i = j;
  }
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const std::uint64_t u2 = rank2_pos - n_pos * (n_pos + 1);
  return static_cast<double>(u2) / static_cast<double>(2 * n_pos * n_neg);
}

struct Metrics {
  std::size_t n = 0;
  ConfusionMatrix cm;
  double balanced_acc = 0;
  std::vector<std::size_t> zero_support;
  double f1 = 0;
  std::optional<double> auc;  // absent for single-class truth
};

inline Metrics compute_metrics(const ConfusionMatrix& cm, std::span<const double> scores, std::span<const int> labels) {
  Metrics m;
  m.n = cm.total();
  m.cm = cm;
  m.balanced_acc = balanced_accuracy(cm, &m.zero_support);
  m.f1 = f1_positive(cm);
  m.auc = roc_auc(scores, labels);
  return m;
}

struct Prediction {
  int label = 0;
  int predicted = 0;
  double score = 0;  // softmax probability of class 1
  std::string study;
};

struct MetricsReport {
  Metrics overall;
  std::map<std::string, Metrics> per_study;
  std::uint64_t config_fingerprint = 0;
  std::uint64_t seed = 0;
};

inline MetricsReport summarize(std::span<const Prediction> preds, std::size_t num_classes = 2) {
  if (preds.empty()) throw Error("evaluate: empty test set");
  struct Acc {
    ConfusionMatrix cm;
    std::vector<double> scores;
    std::vector<int> labels;
  };
  Acc all{ConfusionMatrix(num_classes), {}, {}};
  std::map<std::string, Acc> studies;
  for (const auto& p : preds) {
    auto [it, inserted] = studies.try_emplace(p.study, Acc{ConfusionMatrix(num_classes), {}, {}});
    for (Acc* a : {&all, &it->second}) {
      a->cm.add(static_cast<std::size_t>(p.label), static_cast<std::size_t>(p.predicted));
      a->scores.push_back(p.score);
      a->labels.push_back(p.label);
    }
  }
  MetricsReport r;
  r.overall = compute_metrics(all.cm, all.scores, all.labels);
  for (const auto& [study, a] : studies) r.per_study.emplace(study, compute_metrics(a.cm, a.scores, a.labels));
  return r;
}

// Argmax predictions and positive-class softmax scores for every day.
template <class S>
std::vector<Prediction> predict(models::SequenceModel<S>& model, const LabeledSet& set, std::size_t batch_size = 256) {
  engine::NoGradGuard guard;
  std::vector<Prediction> out;
  const std::size_t K = model.config().num_classes;
  for (std::size_t start = 0; start < set.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, set.size() - start);
    const auto batch = models::make_batch<S>(std::span<const FeatureTensor* const>(set.days).subspan(start, n));
    const auto logits = model.forward(batch);
    const auto z = logits.values();
    for (std::size_t i = 0; i < n; ++i) {
      const S* row = z.data() + i * K;
      const std::size_t arg = static_cast<std::size_t>(std::max_element(row, row + K) - row);
      const double mx = static_cast<double>(row[arg]);
      double denom = 0;
      for (std::size_t k = 0; k < K; ++k) denom += std::exp(static_cast<double>(row[k]) - mx);
      Prediction p;
      p.label = set.labels[start + i];
      p.predicted = static_cast<int>(arg);
      p.score = std::exp(static_cast<double>(row[1]) - mx) / denom;
      p.study = set.days[start + i]->study_id;
      out.push_back(std::move(p));
    }
  }
  return out;
}

template <class S>
MetricsReport evaluate(models::SequenceModel<S>& model, const LabeledSet& test) {
  if (test.size() == 0) throw Error("evaluate: empty test set");
  const auto preds = predict(model, test);
  return summarize(preds, model.config().num_classes);
}

namespace detail {

inline std::string metric(const std::optional<double>& v) { return v ? format_fixed(*v, 4) : "NA"; }

inline std::string cm_text(const ConfusionMatrix& cm) {
  std::string s;
  for (std::size_t t = 0; t < cm.classes; ++t) {
    if (t) s += ';';
    for (std::size_t p = 0; p < cm.classes; ++p) s += (p ? " " : "") + std::to_string(cm.at(t, p));
  }
  return s;
}

}  // namespace detail

// key=value report. The metric keys are exactly balanced_acc, f1, auc, cm
// and per_study; provenance and flags ride on comment lines.
inline void write_report(std::ostream& out, const MetricsReport& r) {
  out << "# config_fingerprint=" << std::hex << r.config_fingerprint << std::dec << '\n';
  out << "# seed=" << r.seed << '\n';
  out << "# n=" << r.overall.n << '\n';
  if (!r.overall.auc) out << "# auc undefined: test labels contain a single class\n";
  for (auto c : r.overall.zero_support) out << "# class " << c << " has no test support; excluded from balanced_acc\n";
  out << "balanced_acc=" << format_fixed(r.overall.balanced_acc, 4) << '\n';
  out << "f1=" << format_fixed(r.overall.f1, 4) << '\n';
  out << "auc=" << detail::metric(r.overall.auc) << '\n';
  out << "cm=" << detail::cm_text(r.overall.cm) << '\n';
  out << "per_study=";
  bool first = true;
  for (const auto& [study, m] : r.per_study) {
    out << (first ? "" : ";") << study << ":n=" << m.n << ",balanced_acc=" << format_fixed(m.balanced_acc, 4)
        << ",f1=" << format_fixed(m.f1, 4) << ",auc=" << detail::metric(m.auc);
    first = false;
  }
  out << '\n';
}

inline void write_confusion_csv(std::ostream& out, const ConfusionMatrix& cm) {
  out << "true";
  for (std::size_t p = 0; p < cm.classes; ++p) out << ",pred_" << p;
  out << '\n';
  for (std::size_t t = 0; t < cm.classes; ++t) {
    out << t;
    for (std::size_t p = 0; p < cm.classes; ++p) out << ',' << cm.at(t, p);
    out << '\n';
  }
}

inline void write_per_study_csv(std::ostream& out, const MetricsReport& r) {
  out << "study_id,n,balanced_acc,f1,auc";
  const std::size_t K = r.overall.cm.classes;
  for (std::size_t t = 0; t < K; ++t)
    for (std::size_t p = 0; p < K; ++p) out << ",cm_" << t << p;
  out << '\n';
  for (const auto& [study, m] : r.per_study) {
    out << csv_escape(study) << ',' << m.n << ',' << format_fixed(m.balanced_acc, 4) << ',' << format_fixed(m.f1, 4)
        << ',' << detail::metric(m.auc);
    for (auto c : m.cm.counts) out << ',' << c;
    out << '\n';
  }
}

}  // namespace wildtraj
