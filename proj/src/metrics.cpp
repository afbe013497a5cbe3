#include "tokenprobe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "tokenprobe/error.hpp"

namespace tokenprobe {

const char* to_string(Metric m) {
  switch (m) {
    case Metric::accuracy: return "accuracy";
    case Metric::precision: return "precision";
    case Metric::recall: return "recall";
    case Metric::f1: return "f1";
  }
  return "?";
}

std::optional<double>& metric_ref(BalancedMetrics& m, Metric which) {
  switch (which) {
    case Metric::accuracy: return m.accuracy;
    case Metric::precision: return m.precision;
    case Metric::recall: return m.recall;
    case Metric::f1: break;
  }
  return m.f1;
}

const std::optional<double>& metric_ref(const BalancedMetrics& m, Metric which) {
  return metric_ref(const_cast<BalancedMetrics&>(m), which);
}

ConfusionCounts confusion(std::span<const bool> predictions, std::span<const bool> labels) {
  if (predictions.size() != labels.size()) {
    fail(ErrorCode::length_mismatch, std::to_string(predictions.size()) + " predictions vs " +
                                         std::to_string(labels.size()) + " labels");
  }
  if (predictions.empty()) fail(ErrorCode::length_mismatch, "empty prediction list");
  ConfusionCounts c;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (labels[i]) {
      predictions[i] ? ++c.tp : ++c.fn;
    } else {
      predictions[i] ? ++c.fp : ++c.tn;
    }
  }
  return c;
}

ConfusionCounts confusion(const std::vector<bool>& predictions, const std::vector<bool>& labels) {
  // std::vector<bool> is bit-packed, so copy into contiguous storage first
  auto p = std::make_unique<bool[]>(predictions.size());
  auto l = std::make_unique<bool[]>(labels.size());
  std::copy(predictions.begin(), predictions.end(), p.get());
  std::copy(labels.begin(), labels.end(), l.get());
  return confusion(std::span<const bool>(p.get(), predictions.size()), std::span<const bool>(l.get(), labels.size()));
}

BalancedMetrics balanced_metrics(const ConfusionCounts& c) {
  const std::uint64_t pos = c.tp + c.fn;
  const std::uint64_t neg = c.fp + c.tn;
  if (pos == 0 || neg == 0) {
    fail(ErrorCode::class_absent, pos == 0 ? "no positive samples evaluated" : "no negative samples evaluated");
  }
  const double tpr = static_cast<double>(c.tp) / static_cast<double>(pos);
  const double tnr = static_cast<double>(c.tn) / static_cast<double>(neg);
  const double fpr = static_cast<double>(c.fp) / static_cast<double>(neg);

  BalancedMetrics m;
  m.accuracy = (tpr + tnr) / 2.0;
  m.recall = tpr;
  if (tpr + fpr > 0) {
    m.precision = tpr / (tpr + fpr);
    const double p = *m.precision;
    m.f1 = p + tpr > 0 ? 2.0 * p * tpr / (p + tpr) : 0.0;
  }
  return m;
}

std::map<Category, CategoryAggregate> aggregate_by_category(const std::map<LabelId, BalancedMetrics>& per_concept,
                                                            const std::vector<LabelEntry>& label_table) {
  std::map<LabelId, Category> category_of;
  for (const auto& l : label_table) category_of.emplace(l.label_id, l.category);

  struct Acc {
    std::map<Metric, double> sum;
    std::map<Metric, std::size_t> count;
    CategoryAggregate out;
  };
  std::map<Category, Acc> acc;
  for (const auto& [concept_id, metrics] : per_concept) {
    auto it = category_of.find(concept_id);
    if (it == category_of.end()) fail(ErrorCode::unknown_label, "concept " + std::to_string(concept_id) + " not in label table");
    auto& a = acc[it->second];
    ++a.out.concepts;
    for (Metric m : kAllMetrics) {
      const auto& v = metric_ref(metrics, m);
      if (v) {
        a.sum[m] += *v;
        ++a.count[m];
      } else {
        ++a.out.excluded[m];
      }
    }
  }

  std::map<Category, CategoryAggregate> result;
  for (auto& [category, a] : acc) {
    for (Metric m : kAllMetrics) {
      if (a.count[m] > 0) metric_ref(a.out.mean, m) = a.sum[m] / static_cast<double>(a.count[m]);
    }
    result.emplace(category, std::move(a.out));
  }
  return result;
}

BalancedMetrics TrialSummary::means() const {
  BalancedMetrics b;
  for (const auto& [m, s] : metrics) metric_ref(b, m) = s.mean;
  return b;
}

TrialSummary summarize_trials(std::span<const BalancedMetrics> per_trial) {
  TrialSummary summary;
  summary.n = per_trial.size();
  for (Metric m : kAllMetrics) {
    MetricSummary ms;
    double sum = 0.0;
    for (const auto& t : per_trial) {
      if (const auto& v = metric_ref(t, m)) {
        sum += *v;
        ++ms.defined;
      }
    }
    if (ms.defined > 0) {
      const double mean = sum / static_cast<double>(ms.defined);
      double ss = 0.0;
      for (const auto& t : per_trial) {
        if (const auto& v = metric_ref(t, m)) ss += (*v - mean) * (*v - mean);
      }
      ms.mean = mean;
      ms.std = std::sqrt(ss / static_cast<double>(ms.defined));
    }
    summary.metrics[m] = ms;
  }
  return summary;
}

}  // namespace tokenprobe
