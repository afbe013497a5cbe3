#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "tokenprobe/feature_store.hpp"
#include "tokenprobe/types.hpp"

namespace tokenprobe {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  bool operator==(const ConfusionCounts&) const = default;
};

// Prevalence-invariant metrics built from TPR and TNR, as if both classes had
// equal mass. Undefined values stay empty; they are never reported as 0.
struct BalancedMetrics {
  std::optional<double> accuracy;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;

  bool operator==(const BalancedMetrics&) const = default;
};

enum class Metric { accuracy, precision, recall, f1 };
inline constexpr Metric kAllMetrics[] = {Metric::accuracy, Metric::precision, Metric::recall, Metric::f1};

const char* to_string(Metric m);
std::optional<double>& metric_ref(BalancedMetrics& m, Metric which);
const std::optional<double>& metric_ref(const BalancedMetrics& m, Metric which);

ConfusionCounts confusion(std::span<const bool> predictions, std::span<const bool> labels);
ConfusionCounts confusion(const std::vector<bool>& predictions, const std::vector<bool>& labels);

BalancedMetrics balanced_metrics(const ConfusionCounts& c);

struct CategoryAggregate {
  BalancedMetrics mean;
  std::size_t concepts = 0;
  // Concepts whose value for a metric was undefined and so left out of its mean.
  std::map<Metric, std::size_t> excluded;

  bool operator==(const CategoryAggregate&) const = default;
};

// Unweighted mean over the concepts of each category.
std::map<Category, CategoryAggregate> aggregate_by_category(const std::map<LabelId, BalancedMetrics>& per_concept,
                                                            const std::vector<LabelEntry>& label_table);

struct MetricSummary {
  std::optional<double> mean;
  std::optional<double> std;
  std::size_t defined = 0;

  bool operator==(const MetricSummary&) const = default;
};

struct TrialSummary {
  std::size_t n = 0;
  std::map<Metric, MetricSummary> metrics;

  BalancedMetrics means() const;
  bool operator==(const TrialSummary&) const = default;
};

// Mean and population standard deviation (divisor N) per metric; trials where
// a metric is undefined are skipped for that metric.
TrialSummary summarize_trials(std::span<const BalancedMetrics> per_trial);

}  // namespace tokenprobe
