#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tokenprobe/pools.hpp"
#include "tokenprobe/types.hpp"

namespace tokenprobe {

struct TemplateMetadata {
  std::uint64_t seed = 0;
  // hyperplane
  int rounds = 0;
  int epochs = 0;
  // cosine
  int k = 0;
  int trial = -1;

  bool operator==(const TemplateMetadata&) const = default;
};

// A concept template: z is positive iff project(z) >= threshold.
//   hyperplane: project = direction . z, threshold is the hyperplane offset
//   cosine:     project = cos(direction, z), threshold = cos(theta)
struct ConceptTemplate {
  LabelId concept_id = 0;
  DecisionRule rule = DecisionRule::hyperplane;
  Vector direction;
  double threshold = 0.0;
  TemplateMetadata metadata;

  bool operator==(const ConceptTemplate&) const = default;
};

double project(const ConceptTemplate& tmpl, std::span<const float> z);
bool classify(const ConceptTemplate& tmpl, std::span<const float> z);

struct TrainConfig {
  int mining_rounds = 5;
  int epochs_per_round = 3;
  double neg_pos_ratio = 2.0;
  double learning_rate = 0.01;
  int batch_size = 64;
  std::uint64_t seed = 0;
  // Per-dimension standardization during training, folded back into the
  // returned (w, b). Off by default: the probe sees raw tokens.
  bool standardize = false;
};

struct RoundTrace {
  int round = 0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  // Mean logistic loss on the round's set: before the first epoch, then after
  // each epoch.
  std::vector<double> losses;
  bool loss_increased = false;
  ConceptTemplate snapshot;
};

struct HyperplaneTrace {
  std::vector<RoundTrace> rounds;
};

// Logistic-regression probe with hard negative mining. Round 0 draws
// negatives uniformly at neg_pos_ratio; later rounds take the highest-scoring
// negatives of the pool under the current template. Weights carry over
// between rounds.
ConceptTemplate fit_hyperplane(const SamplePools& pools, const TrainConfig& config,
                               HyperplaneTrace* trace = nullptr);

// Indices of the `count` negatives with the largest project() score, sorted by
// score descending, ties by index ascending.
std::vector<std::size_t> mine_hard_negatives(const ConceptTemplate& tmpl, std::span<const Sample> negatives,
                                             std::size_t count);
std::vector<std::size_t> mine_hard_negatives(const ConceptTemplate& tmpl, std::span<const Vector> negatives,
                                             std::size_t count);

struct ScoredLabel {
  double score = 0.0;
  bool positive = false;
};

struct ThresholdChoice {
  double threshold = 0.0;
  double f1 = 0.0;
};

// Maximizes F1 of (score >= t) over the distinct observed scores. Ties in F1
// go to the largest t.
ThresholdChoice search_threshold(std::span<const ScoredLabel> scores);

// Prototype template: direction is the mean positive support vector, the
// threshold maximizes F1 on the support set. Without negatives the threshold
// is the smallest positive similarity, so every support positive is accepted.
ConceptTemplate fit_cosine(const SamplePools& support);

}  // namespace tokenprobe
