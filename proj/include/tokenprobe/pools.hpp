#pragma once

#include <cstdint>
#include <vector>

#include "tokenprobe/feature_store.hpp"
#include "tokenprobe/types.hpp"

namespace tokenprobe {

struct Sample {
  ImageId image_id = 0;
  Vector vector;
};

// Positive and negative feature pools for one concept. Both lists keep file
// order.
struct SamplePools {
  LabelId concept_id = 0;
  std::vector<Sample> positives;
  std::vector<Sample> negatives;
  std::uint64_t seed = 0;
  // Size of the negative pool before any capping.
  std::size_t raw_negatives = 0;
};

struct PoolOptions {
  Task task = Task::classification;
  // Negatives must carry some label of the concept's category.
  bool category_restrict = false;
  // Upper bound on |negatives| / |positives|; <= 0 disables the cap.
  double cap_ratio = 20.0;
  std::uint64_t seed = 0;

  // Classification: CLS tokens, unrestricted negatives. Segmentation: patch
  // tokens, negatives restricted to the concept's category.
  static PoolOptions for_task(Task task, std::uint64_t seed);
};

// Decides whether a record is a positive, a negative, or neither for a
// concept. Shared by pool building, test evaluation and few-shot sampling.
class ConceptMembership {
 public:
  ConceptMembership(const DatasetHandle& handle, LabelId concept_id, bool category_restrict);

  bool is_positive(const TokenRecord& r) const { return r.has_label(concept_); }
  bool is_negative(const TokenRecord& r) const;
  Category category() const { return category_; }

 private:
  const DatasetHandle* handle_;
  LabelId concept_;
  Category category_;
  bool restrict_;
};

// Streams the dataset twice: once to count, once to materialize only the
// records that survive the cap.
SamplePools build_pools(const DatasetHandle& handle, LabelId concept_id, const PoolOptions& options);

// Keeps floor(neg_pos_ratio * |positives|) negatives drawn uniformly without
// replacement. Fewer available negatives pass through with a warning.
SamplePools rebalance(const SamplePools& pools, double neg_pos_ratio, std::uint64_t seed);

}  // namespace tokenprobe
