#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tokenprobe/feature_store.hpp"
#include "tokenprobe/metrics.hpp"
#include "tokenprobe/pools.hpp"
#include "tokenprobe/rng.hpp"
#include "tokenprobe/templates.hpp"

namespace tokenprobe {

inline constexpr int kStandardShots[] = {1, 5, 10, 50, 100, 500};
inline constexpr std::size_t kQueryPositives = 50;
inline constexpr std::size_t kQueryNegatives = 50;
inline constexpr int kStandardTrials = 10;

// Image-level label index of one split, restricted to the task's records
// (CLS tokens for classification, patches for segmentation).
class ImageLabelIndex {
 public:
  ImageLabelIndex(const DatasetHandle& handle, Task task);

  // Images with at least one in-scope record carrying `concept`, ascending.
  std::vector<ImageId> positive_images(LabelId concept_id) const;
  // Images carrying no `concept` record. For segmentation the image must
  // also carry some label of the concept's category.
  std::vector<ImageId> negative_images(LabelId concept_id) const;

 private:
  const DatasetHandle* handle_;
  Task task_;
  std::map<ImageId, std::vector<LabelId>> labels_;
};

// Train (support) and test (query) splits of one (model, token type).
class FewShotData {
 public:
  FewShotData(const DatasetHandle& train, const DatasetHandle& test, Task task);

  const DatasetHandle& train() const { return *train_; }
  const DatasetHandle& test() const { return *test_; }
  Task task() const { return task_; }
  const ImageLabelIndex& train_index() const { return train_index_; }
  const ImageLabelIndex& test_index() const { return test_index_; }

 private:
  const DatasetHandle* train_;
  const DatasetHandle* test_;
  Task task_;
  ImageLabelIndex train_index_;
  ImageLabelIndex test_index_;
};

struct SupportSample {
  std::vector<ImageId> images;
  SamplePools pools;
};

// k distinct train images containing the concept. Classification yields their
// CLS tokens and no negatives; segmentation yields their c-patches as
// positives and every other patch of those images as negatives.
SupportSample sample_support(const FewShotData& data, LabelId concept_id, int k, Rng& rng);

struct QuerySample {
  std::vector<ImageId> positive_images;
  std::vector<ImageId> negative_images;
  // Evaluation objects (CLS tokens or all patches of the chosen images) with
  // their ground truth.
  std::vector<Vector> objects;
  std::vector<bool> truth;
};

QuerySample sample_query(const FewShotData& data, LabelId concept_id, Rng& rng,
                         std::size_t positives = kQueryPositives, std::size_t negatives = kQueryNegatives);

struct SupportQuerySplit {
  std::vector<ImageId> support;
  std::vector<ImageId> query_positive;
  std::vector<ImageId> query_negative;
};

struct TrialResult {
  int trial = 0;
  std::uint64_t seed = 0;
  SupportQuerySplit split;
  std::optional<BalancedMetrics> metrics;
  std::optional<ConceptTemplate> tmpl;
  std::string skipped;  // reason when metrics is empty
};

struct TrialRun {
  TrialSummary summary;
  std::vector<TrialResult> trials;
  std::size_t infeasible = 0;
};

std::uint64_t trial_seed(std::uint64_t master_seed, LabelId concept_id, int k, int trial);

// N independent support/query trials; infeasible trials are recorded and
// skipped. Throws ErrorCode::infeasible_trial when every trial is infeasible.
TrialRun run_trials(const FewShotData& data, LabelId concept_id, int k, int n_trials, std::uint64_t master_seed);

struct SweepCell {
  LabelId concept_id = 0;
  int k = 0;
  std::optional<TrialRun> run;
  std::string skipped;
};

// concept-major grid over k_list; infeasible cells keep `skipped` set.
struct SweepTable {
  std::vector<SweepCell> cells;

  const SweepCell* find(LabelId concept_id, int k) const;
};

SweepTable k_sweep(const FewShotData& data, const std::vector<LabelId>& concepts, const std::vector<int>& k_list,
                   int n_trials, std::uint64_t master_seed);

}  // namespace tokenprobe
