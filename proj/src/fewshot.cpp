#include "tokenprobe/fewshot.hpp"

#include <algorithm>

#include "tokenprobe/error.hpp"
#include "tokenprobe/log.hpp"

namespace tokenprobe {
namespace {

std::vector<ImageId> pick(const std::vector<ImageId>& candidates, std::size_t count, Rng& rng) {
  std::vector<ImageId> out;
  out.reserve(count);
  for (std::size_t i : rng.choose(candidates.size(), count)) out.push_back(candidates[i]);
  return out;
}

}  // namespace

ImageLabelIndex::ImageLabelIndex(const DatasetHandle& handle, Task task) : handle_(&handle), task_(task) {
  handle.for_each(
      RecordFilter::for_task(task),
      [&](const TokenRecord& r) {
        auto& labels = labels_[r.image_id];
        labels.insert(labels.end(), r.labels.begin(), r.labels.end());
      },
      /*load_vectors=*/false);
  for (auto& [_, labels] : labels_) {
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  }
}

std::vector<ImageId> ImageLabelIndex::positive_images(LabelId concept_id) const {
  std::vector<ImageId> out;
  for (const auto& [image, labels] : labels_) {
    if (std::binary_search(labels.begin(), labels.end(), concept_id)) out.push_back(image);
  }
  return out;
}

std::vector<ImageId> ImageLabelIndex::negative_images(LabelId concept_id) const {
  const Category category = handle_->label(concept_id).category;
  std::vector<ImageId> out;
  for (const auto& [image, labels] : labels_) {
    if (std::binary_search(labels.begin(), labels.end(), concept_id)) continue;
    if (task_ == Task::segmentation) {
      const bool has_map = std::any_of(labels.begin(), labels.end(), [&](LabelId id) {
        const LabelEntry* e = handle_->find_label(id);
        return e && e->category == category;
      });
      if (!has_map) continue;
    }
    out.push_back(image);
  }
  return out;
}

FewShotData::FewShotData(const DatasetHandle& train, const DatasetHandle& test, Task task)
    : train_(&train), test_(&test), task_(task), train_index_(train, task), test_index_(test, task) {
  if (train.header().dim != test.header().dim) {
    fail(ErrorCode::dimension_mismatch, "train and test files differ in D");
  }
}

SupportSample sample_support(const FewShotData& data, LabelId concept_id, int k, Rng& rng) {
  if (k < 1) fail(ErrorCode::config_error, "k must be positive");
  const auto candidates = data.train_index().positive_images(concept_id);
  if (candidates.size() < static_cast<std::size_t>(k)) {
    fail(ErrorCode::infeasible_trial, "concept " + std::to_string(concept_id) + " has " +
                                          std::to_string(candidates.size()) + " train images, k = " +
                                          std::to_string(k));
  }
  SupportSample s;
  s.images = pick(candidates, static_cast<std::size_t>(k), rng);
  s.pools.concept_id = concept_id;

  RecordFilter filter = RecordFilter::for_task(data.task());
  filter.images = s.images;
  data.train().for_each(filter, [&](const TokenRecord& r) {
    if (r.has_label(concept_id)) {
      s.pools.positives.push_back({r.image_id, r.vector});
    } else if (data.task() == Task::segmentation) {
      s.pools.negatives.push_back({r.image_id, r.vector});
    }
  });
  s.pools.raw_negatives = s.pools.negatives.size();
  return s;
}

QuerySample sample_query(const FewShotData& data, LabelId concept_id, Rng& rng, std::size_t positives,
                         std::size_t negatives) {
  const auto pos = data.test_index().positive_images(concept_id);
  const auto neg = data.test_index().negative_images(concept_id);
  if (pos.size() < positives || neg.size() < negatives) {
    fail(ErrorCode::infeasible_trial, "concept " + std::to_string(concept_id) + " has " + std::to_string(pos.size()) +
                                          " positive / " + std::to_string(neg.size()) +
                                          " negative test images, need " + std::to_string(positives) + " / " +
                                          std::to_string(negatives));
  }
  QuerySample q;
  q.positive_images = pick(pos, positives, rng);
  q.negative_images = pick(neg, negatives, rng);

  RecordFilter filter = RecordFilter::for_task(data.task());
  filter.images = q.positive_images;
  filter.images->insert(filter.images->end(), q.negative_images.begin(), q.negative_images.end());
  data.test().for_each(filter, [&](const TokenRecord& r) {
    q.objects.push_back(r.vector);
    q.truth.push_back(r.has_label(concept_id));
  });
  return q;
}

std::uint64_t trial_seed(std::uint64_t master_seed, LabelId concept_id, int k, int trial) {
  return derive_seed({master_seed, concept_id, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(trial)});
}

TrialRun run_trials(const FewShotData& data, LabelId concept_id, int k, int n_trials, std::uint64_t master_seed) {
  if (n_trials < 1) fail(ErrorCode::config_error, "need at least one trial");
  TrialRun run;
  std::vector<BalancedMetrics> ok;
  for (int trial = 0; trial < n_trials; ++trial) {
    TrialResult result;
    result.trial = trial;
    result.seed = trial_seed(master_seed, concept_id, k, trial);
    try {
      Rng support_rng(derive_seed({result.seed, 1}));
      Rng query_rng(derive_seed({result.seed, 2}));
      SupportSample support = sample_support(data, concept_id, k, support_rng);
      QuerySample query = sample_query(data, concept_id, query_rng);
      result.split = {support.images, query.positive_images, query.negative_images};

      for (ImageId id : support.images) {
        if (std::find(query.positive_images.begin(), query.positive_images.end(), id) != query.positive_images.end() ||
            std::find(query.negative_images.begin(), query.negative_images.end(), id) != query.negative_images.end()) {
          fail(ErrorCode::manifest_inconsistent,
               "image_id " + std::to_string(id) + " is in both the support and the query set");
        }
      }

      ConceptTemplate tmpl = fit_cosine(support.pools);
      tmpl.metadata.seed = result.seed;
      tmpl.metadata.k = k;
      tmpl.metadata.trial = trial;
      std::vector<bool> predictions;
      predictions.reserve(query.objects.size());
      for (const auto& z : query.objects) predictions.push_back(classify(tmpl, z));
      result.metrics = balanced_metrics(confusion(predictions, query.truth));
      result.tmpl = std::move(tmpl);
      ok.push_back(*result.metrics);
    } catch (const ProbeError& e) {
      if (e.code() == ErrorCode::manifest_inconsistent) throw;
      result.skipped = e.what();
      ++run.infeasible;
    }
    run.trials.push_back(std::move(result));
  }
  if (ok.empty()) {
    fail(ErrorCode::infeasible_trial, "concept " + std::to_string(concept_id) + ", k = " + std::to_string(k) +
                                          ": all " + std::to_string(n_trials) + " trials infeasible (" +
                                          run.trials.front().skipped + ")");
  }
  run.summary = summarize_trials(ok);
  return run;
}

const SweepCell* SweepTable::find(LabelId concept_id, int k) const {
  for (const auto& c : cells) {
    if (c.concept_id == concept_id && c.k == k) return &c;
  }
  return nullptr;
}

SweepTable k_sweep(const FewShotData& data, const std::vector<LabelId>& concepts, const std::vector<int>& k_list,
                   int n_trials, std::uint64_t master_seed) {
  SweepTable table;
  for (LabelId concept_id : concepts) {
    for (int k : k_list) {
      SweepCell cell;
      cell.concept_id = concept_id;
      cell.k = k;
      try {
        cell.run = run_trials(data, concept_id, k, n_trials, master_seed);
      } catch (const ProbeError& e) {
        if (e.code() == ErrorCode::manifest_inconsistent) throw;
        cell.skipped = e.what();
        log_warning(cell.skipped);
      }
      table.cells.push_back(std::move(cell));
    }
  }
  return table;
}

}  // namespace tokenprobe
