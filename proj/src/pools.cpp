#include "tokenprobe/pools.hpp"

#include <cmath>

#include "tokenprobe/error.hpp"
#include "tokenprobe/log.hpp"
#include "tokenprobe/rng.hpp"

namespace tokenprobe {

PoolOptions PoolOptions::for_task(Task task, std::uint64_t seed) {
  PoolOptions o;
  o.task = task;
  o.category_restrict = task == Task::segmentation;
  o.seed = seed;
  return o;
}

ConceptMembership::ConceptMembership(const DatasetHandle& handle, LabelId concept_id, bool category_restrict)
    : handle_(&handle), concept_(concept_id), category_(handle.label(concept_id).category), restrict_(category_restrict) {}

bool ConceptMembership::is_negative(const TokenRecord& r) const {
  if (r.has_label(concept_)) return false;
  if (!restrict_) return true;
  for (LabelId id : r.labels) {
    const LabelEntry* e = handle_->find_label(id);
    if (e && e->category == category_) return true;
  }
  return false;
}

SamplePools build_pools(const DatasetHandle& handle, LabelId concept_id, const PoolOptions& options) {
  const ConceptMembership membership(handle, concept_id, options.category_restrict);
  const RecordFilter scope = RecordFilter::for_task(options.task);

  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  handle.for_each(
      scope,
      [&](const TokenRecord& r) {
        if (membership.is_positive(r)) {
          ++n_pos;
        } else if (membership.is_negative(r)) {
          ++n_neg;
        }
      },
      /*load_vectors=*/false);
  if (n_pos == 0) {
    fail(ErrorCode::empty_concept, "concept " + std::to_string(concept_id) + " has no positive " +
                                       std::string(to_string(options.task)) + " records in " +
                                       handle.path().string());
  }

  std::size_t keep = n_neg;
  if (options.cap_ratio > 0) {
    keep = std::min(n_neg, static_cast<std::size_t>(std::floor(options.cap_ratio * static_cast<double>(n_pos))));
  }
  Rng rng(options.seed);
  const std::vector<std::size_t> kept = rng.choose(n_neg, keep);

  SamplePools pools;
  pools.concept_id = concept_id;
  pools.seed = options.seed;
  pools.raw_negatives = n_neg;
  pools.positives.reserve(n_pos);
  pools.negatives.reserve(kept.size());

  std::size_t neg_index = 0;
  auto next_kept = kept.begin();
  RecordCursor cursor = handle.scan(scope);
  TokenRecord r;
  while (cursor.next(r)) {
    if (membership.is_positive(r)) {
      pools.positives.push_back({r.image_id, std::move(r.vector)});
    } else if (membership.is_negative(r)) {
      if (next_kept != kept.end() && *next_kept == neg_index) {
        pools.negatives.push_back({r.image_id, std::move(r.vector)});
        ++next_kept;
      }
      ++neg_index;
    }
  }
  return pools;
}

SamplePools rebalance(const SamplePools& pools, double neg_pos_ratio, std::uint64_t seed) {
  const auto want = static_cast<std::size_t>(std::floor(neg_pos_ratio * static_cast<double>(pools.positives.size())));
  SamplePools out;
  out.concept_id = pools.concept_id;
  out.seed = seed;
  out.raw_negatives = pools.raw_negatives;
  out.positives = pools.positives;
  if (want > pools.negatives.size()) {
    log_warning("concept " + std::to_string(pools.concept_id) + ": wanted " + std::to_string(want) +
                " negatives, only " + std::to_string(pools.negatives.size()) + " available");
  }
  Rng rng(seed);
  for (std::size_t i : rng.choose(pools.negatives.size(), want)) out.negatives.push_back(pools.negatives[i]);
  return out;
}

}  // namespace tokenprobe
