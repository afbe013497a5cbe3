#include "tokenprobe/pools.hpp"

#include <algorithm>
#include <set>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "tokenprobe/error.hpp"

namespace tokenprobe {
namespace {

using testing::cls_record;
using testing::patch_record;
using testing::TempDir;
using testing::WarningCapture;

constexpr LabelId kTarget = 1;
constexpr LabelId kOther = 2;

// Classification file: `pos` images of kTarget followed by `neg` of kOther,
// vector[0] holds the record index so samples can be traced back.
DatasetHandle classification_file(const TempDir& dir, std::size_t pos, std::size_t neg) {
  std::vector<TokenRecord> records;
  for (std::size_t i = 0; i < pos + neg; ++i) {
    records.push_back(cls_record(static_cast<ImageId>(i), {i < pos ? kTarget : kOther},
                                 {static_cast<float>(i), 1.0f}));
  }
  DatasetHeader h;
  h.dim = 2;
  const auto path = dir / ("c_" + std::to_string(pos) + "_" + std::to_string(neg) + ".tpf");
  write_dataset(path, h,
                {{kTarget, Category::image_class, "target"}, {kOther, Category::image_class, "other"}}, records);
  return open_dataset(path);
}

TEST(PoolsTest, CapKeepsTwentyTimesPositives) {
  TempDir dir;
  const auto h = classification_file(dir, 3, 100);
  const SamplePools p = build_pools(h, kTarget, PoolOptions::for_task(Task::classification, 9));
  EXPECT_EQ(p.positives.size(), 3u);
  EXPECT_EQ(p.raw_negatives, 100u);
  EXPECT_EQ(p.negatives.size(), 60u);
  std::set<float> seen;
  for (const auto& s : p.negatives) {
    EXPECT_GE(s.vector[0], 3.0f);  // from the raw negative pool
    EXPECT_TRUE(seen.insert(s.vector[0]).second) << "duplicate negative";
  }
  EXPECT_TRUE(std::is_sorted(p.negatives.begin(), p.negatives.end(),
                             [](const Sample& a, const Sample& b) { return a.vector[0] < b.vector[0]; }));
}

TEST(PoolsTest, UnderCapKeepsAll) {
  TempDir dir;
  const auto h = classification_file(dir, 5, 40);
  const SamplePools p = build_pools(h, kTarget, PoolOptions::for_task(Task::classification, 1));
  EXPECT_EQ(p.negatives.size(), 40u);
}

TEST(PoolsTest, ZeroPositivesIsEmptyConcept) {
  TempDir dir;
  const auto h = classification_file(dir, 0, 5);
  try {
    build_pools(h, kTarget, PoolOptions::for_task(Task::classification, 1));
    FAIL();
  } catch (const ProbeError& e) {
    EXPECT_EQ(e.code(), ErrorCode::empty_concept);
  }
}

TEST(PoolsTest, SeedDeterminism) {
  TempDir dir;
  const auto h = classification_file(dir, 4, 300);
  const auto opts = PoolOptions::for_task(Task::classification, 77);
  const SamplePools a = build_pools(h, kTarget, opts);
  const SamplePools b = build_pools(h, kTarget, opts);
  ASSERT_EQ(a.negatives.size(), b.negatives.size());
  for (std::size_t i = 0; i < a.negatives.size(); ++i) EXPECT_EQ(a.negatives[i].vector, b.negatives[i].vector);
}

TEST(PoolsTest, CategoryRestrictionDropsOtherCategories) {
  TempDir dir;
  constexpr LabelId kWheel = 10;   // part
  constexpr LabelId kDoor = 11;    // part
  constexpr LabelId kStripe = 20;  // texture
  const std::vector<LabelEntry> labels = {
      {kWheel, Category::part, "wheel"}, {kDoor, Category::part, "door"}, {kStripe, Category::texture, "striped"}};
  std::vector<TokenRecord> records;
  Rng rng(3);
  for (std::uint16_t i = 0; i < 200; ++i) {
    std::vector<LabelId> l;
    const auto pick = rng.uniform_index(4);
    if (pick == 0) l = {kWheel};
    if (pick == 1) l = {kDoor};
    if (pick == 2) l = {kStripe};
    if (pick == 3 && rng.uniform01() < 0.5) l = {kDoor, kStripe};
    records.push_back(patch_record(i / 10, i % 10, 0, l, {static_cast<float>(i)}));
  }
  DatasetHeader h;
  h.dim = 1;
  write_dataset(dir / "seg.tpf", h, labels, records);
  const auto handle = open_dataset(dir / "seg.tpf");

  const SamplePools p = build_pools(handle, kWheel, PoolOptions::for_task(Task::segmentation, 5));
  std::size_t expected_pos = 0;
  std::size_t expected_neg = 0;
  for (const auto& r : records) {
    if (r.has_label(kWheel)) {
      ++expected_pos;
    } else if (r.has_label(kDoor)) {
      ++expected_neg;
    }
  }
  EXPECT_EQ(p.positives.size(), expected_pos);
  EXPECT_EQ(p.raw_negatives, expected_neg);
  for (const auto& s : p.negatives) {
    const auto& src = records[static_cast<std::size_t>(s.vector[0])];
    EXPECT_FALSE(src.has_label(kWheel));
    EXPECT_TRUE(src.has_label(kDoor)) << "negative without a part label";
  }
  for (const auto& s : p.positives) EXPECT_TRUE(records[static_cast<std::size_t>(s.vector[0])].has_label(kWheel));
}

TEST(PoolsTest, MultilabelRecordCountsAsPositive) {
  TempDir dir;
  DatasetHeader h;
  h.dim = 1;
  write_dataset(dir / "m.tpf", h, {{1, Category::object, "a"}, {2, Category::object, "b"}},
                std::vector<TokenRecord>{patch_record(0, 0, 0, {1, 2}, {0}), patch_record(0, 0, 1, {2}, {1})});
  const auto p = build_pools(open_dataset(dir / "m.tpf"), 1, PoolOptions::for_task(Task::segmentation, 0));
  EXPECT_EQ(p.positives.size(), 1u);
  EXPECT_EQ(p.negatives.size(), 1u);
}

SamplePools pools_of(std::size_t pos, std::size_t neg) {
  SamplePools p;
  p.concept_id = 4;
  for (std::size_t i = 0; i < pos; ++i) p.positives.push_back({static_cast<ImageId>(i), {1.0f}});
  for (std::size_t i = 0; i < neg; ++i) p.negatives.push_back({static_cast<ImageId>(1000 + i), {static_cast<float>(i)}});
  return p;
}

TEST(RebalanceTest, TwoToOne) {
  const auto p = rebalance(pools_of(10, 60), 2.0, 1);
  EXPECT_EQ(p.negatives.size(), 20u);
  EXPECT_EQ(p.positives.size(), 10u);
}

TEST(RebalanceTest, InsufficientNegativesPassThroughWithWarning) {
  WarningCapture capture;
  const auto p = rebalance(pools_of(10, 15), 2.0, 1);
  EXPECT_EQ(p.negatives.size(), 15u);
  EXPECT_EQ(capture.warnings().size(), 1u);
}

TEST(RebalanceTest, EqualSeedsEqualSubsets) {
  const auto src = pools_of(7, 100);
  const auto a = rebalance(src, 2.0, 42);
  const auto b = rebalance(src, 2.0, 42);
  const auto c = rebalance(src, 2.0, 43);
  auto ids = [](const SamplePools& p) {
    std::vector<ImageId> out;
    for (const auto& s : p.negatives) out.push_back(s.image_id);
    return out;
  };
  EXPECT_EQ(ids(a), ids(b));
  EXPECT_NE(ids(a), ids(c));
  for (ImageId id : ids(a)) EXPECT_GE(id, 1000u);
}

TEST(PoolsProperty, LabelPurityAndCapOnRandomFiles) {
  TempDir dir;
  Rng rng(99);
  for (int round = 0; round < 10; ++round) {
    const std::size_t pos = 1 + rng.uniform_index(10);
    const std::size_t neg = rng.uniform_index(400);
    const auto h = classification_file(dir, pos, neg);
    const double cap = 1.0 + static_cast<double>(rng.uniform_index(30));
    PoolOptions o = PoolOptions::for_task(Task::classification, rng.next_u64());
    o.cap_ratio = cap;
    const auto p = build_pools(h, kTarget, o);
    EXPECT_EQ(p.positives.size(), pos);
    EXPECT_LE(static_cast<double>(p.negatives.size()), cap * static_cast<double>(pos));
    EXPECT_EQ(p.negatives.size(), std::min<std::size_t>(neg, static_cast<std::size_t>(cap * pos)));
    for (const auto& s : p.positives) EXPECT_LT(s.vector[0], static_cast<float>(pos));
    for (const auto& s : p.negatives) EXPECT_GE(s.vector[0], static_cast<float>(pos));
  }
}

}  // namespace
}  // namespace tokenprobe
