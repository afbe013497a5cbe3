#include "tokenprobe/fewshot.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "tokenprobe/error.hpp"
#include "tokenprobe/manifest.hpp"
#include "tokenprobe/synthetic.hpp"

namespace tokenprobe {
namespace {

using testing::cls_record;
using testing::patch_record;
using testing::TempDir;

constexpr LabelId kCat = 1;
constexpr LabelId kDog = 2;
constexpr LabelId kRoad = 3;
constexpr LabelId kSkyLabel = 4;
constexpr LabelId kStripe = 5;

DatasetHeader header(Split split, std::uint32_t dim) {
  DatasetHeader h;
  h.dim = dim;
  h.token_type = TokenType::x2;
  h.split = split;
  h.model_tag = "toy";
  return h;
}

const std::vector<LabelEntry> kLabels = {{kCat, Category::image_class, "cat"},
                                         {kDog, Category::image_class, "dog"},
                                         {kRoad, Category::object, "road"},
                                         {kSkyLabel, Category::object, "sky"},
                                         {kStripe, Category::texture, "stripe"}};

// `cats` cat images then `dogs` dog images, one CLS record each.
DatasetHandle classification_split(const std::filesystem::path& path, Split split, ImageId first, std::size_t cats,
                                   std::size_t dogs) {
  std::vector<TokenRecord> records;
  ImageId id = first;
  for (std::size_t i = 0; i < cats; ++i) records.push_back(cls_record(id++, {kCat}, {1.0f, 0.1f * float(i % 3)}));
  for (std::size_t i = 0; i < dogs; ++i) records.push_back(cls_record(id++, {kDog}, {-1.0f, 0.1f * float(i % 3)}));
  write_dataset(path, header(split, 2), kLabels, records);
  return open_dataset(path);
}

std::string fingerprint(const TrialRun& run) {
  std::ostringstream out;
  char buf[64];
  for (const auto& t : run.trials) {
    out << t.trial << ' ' << t.seed << ' ' << t.skipped << '|';
    for (auto id : t.split.support) out << id << ',';
    for (auto id : t.split.query_positive) out << id << ',';
    for (auto id : t.split.query_negative) out << id << ',';
    if (t.metrics) {
      for (Metric m : kAllMetrics) {
        const auto& v = metric_ref(*t.metrics, m);
        std::snprintf(buf, sizeof buf, "%a;", v ? *v : -1.0);
        out << buf;
      }
    }
    if (t.tmpl) {
      std::snprintf(buf, sizeof buf, "%a;", t.tmpl->threshold);
      out << buf;
      for (float x : t.tmpl->direction) {
        std::snprintf(buf, sizeof buf, "%a,", x);
        out << buf;
      }
    }
    out << '\n';
  }
  return out.str();
}

std::string fingerprint(const SweepTable& table) {
  std::ostringstream out;
  for (const auto& c : table.cells) {
    out << c.concept_id << ' ' << c.k << ' ' << c.skipped << '\n';
    if (c.run) out << fingerprint(*c.run);
  }
  return out.str();
}

TEST(SupportTest, ClassificationTakesClsTokensOnly) {
  TempDir dir;
  auto train = classification_split(dir / "train.tpf", Split::train, 0, 10, 10);
  auto test = classification_split(dir / "test.tpf", Split::test, 1000, 60, 60);
  FewShotData data(train, test, Task::classification);
  Rng rng(1);
  const auto s = sample_support(data, kCat, 5, rng);
  ASSERT_EQ(s.images.size(), 5u);
  EXPECT_EQ(std::set<ImageId>(s.images.begin(), s.images.end()).size(), 5u);
  for (ImageId id : s.images) EXPECT_LT(id, 10u);  // cat images
  EXPECT_EQ(s.pools.positives.size(), 5u);
  EXPECT_TRUE(s.pools.negatives.empty());
}

TEST(SupportTest, SegmentationSplitsPatchesOfSupportImage) {
  TempDir dir;
  std::vector<TokenRecord> train;
  std::vector<TokenRecord> test;
  // train image 0: 10 road patches out of 196; image 1 has no road
  for (ImageId image : {0u, 1u}) {
    train.push_back(cls_record(image, {}, {0, 0}));
    for (std::uint16_t i = 0; i < 196; ++i) {
      const bool road = image == 0 && i < 10;
      train.push_back(patch_record(image, i / 14, i % 14, road ? std::vector<LabelId>{kRoad} : std::vector<LabelId>{kSkyLabel},
                                   road ? Vector{1, 0} : Vector{0, 1}));
    }
  }
  test.push_back(patch_record(500, 0, 0, {kRoad}, {1, 0}));
  write_dataset(dir / "train.tpf", header(Split::train, 2), kLabels, train);
  write_dataset(dir / "test.tpf", header(Split::test, 2), kLabels, test);
  auto tr = open_dataset(dir / "train.tpf");
  auto te = open_dataset(dir / "test.tpf");
  FewShotData data(tr, te, Task::segmentation);
  Rng rng(2);
  const auto s = sample_support(data, kRoad, 1, rng);
  EXPECT_EQ(s.images, std::vector<ImageId>{0});
  EXPECT_EQ(s.pools.positives.size(), 10u);
  EXPECT_EQ(s.pools.negatives.size(), 186u);
}

TEST(SupportTest, NotEnoughImagesIsInfeasible) {
  TempDir dir;
  auto train = classification_split(dir / "train.tpf", Split::train, 0, 3, 3);
  auto test = classification_split(dir / "test.tpf", Split::test, 1000, 60, 60);
  FewShotData data(train, test, Task::classification);
  Rng rng(3);
  try {
    sample_support(data, kCat, 4, rng);
    FAIL();
  } catch (const ProbeError& e) {
    EXPECT_EQ(e.code(), ErrorCode::infeasible_trial);
  }
}

TEST(QueryTest, FiftyFiftyAndDisjointFromSupport) {
  TempDir dir;
  auto train = classification_split(dir / "train.tpf", Split::train, 0, 10, 10);
  auto test = classification_split(dir / "test.tpf", Split::test, 1000, 60, 70);
  FewShotData data(train, test, Task::classification);
  Rng rng(4);
  const auto q = sample_query(data, kCat, rng);
  EXPECT_EQ(q.positive_images.size(), 50u);
  EXPECT_EQ(q.negative_images.size(), 50u);
  EXPECT_EQ(q.objects.size(), 100u);
  EXPECT_EQ(std::count(q.truth.begin(), q.truth.end(), true), 50);
}

TEST(QueryTest, FortyNinePositivesIsInfeasible) {
  TempDir dir;
  auto train = classification_split(dir / "train.tpf", Split::train, 0, 10, 10);
  auto test = classification_split(dir / "test.tpf", Split::test, 1000, 49, 80);
  FewShotData data(train, test, Task::classification);
  testing::WarningCapture capture;
  try {
    run_trials(data, kCat, 5, 3, 0);
    FAIL();
  } catch (const ProbeError& e) {
    EXPECT_EQ(e.code(), ErrorCode::infeasible_trial);
  }
  const auto sweep = k_sweep(data, {kCat, kDog}, {1, 5}, 2, 0);
  EXPECT_FALSE(sweep.find(kCat, 1)->run.has_value());
  EXPECT_FALSE(sweep.find(kCat, 1)->skipped.empty());
  // the 49 cat images are also too few negatives for dog
  EXPECT_FALSE(sweep.find(kDog, 5)->run.has_value());
  EXPECT_EQ(sweep.cells.size(), 4u);
}

TEST(QueryTest, SegmentationNegativesShareCategory) {
  TempDir dir;
  std::vector<TokenRecord> test;
  // 0..49 road images; 100..149 sky only (object category); 200..249 stripe only (texture)
  for (ImageId i = 0; i < 50; ++i) test.push_back(patch_record(i, 0, 0, {kRoad}, {1, 0}));
  for (ImageId i = 100; i < 150; ++i) test.push_back(patch_record(i, 0, 0, {kSkyLabel}, {0, 1}));
  for (ImageId i = 200; i < 250; ++i) test.push_back(patch_record(i, 0, 0, {kStripe}, {0, 1}));
  write_dataset(dir / "test.tpf", header(Split::test, 2), kLabels, test);
  write_dataset(dir / "train.tpf", header(Split::train, 2), kLabels,
                std::vector<TokenRecord>{patch_record(900, 0, 0, {kRoad}, {1, 0})});
  auto tr = open_dataset(dir / "train.tpf");
  auto te = open_dataset(dir / "test.tpf");
  FewShotData data(tr, te, Task::segmentation);
  const auto negs = data.test_index().negative_images(kRoad);
  ASSERT_EQ(negs.size(), 50u);
  for (ImageId id : negs) EXPECT_TRUE(id >= 100 && id < 150);
}

class SyntheticFewShot : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("fewshot");
    synthetic::ClusterOptions o;
    o.train_per_class = 600;
    o.seed = 17;
    const auto manifest = load_manifest(synthetic::write_cluster_classification(dir_->path(), o));
    train_ = new DatasetHandle(open_dataset(manifest.resolve(manifest.files.at(0))));
    test_ = new DatasetHandle(open_dataset(manifest.resolve(manifest.files.at(1))));
    if (train_->header().split != Split::train) std::swap(train_, test_);
  }
  static void TearDownTestSuite() {
    delete train_;
    delete test_;
    delete dir_;
  }
  static FewShotData data() { return FewShotData(*train_, *test_, Task::classification); }

  static TempDir* dir_;
  static DatasetHandle* train_;
  static DatasetHandle* test_;
};

TempDir* SyntheticFewShot::dir_ = nullptr;
DatasetHandle* SyntheticFewShot::train_ = nullptr;
DatasetHandle* SyntheticFewShot::test_ = nullptr;

TEST_F(SyntheticFewShot, SupportAndQueryNeverOverlap) {
  const auto d = data();
  const auto run = run_trials(d, synthetic::kClassA, 5, 100, 99);
  ASSERT_EQ(run.trials.size(), 100u);
  EXPECT_EQ(run.infeasible, 0u);
  for (const auto& t : run.trials) {
    std::set<ImageId> support(t.split.support.begin(), t.split.support.end());
    for (ImageId id : t.split.query_positive) EXPECT_FALSE(support.count(id));
    for (ImageId id : t.split.query_negative) EXPECT_FALSE(support.count(id));
  }
}

TEST_F(SyntheticFewShot, FiftyShotsSeparateClusters) {
  const auto run = run_trials(data(), synthetic::kClassA, 50, kStandardTrials, 0);
  EXPECT_GE(*run.summary.metrics.at(Metric::accuracy).mean, 0.95);
}

TEST_F(SyntheticFewShot, MoreShotsDoNotAddVariance) {
  const auto d = data();
  const auto one = run_trials(d, synthetic::kClassA, 1, kStandardTrials, 5);
  const auto many = run_trials(d, synthetic::kClassA, 500, kStandardTrials, 5);
  EXPECT_LE(*many.summary.metrics.at(Metric::accuracy).std, *one.summary.metrics.at(Metric::accuracy).std + 0.02);
}

TEST_F(SyntheticFewShot, SweepIsDeterministicAndOrderIndependent) {
  const auto d = data();
  const std::vector<int> ks(std::begin(kStandardShots), std::end(kStandardShots));
  const auto a = k_sweep(d, {synthetic::kClassA, synthetic::kClassB}, ks, 3, 42);
  const auto b = k_sweep(d, {synthetic::kClassA, synthetic::kClassB}, ks, 3, 42);
  ASSERT_EQ(a.cells.size(), 12u);
  EXPECT_EQ(fingerprint(a), fingerprint(b));

  std::vector<int> reversed(ks.rbegin(), ks.rend());
  const auto c = k_sweep(d, {synthetic::kClassB, synthetic::kClassA}, reversed, 3, 42);
  for (const auto& cell : a.cells) {
    const auto* other = c.find(cell.concept_id, cell.k);
    ASSERT_NE(other, nullptr);
    ASSERT_TRUE(cell.run && other->run);
    EXPECT_EQ(fingerprint(*cell.run), fingerprint(*other->run));
  }
}

TEST_F(SyntheticFewShot, DifferentSeedsDiffer) {
  const auto d = data();
  EXPECT_NE(fingerprint(run_trials(d, synthetic::kClassA, 5, 3, 1)),
            fingerprint(run_trials(d, synthetic::kClassA, 5, 3, 2)));
}

}  // namespace
}  // namespace tokenprobe
