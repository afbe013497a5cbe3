#include "tokenprobe/feature_store.hpp"

#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <thread>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "tokenprobe/error.hpp"

namespace tokenprobe {
namespace {

using testing::cls_record;
using testing::patch_record;
using testing::TempDir;

DatasetHeader header_with_dim(std::uint32_t dim) {
  DatasetHeader h;
  h.dim = dim;
  h.token_type = TokenType::k;
  h.split = Split::test;
  h.model_tag = "dino_vits8";
  return h;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ProbeError& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected a ProbeError";
  return ErrorCode::io_failure;
}

TEST(FeatureStoreTest, SingleClsRecordHasComputedLength) {
  TempDir dir;
  const auto path = dir / "one.tpf";
  const std::vector<LabelEntry> labels = {{3, Category::image_class, "goldfish"}};
  const std::vector<TokenRecord> records = {cls_record(42, {3}, {0.25f, -1.5f})};
  write_dataset(path, header_with_dim(2), labels, records);

  // magic + version + D + count + token + split + tag, label table, record
  const std::uint64_t header_bytes = 4 + 4 + 4 + 8 + 1 + 1 + (2 + 10) + 4 + (4 + 1 + 2 + 8);
  EXPECT_EQ(std::filesystem::file_size(path), header_bytes + record_size(2, 1));
  EXPECT_EQ(record_size(2, 1), 4u + 2 + 2 + 2 + 4 + 8);

  const DatasetHandle h = open_dataset(path);
  DatasetHeader expected = header_with_dim(2);
  expected.record_count = 1;
  EXPECT_EQ(h.header(), expected);
  EXPECT_EQ(h.labels(), labels);
  EXPECT_EQ(h.read_all(), records);
  EXPECT_TRUE(h.read_all().front().is_cls());
}

TEST(FeatureStoreTest, DimensionMismatchLeavesNoFile) {
  TempDir dir;
  const auto path = dir / "bad.tpf";
  const std::vector<TokenRecord> records = {cls_record(0, {}, {1.0f, 2.0f}), cls_record(1, {}, {1.0f, 2.0f, 3.0f})};
  EXPECT_EQ(code_of([&] { write_dataset(path, header_with_dim(2), {}, records); }), ErrorCode::dimension_mismatch);
  EXPECT_FALSE(std::filesystem::exists(path));
  EXPECT_TRUE(std::filesystem::is_empty(dir.path()));
}

TEST(FeatureStoreTest, UnknownLabelRejected) {
  TempDir dir;
  const auto path = dir / "bad.tpf";
  const std::vector<TokenRecord> records = {patch_record(0, 1, 1, {9}, {1.0f})};
  EXPECT_EQ(code_of([&] { write_dataset(path, header_with_dim(1), {{1, Category::part, "leg"}}, records); }),
            ErrorCode::unknown_label);
  EXPECT_FALSE(std::filesystem::exists(path));
}

TEST(FeatureStoreTest, UncommittedWriterRemovesTemporary) {
  TempDir dir;
  const auto path = dir / "partial.tpf";
  {
    DatasetWriter w(path, header_with_dim(1), {});
    w.append(cls_record(0, {}, {1.0f}));
  }
  EXPECT_TRUE(std::filesystem::is_empty(dir.path()));
}

TEST(FeatureStoreTest, RecordCountMatchesStreamedRecords) {
  TempDir dir;
  const auto path = dir / "many.tpf";
  Rng rng(5);
  DatasetWriter w(path, header_with_dim(384), {});
  std::uint64_t streamed = 0;
  for (int i = 0; i < 10000; ++i) {
    TokenRecord r = patch_record(static_cast<ImageId>(i / 196), static_cast<std::uint16_t>(i % 14),
                                 static_cast<std::uint16_t>((i / 14) % 14), {}, Vector(384));
    for (auto& x : r.vector) x = static_cast<float>(rng.uniform01());
    w.append(r);
    ++streamed;
  }
  w.commit();
  EXPECT_EQ(open_dataset(path).header().record_count, streamed);
  EXPECT_EQ(streamed, 10000u);
}

TEST(FeatureStoreTest, BadMagicDetected) {
  TempDir dir;
  const auto path = dir / "f.tpf";
  write_dataset(path, header_with_dim(2), {}, std::vector<TokenRecord>{cls_record(0, {}, {1, 2})});
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XPF1", 4);
  }
  EXPECT_EQ(code_of([&] { open_dataset(path); }), ErrorCode::bad_magic);
}

TEST(FeatureStoreTest, UnsupportedVersionDetected) {
  TempDir dir;
  const auto path = dir / "f.tpf";
  write_dataset(path, header_with_dim(2), {}, std::vector<TokenRecord>{cls_record(0, {}, {1, 2})});
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const char v2[4] = {2, 0, 0, 0};
    f.write(v2, 4);
  }
  EXPECT_EQ(code_of([&] { open_dataset(path); }), ErrorCode::unsupported_version);
}

TEST(FeatureStoreTest, TruncationNamesTheRecord) {
  TempDir dir;
  const auto path = dir / "f.tpf";
  std::vector<TokenRecord> records;
  for (ImageId i = 0; i < 5; ++i) records.push_back(cls_record(i, {}, {1.0f, 2.0f, 3.0f}));
  write_dataset(path, header_with_dim(3), {}, records);
  const auto full = std::filesystem::file_size(path);
  // cut in the middle of the fourth record (index 3)
  const auto cut = full - record_size(3, 0) - record_size(3, 0) / 2;
  std::filesystem::resize_file(path, cut);
  try {
    open_dataset(path);
    FAIL() << "truncated file opened";
  } catch (const ProbeError& e) {
    EXPECT_EQ(e.code(), ErrorCode::truncated);
    EXPECT_NE(std::string(e.what()).find("record 3 "), std::string::npos) << e.what();
  }
}

TEST(FeatureStoreTest, TrailingBytesRejected) {
  TempDir dir;
  const auto path = dir / "f.tpf";
  write_dataset(path, header_with_dim(1), {}, std::vector<TokenRecord>{cls_record(0, {}, {1})});
  std::ofstream(path, std::ios::app | std::ios::binary) << "xx";
  EXPECT_EQ(code_of([&] { open_dataset(path); }), ErrorCode::corrupt);
}

class FilterTest : public ::testing::Test {
 protected:
  void SetUp() override {
    labels_ = {{7, Category::object, "car"}, {8, Category::object, "tree"}, {50, Category::texture, "dotted"}};
    records_ = {
        cls_record(0, {}, {0.0f}),           patch_record(0, 0, 0, {7}, {1.0f}),
        patch_record(0, 0, 1, {8, 50}, {2.0f}), cls_record(1, {}, {3.0f}),
        patch_record(1, 0, 0, {7, 50}, {4.0f}), patch_record(1, 0, 1, {7}, {5.0f}),
        patch_record(1, 1, 0, {}, {6.0f}),
    };
    write_dataset(dir_ / "mixed.tpf", header_with_dim(1), labels_, records_);
    handle_ = std::make_unique<DatasetHandle>(open_dataset(dir_ / "mixed.tpf"));
  }

  TempDir dir_;
  std::vector<LabelEntry> labels_;
  std::vector<TokenRecord> records_;
  std::unique_ptr<DatasetHandle> handle_;
};

TEST_F(FilterTest, NoFilterYieldsFileOrder) { EXPECT_EQ(handle_->read_all(), records_); }

TEST_F(FilterTest, ClsOnly) {
  const auto cls = handle_->read_all(RecordFilter::cls_only());
  ASSERT_EQ(cls.size(), 2u);
  EXPECT_EQ(cls[0], records_[0]);
  EXPECT_EQ(cls[1], records_[3]);
}

TEST_F(FilterTest, LabelFilterMatchesScanCount) {
  std::size_t expected = 0;
  for (const auto& r : records_) expected += r.has_label(7) ? 1 : 0;
  const auto hits = handle_->read_all(RecordFilter::with_any_label({7}));
  EXPECT_EQ(expected, 3u);
  EXPECT_EQ(hits.size(), expected);
  for (const auto& r : hits) EXPECT_TRUE(r.has_label(7));
}

TEST_F(FilterTest, FilteredOutputIsOrderedSubset) {
  const auto all = handle_->read_all();
  for (const auto& filter : {RecordFilter::patches_only(), RecordFilter::with_any_label({50, 8})}) {
    const auto sub = handle_->read_all(filter);
    std::size_t j = 0;
    for (const auto& r : sub) {
      while (j < all.size() && !(all[j] == r)) ++j;
      ASSERT_LT(j, all.size()) << "filtered record missing or out of order";
      ++j;
    }
  }
}

TEST_F(FilterTest, ImageIndexBuiltAtOpen) {
  const auto& images = handle_->images();
  ASSERT_EQ(images.size(), 2u);
  EXPECT_EQ(images.at(0).record_count, 3u);
  EXPECT_EQ(images.at(1).record_count, 4u);
  EXPECT_EQ(images.at(1).cls_count, 1u);
}

TEST_F(FilterTest, ConcurrentCursorsSeeSameSequence) {
  std::vector<std::vector<TokenRecord>> seen(4);
  std::vector<std::thread> threads;
  for (auto& s : seen) threads.emplace_back([&] { s = handle_->read_all(); });
  for (auto& t : threads) t.join();
  for (const auto& s : seen) EXPECT_EQ(s, records_);
}

TEST(FeatureStoreProperty, RandomRoundTripIsBitExact) {
  TempDir dir;
  Rng rng(123);
  for (int round = 0; round < 20; ++round) {
    const auto dim = static_cast<std::uint32_t>(1 + rng.uniform_index(16));
    std::vector<LabelEntry> labels;
    const auto n_labels = rng.uniform_index(6);
    for (LabelId id = 0; id < n_labels; ++id) {
      labels.push_back({id * 3 + 1, static_cast<Category>(rng.uniform_index(6)), "label" + std::to_string(id)});
    }
    std::vector<TokenRecord> records;
    const auto n = rng.uniform_index(50);
    for (std::size_t i = 0; i < n; ++i) {
      TokenRecord r;
      r.image_id = static_cast<ImageId>(rng.next_u64());
      if (rng.uniform01() < 0.2) {
        r.row = r.col = kClsSentinel;
      } else {
        r.row = static_cast<std::uint16_t>(rng.uniform_index(kClsSentinel));
        r.col = static_cast<std::uint16_t>(rng.uniform_index(kClsSentinel));
      }
      for (const auto& l : labels) {
        if (rng.uniform01() < 0.3) r.labels.push_back(l.label_id);
      }
      r.vector.resize(dim);
      // arbitrary bit patterns except NaN, which never compares equal
      for (auto& x : r.vector) {
        do {
          x = std::bit_cast<float>(static_cast<std::uint32_t>(rng.next_u64()));
        } while (std::isnan(x));
      }
      records.push_back(std::move(r));
    }
    const auto path = dir / ("r" + std::to_string(round) + ".tpf");
    DatasetHeader h = header_with_dim(dim);
    h.token_type = static_cast<TokenType>(rng.uniform_index(6));
    h.model_tag = "m" + std::to_string(round);
    write_dataset(path, h, labels, records);
    const DatasetHandle handle = open_dataset(path);
    EXPECT_EQ(handle.header().record_count, records.size());
    EXPECT_EQ(handle.labels(), labels);
    EXPECT_EQ(handle.read_all(), records);
    EXPECT_EQ(handle.read_all(), handle.read_all());
  }
}

}  // namespace
}  // namespace tokenprobe
