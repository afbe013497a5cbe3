#include "tokenprobe/segmentation.hpp"

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "tokenprobe/error.hpp"

namespace tokenprobe {
namespace {

using testing::patch_record;
using testing::TempDir;

PixelMap filled(std::uint32_t h, std::uint32_t w, LabelId id) { return {h, w, std::vector<LabelId>(std::size_t(h) * w, id)}; }

// Oracle: a patch is c when c covers more than half of its pixels.
std::vector<std::optional<LabelId>> majority_oracle(const PixelMap& map, const PatchGrid& grid) {
  std::vector<std::optional<LabelId>> out;
  for (std::uint32_t r = 0; r < grid.rows; ++r) {
    for (std::uint32_t c = 0; c < grid.cols; ++c) {
      std::optional<LabelId> winner;
      std::vector<LabelId> seen;
      for (std::uint32_t y = 0; y < grid.patch_size; ++y) {
        for (std::uint32_t x = 0; x < grid.patch_size; ++x) seen.push_back(map.at(r * grid.patch_size + y, c * grid.patch_size + x));
      }
      for (LabelId candidate : seen) {
        if (candidate == kUnlabeled) continue;
        const auto n = static_cast<std::size_t>(std::count(seen.begin(), seen.end(), candidate));
        if (2 * n > seen.size()) winner = candidate;
      }
      out.push_back(winner);
    }
  }
  return out;
}

TEST(PatchLabelsTest, MajorityCoverage) {
  const auto grid = PatchGrid::covering(1, 1, 16);
  auto map = filled(16, 16, 8);
  for (std::size_t i = 0; i < 200; ++i) map.ids[i] = 3;  // 200 of 256
  EXPECT_EQ(patch_labels(map, grid), (std::vector<std::optional<LabelId>>{3}));

  auto half = filled(16, 16, 8);
  for (std::size_t i = 0; i < 128; ++i) half.ids[i] = 3;
  EXPECT_EQ(patch_labels(half, grid), (std::vector<std::optional<LabelId>>{std::nullopt}));

  half.ids[128] = 3;  // 129 of 256
  EXPECT_EQ(patch_labels(half, grid), (std::vector<std::optional<LabelId>>{3}));
}

TEST(PatchLabelsTest, UnlabeledPixelsNeverWin) {
  const auto grid = PatchGrid::covering(1, 2, 2);
  PixelMap map{2, 4, {kUnlabeled, kUnlabeled, 5, 5, kUnlabeled, 1, kUnlabeled, kUnlabeled}};
  EXPECT_EQ(patch_labels(map, grid), (std::vector<std::optional<LabelId>>{std::nullopt, std::nullopt}));
  map.ids[7] = 5;
  EXPECT_EQ(patch_labels(map, grid), (std::vector<std::optional<LabelId>>{std::nullopt, 5}));
}

TEST(PatchLabelsTest, PixelCheckerboardLeavesPatchesUnlabeled) {
  const auto grid = PatchGrid::covering(3, 3, 2);
  PixelMap map{6, 6, {}};
  for (std::uint32_t y = 0; y < 6; ++y) {
    for (std::uint32_t x = 0; x < 6; ++x) map.ids.push_back((x + y) % 2 ? 1 : 2);
  }
  for (const auto& l : patch_labels(map, grid)) EXPECT_FALSE(l.has_value());
}

TEST(PatchLabelsTest, ShapeMismatch) {
  try {
    patch_labels(filled(8, 8, 1), PatchGrid::covering(3, 3, 4));
    FAIL();
  } catch (const ProbeError& e) {
    EXPECT_EQ(e.code(), ErrorCode::shape_mismatch);
  }
}

TEST(PatchLabelsProperty, MatchesPixelCountOracle) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const auto p = static_cast<std::uint32_t>(1 + rng.uniform_index(6));
    const auto grid = PatchGrid::covering(static_cast<std::uint32_t>(1 + rng.uniform_index(5)),
                                          static_cast<std::uint32_t>(1 + rng.uniform_index(5)), p);
    PixelMap map{grid.image_height, grid.image_width, {}};
    const auto labels = 1 + rng.uniform_index(3);
    for (std::size_t j = 0; j < std::size_t(map.height) * map.width; ++j) {
      const auto pick = rng.uniform_index(labels + 1);
      map.ids.push_back(pick == labels ? kUnlabeled : static_cast<LabelId>(pick));
    }
    EXPECT_EQ(patch_labels(map, grid), majority_oracle(map, grid));
  }
}

TEST(RenderMaskTest, PlantedTemplateReproducesGroundTruth) {
  const auto grid = PatchGrid::covering(14, 14, 16);
  Rng rng(2);
  BinaryMask truth(14, 14);
  std::vector<Vector> patches;
  for (std::uint32_t r = 0; r < 14; ++r) {
    for (std::uint32_t c = 0; c < 14; ++c) {
      const bool on = rng.uniform01() < 0.3;
      truth.set(r, c, on);
      patches.push_back(on ? Vector{1.0f, 0.0f} : Vector{0.0f, 1.0f});
    }
  }
  const ConceptTemplate t{7, DecisionRule::hyperplane, {1.0f, -1.0f}, 0.0, {}};
  const auto mask = render_mask(t, patches, grid);
  EXPECT_EQ(mask, truth);
  EXPECT_DOUBLE_EQ(iou(mask, truth), 1.0);
}

TEST(RenderMaskTest, WrongPatchCount) {
  const ConceptTemplate t{7, DecisionRule::hyperplane, {1.0f}, 0.0, {}};
  std::vector<Vector> patches(3, Vector{1.0f});
  EXPECT_THROW(render_mask(t, patches, PatchGrid::covering(2, 2, 1)), ProbeError);
}

TEST(UpsampleTest, NearestNeighbour) {
  BinaryMask m(1, 2);
  m.set(0, 1, true);
  const auto up = upsample_mask(m, PatchGrid::covering(1, 2, 3));
  ASSERT_EQ(up.rows, 3u);
  ASSERT_EQ(up.cols, 6u);
  for (std::uint32_t y = 0; y < 3; ++y) {
    for (std::uint32_t x = 0; x < 6; ++x) EXPECT_EQ(up.at(y, x), x >= 3);
  }
}

TEST(IouTest, Examples) {
  BinaryMask a(2, 2);
  BinaryMask b(2, 2);
  EXPECT_DOUBLE_EQ(iou(a, b), 1.0);  // both empty
  a.set(0, 0, true);
  EXPECT_DOUBLE_EQ(iou(a, b), 0.0);
  b.set(0, 0, true);
  b.set(1, 1, true);
  EXPECT_DOUBLE_EQ(iou(a, b), 0.5);
  a.set(0, 1, true);
  EXPECT_DOUBLE_EQ(iou(a, b), 1.0 / 3.0);
  EXPECT_THROW(iou(a, BinaryMask(3, 2)), ProbeError);
}

TEST(IouProperty, SymmetricBoundedReflexive) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto r = static_cast<std::uint32_t>(1 + rng.uniform_index(8));
    const auto c = static_cast<std::uint32_t>(1 + rng.uniform_index(8));
    BinaryMask a(r, c);
    BinaryMask b(r, c);
    for (auto& v : a.cells) v = rng.uniform01() < 0.4;
    for (auto& v : b.cells) v = rng.uniform01() < 0.4;
    const double x = iou(a, b);
    EXPECT_DOUBLE_EQ(x, iou(b, a));
    EXPECT_GE(x, 0.0);
    EXPECT_LE(x, 1.0);
    EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  }
}

TEST(TopSamplesTest, RanksByIouWithImageIdTies) {
  TempDir dir;
  const auto grid = PatchGrid::covering(1, 2, 1);
  // template fires on (1, 0)
  std::vector<TokenRecord> records = {
      // image 4: both patches c, both predicted -> 1.0
      patch_record(4, 0, 0, {1}, {1, 0}), patch_record(4, 0, 1, {1}, {1, 0}),
      // image 2: one c patch predicted, other predicted wrongly -> 0.5
      patch_record(2, 0, 0, {1}, {1, 0}), patch_record(2, 0, 1, {2}, {1, 0}),
      // image 3: same as 4 -> 1.0, tie broken toward 3
      patch_record(3, 0, 0, {1}, {1, 0}), patch_record(3, 0, 1, {1}, {1, 0}),
      // image 9: no c at all, would score 1.0 on empty masks but is not a candidate
      patch_record(9, 0, 0, {2}, {0, 1}), patch_record(9, 0, 1, {2}, {0, 1}),
  };
  DatasetHeader h;
  h.dim = 2;
  h.model_tag = "m";
  write_dataset(dir / "seg.tpf", h, {{1, Category::object, "a"}, {2, Category::object, "b"}}, records);
  const auto handle = open_dataset(dir / "seg.tpf");
  const std::vector<ConceptTemplate> templates = {{1, DecisionRule::hyperplane, {1.0f, -1.0f}, 0.5, {}}};

  const auto sel = top_samples_by_iou(templates, handle, grid, 2);
  ASSERT_EQ(sel.size(), 1u);
  ASSERT_EQ(sel[0].top.size(), 2u);
  EXPECT_EQ(sel[0].top[0].image_id, 3u);
  EXPECT_EQ(sel[0].top[1].image_id, 4u);
  EXPECT_FALSE(sel[0].short_of_count);

  const auto all = top_samples_by_iou(templates, handle, grid, 5);
  ASSERT_EQ(all[0].top.size(), 3u);
  EXPECT_TRUE(all[0].short_of_count);
  EXPECT_EQ(all[0].top[2].image_id, 2u);
  EXPECT_DOUBLE_EQ(all[0].top[2].iou, 0.5);

  const auto masks = render_dataset_masks(templates[0], handle, grid);
  ASSERT_EQ(masks.size(), 4u);
  EXPECT_EQ(masks[0].image_id, 2u);
  EXPECT_EQ(masks[3].truth.count(), 0u);
}

TEST(PgmTest, RoundTrip) {
  TempDir dir;
  Rng rng(4);
  BinaryMask m(5, 7);
  for (auto& v : m.cells) v = rng.uniform01() < 0.5;
  write_pgm(m, dir / "m.pgm");
  EXPECT_EQ(read_pgm(dir / "m.pgm"), m);
}

}  // namespace
}  // namespace tokenprobe
