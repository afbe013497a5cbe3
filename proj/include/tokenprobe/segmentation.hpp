#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "tokenprobe/feature_store.hpp"
#include "tokenprobe/templates.hpp"

namespace tokenprobe {

// Non-overlapping square patches laid over an image. Pixels past
// rows * patch_size (or cols * patch_size) belong to no patch.
struct PatchGrid {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::uint32_t patch_size = 1;
  std::uint32_t image_height = 0;
  std::uint32_t image_width = 0;

  // Image exactly covered by the grid.
  static PatchGrid covering(std::uint32_t rows, std::uint32_t cols, std::uint32_t patch_size);

  std::size_t cells() const { return static_cast<std::size_t>(rows) * cols; }
  void validate() const;
};

inline constexpr LabelId kUnlabeled = std::numeric_limits<LabelId>::max();

// Per-pixel concept ids of one category map, row-major. kUnlabeled marks
// pixels without a concept.
struct PixelMap {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<LabelId> ids;

  LabelId at(std::uint32_t y, std::uint32_t x) const { return ids[static_cast<std::size_t>(y) * width + x]; }
};

// A patch takes concept c when strictly more than `coverage_threshold` of its
// pixels are labeled c. Returns one entry per patch, row-major.
std::vector<std::optional<LabelId>> patch_labels(const PixelMap& map, const PatchGrid& grid,
                                                 double coverage_threshold = 0.5);

struct BinaryMask {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> cells;

  BinaryMask() = default;
  BinaryMask(std::uint32_t r, std::uint32_t c) : rows(r), cols(c), cells(static_cast<std::size_t>(r) * c, 0) {}

  bool at(std::uint32_t r, std::uint32_t c) const { return cells[static_cast<std::size_t>(r) * cols + c] != 0; }
  void set(std::uint32_t r, std::uint32_t c, bool v) { cells[static_cast<std::size_t>(r) * cols + c] = v ? 1 : 0; }
  std::size_t count() const;

  bool operator==(const BinaryMask&) const = default;
};

// patch_vectors are grid-ordered (row-major).
BinaryMask render_mask(const ConceptTemplate& tmpl, std::span<const Vector> patch_vectors, const PatchGrid& grid);

// Nearest-neighbour expansion to pixel resolution.
BinaryMask upsample_mask(const BinaryMask& mask, const PatchGrid& grid);

// |a & b| / |a | b|, and 1 when both are empty.
double iou(const BinaryMask& pred, const BinaryMask& truth);

struct ImageMasks {
  ImageId image_id = 0;
  BinaryMask predicted;
  BinaryMask truth;
};

// Predicted and ground-truth grid masks of one concept for every image of a
// patch-token dataset, ascending by image id.
std::vector<ImageMasks> render_dataset_masks(const ConceptTemplate& tmpl, const DatasetHandle& handle,
                                             const PatchGrid& grid);

struct IouSample {
  ImageId image_id = 0;
  double iou = 0.0;
};

struct IouSelection {
  LabelId concept_id = 0;
  std::vector<IouSample> top;
  // Fewer candidate images than requested.
  bool short_of_count = false;
};

// Per template, the `count` images with the highest IoU among images whose
// ground truth contains the concept; ties by image id ascending.
std::vector<IouSelection> top_samples_by_iou(std::span<const ConceptTemplate> templates, const DatasetHandle& handle,
                                             const PatchGrid& grid, std::size_t count = 5);

// Binary PGM (P5): 0 negative, 255 positive.
void write_pgm(const BinaryMask& mask, const std::filesystem::path& path);
BinaryMask read_pgm(const std::filesystem::path& path);

}  // namespace tokenprobe
