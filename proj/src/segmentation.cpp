#include "tokenprobe/segmentation.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>

#include "tokenprobe/error.hpp"

namespace tokenprobe {

PatchGrid PatchGrid::covering(std::uint32_t rows, std::uint32_t cols, std::uint32_t patch_size) {
  return {rows, cols, patch_size, rows * patch_size, cols * patch_size};
}

void PatchGrid::validate() const {
  if (rows == 0 || cols == 0 || patch_size == 0) fail(ErrorCode::shape_mismatch, "empty patch grid");
  if (static_cast<std::uint64_t>(rows) * patch_size > image_height ||
      static_cast<std::uint64_t>(cols) * patch_size > image_width) {
    fail(ErrorCode::shape_mismatch, "patch grid does not fit inside the image");
  }
}

std::size_t BinaryMask::count() const { return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), 1)); }

std::vector<std::optional<LabelId>> patch_labels(const PixelMap& map, const PatchGrid& grid, double coverage_threshold) {
  grid.validate();
  if (map.height != grid.image_height || map.width != grid.image_width ||
      map.ids.size() != static_cast<std::size_t>(map.height) * map.width) {
    fail(ErrorCode::shape_mismatch, "pixel map is " + std::to_string(map.height) + "x" + std::to_string(map.width) +
                                        ", grid expects " + std::to_string(grid.image_height) + "x" +
                                        std::to_string(grid.image_width));
  }
  const double area = static_cast<double>(grid.patch_size) * grid.patch_size;
  std::vector<std::optional<LabelId>> out(grid.cells());
  std::map<LabelId, std::uint32_t> counts;
  for (std::uint32_t r = 0; r < grid.rows; ++r) {
    for (std::uint32_t c = 0; c < grid.cols; ++c) {
      counts.clear();
      for (std::uint32_t y = r * grid.patch_size; y < (r + 1) * grid.patch_size; ++y) {
        for (std::uint32_t x = c * grid.patch_size; x < (c + 1) * grid.patch_size; ++x) {
          const LabelId id = map.at(y, x);
          if (id != kUnlabeled) ++counts[id];
        }
      }
      // the best-covered concept, smallest id on ties
      std::optional<LabelId> best;
      std::uint32_t best_n = 0;
      for (const auto& [id, n] : counts) {
        if (n > best_n) {
          best = id;
          best_n = n;
        }
      }
      if (best && static_cast<double>(best_n) / area > coverage_threshold) {
        out[static_cast<std::size_t>(r) * grid.cols + c] = best;
      }
    }
  }
  return out;
}

BinaryMask render_mask(const ConceptTemplate& tmpl, std::span<const Vector> patch_vectors, const PatchGrid& grid) {
  if (patch_vectors.size() != grid.cells()) {
    fail(ErrorCode::shape_mismatch, std::to_string(patch_vectors.size()) + " patch vectors for a " +
                                        std::to_string(grid.rows) + "x" + std::to_string(grid.cols) + " grid");
  }
  BinaryMask mask(grid.rows, grid.cols);
  for (std::size_t i = 0; i < patch_vectors.size(); ++i) mask.cells[i] = classify(tmpl, patch_vectors[i]) ? 1 : 0;
  return mask;
}

BinaryMask upsample_mask(const BinaryMask& mask, const PatchGrid& grid) {
  const std::uint32_t p = grid.patch_size;
  BinaryMask out(mask.rows * p, mask.cols * p);
  for (std::uint32_t y = 0; y < out.rows; ++y) {
    for (std::uint32_t x = 0; x < out.cols; ++x) out.set(y, x, mask.at(y / p, x / p));
  }
  return out;
}

double iou(const BinaryMask& pred, const BinaryMask& truth) {
  if (pred.rows != truth.rows || pred.cols != truth.cols) {
    fail(ErrorCode::shape_mismatch, "masks are " + std::to_string(pred.rows) + "x" + std::to_string(pred.cols) +
                                        " and " + std::to_string(truth.rows) + "x" + std::to_string(truth.cols));
  }
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < pred.cells.size(); ++i) {
    inter += (pred.cells[i] && truth.cells[i]) ? 1 : 0;
    uni += (pred.cells[i] || truth.cells[i]) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<ImageMasks> render_dataset_masks(const ConceptTemplate& tmpl, const DatasetHandle& handle,
                                             const PatchGrid& grid) {
  std::map<ImageId, ImageMasks> by_image;
  handle.for_each(RecordFilter::patches_only(), [&](const TokenRecord& r) {
    if (r.row >= grid.rows || r.col >= grid.cols) {
      fail(ErrorCode::shape_mismatch, "patch (" + std::to_string(r.row) + ", " + std::to_string(r.col) +
                                          ") of image " + std::to_string(r.image_id) + " is outside the grid");
    }
    auto [it, fresh] = by_image.try_emplace(r.image_id);
    if (fresh) {
      it->second.image_id = r.image_id;
      it->second.predicted = BinaryMask(grid.rows, grid.cols);
      it->second.truth = BinaryMask(grid.rows, grid.cols);
    }
    it->second.predicted.set(r.row, r.col, classify(tmpl, r.vector));
    it->second.truth.set(r.row, r.col, r.has_label(tmpl.concept_id));
  });
  std::vector<ImageMasks> out;
  out.reserve(by_image.size());
  for (auto& [_, m] : by_image) out.push_back(std::move(m));
  return out;
}

std::vector<IouSelection> top_samples_by_iou(std::span<const ConceptTemplate> templates, const DatasetHandle& handle,
                                             const PatchGrid& grid, std::size_t count) {
  struct Counts {
    std::size_t inter = 0;
    std::size_t uni = 0;
    bool has_truth = false;
  };
  std::vector<std::map<ImageId, Counts>> per_template(templates.size());
  handle.for_each(RecordFilter::patches_only(), [&](const TokenRecord& r) {
    if (r.row >= grid.rows || r.col >= grid.cols) {
      fail(ErrorCode::shape_mismatch, "patch (" + std::to_string(r.row) + ", " + std::to_string(r.col) +
                                          ") of image " + std::to_string(r.image_id) + " is outside the grid");
    }
    for (std::size_t t = 0; t < templates.size(); ++t) {
      const bool pred = classify(templates[t], r.vector);
      const bool truth = r.has_label(templates[t].concept_id);
      auto& c = per_template[t][r.image_id];
      c.inter += (pred && truth) ? 1 : 0;
      c.uni += (pred || truth) ? 1 : 0;
      c.has_truth = c.has_truth || truth;
    }
  });

  std::vector<IouSelection> out;
  for (std::size_t t = 0; t < templates.size(); ++t) {
    IouSelection sel;
    sel.concept_id = templates[t].concept_id;
    for (const auto& [image, c] : per_template[t]) {
      if (!c.has_truth) continue;
      sel.top.push_back({image, static_cast<double>(c.inter) / static_cast<double>(c.uni)});
    }
    std::stable_sort(sel.top.begin(), sel.top.end(), [](const IouSample& a, const IouSample& b) {
      return a.iou > b.iou || (a.iou == b.iou && a.image_id < b.image_id);
    });
    sel.short_of_count = sel.top.size() < count;
    if (sel.top.size() > count) sel.top.resize(count);
    out.push_back(std::move(sel));
  }
  return out;
}

void write_pgm(const BinaryMask& mask, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io_failure, "cannot write " + path.string());
  out << "P5\n" << mask.cols << ' ' << mask.rows << "\n255\n";
  for (auto v : mask.cells) out.put(v ? static_cast<char>(255) : static_cast<char>(0));
  if (!out) fail(ErrorCode::io_failure, "write failed on " + path.string());
}

BinaryMask read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io_failure, "cannot open " + path.string());
  std::string magic;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  int maxval = 0;
  in >> magic >> width >> height >> maxval;
  if (magic != "P5" || maxval != 255) fail(ErrorCode::corrupt, path.string() + " is not an 8-bit P5 image");
  in.get();
  BinaryMask mask(height, width);
  for (auto& v : mask.cells) {
    const int byte = in.get();
    if (byte == EOF) fail(ErrorCode::truncated, path.string() + " ends early");
    v = byte != 0 ? 1 : 0;
  }
  return mask;
}

}  // namespace tokenprobe
