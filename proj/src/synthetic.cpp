#include "tokenprobe/synthetic.hpp"

#include <cmath>
#include <map>
#include <numbers>

#include "tokenprobe/feature_store.hpp"
#include "tokenprobe/manifest.hpp"
#include "tokenprobe/segmentation.hpp"

namespace tokenprobe::synthetic {
namespace {

constexpr ImageId kTestImageOffset = 1'000'000;

std::string file_name(const std::string& model, TokenType token, Split split) {
  return model + "_" + std::string(to_string(token)) + "_" + std::string(to_string(split)) + ".tpf";
}

Vector random_direction(Rng& rng, std::uint32_t dim, double norm) {
  Vector v(dim);
  double sq = 0.0;
  for (auto& x : v) {
    x = static_cast<float>(normal(rng));
    sq += static_cast<double>(x) * x;
  }
  const double scale = norm / std::sqrt(sq);
  for (auto& x : v) x = static_cast<float>(x * scale);
  return v;
}

}  // namespace

double normal(Rng& rng) {
  // Box-Muller; 1 - u keeps the log argument in (0, 1]
  const double u1 = 1.0 - rng.uniform01();
  const double u2 = rng.uniform01();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::filesystem::path write_cluster_classification(const std::filesystem::path& dir, const ClusterOptions& o) {
  std::filesystem::create_directories(dir);
  const std::vector<LabelEntry> labels = {{kClassA, Category::image_class, "class_a"},
                                          {kClassB, Category::image_class, "class_b"},
                                          {kNoiseLabel, Category::image_class, "noise"}};
  Manifest manifest;
  manifest.base_dir = dir;
  manifest.grids[o.model_tag] = GridShape{1, 1, 0};

  for (Split split : {Split::train, Split::test}) {
    const std::size_t per_class = split == Split::train ? o.train_per_class : o.test_per_class;
    const ImageId base = split == Split::train ? 0 : kTestImageOffset;
    // Labels are shared across token types; vectors get per-token noise.
    Rng label_rng(derive_seed({o.seed, static_cast<std::uint64_t>(split), 7}));
    std::vector<std::vector<LabelId>> image_labels;
    for (std::size_t i = 0; i < 2 * per_class; ++i) {
      std::vector<LabelId> l{i % 2 == 0 ? kClassA : kClassB};
      if (o.noise_label && label_rng.uniform01() < 0.5) l.push_back(kNoiseLabel);
      image_labels.push_back(std::move(l));
    }
    for (TokenType token : o.token_types) {
      DatasetHeader header;
      header.dim = o.dim;
      header.token_type = token;
      header.split = split;
      header.model_tag = o.model_tag;
      const auto name = file_name(o.model_tag, token, split);
      DatasetWriter writer(dir / name, header, labels);
      Rng rng(derive_seed({o.seed, static_cast<std::uint64_t>(split), static_cast<std::uint64_t>(token)}));
      for (std::size_t i = 0; i < image_labels.size(); ++i) {
        TokenRecord r;
        r.image_id = base + static_cast<ImageId>(i);
        r.row = r.col = kClsSentinel;
        r.labels = image_labels[i];
        r.vector.resize(o.dim);
        for (auto& x : r.vector) x = static_cast<float>(normal(rng));
        const double shift = (image_labels[i][0] == kClassA ? 0.5 : -0.5) * o.separation;
        r.vector[0] = static_cast<float>(r.vector[0] + shift);
        writer.append(r);
      }
      writer.commit();
      manifest.files.push_back({o.model_tag, token, split, name});
    }
  }
  const auto path = dir / "manifest.json";
  save_manifest(manifest, path);
  return path;
}

std::filesystem::path write_patch_segmentation(const std::filesystem::path& dir, const SegmentationOptions& o) {
  std::filesystem::create_directories(dir);
  const std::vector<LabelEntry> labels = {{kSky, Category::object, "sky"},
                                          {kBuilding, Category::object, "building"},
                                          {kGrass, Category::object, "grass"},
                                          {kStriped, Category::texture, "striped"},
                                          {kDotted, Category::texture, "dotted"}};
  const PatchGrid grid = PatchGrid::covering(o.rows, o.cols, o.patch_size);
  const std::uint32_t height = grid.image_height;
  const std::uint32_t width = grid.image_width;

  Manifest manifest;
  manifest.base_dir = dir;
  manifest.grids[o.model_tag] = GridShape{o.rows, o.cols, o.patch_size};

  Rng center_rng(derive_seed({o.seed, 99}));
  std::map<LabelId, Vector> centers;
  for (const auto& l : labels) centers[l.label_id] = random_direction(center_rng, o.dim, o.center_norm);

  struct Patch {
    std::vector<LabelId> labels;
    std::vector<std::pair<LabelId, double>> coverage;
  };

  for (Split split : {Split::train, Split::test}) {
    const std::size_t n_images = split == Split::train ? o.train_images : o.test_images;
    const ImageId base = split == Split::train ? 0 : kTestImageOffset;

    // Layout per image, shared by every token type.
    Rng layout_rng(derive_seed({o.seed, static_cast<std::uint64_t>(split), 11}));
    std::vector<std::vector<Patch>> images(n_images);
    for (auto& patches : images) {
      PixelMap object_map{height, width, std::vector<LabelId>(static_cast<std::size_t>(height) * width, kUnlabeled)};
      PixelMap texture_map{height, width, std::vector<LabelId>(object_map.ids.size(), kUnlabeled)};
      const LabelId top = layout_rng.uniform01() < 0.5 ? kSky : kBuilding;
      const auto horizon = static_cast<std::uint32_t>(height / 4 + layout_rng.uniform_index(height / 2));
      for (std::uint32_t y = 0; y < height; ++y) {
        for (std::uint32_t x = 0; x < width; ++x) {
          object_map.ids[static_cast<std::size_t>(y) * width + x] = y < horizon ? top : kGrass;
        }
      }
      if (layout_rng.uniform01() < 0.6) {
        const LabelId tex = layout_rng.uniform01() < 0.5 ? kStriped : kDotted;
        const auto y0 = static_cast<std::uint32_t>(layout_rng.uniform_index(height / 2));
        const auto x0 = static_cast<std::uint32_t>(layout_rng.uniform_index(width / 2));
        const auto h = static_cast<std::uint32_t>(height / 4 + layout_rng.uniform_index(height / 3));
        const auto w = static_cast<std::uint32_t>(width / 4 + layout_rng.uniform_index(width / 3));
        for (std::uint32_t y = y0; y < std::min(height, y0 + h); ++y) {
          for (std::uint32_t x = x0; x < std::min(width, x0 + w); ++x) {
            texture_map.ids[static_cast<std::size_t>(y) * width + x] = tex;
          }
        }
      }

      const auto object_labels = patch_labels(object_map, grid);
      const auto texture_labels = patch_labels(texture_map, grid);
      patches.resize(grid.cells());
      const double area = static_cast<double>(o.patch_size) * o.patch_size;
      for (std::uint32_t r = 0; r < o.rows; ++r) {
        for (std::uint32_t c = 0; c < o.cols; ++c) {
          auto& p = patches[static_cast<std::size_t>(r) * o.cols + c];
          const std::size_t cell = static_cast<std::size_t>(r) * o.cols + c;
          if (object_labels[cell]) p.labels.push_back(*object_labels[cell]);
          if (texture_labels[cell]) p.labels.push_back(*texture_labels[cell]);
          std::map<LabelId, int> counts;
          for (std::uint32_t y = r * o.patch_size; y < (r + 1) * o.patch_size; ++y) {
            for (std::uint32_t x = c * o.patch_size; x < (c + 1) * o.patch_size; ++x) {
              ++counts[object_map.at(y, x)];
              if (texture_map.at(y, x) != kUnlabeled) ++counts[texture_map.at(y, x)];
            }
          }
          for (const auto& [id, n] : counts) p.coverage.emplace_back(id, n / area);
        }
      }
    }

    for (TokenType token : o.token_types) {
      DatasetHeader header;
      header.dim = o.dim;
      header.token_type = token;
      header.split = split;
      header.model_tag = o.model_tag;
      const auto name = file_name(o.model_tag, token, split);
      DatasetWriter writer(dir / name, header, labels);
      Rng rng(derive_seed({o.seed, static_cast<std::uint64_t>(split), static_cast<std::uint64_t>(token), 13}));
      for (std::size_t i = 0; i < images.size(); ++i) {
        const ImageId image = base + static_cast<ImageId>(i);
        TokenRecord cls;
        cls.image_id = image;
        cls.row = cls.col = kClsSentinel;
        cls.vector.resize(o.dim);
        for (auto& x : cls.vector) x = static_cast<float>(normal(rng));
        writer.append(cls);
        for (std::uint32_t r = 0; r < o.rows; ++r) {
          for (std::uint32_t c = 0; c < o.cols; ++c) {
            const auto& p = images[i][static_cast<std::size_t>(r) * o.cols + c];
            TokenRecord rec;
            rec.image_id = image;
            rec.row = static_cast<std::uint16_t>(r);
            rec.col = static_cast<std::uint16_t>(c);
            rec.labels = p.labels;
            rec.vector.resize(o.dim);
            for (std::uint32_t d = 0; d < o.dim; ++d) {
              double v = normal(rng);
              for (const auto& [id, frac] : p.coverage) v += frac * centers[id][d];
              rec.vector[d] = static_cast<float>(v);
            }
            writer.append(rec);
          }
        }
      }
      writer.commit();
      manifest.files.push_back({o.model_tag, token, split, name});
    }
  }
  const auto path = dir / "manifest.json";
  save_manifest(manifest, path);
  return path;
}

}  // namespace tokenprobe::synthetic
