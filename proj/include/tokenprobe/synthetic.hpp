#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tokenprobe/rng.hpp"
#include "tokenprobe/types.hpp"

// Synthetic feature dumps with known structure, for tests and demos.
namespace tokenprobe::synthetic {

double normal(Rng& rng);

inline constexpr LabelId kClassA = 0;
inline constexpr LabelId kClassB = 1;
// Assigned to a random half of the images, independent of their vectors.
inline constexpr LabelId kNoiseLabel = 2;

struct ClusterOptions {
  std::uint32_t dim = 64;
  // Distance between the two class centers, placed at +-separation/2 on the
  // first axis. Unit variance per dimension.
  double separation = 6.0;
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 100;
  bool noise_label = true;
  std::vector<TokenType> token_types{TokenType::x2};
  std::string model_tag = "synthetic";
  std::uint64_t seed = 0;
};

// One CLS record per image, class_a or class_b (plus maybe noise). Writes
// <model>_<token>_<split>.tpf files and manifest.json into `dir`; returns the
// manifest path.
std::filesystem::path write_cluster_classification(const std::filesystem::path& dir, const ClusterOptions& options);

inline constexpr LabelId kSky = 10;
inline constexpr LabelId kBuilding = 11;
inline constexpr LabelId kGrass = 12;
inline constexpr LabelId kStriped = 20;
inline constexpr LabelId kDotted = 21;

struct SegmentationOptions {
  std::uint32_t rows = 14;
  std::uint32_t cols = 14;
  std::uint32_t patch_size = 4;
  std::uint32_t dim = 32;
  std::size_t train_images = 120;
  std::size_t test_images = 120;
  // Norm of each concept center; patch noise has unit variance per dimension.
  double center_norm = 8.0;
  std::vector<TokenType> token_types{TokenType::x2};
  std::string model_tag = "synthetic_seg";
  std::uint64_t seed = 0;
};

// Images with a sky-or-building top, a grass bottom and an optional textured
// rectangle. Pixel maps are reduced to patch labels by majority coverage;
// patch vectors mix the concept centers by coverage. One CLS record plus
// rows * cols patches per image.
std::filesystem::path write_patch_segmentation(const std::filesystem::path& dir, const SegmentationOptions& options);

}  // namespace tokenprobe::synthetic
