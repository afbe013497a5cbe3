#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tokenprobe/types.hpp"

namespace tokenprobe {

struct GridShape {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  // Pixel side of one patch; 0 when unknown (masks then export at grid size).
  std::uint32_t patch_size = 0;

  bool operator==(const GridShape&) const = default;
};

struct ManifestEntry {
  std::string model_tag;
  TokenType token_type = TokenType::x2;
  Split split = Split::train;
  // As written in the manifest; relative paths resolve against the
  // manifest's directory.
  std::filesystem::path path;

  bool operator==(const ManifestEntry&) const = default;
};

// Groups feature files into one experiment, keyed by (model, token, split).
struct Manifest {
  std::map<std::string, GridShape> grids;
  std::vector<ManifestEntry> files;
  std::filesystem::path base_dir;

  const ManifestEntry* find(const std::string& model_tag, TokenType token, Split split) const;
  std::filesystem::path resolve(const ManifestEntry& entry) const;
};

Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

struct ManifestSummary {
  std::size_t files = 0;
  std::map<std::string, std::uint32_t> dims;  // per model
  std::map<std::string, std::size_t> train_images;
  std::map<std::string, std::size_t> test_images;
};

// Opens every file and checks that headers agree with their manifest keys,
// that all files of a model share D and a grid, that every (model, split)
// has identical image sets and per-image record counts across token types,
// and that train and test image ids are disjoint. Throws
// ErrorCode::manifest_inconsistent on the first violation.
ManifestSummary validate_manifest(const Manifest& manifest);

}  // namespace tokenprobe
