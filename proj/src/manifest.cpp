#include "tokenprobe/manifest.hpp"

#include <fstream>
#include <set>
#include <tuple>

#include "json.hpp"

#include "tokenprobe/error.hpp"
#include "tokenprobe/feature_store.hpp"

namespace tokenprobe {

using nlohmann::json;

const ManifestEntry* Manifest::find(const std::string& model_tag, TokenType token, Split split) const {
  for (const auto& e : files) {
    if (e.model_tag == model_tag && e.token_type == token && e.split == split) return &e;
  }
  return nullptr;
}

std::filesystem::path Manifest::resolve(const ManifestEntry& entry) const {
  return entry.path.is_absolute() ? entry.path : base_dir / entry.path;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::config_error, "cannot open manifest " + path.string());
  Manifest m;
  m.base_dir = path.parent_path();
  try {
    const json doc = json::parse(in);
    for (const auto& [model, grid] : doc.at("models").items()) {
      GridShape g;
      g.rows = grid.at("rows").get<std::uint32_t>();
      g.cols = grid.at("cols").get<std::uint32_t>();
      g.patch_size = grid.value("patch_size", 0u);
      m.grids.emplace(model, g);
    }
    for (const auto& f : doc.at("files")) {
      ManifestEntry e;
      e.model_tag = f.at("model_tag").get<std::string>();
      const auto token = parse_token_type(f.at("token_type").get<std::string>());
      const auto split = parse_split(f.at("split").get<std::string>());
      if (!token || !split) fail(ErrorCode::config_error, "bad token_type or split in manifest " + path.string());
      e.token_type = *token;
      e.split = *split;
      e.path = f.at("path").get<std::string>();
      if (m.find(e.model_tag, e.token_type, e.split)) {
        fail(ErrorCode::config_error, "duplicate manifest key (" + e.model_tag + ", " +
                                          std::string(to_string(e.token_type)) + ", " +
                                          std::string(to_string(e.split)) + ")");
      }
      m.files.push_back(std::move(e));
    }
  } catch (const json::exception& ex) {
    fail(ErrorCode::config_error, "malformed manifest " + path.string() + ": " + ex.what());
  }
  return m;
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  json doc;
  doc["models"] = json::object();
  for (const auto& [model, g] : manifest.grids) {
    doc["models"][model] = {{"rows", g.rows}, {"cols", g.cols}, {"patch_size", g.patch_size}};
  }
  doc["files"] = json::array();
  for (const auto& e : manifest.files) {
    doc["files"].push_back({{"model_tag", e.model_tag},
                            {"token_type", to_string(e.token_type)},
                            {"split", to_string(e.split)},
                            {"path", e.path.generic_string()}});
  }
  std::ofstream out(path);
  if (!out) fail(ErrorCode::io_failure, "cannot write manifest " + path.string());
  out << doc.dump(2) << '\n';
}

ManifestSummary validate_manifest(const Manifest& manifest) {
  ManifestSummary summary;
  // (model, split) -> first file's per-image record counts, and that file's path
  std::map<std::pair<std::string, Split>, std::pair<std::map<ImageId, ImageSummary>, std::string>> reference;

  for (const auto& entry : manifest.files) {
    const auto path = manifest.resolve(entry);
    DatasetHandle h = [&] {
      try {
        return open_dataset(path);
      } catch (const ProbeError& e) {
        fail(ErrorCode::manifest_inconsistent, std::string("cannot open ") + path.string() + ": " + e.what());
      }
    }();
    const auto& hdr = h.header();
    if (hdr.model_tag != entry.model_tag || hdr.token_type != entry.token_type || hdr.split != entry.split) {
      fail(ErrorCode::manifest_inconsistent,
           path.string() + " header (" + hdr.model_tag + ", " + std::string(to_string(hdr.token_type)) + ", " +
               std::string(to_string(hdr.split)) + ") disagrees with its manifest key");
    }
    if (!manifest.grids.contains(entry.model_tag)) {
      fail(ErrorCode::manifest_inconsistent, "no grid shape for model " + entry.model_tag);
    }
    auto [dim_it, fresh] = summary.dims.emplace(entry.model_tag, hdr.dim);
    if (!fresh && dim_it->second != hdr.dim) {
      fail(ErrorCode::manifest_inconsistent, path.string() + " has D = " + std::to_string(hdr.dim) +
                                                 ", other files of " + entry.model_tag + " have D = " +
                                                 std::to_string(dim_it->second));
    }
    const auto key = std::make_pair(entry.model_tag, entry.split);
    auto ref = reference.find(key);
    if (ref == reference.end()) {
      reference.emplace(key, std::make_pair(h.images(), path.string()));
    } else {
      const auto& expected = ref->second.first;
      const auto& actual = h.images();
      bool same = expected.size() == actual.size();
      for (auto a = actual.begin(), b = expected.begin(); same && a != actual.end(); ++a, ++b) {
        same = a->first == b->first && a->second.record_count == b->second.record_count &&
               a->second.cls_count == b->second.cls_count;
      }
      if (!same) {
        fail(ErrorCode::manifest_inconsistent,
             path.string() + " covers different images than " + ref->second.second);
      }
    }
    ++summary.files;
  }

  for (const auto& [key, value] : reference) {
    auto& counter = key.second == Split::train ? summary.train_images : summary.test_images;
    counter[key.first] = value.first.size();
    if (key.second != Split::train) continue;
    auto test = reference.find({key.first, Split::test});
    if (test == reference.end()) continue;
    for (const auto& [image, _] : value.first) {
      if (test->second.first.contains(image)) {
        fail(ErrorCode::manifest_inconsistent,
             "image_id " + std::to_string(image) + " of " + key.first + " appears in both train and test");
      }
    }
  }
  return summary;
}

}  // namespace tokenprobe
