#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tokenprobe/types.hpp"

namespace tokenprobe {

inline constexpr char kFeatureMagic[4] = {'T', 'P', 'F', '1'};
inline constexpr std::uint32_t kFeatureVersion = 1;
// row == col == kClsSentinel marks the CLS token of an image.
inline constexpr std::uint16_t kClsSentinel = 0xFFFF;

struct LabelEntry {
  LabelId label_id = 0;
  Category category = Category::object;
  std::string name;

  bool operator==(const LabelEntry&) const = default;
};

struct TokenRecord {
  ImageId image_id = 0;
  std::uint16_t row = 0;
  std::uint16_t col = 0;
  std::vector<LabelId> labels;
  Vector vector;

  bool is_cls() const { return row == kClsSentinel && col == kClsSentinel; }
  bool has_label(LabelId id) const;

  bool operator==(const TokenRecord&) const = default;
};

struct DatasetHeader {
  std::uint32_t version = kFeatureVersion;
  std::uint32_t dim = 0;
  std::uint64_t record_count = 0;
  TokenType token_type = TokenType::x2;
  Split split = Split::train;
  std::string model_tag;

  bool operator==(const DatasetHeader&) const = default;
};

// Which records a scan yields. Default-constructed filters pass everything.
struct RecordFilter {
  enum class Kind { any, cls, patch };

  Kind kind = Kind::any;
  // When set, a record passes only if its label set intersects this one.
  std::optional<std::vector<LabelId>> any_label;
  // When set, a record passes only if its image is in this set. Must be
  // sorted; scan() sorts it.
  std::optional<std::vector<ImageId>> images;
  std::function<bool(const TokenRecord&)> predicate;

  static RecordFilter cls_only();
  static RecordFilter patches_only();
  static RecordFilter with_any_label(std::vector<LabelId> labels);
  static RecordFilter for_task(Task task);

  bool matches(const TokenRecord& r) const;
};

class DatasetHandle;

// Forward-only reader over one file. Each cursor owns its stream, so several
// cursors may scan the same handle concurrently.
class RecordCursor {
 public:
  // Fills `out` with the next matching record. With load_vectors false the
  // vector field is left empty and its bytes are skipped.
  bool next(TokenRecord& out, bool load_vectors = true);

  std::uint64_t position() const { return index_; }

 private:
  friend class DatasetHandle;
  RecordCursor(const DatasetHandle& handle, RecordFilter filter);

  const DatasetHandle* handle_;
  RecordFilter filter_;
  std::ifstream in_;
  std::uint64_t index_ = 0;
};

struct ImageSummary {
  std::uint32_t record_count = 0;
  std::uint32_t cls_count = 0;
};

class DatasetHandle {
 public:
  const DatasetHeader& header() const { return header_; }
  const std::vector<LabelEntry>& labels() const { return labels_; }
  const std::filesystem::path& path() const { return path_; }

  const LabelEntry* find_label(LabelId id) const;
  const LabelEntry& label(LabelId id) const;

  RecordCursor scan(RecordFilter filter = {}) const;
  void for_each(const RecordFilter& filter, const std::function<void(const TokenRecord&)>& fn,
                bool load_vectors = true) const;
  std::vector<TokenRecord> read_all(const RecordFilter& filter = {}) const;

  // Per-image record counts, computed once at open without loading vectors.
  const std::map<ImageId, ImageSummary>& images() const { return images_; }

 private:
  friend DatasetHandle open_dataset(const std::filesystem::path& path);
  friend class RecordCursor;

  std::filesystem::path path_;
  DatasetHeader header_;
  std::vector<LabelEntry> labels_;
  std::unordered_map<LabelId, std::size_t> label_index_;
  std::uint64_t records_offset_ = 0;
  std::map<ImageId, ImageSummary> images_;
};

// Streams records to `<path>.tmp` and renames onto `path` on commit(). A
// writer destroyed without commit() removes the temporary file.
class DatasetWriter {
 public:
  DatasetWriter(std::filesystem::path path, DatasetHeader header, std::vector<LabelEntry> labels);
  ~DatasetWriter();

  DatasetWriter(const DatasetWriter&) = delete;
  DatasetWriter& operator=(const DatasetWriter&) = delete;

  void append(const TokenRecord& record);
  void commit();

  std::uint64_t written() const { return written_; }

 private:
  void abort() noexcept;

  std::filesystem::path path_;
  std::filesystem::path tmp_path_;
  DatasetHeader header_;
  std::unordered_map<LabelId, Category> known_labels_;
  std::ofstream out_;
  std::uint64_t count_offset_ = 0;
  std::uint64_t written_ = 0;
  bool done_ = false;
};

void write_dataset(const std::filesystem::path& path, const DatasetHeader& header,
                   const std::vector<LabelEntry>& labels, std::span<const TokenRecord> records);

DatasetHandle open_dataset(const std::filesystem::path& path);

// Byte size of one serialized record.
std::uint64_t record_size(std::uint32_t dim, std::size_t label_count);

}  // namespace tokenprobe
