#include "tokenprobe/feature_store.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <limits>
#include <system_error>

#include "tokenprobe/error.hpp"

namespace tokenprobe {
namespace {

constexpr std::uint64_t kRecordPrefixBytes = 4 + 2 + 2 + 2;

class ByteWriter {
 public:
  explicit ByteWriter(std::ostream& out) : out_(out) {}

  template <typename T>
  void put(T v) {
    static_assert(std::is_unsigned_v<T>);
    std::array<char, sizeof(T)> buf;
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out_.write(buf.data(), buf.size());
  }

  void put_f32(float f) { put(std::bit_cast<std::uint32_t>(f)); }

  void put_string16(const std::string& s, const char* what) {
    if (s.size() > std::numeric_limits<std::uint16_t>::max()) {
      fail(ErrorCode::corrupt, std::string(what) + " longer than 65535 bytes");
    }
    put(static_cast<std::uint16_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

 private:
  std::ostream& out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::istream& in) : in_(in) {}

  bool read(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    return static_cast<std::size_t>(in_.gcount()) == n;
  }

  template <typename T>
  std::optional<T> get() {
    std::array<unsigned char, sizeof(T)> buf;
    if (!read(reinterpret_cast<char*>(buf.data()), buf.size())) return std::nullopt;
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(buf[i]) << (8 * i));
    return v;
  }

  std::optional<std::string> get_string16() {
    auto len = get<std::uint16_t>();
    if (!len) return std::nullopt;
    std::string s(*len, '\0');
    if (*len && !read(s.data(), *len)) return std::nullopt;
    return s;
  }

 private:
  std::istream& in_;
};

template <typename T>
T require(std::optional<T> v, const std::filesystem::path& path, const char* field) {
  if (!v) fail(ErrorCode::truncated, path.string() + ": file ends inside header field '" + field + "'");
  return *v;
}

// Decodes the body of a record whose prefix has been read. Returns false on a
// short read.
bool read_record_body(std::istream& in, std::uint16_t label_count, std::uint32_t dim,
                      TokenRecord& out, bool load_vectors) {
  ByteReader r(in);
  out.labels.resize(label_count);
  for (auto& id : out.labels) {
    auto v = r.get<std::uint32_t>();
    if (!v) return false;
    id = *v;
  }
  if (!load_vectors) {
    out.vector.clear();
    in.seekg(static_cast<std::streamoff>(dim) * 4, std::ios::cur);
    return static_cast<bool>(in);
  }
  std::vector<unsigned char> raw(static_cast<std::size_t>(dim) * 4);
  if (!r.read(reinterpret_cast<char*>(raw.data()), raw.size())) return false;
  out.vector.resize(dim);
  for (std::uint32_t i = 0; i < dim; ++i) {
    const unsigned char* p = raw.data() + 4 * static_cast<std::size_t>(i);
    const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                               (static_cast<std::uint32_t>(p[2]) << 16) |
                               (static_cast<std::uint32_t>(p[3]) << 24);
    out.vector[i] = std::bit_cast<float>(bits);
  }
  return true;
}

}  // namespace

bool TokenRecord::has_label(LabelId id) const {
  return std::find(labels.begin(), labels.end(), id) != labels.end();
}

RecordFilter RecordFilter::cls_only() {
  RecordFilter f;
  f.kind = Kind::cls;
  return f;
}

RecordFilter RecordFilter::patches_only() {
  RecordFilter f;
  f.kind = Kind::patch;
  return f;
}

RecordFilter RecordFilter::with_any_label(std::vector<LabelId> labels) {
  RecordFilter f;
  f.any_label = std::move(labels);
  return f;
}

RecordFilter RecordFilter::for_task(Task task) {
  return task == Task::classification ? cls_only() : patches_only();
}

bool RecordFilter::matches(const TokenRecord& r) const {
  if (kind == Kind::cls && !r.is_cls()) return false;
  if (kind == Kind::patch && r.is_cls()) return false;
  if (images && !std::binary_search(images->begin(), images->end(), r.image_id)) return false;
  if (any_label) {
    bool hit = std::any_of(r.labels.begin(), r.labels.end(), [&](LabelId id) {
      return std::find(any_label->begin(), any_label->end(), id) != any_label->end();
    });
    if (!hit) return false;
  }
  if (predicate && !predicate(r)) return false;
  return true;
}

std::uint64_t record_size(std::uint32_t dim, std::size_t label_count) {
  return kRecordPrefixBytes + 4 * static_cast<std::uint64_t>(label_count) + 4 * static_cast<std::uint64_t>(dim);
}

// ---------------------------------------------------------------- writer

DatasetWriter::DatasetWriter(std::filesystem::path path, DatasetHeader header, std::vector<LabelEntry> labels)
    : path_(std::move(path)), header_(std::move(header)) {
  if (header_.dim == 0) fail(ErrorCode::dimension_mismatch, "header dimension must be positive");
  if (header_.version != kFeatureVersion) {
    fail(ErrorCode::unsupported_version, "writer only emits version " + std::to_string(kFeatureVersion));
  }
  if (labels.size() > std::numeric_limits<std::uint32_t>::max()) fail(ErrorCode::corrupt, "label table too large");
  for (const auto& l : labels) {
    if (!known_labels_.emplace(l.label_id, l.category).second) {
      fail(ErrorCode::corrupt, "duplicate label_id " + std::to_string(l.label_id));
    }
  }

  tmp_path_ = path_;
  tmp_path_ += ".tmp";
  out_.open(tmp_path_, std::ios::binary | std::ios::trunc);
  if (!out_) fail(ErrorCode::io_failure, "cannot open " + tmp_path_.string() + " for writing");

  try {
    ByteWriter w(out_);
    out_.write(kFeatureMagic, 4);
    w.put(header_.version);
    w.put(header_.dim);
    count_offset_ = static_cast<std::uint64_t>(out_.tellp());
    w.put(std::uint64_t{0});
    w.put(static_cast<std::uint8_t>(header_.token_type));
    w.put(static_cast<std::uint8_t>(header_.split));
    w.put_string16(header_.model_tag, "model_tag");
    w.put(static_cast<std::uint32_t>(labels.size()));
    for (const auto& l : labels) {
      w.put(l.label_id);
      w.put(static_cast<std::uint8_t>(l.category));
      w.put_string16(l.name, "label name");
    }
    if (!out_) fail(ErrorCode::io_failure, "write failed on " + tmp_path_.string());
  } catch (...) {
    abort();
    throw;
  }
}

DatasetWriter::~DatasetWriter() {
  if (!done_) abort();
}

void DatasetWriter::abort() noexcept {
  done_ = true;
  out_.close();
  std::error_code ec;
  std::filesystem::remove(tmp_path_, ec);
}

void DatasetWriter::append(const TokenRecord& record) {
  if (done_) fail(ErrorCode::io_failure, "append on a closed writer");
  try {
    if (record.vector.size() != header_.dim) {
      fail(ErrorCode::dimension_mismatch, "record " + std::to_string(written_) + " has vector length " +
                                              std::to_string(record.vector.size()) + ", header D is " +
                                              std::to_string(header_.dim));
    }
    if ((record.row == kClsSentinel) != (record.col == kClsSentinel)) {
      fail(ErrorCode::corrupt, "record " + std::to_string(written_) + " uses the CLS sentinel on one axis only");
    }
    if (record.labels.size() > std::numeric_limits<std::uint16_t>::max()) {
      fail(ErrorCode::corrupt, "record " + std::to_string(written_) + " has too many labels");
    }
    for (LabelId id : record.labels) {
      if (!known_labels_.contains(id)) {
        fail(ErrorCode::unknown_label,
             "record " + std::to_string(written_) + " references label_id " + std::to_string(id));
      }
    }
    ByteWriter w(out_);
    w.put(record.image_id);
    w.put(record.row);
    w.put(record.col);
    w.put(static_cast<std::uint16_t>(record.labels.size()));
    for (LabelId id : record.labels) w.put(id);
    for (float f : record.vector) w.put_f32(f);
    if (!out_) fail(ErrorCode::io_failure, "write failed on " + tmp_path_.string());
    ++written_;
  } catch (...) {
    abort();
    throw;
  }
}

void DatasetWriter::commit() {
  if (done_) fail(ErrorCode::io_failure, "commit on a closed writer");
  try {
    out_.seekp(static_cast<std::streamoff>(count_offset_));
    ByteWriter(out_).put(written_);
    out_.flush();
    if (!out_) fail(ErrorCode::io_failure, "write failed on " + tmp_path_.string());
    out_.close();
    std::error_code ec;
    std::filesystem::rename(tmp_path_, path_, ec);
    if (ec) fail(ErrorCode::io_failure, "rename to " + path_.string() + " failed: " + ec.message());
    done_ = true;
  } catch (...) {
    abort();
    throw;
  }
}

void write_dataset(const std::filesystem::path& path, const DatasetHeader& header,
                   const std::vector<LabelEntry>& labels, std::span<const TokenRecord> records) {
  DatasetWriter writer(path, header, labels);
  for (const auto& r : records) writer.append(r);
  writer.commit();
}

// ---------------------------------------------------------------- reader

DatasetHandle open_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io_failure, "cannot open " + path.string());
  std::error_code ec;
  const std::uint64_t file_size = std::filesystem::file_size(path, ec);
  if (ec) fail(ErrorCode::io_failure, "cannot stat " + path.string());

  DatasetHandle h;
  h.path_ = path;
  ByteReader r(in);

  char magic[4];
  if (!r.read(magic, 4) || std::memcmp(magic, kFeatureMagic, 4) != 0) {
    fail(ErrorCode::bad_magic, path.string() + " is not a TPF1 feature file");
  }
  h.header_.version = require(r.get<std::uint32_t>(), path, "version");
  if (h.header_.version != kFeatureVersion) {
    fail(ErrorCode::unsupported_version, path.string() + " has version " + std::to_string(h.header_.version));
  }
  h.header_.dim = require(r.get<std::uint32_t>(), path, "dim");
  if (h.header_.dim == 0) fail(ErrorCode::corrupt, path.string() + " declares D = 0");
  h.header_.record_count = require(r.get<std::uint64_t>(), path, "record_count");
  const auto token = require(r.get<std::uint8_t>(), path, "token_type");
  if (token > static_cast<std::uint8_t>(TokenType::x2)) fail(ErrorCode::corrupt, "invalid token_type byte");
  h.header_.token_type = static_cast<TokenType>(token);
  const auto split = require(r.get<std::uint8_t>(), path, "split");
  if (split > static_cast<std::uint8_t>(Split::test)) fail(ErrorCode::corrupt, "invalid split byte");
  h.header_.split = static_cast<Split>(split);
  h.header_.model_tag = require(r.get_string16(), path, "model_tag");

  const auto label_count = require(r.get<std::uint32_t>(), path, "label_count");
  h.labels_.reserve(std::min<std::uint32_t>(label_count, 1u << 16));
  for (std::uint32_t i = 0; i < label_count; ++i) {
    LabelEntry e;
    e.label_id = require(r.get<std::uint32_t>(), path, "label_id");
    const auto cat = require(r.get<std::uint8_t>(), path, "category");
    if (cat > static_cast<std::uint8_t>(Category::image_class)) fail(ErrorCode::corrupt, "invalid category byte");
    e.category = static_cast<Category>(cat);
    e.name = require(r.get_string16(), path, "label name");
    if (!h.label_index_.emplace(e.label_id, h.labels_.size()).second) {
      fail(ErrorCode::corrupt, "duplicate label_id " + std::to_string(e.label_id));
    }
    h.labels_.push_back(std::move(e));
  }
  h.records_offset_ = static_cast<std::uint64_t>(in.tellg());

  // Walk the record prefixes so truncation surfaces at open time.
  std::uint64_t offset = h.records_offset_;
  for (std::uint64_t i = 0; i < h.header_.record_count; ++i) {
    if (offset + kRecordPrefixBytes > file_size) {
      fail(ErrorCode::truncated, path.string() + ": record " + std::to_string(i) + " of " +
                                     std::to_string(h.header_.record_count) + " is cut off");
    }
    in.seekg(static_cast<std::streamoff>(offset));
    const auto image = r.get<std::uint32_t>();
    const auto row = r.get<std::uint16_t>();
    const auto col = r.get<std::uint16_t>();
    const auto n_labels = r.get<std::uint16_t>();
    if (!image || !row || !col || !n_labels) {
      fail(ErrorCode::io_failure, path.string() + ": read failed at record " + std::to_string(i));
    }
    const std::uint64_t size = record_size(h.header_.dim, *n_labels);
    if (offset + size > file_size) {
      fail(ErrorCode::truncated, path.string() + ": record " + std::to_string(i) + " of " +
                                     std::to_string(h.header_.record_count) + " is cut off");
    }
    auto& summary = h.images_[*image];
    ++summary.record_count;
    if (*row == kClsSentinel && *col == kClsSentinel) ++summary.cls_count;
    offset += size;
  }
  if (offset != file_size) {
    fail(ErrorCode::corrupt, path.string() + ": " + std::to_string(file_size - offset) +
                                 " trailing bytes after the declared records");
  }
  return h;
}

const LabelEntry* DatasetHandle::find_label(LabelId id) const {
  auto it = label_index_.find(id);
  return it == label_index_.end() ? nullptr : &labels_[it->second];
}

const LabelEntry& DatasetHandle::label(LabelId id) const {
  const LabelEntry* e = find_label(id);
  if (!e) fail(ErrorCode::unknown_label, "label_id " + std::to_string(id) + " not in " + path_.string());
  return *e;
}

RecordCursor DatasetHandle::scan(RecordFilter filter) const { return RecordCursor(*this, std::move(filter)); }

void DatasetHandle::for_each(const RecordFilter& filter, const std::function<void(const TokenRecord&)>& fn,
                             bool load_vectors) const {
  RecordCursor cursor = scan(filter);
  TokenRecord rec;
  while (cursor.next(rec, load_vectors)) fn(rec);
}

std::vector<TokenRecord> DatasetHandle::read_all(const RecordFilter& filter) const {
  std::vector<TokenRecord> out;
  for_each(filter, [&](const TokenRecord& r) { out.push_back(r); });
  return out;
}

RecordCursor::RecordCursor(const DatasetHandle& handle, RecordFilter filter)
    : handle_(&handle), filter_(std::move(filter)), in_(handle.path_, std::ios::binary) {
  if (!in_) fail(ErrorCode::io_failure, "cannot open " + handle.path_.string());
  if (filter_.images) std::sort(filter_.images->begin(), filter_.images->end());
  in_.seekg(static_cast<std::streamoff>(handle.records_offset_));
}

bool RecordCursor::next(TokenRecord& out, bool load_vectors) {
  const auto& header = handle_->header_;
  ByteReader r(in_);
  while (index_ < header.record_count) {
    const auto image = r.get<std::uint32_t>();
    const auto row = r.get<std::uint16_t>();
    const auto col = r.get<std::uint16_t>();
    const auto n_labels = r.get<std::uint16_t>();
    if (!image || !row || !col || !n_labels) {
      fail(ErrorCode::truncated, handle_->path_.string() + ": record " + std::to_string(index_) + " is cut off");
    }
    out.image_id = *image;
    out.row = *row;
    out.col = *col;
    if (!read_record_body(in_, *n_labels, header.dim, out, load_vectors)) {
      fail(ErrorCode::truncated, handle_->path_.string() + ": record " + std::to_string(index_) + " is cut off");
    }
    ++index_;
    if (filter_.matches(out)) return true;
  }
  return false;
}

}  // namespace tokenprobe
