#ifndef GEOINV_FIELD_STORE_HPP
#define GEOINV_FIELD_STORE_HPP

#include <array>
#include <bit>
#include <numeric>
#include <unistd.h>
#include <atomic>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "geoinv/sparse.hpp"

namespace geoinv {

enum class Precision : std::uint32_t { full = 1, single = 2 };

namespace detail {

template <typename T>
constexpr std::uint32_t scalar_components() {
  return is_complex_v<T> ? 2U : 1U;
}

inline void put_u32(char* p, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) p[i] = static_cast<char>((v >> (8 * i)) & 0xffU);
}
inline void put_u64(char* p, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) p[i] = static_cast<char>((v >> (8 * i)) & 0xffU);
}
inline std::uint32_t get_u32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}
inline std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

// Little-endian IEEE encoding; the host is assumed little-endian.
static_assert(std::endian::native == std::endian::little, "field files assume a little-endian host");

}  // namespace detail

/// Chunk header, 64 bytes:
///   0  magic "GEOINVF1"
///   8  u32 format version (1)
///  12  u32 precision (1 = float64, 2 = float32)
///  16  u32 scalar components (1 real, 2 complex interleaved)
///  20  u32 reserved
///  24  u64 rows (field length)
///  32  u64 cols (sources in this chunk)
///  40  u64 payload bytes
///  48  16 bytes reserved
/// followed by cols u64 source indices and the column-major payload.
struct FieldChunkHeader {
  static constexpr std::array<char, 8> magic{'G', 'E', 'O', 'I', 'N', 'V', 'F', '1'};
  Precision precision = Precision::full;
  std::uint32_t components = 1;
  std::uint64_t rows = 0;
  std::uint64_t cols = 0;
  std::uint64_t payload_bytes = 0;
};

/// Directory of self-describing field chunks, one file per batch of sources.
class FieldStore {
 public:
  FieldStore(std::filesystem::path dir, Precision precision, Index batch_size)
      : dir_(std::move(dir)), precision_(precision), batch_size_(batch_size) {
    require(batch_size_ >= 1, Errc::invalid_argument, "field store batch size must be at least 1");
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    require(!ec, Errc::io, "cannot create field store directory " + dir_.string());
  }

  const std::filesystem::path& directory() const { return dir_; }
  Precision precision() const { return precision_; }
  Index batch_size() const { return batch_size_; }

  std::filesystem::path chunk_path(const std::string& tag, Index chunk) const {
    return dir_ / (tag + "_" + std::to_string(chunk) + ".fld");
  }

  /// Writes `fields` (rows x sources) as ceil(cols / batch_size) chunks.
  /// Returns the number of chunks written.
  template <typename T>
  Index write(const std::string& tag, const DenseBlock<T>& fields, std::span<const Index> source_ids) const {
    require(static_cast<Index>(source_ids.size()) == fields.cols, Errc::dimension_mismatch,
            "one source index per field column required");
    Index chunk = 0;
    for (Index first = 0; first < fields.cols; first += batch_size_, ++chunk) {
      const Index cols = std::min(batch_size_, fields.cols - first);
      write_chunk<T>(chunk_path(tag, chunk), fields, first, cols, source_ids.subspan(first, cols));
    }
    return chunk;
  }

  template <typename T>
  struct Chunk {
    DenseBlock<T> fields;
    std::vector<Index> source_ids;
  };

  template <typename T>
  Chunk<T> read_chunk(const std::string& tag, Index chunk) const {
    return read_chunk_file<T>(chunk_path(tag, chunk));
  }

  /// Streams chunks in order; only one chunk is resident at a time.
  template <typename T>
  void stream(const std::string& tag, Index chunks, const std::function<void(const Chunk<T>&)>& f) const {
    for (Index c = 0; c < chunks; ++c) f(read_chunk<T>(tag, c));
  }

  template <typename T>
  void write_chunk(const std::filesystem::path& path, const DenseBlock<T>& fields, Index first, Index cols,
                   std::span<const Index> ids) const {
    constexpr std::uint32_t comps = detail::scalar_components<T>();
    const std::uint64_t count = static_cast<std::uint64_t>(fields.rows) * cols * comps;
    const std::uint64_t width = precision_ == Precision::full ? 8 : 4;
    std::array<char, 64> hdr{};
    std::memcpy(hdr.data(), FieldChunkHeader::magic.data(), 8);
    detail::put_u32(hdr.data() + 8, 1);
    detail::put_u32(hdr.data() + 12, static_cast<std::uint32_t>(precision_));
    detail::put_u32(hdr.data() + 16, comps);
    detail::put_u64(hdr.data() + 24, static_cast<std::uint64_t>(fields.rows));
    detail::put_u64(hdr.data() + 32, static_cast<std::uint64_t>(cols));
    detail::put_u64(hdr.data() + 40, count * width);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), Errc::io, "cannot open " + path.string() + " for writing");
    out.write(hdr.data(), 64);
    for (Index id : ids) {
      char b[8];
      detail::put_u64(b, static_cast<std::uint64_t>(id));
      out.write(b, 8);
    }
    const auto* base = reinterpret_cast<const double*>(fields.data.data() + first * fields.rows);
    if (precision_ == Precision::full) {
      out.write(reinterpret_cast<const char*>(base), static_cast<std::streamsize>(count * 8));
    } else {
      std::vector<float> demoted(count);
      for (std::uint64_t i = 0; i < count; ++i) demoted[i] = static_cast<float>(base[i]);
      out.write(reinterpret_cast<const char*>(demoted.data()), static_cast<std::streamsize>(count * 4));
    }
    require(out.good(), Errc::io, "write failed for " + path.string());
  }

  template <typename T>
  static Chunk<T> read_chunk_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), Errc::io, "cannot open " + path.string());
    std::array<char, 64> hdr{};
    in.read(hdr.data(), 64);
    require(in.gcount() == 64 && std::memcmp(hdr.data(), FieldChunkHeader::magic.data(), 8) == 0,
            Errc::format, "bad field chunk magic in " + path.string());
    require(detail::get_u32(hdr.data() + 8) == 1, Errc::format, "unsupported field chunk version");
    const auto prec = detail::get_u32(hdr.data() + 12);
    require(prec == 1 || prec == 2, Errc::format, "unknown precision tag in " + path.string());
    const auto comps = detail::get_u32(hdr.data() + 16);
    require(comps == detail::scalar_components<T>(), Errc::format, "scalar kind mismatch in " + path.string());
    const auto rows = detail::get_u64(hdr.data() + 24);
    const auto cols = detail::get_u64(hdr.data() + 32);
    const auto bytes = detail::get_u64(hdr.data() + 40);
    const std::uint64_t width = prec == 1 ? 8 : 4;
    const std::uint64_t count = rows * cols * comps;
    require(bytes == count * width, Errc::format, "payload size disagrees with dims in " + path.string());

    Chunk<T> c;
    c.source_ids.resize(cols);
    for (auto& id : c.source_ids) {
      char b[8];
      in.read(b, 8);
      id = static_cast<Index>(detail::get_u64(b));
    }
    c.fields = DenseBlock<T>(static_cast<Index>(rows), static_cast<Index>(cols));
    auto* base = reinterpret_cast<double*>(c.fields.data.data());
    if (prec == 1) {
      in.read(reinterpret_cast<char*>(base), static_cast<std::streamsize>(count * 8));
    } else {
      std::vector<float> buf(count);
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * 4));
      for (std::uint64_t i = 0; i < count; ++i) base[i] = static_cast<double>(buf[i]);
    }
    require(static_cast<std::uint64_t>(in.gcount()) == count * width, Errc::format,
            "truncated payload in " + path.string());
    return c;
  }

 private:
  std::filesystem::path dir_;
  Precision precision_;
  Index batch_size_;
};

enum class FieldPolicy { memory_full, memory_single, disk };

/// Where a forward problem keeps its fields between simulation and the
/// sensitivity products.
struct FieldStorage {
  FieldPolicy policy = FieldPolicy::memory_full;
  std::filesystem::path directory;  ///< disk policy only
  Precision disk_precision = Precision::single;
  Index batch_size = 8;
};

/// Field container honouring a FieldStorage policy. Consumers iterate over
/// source batches; with the disk policy each batch is streamed from its chunk.
template <typename T>
class FieldCache {
 public:
  FieldCache() = default;
  explicit FieldCache(FieldStorage storage) : storage_(std::move(storage)) {}

  void store(const DenseBlock<T>& fields) {
    rows_ = fields.rows;
    cols_ = fields.cols;
    full_.data.clear();
    single_.clear();
    switch (storage_.policy) {
      case FieldPolicy::memory_full:
        full_ = fields;
        break;
      case FieldPolicy::memory_single: {
        const auto* base = reinterpret_cast<const double*>(fields.data.data());
        single_.assign(base, base + fields.data.size() * detail::scalar_components<T>());
        break;
      }
      case FieldPolicy::disk: {
        if (!tag_) tag_ = std::make_shared<std::string>(fresh_tag());
        FieldStore fs(storage_.directory, storage_.disk_precision, storage_.batch_size);
        std::vector<Index> ids(static_cast<std::size_t>(cols_));
        std::iota(ids.begin(), ids.end(), Index{0});
        chunks_ = fs.write(*tag_, fields, ids);
        break;
      }
    }
    stored_ = true;
  }

  bool empty() const { return !stored_; }
  Index rows() const { return rows_; }
  Index cols() const { return cols_; }

  /// f(first_source, batch) over consecutive source batches.
  void for_each_batch(const std::function<void(Index, const DenseBlock<T>&)>& f) const {
    require(stored_, Errc::stale_cache, "no fields stored");
    if (storage_.policy == FieldPolicy::disk) {
      FieldStore fs(storage_.directory, storage_.disk_precision, storage_.batch_size);
      fs.stream<T>(*tag_, chunks_, [&](const FieldStore::Chunk<T>& c) { f(c.source_ids.front(), c.fields); });
      return;
    }
    if (storage_.policy == FieldPolicy::memory_full) {
      f(0, full_);
      return;
    }
    DenseBlock<T> b(rows_, cols_);
    auto* base = reinterpret_cast<double*>(b.data.data());
    for (std::size_t i = 0; i < single_.size(); ++i) base[i] = static_cast<double>(single_[i]);
    f(0, b);
  }

  const FieldStorage& storage() const { return storage_; }

 private:
  static std::string fresh_tag() {
    static std::atomic<std::uint64_t> counter{0};
    return "fields_" + std::to_string(::getpid()) + "_" + std::to_string(counter.fetch_add(1));
  }

  FieldStorage storage_;
  DenseBlock<T> full_;
  std::vector<float> single_;
  std::shared_ptr<std::string> tag_;
  Index chunks_ = 0;
  Index rows_ = 0;
  Index cols_ = 0;
  bool stored_ = false;
};

}  // namespace geoinv

#endif  // GEOINV_FIELD_STORE_HPP
