#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "hmnet/error.hpp"

namespace hmnet {

/// Unit-L2 copy of `x`; std::nullopt is the skip sentinel for a zero (or
/// non-finite) vector.
inline std::optional<std::vector<double>> normalize_pattern(std::span<const double> x) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double norm = std::sqrt(ss);
  if (!(norm > 0.0) || !std::isfinite(norm)) return std::nullopt;
  std::vector<double> out(x.begin(), x.end());
  for (auto& v : out) v /= norm;
  return out;
}

struct RetrievalResult {
  std::size_t k = 0;                // effective K = min(K, count)
  std::size_t dim = 0;
  std::vector<double> patterns;     // k x dim copy of the matched rows
  std::vector<double> similarities; // non-increasing
  std::vector<std::size_t> indices; // buffer slots

  bool empty() const { return k == 0; }
};

/// Fixed-capacity FIFO of unit-norm pattern vectors with exact top-K
/// inner-product search.
///
/// Single writer; concurrent const reads are fine between writes.
class PatternMemory {
 public:
  static constexpr std::array<char, 4> kMagic{'H', 'M', 'P', 'M'};
  static constexpr std::uint32_t kVersion = 1;

  PatternMemory() = default;

  PatternMemory(std::size_t capacity, std::size_t dim) : capacity_(capacity), dim_(dim) {
    if (capacity == 0 || dim == 0) throw ShapeError("PatternMemory: capacity and dim must be positive");
    buffer_.assign(capacity * dim, 0.0);
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  std::size_t count() const { return count_; }
  std::size_t cursor() const { return cursor_; }
  bool empty() const { return count_ == 0; }

  std::span<const double> row(std::size_t slot) const {
    return std::span<const double>(buffer_).subspan(slot * dim_, dim_);
  }

  std::span<const double> buffer() const { return buffer_; }

  void clear() {
    std::fill(buffer_.begin(), buffer_.end(), 0.0);
    cursor_ = 0;
    count_ = 0;
  }

  /// Normalizes and writes one pattern at the cursor. Returns false when the
  /// pattern was a zero vector and was skipped.
  bool insert(std::span<const double> pattern) {
    if (pattern.size() != dim_) {
      throw ShapeError("PatternMemory::insert: pattern dim " + std::to_string(pattern.size()) +
                       " != memory dim " + std::to_string(dim_));
    }
    auto unit = normalize_pattern(pattern);
    if (!unit) return false;
    std::copy(unit->begin(), unit->end(), buffer_.begin() + static_cast<std::ptrdiff_t>(cursor_ * dim_));
    cursor_ = (cursor_ + 1) % capacity_;
    count_ = std::min(count_ + 1, capacity_);
    return true;
  }

  /// Inserts the rows of a P x dim block in row order. Returns the number
  /// actually stored.
  std::size_t insert_batch(std::span<const double> patterns) {
    if (patterns.size() % dim_ != 0) {
      throw ShapeError("PatternMemory::insert_batch: " + std::to_string(patterns.size()) +
                       " values is not a multiple of dim " + std::to_string(dim_));
    }
    std::size_t stored = 0;
    for (std::size_t off = 0; off < patterns.size(); off += dim_) {
      stored += insert(patterns.subspan(off, dim_)) ? 1 : 0;
    }
    return stored;
  }

  /// Exact top-K by inner product. Ties go to the lower buffer slot. An empty
  /// memory yields an empty result.
  RetrievalResult top_k(std::span<const double> query, std::size_t k) const {
    RetrievalResult res;
    res.dim = dim_;
    if (query.size() != dim_) throw ShapeError("PatternMemory::top_k: query dim mismatch");
    std::vector<double> scores(count_);
    std::vector<std::size_t> slots(count_);
    top_k_into(query, k, scores, slots, res);
    return res;
  }

  /// Runs top_k for every row of a Q x dim query block. All results share
  /// the same effective K.
  std::vector<RetrievalResult> top_k_batch(std::span<const double> queries, std::size_t k) const {
    if (queries.size() % dim_ != 0) throw ShapeError("PatternMemory::top_k_batch: query block dim mismatch");
    std::vector<RetrievalResult> out(queries.size() / dim_);
    std::vector<double> scores(count_);
    std::vector<std::size_t> slots(count_);
    for (std::size_t q = 0; q < out.size(); ++q) {
      out[q].dim = dim_;
      top_k_into(queries.subspan(q * dim_, dim_), k, scores, slots, out[q]);
    }
    return out;
  }

  // Binary snapshot: magic, version, M, d, cursor, count (u64 LE), then
  // M*d float64 LE.
  void write(std::ostream& os) const {
    os.write(kMagic.data(), kMagic.size());
    write_u32(os, kVersion);
    for (std::uint64_t v : {std::uint64_t(capacity_), std::uint64_t(dim_), std::uint64_t(cursor_),
                            std::uint64_t(count_)}) {
      write_u64(os, v);
    }
    for (double v : buffer_) write_f64(os, v);
    if (!os) throw RuntimeFailure("PatternMemory: write failed");
  }

  static PatternMemory read(std::istream& is) {
    std::array<char, 4> magic{};
    is.read(magic.data(), magic.size());
    if (!is || magic != kMagic) throw ValidationError("PatternMemory: bad snapshot magic");
    if (read_u32(is) != kVersion) throw ValidationError("PatternMemory: unsupported snapshot version");
    const auto capacity = read_u64(is);
    const auto dim = read_u64(is);
    const auto cursor = read_u64(is);
    const auto count = read_u64(is);
    if (capacity == 0 || dim == 0 || cursor >= capacity || count > capacity) {
      throw ValidationError("PatternMemory: inconsistent snapshot header");
    }
    PatternMemory mem(capacity, dim);
    mem.cursor_ = cursor;
    mem.count_ = count;
    for (auto& v : mem.buffer_) v = read_f64(is);
    if (!is) throw ValidationError("PatternMemory: truncated snapshot");
    return mem;
  }

  bool operator==(const PatternMemory& other) const = default;

  // Little-endian primitives, shared with the checkpoint and cache writers.
  static void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
  }
  static void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
  }
  static void write_f64(std::ostream& os, double v) { write_u64(os, std::bit_cast<std::uint64_t>(v)); }
  static std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4] = {};
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
    return v;
  }
  static std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8] = {};
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return v;
  }
  static double read_f64(std::istream& is) { return std::bit_cast<double>(read_u64(is)); }

 private:
  void top_k_into(std::span<const double> query, std::size_t k, std::vector<double>& scores,
                  std::vector<std::size_t>& slots, RetrievalResult& res) const {
    res.k = std::min(k, count_);
    res.patterns.clear();
    res.similarities.clear();
    res.indices.clear();
    if (res.k == 0) return;
    const double* q = query.data();
    for (std::size_t s = 0; s < count_; ++s) {
      const double* r = buffer_.data() + s * dim_;
      double acc = 0.0;
      for (std::size_t j = 0; j < dim_; ++j) acc += q[j] * r[j];
      scores[s] = acc;
    }
    std::iota(slots.begin(), slots.end(), std::size_t{0});
    auto better = [&scores](std::size_t a, std::size_t b) {
      return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
    };
    std::partial_sort(slots.begin(), slots.begin() + static_cast<std::ptrdiff_t>(res.k), slots.end(), better);
    res.indices.assign(slots.begin(), slots.begin() + static_cast<std::ptrdiff_t>(res.k));
    res.similarities.reserve(res.k);
    res.patterns.reserve(res.k * dim_);
    for (auto s : res.indices) {
      res.similarities.push_back(scores[s]);
      const auto r = row(s);
      res.patterns.insert(res.patterns.end(), r.begin(), r.end());
    }
  }

  std::size_t capacity_ = 0;
  std::size_t dim_ = 0;
  std::size_t cursor_ = 0;
  std::size_t count_ = 0;
  std::vector<double> buffer_;
};

}  // namespace hmnet
