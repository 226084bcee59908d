// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "voxelquant/errors.hpp"

namespace vq {

// ============================================================================
// Byte-level IO (little-endian throughout)
// ============================================================================

class ByteWriter {
  public:
    void u8(uint8_t v) { buf_.push_back(v); }
    void u16(uint16_t v) { append(&v, 2); }
    void u32(uint32_t v) { append(&v, 4); }
    void u64(uint64_t v) { append(&v, 8); }
    void i32(int32_t v) { append(&v, 4); }
    void f64(double v) { append(&v, 8); }
    void bytes(const void* p, size_t n) { append(p, n); }
    void str(const std::string& s);

    const std::vector<uint8_t>& data() const { return buf_; }
    std::vector<uint8_t> take() { return std::move(buf_); }
    size_t size() const { return buf_.size(); }

  private:
    void append(const void* p, size_t n) {
        const auto* b = static_cast<const uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    std::vector<uint8_t> buf_;
};

/// Cursor over a byte span; every read is bounds-checked and raises
/// TruncatedFile on underrun.
class ByteReader {
  public:
    ByteReader(const uint8_t* data, size_t size) : data_(data), size_(size) {}
    explicit ByteReader(const std::vector<uint8_t>& v) : ByteReader(v.data(), v.size()) {}

    uint8_t u8();
    uint16_t u16();
    uint32_t u32();
    uint64_t u64();
    int32_t i32();
    double f64();
    std::string str();
    void bytes(void* out, size_t n);
    void skip(size_t n);

    size_t pos() const { return pos_; }
    size_t remaining() const { return size_ - pos_; }

  private:
    void need(size_t n) const {
        if (size_ - pos_ < n)
            raise(ErrorCode::TruncatedFile,
                  "need " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) +
                      ", only " + std::to_string(size_ - pos_) + " available");
    }
    const uint8_t* data_;
    size_t size_;
    size_t pos_ = 0;
};

// ============================================================================
// Hashing
// ============================================================================

/// CRC-32 (IEEE 802.3 polynomial, reflected).
uint32_t crc32(const uint8_t* data, size_t size, uint32_t seed = 0);

/// FNV-1a 64-bit, used for artifact content hashes in manifests.
uint64_t fnv1a64(const uint8_t* data, size_t size);
std::string fnv1a64_hex(const std::vector<uint8_t>& data);

// ============================================================================
// Deterministic RNG
// ============================================================================

/// splitmix64-based generator. Self-contained so streams are identical across
/// standard libraries and platforms.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64();
    /// uniform in [0, 1)
    double uniform();
    /// uniform in [lo, hi)
    double uniform(double lo, double hi);
    /// uniform integer in [lo, hi] inclusive
    int64_t uniform_int(int64_t lo, int64_t hi);
    /// standard normal via Box-Muller (cached second value)
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// derive an independent stream (for per-item generators)
    Rng fork(uint64_t salt) const;

  private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// ============================================================================
// Parallel helper
// ============================================================================

/// Runs fn(begin, end) over [0, n) split into contiguous chunks across
/// `threads` workers. With threads <= 1 runs inline. Chunk boundaries depend
/// only on (n, threads); work inside a chunk is sequential, so any
/// per-element computation with a fixed internal order is thread-count
/// invariant.
void parallel_for(int64_t n, int threads, const std::function<void(int64_t, int64_t)>& fn);

// ============================================================================
// File helpers
// ============================================================================

std::vector<uint8_t> read_file(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const void* data, size_t size);
void write_file(const std::filesystem::path& path, const std::vector<uint8_t>& data);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace vq
