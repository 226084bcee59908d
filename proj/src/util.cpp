// SPDX-License-Identifier: Apache-2.0
#include "voxelquant/util.hpp"

#include <array>
#include <cmath>
#include <fstream>

namespace vq {

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::SyntaxError: return "SyntaxError";
        case ErrorCode::UnknownOpKind: return "UnknownOpKind";
        case ErrorCode::DuplicateTensorName: return "DuplicateTensorName";
        case ErrorCode::WeightOutOfBounds: return "WeightOutOfBounds";
        case ErrorCode::CycleDetected: return "CycleDetected";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::DanglingInput: return "DanglingInput";
        case ErrorCode::NonFiniteValue: return "NonFiniteValue";
        case ErrorCode::EmptyObserver: return "EmptyObserver";
        case ErrorCode::EmptyDataset: return "EmptyDataset";
        case ErrorCode::InputShapeMismatch: return "InputShapeMismatch";
        case ErrorCode::QuantizedValueOutOfRange: return "QuantizedValueOutOfRange";
        case ErrorCode::MissingCalibration: return "MissingCalibration";
        case ErrorCode::PolicyUnsupportedKind: return "PolicyUnsupportedKind";
        case ErrorCode::UnsupportedBits: return "UnsupportedBits";
        case ErrorCode::MalformedQdqPattern: return "MalformedQdqPattern";
        case ErrorCode::AccumulatorOverflow: return "AccumulatorOverflow";
        case ErrorCode::BadMagic: return "BadMagic";
        case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
        case ErrorCode::TruncatedFile: return "TruncatedFile";
        case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
        case ErrorCode::WorkspaceTooSmall: return "WorkspaceTooSmall";
        case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::MissingArtifact: return "MissingArtifact";
        case ErrorCode::IoError: return "IoError";
    }
    return "UnknownError";
}

// ============================================================================
// ByteWriter / ByteReader
// ============================================================================

void ByteWriter::str(const std::string& s) {
    if (s.size() > 0xffff)
        raise(ErrorCode::InvalidConfig, "string too long to serialize: " + std::to_string(s.size()));
    u16(static_cast<uint16_t>(s.size()));
    bytes(s.data(), s.size());
}

uint8_t ByteReader::u8() {
    need(1);
    return data_[pos_++];
}
uint16_t ByteReader::u16() {
    need(2);
    uint16_t v;
    std::memcpy(&v, data_ + pos_, 2);
    pos_ += 2;
    return v;
}
uint32_t ByteReader::u32() {
    need(4);
    uint32_t v;
    std::memcpy(&v, data_ + pos_, 4);
    pos_ += 4;
    return v;
}
uint64_t ByteReader::u64() {
    need(8);
    uint64_t v;
    std::memcpy(&v, data_ + pos_, 8);
    pos_ += 8;
    return v;
}
int32_t ByteReader::i32() {
    need(4);
    int32_t v;
    std::memcpy(&v, data_ + pos_, 4);
    pos_ += 4;
    return v;
}
double ByteReader::f64() {
    need(8);
    double v;
    std::memcpy(&v, data_ + pos_, 8);
    pos_ += 8;
    return v;
}
std::string ByteReader::str() {
    uint16_t n = u16();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
}
void ByteReader::bytes(void* out, size_t n) {
    need(n);
    std::memcpy(out, data_ + pos_, n);
    pos_ += n;
}
void ByteReader::skip(size_t n) {
    need(n);
    pos_ += n;
}

// ============================================================================
// Hashing
// ============================================================================

namespace {
std::array<uint32_t, 256> make_crc_table() {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
        uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : (c >> 1);
        t[i] = c;
    }
    return t;
}
}  // namespace

uint32_t crc32(const uint8_t* data, size_t size, uint32_t seed) {
    static const auto table = make_crc_table();
    uint32_t c = seed ^ 0xFFFFFFFFu;
    for (size_t i = 0; i < size; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

uint64_t fnv1a64(const uint8_t* data, size_t size) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (size_t i = 0; i < size; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string fnv1a64_hex(const std::vector<uint8_t>& data) {
    uint64_t h = fnv1a64(data.data(), data.size());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

// ============================================================================
// Rng
// ============================================================================

uint64_t Rng::next_u64() {
    // splitmix64
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(next_u64() % span);
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Box-Muller; u1 in (0,1] to keep log finite
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
}

Rng Rng::fork(uint64_t salt) const {
    Rng r(state_ ^ (0xA5A5A5A5DEADBEEFull + salt * 0x9E3779B97F4A7C15ull));
    r.next_u64();
    return r;
}

// ============================================================================
// parallel_for
// ============================================================================

void parallel_for(int64_t n, int threads, const std::function<void(int64_t, int64_t)>& fn) {
    if (n <= 0) return;
    if (threads <= 1 || n == 1) {
        fn(0, n);
        return;
    }
    int workers = static_cast<int>(std::min<int64_t>(threads, n));
    int64_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        int64_t lo = w * chunk;
        int64_t hi = std::min<int64_t>(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
    }
    for (auto& t : pool) t.join();
}

// ============================================================================
// File helpers
// ============================================================================

std::vector<uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) raise(ErrorCode::IoError, "cannot open " + path.string());
    f.seekg(0, std::ios::end);
    std::streamoff size = f.tellg();
    f.seekg(0, std::ios::beg);
    std::vector<uint8_t> buf(static_cast<size_t>(size));
    if (size > 0) f.read(reinterpret_cast<char*>(buf.data()), size);
    if (!f) raise(ErrorCode::IoError, "short read on " + path.string());
    return buf;
}

std::string read_text_file(const std::filesystem::path& path) {
    auto bytes = read_file(path);
    return std::string(bytes.begin(), bytes.end());
}

void write_file(const std::filesystem::path& path, const void* data, size_t size) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) raise(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
    f.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!f) raise(ErrorCode::IoError, "short write on " + path.string());
}

void write_file(const std::filesystem::path& path, const std::vector<uint8_t>& data) {
    write_file(path, data.data(), data.size());
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    write_file(path, text.data(), text.size());
}

}  // namespace vq
