// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "voxelquant/errors.hpp"

namespace vq {

/// Element types that can flow through a graph or an engine plan.
enum class DType : uint8_t { F32 = 0, U8 = 1, I32 = 2, U16 = 3 };

const char* dtype_name(DType t);
DType dtype_from_name(const std::string& name);
size_t dtype_size(DType t);

/// Dense 5-D layout (batch, channels, depth, height, width), width fastest.
/// batch == kDynamicBatch marks a batch dimension left symbolic until
/// validation binds it.
struct Shape {
    static constexpr int64_t kDynamicBatch = 0;

    std::array<int64_t, 5> dims{1, 1, 1, 1, 1};

    int64_t batch() const { return dims[0]; }
    int64_t channels() const { return dims[1]; }
    int64_t depth() const { return dims[2]; }
    int64_t height() const { return dims[3]; }
    int64_t width() const { return dims[4]; }

    bool has_dynamic_batch() const { return dims[0] == kDynamicBatch; }
    int64_t volume() const { return dims[0] * dims[1] * dims[2] * dims[3] * dims[4]; }
    int64_t voxels() const { return dims[2] * dims[3] * dims[4]; }

    bool operator==(const Shape& o) const { return dims == o.dims; }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const;
};

/// Dense FP32 scalar field.
struct Volume {
    Shape shape;
    std::vector<float> data;

    static Volume zeros(const Shape& s) {
        Volume v;
        v.shape = s;
        v.data.assign(static_cast<size_t>(s.volume()), 0.0f);
        return v;
    }
};

/// Dense class-index field (16-bit labels).
struct LabelVolume {
    Shape shape;
    std::vector<uint16_t> data;

    static LabelVolume zeros(const Shape& s) {
        LabelVolume v;
        v.shape = s;
        v.data.assign(static_cast<size_t>(s.volume()), 0);
        return v;
    }
};

// ----------------------------------------------------------------------------
// Volume files: raw little-endian payload `X.bin` plus JSON sidecar `X.json`
// holding {"shape": [...], "dtype": "f32"|"u16"}.
// ----------------------------------------------------------------------------

void save_volume(const std::filesystem::path& payload_path, const Volume& v);
Volume load_volume(const std::filesystem::path& payload_path);

void save_labels(const std::filesystem::path& payload_path, const LabelVolume& v);
LabelVolume load_labels(const std::filesystem::path& payload_path);

}  // namespace vq
