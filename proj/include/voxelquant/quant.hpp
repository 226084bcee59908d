// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "voxelquant/errors.hpp"

namespace vq {

/// Affine quantization parameters for one tensor: real x maps to unsigned
/// code q = clamp(round_half_even(x / scale) + zero_point, 0, 2^bits - 1).
struct QuantParams {
    double scale = 1.0;
    int32_t zero_point = 0;
    int bits = 8;

    int32_t qmax() const { return (1 << bits) - 1; }

    bool operator==(const QuantParams& o) const {
        return scale == o.scale && zero_point == o.zero_point && bits == o.bits;
    }
    bool operator!=(const QuantParams& o) const { return !(*this == o); }
};

/// Rounding used everywhere codes are produced: ties go to the even
/// neighbour (IEEE default rounding of nearbyint).
inline double round_half_even(double x) { return std::nearbyint(x); }

/// Streaming min/max tracker. Optionally carries a fixed-range histogram for
/// percentile calibration (armed by the calibrator on a second pass).
struct RangeObserver {
    double min_seen = std::numeric_limits<double>::infinity();
    double max_seen = -std::numeric_limits<double>::infinity();
    uint64_t count = 0;

    // histogram support (percentile method); inactive unless armed
    static constexpr int kHistogramBins = 2048;
    bool histogram_armed = false;
    double hist_lo = 0.0;
    double hist_hi = 0.0;
    std::vector<uint64_t> hist_bins;

    bool empty() const { return count == 0; }
    void arm_histogram(double lo, double hi);
    /// p in (0, 100): value below which p percent of observations fall,
    /// interpolated within histogram bins.
    double quantile(double p) const;
};

/// Accumulate values into the observer. Rejects NaN/Inf with NonFiniteValue;
/// `label` names the offending tensor in the message.
void observe(RangeObserver& o, const float* values, size_t n, const std::string& label = "");
void observe(RangeObserver& o, const std::vector<float>& values, const std::string& label = "");

/// Exact merge of two observers (min/max/count). Associative and
/// commutative; the empty observer is the identity. Histograms, if both
/// armed, are merged by rebinning into the union range.
RangeObserver merge_observers(const RangeObserver& a, const RangeObserver& b);

/// Derive QuantParams from an observed [min, max] range:
///   1. widen to include zero,
///   2. if max - min < 1e-12, set max = min + 1e-6,
///   3. scale = (max - min) / (2^bits - 1),
///   4. zero_point = clamp(-round_half_even(min / scale), 0, 2^bits - 1).
/// bits must be in [2, 8].
QuantParams params_from_range(double min_value, double max_value, int bits);

/// params_from_range over the observer's exact min/max. EmptyObserver if no
/// values were observed.
QuantParams finalize_params(const RangeObserver& o, int bits);

/// Eq-style scalar ops; computed in double regardless of input storage type.
inline int32_t quantize_value(double x, const QuantParams& p) {
    double r = round_half_even(x / p.scale) + static_cast<double>(p.zero_point);
    if (r < 0.0) return 0;
    double q = static_cast<double>(p.qmax());
    if (r > q) return p.qmax();
    return static_cast<int32_t>(r);
}

inline double dequantize_code(int32_t q, const QuantParams& p) {
    return (static_cast<double>(q) - static_cast<double>(p.zero_point)) * p.scale;
}

/// Checked variants used at API boundaries.
int32_t quantize_scalar(double x, const QuantParams& p);
double dequantize_scalar(int32_t q, const QuantParams& p);  // QuantizedValueOutOfRange on bad q

// ----------------------------------------------------------------------------
// Calibration table
// ----------------------------------------------------------------------------

struct CalibrationEntry {
    double min_value = 0.0;
    double max_value = 0.0;
    uint64_t count = 0;
    QuantParams params;
};

/// Tensor name -> finalized range + params. Serialized as a JSON object with
/// sorted keys; scales round-trip at full 64-bit precision.
struct CalibrationTable {
    int bits = 8;
    std::map<std::string, CalibrationEntry> entries;

    bool has(const std::string& name) const { return entries.count(name) != 0; }
    const CalibrationEntry& at(const std::string& name) const;

    std::string to_json() const;
    static CalibrationTable from_json(const std::string& text);
};

}  // namespace vq
