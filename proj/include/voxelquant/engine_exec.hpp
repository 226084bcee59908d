// SPDX-License-Identifier: Apache-2.0
//
// Runtime for engine plans. EngineRuntime derives per-step lookup tables and
// packed weights from a plan once; execute_engine then runs inferences against
// it. execute_plan_oracle is a deliberately naive integer interpreter for the
// same plan (nested-loop convolutions on i64, no im2col, no lookup tables)
// used to cross-check the production kernels bit for bit. Both share the same
// requantization helpers and the same fp32 node evaluators, so every
// divergence points at the optimized integer paths.

#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "voxelquant/engine.hpp"
#include "voxelquant/executor.hpp"
#include "voxelquant/quant.hpp"

namespace vq {

/// Requantizes an i32 conv accumulator (plus folded i32 bias) to an output
/// code: clamp(round_half_even(m * (acc + bias)) + z_y, clamp_lo, 255).
/// The sum runs in 64 bits so extreme bias values cannot wrap.
inline int32_t requantize_i32(int64_t acc, int32_t bias, double m, int32_t z_y,
                              int32_t clamp_lo) {
    double q = round_half_even(m * static_cast<double>(acc + static_cast<int64_t>(bias))) +
               static_cast<double>(z_y);
    if (q < static_cast<double>(clamp_lo)) return clamp_lo;
    if (q > 255.0) return 255;
    return static_cast<int32_t>(q);
}

/// Maps a code between two 8-bit parameter sets. Defined as the exact
/// composition quantize(dequantize(q)) through an f32 intermediate - the same
/// numerics a Dequantize -> Quantize node pair produces in the reference
/// executor - so engine requantization never drifts from the fake-quant
/// baseline even at rounding-tie codes.
inline int32_t requantize_code(int32_t q, const QuantParams& src, const QuantParams& dst) {
    const float real = static_cast<float>(dequantize_code(q, src));
    return quantize_value(static_cast<double>(real), dst);
}

/// A plan plus everything derivable from it: i16 weight differences for the
/// int8 convolutions, 256-entry requantize/dequantize tables, and fp32
/// payloads unpacked from the byte arena. Rebuilding this on load keeps the
/// serialized file down to canonical data only.
struct EngineRuntime {
    EnginePlan plan;
    std::vector<std::vector<int16_t>> conv_wdiff;        // per op, ConvInt8 only
    std::vector<std::array<uint8_t, 256>> requant_lut;   // per op, RequantizeTensor only
    std::vector<std::array<float, 256>> dequant_lut;     // per op, DequantizeTensor only
    std::vector<std::vector<float>> f32_payload;         // per op, ConvFp32 weight
    std::vector<std::vector<float>> f32_bias;            // per op, ConvFp32 bias

    explicit EngineRuntime(EnginePlan p);
};

struct EngineExecOptions {
    int threads = 1;
    /// Byte limit for live intermediate buffers; 0 means exactly the plan's
    /// recorded requirement. A smaller limit raises WorkspaceTooSmall.
    uint64_t workspace_bytes = 0;
};

/// Runs one inference with the optimized kernels. Inputs are matched to the
/// plan's input tensors in order; returns the output tensors keyed by name.
std::map<std::string, TensorValue> execute_engine(const EngineRuntime& rt,
                                                  const std::vector<Volume>& inputs,
                                                  const EngineExecOptions& opts = {});

/// Naive single-threaded interpreter for the same plan; the integer oracle.
std::map<std::string, TensorValue> execute_plan_oracle(const EnginePlan& plan,
                                                       const std::vector<Volume>& inputs);

}  // namespace vq
