// SPDX-License-Identifier: Apache-2.0
//
// Lowers a quantize/dequantize-annotated graph into a flat execution plan for
// the 8-bit engine, and serializes that plan to the "VQE1" container format.
//
// Lowering rules:
//   * Dequantize -> Conv3D -> (ReLU) -> Quantize collapses into a single
//     ConvInt8 step operating on u8 codes end to end. Weights arrive through
//     their own quantize/dequantize pair and are folded to u8 at build time;
//     the fp32 bias is folded to i32 as round_half_even(b / (s_x * s_w)).
//     The requantization multiplier m = (s_x * s_w) / s_y is kept as f64.
//     A fused ReLU raises the lower output clamp from 0 to z_y.
//   * MaxPool3D and Upsample3D run directly on codes and inherit the input
//     quantization params (monotonic / copy-only, so this is exact).
//   * Concat on codes adopts the first input's params; other inputs are
//     requantized into temporaries first.
//   * Quantize(f32) becomes a QuantizeTensor step; Quantize(codes) with equal
//     params cancels into an alias, with differing params it becomes a
//     RequantizeTensor step. Dequantize never computes anything at lowering
//     time: it marks its output as an alias of the producing code tensor, and
//     an actual DequantizeTensor step is materialized lazily only where some
//     consumer genuinely needs fp32 values.
//   * Add, Softmax, ArgMax, standalone ReLU and any Conv3D that does not
//     match the fused pattern fall back to the shared fp32 evaluators,
//     bracketed by those lazy dequantize steps.
//
// Build-time guards: every quantized tensor must use exactly 8 bits
// (UnsupportedBits), and each fused conv must satisfy
// kernel_volume * in_channels <= 33025 so the per-dot i32 accumulator cannot
// overflow (AccumulatorOverflow); 33025 = floor((2^31 - 1) / 255^2).

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "voxelquant/graph.hpp"
#include "voxelquant/quant.hpp"
#include "voxelquant/tensor.hpp"

namespace vq {

enum class PlanOpKind : uint8_t {
    QuantizeTensor = 0,    // f32 buffer -> u8 codes (dst tensor params)
    DequantizeTensor = 1,  // u8 codes -> f32 buffer (src tensor params)
    RequantizeTensor = 2,  // u8 codes -> u8 codes (src params -> dst params)
    ConvInt8 = 3,          // fused conv (+ optional relu) on codes
    ConvFp32 = 4,          // fallback conv, weight payload in the byte arena
    MaxPoolInt8 = 5,
    MaxPoolFp32 = 6,
    UpsampleInt8 = 7,
    UpsampleFp32 = 8,
    ConcatInt8 = 9,
    ConcatFp32 = 10,
    AddFp32 = 11,
    ReluFp32 = 12,
    SoftmaxFp32 = 13,
    ArgMaxFp32 = 14,       // f32 in, u16 labels out
    LoadConstF32 = 15,     // materialize an arena f32 payload as a tensor
    CopyTensor = 16,       // raw byte copy between same-layout tensors
};

const char* plan_op_kind_name(PlanOpKind kind);

enum class TensorRole : uint8_t { Input = 0, Output = 1, Intermediate = 2 };

struct PlanTensor {
    std::string name;
    DType dtype = DType::F32;
    Shape shape;
    TensorRole role = TensorRole::Intermediate;
    int32_t param_idx = -1;  // into EnginePlan::params for u8 code tensors

    uint64_t nbytes() const {
        return static_cast<uint64_t>(shape.volume()) * dtype_size(dtype);
    }
};

struct PlanOp {
    PlanOpKind kind = PlanOpKind::CopyTensor;
    std::vector<int32_t> inputs;  // plan tensor ids
    int32_t output = -1;          // plan tensor id

    // geometry (conv / pool / upsample / concat / softmax)
    std::array<int64_t, 3> kernel{1, 1, 1};
    std::array<int64_t, 3> stride{1, 1, 1};
    std::array<int64_t, 3> padding{0, 0, 0};
    std::array<int64_t, 3> scale{1, 1, 1};
    int64_t in_channels = 0;
    int64_t out_channels = 0;
    int64_t axis = 1;

    // quantized conv constants
    double m = 1.0;          // (s_x * s_w) / s_y
    int32_t clamp_lo = 0;    // z_y when relu_fused, else 0
    bool relu_fused = false;
    int32_t w_param_idx = -1;

    // byte arena slice: u8 weight codes (ConvInt8), f32 payload (ConvFp32,
    // LoadConstF32)
    uint64_t w_offset = 0;
    uint64_t w_nbytes = 0;
    // f32 bias payload in the byte arena, ConvFp32 only (b_nbytes 0 = none)
    uint64_t b_offset = 0;
    uint64_t b_nbytes = 0;
    // i32 bias arena slice, ConvInt8 only (always out_channels entries)
    uint64_t bias_offset = 0;
    uint64_t bias_count = 0;
};

struct EnginePlan {
    std::string model_name;
    std::vector<PlanTensor> tensors;
    std::vector<PlanOp> ops;
    std::vector<QuantParams> params;  // deduplicated, first-use order
    std::vector<uint8_t> weights;     // byte arena (unpadded, in emission order)
    std::vector<int32_t> biases;      // i32 arena for fused conv biases
    std::vector<int32_t> input_ids;   // graph input order
    std::vector<int32_t> output_ids;  // graph output order
    uint64_t workspace_bytes = 0;     // peak live intermediate bytes
};

// Lowers a validated graph (normally one produced by insert_qdq) to a plan.
// Raises UnsupportedBits for non-8-bit quantized tensors, MalformedQdqPattern
// for inconsistent quantize/dequantize chains, AccumulatorOverflow when a
// fused conv reduction is too long for i32 accumulation.
EnginePlan build_engine(const Graph& g);

// Peak live intermediate bytes over the op sequence; inputs, outputs and
// executor-internal scratch are excluded. Also used to verify a loaded plan.
uint64_t compute_workspace_bytes(const EnginePlan& plan);

// "VQE1" container: magic, u8 version, u8 flags, u32-length-prefixed plan
// blob, param table (u32 count, 13 bytes per entry), weight arena (u64 length
// + bytes), bias arena (u64 count + i32 entries), trailing crc32 over all
// preceding bytes.
std::vector<uint8_t> serialize_engine(const EnginePlan& plan);

// Validates structure before content: short file -> TruncatedFile, magic ->
// BadMagic, version -> UnsupportedVersion, section length walk ->
// TruncatedFile, checksum -> ChecksumMismatch, then field-level parsing.
EnginePlan deserialize_engine(const std::vector<uint8_t>& bytes);

void save_engine(const EnginePlan& plan, const std::string& path);
EnginePlan load_engine(const std::string& path);

// Human-readable dump used by the CLI inspect command.
std::string plan_summary(const EnginePlan& plan);

}  // namespace vq
