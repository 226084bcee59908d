// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "voxelquant/graph.hpp"
#include "voxelquant/tensor.hpp"

namespace vq {

/// Runtime value for one tensor. Exactly one payload vector is populated,
/// selected by dtype.
struct TensorValue {
    DType dtype = DType::F32;
    Shape shape;
    std::vector<float> f32;
    std::vector<uint8_t> u8;
    std::vector<uint16_t> u16;

    size_t element_count() const { return static_cast<size_t>(shape.volume()); }

    static TensorValue make(DType dtype, const Shape& shape);
};

struct ExecOptions {
    int threads = 1;
    /// When set, invoked once for every graph input and every produced
    /// tensor (calibration hook).
    std::function<void(const std::string&, const TensorValue&)> on_tensor;
};

/// Reference FP32 executor. Handles the full op set including
/// Quantize/Dequantize nodes, so it doubles as the fake-quant executor when
/// given a QDQ-rewritten graph. Convolutions run as im2col + matrix multiply
/// with 64-bit accumulation per output element in a fixed reduction order
/// (kernel index ascending); reductions elsewhere (softmax) accumulate in
/// double as well. Output: declared graph outputs by name.
///
/// Inputs are matched to the graph's declared inputs in order and must be
/// finite (NonFiniteValue) with matching shapes (InputShapeMismatch).
std::map<std::string, TensorValue> execute_fp32(const Graph& g, const std::vector<Volume>& inputs,
                                                const ExecOptions& opts = {});

/// Alias with the fake-quant name; identical semantics (the graph carries
/// the QDQ nodes).
inline std::map<std::string, TensorValue> execute_fake_quant(const Graph& g,
                                                             const std::vector<Volume>& inputs,
                                                             const ExecOptions& opts = {}) {
    return execute_fp32(g, inputs, opts);
}

// ----------------------------------------------------------------------------
// Shared node evaluators (also used by the engine's FP32 fallback path so
// both runtimes agree bit-for-bit on non-integer ops).
// ----------------------------------------------------------------------------

void eval_conv3d_fp32(const float* input, const Shape& in_shape, const float* weight,
                      const float* bias /*nullable*/, const NodeAttrs& attrs, float* output,
                      const Shape& out_shape, int threads);
void eval_relu(const float* in, float* out, size_t n);
void eval_maxpool3d_fp32(const float* in, const Shape& in_shape, const NodeAttrs& attrs,
                         float* out, const Shape& out_shape);
void eval_upsample3d_fp32(const float* in, const Shape& in_shape, const NodeAttrs& attrs,
                          float* out, const Shape& out_shape);
void eval_softmax_fp32(const float* in, const Shape& shape, int64_t axis, float* out);
void eval_argmax_channels(const float* in, const Shape& in_shape, uint16_t* out);
void eval_add(const float* a, const float* b, float* out, size_t n);
/// concat along `axis`; inputs given as (pointer, shape) pairs
void eval_concat_fp32(const std::vector<std::pair<const float*, Shape>>& inputs, int64_t axis,
                      float* out, const Shape& out_shape);

/// im2col tile width heuristic shared by FP32 and INT8 executors.
int64_t im2col_tile_positions(int64_t k_size, int64_t n_positions, size_t elem_bytes);

}  // namespace vq
