// SPDX-License-Identifier: Apache-2.0
#include "voxelquant/engine_exec.hpp"

#include <cmath>
#include <cstring>

#include "voxelquant/util.hpp"

namespace vq {

// ============================================================================
// Runtime derivation
// ============================================================================

EngineRuntime::EngineRuntime(EnginePlan p) : plan(std::move(p)) {
    for (const QuantParams& q : plan.params)
        if (q.bits != 8)
            raise(ErrorCode::UnsupportedBits,
                  "engine runtime requires 8-bit codes, plan uses " + std::to_string(q.bits));

    auto tensor_params = [&](int32_t tid, const char* what) -> const QuantParams& {
        int32_t idx = plan.tensors[static_cast<size_t>(tid)].param_idx;
        if (idx < 0)
            raise(ErrorCode::SyntaxError,
                  std::string("engine plan: ") + what + " tensor has no quantization params");
        return plan.params[static_cast<size_t>(idx)];
    };

    const size_t n = plan.ops.size();
    conv_wdiff.resize(n);
    requant_lut.resize(n);
    dequant_lut.resize(n);
    f32_payload.resize(n);
    f32_bias.resize(n);
    for (size_t i = 0; i < n; ++i) {
        const PlanOp& op = plan.ops[i];
        switch (op.kind) {
            case PlanOpKind::ConvInt8: {
                if (op.w_param_idx < 0)
                    raise(ErrorCode::SyntaxError, "engine plan: fused conv has no weight params");
                const int32_t z_w = plan.params[static_cast<size_t>(op.w_param_idx)].zero_point;
                auto& wd = conv_wdiff[i];
                wd.resize(static_cast<size_t>(op.w_nbytes));
                const uint8_t* codes = plan.weights.data() + op.w_offset;
                for (size_t j = 0; j < wd.size(); ++j)
                    wd[j] = static_cast<int16_t>(static_cast<int32_t>(codes[j]) - z_w);
                break;
            }
            case PlanOpKind::RequantizeTensor: {
                const QuantParams src = tensor_params(op.inputs[0], "requantize input");
                const QuantParams dst = tensor_params(op.output, "requantize output");
                for (int q = 0; q < 256; ++q)
                    requant_lut[i][static_cast<size_t>(q)] =
                        static_cast<uint8_t>(requantize_code(q, src, dst));
                break;
            }
            case PlanOpKind::DequantizeTensor: {
                const QuantParams src = tensor_params(op.inputs[0], "dequantize input");
                for (int q = 0; q < 256; ++q)
                    dequant_lut[i][static_cast<size_t>(q)] =
                        static_cast<float>(dequantize_code(q, src));
                break;
            }
            case PlanOpKind::ConvFp32: {
                f32_payload[i].resize(static_cast<size_t>(op.w_nbytes) / sizeof(float));
                if (op.w_nbytes)
                    std::memcpy(f32_payload[i].data(), plan.weights.data() + op.w_offset,
                                static_cast<size_t>(op.w_nbytes));
                f32_bias[i].resize(static_cast<size_t>(op.b_nbytes) / sizeof(float));
                if (op.b_nbytes)
                    std::memcpy(f32_bias[i].data(), plan.weights.data() + op.b_offset,
                                static_cast<size_t>(op.b_nbytes));
                break;
            }
            default: break;
        }
    }
}

// ============================================================================
// Integer kernels
// ============================================================================

namespace {

// im2col int8 conv: rows of (code - z_x) differences as i16, i32 dot per
// output element. The row layout is [position][k] so each dot reduces over a
// contiguous span; weight differences are packed [oc][k] to match.
void conv_int8_kernel(const uint8_t* x, const Shape& in_shape, const int16_t* wdiff,
                      const PlanOp& op, const int32_t* bias, int32_t z_x, int32_t z_y,
                      uint8_t* y, const Shape& out_shape, int threads) {
    const int64_t ci = op.in_channels, co = op.out_channels;
    const int64_t kd = op.kernel[0], kh = op.kernel[1], kw = op.kernel[2];
    const int64_t sd = op.stride[0], sh = op.stride[1], sw = op.stride[2];
    const int64_t pd = op.padding[0], ph = op.padding[1], pw = op.padding[2];
    const int64_t id = in_shape.depth(), ih = in_shape.height(), iw = in_shape.width();
    const int64_t od = out_shape.depth(), oh = out_shape.height(), ow = out_shape.width();
    const int64_t k_size = ci * kd * kh * kw;
    const int64_t n_pos = od * oh * ow;
    const int64_t tile = im2col_tile_positions(k_size, n_pos, sizeof(int16_t));
    const int64_t n_tiles = (n_pos + tile - 1) / tile;
    const double m = op.m;
    const int32_t clamp_lo = op.clamp_lo;

    for (int64_t b = 0; b < in_shape.batch(); ++b) {
        const uint8_t* xb = x + b * ci * id * ih * iw;
        uint8_t* yb = y + b * co * n_pos;
        parallel_for(n_tiles, threads, [&](int64_t t0, int64_t t1) {
            std::vector<int16_t> rows(static_cast<size_t>(tile * k_size));
            for (int64_t ti = t0; ti < t1; ++ti) {
                const int64_t p0 = ti * tile;
                const int64_t pn = std::min(n_pos, p0 + tile) - p0;
                for (int64_t t = 0; t < pn; ++t) {
                    const int64_t p = p0 + t;
                    const int64_t bz = (p / (oh * ow)) * sd - pd;
                    const int64_t by = ((p / ow) % oh) * sh - ph;
                    const int64_t bx = (p % ow) * sw - pw;
                    int16_t* row = rows.data() + t * k_size;
                    int64_t k = 0;
                    for (int64_t c = 0; c < ci; ++c) {
                        const uint8_t* src_c = xb + c * id * ih * iw;
                        for (int64_t dz = 0; dz < kd; ++dz) {
                            const int64_t z = bz + dz;
                            for (int64_t dy = 0; dy < kh; ++dy) {
                                const int64_t yy = by + dy;
                                const bool plane_ok = z >= 0 && z < id && yy >= 0 && yy < ih;
                                const uint8_t* src_r =
                                    plane_ok ? src_c + (z * ih + yy) * iw : nullptr;
                                for (int64_t dx = 0; dx < kw; ++dx, ++k) {
                                    const int64_t xx = bx + dx;
                                    // a padded tap contributes fp32 zero,
                                    // i.e. a zero code difference
                                    row[k] = (plane_ok && xx >= 0 && xx < iw)
                                                 ? static_cast<int16_t>(
                                                       static_cast<int32_t>(src_r[xx]) - z_x)
                                                 : static_cast<int16_t>(0);
                                }
                            }
                        }
                    }
                }
                for (int64_t oc = 0; oc < co; ++oc) {
                    const int16_t* wrow = wdiff + oc * k_size;
                    const int32_t b32 = bias[oc];
                    uint8_t* dst = yb + oc * n_pos + p0;
                    for (int64_t t = 0; t < pn; ++t) {
                        const int16_t* row = rows.data() + t * k_size;
                        int32_t acc = 0;
                        for (int64_t k = 0; k < k_size; ++k)
                            acc += static_cast<int32_t>(row[k]) * static_cast<int32_t>(wrow[k]);
                        dst[t] = static_cast<uint8_t>(requantize_i32(acc, b32, m, z_y, clamp_lo));
                    }
                }
            }
        });
    }
}

// Direct 7-loop conv on raw codes with i64 accumulation; the oracle side.
void conv_int8_oracle(const uint8_t* x, const Shape& in_shape, const uint8_t* wcodes,
                      const PlanOp& op, const int32_t* bias, int32_t z_x, int32_t z_w,
                      int32_t z_y, uint8_t* y, const Shape& out_shape) {
    const int64_t ci = op.in_channels, co = op.out_channels;
    const int64_t kd = op.kernel[0], kh = op.kernel[1], kw = op.kernel[2];
    const int64_t sd = op.stride[0], sh = op.stride[1], sw = op.stride[2];
    const int64_t pd = op.padding[0], ph = op.padding[1], pw = op.padding[2];
    const int64_t id = in_shape.depth(), ih = in_shape.height(), iw = in_shape.width();
    const int64_t od = out_shape.depth(), oh = out_shape.height(), ow = out_shape.width();
    for (int64_t b = 0; b < in_shape.batch(); ++b)
        for (int64_t oc = 0; oc < co; ++oc)
            for (int64_t oz = 0; oz < od; ++oz)
                for (int64_t oy = 0; oy < oh; ++oy)
                    for (int64_t ox = 0; ox < ow; ++ox) {
                        int64_t acc = 0;
                        for (int64_t c = 0; c < ci; ++c)
                            for (int64_t dz = 0; dz < kd; ++dz)
                                for (int64_t dy = 0; dy < kh; ++dy)
                                    for (int64_t dx = 0; dx < kw; ++dx) {
                                        const int64_t z = oz * sd - pd + dz;
                                        const int64_t yy = oy * sh - ph + dy;
                                        const int64_t xx = ox * sw - pw + dx;
                                        const bool in_b = z >= 0 && z < id && yy >= 0 &&
                                                          yy < ih && xx >= 0 && xx < iw;
                                        const int32_t xq =
                                            in_b ? x[(((b * ci + c) * id + z) * ih + yy) * iw + xx]
                                                 : z_x;
                                        const int32_t wq =
                                            wcodes[(((oc * ci + c) * kd + dz) * kh + dy) * kw + dx];
                                        acc += static_cast<int64_t>(xq - z_x) *
                                               static_cast<int64_t>(wq - z_w);
                                    }
                        y[(((b * co + oc) * od + oz) * oh + oy) * ow + ox] =
                            static_cast<uint8_t>(
                                requantize_i32(acc, bias[oc], op.m, z_y, op.clamp_lo));
                    }
}

void maxpool_u8(const uint8_t* in, const Shape& in_shape, const PlanOp& op, uint8_t* out,
                const Shape& out_shape) {
    const int64_t kd = op.kernel[0], kh = op.kernel[1], kw = op.kernel[2];
    const int64_t sd = op.stride[0], sh = op.stride[1], sw = op.stride[2];
    const int64_t id = in_shape.depth(), ih = in_shape.height(), iw = in_shape.width();
    const int64_t od = out_shape.depth(), oh = out_shape.height(), ow = out_shape.width();
    const int64_t chans = in_shape.batch() * in_shape.channels();
    for (int64_t c = 0; c < chans; ++c) {
        const uint8_t* src = in + c * id * ih * iw;
        uint8_t* dst = out + c * od * oh * ow;
        for (int64_t z = 0; z < od; ++z)
            for (int64_t y = 0; y < oh; ++y)
                for (int64_t x = 0; x < ow; ++x) {
                    uint8_t m = 0;
                    for (int64_t dz = 0; dz < kd; ++dz)
                        for (int64_t dy = 0; dy < kh; ++dy)
                            for (int64_t dx = 0; dx < kw; ++dx)
                                m = std::max(
                                    m, src[((z * sd + dz) * ih + y * sh + dy) * iw + x * sw + dx]);
                    dst[(z * oh + y) * ow + x] = m;
                }
    }
}

void upsample_u8(const uint8_t* in, const Shape& in_shape, const PlanOp& op, uint8_t* out,
                 const Shape& out_shape) {
    const int64_t id = in_shape.depth(), ih = in_shape.height(), iw = in_shape.width();
    const int64_t od = out_shape.depth(), oh = out_shape.height(), ow = out_shape.width();
    const int64_t chans = in_shape.batch() * in_shape.channels();
    for (int64_t c = 0; c < chans; ++c) {
        const uint8_t* src = in + c * id * ih * iw;
        uint8_t* dst = out + c * od * oh * ow;
        for (int64_t z = 0; z < od; ++z)
            for (int64_t y = 0; y < oh; ++y)
                for (int64_t x = 0; x < ow; ++x)
                    dst[(z * oh + y) * ow + x] =
                        src[((z / op.scale[0]) * ih + y / op.scale[1]) * iw + x / op.scale[2]];
    }
}

void concat_u8(const std::vector<std::pair<const uint8_t*, Shape>>& inputs, int64_t axis,
               uint8_t* out, const Shape& out_shape) {
    int64_t inner = 1;
    for (int64_t d = axis + 1; d < 5; ++d) inner *= out_shape.dims[d];
    int64_t outer = 1;
    for (int64_t d = 0; d < axis; ++d) outer *= out_shape.dims[d];
    const int64_t out_axis = out_shape.dims[axis];
    int64_t offset = 0;
    for (const auto& [src, shape] : inputs) {
        const int64_t a = shape.dims[axis];
        for (int64_t o = 0; o < outer; ++o)
            std::memcpy(out + (o * out_axis + offset) * inner, src + o * a * inner,
                        static_cast<size_t>(a * inner));
        offset += a;
    }
}

// ============================================================================
// Plan driver (shared by the optimized engine and the oracle)
// ============================================================================

std::map<std::string, TensorValue> run_plan(const EnginePlan& plan, const EngineRuntime* rt,
                                            const std::vector<Volume>& inputs, int threads,
                                            uint64_t workspace_limit) {
    if (inputs.size() != plan.input_ids.size())
        raise(ErrorCode::InputShapeMismatch,
              "engine expects " + std::to_string(plan.input_ids.size()) + " inputs, got " +
                  std::to_string(inputs.size()));
    const uint64_t cap = workspace_limit ? workspace_limit : plan.workspace_bytes;
    if (cap < plan.workspace_bytes)
        raise(ErrorCode::WorkspaceTooSmall,
              "plan requires " + std::to_string(plan.workspace_bytes) +
                  " bytes of live intermediates, limit is " + std::to_string(cap));

    std::vector<int> uses(plan.tensors.size(), 0);
    for (const PlanOp& op : plan.ops)
        for (int32_t in : op.inputs) uses[static_cast<size_t>(in)]++;

    std::vector<TensorValue> bufs(plan.tensors.size());
    for (size_t i = 0; i < inputs.size(); ++i) {
        const size_t tid = static_cast<size_t>(plan.input_ids[i]);
        const PlanTensor& t = plan.tensors[tid];
        if (inputs[i].shape != t.shape)
            raise(ErrorCode::InputShapeMismatch,
                  "input '" + t.name + "' expects shape " + t.shape.str() + ", got " +
                      inputs[i].shape.str());
        for (float v : inputs[i].data)
            if (!std::isfinite(v))
                raise(ErrorCode::NonFiniteValue,
                      "input '" + t.name + "' contains a non-finite value");
        bufs[tid].dtype = DType::F32;
        bufs[tid].shape = inputs[i].shape;
        bufs[tid].f32 = inputs[i].data;
    }

    uint64_t live = 0;
    auto free_if_dead = [&](int32_t id) {
        const size_t tid = static_cast<size_t>(id);
        if (uses[tid] != 0) return;
        const PlanTensor& t = plan.tensors[tid];
        if (t.role == TensorRole::Output) return;
        if (t.role == TensorRole::Intermediate) live -= t.nbytes();
        bufs[tid] = TensorValue{};
    };

    auto params_of = [&](int32_t tid) -> const QuantParams& {
        return plan.params[static_cast<size_t>(
            plan.tensors[static_cast<size_t>(tid)].param_idx)];
    };

    for (size_t i = 0; i < plan.ops.size(); ++i) {
        const PlanOp& op = plan.ops[i];
        const PlanTensor& ot = plan.tensors[static_cast<size_t>(op.output)];
        bufs[static_cast<size_t>(op.output)] = TensorValue::make(ot.dtype, ot.shape);
        TensorValue& out = bufs[static_cast<size_t>(op.output)];
        if (ot.role == TensorRole::Intermediate) {
            live += ot.nbytes();
            if (live > cap)
                raise(ErrorCode::WorkspaceTooSmall,
                      "live intermediates reached " + std::to_string(live) +
                          " bytes at step " + std::to_string(i) + ", limit is " +
                          std::to_string(cap));
        }
        const TensorValue& a = bufs[static_cast<size_t>(op.inputs.empty() ? op.output
                                                                          : op.inputs[0])];

        switch (op.kind) {
            case PlanOpKind::QuantizeTensor: {
                const QuantParams p = params_of(op.output);
                const float* src = a.f32.data();
                uint8_t* dst = out.u8.data();
                parallel_for(static_cast<int64_t>(out.u8.size()), rt ? threads : 1,
                             [&](int64_t b, int64_t e) {
                                 for (int64_t j = b; j < e; ++j)
                                     dst[j] = static_cast<uint8_t>(
                                         quantize_value(static_cast<double>(src[j]), p));
                             });
                break;
            }
            case PlanOpKind::DequantizeTensor: {
                const uint8_t* src = a.u8.data();
                float* dst = out.f32.data();
                if (rt) {
                    const auto& lut = rt->dequant_lut[i];
                    for (size_t j = 0; j < out.f32.size(); ++j) dst[j] = lut[src[j]];
                } else {
                    const QuantParams p = params_of(op.inputs[0]);
                    for (size_t j = 0; j < out.f32.size(); ++j)
                        dst[j] = static_cast<float>(dequantize_code(src[j], p));
                }
                break;
            }
            case PlanOpKind::RequantizeTensor: {
                const uint8_t* src = a.u8.data();
                uint8_t* dst = out.u8.data();
                if (rt) {
                    const auto& lut = rt->requant_lut[i];
                    for (size_t j = 0; j < out.u8.size(); ++j) dst[j] = lut[src[j]];
                } else {
                    const QuantParams ps = params_of(op.inputs[0]);
                    const QuantParams pd = params_of(op.output);
                    for (size_t j = 0; j < out.u8.size(); ++j)
                        dst[j] = static_cast<uint8_t>(requantize_code(src[j], ps, pd));
                }
                break;
            }
            case PlanOpKind::ConvInt8: {
                const int32_t z_x = params_of(op.inputs[0]).zero_point;
                const int32_t z_y = params_of(op.output).zero_point;
                const int32_t* bias = plan.biases.data() + op.bias_offset;
                if (rt) {
                    conv_int8_kernel(a.u8.data(), a.shape, rt->conv_wdiff[i].data(), op, bias,
                                     z_x, z_y, out.u8.data(), out.shape, threads);
                } else {
                    const int32_t z_w =
                        plan.params[static_cast<size_t>(op.w_param_idx)].zero_point;
                    conv_int8_oracle(a.u8.data(), a.shape, plan.weights.data() + op.w_offset, op,
                                     bias, z_x, z_w, z_y, out.u8.data(), out.shape);
                }
                break;
            }
            case PlanOpKind::ConvFp32: {
                NodeAttrs attrs;
                attrs.kernel = op.kernel;
                attrs.stride = op.stride;
                attrs.padding = op.padding;
                attrs.in_channels = op.in_channels;
                attrs.out_channels = op.out_channels;
                std::vector<float> wtmp, btmp;
                const float* w = nullptr;
                const float* bptr = nullptr;
                if (op.inputs.size() == 2) {
                    w = bufs[static_cast<size_t>(op.inputs[1])].f32.data();
                } else if (rt) {
                    w = rt->f32_payload[i].data();
                } else {
                    wtmp.resize(static_cast<size_t>(op.w_nbytes) / sizeof(float));
                    std::memcpy(wtmp.data(), plan.weights.data() + op.w_offset,
                                static_cast<size_t>(op.w_nbytes));
                    w = wtmp.data();
                }
                if (op.b_nbytes) {
                    if (rt) {
                        bptr = rt->f32_bias[i].data();
                    } else {
                        btmp.resize(static_cast<size_t>(op.b_nbytes) / sizeof(float));
                        std::memcpy(btmp.data(), plan.weights.data() + op.b_offset,
                                    static_cast<size_t>(op.b_nbytes));
                        bptr = btmp.data();
                    }
                }
                eval_conv3d_fp32(a.f32.data(), a.shape, w, bptr, attrs, out.f32.data(),
                                 out.shape, rt ? threads : 1);
                break;
            }
            case PlanOpKind::MaxPoolInt8:
                maxpool_u8(a.u8.data(), a.shape, op, out.u8.data(), out.shape);
                break;
            case PlanOpKind::MaxPoolFp32: {
                NodeAttrs attrs;
                attrs.kernel = op.kernel;
                attrs.stride = op.stride;
                eval_maxpool3d_fp32(a.f32.data(), a.shape, attrs, out.f32.data(), out.shape);
                break;
            }
            case PlanOpKind::UpsampleInt8:
                upsample_u8(a.u8.data(), a.shape, op, out.u8.data(), out.shape);
                break;
            case PlanOpKind::UpsampleFp32: {
                NodeAttrs attrs;
                attrs.scale = op.scale;
                eval_upsample3d_fp32(a.f32.data(), a.shape, attrs, out.f32.data(), out.shape);
                break;
            }
            case PlanOpKind::ConcatInt8: {
                std::vector<std::pair<const uint8_t*, Shape>> parts;
                for (int32_t in : op.inputs) {
                    const TensorValue& t = bufs[static_cast<size_t>(in)];
                    parts.emplace_back(t.u8.data(), t.shape);
                }
                concat_u8(parts, op.axis, out.u8.data(), out.shape);
                break;
            }
            case PlanOpKind::ConcatFp32: {
                std::vector<std::pair<const float*, Shape>> parts;
                for (int32_t in : op.inputs) {
                    const TensorValue& t = bufs[static_cast<size_t>(in)];
                    parts.emplace_back(t.f32.data(), t.shape);
                }
                eval_concat_fp32(parts, op.axis, out.f32.data(), out.shape);
                break;
            }
            case PlanOpKind::AddFp32: {
                const TensorValue& b = bufs[static_cast<size_t>(op.inputs[1])];
                eval_add(a.f32.data(), b.f32.data(), out.f32.data(), out.element_count());
                break;
            }
            case PlanOpKind::ReluFp32:
                eval_relu(a.f32.data(), out.f32.data(), out.element_count());
                break;
            case PlanOpKind::SoftmaxFp32:
                eval_softmax_fp32(a.f32.data(), a.shape, op.axis, out.f32.data());
                break;
            case PlanOpKind::ArgMaxFp32:
                eval_argmax_channels(a.f32.data(), a.shape, out.u16.data());
                break;
            case PlanOpKind::LoadConstF32:
                std::memcpy(out.f32.data(), plan.weights.data() + op.w_offset,
                            static_cast<size_t>(op.w_nbytes));
                break;
            case PlanOpKind::CopyTensor:
                out.f32 = a.f32;
                out.u8 = a.u8;
                out.u16 = a.u16;
                break;
        }

        for (int32_t in : op.inputs) {
            uses[static_cast<size_t>(in)]--;
            free_if_dead(in);
        }
        free_if_dead(op.output);
    }

    std::map<std::string, TensorValue> result;
    for (int32_t id : plan.output_ids)
        result.emplace(plan.tensors[static_cast<size_t>(id)].name,
                       std::move(bufs[static_cast<size_t>(id)]));
    return result;
}

}  // namespace

std::map<std::string, TensorValue> execute_engine(const EngineRuntime& rt,
                                                  const std::vector<Volume>& inputs,
                                                  const EngineExecOptions& opts) {
    return run_plan(rt.plan, &rt, inputs, opts.threads, opts.workspace_bytes);
}

std::map<std::string, TensorValue> execute_plan_oracle(const EnginePlan& plan,
                                                       const std::vector<Volume>& inputs) {
    return run_plan(plan, nullptr, inputs, 1, 0);
}

}  // namespace vq
