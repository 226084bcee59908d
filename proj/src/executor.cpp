// SPDX-License-Identifier: Apache-2.0
#include "voxelquant/executor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "voxelquant/util.hpp"

namespace vq {

TensorValue TensorValue::make(DType dtype, const Shape& shape) {
    TensorValue v;
    v.dtype = dtype;
    v.shape = shape;
    size_t n = static_cast<size_t>(shape.volume());
    switch (dtype) {
        case DType::F32: v.f32.assign(n, 0.0f); break;
        case DType::U8: v.u8.assign(n, 0); break;
        case DType::U16: v.u16.assign(n, 0); break;
        case DType::I32: raise(ErrorCode::InvalidConfig, "i32 tensors are engine-internal");
    }
    return v;
}

int64_t im2col_tile_positions(int64_t k_size, int64_t n_positions, size_t elem_bytes) {
    constexpr int64_t kBudgetBytes = 4 << 20;
    int64_t t = kBudgetBytes / (k_size * static_cast<int64_t>(elem_bytes));
    return std::clamp<int64_t>(t, 1, n_positions);
}

// ============================================================================
// Node evaluators
// ============================================================================

void eval_relu(const float* in, float* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = in[i] > 0.0f ? in[i] : 0.0f;
}

void eval_add(const float* a, const float* b, float* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void eval_conv3d_fp32(const float* input, const Shape& in_shape, const float* weight,
                      const float* bias, const NodeAttrs& attrs, float* output,
                      const Shape& out_shape, int threads) {
    const int64_t ci = attrs.in_channels, co = attrs.out_channels;
    const int64_t kd = attrs.kernel[0], kh = attrs.kernel[1], kw = attrs.kernel[2];
    const int64_t sd = attrs.stride[0], sh = attrs.stride[1], sw = attrs.stride[2];
    const int64_t pd = attrs.padding[0], ph = attrs.padding[1], pw = attrs.padding[2];
    const int64_t id = in_shape.depth(), ih = in_shape.height(), iw = in_shape.width();
    const int64_t od = out_shape.depth(), oh = out_shape.height(), ow = out_shape.width();
    const int64_t k_size = ci * kd * kh * kw;
    const int64_t n_pos = od * oh * ow;
    const int64_t tile = im2col_tile_positions(k_size, n_pos, sizeof(float));
    const int64_t n_tiles = (n_pos + tile - 1) / tile;

    for (int64_t b = 0; b < in_shape.batch(); ++b) {
        const float* in_b = input + b * ci * id * ih * iw;
        float* out_b = output + b * co * n_pos;
        parallel_for(n_tiles, threads, [&](int64_t t0, int64_t t1) {
            // col layout: [k][t] so the accumulation loop strides unit over t
            std::vector<float> col(static_cast<size_t>(k_size * tile));
            std::vector<double> acc(static_cast<size_t>(tile));
            for (int64_t ti = t0; ti < t1; ++ti) {
                const int64_t p0 = ti * tile;
                const int64_t pn = std::min(n_pos, p0 + tile) - p0;
                for (int64_t k = 0; k < k_size; ++k) {
                    const int64_t c = k / (kd * kh * kw);
                    const int64_t rem = k % (kd * kh * kw);
                    const int64_t dz = rem / (kh * kw);
                    const int64_t dy = (rem / kw) % kh;
                    const int64_t dx = rem % kw;
                    float* dst = col.data() + k * tile;
                    const float* src_c = in_b + c * id * ih * iw;
                    for (int64_t t = 0; t < pn; ++t) {
                        const int64_t p = p0 + t;
                        const int64_t z = (p / (oh * ow)) * sd - pd + dz;
                        const int64_t y = ((p / ow) % oh) * sh - ph + dy;
                        const int64_t x = (p % ow) * sw - pw + dx;
                        dst[t] = (z >= 0 && z < id && y >= 0 && y < ih && x >= 0 && x < iw)
                                     ? src_c[(z * ih + y) * iw + x]
                                     : 0.0f;  // zero padding
                    }
                }
                for (int64_t oc = 0; oc < co; ++oc) {
                    std::fill(acc.begin(), acc.begin() + pn, 0.0);
                    const float* w_row = weight + oc * k_size;
                    // fixed reduction order: k ascending, 64-bit accumulation
                    for (int64_t k = 0; k < k_size; ++k) {
                        const double w = static_cast<double>(w_row[k]);
                        const float* c_row = col.data() + k * tile;
                        for (int64_t t = 0; t < pn; ++t)
                            acc[t] += w * static_cast<double>(c_row[t]);
                    }
                    const double bv = bias ? static_cast<double>(bias[oc]) : 0.0;
                    float* dst = out_b + oc * n_pos + p0;
                    for (int64_t t = 0; t < pn; ++t)
                        dst[t] = static_cast<float>(acc[t] + bv);
                }
            }
        });
    }
}

void eval_maxpool3d_fp32(const float* in, const Shape& in_shape, const NodeAttrs& attrs,
                         float* out, const Shape& out_shape) {
    const int64_t kd = attrs.kernel[0], kh = attrs.kernel[1], kw = attrs.kernel[2];
    const int64_t sd = attrs.stride[0], sh = attrs.stride[1], sw = attrs.stride[2];
    const int64_t id = in_shape.depth(), ih = in_shape.height(), iw = in_shape.width();
    const int64_t od = out_shape.depth(), oh = out_shape.height(), ow = out_shape.width();
    const int64_t chans = in_shape.batch() * in_shape.channels();
    for (int64_t c = 0; c < chans; ++c) {
        const float* src = in + c * id * ih * iw;
        float* dst = out + c * od * oh * ow;
        for (int64_t z = 0; z < od; ++z)
            for (int64_t y = 0; y < oh; ++y)
                for (int64_t x = 0; x < ow; ++x) {
                    float m = -std::numeric_limits<float>::infinity();
                    for (int64_t dz = 0; dz < kd; ++dz)
                        for (int64_t dy = 0; dy < kh; ++dy)
                            for (int64_t dx = 0; dx < kw; ++dx) {
                                float v = src[((z * sd + dz) * ih + y * sh + dy) * iw + x * sw + dx];
                                if (v > m) m = v;
                            }
                    dst[(z * oh + y) * ow + x] = m;
                }
    }
}

void eval_upsample3d_fp32(const float* in, const Shape& in_shape, const NodeAttrs& attrs,
                          float* out, const Shape& out_shape) {
    const int64_t id = in_shape.depth(), ih = in_shape.height(), iw = in_shape.width();
    const int64_t od = out_shape.depth(), oh = out_shape.height(), ow = out_shape.width();
    const int64_t chans = in_shape.batch() * in_shape.channels();
    for (int64_t c = 0; c < chans; ++c) {
        const float* src = in + c * id * ih * iw;
        float* dst = out + c * od * oh * ow;
        for (int64_t z = 0; z < od; ++z)
            for (int64_t y = 0; y < oh; ++y)
                for (int64_t x = 0; x < ow; ++x)
                    dst[(z * oh + y) * ow + x] =
                        src[((z / attrs.scale[0]) * ih + y / attrs.scale[1]) * iw +
                            x / attrs.scale[2]];
    }
}

void eval_softmax_fp32(const float* in, const Shape& shape, int64_t axis, float* out) {
    // iterate over all positions with the axis dimension innermost
    int64_t axis_len = shape.dims[axis];
    int64_t inner = 1;
    for (int64_t d = axis + 1; d < 5; ++d) inner *= shape.dims[d];
    int64_t outer = 1;
    for (int64_t d = 0; d < axis; ++d) outer *= shape.dims[d];
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
            const float* base = in + o * axis_len * inner + i;
            float* obase = out + o * axis_len * inner + i;
            float mx = base[0];
            for (int64_t a = 1; a < axis_len; ++a) mx = std::max(mx, base[a * inner]);
            double sum = 0.0;
            for (int64_t a = 0; a < axis_len; ++a)
                sum += std::exp(static_cast<double>(base[a * inner]) - static_cast<double>(mx));
            for (int64_t a = 0; a < axis_len; ++a)
                obase[a * inner] = static_cast<float>(
                    std::exp(static_cast<double>(base[a * inner]) - static_cast<double>(mx)) / sum);
        }
}

void eval_argmax_channels(const float* in, const Shape& in_shape, uint16_t* out) {
    const int64_t c = in_shape.channels();
    const int64_t vox = in_shape.voxels();
    for (int64_t b = 0; b < in_shape.batch(); ++b) {
        const float* src = in + b * c * vox;
        uint16_t* dst = out + b * vox;
        for (int64_t v = 0; v < vox; ++v) {
            int64_t best = 0;
            float bv = src[v];
            for (int64_t ch = 1; ch < c; ++ch) {
                float cv = src[ch * vox + v];
                if (cv > bv) {  // ties keep the lowest class index
                    bv = cv;
                    best = ch;
                }
            }
            dst[v] = static_cast<uint16_t>(best);
        }
    }
}

void eval_concat_fp32(const std::vector<std::pair<const float*, Shape>>& inputs, int64_t axis,
                      float* out, const Shape& out_shape) {
    // copy [outer][axis][inner] slabs
    int64_t inner = 1;
    for (int64_t d = axis + 1; d < 5; ++d) inner *= out_shape.dims[d];
    int64_t outer = 1;
    for (int64_t d = 0; d < axis; ++d) outer *= out_shape.dims[d];
    int64_t out_axis = out_shape.dims[axis];
    int64_t offset = 0;
    for (const auto& [src, shape] : inputs) {
        int64_t a = shape.dims[axis];
        for (int64_t o = 0; o < outer; ++o)
            std::memcpy(out + (o * out_axis + offset) * inner, src + o * a * inner,
                        static_cast<size_t>(a * inner) * sizeof(float));
        offset += a;
    }
}

// ============================================================================
// Graph executor
// ============================================================================

namespace {

const TensorValue& expect_kind(const std::map<std::string, TensorValue>& vals,
                               const std::string& name) {
    auto it = vals.find(name);
    if (it == vals.end())
        raise(ErrorCode::DanglingInput, "tensor '" + name + "' read before being produced");
    return it->second;
}

}  // namespace

std::map<std::string, TensorValue> execute_fp32(const Graph& g, const std::vector<Volume>& inputs,
                                                const ExecOptions& opts) {
    if (!g.validated())
        raise(ErrorCode::InvalidConfig, "graph must be validated before execution");
    if (inputs.size() != g.inputs.size())
        raise(ErrorCode::InputShapeMismatch,
              "graph declares " + std::to_string(g.inputs.size()) + " inputs, got " +
                  std::to_string(inputs.size()));

    std::map<std::string, TensorValue> vals;
    for (size_t i = 0; i < inputs.size(); ++i) {
        const TensorSpec& spec = g.tensor_specs.at(g.inputs[i].name);
        if (inputs[i].shape != spec.shape)
            raise(ErrorCode::InputShapeMismatch,
                  "input '" + spec.name + "' expects shape " + spec.shape.str() + ", got " +
                      inputs[i].shape.str());
        for (float v : inputs[i].data)
            if (!std::isfinite(v))
                raise(ErrorCode::NonFiniteValue, "input '" + spec.name + "' contains a non-finite value");
        TensorValue t;
        t.dtype = DType::F32;
        t.shape = inputs[i].shape;
        t.f32 = inputs[i].data;
        if (opts.on_tensor) opts.on_tensor(spec.name, t);
        vals.emplace(spec.name, std::move(t));
    }

    // weights are valid tensor sources (QDQ wrapping); materialize on demand
    auto resolve = [&](const std::string& name) -> const TensorValue& {
        auto it = vals.find(name);
        if (it != vals.end()) return it->second;
        const WeightEntry* w = g.find_weight(name);
        if (!w) raise(ErrorCode::DanglingInput, "tensor '" + name + "' read before being produced");
        TensorValue t;
        t.dtype = DType::F32;
        t.shape = g.tensor_specs.count(name) ? g.tensor_specs.at(name).shape : Shape{};
        if (!g.tensor_specs.count(name)) {
            // not part of inference (plain conv weight); build the 5-tuple
            size_t off = 5 - w->shape.size();
            for (size_t i = 0; i < w->shape.size(); ++i) t.shape.dims[off + i] = w->shape[i];
        }
        t.f32.assign(g.weight_data_f32(*w), g.weight_data_f32(*w) + w->element_count());
        return vals.emplace(name, std::move(t)).first->second;
    };

    for (size_t idx : g.topo_order) {
        const Node& n = g.nodes[idx];
        const TensorSpec& out_spec = g.tensor_specs.at(n.outputs[0]);
        TensorValue out = TensorValue::make(out_spec.dtype, out_spec.shape);
        switch (n.kind) {
            case OpKind::Conv3D: {
                const TensorValue& a = resolve(n.inputs[0]);
                const float* wdata = nullptr;
                const float* bdata = nullptr;
                if (!n.attrs.weight.empty()) {
                    wdata = g.weight_data_f32(*g.find_weight(n.attrs.weight));
                } else {
                    wdata = resolve(n.inputs[1]).f32.data();
                }
                if (!n.attrs.bias.empty()) bdata = g.weight_data_f32(*g.find_weight(n.attrs.bias));
                eval_conv3d_fp32(a.f32.data(), a.shape, wdata, bdata, n.attrs, out.f32.data(),
                                 out.shape, opts.threads);
                break;
            }
            case OpKind::ReLU: {
                const TensorValue& a = resolve(n.inputs[0]);
                eval_relu(a.f32.data(), out.f32.data(), out.element_count());
                break;
            }
            case OpKind::MaxPool3D: {
                const TensorValue& a = resolve(n.inputs[0]);
                eval_maxpool3d_fp32(a.f32.data(), a.shape, n.attrs, out.f32.data(), out.shape);
                break;
            }
            case OpKind::Upsample3D: {
                const TensorValue& a = resolve(n.inputs[0]);
                eval_upsample3d_fp32(a.f32.data(), a.shape, n.attrs, out.f32.data(), out.shape);
                break;
            }
            case OpKind::Concat: {
                std::vector<std::pair<const float*, Shape>> parts;
                for (const auto& in : n.inputs) {
                    const TensorValue& t = resolve(in);
                    parts.emplace_back(t.f32.data(), t.shape);
                }
                eval_concat_fp32(parts, n.attrs.axis, out.f32.data(), out.shape);
                break;
            }
            case OpKind::Add: {
                const TensorValue& a = resolve(n.inputs[0]);
                const TensorValue& b = resolve(n.inputs[1]);
                eval_add(a.f32.data(), b.f32.data(), out.f32.data(), out.element_count());
                break;
            }
            case OpKind::Softmax: {
                const TensorValue& a = resolve(n.inputs[0]);
                eval_softmax_fp32(a.f32.data(), a.shape, n.attrs.axis, out.f32.data());
                break;
            }
            case OpKind::ArgMax: {
                const TensorValue& a = resolve(n.inputs[0]);
                eval_argmax_channels(a.f32.data(), a.shape, out.u16.data());
                break;
            }
            case OpKind::Quantize: {
                const TensorValue& a = resolve(n.inputs[0]);
                const QuantParams& p = n.attrs.qparams;
                for (size_t i = 0; i < out.u8.size(); ++i)
                    out.u8[i] = static_cast<uint8_t>(
                        quantize_value(static_cast<double>(a.f32[i]), p));
                break;
            }
            case OpKind::Dequantize: {
                const TensorValue& a = resolve(n.inputs[0]);
                const QuantParams& p = n.attrs.qparams;
                for (size_t i = 0; i < out.f32.size(); ++i)
                    out.f32[i] = static_cast<float>(dequantize_code(a.u8[i], p));
                break;
            }
        }
        if (opts.on_tensor) opts.on_tensor(n.outputs[0], out);
        vals.emplace(n.outputs[0], std::move(out));
    }

    std::map<std::string, TensorValue> outputs;
    for (const auto& o : g.outputs) outputs.emplace(o.name, expect_kind(vals, o.name));
    return outputs;
}

}  // namespace vq
