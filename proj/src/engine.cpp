// SPDX-License-Identifier: Apache-2.0
#include "voxelquant/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <tuple>

#include "voxelquant/util.hpp"

namespace vq {

const char* plan_op_kind_name(PlanOpKind kind) {
    switch (kind) {
        case PlanOpKind::QuantizeTensor: return "QuantizeTensor";
        case PlanOpKind::DequantizeTensor: return "DequantizeTensor";
        case PlanOpKind::RequantizeTensor: return "RequantizeTensor";
        case PlanOpKind::ConvInt8: return "ConvInt8";
        case PlanOpKind::ConvFp32: return "ConvFp32";
        case PlanOpKind::MaxPoolInt8: return "MaxPoolInt8";
        case PlanOpKind::MaxPoolFp32: return "MaxPoolFp32";
        case PlanOpKind::UpsampleInt8: return "UpsampleInt8";
        case PlanOpKind::UpsampleFp32: return "UpsampleFp32";
        case PlanOpKind::ConcatInt8: return "ConcatInt8";
        case PlanOpKind::ConcatFp32: return "ConcatFp32";
        case PlanOpKind::AddFp32: return "AddFp32";
        case PlanOpKind::ReluFp32: return "ReluFp32";
        case PlanOpKind::SoftmaxFp32: return "SoftmaxFp32";
        case PlanOpKind::ArgMaxFp32: return "ArgMaxFp32";
        case PlanOpKind::LoadConstF32: return "LoadConstF32";
        case PlanOpKind::CopyTensor: return "CopyTensor";
    }
    return "?";
}

namespace {

constexpr int64_t kMaxConvReduction = 33025;  // floor((2^31 - 1) / 255^2)

enum class Domain { Runtime, Codes, WeightF32, WeightCodes };

struct Binding {
    Domain domain = Domain::Runtime;
    int32_t tid = -1;                     // Runtime / Codes
    int32_t param_idx = -1;               // Codes / WeightCodes
    const WeightEntry* weight = nullptr;  // WeightF32 / WeightCodes
    int32_t f32_tid = -1;                 // cached fp32 materialization
};

struct Builder {
    const Graph& g;
    EnginePlan plan;
    std::map<std::string, std::string> alias;  // name -> canonical name
    std::map<std::string, Binding> binds;      // canonical name -> binding
    std::map<std::tuple<double, int32_t, int>, int32_t> param_intern;
    std::vector<char> consumed;
    std::map<std::string, std::vector<size_t>> consumers;
    std::set<std::string> output_names;

    explicit Builder(const Graph& graph) : g(graph), consumed(graph.nodes.size(), 0) {}

    const std::string& canon(const std::string& name) const {
        auto it = alias.find(name);
        return it == alias.end() ? name : it->second;
    }

    Binding& get(const std::string& name) {
        auto it = binds.find(canon(name));
        if (it == binds.end())
            raise(ErrorCode::DanglingInput, "engine build: tensor '" + name + "' has no producer");
        return it->second;
    }

    void bind(const std::string& name, Binding b) { binds[name] = b; }

    void bind_alias(const std::string& name, const std::string& target) {
        alias[name] = canon(target);
    }

    int32_t intern(const QuantParams& p) {
        auto key = std::make_tuple(p.scale, p.zero_point, p.bits);
        auto it = param_intern.find(key);
        if (it != param_intern.end()) return it->second;
        int32_t idx = static_cast<int32_t>(plan.params.size());
        plan.params.push_back(p);
        param_intern.emplace(key, idx);
        return idx;
    }

    int32_t new_tensor(const std::string& name, DType dtype, const Shape& shape, TensorRole role,
                       int32_t param_idx = -1) {
        PlanTensor t;
        t.name = name;
        t.dtype = dtype;
        t.shape = shape;
        t.role = role;
        t.param_idx = param_idx;
        plan.tensors.push_back(std::move(t));
        return static_cast<int32_t>(plan.tensors.size() - 1);
    }

    const Shape& out_shape(const Node& n) const { return g.tensor_specs.at(n.outputs[0]).shape; }

    Shape weight_shape(const WeightEntry& w) const {
        Shape s;
        size_t off = 5 - w.shape.size();
        for (size_t i = 0; i < w.shape.size(); ++i) s.dims[off + i] = w.shape[i];
        return s;
    }

    // Appends an fp32 payload to the byte arena, returns its offset.
    uint64_t push_f32_payload(const float* data, size_t count) {
        uint64_t off = plan.weights.size();
        const uint8_t* raw = reinterpret_cast<const uint8_t*>(data);
        plan.weights.insert(plan.weights.end(), raw, raw + count * sizeof(float));
        return off;
    }

    // Returns a runtime fp32 tensor id holding the value of `name`, emitting a
    // DequantizeTensor or LoadConstF32 step on first use.
    int32_t materialize_f32(const std::string& name) {
        Binding& b = get(name);
        switch (b.domain) {
            case Domain::Runtime:
                return b.tid;
            case Domain::Codes: {
                if (b.f32_tid >= 0) return b.f32_tid;
                const PlanTensor& src = plan.tensors[static_cast<size_t>(b.tid)];
                int32_t tid = new_tensor(src.name + "#f32", DType::F32, src.shape,
                                         TensorRole::Intermediate);
                PlanOp op;
                op.kind = PlanOpKind::DequantizeTensor;
                op.inputs = {b.tid};
                op.output = tid;
                plan.ops.push_back(std::move(op));
                b.f32_tid = tid;
                return tid;
            }
            case Domain::WeightF32:
            case Domain::WeightCodes: {
                if (b.f32_tid >= 0) return b.f32_tid;
                const WeightEntry& w = *b.weight;
                const float* src = g.weight_data_f32(w);
                std::vector<float> payload(src, src + w.element_count());
                if (b.domain == Domain::WeightCodes) {
                    const QuantParams p = plan.params[static_cast<size_t>(b.param_idx)];
                    for (float& v : payload)
                        v = static_cast<float>(
                            dequantize_code(quantize_value(static_cast<double>(v), p), p));
                }
                PlanOp op;
                op.kind = PlanOpKind::LoadConstF32;
                op.w_offset = push_f32_payload(payload.data(), payload.size());
                op.w_nbytes = payload.size() * sizeof(float);
                int32_t tid = new_tensor(w.name + "#f32", DType::F32, weight_shape(w),
                                         TensorRole::Intermediate);
                op.output = tid;
                plan.ops.push_back(std::move(op));
                b.f32_tid = tid;
                return tid;
            }
        }
        return -1;  // unreachable
    }

    std::optional<size_t> single_consumer(const std::string& name) const {
        if (output_names.count(name)) return std::nullopt;
        auto it = consumers.find(name);
        if (it == consumers.end() || it->second.size() != 1) return std::nullopt;
        return it->second[0];
    }

    void lower_quantize(const Node& n) {
        const QuantParams& p = n.attrs.qparams;
        if (p.bits != 8)
            raise(ErrorCode::UnsupportedBits,
                  "engine requires 8-bit codes, node '" + n.id + "' uses " +
                      std::to_string(p.bits));
        Binding& b = get(n.inputs[0]);
        switch (b.domain) {
            case Domain::Runtime: {
                if (plan.tensors[static_cast<size_t>(b.tid)].dtype != DType::F32)
                    raise(ErrorCode::MalformedQdqPattern,
                          "quantize input '" + n.inputs[0] + "' is not fp32");
                int32_t pidx = intern(p);
                int32_t tid = new_tensor(n.outputs[0], DType::U8, out_shape(n),
                                         TensorRole::Intermediate, pidx);
                PlanOp op;
                op.kind = PlanOpKind::QuantizeTensor;
                op.inputs = {b.tid};
                op.output = tid;
                plan.ops.push_back(std::move(op));
                Binding nb;
                nb.domain = Domain::Codes;
                nb.tid = tid;
                nb.param_idx = pidx;
                bind(n.outputs[0], nb);
                break;
            }
            case Domain::Codes: {
                if (plan.params[static_cast<size_t>(b.param_idx)] == p) {
                    bind_alias(n.outputs[0], n.inputs[0]);
                } else {
                    int32_t pidx = intern(p);
                    int32_t tid = new_tensor(n.outputs[0], DType::U8, out_shape(n),
                                             TensorRole::Intermediate, pidx);
                    PlanOp op;
                    op.kind = PlanOpKind::RequantizeTensor;
                    op.inputs = {b.tid};
                    op.output = tid;
                    plan.ops.push_back(std::move(op));
                    Binding nb;
                    nb.domain = Domain::Codes;
                    nb.tid = tid;
                    nb.param_idx = pidx;
                    bind(n.outputs[0], nb);
                }
                break;
            }
            case Domain::WeightF32: {
                Binding nb;
                nb.domain = Domain::WeightCodes;
                nb.weight = b.weight;
                nb.param_idx = intern(p);
                bind(n.outputs[0], nb);
                break;
            }
            case Domain::WeightCodes:
                raise(ErrorCode::MalformedQdqPattern,
                      "weight '" + n.inputs[0] + "' quantized twice (node '" + n.id + "')");
        }
    }

    void lower_dequantize(const Node& n) {
        const QuantParams& p = n.attrs.qparams;
        if (p.bits != 8)
            raise(ErrorCode::UnsupportedBits,
                  "engine requires 8-bit codes, node '" + n.id + "' uses " +
                      std::to_string(p.bits));
        Binding& b = get(n.inputs[0]);
        if (b.domain != Domain::Codes && b.domain != Domain::WeightCodes)
            raise(ErrorCode::MalformedQdqPattern,
                  "dequantize input '" + n.inputs[0] + "' is not a quantized tensor");
        if (!(plan.params[static_cast<size_t>(b.param_idx)] == p))
            raise(ErrorCode::MalformedQdqPattern,
                  "dequantize params for '" + n.inputs[0] + "' do not match its producer");
        bind_alias(n.outputs[0], n.inputs[0]);
    }

    void lower_conv(const Node& n) {
        Binding& bx = get(n.inputs[0]);
        Binding* bw = n.attrs.weight.empty() ? &get(n.inputs[1]) : nullptr;

        // fused pattern: codes input, quantized weight, single-consumer chain
        // through an optional ReLU into a Quantize node
        std::optional<size_t> q_idx;
        std::optional<size_t> relu_idx;
        if (bx.domain == Domain::Codes && bw && bw->domain == Domain::WeightCodes) {
            if (auto c1 = single_consumer(n.outputs[0])) {
                const Node& n1 = g.nodes[*c1];
                if (n1.kind == OpKind::Quantize) {
                    q_idx = c1;
                } else if (n1.kind == OpKind::ReLU) {
                    if (auto c2 = single_consumer(n1.outputs[0])) {
                        if (g.nodes[*c2].kind == OpKind::Quantize) {
                            relu_idx = c1;
                            q_idx = c2;
                        }
                    }
                }
            }
        }

        if (q_idx) {
            const Node& qn = g.nodes[*q_idx];
            if (qn.attrs.qparams.bits != 8)
                raise(ErrorCode::UnsupportedBits,
                      "engine requires 8-bit codes, node '" + qn.id + "' uses " +
                          std::to_string(qn.attrs.qparams.bits));
            const int64_t k_size =
                n.attrs.kernel[0] * n.attrs.kernel[1] * n.attrs.kernel[2] * n.attrs.in_channels;
            if (k_size > kMaxConvReduction)
                raise(ErrorCode::AccumulatorOverflow,
                      "conv '" + n.id + "' reduction length " + std::to_string(k_size) +
                          " exceeds " + std::to_string(kMaxConvReduction) +
                          " and could overflow i32 accumulation");

            const QuantParams px = plan.params[static_cast<size_t>(bx.param_idx)];
            const QuantParams pw = plan.params[static_cast<size_t>(bw->param_idx)];
            const QuantParams py = qn.attrs.qparams;
            const double sxsw = px.scale * pw.scale;

            PlanOp op;
            op.kind = PlanOpKind::ConvInt8;
            op.inputs = {bx.tid};
            op.kernel = n.attrs.kernel;
            op.stride = n.attrs.stride;
            op.padding = n.attrs.padding;
            op.in_channels = n.attrs.in_channels;
            op.out_channels = n.attrs.out_channels;
            op.m = sxsw / py.scale;
            op.relu_fused = relu_idx.has_value();
            op.clamp_lo = op.relu_fused ? py.zero_point : 0;
            op.w_param_idx = bw->param_idx;

            const WeightEntry& we = *bw->weight;
            const float* wsrc = g.weight_data_f32(we);
            op.w_offset = plan.weights.size();
            op.w_nbytes = we.element_count();
            plan.weights.reserve(plan.weights.size() + static_cast<size_t>(we.element_count()));
            for (int64_t i = 0; i < we.element_count(); ++i)
                plan.weights.push_back(static_cast<uint8_t>(
                    quantize_value(static_cast<double>(wsrc[i]), pw)));

            op.bias_offset = plan.biases.size();
            op.bias_count = static_cast<uint64_t>(n.attrs.out_channels);
            if (!n.attrs.bias.empty()) {
                const WeightEntry& be = *g.find_weight(n.attrs.bias);
                const float* bsrc = g.weight_data_f32(be);
                for (int64_t oc = 0; oc < n.attrs.out_channels; ++oc) {
                    double v = round_half_even(static_cast<double>(bsrc[oc]) / sxsw);
                    if (!(v >= -2147483648.0 && v <= 2147483647.0))
                        raise(ErrorCode::AccumulatorOverflow,
                              "conv '" + n.id + "' folded bias does not fit i32");
                    plan.biases.push_back(static_cast<int32_t>(v));
                }
            } else {
                plan.biases.insert(plan.biases.end(),
                                   static_cast<size_t>(n.attrs.out_channels), 0);
            }

            int32_t pidx = intern(py);
            int32_t tid = new_tensor(qn.outputs[0], DType::U8,
                                     g.tensor_specs.at(qn.outputs[0]).shape,
                                     TensorRole::Intermediate, pidx);
            op.output = tid;
            plan.ops.push_back(std::move(op));
            Binding nb;
            nb.domain = Domain::Codes;
            nb.tid = tid;
            nb.param_idx = pidx;
            bind(qn.outputs[0], nb);
            consumed[*q_idx] = 1;
            if (relu_idx) consumed[*relu_idx] = 1;
            return;
        }

        // fallback: fp32 conv, with the weight snapped through its
        // quantize/dequantize pair when one was present
        PlanOp op;
        op.kind = PlanOpKind::ConvFp32;
        op.inputs = {materialize_f32(n.inputs[0])};
        op.kernel = n.attrs.kernel;
        op.stride = n.attrs.stride;
        op.padding = n.attrs.padding;
        op.in_channels = n.attrs.in_channels;
        op.out_channels = n.attrs.out_channels;

        if (!n.attrs.weight.empty()) {
            const WeightEntry& we = *g.find_weight(n.attrs.weight);
            op.w_offset = push_f32_payload(g.weight_data_f32(we), we.element_count());
            op.w_nbytes = we.element_count() * sizeof(float);
        } else {
            Binding& wb = *bw;
            if (wb.domain == Domain::WeightF32 || wb.domain == Domain::WeightCodes) {
                const WeightEntry& we = *wb.weight;
                const float* src = g.weight_data_f32(we);
                std::vector<float> payload(src, src + we.element_count());
                if (wb.domain == Domain::WeightCodes) {
                    const QuantParams p = plan.params[static_cast<size_t>(wb.param_idx)];
                    for (float& v : payload)
                        v = static_cast<float>(
                            dequantize_code(quantize_value(static_cast<double>(v), p), p));
                }
                op.w_offset = push_f32_payload(payload.data(), payload.size());
                op.w_nbytes = payload.size() * sizeof(float);
            } else {
                // runtime weight tensor
                op.inputs.push_back(materialize_f32(n.inputs[1]));
            }
        }
        if (!n.attrs.bias.empty()) {
            const WeightEntry& be = *g.find_weight(n.attrs.bias);
            op.b_offset = push_f32_payload(g.weight_data_f32(be), be.element_count());
            op.b_nbytes = be.element_count() * sizeof(float);
        }
        int32_t tid =
            new_tensor(n.outputs[0], DType::F32, out_shape(n), TensorRole::Intermediate);
        op.output = tid;
        plan.ops.push_back(std::move(op));
        Binding nb;
        nb.domain = Domain::Runtime;
        nb.tid = tid;
        bind(n.outputs[0], nb);
    }

    void lower_pool_like(const Node& n) {
        Binding& b = get(n.inputs[0]);
        PlanOp op;
        op.kernel = n.attrs.kernel;
        op.stride = n.attrs.stride;
        op.scale = n.attrs.scale;
        Binding nb;
        if (b.domain == Domain::Codes) {
            op.kind = n.kind == OpKind::MaxPool3D ? PlanOpKind::MaxPoolInt8
                                                  : PlanOpKind::UpsampleInt8;
            op.inputs = {b.tid};
            int32_t tid = new_tensor(n.outputs[0], DType::U8, out_shape(n),
                                     TensorRole::Intermediate, b.param_idx);
            op.output = tid;
            nb.domain = Domain::Codes;
            nb.tid = tid;
            nb.param_idx = b.param_idx;
        } else {
            op.kind = n.kind == OpKind::MaxPool3D ? PlanOpKind::MaxPoolFp32
                                                  : PlanOpKind::UpsampleFp32;
            op.inputs = {materialize_f32(n.inputs[0])};
            int32_t tid =
                new_tensor(n.outputs[0], DType::F32, out_shape(n), TensorRole::Intermediate);
            op.output = tid;
            nb.domain = Domain::Runtime;
            nb.tid = tid;
        }
        plan.ops.push_back(std::move(op));
        bind(n.outputs[0], nb);
    }

    void lower_concat(const Node& n) {
        bool all_codes = true;
        for (const auto& in : n.inputs)
            if (get(in).domain != Domain::Codes) all_codes = false;

        PlanOp op;
        op.axis = n.attrs.axis;
        Binding nb;
        if (all_codes) {
            // adopt the first input's params; requantize the rest to match
            int32_t pidx = get(n.inputs[0]).param_idx;
            op.kind = PlanOpKind::ConcatInt8;
            for (const auto& in : n.inputs) {
                Binding& b = get(in);
                if (b.param_idx == pidx) {
                    op.inputs.push_back(b.tid);
                } else {
                    const PlanTensor& src = plan.tensors[static_cast<size_t>(b.tid)];
                    int32_t tmp = new_tensor(src.name + "#rq", DType::U8, src.shape,
                                             TensorRole::Intermediate, pidx);
                    PlanOp rq;
                    rq.kind = PlanOpKind::RequantizeTensor;
                    rq.inputs = {b.tid};
                    rq.output = tmp;
                    plan.ops.push_back(std::move(rq));
                    op.inputs.push_back(tmp);
                }
            }
            int32_t tid = new_tensor(n.outputs[0], DType::U8, out_shape(n),
                                     TensorRole::Intermediate, pidx);
            op.output = tid;
            nb.domain = Domain::Codes;
            nb.tid = tid;
            nb.param_idx = pidx;
        } else {
            op.kind = PlanOpKind::ConcatFp32;
            for (const auto& in : n.inputs) op.inputs.push_back(materialize_f32(in));
            int32_t tid =
                new_tensor(n.outputs[0], DType::F32, out_shape(n), TensorRole::Intermediate);
            op.output = tid;
            nb.domain = Domain::Runtime;
            nb.tid = tid;
        }
        plan.ops.push_back(std::move(op));
        bind(n.outputs[0], nb);
    }

    void lower_fallback(const Node& n) {
        PlanOp op;
        op.axis = n.attrs.axis;
        switch (n.kind) {
            case OpKind::Add: op.kind = PlanOpKind::AddFp32; break;
            case OpKind::ReLU: op.kind = PlanOpKind::ReluFp32; break;
            case OpKind::Softmax: op.kind = PlanOpKind::SoftmaxFp32; break;
            case OpKind::ArgMax: op.kind = PlanOpKind::ArgMaxFp32; break;
            default:
                raise(ErrorCode::InvalidConfig,
                      "engine build: unexpected fallback kind for node '" + n.id + "'");
        }
        for (const auto& in : n.inputs) op.inputs.push_back(materialize_f32(in));
        const TensorSpec& spec = g.tensor_specs.at(n.outputs[0]);
        int32_t tid =
            new_tensor(n.outputs[0], spec.dtype, spec.shape, TensorRole::Intermediate);
        op.output = tid;
        plan.ops.push_back(std::move(op));
        Binding nb;
        nb.domain = Domain::Runtime;
        nb.tid = tid;
        bind(n.outputs[0], nb);
    }

    void surface_output(const TensorSpec& spec) {
        Binding& b = get(spec.name);
        if (b.domain == Domain::Codes && spec.dtype == DType::F32) {
            int32_t tid = new_tensor(spec.name, DType::F32,
                                     plan.tensors[static_cast<size_t>(b.tid)].shape,
                                     TensorRole::Output);
            PlanOp op;
            op.kind = PlanOpKind::DequantizeTensor;
            op.inputs = {b.tid};
            op.output = tid;
            plan.ops.push_back(std::move(op));
            plan.output_ids.push_back(tid);
            return;
        }
        int32_t tid = b.tid;
        if (b.domain == Domain::WeightF32 || b.domain == Domain::WeightCodes)
            tid = materialize_f32(spec.name);
        PlanTensor& t = plan.tensors[static_cast<size_t>(tid)];
        if (t.role == TensorRole::Intermediate) {
            t.role = TensorRole::Output;
            t.name = spec.name;
            plan.output_ids.push_back(tid);
        } else {
            // tensor already claimed by an input or another output: copy out
            int32_t fresh = new_tensor(spec.name, t.dtype, t.shape, TensorRole::Output);
            PlanOp op;
            op.kind = PlanOpKind::CopyTensor;
            op.inputs = {tid};
            op.output = fresh;
            plan.ops.push_back(std::move(op));
            plan.output_ids.push_back(fresh);
        }
    }

    EnginePlan run() {
        plan.model_name = g.name;
        for (const auto& in : g.inputs) {
            if (in.dtype != DType::F32)
                raise(ErrorCode::InvalidConfig,
                      "engine supports fp32 graph inputs, '" + in.name + "' is not");
            // validated spec, not the declared one: the batch must be bound
            const Shape& bound = g.tensor_specs.at(in.name).shape;
            int32_t tid = new_tensor(in.name, DType::F32, bound, TensorRole::Input);
            plan.input_ids.push_back(tid);
            Binding b;
            b.domain = Domain::Runtime;
            b.tid = tid;
            bind(in.name, b);
        }
        for (const auto& w : g.weights) {
            Binding b;
            b.domain = Domain::WeightF32;
            b.weight = &w;
            bind(w.name, b);
        }
        for (size_t i = 0; i < g.nodes.size(); ++i)
            for (const auto& in : g.nodes[i].inputs) consumers[in].push_back(i);
        for (const auto& o : g.outputs) output_names.insert(o.name);

        for (size_t idx : g.topo_order) {
            if (consumed[idx]) continue;
            const Node& n = g.nodes[idx];
            switch (n.kind) {
                case OpKind::Quantize: lower_quantize(n); break;
                case OpKind::Dequantize: lower_dequantize(n); break;
                case OpKind::Conv3D: lower_conv(n); break;
                case OpKind::MaxPool3D:
                case OpKind::Upsample3D: lower_pool_like(n); break;
                case OpKind::Concat: lower_concat(n); break;
                case OpKind::Add:
                case OpKind::ReLU:
                case OpKind::Softmax:
                case OpKind::ArgMax: lower_fallback(n); break;
            }
        }
        for (const auto& o : g.outputs) surface_output(o);
        plan.workspace_bytes = compute_workspace_bytes(plan);
        return std::move(plan);
    }
};

}  // namespace

EnginePlan build_engine(const Graph& g) {
    if (!g.validated())
        raise(ErrorCode::InvalidConfig, "graph must be validated before engine build");
    Builder b(g);
    return b.run();
}

uint64_t compute_workspace_bytes(const EnginePlan& plan) {
    const size_t nt = plan.tensors.size();
    std::vector<int64_t> produced(nt, -1);
    std::vector<int64_t> last_use(nt, -1);
    for (size_t s = 0; s < plan.ops.size(); ++s) {
        const PlanOp& op = plan.ops[s];
        if (op.output >= 0) produced[static_cast<size_t>(op.output)] = static_cast<int64_t>(s);
        for (int32_t in : op.inputs)
            last_use[static_cast<size_t>(in)] =
                std::max(last_use[static_cast<size_t>(in)], static_cast<int64_t>(s));
    }
    uint64_t peak = 0;
    for (size_t s = 0; s < plan.ops.size(); ++s) {
        uint64_t live = 0;
        for (size_t t = 0; t < nt; ++t) {
            if (plan.tensors[t].role != TensorRole::Intermediate) continue;
            if (produced[t] < 0) continue;
            int64_t death = std::max(last_use[t], produced[t]);
            if (produced[t] <= static_cast<int64_t>(s) && static_cast<int64_t>(s) <= death)
                live += plan.tensors[t].nbytes();
        }
        peak = std::max(peak, live);
    }
    return peak;
}

// ============================================================================
// Serialization
// ============================================================================

namespace {

constexpr char kMagic[4] = {'V', 'Q', 'E', '1'};
constexpr uint8_t kVersion = 1;

void write_plan_blob(ByteWriter& w, const EnginePlan& p) {
    w.str(p.model_name);
    w.u32(static_cast<uint32_t>(p.tensors.size()));
    for (const PlanTensor& t : p.tensors) {
        w.str(t.name);
        w.u8(static_cast<uint8_t>(t.dtype));
        w.u8(static_cast<uint8_t>(t.role));
        for (int64_t d : t.shape.dims) w.u64(static_cast<uint64_t>(d));
        w.i32(t.param_idx);
    }
    w.u32(static_cast<uint32_t>(p.ops.size()));
    for (const PlanOp& op : p.ops) {
        w.u8(static_cast<uint8_t>(op.kind));
        w.u8(op.relu_fused ? 1 : 0);
        w.u8(static_cast<uint8_t>(op.inputs.size()));
        for (int32_t in : op.inputs) w.i32(in);
        w.i32(op.output);
        for (int64_t v : op.kernel) w.u64(static_cast<uint64_t>(v));
        for (int64_t v : op.stride) w.u64(static_cast<uint64_t>(v));
        for (int64_t v : op.padding) w.u64(static_cast<uint64_t>(v));
        for (int64_t v : op.scale) w.u64(static_cast<uint64_t>(v));
        w.u64(static_cast<uint64_t>(op.in_channels));
        w.u64(static_cast<uint64_t>(op.out_channels));
        w.u64(static_cast<uint64_t>(op.axis));
        w.f64(op.m);
        w.i32(op.clamp_lo);
        w.i32(op.w_param_idx);
        w.u64(op.w_offset);
        w.u64(op.w_nbytes);
        w.u64(op.b_offset);
        w.u64(op.b_nbytes);
        w.u64(op.bias_offset);
        w.u64(op.bias_count);
    }
    w.u32(static_cast<uint32_t>(p.input_ids.size()));
    for (int32_t id : p.input_ids) w.i32(id);
    w.u32(static_cast<uint32_t>(p.output_ids.size()));
    for (int32_t id : p.output_ids) w.i32(id);
    w.u64(p.workspace_bytes);
}

void parse_plan_blob(ByteReader& r, EnginePlan& p) {
    p.model_name = r.str();
    uint32_t nt = r.u32();
    p.tensors.resize(nt);
    for (PlanTensor& t : p.tensors) {
        t.name = r.str();
        uint8_t dt = r.u8();
        if (dt > 3) raise(ErrorCode::SyntaxError, "engine plan: bad dtype tag");
        t.dtype = static_cast<DType>(dt);
        uint8_t role = r.u8();
        if (role > 2) raise(ErrorCode::SyntaxError, "engine plan: bad tensor role");
        t.role = static_cast<TensorRole>(role);
        for (int64_t& d : t.shape.dims) {
            d = static_cast<int64_t>(r.u64());
            if (d < 1) raise(ErrorCode::SyntaxError, "engine plan: non-positive dimension");
        }
        t.param_idx = r.i32();
    }
    uint32_t no = r.u32();
    p.ops.resize(no);
    for (PlanOp& op : p.ops) {
        uint8_t kind = r.u8();
        if (kind > static_cast<uint8_t>(PlanOpKind::CopyTensor))
            raise(ErrorCode::SyntaxError, "engine plan: bad op kind");
        op.kind = static_cast<PlanOpKind>(kind);
        op.relu_fused = r.u8() != 0;
        uint8_t ni = r.u8();
        op.inputs.resize(ni);
        for (int32_t& in : op.inputs) in = r.i32();
        op.output = r.i32();
        for (int64_t& v : op.kernel) v = static_cast<int64_t>(r.u64());
        for (int64_t& v : op.stride) v = static_cast<int64_t>(r.u64());
        for (int64_t& v : op.padding) v = static_cast<int64_t>(r.u64());
        for (int64_t& v : op.scale) v = static_cast<int64_t>(r.u64());
        op.in_channels = static_cast<int64_t>(r.u64());
        op.out_channels = static_cast<int64_t>(r.u64());
        op.axis = static_cast<int64_t>(r.u64());
        op.m = r.f64();
        op.clamp_lo = r.i32();
        op.w_param_idx = r.i32();
        op.w_offset = r.u64();
        op.w_nbytes = r.u64();
        op.b_offset = r.u64();
        op.b_nbytes = r.u64();
        op.bias_offset = r.u64();
        op.bias_count = r.u64();
    }
    uint32_t nin = r.u32();
    p.input_ids.resize(nin);
    for (int32_t& id : p.input_ids) id = r.i32();
    uint32_t nout = r.u32();
    p.output_ids.resize(nout);
    for (int32_t& id : p.output_ids) id = r.i32();
    p.workspace_bytes = r.u64();
    if (r.remaining() != 0)
        raise(ErrorCode::SyntaxError, "engine plan: trailing bytes in plan section");
}

void validate_plan(const EnginePlan& p) {
    auto check_tid = [&](int32_t id, const char* what) {
        if (id < 0 || static_cast<size_t>(id) >= p.tensors.size())
            raise(ErrorCode::SyntaxError,
                  std::string("engine plan: ") + what + " tensor id out of range");
    };
    for (const PlanTensor& t : p.tensors) {
        if (t.param_idx != -1 &&
            (t.param_idx < 0 || static_cast<size_t>(t.param_idx) >= p.params.size()))
            raise(ErrorCode::SyntaxError, "engine plan: tensor param index out of range");
    }
    for (const PlanOp& op : p.ops) {
        for (int32_t in : op.inputs) check_tid(in, "op input");
        check_tid(op.output, "op output");
        if (op.w_param_idx != -1 &&
            (op.w_param_idx < 0 || static_cast<size_t>(op.w_param_idx) >= p.params.size()))
            raise(ErrorCode::SyntaxError, "engine plan: op param index out of range");
        if (op.w_offset + op.w_nbytes > p.weights.size() || op.w_offset + op.w_nbytes < op.w_offset)
            raise(ErrorCode::SyntaxError, "engine plan: weight slice out of bounds");
        if (op.b_offset + op.b_nbytes > p.weights.size() || op.b_offset + op.b_nbytes < op.b_offset)
            raise(ErrorCode::SyntaxError, "engine plan: bias payload out of bounds");
        if (op.bias_offset + op.bias_count > p.biases.size() ||
            op.bias_offset + op.bias_count < op.bias_offset)
            raise(ErrorCode::SyntaxError, "engine plan: bias slice out of bounds");
    }
    for (int32_t id : p.input_ids) check_tid(id, "graph input");
    for (int32_t id : p.output_ids) check_tid(id, "graph output");
    for (const QuantParams& q : p.params) {
        if (!(std::isfinite(q.scale) && q.scale > 0.0) || q.bits < 2 || q.bits > 8 ||
            q.zero_point < 0 || q.zero_point > q.qmax())
            raise(ErrorCode::SyntaxError, "engine plan: invalid quantization params");
    }
    if (compute_workspace_bytes(p) != p.workspace_bytes)
        raise(ErrorCode::InvalidConfig, "engine plan: stored workspace size does not match plan");
}

}  // namespace

std::vector<uint8_t> serialize_engine(const EnginePlan& plan) {
    ByteWriter w;
    w.bytes(reinterpret_cast<const uint8_t*>(kMagic), 4);
    w.u8(kVersion);
    w.u8(0);  // flags, reserved

    ByteWriter pw;
    write_plan_blob(pw, plan);
    w.u32(static_cast<uint32_t>(pw.size()));
    w.bytes(pw.data().data(), pw.size());

    w.u32(static_cast<uint32_t>(plan.params.size()));
    for (const QuantParams& q : plan.params) {
        w.f64(q.scale);
        w.i32(q.zero_point);
        w.u8(static_cast<uint8_t>(q.bits));
    }
    w.u64(plan.weights.size());
    w.bytes(plan.weights.data(), plan.weights.size());
    w.u64(plan.biases.size());
    for (int32_t b : plan.biases) w.i32(b);

    uint32_t crc = crc32(w.data().data(), w.size());
    w.u32(crc);
    return w.take();
}

EnginePlan deserialize_engine(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 4)
        raise(ErrorCode::TruncatedFile, "engine file shorter than its magic");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0)
        raise(ErrorCode::BadMagic, "not an engine file (bad magic)");
    if (bytes.size() < 6)
        raise(ErrorCode::TruncatedFile, "engine file ends inside the header");
    if (bytes[4] != kVersion)
        raise(ErrorCode::UnsupportedVersion,
              "engine format version " + std::to_string(bytes[4]) + ", expected " +
                  std::to_string(kVersion));

    // structural walk before any content check, so cut-off files report
    // truncation rather than a checksum failure
    size_t off = 6;
    auto need = [&](uint64_t n, const char* what) {
        if (n > static_cast<uint64_t>(bytes.size() - off))
            raise(ErrorCode::TruncatedFile, std::string("engine file ends inside ") + what);
        off += static_cast<size_t>(n);
    };
    auto read_u32 = [&](const char* what) {
        if (bytes.size() - off < 4)
            raise(ErrorCode::TruncatedFile, std::string("engine file ends inside ") + what);
        uint32_t v;
        std::memcpy(&v, bytes.data() + off, 4);
        off += 4;
        return v;
    };
    auto read_u64 = [&](const char* what) {
        if (bytes.size() - off < 8)
            raise(ErrorCode::TruncatedFile, std::string("engine file ends inside ") + what);
        uint64_t v;
        std::memcpy(&v, bytes.data() + off, 8);
        off += 8;
        return v;
    };
    need(read_u32("the plan section"), "the plan section");
    uint32_t n_params = read_u32("the param section");
    need(static_cast<uint64_t>(n_params) * 13, "the param section");
    need(read_u64("the weight section"), "the weight section");
    uint64_t bias_count = read_u64("the bias section");
    if (bias_count > (UINT64_MAX / 4))
        raise(ErrorCode::TruncatedFile, "engine file ends inside the bias section");
    need(bias_count * 4, "the bias section");
    if (bytes.size() - off < 4)
        raise(ErrorCode::TruncatedFile, "engine file is missing its checksum");
    if (bytes.size() - off > 4)
        raise(ErrorCode::SyntaxError, "engine file has trailing bytes after its checksum");

    uint32_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
    uint32_t actual = crc32(bytes.data(), bytes.size() - 4);
    if (stored != actual)
        raise(ErrorCode::ChecksumMismatch, "engine file checksum does not match its contents");

    ByteReader r(bytes.data() + 6, bytes.size() - 6 - 4);
    EnginePlan plan;
    {
        uint32_t plan_len = r.u32();
        ByteReader pr(bytes.data() + 6 + 4, plan_len);
        parse_plan_blob(pr, plan);
        r.skip(plan_len);
    }
    uint32_t np = r.u32();
    plan.params.resize(np);
    for (QuantParams& q : plan.params) {
        q.scale = r.f64();
        q.zero_point = r.i32();
        q.bits = r.u8();
    }
    uint64_t wlen = r.u64();
    plan.weights.resize(static_cast<size_t>(wlen));
    if (wlen) r.bytes(plan.weights.data(), static_cast<size_t>(wlen));
    uint64_t bc = r.u64();
    plan.biases.resize(static_cast<size_t>(bc));
    for (int32_t& b : plan.biases) b = r.i32();

    validate_plan(plan);
    return plan;
}

void save_engine(const EnginePlan& plan, const std::string& path) {
    write_file(path, serialize_engine(plan));
}

EnginePlan load_engine(const std::string& path) {
    return deserialize_engine(read_file(path));
}

std::string plan_summary(const EnginePlan& plan) {
    std::ostringstream os;
    os << "model: " << plan.model_name << "\n";
    os << "tensors: " << plan.tensors.size() << "  ops: " << plan.ops.size()
       << "  params: " << plan.params.size() << "\n";
    os << "weight arena: " << plan.weights.size() << " bytes  bias arena: " << plan.biases.size()
       << " entries\n";
    os << "workspace: " << plan.workspace_bytes << " bytes\n";
    os << "inputs:\n";
    for (int32_t id : plan.input_ids) {
        const PlanTensor& t = plan.tensors[static_cast<size_t>(id)];
        os << "  " << t.name << " " << dtype_name(t.dtype) << " " << t.shape.str() << "\n";
    }
    os << "outputs:\n";
    for (int32_t id : plan.output_ids) {
        const PlanTensor& t = plan.tensors[static_cast<size_t>(id)];
        os << "  " << t.name << " " << dtype_name(t.dtype) << " " << t.shape.str() << "\n";
    }
    os << "steps:\n";
    for (size_t i = 0; i < plan.ops.size(); ++i) {
        const PlanOp& op = plan.ops[i];
        os << "  [" << i << "] " << plan_op_kind_name(op.kind) << " (";
        for (size_t j = 0; j < op.inputs.size(); ++j) {
            if (j) os << ", ";
            os << plan.tensors[static_cast<size_t>(op.inputs[j])].name;
        }
        os << ") -> " << plan.tensors[static_cast<size_t>(op.output)].name;
        if (op.kind == PlanOpKind::ConvInt8) {
            os << "  m=" << op.m << (op.relu_fused ? " relu" : "") << " k=" << op.kernel[0] << "x"
               << op.kernel[1] << "x" << op.kernel[2];
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace vq
