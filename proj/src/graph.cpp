// SPDX-License-Identifier: Apache-2.0
#include "voxelquant/graph.hpp"

#include <algorithm>
#include <deque>
#include <json.hpp>
#include <set>

#include "voxelquant/util.hpp"

namespace vq {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

const char* op_kind_name(OpKind k) {
    switch (k) {
        case OpKind::Conv3D: return "Conv3D";
        case OpKind::ReLU: return "ReLU";
        case OpKind::MaxPool3D: return "MaxPool3D";
        case OpKind::Upsample3D: return "Upsample3D";
        case OpKind::Concat: return "Concat";
        case OpKind::Add: return "Add";
        case OpKind::Softmax: return "Softmax";
        case OpKind::ArgMax: return "ArgMax";
        case OpKind::Quantize: return "Quantize";
        case OpKind::Dequantize: return "Dequantize";
    }
    return "?";
}

std::optional<OpKind> op_kind_from_name(const std::string& name) {
    static const std::map<std::string, OpKind> table = {
        {"Conv3D", OpKind::Conv3D},         {"ReLU", OpKind::ReLU},
        {"MaxPool3D", OpKind::MaxPool3D},   {"Upsample3D", OpKind::Upsample3D},
        {"Concat", OpKind::Concat},         {"Add", OpKind::Add},
        {"Softmax", OpKind::Softmax},       {"ArgMax", OpKind::ArgMax},
        {"Quantize", OpKind::Quantize},     {"Dequantize", OpKind::Dequantize},
    };
    auto it = table.find(name);
    if (it == table.end()) return std::nullopt;
    return it->second;
}

bool NodeAttrs::operator==(const NodeAttrs& o) const {
    return kernel == o.kernel && stride == o.stride && padding == o.padding &&
           in_channels == o.in_channels && out_channels == o.out_channels && weight == o.weight &&
           bias == o.bias && scale == o.scale && axis == o.axis && qparams == o.qparams;
}

int64_t WeightEntry::element_count() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

const WeightEntry* Graph::find_weight(const std::string& name) const {
    auto it = weight_index.find(name);
    if (it == weight_index.end()) return nullptr;
    return &weights[it->second];
}

const float* Graph::weight_data_f32(const WeightEntry& w) const {
    if (w.dtype != DType::F32)
        raise(ErrorCode::ShapeMismatch, "weight '" + w.name + "' is not f32");
    return reinterpret_cast<const float*>(blob.data() + w.offset);
}

bool Graph::same_document(const Graph& o) const {
    return name == o.name && inputs == o.inputs && outputs == o.outputs && nodes == o.nodes &&
           weights == o.weights && blob == o.blob;
}

int64_t conv_out_dim(int64_t in, int64_t kernel, int64_t stride, int64_t pad) {
    return (in + 2 * pad - kernel) / stride + 1;
}

// ============================================================================
// Parsing
// ============================================================================

namespace {

[[noreturn]] void syntax(const std::string& msg) { raise(ErrorCode::SyntaxError, msg); }

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key())) syntax("unknown key '" + it.key() + "' in " + where);
}

void require_keys(const json& obj, const std::vector<std::string>& keys, const std::string& where) {
    for (const auto& k : keys)
        if (!obj.contains(k)) syntax("missing key '" + k + "' in " + where);
}

int64_t parse_pos_int(const json& v, const std::string& where) {
    if (!v.is_number_integer() || v.get<int64_t>() <= 0)
        syntax(where + " must be a positive integer");
    return v.get<int64_t>();
}

Shape parse_shape(const json& v, const std::string& where) {
    if (!v.is_array() || v.size() != 5) syntax(where + " must be a 5-element array");
    Shape s;
    if (v[0].is_string()) {
        if (v[0].get<std::string>() != "dynamic") syntax(where + "[0] must be int or \"dynamic\"");
        s.dims[0] = Shape::kDynamicBatch;
    } else {
        s.dims[0] = parse_pos_int(v[0], where + "[0]");
    }
    for (size_t i = 1; i < 5; ++i)
        s.dims[i] = parse_pos_int(v[i], where + "[" + std::to_string(i) + "]");
    return s;
}

std::array<int64_t, 3> parse_triple(const json& v, const std::string& where, int64_t min_value) {
    if (!v.is_array() || v.size() != 3) syntax(where + " must be a 3-element array");
    std::array<int64_t, 3> out{};
    for (size_t i = 0; i < 3; ++i) {
        if (!v[i].is_number_integer() || v[i].get<int64_t>() < min_value)
            syntax(where + " entries must be integers >= " + std::to_string(min_value));
        out[i] = v[i].get<int64_t>();
    }
    return out;
}

TensorSpec parse_tensor_spec(const json& v, const std::string& where) {
    if (!v.is_object()) syntax(where + " must be an object");
    check_keys(v, {"name", "dtype", "shape"}, where);
    require_keys(v, {"name", "dtype", "shape"}, where);
    TensorSpec t;
    t.name = v["name"].get<std::string>();
    if (t.name.empty()) syntax(where + " name must be non-empty");
    t.dtype = dtype_from_name(v["dtype"].get<std::string>());
    t.shape = parse_shape(v["shape"], where + " shape");
    return t;
}

QuantParams parse_qparams(const json& attrs, const std::string& where) {
    require_keys(attrs, {"scale", "zero_point", "bits"}, where);
    QuantParams p;
    if (!attrs["scale"].is_number()) syntax(where + " scale must be a number");
    p.scale = attrs["scale"].get<double>();
    if (!(p.scale > 0.0) || !std::isfinite(p.scale)) syntax(where + " scale must be finite and > 0");
    if (!attrs["zero_point"].is_number_integer()) syntax(where + " zero_point must be an integer");
    p.zero_point = attrs["zero_point"].get<int32_t>();
    if (!attrs["bits"].is_number_integer()) syntax(where + " bits must be an integer");
    p.bits = attrs["bits"].get<int>();
    if (p.bits < 2 || p.bits > 8) syntax(where + " bits must be in [2, 8]");
    if (p.zero_point < 0 || p.zero_point > p.qmax())
        syntax(where + " zero_point outside [0, " + std::to_string(p.qmax()) + "]");
    return p;
}

Node parse_node(const json& v, const std::string& where) {
    if (!v.is_object()) syntax(where + " must be an object");
    check_keys(v, {"id", "kind", "inputs", "outputs", "attrs"}, where);
    require_keys(v, {"id", "kind", "inputs", "outputs"}, where);
    Node n;
    n.id = v["id"].get<std::string>();
    if (n.id.empty()) syntax(where + " id must be non-empty");
    std::string kind_name = v["kind"].get<std::string>();
    auto kind = op_kind_from_name(kind_name);
    if (!kind)
        raise(ErrorCode::UnknownOpKind, "node '" + n.id + "' has unknown kind '" + kind_name + "'");
    n.kind = *kind;
    for (const char* field : {"inputs", "outputs"}) {
        const auto& arr = v[field];
        if (!arr.is_array() || arr.empty())
            syntax("node '" + n.id + "' " + field + " must be a non-empty array");
        for (const auto& e : arr) {
            if (!e.is_string() || e.get<std::string>().empty())
                syntax("node '" + n.id + "' " + field + " entries must be non-empty strings");
            (field[0] == 'i' ? n.inputs : n.outputs).push_back(e.get<std::string>());
        }
    }
    if (n.outputs.size() != 1)
        syntax("node '" + n.id + "' must have exactly one output");

    json attrs = v.contains("attrs") ? v["attrs"] : json::object();
    if (!attrs.is_object()) syntax("node '" + n.id + "' attrs must be an object");
    const std::string aw = "node '" + n.id + "' attrs";
    switch (n.kind) {
        case OpKind::Conv3D: {
            check_keys(attrs,
                       {"kernel", "stride", "padding", "in_channels", "out_channels", "weight",
                        "bias"},
                       aw);
            require_keys(attrs, {"kernel", "stride", "padding", "in_channels", "out_channels"}, aw);
            n.attrs.kernel = parse_triple(attrs["kernel"], aw + " kernel", 1);
            n.attrs.stride = parse_triple(attrs["stride"], aw + " stride", 1);
            n.attrs.padding = parse_triple(attrs["padding"], aw + " padding", 0);
            n.attrs.in_channels = parse_pos_int(attrs["in_channels"], aw + " in_channels");
            n.attrs.out_channels = parse_pos_int(attrs["out_channels"], aw + " out_channels");
            if (attrs.contains("weight")) n.attrs.weight = attrs["weight"].get<std::string>();
            if (attrs.contains("bias")) n.attrs.bias = attrs["bias"].get<std::string>();
            bool weight_attr = !n.attrs.weight.empty();
            bool weight_input = n.inputs.size() == 2;
            if (n.inputs.size() > 2) syntax("node '" + n.id + "' takes at most 2 inputs");
            if (weight_attr == weight_input)
                syntax("node '" + n.id +
                       "' must take its weight either from attrs.weight or as a second input");
            break;
        }
        case OpKind::MaxPool3D: {
            check_keys(attrs, {"kernel", "stride"}, aw);
            require_keys(attrs, {"kernel", "stride"}, aw);
            n.attrs.kernel = parse_triple(attrs["kernel"], aw + " kernel", 1);
            n.attrs.stride = parse_triple(attrs["stride"], aw + " stride", 1);
            break;
        }
        case OpKind::Upsample3D: {
            check_keys(attrs, {"scale"}, aw);
            require_keys(attrs, {"scale"}, aw);
            n.attrs.scale = parse_triple(attrs["scale"], aw + " scale", 1);
            break;
        }
        case OpKind::Concat:
        case OpKind::Softmax:
        case OpKind::ArgMax: {
            check_keys(attrs, {"axis"}, aw);
            require_keys(attrs, {"axis"}, aw);
            if (!attrs["axis"].is_number_integer()) syntax(aw + " axis must be an integer");
            n.attrs.axis = attrs["axis"].get<int64_t>();
            break;
        }
        case OpKind::Quantize:
        case OpKind::Dequantize: {
            check_keys(attrs, {"scale", "zero_point", "bits"}, aw);
            n.attrs.qparams = parse_qparams(attrs, aw);
            break;
        }
        case OpKind::ReLU:
        case OpKind::Add: {
            check_keys(attrs, {}, aw);
            break;
        }
    }
    // arity
    size_t want_min = 1, want_max = 1;
    if (n.kind == OpKind::Add) want_min = want_max = 2;
    if (n.kind == OpKind::Concat) { want_min = 2; want_max = 64; }
    if (n.kind == OpKind::Conv3D) { want_min = 1; want_max = 2; }
    if (n.inputs.size() < want_min || n.inputs.size() > want_max)
        syntax("node '" + n.id + "' (" + op_kind_name(n.kind) + ") has " +
               std::to_string(n.inputs.size()) + " inputs");
    return n;
}

Graph parse_model_doc(const json& doc, std::vector<uint8_t> weights_blob) {
    if (!doc.is_object()) syntax("model document must be a JSON object");
    check_keys(doc, {"name", "inputs", "outputs", "nodes", "weights"}, "model document");
    require_keys(doc, {"name", "inputs", "outputs", "nodes", "weights"}, "model document");

    Graph g;
    g.blob = std::move(weights_blob);
    if (!doc["name"].is_string()) syntax("model name must be a string");
    g.name = doc["name"].get<std::string>();

    for (const char* field : {"inputs", "outputs"}) {
        const auto& arr = doc[field];
        if (!arr.is_array()) syntax(std::string("model ") + field + " must be an array");
        for (size_t i = 0; i < arr.size(); ++i) {
            auto spec = parse_tensor_spec(arr[i], std::string(field) + "[" + std::to_string(i) + "]");
            (field[0] == 'i' ? g.inputs : g.outputs).push_back(std::move(spec));
        }
    }
    if (g.inputs.empty()) syntax("model must declare at least one input");
    if (g.outputs.empty()) syntax("model must declare at least one output");

    if (!doc["nodes"].is_array()) syntax("model nodes must be an array");
    std::set<std::string> node_ids;
    for (size_t i = 0; i < doc["nodes"].size(); ++i) {
        Node n = parse_node(doc["nodes"][i], "nodes[" + std::to_string(i) + "]");
        if (!node_ids.insert(n.id).second)
            raise(ErrorCode::DuplicateTensorName, "duplicate node id '" + n.id + "'");
        g.nodes.push_back(std::move(n));
    }

    if (!doc["weights"].is_array()) syntax("model weights must be an array");
    for (size_t i = 0; i < doc["weights"].size(); ++i) {
        const auto& v = doc["weights"][i];
        const std::string where = "weights[" + std::to_string(i) + "]";
        if (!v.is_object()) syntax(where + " must be an object");
        check_keys(v, {"name", "dtype", "shape", "offset", "nbytes"}, where);
        require_keys(v, {"name", "dtype", "shape", "offset", "nbytes"}, where);
        WeightEntry w;
        w.name = v["name"].get<std::string>();
        if (w.name.empty()) syntax(where + " name must be non-empty");
        w.dtype = dtype_from_name(v["dtype"].get<std::string>());
        if (w.dtype != DType::F32) syntax(where + " dtype must be f32");
        if (!v["shape"].is_array() || v["shape"].empty())
            syntax(where + " shape must be a non-empty array");
        for (const auto& d : v["shape"]) w.shape.push_back(parse_pos_int(d, where + " shape"));
        if (!v["offset"].is_number_unsigned() && !v["offset"].is_number_integer())
            syntax(where + " offset must be an integer");
        if (v["offset"].get<int64_t>() < 0) syntax(where + " offset must be >= 0");
        w.offset = v["offset"].get<uint64_t>();
        if (!v["nbytes"].is_number_unsigned() && !v["nbytes"].is_number_integer())
            syntax(where + " nbytes must be an integer");
        if (v["nbytes"].get<int64_t>() < 0) syntax(where + " nbytes must be >= 0");
        w.nbytes = v["nbytes"].get<uint64_t>();

        uint64_t expect = static_cast<uint64_t>(w.element_count()) * dtype_size(w.dtype);
        if (w.nbytes != expect)
            raise(ErrorCode::WeightOutOfBounds,
                  "weight '" + w.name + "': nbytes " + std::to_string(w.nbytes) +
                      " disagrees with shape (" + std::to_string(expect) + " expected)");
        if (w.offset + w.nbytes > g.blob.size())
            raise(ErrorCode::WeightOutOfBounds,
                  "weight '" + w.name + "': [" + std::to_string(w.offset) + ", " +
                      std::to_string(w.offset + w.nbytes) + ") exceeds blob of " +
                      std::to_string(g.blob.size()) + " bytes");
        if (!g.weight_index.emplace(w.name, g.weights.size()).second)
            raise(ErrorCode::DuplicateTensorName, "duplicate weight name '" + w.name + "'");
        g.weights.push_back(std::move(w));
    }

    // name collisions across namespaces: graph inputs, node outputs, weights
    std::set<std::string> tensor_names;
    for (const auto& t : g.inputs)
        if (!tensor_names.insert(t.name).second)
            raise(ErrorCode::DuplicateTensorName, "duplicate input tensor '" + t.name + "'");
    for (const auto& n : g.nodes)
        for (const auto& out : n.outputs)
            if (!tensor_names.insert(out).second)
                raise(ErrorCode::DuplicateTensorName,
                      "tensor '" + out + "' produced more than once (node '" + n.id + "')");
    for (const auto& w : g.weights)
        if (tensor_names.count(w.name))
            raise(ErrorCode::DuplicateTensorName,
                  "weight '" + w.name + "' collides with a tensor name");
    return g;
}

}  // namespace

Graph parse_model(const std::string& model_text, std::vector<uint8_t> weights_blob) {
    json doc;
    try {
        // default parse consumes the entire text; trailing bytes are an error
        doc = json::parse(model_text);
    } catch (const json::exception& e) {
        syntax(std::string("model document: ") + e.what());
    }
    // field checks above each .get<>() should make this unreachable, but a
    // hostile document must never surface a json exception to callers
    try {
        return parse_model_doc(doc, std::move(weights_blob));
    } catch (const json::exception& e) {
        syntax(std::string("model document: ") + e.what());
    }
}

// ============================================================================
// Serialization
// ============================================================================

namespace {

ojson shape_to_json(const Shape& s) {
    ojson arr = ojson::array();
    if (s.has_dynamic_batch())
        arr.push_back("dynamic");
    else
        arr.push_back(s.dims[0]);
    for (size_t i = 1; i < 5; ++i) arr.push_back(s.dims[i]);
    return arr;
}

ojson spec_to_json(const TensorSpec& t) {
    ojson j;
    j["name"] = t.name;
    j["dtype"] = dtype_name(t.dtype);
    j["shape"] = shape_to_json(t.shape);
    return j;
}

ojson attrs_to_json(const Node& n) {
    ojson a = ojson::object();
    switch (n.kind) {
        case OpKind::Conv3D:
            a["kernel"] = n.attrs.kernel;
            a["stride"] = n.attrs.stride;
            a["padding"] = n.attrs.padding;
            a["in_channels"] = n.attrs.in_channels;
            a["out_channels"] = n.attrs.out_channels;
            if (!n.attrs.weight.empty()) a["weight"] = n.attrs.weight;
            if (!n.attrs.bias.empty()) a["bias"] = n.attrs.bias;
            break;
        case OpKind::MaxPool3D:
            a["kernel"] = n.attrs.kernel;
            a["stride"] = n.attrs.stride;
            break;
        case OpKind::Upsample3D:
            a["scale"] = n.attrs.scale;
            break;
        case OpKind::Concat:
        case OpKind::Softmax:
        case OpKind::ArgMax:
            a["axis"] = n.attrs.axis;
            break;
        case OpKind::Quantize:
        case OpKind::Dequantize:
            a["scale"] = n.attrs.qparams.scale;
            a["zero_point"] = n.attrs.qparams.zero_point;
            a["bits"] = n.attrs.qparams.bits;
            break;
        case OpKind::ReLU:
        case OpKind::Add:
            break;
    }
    return a;
}

}  // namespace

std::pair<std::string, std::vector<uint8_t>> serialize_model(const Graph& g) {
    ojson doc;
    doc["name"] = g.name;
    doc["inputs"] = ojson::array();
    for (const auto& t : g.inputs) doc["inputs"].push_back(spec_to_json(t));
    doc["outputs"] = ojson::array();
    for (const auto& t : g.outputs) doc["outputs"].push_back(spec_to_json(t));
    doc["nodes"] = ojson::array();
    for (const auto& n : g.nodes) {
        ojson jn;
        jn["id"] = n.id;
        jn["kind"] = op_kind_name(n.kind);
        jn["inputs"] = n.inputs;
        jn["outputs"] = n.outputs;
        jn["attrs"] = attrs_to_json(n);
        doc["nodes"].push_back(std::move(jn));
    }
    doc["weights"] = ojson::array();
    for (const auto& w : g.weights) {
        ojson jw;
        jw["name"] = w.name;
        jw["dtype"] = dtype_name(w.dtype);
        jw["shape"] = w.shape;
        jw["offset"] = w.offset;
        jw["nbytes"] = w.nbytes;
        doc["weights"].push_back(std::move(jw));
    }
    return {doc.dump(2) + "\n", g.blob};
}

// ============================================================================
// Validation + shape inference
// ============================================================================

namespace {

struct TensorSource {
    enum Kind { NodeOutput, GraphInput, Weight } kind;
    size_t index;  // node index / input index / weight index
};

Shape weight_shape_as_tensor(const WeightEntry& w) {
    // weights flow through QDQ wrapping as 5-tuples, padded with leading 1s
    if (w.shape.size() > 5)
        raise(ErrorCode::ShapeMismatch, "weight '" + w.name + "' has rank > 5");
    Shape s;
    size_t off = 5 - w.shape.size();
    for (size_t i = 0; i < w.shape.size(); ++i) s.dims[off + i] = w.shape[i];
    return s;
}

}  // namespace

void validate_and_infer_shapes(Graph& g, int64_t batch) {
    if (batch < 1) raise(ErrorCode::InvalidConfig, "batch must be >= 1");
    g.tensor_specs.clear();
    g.topo_order.clear();

    // sources
    std::unordered_map<std::string, TensorSource> source;
    for (size_t i = 0; i < g.inputs.size(); ++i) source[g.inputs[i].name] = {TensorSource::GraphInput, i};
    for (size_t i = 0; i < g.nodes.size(); ++i)
        for (const auto& out : g.nodes[i].outputs) source[out] = {TensorSource::NodeOutput, i};
    for (size_t i = 0; i < g.weights.size(); ++i) source[g.weights[i].name] = {TensorSource::Weight, i};

    // dangling check + dependency edges
    std::vector<std::vector<size_t>> consumers(g.nodes.size());
    std::vector<size_t> pending(g.nodes.size(), 0);
    for (size_t i = 0; i < g.nodes.size(); ++i) {
        for (const auto& in : g.nodes[i].inputs) {
            auto it = source.find(in);
            if (it == source.end())
                raise(ErrorCode::DanglingInput,
                      "node '" + g.nodes[i].id + "' reads tensor '" + in +
                          "' which nothing produces");
            if (it->second.kind == TensorSource::NodeOutput) {
                consumers[it->second.index].push_back(i);
                pending[i]++;
            }
        }
    }
    for (const auto& out : g.outputs) {
        auto it = source.find(out.name);
        if (it == source.end() || it->second.kind == TensorSource::Weight)
            raise(ErrorCode::DanglingInput,
                  "graph output '" + out.name + "' is not produced by any node or input");
    }

    // Kahn topological sort
    std::deque<size_t> ready;
    for (size_t i = 0; i < g.nodes.size(); ++i)
        if (pending[i] == 0) ready.push_back(i);
    while (!ready.empty()) {
        size_t i = ready.front();
        ready.pop_front();
        g.topo_order.push_back(i);
        for (size_t c : consumers[i])
            if (--pending[c] == 0) ready.push_back(c);
    }
    if (g.topo_order.size() != g.nodes.size()) {
        std::string cyclic;
        for (size_t i = 0; i < g.nodes.size(); ++i)
            if (pending[i] > 0) cyclic += (cyclic.empty() ? "" : ", ") + g.nodes[i].id;
        raise(ErrorCode::CycleDetected, "graph contains a cycle through: " + cyclic);
    }

    // bind batch on inputs
    for (const auto& in : g.inputs) {
        TensorSpec spec = in;
        if (spec.shape.has_dynamic_batch())
            spec.shape.dims[0] = batch;
        else if (spec.shape.dims[0] != batch)
            raise(ErrorCode::ShapeMismatch, "input '" + in.name + "' declares batch " +
                                                std::to_string(spec.shape.dims[0]) +
                                                ", cannot bind batch " + std::to_string(batch));
        g.tensor_specs[in.name] = spec;
    }

    auto resolve = [&](const Node& n, const std::string& name) -> TensorSpec {
        auto it = g.tensor_specs.find(name);
        if (it != g.tensor_specs.end()) return it->second;
        const WeightEntry* w = g.find_weight(name);
        if (w) {
            TensorSpec spec;
            spec.name = name;
            spec.dtype = w->dtype;
            spec.shape = weight_shape_as_tensor(*w);
            return spec;
        }
        raise(ErrorCode::DanglingInput,
              "node '" + n.id + "' reads tensor '" + name + "' before it is produced");
    };

    auto want_dtype = [&](const Node& n, const TensorSpec& t, DType want) {
        if (t.dtype != want)
            raise(ErrorCode::ShapeMismatch, "node '" + n.id + "' expects " +
                                                std::string(dtype_name(want)) + " input, tensor '" +
                                                t.name + "' is " + dtype_name(t.dtype));
    };

    for (size_t idx : g.topo_order) {
        Node& n = g.nodes[idx];
        TensorSpec out;
        out.name = n.outputs[0];
        switch (n.kind) {
            case OpKind::Conv3D: {
                TensorSpec a = resolve(n, n.inputs[0]);
                want_dtype(n, a, DType::F32);
                if (a.shape.channels() != n.attrs.in_channels)
                    raise(ErrorCode::ShapeMismatch,
                          "node '" + n.id + "': input has " + std::to_string(a.shape.channels()) +
                              " channels, attrs say " + std::to_string(n.attrs.in_channels));
                // weight check
                std::vector<int64_t> expect_w = {n.attrs.out_channels, n.attrs.in_channels,
                                                 n.attrs.kernel[0], n.attrs.kernel[1],
                                                 n.attrs.kernel[2]};
                if (!n.attrs.weight.empty()) {
                    const WeightEntry* w = g.find_weight(n.attrs.weight);
                    if (!w)
                        raise(ErrorCode::DanglingInput, "node '" + n.id +
                                                            "' references missing weight '" +
                                                            n.attrs.weight + "'");
                    if (w->shape != expect_w)
                        raise(ErrorCode::ShapeMismatch,
                              "node '" + n.id + "': weight '" + w->name + "' shape mismatch");
                } else {
                    TensorSpec w = resolve(n, n.inputs[1]);
                    want_dtype(n, w, DType::F32);
                    Shape ws;
                    for (size_t i = 0; i < 5; ++i) ws.dims[i] = expect_w[i];
                    if (w.shape != ws)
                        raise(ErrorCode::ShapeMismatch,
                              "node '" + n.id + "': weight input '" + w.name + "' has shape " +
                                  w.shape.str() + ", expected " + ws.str());
                }
                if (!n.attrs.bias.empty()) {
                    const WeightEntry* b = g.find_weight(n.attrs.bias);
                    if (!b)
                        raise(ErrorCode::DanglingInput,
                              "node '" + n.id + "' references missing bias '" + n.attrs.bias + "'");
                    if (b->shape != std::vector<int64_t>{n.attrs.out_channels})
                        raise(ErrorCode::ShapeMismatch,
                              "node '" + n.id + "': bias '" + b->name + "' shape mismatch");
                }
                out.dtype = DType::F32;
                out.shape.dims[0] = a.shape.dims[0];
                out.shape.dims[1] = n.attrs.out_channels;
                for (int d = 0; d < 3; ++d) {
                    int64_t o = conv_out_dim(a.shape.dims[2 + d], n.attrs.kernel[d],
                                             n.attrs.stride[d], n.attrs.padding[d]);
                    if (o < 1)
                        raise(ErrorCode::ShapeMismatch,
                              "node '" + n.id + "': output dim " + std::to_string(d) +
                                  " collapses to " + std::to_string(o));
                    out.shape.dims[2 + d] = o;
                }
                break;
            }
            case OpKind::ReLU: {
                TensorSpec a = resolve(n, n.inputs[0]);
                want_dtype(n, a, DType::F32);
                out.dtype = DType::F32;
                out.shape = a.shape;
                break;
            }
            case OpKind::MaxPool3D: {
                TensorSpec a = resolve(n, n.inputs[0]);
                want_dtype(n, a, DType::F32);
                out.dtype = DType::F32;
                out.shape = a.shape;
                for (int d = 0; d < 3; ++d) {
                    int64_t o = conv_out_dim(a.shape.dims[2 + d], n.attrs.kernel[d],
                                             n.attrs.stride[d], 0);
                    if (o < 1)
                        raise(ErrorCode::ShapeMismatch,
                              "node '" + n.id + "': pooling window larger than input");
                    out.shape.dims[2 + d] = o;
                }
                break;
            }
            case OpKind::Upsample3D: {
                TensorSpec a = resolve(n, n.inputs[0]);
                want_dtype(n, a, DType::F32);
                out.dtype = DType::F32;
                out.shape = a.shape;
                for (int d = 0; d < 3; ++d) out.shape.dims[2 + d] *= n.attrs.scale[d];
                break;
            }
            case OpKind::Concat: {
                if (n.attrs.axis < 1 || n.attrs.axis > 4)
                    raise(ErrorCode::ShapeMismatch,
                          "node '" + n.id + "': concat axis must be in [1, 4]");
                TensorSpec first = resolve(n, n.inputs[0]);
                want_dtype(n, first, DType::F32);
                out.dtype = DType::F32;
                out.shape = first.shape;
                for (size_t i = 1; i < n.inputs.size(); ++i) {
                    TensorSpec t = resolve(n, n.inputs[i]);
                    want_dtype(n, t, DType::F32);
                    for (int d = 0; d < 5; ++d) {
                        if (d == n.attrs.axis) continue;
                        if (t.shape.dims[d] != first.shape.dims[d])
                            raise(ErrorCode::ShapeMismatch,
                                  "node '" + n.id + "': concat input '" + t.name +
                                      "' disagrees on dim " + std::to_string(d));
                    }
                    out.shape.dims[n.attrs.axis] += t.shape.dims[n.attrs.axis];
                }
                break;
            }
            case OpKind::Add: {
                TensorSpec a = resolve(n, n.inputs[0]);
                TensorSpec b = resolve(n, n.inputs[1]);
                want_dtype(n, a, DType::F32);
                want_dtype(n, b, DType::F32);
                if (a.shape != b.shape)
                    raise(ErrorCode::ShapeMismatch, "node '" + n.id + "': add of " + a.shape.str() +
                                                        " vs " + b.shape.str());
                out.dtype = DType::F32;
                out.shape = a.shape;
                break;
            }
            case OpKind::Softmax: {
                TensorSpec a = resolve(n, n.inputs[0]);
                want_dtype(n, a, DType::F32);
                if (n.attrs.axis < 1 || n.attrs.axis > 4)
                    raise(ErrorCode::ShapeMismatch,
                          "node '" + n.id + "': softmax axis must be in [1, 4]");
                out.dtype = DType::F32;
                out.shape = a.shape;
                break;
            }
            case OpKind::ArgMax: {
                TensorSpec a = resolve(n, n.inputs[0]);
                want_dtype(n, a, DType::F32);
                if (n.attrs.axis != 1)
                    raise(ErrorCode::ShapeMismatch,
                          "node '" + n.id + "': argmax is defined over the channel axis (1)");
                out.dtype = DType::U16;
                out.shape = a.shape;
                out.shape.dims[1] = 1;
                break;
            }
            case OpKind::Quantize: {
                TensorSpec a = resolve(n, n.inputs[0]);
                want_dtype(n, a, DType::F32);
                out.dtype = DType::U8;
                out.shape = a.shape;
                break;
            }
            case OpKind::Dequantize: {
                TensorSpec a = resolve(n, n.inputs[0]);
                want_dtype(n, a, DType::U8);
                out.dtype = DType::F32;
                out.shape = a.shape;
                break;
            }
        }
        g.tensor_specs[out.name] = out;
    }

    // declared outputs must match inference
    for (const auto& declared : g.outputs) {
        const TensorSpec& got = g.tensor_specs.at(declared.name);
        if (got.dtype != declared.dtype)
            raise(ErrorCode::ShapeMismatch,
                  "output '" + declared.name + "' dtype " + dtype_name(got.dtype) +
                      " does not match declared " + dtype_name(declared.dtype));
        for (int d = 0; d < 5; ++d) {
            if (d == 0 && declared.shape.has_dynamic_batch()) continue;
            if (declared.shape.dims[d] != got.shape.dims[d])
                raise(ErrorCode::ShapeMismatch,
                      "output '" + declared.name + "' inferred shape " + got.shape.str() +
                          " does not match declared " + declared.shape.str());
        }
    }
    g.bound_batch = batch;
}

// ============================================================================
// File IO
// ============================================================================

std::filesystem::path model_blob_path(const std::filesystem::path& json_path) {
    std::filesystem::path p = json_path;
    p.replace_extension(".bin");
    return p;
}

void save_model(const std::filesystem::path& json_path, const Graph& g) {
    auto [text, blob] = serialize_model(g);
    write_text_file(json_path, text);
    write_file(model_blob_path(json_path), blob);
}

Graph load_model(const std::filesystem::path& json_path) {
    auto text = read_text_file(json_path);
    auto blob = read_file(model_blob_path(json_path));
    return parse_model(text, std::move(blob));
}

}  // namespace vq
