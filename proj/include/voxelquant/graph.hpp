// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "voxelquant/quant.hpp"
#include "voxelquant/tensor.hpp"

namespace vq {

// ============================================================================
// Node / graph types
// ============================================================================

enum class OpKind : uint8_t {
    Conv3D = 0,
    ReLU = 1,
    MaxPool3D = 2,
    Upsample3D = 3,
    Concat = 4,
    Add = 5,
    Softmax = 6,
    ArgMax = 7,
    Quantize = 8,
    Dequantize = 9,
};

const char* op_kind_name(OpKind k);
std::optional<OpKind> op_kind_from_name(const std::string& name);

struct TensorSpec {
    std::string name;
    DType dtype = DType::F32;
    Shape shape;

    bool operator==(const TensorSpec& o) const {
        return name == o.name && dtype == o.dtype && shape == o.shape;
    }
};

/// Kind-specific attributes. Only the fields meaningful for the node's kind
/// are serialized; parsing is strict about which keys each kind accepts.
struct NodeAttrs {
    // Conv3D
    std::array<int64_t, 3> kernel{1, 1, 1};
    std::array<int64_t, 3> stride{1, 1, 1};
    std::array<int64_t, 3> padding{0, 0, 0};
    int64_t in_channels = 0;
    int64_t out_channels = 0;
    std::string weight;  // manifest name; empty when the weight arrives as input[1]
    std::string bias;    // manifest name; empty = no bias
    // Upsample3D
    std::array<int64_t, 3> scale{1, 1, 1};
    // Concat / Softmax / ArgMax
    int64_t axis = 1;
    // Quantize / Dequantize
    QuantParams qparams;

    bool operator==(const NodeAttrs& o) const;
};

struct Node {
    std::string id;
    OpKind kind = OpKind::ReLU;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    NodeAttrs attrs;

    bool operator==(const Node& o) const {
        return id == o.id && kind == o.kind && inputs == o.inputs && outputs == o.outputs &&
               attrs == o.attrs;
    }
};

struct WeightEntry {
    std::string name;
    DType dtype = DType::F32;
    std::vector<int64_t> shape;
    uint64_t offset = 0;
    uint64_t nbytes = 0;

    int64_t element_count() const;
    bool operator==(const WeightEntry& o) const {
        return name == o.name && dtype == o.dtype && shape == o.shape && offset == o.offset &&
               nbytes == o.nbytes;
    }
};

/// Volumetric compute graph plus its weight store. `weights` preserves
/// manifest order; `weight_index` maps name -> manifest position.
struct Graph {
    std::string name;
    std::vector<TensorSpec> inputs;
    std::vector<TensorSpec> outputs;
    std::vector<Node> nodes;
    std::vector<WeightEntry> weights;
    std::vector<uint8_t> blob;

    std::unordered_map<std::string, size_t> weight_index;

    // filled by validate_and_infer_shapes
    std::unordered_map<std::string, TensorSpec> tensor_specs;
    std::vector<size_t> topo_order;
    int64_t bound_batch = 0;

    bool validated() const { return bound_batch > 0; }

    const WeightEntry* find_weight(const std::string& name) const;
    const float* weight_data_f32(const WeightEntry& w) const;

    /// structural equality: everything the model document carries
    bool same_document(const Graph& o) const;
};

// ============================================================================
// Operations
// ============================================================================

/// Parse a model document plus its raw weights blob. Strict: unknown keys,
/// malformed JSON or trailing bytes are SyntaxError; kinds outside the op set
/// are UnknownOpKind; colliding tensor names are DuplicateTensorName; weight
/// manifest entries that fall outside the blob (or whose shape disagrees with
/// nbytes) are WeightOutOfBounds.
Graph parse_model(const std::string& model_text, std::vector<uint8_t> weights_blob);

/// Serialize back to (document, blob). parse_model(serialize_model(g))
/// reproduces g exactly, and serialization of a parsed model is
/// byte-identical under a second round trip.
std::pair<std::string, std::vector<uint8_t>> serialize_model(const Graph& g);

/// Bind the batch dimension, topologically order the nodes, and infer every
/// intermediate tensor spec. Raises CycleDetected / ShapeMismatch /
/// DanglingInput. Idempotent.
void validate_and_infer_shapes(Graph& g, int64_t batch = 1);

/// Conv3D spatial rule, exposed for reuse:
/// out = floor((in + 2*pad - kernel) / stride) + 1.
int64_t conv_out_dim(int64_t in, int64_t kernel, int64_t stride, int64_t pad);

// convenience file IO: <stem>.json + <stem>.bin
void save_model(const std::filesystem::path& json_path, const Graph& g);
Graph load_model(const std::filesystem::path& json_path);
std::filesystem::path model_blob_path(const std::filesystem::path& json_path);

}  // namespace vq
