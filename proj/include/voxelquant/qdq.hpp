// SPDX-License-Identifier: Apache-2.0
//
// Fake-quantization rewrite: wraps the dataflow of selected nodes in
// Quantize/Dequantize pairs so the fp32 executor reproduces 8-bit rounding
// exactly, and so the engine builder can pattern-match the pairs back out.
//
// For each Conv3D picked by the policy:
//   * activation input A gains a per-edge pair  A -> Q -> D -> conv, so two
//     convs sharing an input each get their own pair;
//   * the weight is lifted out of attrs into a second node input and wrapped
//     in its own pair (the bias is never quantized);
//   * the output boundary (the ReLU output when the conv's only consumer is a
//     ReLU and the conv output is not itself a graph output, otherwise the
//     conv output) is wrapped by renaming the producer's output S to S#raw
//     and inserting Q(S#raw) -> D(...) -> S, which keeps every downstream
//     consumer and graph output name stable.
//
// Parameters are recomputed from the calibration table's stored ranges, so a
// table built at one bit width can be reused at another.

#pragma once

#include <string>
#include <vector>

#include "voxelquant/graph.hpp"
#include "voxelquant/quant.hpp"

namespace vq {

struct QdqPolicy {
    int bits = 8;
    /// Node kinds whose dataflow gets quantized. Only Conv3D is supported;
    /// anything else raises PolicyUnsupportedKind.
    std::vector<OpKind> kinds{OpKind::Conv3D};
};

/// Tensor names the policy needs ranges for, in deterministic graph order.
struct QdqSelection {
    std::vector<std::string> activations;  // observed by running the model
    std::vector<std::string> weights;      // read straight from the blob
};

QdqSelection select_quant_tensors(const Graph& g, const QdqPolicy& policy);

/// Returns the rewritten, re-validated fake-quant graph. The input graph is
/// left untouched. Raises PolicyUnsupportedKind when the graph already
/// contains Quantize/Dequantize nodes (double insertion), when the policy
/// lists an unsupported kind, or when a selected conv has no manifest weight;
/// MissingCalibration when the table lacks a required entry.
Graph insert_qdq(const Graph& g, const CalibrationTable& table, const QdqPolicy& policy);

}  // namespace vq
