// SPDX-License-Identifier: Apache-2.0
#include "voxelquant/qdq.hpp"

#include <map>
#include <set>

#include "voxelquant/errors.hpp"

namespace vq {

namespace {

struct ConvSite {
    size_t conv_idx;
    std::string input_name;   // activation edge
    std::string weight_name;  // manifest entry
    std::string boundary;     // output boundary tensor (conv out or relu out)
    size_t boundary_idx;      // node producing the boundary
};

void check_policy(const QdqPolicy& policy) {
    if (policy.bits < 2 || policy.bits > 8)
        raise(ErrorCode::UnsupportedBits,
              "policy bit width " + std::to_string(policy.bits) + " outside [2, 8]");
    for (OpKind k : policy.kinds)
        if (k != OpKind::Conv3D)
            raise(ErrorCode::PolicyUnsupportedKind,
                  std::string("policy cannot quantize ") + op_kind_name(k) + " nodes");
}

std::vector<ConvSite> find_sites(const Graph& g, const QdqPolicy& policy) {
    if (!g.validated())
        raise(ErrorCode::InvalidConfig, "graph must be validated before qdq planning");
    check_policy(policy);
    for (const Node& n : g.nodes)
        if (n.kind == OpKind::Quantize || n.kind == OpKind::Dequantize)
            raise(ErrorCode::PolicyUnsupportedKind,
                  "graph already contains quantize/dequantize nodes (node '" + n.id + "')");

    bool wants_conv = false;
    for (OpKind k : policy.kinds) wants_conv = wants_conv || k == OpKind::Conv3D;
    if (!wants_conv) return {};

    std::map<std::string, std::vector<size_t>> consumers;
    for (size_t i = 0; i < g.nodes.size(); ++i)
        for (const auto& in : g.nodes[i].inputs) consumers[in].push_back(i);
    std::set<std::string> graph_outputs;
    for (const auto& o : g.outputs) graph_outputs.insert(o.name);

    std::vector<ConvSite> sites;
    for (size_t i = 0; i < g.nodes.size(); ++i) {
        const Node& n = g.nodes[i];
        if (n.kind != OpKind::Conv3D) continue;
        if (n.attrs.weight.empty())
            raise(ErrorCode::PolicyUnsupportedKind,
                  "conv '" + n.id + "' takes its weight as a runtime input; only manifest "
                  "weights can be quantized");
        ConvSite s{i, n.inputs[0], n.attrs.weight, n.outputs[0], i};
        // push the boundary past a ReLU that is the conv's sole consumer,
        // unless the conv output itself is a graph output
        if (!graph_outputs.count(n.outputs[0])) {
            auto it = consumers.find(n.outputs[0]);
            if (it != consumers.end() && it->second.size() == 1 &&
                g.nodes[it->second[0]].kind == OpKind::ReLU) {
                s.boundary = g.nodes[it->second[0]].outputs[0];
                s.boundary_idx = it->second[0];
            }
        }
        sites.push_back(std::move(s));
    }
    return sites;
}

Node make_qdq_node(OpKind kind, const std::string& id, const std::string& in,
                   const std::string& out, const QuantParams& p) {
    Node n;
    n.id = id;
    n.kind = kind;
    n.inputs = {in};
    n.outputs = {out};
    n.attrs.qparams = p;
    return n;
}

}  // namespace

QdqSelection select_quant_tensors(const Graph& g, const QdqPolicy& policy) {
    QdqSelection sel;
    std::set<std::string> seen_act, seen_w;
    for (const ConvSite& s : find_sites(g, policy)) {
        if (seen_act.insert(s.input_name).second) sel.activations.push_back(s.input_name);
        if (seen_act.insert(s.boundary).second) sel.activations.push_back(s.boundary);
        if (seen_w.insert(s.weight_name).second) sel.weights.push_back(s.weight_name);
    }
    return sel;
}

Graph insert_qdq(const Graph& g, const CalibrationTable& table, const QdqPolicy& policy) {
    std::vector<ConvSite> sites = find_sites(g, policy);

    auto params_for = [&](const std::string& name) {
        const CalibrationEntry& e = table.at(name);
        return params_from_range(e.min_value, e.max_value, policy.bits);
    };

    // prepared insertions, keyed by node index
    std::map<size_t, std::vector<Node>> before;            // input + weight pairs
    std::map<size_t, std::pair<Node, Node>> after;         // output pair
    std::map<size_t, std::pair<std::string, std::string>> rewire;  // conv: (in0, in1)
    std::map<size_t, std::string> rename;                  // boundary producer out

    for (const ConvSite& s : sites) {
        const std::string& cid = g.nodes[s.conv_idx].id;
        const QuantParams pa = params_for(s.input_name);
        const QuantParams pw = params_for(s.weight_name);
        const QuantParams pb = params_for(s.boundary);

        std::vector<Node>& pre = before[s.conv_idx];
        const std::string aq = s.input_name + "#q@" + cid;
        const std::string adq = s.input_name + "#dq@" + cid;
        pre.push_back(make_qdq_node(OpKind::Quantize, "q@" + cid + "#in", s.input_name, aq, pa));
        pre.push_back(make_qdq_node(OpKind::Dequantize, "dq@" + cid + "#in", aq, adq, pa));
        const std::string wq = s.weight_name + "#q@" + cid;
        const std::string wdq = s.weight_name + "#dq@" + cid;
        pre.push_back(make_qdq_node(OpKind::Quantize, "q@" + cid + "#w", s.weight_name, wq, pw));
        pre.push_back(make_qdq_node(OpKind::Dequantize, "dq@" + cid + "#w", wq, wdq, pw));
        rewire[s.conv_idx] = {adq, wdq};

        rename[s.boundary_idx] = s.boundary + "#raw";
        after[s.boundary_idx] = {
            make_qdq_node(OpKind::Quantize, "q@" + cid + "#out", s.boundary + "#raw",
                          s.boundary + "#q", pb),
            make_qdq_node(OpKind::Dequantize, "dq@" + cid + "#out", s.boundary + "#q",
                          s.boundary, pb)};
    }

    Graph out;
    out.name = g.name;
    out.inputs = g.inputs;
    out.outputs = g.outputs;
    out.weights = g.weights;
    out.blob = g.blob;
    out.weight_index = g.weight_index;
    for (size_t i = 0; i < g.nodes.size(); ++i) {
        if (auto it = before.find(i); it != before.end())
            for (Node& q : it->second) out.nodes.push_back(std::move(q));
        Node n = g.nodes[i];
        if (auto it = rewire.find(i); it != rewire.end()) {
            n.inputs = {it->second.first, it->second.second};
            n.attrs.weight.clear();
        }
        if (auto it = rename.find(i); it != rename.end()) n.outputs[0] = it->second;
        out.nodes.push_back(std::move(n));
        if (auto it = after.find(i); it != after.end()) {
            out.nodes.push_back(it->second.first);
            out.nodes.push_back(it->second.second);
        }
    }
    validate_and_infer_shapes(out, g.bound_batch);
    return out;
}

}  // namespace vq
