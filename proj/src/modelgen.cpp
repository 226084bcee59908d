// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstring>

#include "voxelquant/bench.hpp"
#include "voxelquant/util.hpp"

namespace vq {

namespace {

/// Incremental graph assembly for the built-in reference models. Weights are
/// staged as f32 and flattened into the blob at the end; validate() also
/// fills weight_index, which parse_model normally builds.
struct GraphAssembler {
    Graph g;
    std::vector<float> staged;

    explicit GraphAssembler(std::string name) { g.name = std::move(name); }

    void add_weight(const std::string& name, std::vector<int64_t> shape,
                    const std::vector<float>& data) {
        WeightEntry w;
        w.name = name;
        w.dtype = DType::F32;
        w.shape = std::move(shape);
        w.offset = staged.size() * sizeof(float);
        w.nbytes = data.size() * sizeof(float);
        g.weights.push_back(std::move(w));
        staged.insert(staged.end(), data.begin(), data.end());
    }

    Node& node(const std::string& id, OpKind kind, std::vector<std::string> inputs,
               std::string output) {
        Node n;
        n.id = id;
        n.kind = kind;
        n.inputs = std::move(inputs);
        n.outputs = {std::move(output)};
        g.nodes.push_back(std::move(n));
        return g.nodes.back();
    }

    void conv(const std::string& id, const std::string& in, const std::string& out,
              int64_t in_ch, int64_t out_ch, int64_t k, int64_t pad, const std::string& w_name,
              const std::string& b_name) {
        Node& n = node(id, OpKind::Conv3D, {in}, out);
        n.attrs.kernel = {k, k, k};
        n.attrs.stride = {1, 1, 1};
        n.attrs.padding = {pad, pad, pad};
        n.attrs.in_channels = in_ch;
        n.attrs.out_channels = out_ch;
        n.attrs.weight = w_name;
        n.attrs.bias = b_name;
    }

    Graph finalize() {
        g.blob.resize(staged.size() * sizeof(float));
        if (!staged.empty()) std::memcpy(g.blob.data(), staged.data(), g.blob.size());
        for (size_t i = 0; i < g.weights.size(); ++i) g.weight_index[g.weights[i].name] = i;
        validate_and_infer_shapes(g, 1);
        return std::move(g);
    }
};

std::vector<float> init_conv_weight(Rng& rng, int64_t out_ch, int64_t in_ch, int64_t k) {
    const int64_t fan_in = in_ch * k * k * k;
    const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
    std::vector<float> w(static_cast<size_t>(out_ch * fan_in));
    for (auto& v : w) v = static_cast<float>(rng.uniform(-bound, bound));
    return w;
}

std::vector<float> init_bias(Rng& rng, int64_t out_ch) {
    std::vector<float> b(static_cast<size_t>(out_ch));
    for (auto& v : b) v = static_cast<float>(rng.uniform(-0.05, 0.05));
    return b;
}

}  // namespace

Graph gen_centroid_model(int classes, int64_t dim) {
    if (classes < 2 || classes > 32)
        raise(ErrorCode::InvalidConfig, "centroid model needs 2..32 classes");
    if (dim < 4) raise(ErrorCode::InvalidConfig, "centroid model dim must be >= 4");

    GraphAssembler a("centroid-net");
    a.g.inputs.push_back({"image", DType::F32, Shape{{Shape::kDynamicBatch, 1, dim, dim, dim}}});
    a.g.outputs.push_back({"labels", DType::U16, Shape{{Shape::kDynamicBatch, 1, dim, dim, dim}}});

    // 3^3 box filter, then per-class linear score mu_c * x - mu_c^2 / 2 so the
    // channel argmax picks the nearest class centroid.
    a.add_weight("smooth.w", {1, 1, 3, 3, 3}, std::vector<float>(27, 1.0f / 27.0f));
    const double delta = 1.0 / classes;
    std::vector<float> cls_w(static_cast<size_t>(classes));
    std::vector<float> cls_b(static_cast<size_t>(classes));
    for (int c = 0; c < classes; ++c) {
        const double mu = (c + 0.5) * delta;
        cls_w[static_cast<size_t>(c)] = static_cast<float>(mu);
        cls_b[static_cast<size_t>(c)] = static_cast<float>(-0.5 * mu * mu);
    }
    a.add_weight("classify.w", {classes, 1, 1, 1, 1}, cls_w);
    a.add_weight("classify.b", {classes}, cls_b);

    a.conv("smooth", "image", "smoothed", 1, 1, 3, 1, "smooth.w", "");
    a.conv("classify", "smoothed", "scores", 1, classes, 1, 0, "classify.w", "classify.b");
    Node& am = a.node("argmax", OpKind::ArgMax, {"scores"}, "labels");
    am.attrs.axis = 1;
    return a.finalize();
}

const char* unet_size_name(UnetSize s) {
    switch (s) {
        case UnetSize::S: return "S";
        case UnetSize::M: return "M";
        case UnetSize::L: return "L";
    }
    return "?";
}

std::optional<UnetSize> unet_size_from_name(const std::string& name) {
    if (name == "S" || name == "s") return UnetSize::S;
    if (name == "M" || name == "m") return UnetSize::M;
    if (name == "L" || name == "l") return UnetSize::L;
    return std::nullopt;
}

Graph gen_toy_unet(int classes, int64_t dim, UnetSize size, uint64_t seed) {
    if (classes < 2 || classes > 32)
        raise(ErrorCode::InvalidConfig, "toy-unet needs 2..32 classes");
    if (dim < 8 || dim % 8 != 0)
        raise(ErrorCode::InvalidConfig,
              "toy-unet dim must be a positive multiple of 8, got " + std::to_string(dim));

    int64_t base = 0;
    switch (size) {
        case UnetSize::S: base = 2; break;
        case UnetSize::M: base = 4; break;
        case UnetSize::L: base = 20; break;
    }
    const int64_t w0 = base, w1 = 3 * base, w2 = 12 * base, w3 = 48 * base;

    Rng rng(seed);
    GraphAssembler a(std::string("toy-unet-") + unet_size_name(size));
    a.g.inputs.push_back({"image", DType::F32, Shape{{Shape::kDynamicBatch, 1, dim, dim, dim}}});
    a.g.outputs.push_back(
        {"probs", DType::F32, Shape{{Shape::kDynamicBatch, classes, dim, dim, dim}}});

    auto conv_relu = [&](const std::string& stem, const std::string& in, const std::string& out,
                         int64_t ic, int64_t oc, int64_t k, int64_t pad) {
        a.add_weight(stem + ".w", {oc, ic, k, k, k}, init_conv_weight(rng, oc, ic, k));
        a.add_weight(stem + ".b", {oc}, init_bias(rng, oc));
        a.conv(stem + ".conv", in, stem + ".pre", ic, oc, k, pad, stem + ".w", stem + ".b");
        a.node(stem + ".relu", OpKind::ReLU, {stem + ".pre"}, out);
    };
    auto pool = [&](const std::string& id, const std::string& in, const std::string& out) {
        Node& n = a.node(id, OpKind::MaxPool3D, {in}, out);
        n.attrs.kernel = {2, 2, 2};
        n.attrs.stride = {2, 2, 2};
    };
    auto upsample = [&](const std::string& id, const std::string& in, const std::string& out) {
        Node& n = a.node(id, OpKind::Upsample3D, {in}, out);
        n.attrs.scale = {2, 2, 2};
    };
    auto concat = [&](const std::string& id, const std::string& lo, const std::string& skip,
                      const std::string& out) {
        Node& n = a.node(id, OpKind::Concat, {lo, skip}, out);
        n.attrs.axis = 1;
    };

    // encoder
    conv_relu("enc0", "image", "enc0", 1, w0, 3, 1);
    pool("pool0", "enc0", "pool0");
    conv_relu("enc1", "pool0", "enc1", w0, w1, 3, 1);
    pool("pool1", "enc1", "pool1");
    conv_relu("enc2", "pool1", "enc2", w1, w2, 3, 1);
    pool("pool2", "enc2", "pool2");

    // bottleneck with a residual 1x1x1 branch
    conv_relu("bott_a", "pool2", "bott_a", w2, w3, 3, 1);
    conv_relu("bott_b", "bott_a", "bott_b", w3, w3, 1, 0);
    a.node("bott.add", OpKind::Add, {"bott_a", "bott_b"}, "bott");

    // decoder
    upsample("up2", "bott", "up2");
    concat("cat2", "up2", "enc2", "cat2");
    conv_relu("dec2", "cat2", "dec2", w3 + w2, w2, 3, 1);
    upsample("up1", "dec2", "up1");
    concat("cat1", "up1", "enc1", "cat1");
    conv_relu("dec1", "cat1", "dec1", w2 + w1, w1, 3, 1);
    upsample("up0", "dec1", "up0");
    concat("cat0", "up0", "enc0", "cat0");
    conv_relu("dec0", "cat0", "dec0", w1 + w0, w0, 3, 1);

    // head
    a.add_weight("head.w", {classes, w0, 1, 1, 1}, init_conv_weight(rng, classes, w0, 1));
    a.add_weight("head.b", {classes}, init_bias(rng, classes));
    a.conv("head", "dec0", "scores", w0, classes, 1, 0, "head.w", "head.b");
    Node& sm = a.node("softmax", OpKind::Softmax, {"scores"}, "probs");
    sm.attrs.axis = 1;
    return a.finalize();
}

}  // namespace vq
