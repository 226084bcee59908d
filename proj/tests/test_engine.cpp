// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "support/graph_gen.hpp"
#include "support/test_util.hpp"
#include "voxelquant/calibrate.hpp"
#include "voxelquant/engine.hpp"
#include "voxelquant/engine_exec.hpp"
#include "voxelquant/qdq.hpp"

namespace fs = std::filesystem;
using vqtest::gg::Builder;

namespace {

vq::CalibrationTable make_table(std::initializer_list<std::tuple<std::string, double, double>> rows,
                                int bits = 8) {
    vq::CalibrationTable t;
    t.bits = bits;
    for (const auto& [name, lo, hi] : rows) {
        vq::CalibrationEntry e;
        e.min_value = lo;
        e.max_value = hi;
        e.count = 1;
        e.params = vq::params_from_range(lo, hi, bits);
        t.entries[name] = e;
    }
    return t;
}

/// x -> Conv3D(1x1x1, 1->1, weight w0) -> t [-> ReLU -> y]
vq::Graph conv1x1_graph(float w0, bool with_relu, bool with_bias = false, float b0 = 0.0f) {
    Builder b;
    b.g.name = "engine-toy";
    b.g.inputs.push_back({"x", vq::DType::F32, vq::Shape{{vq::Shape::kDynamicBatch, 1, 2, 2, 2}}});
    b.weight("w", {1, 1, 1, 1, 1}, {w0});
    if (with_bias) b.weight("bias0", {1}, {b0});
    vq::Node& c = b.node(vq::OpKind::Conv3D, {"x"}, "t");
    c.attrs.in_channels = 1;
    c.attrs.out_channels = 1;
    c.attrs.weight = "w";
    if (with_bias) c.attrs.bias = "bias0";
    std::string out = "t";
    if (with_relu) {
        b.node(vq::OpKind::ReLU, {"t"}, "y");
        out = "y";
    }
    b.g.outputs.push_back({out, vq::DType::F32, vq::Shape{{vq::Shape::kDynamicBatch, 1, 2, 2, 2}}});
    return b.finish();
}

std::map<vq::PlanOpKind, int> census(const vq::EnginePlan& plan) {
    std::map<vq::PlanOpKind, int> c;
    for (const auto& op : plan.ops) c[op.kind]++;
    return c;
}

const vq::PlanOp* find_op(const vq::EnginePlan& plan, vq::PlanOpKind kind, int nth = 0) {
    for (const auto& op : plan.ops)
        if (op.kind == kind && nth-- == 0) return &op;
    return nullptr;
}

vq::Volume cube2(std::initializer_list<float> vals) {
    vq::Volume v = vq::Volume::zeros(vq::Shape{{1, 1, 2, 2, 2}});
    size_t i = 0;
    for (float x : vals) v.data[i++] = x;
    return v;
}

}  // namespace

TEST_CASE("requantize_i32 frozen values") {
    // m = 2^-15: the accumulator lands at 0.3767..., rounding to the zero point
    CHECK(vq::requantize_i32(12345, 0, 0.000030517578125, 128, 0) == 128);
    CHECK(vq::requantize_i32(-12345, 0, 0.000030517578125, 128, 0) == 128);
    CHECK(vq::requantize_i32(49152, 0, 0.000030517578125, 128, 0) == 130);  // exactly 1.5 -> 2
    CHECK(vq::requantize_i32(163840, 0, 0.000030517578125, 128, 0) == 133);
    // clamping
    CHECK(vq::requantize_i32(10000, 0, 0.01, 250, 0) == 255);
    CHECK(vq::requantize_i32(-1000000, 0, 0.001, 128, 0) == 0);
    // a fused relu raises the lower clamp to the zero point
    CHECK(vq::requantize_i32(-1000000, 0, 0.001, 128, 128) == 128);
    // bias is added in 64-bit: i32::max + i32::max does not wrap
    CHECK(vq::requantize_i32(2147483647LL, 2147483647, 1e-9, 0, 0) == 4);
    // bias participates before scaling
    CHECK(vq::requantize_i32(100, 28, 0.5, 10, 0) == 74);
}

TEST_CASE("requantize_code matches the dequantize/quantize composition") {
    const vq::QuantParams src = vq::params_from_range(-1.0, 2.0, 8);   // s=3/255, z=85
    const vq::QuantParams unit = vq::params_from_range(0.0, 1.0, 8);   // s=1/255, z=0
    const vq::QuantParams sym = vq::params_from_range(-0.5, 0.5, 8);   // s=1/255, z=128

    CHECK(vq::requantize_code(170, src, unit) == 255);  // 1.0 saturates [0, 1]
    CHECK(vq::requantize_code(85, src, unit) == 0);     // 0.0
    CHECK(vq::requantize_code(0, src, unit) == 0);      // -1.0 clamps
    CHECK(vq::requantize_code(43, src, sym) == 2);      // -42 * 3/255 -> code -126 + 128
    CHECK(vq::requantize_code(170, src, sym) == 255);

    // identical params: exact recovery for every code
    for (int q = 0; q <= 255; ++q) {
        CHECK(vq::requantize_code(q, src, src) == q);
        CHECK(vq::requantize_code(q, sym, sym) == q);
    }

    // agreement with the node-pair composition through an f32 intermediate
    for (int q = 0; q <= 255; ++q) {
        const float real = static_cast<float>(vq::dequantize_code(q, src));
        CHECK(vq::requantize_code(q, src, unit) ==
              vq::quantize_value(static_cast<double>(real), unit));
    }
}

TEST_CASE("fused conv constants: multiplier, folded bias, clamp") {
    vq::Graph g = conv1x1_graph(0.5f, true, true, 0.12f);
    // ranges chosen so every parameter is a frozen known:
    //   x [-1, 2] -> s_x = 3/255, z = 85
    //   w [0, 0.5] -> s_w = 0.5/255, z = 0
    //   y [-0.5, 1] -> s_y = 1.5/255, z = 85
    auto table = make_table({{"x", -1, 2}, {"w", 0, 0.5}, {"y", -0.5, 1}});
    vq::Graph q = vq::insert_qdq(g, table, {});
    vq::EnginePlan plan = vq::build_engine(q);

    auto c = census(plan);
    CHECK(c[vq::PlanOpKind::QuantizeTensor] == 1);
    CHECK(c[vq::PlanOpKind::ConvInt8] == 1);
    CHECK(c[vq::PlanOpKind::DequantizeTensor] == 1);  // fp32 graph output surface
    CHECK(c[vq::PlanOpKind::ReluFp32] == 0);          // the relu fused away

    const vq::PlanOp* conv = find_op(plan, vq::PlanOpKind::ConvInt8);
    REQUIRE(conv != nullptr);
    const vq::QuantParams px = vq::params_from_range(-1, 2, 8);
    const vq::QuantParams pw = vq::params_from_range(0, 0.5, 8);
    const vq::QuantParams py = vq::params_from_range(-0.5, 1, 8);
    CHECK(conv->m == px.scale * pw.scale / py.scale);
    CHECK(conv->m == doctest::Approx(1.0 / 255.0).epsilon(1e-12));
    CHECK(conv->relu_fused);
    CHECK(conv->clamp_lo == 85);  // z_y
    // weight folded to codes: q(0.5) under s=0.5/255 is 255
    REQUIRE(conv->w_nbytes == 1);
    CHECK(plan.weights[conv->w_offset] == 255);
    CHECK(plan.params[static_cast<size_t>(conv->w_param_idx)] == pw);
    // bias folded to i32: rhe(0.12 / (s_x * s_w)) = rhe(0.12 * 65025 / 1.5)
    REQUIRE(conv->bias_count == 1);
    CHECK(plan.biases[conv->bias_offset] == 5202);
    // output tensor carries the y params
    CHECK(plan.params[static_cast<size_t>(
              plan.tensors[static_cast<size_t>(conv->output)].param_idx)] == py);

    // without the fused relu the lower clamp stays at zero
    vq::Graph g2 = conv1x1_graph(0.5f, false, false);
    auto table2 = make_table({{"x", -1, 2}, {"w", 0, 0.5}, {"t", -0.5, 1}});
    vq::EnginePlan plan2 = vq::build_engine(vq::insert_qdq(g2, table2, {}));
    const vq::PlanOp* conv2 = find_op(plan2, vq::PlanOpKind::ConvInt8);
    REQUIRE(conv2 != nullptr);
    CHECK_FALSE(conv2->relu_fused);
    CHECK(conv2->clamp_lo == 0);
    CHECK(conv2->bias_count == 1);
    CHECK(plan2.biases[conv2->bias_offset] == 0);  // missing bias folds to zeros
}

TEST_CASE("equal-params quantize cancels into an alias between convs") {
    Builder b;
    b.g.inputs.push_back({"x", vq::DType::F32, vq::Shape{{vq::Shape::kDynamicBatch, 1, 2, 2, 2}}});
    b.weight("w1", {1, 1, 1, 1, 1}, {0.5f});
    b.weight("w2", {1, 1, 1, 1, 1}, {0.25f});
    vq::Node& c1 = b.node(vq::OpKind::Conv3D, {"x"}, "t1");
    c1.attrs.in_channels = c1.attrs.out_channels = 1;
    c1.attrs.weight = "w1";
    vq::Node& c2 = b.node(vq::OpKind::Conv3D, {"t1"}, "t2");
    c2.attrs.in_channels = c2.attrs.out_channels = 1;
    c2.attrs.weight = "w2";
    b.g.outputs.push_back({"t2", vq::DType::F32, vq::Shape{{vq::Shape::kDynamicBatch, 1, 2, 2, 2}}});
    vq::Graph g = b.finish();

    auto table = make_table(
        {{"x", -1, 2}, {"w1", 0, 0.5}, {"t1", -0.5, 1}, {"w2", 0, 0.25}, {"t2", -0.25, 0.5}});
    vq::EnginePlan plan = vq::build_engine(vq::insert_qdq(g, table, {}));

    auto c = census(plan);
    CHECK(c[vq::PlanOpKind::QuantizeTensor] == 1);    // only the graph input
    CHECK(c[vq::PlanOpKind::ConvInt8] == 2);          // codes flow straight through
    CHECK(c[vq::PlanOpKind::RequantizeTensor] == 0);  // boundary params matched
    CHECK(c[vq::PlanOpKind::DequantizeTensor] == 1);
    // second conv consumes the first conv's output tensor directly
    const vq::PlanOp* k1 = find_op(plan, vq::PlanOpKind::ConvInt8, 0);
    const vq::PlanOp* k2 = find_op(plan, vq::PlanOpKind::ConvInt8, 1);
    REQUIRE(k1 != nullptr);
    REQUIRE(k2 != nullptr);
    CHECK(k2->inputs[0] == k1->output);
}

TEST_CASE("concat adopts the first input's params and requantizes the rest") {
    Builder b;
    b.g.inputs.push_back({"x", vq::DType::F32, vq::Shape{{vq::Shape::kDynamicBatch, 1, 2, 2, 2}}});
    b.weight("w1", {1, 1, 1, 1, 1}, {0.5f});
    b.weight("w2", {1, 1, 1, 1, 1}, {-1.0f});
    vq::Node& c1 = b.node(vq::OpKind::Conv3D, {"x"}, "a");
    c1.attrs.in_channels = c1.attrs.out_channels = 1;
    c1.attrs.weight = "w1";
    vq::Node& c2 = b.node(vq::OpKind::Conv3D, {"x"}, "bb");
    c2.attrs.in_channels = c2.attrs.out_channels = 1;
    c2.attrs.weight = "w2";
    vq::Node& k = b.node(vq::OpKind::Concat, {"a", "bb"}, "c");
    k.attrs.axis = 1;
    b.g.outputs.push_back({"c", vq::DType::F32, vq::Shape{{vq::Shape::kDynamicBatch, 2, 2, 2, 2}}});
    vq::Graph g = b.finish();

    auto table = make_table(
        {{"x", -1, 2}, {"w1", 0, 0.5}, {"a", -0.5, 1}, {"w2", -1, 0}, {"bb", -2, 1}});
    vq::Graph q = vq::insert_qdq(g, table, {});
    vq::EnginePlan plan = vq::build_engine(q);

    auto c = census(plan);
    CHECK(c[vq::PlanOpKind::ConcatInt8] == 1);
    CHECK(c[vq::PlanOpKind::RequantizeTensor] == 1);  // only the non-canonical branch
    CHECK(c[vq::PlanOpKind::ConcatFp32] == 0);

    const vq::PlanOp* cat = find_op(plan, vq::PlanOpKind::ConcatInt8);
    const vq::PlanOp* rq = find_op(plan, vq::PlanOpKind::RequantizeTensor);
    REQUIRE(cat != nullptr);
    REQUIRE(rq != nullptr);
    REQUIRE(cat->inputs.size() == 2);
    CHECK(cat->inputs[1] == rq->output);

    const vq::QuantParams pa = vq::params_from_range(-0.5, 1, 8);
    const vq::QuantParams pb = vq::params_from_range(-2, 1, 8);
    auto param_of = [&](int32_t tid) {
        return plan.params[static_cast<size_t>(plan.tensors[static_cast<size_t>(tid)].param_idx)];
    };
    CHECK(param_of(cat->inputs[0]) == pa);
    CHECK(param_of(rq->inputs[0]) == pb);   // source: branch b's own params
    CHECK(param_of(rq->output) == pa);      // destination: canonical params
    CHECK(param_of(cat->output) == pa);     // concat output inherits them

    // engine and oracle agree bitwise on the lowered concat
    vq::EngineRuntime rt(plan);
    vq::Volume in = cube2({-1, -0.5f, 0, 0.25f, 0.5f, 1, 1.5f, 2});
    auto eng = vq::execute_engine(rt, {in});
    auto ora = vq::execute_plan_oracle(plan, {in});
    REQUIRE(eng.count("c"));
    CHECK(eng.at("c").f32 == ora.at("c").f32);
}

TEST_CASE("a graph without qdq pairs lowers to the fp32 fallback") {
    vq::Graph g = conv1x1_graph(0.5f, true, true, 0.25f);
    vq::EnginePlan plan = vq::build_engine(g);
    auto c = census(plan);
    CHECK(c[vq::PlanOpKind::ConvFp32] == 1);
    CHECK(c[vq::PlanOpKind::ReluFp32] == 1);
    CHECK(c[vq::PlanOpKind::ConvInt8] == 0);
    CHECK(c[vq::PlanOpKind::QuantizeTensor] == 0);
    const vq::PlanOp* conv = find_op(plan, vq::PlanOpKind::ConvFp32);
    REQUIRE(conv != nullptr);
    CHECK(conv->w_nbytes == sizeof(float));  // fp32 payload in the byte arena
    CHECK(conv->b_nbytes == sizeof(float));

    // and it still executes, matching the reference executor exactly
    vq::EngineRuntime rt(plan);
    vq::Volume in = cube2({-1, -0.5f, 0, 0.25f, 0.5f, 1, 1.5f, 2});
    auto eng = vq::execute_engine(rt, {in});
    auto ref = vq::execute_fp32(g, {in});
    CHECK(eng.at("y").f32 == ref.at("y").f32);
}

TEST_CASE("build-time guards raise the advertised codes") {
    SUBCASE("non-8-bit codes") {
        vq::Graph g = conv1x1_graph(0.5f, false);
        auto table = make_table({{"x", -1, 2}, {"w", 0, 0.5}, {"t", -0.5, 1}});
        vq::QdqPolicy p4;
        p4.bits = 4;
        vq::Graph q = vq::insert_qdq(g, table, p4);
        CHECK_RAISES(UnsupportedBits, vq::build_engine(q));
    }
    SUBCASE("conv reduction too long for i32 accumulation") {
        auto big_conv = [&](int64_t in_ch, int64_t k) {
            Builder b;
            b.g.inputs.push_back(
                {"x", vq::DType::F32, vq::Shape{{vq::Shape::kDynamicBatch, in_ch, k, k, k}}});
            std::vector<float> wdata(static_cast<size_t>(in_ch * k * k * k), 0.01f);
            b.weight("w", {1, in_ch, k, k, k}, wdata);
            vq::Node& c = b.node(vq::OpKind::Conv3D, {"x"}, "t");
            c.attrs.kernel = {k, k, k};
            c.attrs.in_channels = in_ch;
            c.attrs.out_channels = 1;
            c.attrs.weight = "w";
            b.g.outputs.push_back(
                {"t", vq::DType::F32, vq::Shape{{vq::Shape::kDynamicBatch, 1, 1, 1, 1}}});
            vq::Graph g = b.finish();
            auto table = make_table({{"x", -1, 2}, {"w", -0.01, 0.01}, {"t", -1, 1}});
            return vq::build_engine(vq::insert_qdq(g, table, {}));
        };
        // 1224 channels x 3^3 = 33048 > 33025
        CHECK_RAISES(AccumulatorOverflow, big_conv(1224, 3));
        // exactly at the cap: builds fine
        vq::EnginePlan ok = big_conv(33025, 1);
        CHECK(census(ok)[vq::PlanOpKind::ConvInt8] == 1);
        // one past the cap
        CHECK_RAISES(AccumulatorOverflow, big_conv(33026, 1));
    }
    SUBCASE("folded bias outside i32") {
        // degenerate ranges make s_x * s_w ~ 1e-11; a bias of 0.1 folds to ~1e10
        vq::Graph g = conv1x1_graph(0.5f, false, true, 0.1f);
        auto table = make_table({{"x", 0, 1e-6}, {"w", 0, 2e-6}, {"t", -1, 1}});
        vq::Graph q = vq::insert_qdq(g, table, {});
        CHECK_RAISES(AccumulatorOverflow, vq::build_engine(q));
    }
    SUBCASE("malformed qdq chain") {
        // a hand-built Quantize whose dequantize partner declares different params
        Builder b;
        b.g.inputs.push_back(
            {"x", vq::DType::F32, vq::Shape{{vq::Shape::kDynamicBatch, 1, 2, 2, 2}}});
        vq::Node& q1 = b.node(vq::OpKind::Quantize, {"x"}, "xq");
        q1.attrs.qparams = vq::params_from_range(-1, 2, 8);
        vq::Node& d1 = b.node(vq::OpKind::Dequantize, {"xq"}, "xd");
        d1.attrs.qparams = vq::params_from_range(0, 1, 8);  // mismatch
        b.g.outputs.push_back(
            {"xd", vq::DType::F32, vq::Shape{{vq::Shape::kDynamicBatch, 1, 2, 2, 2}}});
        vq::Graph g = b.finish();
        CHECK_RAISES(MalformedQdqPattern, vq::build_engine(g));
    }
}

TEST_CASE("engine serialization is deterministic and round trips") {
    vq::Graph g = conv1x1_graph(0.5f, true, true, 0.12f);
    auto table = make_table({{"x", -1, 2}, {"w", 0, 0.5}, {"y", -0.5, 1}});
    vq::EnginePlan plan = vq::build_engine(vq::insert_qdq(g, table, {}));

    std::vector<uint8_t> bytes = vq::serialize_engine(plan);
    CHECK(bytes == vq::serialize_engine(plan));
    CHECK(bytes.size() > 10);
    CHECK(bytes[0] == 'V');
    CHECK(bytes[1] == 'Q');
    CHECK(bytes[2] == 'E');
    CHECK(bytes[3] == '1');

    vq::EnginePlan back = vq::deserialize_engine(bytes);
    CHECK(back.model_name == plan.model_name);
    CHECK(back.tensors.size() == plan.tensors.size());
    CHECK(back.ops.size() == plan.ops.size());
    CHECK(back.params.size() == plan.params.size());
    CHECK(back.weights == plan.weights);
    CHECK(back.biases == plan.biases);
    CHECK(back.workspace_bytes == plan.workspace_bytes);
    CHECK(back.workspace_bytes == vq::compute_workspace_bytes(back));
    CHECK(vq::serialize_engine(back) == bytes);

    // loaded plans execute identically
    vq::EngineRuntime rt1(plan);
    vq::EngineRuntime rt2(back);
    vq::Volume in = cube2({-1, -0.5f, 0, 0.25f, 0.5f, 1, 1.5f, 2});
    CHECK(vq::execute_engine(rt1, {in}).at("y").f32 ==
          vq::execute_engine(rt2, {in}).at("y").f32);

    // file IO round trip
    fs::path dir = fs::temp_directory_path() / "vq_test_engine";
    fs::create_directories(dir);
    const std::string path = (dir / "toy.vqe").string();
    vq::save_engine(plan, path);
    vq::EnginePlan loaded = vq::load_engine(path);
    CHECK(vq::serialize_engine(loaded) == bytes);
    CHECK_RAISES(IoError, vq::load_engine((dir / "missing.vqe").string()));
    fs::remove_all(dir);
}

TEST_CASE("corrupt engine bytes map to the advertised error classes") {
    vq::Graph g = conv1x1_graph(0.5f, false);
    auto table = make_table({{"x", -1, 2}, {"w", 0, 0.5}, {"t", -0.5, 1}});
    vq::EnginePlan plan = vq::build_engine(vq::insert_qdq(g, table, {}));
    const std::vector<uint8_t> bytes = vq::serialize_engine(plan);

    SUBCASE("short and truncated files") {
        CHECK_RAISES(TruncatedFile, vq::deserialize_engine({}));
        CHECK_RAISES(TruncatedFile, vq::deserialize_engine({'V', 'Q', 'E'}));
        std::vector<uint8_t> half(bytes.begin(), bytes.begin() + bytes.size() / 2);
        CHECK_RAISES(TruncatedFile, vq::deserialize_engine(half));
        std::vector<uint8_t> minus_tail(bytes.begin(), bytes.end() - 5);
        CHECK_RAISES(TruncatedFile, vq::deserialize_engine(minus_tail));
    }
    SUBCASE("bad magic") {
        std::vector<uint8_t> b = bytes;
        b[0] = 'X';
        CHECK_RAISES(BadMagic, vq::deserialize_engine(b));
    }
    SUBCASE("unsupported version") {
        std::vector<uint8_t> b = bytes;
        b[4] = 0x7f;
        CHECK_RAISES(UnsupportedVersion, vq::deserialize_engine(b));
    }
    SUBCASE("checksum over flipped content") {
        // offset 12 sits inside the plan blob, leaving section lengths intact
        std::vector<uint8_t> b = bytes;
        b[12] ^= 0xff;
        CHECK_RAISES(ChecksumMismatch, vq::deserialize_engine(b));
        // corrupting the stored crc itself
        std::vector<uint8_t> c = bytes;
        c.back() ^= 0xff;
        CHECK_RAISES(ChecksumMismatch, vq::deserialize_engine(c));
    }
    SUBCASE("appended trailing garbage") {
        std::vector<uint8_t> b = bytes;
        b.push_back(0);
        CHECK_RAISES(SyntaxError, vq::deserialize_engine(b));
    }
}

TEST_CASE("workspace accounting gates execution") {
    // two chained convs leave at least one live intermediate
    Builder b;
    b.g.inputs.push_back({"x", vq::DType::F32, vq::Shape{{vq::Shape::kDynamicBatch, 1, 4, 4, 4}}});
    b.weight("w1", {1, 1, 1, 1, 1}, {0.5f});
    b.weight("w2", {1, 1, 1, 1, 1}, {0.25f});
    vq::Node& c1 = b.node(vq::OpKind::Conv3D, {"x"}, "t1");
    c1.attrs.in_channels = c1.attrs.out_channels = 1;
    c1.attrs.weight = "w1";
    vq::Node& c2 = b.node(vq::OpKind::Conv3D, {"t1"}, "t2");
    c2.attrs.in_channels = c2.attrs.out_channels = 1;
    c2.attrs.weight = "w2";
    b.g.outputs.push_back({"t2", vq::DType::F32, vq::Shape{{vq::Shape::kDynamicBatch, 1, 4, 4, 4}}});
    vq::Graph g = b.finish();
    auto table = make_table(
        {{"x", -1, 2}, {"w1", 0, 0.5}, {"t1", -0.5, 1}, {"w2", 0, 0.25}, {"t2", -0.25, 0.5}});
    vq::EnginePlan plan = vq::build_engine(vq::insert_qdq(g, table, {}));

    CHECK(plan.workspace_bytes == vq::compute_workspace_bytes(plan));
    REQUIRE(plan.workspace_bytes > 0);

    vq::EngineRuntime rt(plan);
    vq::Volume in = vq::Volume::zeros(vq::Shape{{1, 1, 4, 4, 4}});
    for (size_t i = 0; i < in.data.size(); ++i) in.data[i] = 0.01f * static_cast<float>(i) - 0.2f;

    vq::EngineExecOptions exact;
    exact.workspace_bytes = plan.workspace_bytes;
    auto out = vq::execute_engine(rt, {in}, exact);
    CHECK(out.count("t2"));

    vq::EngineExecOptions starved;
    starved.workspace_bytes = plan.workspace_bytes - 1;
    CHECK_RAISES(WorkspaceTooSmall, vq::execute_engine(rt, {in}, starved));

    // default (0) means the recorded requirement
    auto out2 = vq::execute_engine(rt, {in});
    CHECK(out2.at("t2").f32 == out.at("t2").f32);
}

TEST_CASE("engine matches the integer oracle on random fixtures") {
    for (uint64_t seed : {1000u, 1013u, 1037u, 1064u, 1099u}) {
        vqtest::RandomFixture fx = vqtest::gen_random_fixture(seed);
        vq::CalibrationTable table = vq::calibrate_graph(fx.graph, fx.calib, {});
        vq::Graph q = vq::insert_qdq(fx.graph, table, {});
        vq::EnginePlan plan = vq::build_engine(q);
        vq::EngineRuntime rt(plan);

        vq::EngineExecOptions opts;
        opts.threads = 1 + static_cast<int>(seed % 3);
        auto eng = vq::execute_engine(rt, {fx.test_input}, opts);
        auto ora = vq::execute_plan_oracle(plan, {fx.test_input});
        REQUIRE(eng.count(fx.output_name));
        REQUIRE(ora.count(fx.output_name));
        const auto& a = eng.at(fx.output_name);
        const auto& o = ora.at(fx.output_name);
        REQUIRE(a.f32.size() == o.f32.size());
        size_t mismatches = 0;
        for (size_t i = 0; i < a.f32.size(); ++i)
            if (a.f32[i] != o.f32[i]) mismatches++;
        CHECK(mismatches == 0);
    }
}

TEST_CASE("plan summary lists ops and tensors") {
    vq::Graph g = conv1x1_graph(0.5f, true);
    auto table = make_table({{"x", -1, 2}, {"w", 0, 0.5}, {"y", -0.5, 1}});
    vq::EnginePlan plan = vq::build_engine(vq::insert_qdq(g, table, {}));
    std::string s = vq::plan_summary(plan);
    CHECK(s.find("ConvInt8") != std::string::npos);
    CHECK(s.find("QuantizeTensor") != std::string::npos);
    CHECK(s.find(plan.model_name) != std::string::npos);
}
