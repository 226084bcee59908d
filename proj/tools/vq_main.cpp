// SPDX-License-Identifier: Apache-2.0
//
// vq: command-line front end for the voxelquant toolchain.
//
// Exit codes: 0 success, 2 usage / configuration, 3 data or file problems,
// 4 quantization build or runtime-resource failures.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <string>
#include <vector>

#include "voxelquant/bench.hpp"
#include "voxelquant/engine.hpp"
#include "voxelquant/engine_exec.hpp"
#include "voxelquant/executor.hpp"
#include "voxelquant/qdq.hpp"
#include "voxelquant/util.hpp"

using namespace vq;

namespace {

int exit_code_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidConfig:
        case ErrorCode::MissingArtifact:
            return 2;
        case ErrorCode::PolicyUnsupportedKind:
        case ErrorCode::UnsupportedBits:
        case ErrorCode::MalformedQdqPattern:
        case ErrorCode::AccumulatorOverflow:
        case ErrorCode::WorkspaceTooSmall:
            return 4;
        default:
            return 3;
    }
}

nlohmann::ordered_json stats_json(const LatencyStats& s) {
    nlohmann::ordered_json j;
    j["median_ms"] = s.median_ms;
    j["mean_ms"] = s.mean_ms;
    j["min_ms"] = s.min_ms;
    j["max_ms"] = s.max_ms;
    j["runs"] = s.samples_ms.size();
    return j;
}

Graph load_validated_model(const std::string& path) {
    Graph g = load_model(path);
    validate_and_infer_shapes(g);
    return g;
}

CalibMethod method_from_flag(const std::string& name) {
    auto m = calib_method_from_name(name);
    if (!m) raise(ErrorCode::InvalidConfig, "unknown calibration method '" + name + "'");
    return *m;
}

void write_outputs(const std::map<std::string, TensorValue>& outputs, const std::string& out_dir) {
    namespace fs = std::filesystem;
    for (const auto& [name, tv] : outputs) {
        const fs::path path = fs::path(out_dir) / (name + ".bin");
        if (tv.dtype == DType::F32) {
            Volume v;
            v.shape = tv.shape;
            v.data = tv.f32;
            save_volume(path, v);
        } else if (tv.dtype == DType::U16) {
            LabelVolume v;
            v.shape = tv.shape;
            v.data = tv.u16;
            save_labels(path, v);
        } else {
            raise(ErrorCode::InvalidConfig,
                  "output '" + name + "' has a dtype with no file representation");
        }
        std::printf("wrote %s (%s %s)\n", path.string().c_str(), dtype_name(tv.dtype),
                    tv.shape.str().c_str());
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"voxelquant: post-training INT8 quantization for volumetric segmentation models"};
    app.require_subcommand(1);

    // ---- gen-data ----------------------------------------------------------
    struct {
        std::string out;
        DataGenOptions o;
    } gd;
    auto* c_gd = app.add_subcommand("gen-data", "generate a synthetic labeled dataset");
    c_gd->add_option("--out", gd.out, "output directory")->required();
    c_gd->add_option("--count", gd.o.count, "number of volumes");
    c_gd->add_option("--classes", gd.o.classes, "number of classes incl. background");
    c_gd->add_option("--dim", gd.o.dim, "cubic volume side");
    c_gd->add_option("--sigma", gd.o.sigma, "intensity noise stddev");
    c_gd->add_option("--seed", gd.o.seed, "rng seed");

    // ---- gen-model ---------------------------------------------------------
    struct {
        std::string out;
        std::string arch = "unet";
        std::string size = "M";
        int classes = 4;
        int64_t dim = 96;
        uint64_t seed = 1;
    } gm;
    auto* c_gm = app.add_subcommand("gen-model", "generate a reference model");
    c_gm->add_option("--out", gm.out, "output directory (gets model.json/model.bin)")->required();
    c_gm->add_option("--arch", gm.arch, "centroid | unet")
        ->check(CLI::IsMember({"centroid", "unet"}));
    c_gm->add_option("--size", gm.size, "unet size: S | M | L");
    c_gm->add_option("--classes", gm.classes);
    c_gm->add_option("--dim", gm.dim, "input volume side");
    c_gm->add_option("--seed", gm.seed, "weight init seed (unet)");

    // ---- calibrate ---------------------------------------------------------
    struct {
        std::string model, data, out;
        int bits = 8;
        std::string method = "minmax";
        double percentile = 99.9;
        int threads = 1;
        int max_calib = 0;
    } ca;
    auto* c_ca = app.add_subcommand("calibrate", "collect activation/weight ranges");
    c_ca->add_option("--model", ca.model, "model.json")->required();
    c_ca->add_option("--data", ca.data, "dataset directory")->required();
    c_ca->add_option("--out", ca.out, "calibration table path")->required();
    c_ca->add_option("--bits", ca.bits)->check(CLI::Range(2, 8));
    c_ca->add_option("--calib-method", ca.method)->check(CLI::IsMember({"minmax", "percentile"}));
    c_ca->add_option("--percentile", ca.percentile);
    c_ca->add_option("--threads", ca.threads)->check(CLI::Range(1, 256));
    c_ca->add_option("--max-calib", ca.max_calib, "cap on calibration volumes (0 = all)");

    // ---- quantize ----------------------------------------------------------
    struct {
        std::string model, calib, out;
        int bits = 8;
    } qz;
    auto* c_qz = app.add_subcommand("quantize", "insert quantize/dequantize pairs");
    c_qz->add_option("--model", qz.model, "model.json")->required();
    c_qz->add_option("--calib", qz.calib, "calibration table")->required();
    c_qz->add_option("--out", qz.out, "rewritten model path (json)")->required();
    c_qz->add_option("--bits", qz.bits)->check(CLI::Range(2, 8));

    // ---- build -------------------------------------------------------------
    struct {
        std::string model, out;
    } bd;
    auto* c_bd = app.add_subcommand("build", "lower a fake-quant model to an engine file");
    c_bd->add_option("--model", bd.model, "fake-quant model.json")->required();
    c_bd->add_option("--out", bd.out, "engine output path")->required();

    // ---- run ---------------------------------------------------------------
    struct {
        std::string model, engine, input, out;
        int threads = 1;
        uint64_t workspace = 0;
    } rn;
    auto* c_rn = app.add_subcommand("run", "run one inference and save the outputs");
    c_rn->add_option("--model", rn.model, "model.json (fp32 path)");
    c_rn->add_option("--engine", rn.engine, "engine file (int8 path)");
    c_rn->add_option("--input", rn.input, "input volume payload (.bin)")->required();
    c_rn->add_option("--out", rn.out, "output directory")->required();
    c_rn->add_option("--threads", rn.threads)->check(CLI::Range(1, 256));
    c_rn->add_option("--workspace-bytes", rn.workspace, "live-buffer cap (0 = plan requirement)");

    // ---- bench -------------------------------------------------------------
    struct {
        std::string model, engine, data;
        int warmup = 5, runs = 30, threads = 1;
    } be;
    auto* c_be = app.add_subcommand("bench", "latency of the fp32 and/or int8 paths");
    c_be->add_option("--model", be.model, "model.json");
    c_be->add_option("--engine", be.engine, "engine file");
    c_be->add_option("--data", be.data, "dataset directory (first volume is the probe)")
        ->required();
    c_be->add_option("--warmup", be.warmup);
    c_be->add_option("--runs", be.runs);
    c_be->add_option("--threads", be.threads)->check(CLI::Range(1, 256));

    // ---- eval-dice ---------------------------------------------------------
    struct {
        std::string model, engine, data;
        int threads = 1;
    } ed;
    auto* c_ed = app.add_subcommand("eval-dice", "mean dice of a model over a labeled dataset");
    c_ed->add_option("--model", ed.model, "model.json");
    c_ed->add_option("--engine", ed.engine, "engine file");
    c_ed->add_option("--data", ed.data, "dataset directory")->required();
    c_ed->add_option("--threads", ed.threads)->check(CLI::Range(1, 256));

    // ---- compare -----------------------------------------------------------
    struct {
        std::vector<std::string> dirs;
        std::string data, json_out;
        int warmup = 2, runs = 5, threads = 1;
        bool no_dice = false;
    } cp;
    auto* c_cp = app.add_subcommand("compare", "side-by-side report over pipeline directories");
    c_cp->add_option("--dir", cp.dirs, "model directory (repeatable)")->required();
    c_cp->add_option("--data", cp.data, "dataset directory")->required();
    c_cp->add_option("--json", cp.json_out, "also write the report as JSON");
    c_cp->add_option("--warmup", cp.warmup);
    c_cp->add_option("--runs", cp.runs);
    c_cp->add_option("--threads", cp.threads)->check(CLI::Range(1, 256));
    c_cp->add_flag("--no-dice", cp.no_dice, "skip dice evaluation");

    // ---- sweep -------------------------------------------------------------
    struct {
        std::string out;
        int classes = 4;
        int64_t dim = 32;
        uint64_t seed = 7;
        int bits = 8;
        int threads = 1;
    } sw;
    auto* c_sw = app.add_subcommand("sweep", "size scaling across S/M/L reference models");
    c_sw->add_option("--out", sw.out, "working directory")->required();
    c_sw->add_option("--classes", sw.classes);
    c_sw->add_option("--dim", sw.dim, "input volume side (multiple of 8)");
    c_sw->add_option("--seed", sw.seed);
    c_sw->add_option("--bits", sw.bits)->check(CLI::Range(2, 8));
    c_sw->add_option("--threads", sw.threads)->check(CLI::Range(1, 256));

    // ---- inspect -----------------------------------------------------------
    struct {
        std::string model, engine;
    } in;
    auto* c_in = app.add_subcommand("inspect", "describe a model or an engine file");
    c_in->add_option("--model", in.model, "model.json");
    c_in->add_option("--engine", in.engine, "engine file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*c_gd) {
            gen_synthetic_dataset(gd.out, gd.o);
            std::printf("wrote %d volumes (%d classes, %lld^3) to %s\n", gd.o.count, gd.o.classes,
                        static_cast<long long>(gd.o.dim), gd.out.c_str());
        } else if (*c_gm) {
            Graph g;
            if (gm.arch == "centroid") {
                g = gen_centroid_model(gm.classes, gm.dim);
            } else {
                auto size = unet_size_from_name(gm.size);
                if (!size) raise(ErrorCode::InvalidConfig, "unknown unet size '" + gm.size + "'");
                g = gen_toy_unet(gm.classes, gm.dim, *size, gm.seed);
            }
            const auto path = std::filesystem::path(gm.out) / "model.json";
            save_model(path, g);
            uint64_t params = 0;
            for (const auto& w : g.weights) params += static_cast<uint64_t>(w.element_count());
            std::printf("wrote %s: %s, %llu parameters\n", path.string().c_str(), g.name.c_str(),
                        static_cast<unsigned long long>(params));
        } else if (*c_ca) {
            Graph g = load_validated_model(ca.model);
            const DatasetInfo data = load_dataset_info(ca.data);
            std::vector<Volume> vols;
            int64_t n = data.count;
            if (ca.max_calib > 0) n = std::min<int64_t>(n, ca.max_calib);
            for (int64_t i = 0; i < n; ++i)
                vols.push_back(load_volume(data.image_paths[static_cast<size_t>(i)]));
            QdqPolicy policy;
            policy.bits = ca.bits;
            CalibOptions opts;
            opts.bits = ca.bits;
            opts.method = method_from_flag(ca.method);
            opts.percentile = ca.percentile;
            opts.threads = ca.threads;
            const CalibrationTable table = calibrate_graph(g, vols, policy, opts);
            write_text_file(ca.out, table.to_json());
            std::printf("wrote %s: %zu tensors over %lld volumes\n", ca.out.c_str(),
                        table.entries.size(), static_cast<long long>(n));
        } else if (*c_qz) {
            Graph g = load_validated_model(qz.model);
            const CalibrationTable table = CalibrationTable::from_json(read_text_file(qz.calib));
            QdqPolicy policy;
            policy.bits = qz.bits;
            const Graph fake = insert_qdq(g, table, policy);
            save_model(qz.out, fake);
            std::printf("wrote %s: %zu nodes (was %zu)\n", qz.out.c_str(), fake.nodes.size(),
                        g.nodes.size());
        } else if (*c_bd) {
            const Graph g = load_validated_model(bd.model);
            const EnginePlan plan = build_engine(g);
            save_engine(plan, bd.out);
            std::printf("wrote %s: %zu ops, workspace %llu bytes\n", bd.out.c_str(),
                        plan.ops.size(), static_cast<unsigned long long>(plan.workspace_bytes));
        } else if (*c_rn) {
            if (rn.model.empty() == rn.engine.empty())
                raise(ErrorCode::InvalidConfig, "pass exactly one of --model or --engine");
            const Volume input = load_volume(rn.input);
            if (!rn.engine.empty()) {
                const EngineRuntime rt(load_engine(rn.engine));
                EngineExecOptions opts;
                opts.threads = rn.threads;
                opts.workspace_bytes = rn.workspace;
                write_outputs(execute_engine(rt, {input}, opts), rn.out);
            } else {
                const Graph g = load_validated_model(rn.model);
                ExecOptions opts;
                opts.threads = rn.threads;
                write_outputs(execute_fp32(g, {input}, opts), rn.out);
            }
        } else if (*c_be) {
            if (be.model.empty() && be.engine.empty())
                raise(ErrorCode::InvalidConfig, "pass --model and/or --engine");
            const DatasetInfo data = load_dataset_info(be.data);
            const Volume probe = load_volume(data.image_paths[0]);
            nlohmann::ordered_json j;
            double fp32_ms = 0, int8_ms = 0;
            if (!be.model.empty()) {
                const Graph g = load_validated_model(be.model);
                const LatencyStats s = bench_fp32(g, {probe}, be.warmup, be.runs, be.threads);
                fp32_ms = s.median_ms;
                j["fp32"] = stats_json(s);
            }
            if (!be.engine.empty()) {
                const EngineRuntime rt(load_engine(be.engine));
                const LatencyStats s = bench_engine(rt, {probe}, be.warmup, be.runs, be.threads);
                int8_ms = s.median_ms;
                j["int8"] = stats_json(s);
            }
            if (fp32_ms > 0 && int8_ms > 0) j["speedup"] = fp32_ms / int8_ms;
            j["threads"] = be.threads;
            std::printf("%s\n", j.dump(2).c_str());
        } else if (*c_ed) {
            if (ed.model.empty() == ed.engine.empty())
                raise(ErrorCode::InvalidConfig, "pass exactly one of --model or --engine");
            const DatasetInfo data = load_dataset_info(ed.data);
            EvalResult r;
            if (!ed.engine.empty()) {
                const EngineRuntime rt(load_engine(ed.engine));
                r = eval_dice_engine(rt, data, ed.threads);
            } else {
                const Graph g = load_validated_model(ed.model);
                r = eval_dice_fp32(g, data, ed.threads);
            }
            nlohmann::ordered_json j;
            j["mean_dice"] = r.mean_dice;
            j["per_volume"] = r.per_volume;
            std::printf("%s\n", j.dump(2).c_str());
        } else if (*c_cp) {
            const CompareReport report = compare_models(cp.dirs, cp.data, cp.warmup, cp.runs,
                                                        cp.threads, !cp.no_dice);
            std::printf("%s", report.to_text().c_str());
            if (!cp.json_out.empty()) write_text_file(cp.json_out, report.to_json());
        } else if (*c_sw) {
            PipelineOptions opts;
            opts.bits = sw.bits;
            opts.threads = sw.threads;
            const auto rows = scaling_sweep(sw.out, sw.classes, sw.dim, sw.seed, opts);
            std::printf("%-5s %12s %12s %12s %7s\n", "size", "params", "fp32 B", "engine B",
                        "ratio");
            for (const auto& r : rows)
                std::printf("%-5s %12llu %12llu %12llu %7.3f\n", r.size.c_str(),
                            static_cast<unsigned long long>(r.param_count),
                            static_cast<unsigned long long>(r.fp32_bytes),
                            static_cast<unsigned long long>(r.engine_bytes), r.ratio);
            write_text_file(std::filesystem::path(sw.out) / "sweep.json", sweep_to_json(rows));
        } else if (*c_in) {
            if (in.model.empty() == in.engine.empty())
                raise(ErrorCode::InvalidConfig, "pass exactly one of --model or --engine");
            if (!in.engine.empty()) {
                std::printf("%s", plan_summary(load_engine(in.engine)).c_str());
            } else {
                const Graph g = load_validated_model(in.model);
                std::printf("model %s\n", g.name.c_str());
                for (const auto& t : g.inputs)
                    std::printf("  input  %s %s %s\n", t.name.c_str(), dtype_name(t.dtype),
                                t.shape.str().c_str());
                for (const auto& t : g.outputs)
                    std::printf("  output %s %s %s\n", t.name.c_str(), dtype_name(t.dtype),
                                t.shape.str().c_str());
                std::map<std::string, int> by_kind;
                for (const auto& n : g.nodes) by_kind[op_kind_name(n.kind)]++;
                for (const auto& [kind, count] : by_kind)
                    std::printf("  %-12s x%d\n", kind.c_str(), count);
                uint64_t params = 0;
                for (const auto& w : g.weights) params += static_cast<uint64_t>(w.element_count());
                std::printf("  %zu weight tensors, %llu parameters, blob %zu bytes\n",
                            g.weights.size(), static_cast<unsigned long long>(params),
                            g.blob.size());
            }
        }
        return 0;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}
