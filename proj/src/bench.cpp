// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include <json.hpp>

#include "voxelquant/bench.hpp"
#include "voxelquant/qdq.hpp"
#include "voxelquant/util.hpp"

namespace vq {

namespace fs = std::filesystem;

namespace {

/// Rethrows stage failures with the stage name up front, keeping the
/// structured code.
template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const Error& e) {
        const std::string prefix = std::string(error_code_name(e.code())) + ": ";
        std::string msg = e.what();
        if (msg.rfind(prefix, 0) == 0) msg = msg.substr(prefix.size());
        raise(e.code(), std::string(name) + ": " + msg);
    }
}

uint64_t file_bytes(const fs::path& p) {
    if (!fs::exists(p)) raise(ErrorCode::MissingArtifact, "missing file: " + p.string());
    return static_cast<uint64_t>(fs::file_size(p));
}

std::vector<Volume> load_calib_volumes(const DatasetInfo& data, int max_calib) {
    int64_t n = data.count;
    if (max_calib > 0) n = std::min<int64_t>(n, max_calib);
    std::vector<Volume> vols;
    vols.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) vols.push_back(load_volume(data.image_paths[static_cast<size_t>(i)]));
    return vols;
}

const TensorValue& sole_output(const std::map<std::string, TensorValue>& outputs) {
    if (outputs.size() != 1)
        raise(ErrorCode::InvalidConfig,
              "expected a single model output, got " + std::to_string(outputs.size()));
    return outputs.begin()->second;
}

double dataset_dice(const std::vector<DiceResult>& per_vol, std::vector<double>* out_means) {
    for (const auto& d : per_vol) out_means->push_back(d.mean);
    return dataset_mean_dice(per_vol);
}

}  // namespace

// ============================================================================
// Pipeline
// ============================================================================

PipelineResult run_pipeline(const std::string& model_dir, const std::string& data_dir,
                            const PipelineOptions& opts) {
    const fs::path root(model_dir);
    const fs::path model_json = root / "model.json";
    if (!fs::exists(model_json))
        raise(ErrorCode::MissingArtifact, "no model.json in " + model_dir);

    Graph g = stage("load-model", [&] {
        Graph m = load_model(model_json);
        validate_and_infer_shapes(m);
        return m;
    });
    const DatasetInfo data = stage("load-data", [&] { return load_dataset_info(data_dir); });
    const std::vector<Volume> calib =
        stage("load-data", [&] { return load_calib_volumes(data, opts.max_calib); });

    QdqPolicy policy;
    policy.bits = opts.bits;
    CalibOptions copts;
    copts.bits = opts.bits;
    copts.method = opts.method;
    copts.percentile = opts.percentile;
    copts.threads = opts.threads;

    const CalibrationTable table =
        stage("calibrate", [&] { return calibrate_graph(g, calib, policy, copts); });
    write_text_file(root / "calib.json", table.to_json());

    const Graph fake = stage("quantize", [&] { return insert_qdq(g, table, policy); });
    save_model(root / "fake.model.json", fake);

    const EnginePlan plan = stage("build", [&] { return build_engine(fake); });
    save_engine(plan, (root / "engine.vqe").string());

    PipelineResult res;
    res.model_dir = model_dir;
    res.workspace_bytes = plan.workspace_bytes;

    // Manifest: content hashes and sizes only — nothing run-dependent, so
    // back-to-back pipelines write byte-identical trees.
    const char* artifact_names[] = {"model.json",      "model.bin", "calib.json",
                                    "fake.model.json", "fake.model.bin", "engine.vqe"};
    nlohmann::ordered_json arts;
    for (const char* name : artifact_names) {
        const fs::path p = root / name;
        const auto bytes = read_file(p);
        nlohmann::ordered_json a;
        a["bytes"] = bytes.size();
        a["fnv64"] = fnv1a64_hex(bytes);
        arts[name] = a;
    }
    res.fp32_bytes = file_bytes(root / "model.json") + file_bytes(root / "model.bin");
    res.fake_bytes = file_bytes(root / "fake.model.json") + file_bytes(root / "fake.model.bin");
    res.engine_bytes = file_bytes(root / "engine.vqe");

    nlohmann::ordered_json m;
    m["model"] = g.name;
    m["bits"] = opts.bits;
    m["calib_method"] = calib_method_name(opts.method);
    if (opts.method == CalibMethod::Percentile) m["percentile"] = opts.percentile;
    m["calib_volumes"] = calib.size();
    m["workspace_bytes"] = plan.workspace_bytes;
    m["artifacts"] = arts;
    nlohmann::ordered_json sizes;
    sizes["fp32"] = res.fp32_bytes;
    sizes["fake"] = res.fake_bytes;
    sizes["engine"] = res.engine_bytes;
    m["sizes"] = sizes;
    write_text_file(root / "manifest.json", m.dump(2) + "\n");
    return res;
}

// ============================================================================
// Latency
// ============================================================================

LatencyStats summarize_latency(std::vector<double> samples_ms) {
    if (samples_ms.empty()) raise(ErrorCode::InvalidConfig, "no latency samples");
    LatencyStats st;
    st.samples_ms = std::move(samples_ms);
    std::vector<double> sorted = st.samples_ms;
    std::sort(sorted.begin(), sorted.end());
    const size_t n = sorted.size();
    st.median_ms = (n % 2 == 1) ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    st.mean_ms = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(n);
    st.min_ms = sorted.front();
    st.max_ms = sorted.back();
    return st;
}

namespace {

template <typename F>
LatencyStats bench_loop(int warmup, int runs, F&& once) {
    if (warmup < 0 || runs < 1)
        raise(ErrorCode::InvalidConfig, "benchmark needs warmup >= 0 and runs >= 1");
    for (int i = 0; i < warmup; ++i) once();
    std::vector<double> samples;
    samples.reserve(static_cast<size_t>(runs));
    for (int i = 0; i < runs; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        once();
        const auto t1 = std::chrono::steady_clock::now();
        samples.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return summarize_latency(std::move(samples));
}

}  // namespace

LatencyStats bench_fp32(const Graph& g, const std::vector<Volume>& inputs, int warmup, int runs,
                        int threads) {
    ExecOptions opts;
    opts.threads = threads;
    return bench_loop(warmup, runs, [&] { execute_fp32(g, inputs, opts); });
}

LatencyStats bench_engine(const EngineRuntime& rt, const std::vector<Volume>& inputs, int warmup,
                          int runs, int threads) {
    EngineExecOptions opts;
    opts.threads = threads;
    return bench_loop(warmup, runs, [&] { execute_engine(rt, inputs, opts); });
}

// ============================================================================
// Evaluation
// ============================================================================

LabelVolume labels_from_output(const TensorValue& out) {
    LabelVolume lv;
    if (out.dtype == DType::U16) {
        lv.shape = out.shape;
        lv.data = out.u16;
        return lv;
    }
    if (out.dtype == DType::F32) {
        Shape s = out.shape;
        s.dims[1] = 1;
        lv = LabelVolume::zeros(s);
        eval_argmax_channels(out.f32.data(), out.shape, lv.data.data());
        return lv;
    }
    raise(ErrorCode::InvalidConfig, "cannot derive labels from this output dtype");
}

namespace {

template <typename RunFn>
EvalResult eval_dice_common(const DatasetInfo& data, const RunFn& run) {
    if (data.label_paths.empty())
        raise(ErrorCode::MissingArtifact, "dataset has no label volumes");
    if (data.classes < 2)
        raise(ErrorCode::InvalidConfig, "dataset metadata lacks a usable class count");
    std::vector<DiceResult> per_vol;
    for (size_t i = 0; i < data.image_paths.size(); ++i) {
        const Volume img = load_volume(data.image_paths[i]);
        const LabelVolume ref = load_labels(data.label_paths[i]);
        const LabelVolume pred = labels_from_output(run(img));
        per_vol.push_back(dice_score(pred, ref, data.classes));
    }
    EvalResult r;
    r.mean_dice = dataset_dice(per_vol, &r.per_volume);
    return r;
}

}  // namespace

EvalResult eval_dice_fp32(const Graph& g, const DatasetInfo& data, int threads) {
    ExecOptions opts;
    opts.threads = threads;
    return eval_dice_common(
        data, [&](const Volume& img) { return sole_output(execute_fp32(g, {img}, opts)); });
}

EvalResult eval_dice_engine(const EngineRuntime& rt, const DatasetInfo& data, int threads) {
    EngineExecOptions opts;
    opts.threads = threads;
    return eval_dice_common(
        data, [&](const Volume& img) { return sole_output(execute_engine(rt, {img}, opts)); });
}

// ============================================================================
// Compare
// ============================================================================

CompareReport compare_models(const std::vector<std::string>& model_dirs,
                             const std::string& data_dir, int warmup, int runs, int threads,
                             bool with_dice) {
    if (model_dirs.empty()) raise(ErrorCode::InvalidConfig, "no model directories given");
    const DatasetInfo data = load_dataset_info(data_dir);
    const Volume probe = load_volume(data.image_paths[0]);

    CompareReport report;
    for (const auto& dir : model_dirs) {
        const fs::path root(dir);
        CompareEntry e;
        e.dir = dir;

        Graph g = load_model(root / "model.json");
        validate_and_infer_shapes(g);
        e.model_name = g.name;
        const EngineRuntime rt(load_engine((root / "engine.vqe").string()));

        e.fp32_bytes = file_bytes(root / "model.json") + file_bytes(root / "model.bin");
        e.fake_bytes =
            file_bytes(root / "fake.model.json") + file_bytes(root / "fake.model.bin");
        e.engine_bytes = file_bytes(root / "engine.vqe");
        e.size_ratio = static_cast<double>(e.fp32_bytes) / static_cast<double>(e.engine_bytes);

        e.fp32_median_ms = bench_fp32(g, {probe}, warmup, runs, threads).median_ms;
        e.engine_median_ms = bench_engine(rt, {probe}, warmup, runs, threads).median_ms;
        e.speedup = e.fp32_median_ms / e.engine_median_ms;

        if (with_dice && !data.label_paths.empty()) {
            e.has_dice = true;
            e.fp32_dice = eval_dice_fp32(g, data, threads).mean_dice;
            e.engine_dice = eval_dice_engine(rt, data, threads).mean_dice;
        }
        report.entries.push_back(std::move(e));
    }
    return report;
}

std::string CompareReport::to_json() const {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& e : entries) {
        nlohmann::ordered_json j;
        j["dir"] = e.dir;
        j["model"] = e.model_name;
        j["fp32_bytes"] = e.fp32_bytes;
        j["fake_bytes"] = e.fake_bytes;
        j["engine_bytes"] = e.engine_bytes;
        j["size_ratio"] = e.size_ratio;
        j["fp32_median_ms"] = e.fp32_median_ms;
        j["engine_median_ms"] = e.engine_median_ms;
        j["speedup"] = e.speedup;
        if (e.has_dice) {
            j["fp32_dice"] = e.fp32_dice;
            j["engine_dice"] = e.engine_dice;
            j["dice_delta"] = e.engine_dice - e.fp32_dice;
        }
        arr.push_back(j);
    }
    nlohmann::ordered_json top;
    top["models"] = arr;
    return top.dump(2) + "\n";
}

std::string CompareReport::to_text() const {
    std::string out;
    char line[256];
    std::snprintf(line, sizeof line, "%-16s %10s %10s %7s %10s %10s %8s %10s %10s\n", "model",
                  "fp32 KiB", "int8 KiB", "ratio", "fp32 ms", "int8 ms", "speedup", "fp32 dice",
                  "int8 dice");
    out += line;
    for (const auto& e : entries) {
        std::string d0 = "-", d1 = "-";
        if (e.has_dice) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.4f", e.fp32_dice);
            d0 = buf;
            std::snprintf(buf, sizeof buf, "%.4f", e.engine_dice);
            d1 = buf;
        }
        std::snprintf(line, sizeof line, "%-16s %10.1f %10.1f %7.2f %10.2f %10.2f %8.2f %10s %10s\n",
                      e.model_name.c_str(), e.fp32_bytes / 1024.0, e.engine_bytes / 1024.0,
                      e.size_ratio, e.fp32_median_ms, e.engine_median_ms, e.speedup, d0.c_str(),
                      d1.c_str());
        out += line;
    }
    return out;
}

// ============================================================================
// Scaling sweep
// ============================================================================

std::vector<SweepRow> scaling_sweep(const std::string& work_dir, int classes, int64_t dim,
                                    uint64_t seed, const PipelineOptions& opts) {
    const fs::path root(work_dir);
    const fs::path data_dir = root / "data";
    if (!fs::exists(data_dir / "dataset.json")) {
        DataGenOptions d;
        d.count = 2;
        d.classes = classes;
        d.dim = dim;
        d.sigma = 0.05;
        d.seed = seed;
        gen_synthetic_dataset(data_dir.string(), d);
    }

    std::vector<SweepRow> rows;
    for (UnetSize size : {UnetSize::S, UnetSize::M, UnetSize::L}) {
        const std::string name = unet_size_name(size);
        const fs::path dir = root / name;
        const Graph g = gen_toy_unet(classes, dim, size, seed);
        save_model(dir / "model.json", g);
        const PipelineResult r = run_pipeline(dir.string(), data_dir.string(), opts);

        SweepRow row;
        row.size = name;
        for (const auto& w : g.weights) row.param_count += static_cast<uint64_t>(w.element_count());
        row.fp32_bytes = r.fp32_bytes;
        row.engine_bytes = r.engine_bytes;
        row.ratio = static_cast<double>(r.fp32_bytes) / static_cast<double>(r.engine_bytes);
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string sweep_to_json(const std::vector<SweepRow>& rows) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
        nlohmann::ordered_json j;
        j["size"] = r.size;
        j["param_count"] = r.param_count;
        j["fp32_bytes"] = r.fp32_bytes;
        j["engine_bytes"] = r.engine_bytes;
        j["ratio"] = r.ratio;
        arr.push_back(j);
    }
    nlohmann::ordered_json top;
    top["rows"] = arr;
    return top.dump(2) + "\n";
}

}  // namespace vq
