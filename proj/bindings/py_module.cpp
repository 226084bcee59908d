// SPDX-License-Identifier: Apache-2.0
//
// Python bindings for the main toolchain operations. The API is
// path-oriented like the CLI (models and engines live on disk); inference
// crosses the boundary as numpy arrays.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "voxelquant/bench.hpp"
#include "voxelquant/engine.hpp"
#include "voxelquant/engine_exec.hpp"
#include "voxelquant/executor.hpp"
#include "voxelquant/qdq.hpp"
#include "voxelquant/util.hpp"

namespace py = pybind11;
using namespace vq;

namespace {

Volume volume_from_array(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 5)
        raise(ErrorCode::InvalidConfig,
              "input must be a 5-d array (batch, channels, depth, height, width)");
    Volume v;
    for (int i = 0; i < 5; ++i) v.shape.dims[static_cast<size_t>(i)] = a.shape(i);
    v.data.resize(static_cast<size_t>(a.size()));
    std::memcpy(v.data.data(), a.data(), v.data.size() * sizeof(float));
    return v;
}

py::object array_from_tensor(const TensorValue& tv) {
    std::vector<py::ssize_t> dims(tv.shape.dims.begin(), tv.shape.dims.end());
    if (tv.dtype == DType::F32) {
        py::array_t<float> a(dims);
        std::memcpy(a.mutable_data(), tv.f32.data(), tv.f32.size() * sizeof(float));
        return a;
    }
    if (tv.dtype == DType::U16) {
        py::array_t<uint16_t> a(dims);
        std::memcpy(a.mutable_data(), tv.u16.data(), tv.u16.size() * sizeof(uint16_t));
        return a;
    }
    py::array_t<uint8_t> a(dims);
    std::memcpy(a.mutable_data(), tv.u8.data(), tv.u8.size() * sizeof(uint8_t));
    return a;
}

py::dict outputs_to_dict(const std::map<std::string, TensorValue>& outputs) {
    py::dict d;
    for (const auto& [name, tv] : outputs) d[py::str(name)] = array_from_tensor(tv);
    return d;
}

LabelVolume labels_from_any(const py::array& arr) {
    const auto a = py::array_t<uint16_t, py::array::c_style | py::array::forcecast>::ensure(arr);
    if (!a) raise(ErrorCode::InvalidConfig, "labels must convert to uint16");
    LabelVolume lv;
    lv.shape = Shape{{1, 1, 1, 1, static_cast<int64_t>(a.size())}};
    lv.data.resize(static_cast<size_t>(a.size()));
    std::memcpy(lv.data.data(), a.data(), lv.data.size() * sizeof(uint16_t));
    return lv;
}

}  // namespace

PYBIND11_MODULE(_voxelquant, m) {
    m.doc() = "post-training INT8 quantization toolchain for volumetric segmentation models";

    py::register_exception<Error>(m, "VoxelQuantError");

    // ---- quantization math ------------------------------------------------
    m.def(
        "quant_params",
        [](double min_value, double max_value, int bits) {
            const QuantParams p = params_from_range(min_value, max_value, bits);
            py::dict d;
            d["scale"] = p.scale;
            d["zero_point"] = p.zero_point;
            d["bits"] = p.bits;
            return d;
        },
        py::arg("min_value"), py::arg("max_value"), py::arg("bits") = 8,
        "Scale / zero-point for a calibrated range.");
    m.def(
        "quantize",
        [](double x, double scale, int32_t zero_point, int bits) {
            QuantParams p;
            p.scale = scale;
            p.zero_point = zero_point;
            p.bits = bits;
            return quantize_scalar(x, p);
        },
        py::arg("x"), py::arg("scale"), py::arg("zero_point"), py::arg("bits") = 8);
    m.def(
        "dequantize",
        [](int32_t q, double scale, int32_t zero_point, int bits) {
            QuantParams p;
            p.scale = scale;
            p.zero_point = zero_point;
            p.bits = bits;
            return dequantize_scalar(q, p);
        },
        py::arg("q"), py::arg("scale"), py::arg("zero_point"), py::arg("bits") = 8);

    // ---- generators ---------------------------------------------------------
    m.def(
        "gen_dataset",
        [](const std::string& dir, int count, int classes, int64_t dim, double sigma,
           uint64_t seed) {
            DataGenOptions o;
            o.count = count;
            o.classes = classes;
            o.dim = dim;
            o.sigma = sigma;
            o.seed = seed;
            gen_synthetic_dataset(dir, o);
        },
        py::arg("dir"), py::arg("count") = 8, py::arg("classes") = 4, py::arg("dim") = 96,
        py::arg("sigma") = 0.05, py::arg("seed") = 1,
        "Write a synthetic labeled dataset into dir.");
    m.def(
        "gen_model",
        [](const std::string& out_dir, const std::string& arch, int classes, int64_t dim,
           const std::string& size, uint64_t seed) {
            Graph g;
            if (arch == "centroid") {
                g = gen_centroid_model(classes, dim);
            } else if (arch == "unet") {
                auto s = unet_size_from_name(size);
                if (!s) raise(ErrorCode::InvalidConfig, "unknown unet size '" + size + "'");
                g = gen_toy_unet(classes, dim, *s, seed);
            } else {
                raise(ErrorCode::InvalidConfig, "unknown arch '" + arch + "'");
            }
            const auto path = std::filesystem::path(out_dir) / "model.json";
            save_model(path, g);
            return path.string();
        },
        py::arg("out_dir"), py::arg("arch") = "unet", py::arg("classes") = 4, py::arg("dim") = 96,
        py::arg("size") = "M", py::arg("seed") = 1,
        "Generate a reference model; returns the model.json path.");

    // ---- pipeline -----------------------------------------------------------
    m.def(
        "run_pipeline",
        [](const std::string& model_dir, const std::string& data_dir, int bits,
           const std::string& method, double percentile, int threads, int max_calib) {
            PipelineOptions o;
            o.bits = bits;
            auto mm = calib_method_from_name(method);
            if (!mm) raise(ErrorCode::InvalidConfig, "unknown calibration method '" + method + "'");
            o.method = *mm;
            o.percentile = percentile;
            o.threads = threads;
            o.max_calib = max_calib;
            const PipelineResult r = run_pipeline(model_dir, data_dir, o);
            py::dict d;
            d["model_dir"] = r.model_dir;
            d["fp32_bytes"] = r.fp32_bytes;
            d["fake_bytes"] = r.fake_bytes;
            d["engine_bytes"] = r.engine_bytes;
            d["workspace_bytes"] = r.workspace_bytes;
            return d;
        },
        py::arg("model_dir"), py::arg("data_dir"), py::arg("bits") = 8,
        py::arg("method") = "minmax", py::arg("percentile") = 99.9, py::arg("threads") = 1,
        py::arg("max_calib") = 0,
        "Calibrate, insert QDQ pairs, and build the engine next to model.json.");

    // ---- inference ----------------------------------------------------------
    m.def(
        "run_model",
        [](const std::string& model_json,
           const py::array_t<float, py::array::c_style | py::array::forcecast>& input,
           int threads) {
            Graph g = load_model(model_json);
            validate_and_infer_shapes(g);
            ExecOptions opts;
            opts.threads = threads;
            return outputs_to_dict(execute_fp32(g, {volume_from_array(input)}, opts));
        },
        py::arg("model_json"), py::arg("input"), py::arg("threads") = 1,
        "FP32 (or fake-quant) inference; returns {output name: array}.");
    m.def(
        "run_engine",
        [](const std::string& engine_path,
           const py::array_t<float, py::array::c_style | py::array::forcecast>& input,
           int threads) {
            const EngineRuntime rt(load_engine(engine_path));
            EngineExecOptions opts;
            opts.threads = threads;
            return outputs_to_dict(execute_engine(rt, {volume_from_array(input)}, opts));
        },
        py::arg("engine_path"), py::arg("input"), py::arg("threads") = 1,
        "INT8 engine inference; returns {output name: array}.");

    // ---- volume files ---------------------------------------------------------
    m.def(
        "load_volume",
        [](const std::string& path) {
            const Volume v = load_volume(path);
            TensorValue tv;
            tv.dtype = DType::F32;
            tv.shape = v.shape;
            tv.f32 = v.data;
            return array_from_tensor(tv);
        },
        py::arg("path"), "Read an f32 volume payload (.bin with JSON sidecar).");
    m.def(
        "load_labels",
        [](const std::string& path) {
            const LabelVolume v = load_labels(path);
            TensorValue tv;
            tv.dtype = DType::U16;
            tv.shape = v.shape;
            tv.u16 = v.data;
            return array_from_tensor(tv);
        },
        py::arg("path"), "Read a u16 label payload (.bin with JSON sidecar).");

    // ---- evaluation / introspection ------------------------------------------
    m.def(
        "mean_dice",
        [](const py::array& pred, const py::array& ref, int classes) {
            const DiceResult d =
                dice_score(labels_from_any(pred), labels_from_any(ref), classes);
            return d.mean;
        },
        py::arg("pred"), py::arg("ref"), py::arg("classes"),
        "Mean dice over the classes present (background excluded).");
    m.def(
        "engine_summary",
        [](const std::string& path) { return plan_summary(load_engine(path)); },
        py::arg("path"));
    m.def(
        "model_info",
        [](const std::string& path) {
            Graph g = load_model(path);
            validate_and_infer_shapes(g);
            uint64_t params = 0;
            for (const auto& w : g.weights) params += static_cast<uint64_t>(w.element_count());
            py::dict d;
            d["name"] = g.name;
            d["nodes"] = g.nodes.size();
            d["weights"] = g.weights.size();
            d["parameters"] = params;
            return d;
        },
        py::arg("path"));
}
