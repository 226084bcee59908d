// SPDX-License-Identifier: Apache-2.0
//
// Tests for the benchmark harness: synthetic data generation, generated
// models, the end-to-end pipeline, latency summaries, and model comparison.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "voxelquant/bench.hpp"
#include "voxelquant/engine.hpp"
#include "voxelquant/engine_exec.hpp"
#include "voxelquant/executor.hpp"
#include "voxelquant/graph.hpp"
#include "voxelquant/util.hpp"
#include "support/test_util.hpp"

namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    fs::path d = fs::temp_directory_path() / ("vq_test_bench_" + tag);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

uint64_t param_count(const vq::Graph& g) {
    uint64_t n = 0;
    for (const auto& w : g.weights) n += static_cast<uint64_t>(w.element_count());
    return n;
}

// Nearest-centroid class for an intensity produced by the band model
// (label + 0.5) / classes: bands are uniform, so the decision boundaries sit
// at multiples of 1 / classes.
int nearest_band(float x, int classes) {
    int c = static_cast<int>(std::floor(static_cast<double>(x) * classes));
    return std::min(std::max(c, 0), classes - 1);
}

vq::TensorValue sole(std::map<std::string, vq::TensorValue> outs) {
    REQUIRE(outs.size() == 1);
    return std::move(outs.begin()->second);
}

}  // namespace

TEST_CASE("synthetic volumes are a pure function of the seed") {
    const vq::SyntheticSample a = vq::gen_synthetic_volume(7, 4, 32, 0.05);
    const vq::SyntheticSample b = vq::gen_synthetic_volume(7, 4, 32, 0.05);
    CHECK(a.image.shape.dims == vq::Shape{{1, 1, 32, 32, 32}}.dims);
    CHECK(a.labels.shape.dims == a.image.shape.dims);
    CHECK(a.image.data == b.image.data);
    CHECK(a.labels.data == b.labels.data);

    const vq::SyntheticSample c = vq::gen_synthetic_volume(8, 4, 32, 0.05);
    CHECK(a.image.data != c.image.data);

    SUBCASE("argument validation") {
        CHECK_RAISES(InvalidConfig, vq::gen_synthetic_volume(1, 1, 32, 0.05));
        CHECK_RAISES(InvalidConfig, vq::gen_synthetic_volume(1, 33, 32, 0.05));
        CHECK_RAISES(InvalidConfig, vq::gen_synthetic_volume(1, 4, 8, 0.05));
        CHECK_RAISES(InvalidConfig, vq::gen_synthetic_volume(1, 4, 32, -0.1));
        CHECK_RAISES(InvalidConfig,
                     vq::gen_synthetic_volume(1, 4, 32, std::nan("")));
    }
}

TEST_CASE("synthetic labels use every class and stay clear of the border") {
    const int classes = 4;
    const int64_t dim = 32;
    const vq::SyntheticSample s = vq::gen_synthetic_volume(9, classes, dim, 0.0);

    std::vector<int64_t> counts(static_cast<size_t>(classes), 0);
    for (uint16_t v : s.labels.data) {
        REQUIRE(v < classes);
        counts[v]++;
    }
    for (int c = 0; c < classes; ++c) CHECK(counts[static_cast<size_t>(c)] > 0);

    // Shapes are placed at least three voxels from every face.
    auto at = [dim](int64_t z, int64_t y, int64_t x) { return (z * dim + y) * dim + x; };
    bool border_clean = true;
    for (int64_t z = 0; z < dim; ++z)
        for (int64_t y = 0; y < dim; ++y)
            for (int64_t x = 0; x < dim; ++x) {
                const bool near = z < 3 || y < 3 || x < 3 || z >= dim - 3 || y >= dim - 3 ||
                                  x >= dim - 3;
                if (near && s.labels.data[static_cast<size_t>(at(z, y, x))] != 0)
                    border_clean = false;
            }
    CHECK(border_clean);
}

TEST_CASE("synthetic intensities sit on class centroids") {
    const int classes = 4;

    SUBCASE("zero noise gives the exact band value") {
        const vq::SyntheticSample s = vq::gen_synthetic_volume(3, classes, 32, 0.0);
        bool exact = true;
        for (size_t i = 0; i < s.image.data.size(); ++i) {
            const float want = static_cast<float>((s.labels.data[i] + 0.5) / classes);
            if (s.image.data[i] != want) exact = false;
        }
        CHECK(exact);
    }

    SUBCASE("noisy intensities cross band boundaries at the Gaussian tail rate") {
        const double sigma = 0.05;
        const vq::SyntheticSample s = vq::gen_synthetic_volume(11, classes, 64, sigma);

        // Per-class intensity means converge on the band centroids.
        std::vector<double> sum(static_cast<size_t>(classes), 0.0);
        std::vector<int64_t> cnt(static_cast<size_t>(classes), 0);
        int64_t interior_n = 0, interior_miss = 0;
        int64_t edge_n = 0, edge_miss = 0;
        for (size_t i = 0; i < s.image.data.size(); ++i) {
            const int lab = s.labels.data[i];
            sum[static_cast<size_t>(lab)] += s.image.data[i];
            cnt[static_cast<size_t>(lab)]++;
            const bool miss = nearest_band(s.image.data[i], classes) != lab;
            if (lab == 0 || lab == classes - 1) {
                edge_n++;
                edge_miss += miss ? 1 : 0;
            } else {
                interior_n++;
                interior_miss += miss ? 1 : 0;
            }
        }
        for (int c = 0; c < classes; ++c) {
            REQUIRE(cnt[static_cast<size_t>(c)] > 500);
            const double mean = sum[static_cast<size_t>(c)] / cnt[static_cast<size_t>(c)];
            CHECK(mean == doctest::Approx((c + 0.5) / classes).epsilon(0.02));
        }

        // A voxel leaks into a neighboring band when its noise exceeds half a
        // band width. With band width 1/4 and sigma 0.05 that tail is
        // 2 * Phi(-2.5) for two-sided interior classes and Phi(-2.5) for the
        // one-sided edge classes.
        const double two_sided = std::erfc(2.5 / std::sqrt(2.0));
        CHECK(two_sided == doctest::Approx(0.012419330651552318).epsilon(1e-12));
        const double interior_rate = static_cast<double>(interior_miss) / interior_n;
        const double edge_rate = static_cast<double>(edge_miss) / edge_n;
        CHECK(interior_rate > two_sided - 0.004);
        CHECK(interior_rate < two_sided + 0.004);
        CHECK(edge_rate > 0.5 * two_sided - 0.003);
        CHECK(edge_rate < 0.5 * two_sided + 0.003);
    }
}

TEST_CASE("dataset generation round trips through dataset.json") {
    const fs::path dir = temp_dir("dataset");
    vq::DataGenOptions opts;
    opts.count = 3;
    opts.classes = 3;
    opts.dim = 16;
    opts.sigma = 0.02;
    opts.seed = 42;
    vq::gen_synthetic_dataset(dir.string(), opts);

    const vq::DatasetInfo info = vq::load_dataset_info(dir.string());
    CHECK(info.count == 3);
    CHECK(info.classes == 3);
    CHECK(info.dim == 16);
    CHECK(info.sigma == doctest::Approx(0.02));
    CHECK(info.seed == 42);
    REQUIRE(info.image_paths.size() == 3);
    REQUIRE(info.label_paths.size() == 3);
    for (const auto& p : info.image_paths) CHECK(fs::exists(p));
    for (const auto& p : info.label_paths) CHECK(fs::exists(p));

    const vq::Volume img = vq::load_volume(info.image_paths[0]);
    const vq::LabelVolume lbl = vq::load_labels(info.label_paths[0]);
    CHECK(img.shape.dims == vq::Shape{{1, 1, 16, 16, 16}}.dims);
    CHECK(lbl.shape.dims == img.shape.dims);

    SUBCASE("regeneration is byte-identical") {
        const fs::path dir2 = temp_dir("dataset2");
        vq::gen_synthetic_dataset(dir2.string(), opts);
        CHECK(vq::read_file(dir / "img_000.bin") == vq::read_file(dir2 / "img_000.bin"));
        CHECK(vq::read_file(dir / "lbl_002.bin") == vq::read_file(dir2 / "lbl_002.bin"));
        CHECK(vq::read_file(dir / "dataset.json") == vq::read_file(dir2 / "dataset.json"));
        fs::remove_all(dir2);
    }

    SUBCASE("missing directory raises MissingArtifact") {
        CHECK_RAISES(MissingArtifact, vq::load_dataset_info((dir / "absent").string()));
    }
    fs::remove_all(dir);
}

TEST_CASE("generated models validate and have the expected parameter counts") {
    SUBCASE("centroid model") {
        vq::Graph g = vq::gen_centroid_model(4, 16);
        vq::validate_and_infer_shapes(g);
        CHECK(g.name == "centroid-net");
        CHECK(param_count(g) == 27 + 2 * 4);
        REQUIRE(g.outputs.size() == 1);
        CHECK(g.outputs[0].dtype == vq::DType::U16);
        CHECK_RAISES(InvalidConfig, vq::gen_centroid_model(4, 2));
        CHECK_RAISES(InvalidConfig, vq::gen_centroid_model(1, 16));
    }

    SUBCASE("toy unets") {
        vq::Graph s = vq::gen_toy_unet(4, 16, vq::UnetSize::S, 1);
        vq::validate_and_infer_shapes(s);
        CHECK(s.name == "toy-unet-S");
        CHECK(param_count(s) == 159010);

        vq::Graph m = vq::gen_toy_unet(4, 16, vq::UnetSize::M, 1);
        vq::validate_and_infer_shapes(m);
        CHECK(param_count(m) == 635392);

        vq::Graph l = vq::gen_toy_unet(4, 16, vq::UnetSize::L, 1);
        vq::validate_and_infer_shapes(l);
        CHECK(param_count(l) == 15871984);

        CHECK_RAISES(InvalidConfig, vq::gen_toy_unet(4, 12, vq::UnetSize::S, 1));
        CHECK_RAISES(InvalidConfig, vq::gen_toy_unet(4, 0, vq::UnetSize::S, 1));
    }

    SUBCASE("unet size names") {
        CHECK(std::string(vq::unet_size_name(vq::UnetSize::M)) == "M");
        CHECK(vq::unet_size_from_name("l") == vq::UnetSize::L);
        CHECK(vq::unet_size_from_name("s") == vq::UnetSize::S);
        CHECK_FALSE(vq::unet_size_from_name("XL").has_value());
    }
}

TEST_CASE("centroid model recovers labels in smooth regions of noiseless data") {
    const int classes = 4;
    const int64_t dim = 16;
    const vq::SyntheticSample s = vq::gen_synthetic_volume(3, classes, dim, 0.0);
    vq::Graph g = vq::gen_centroid_model(classes, dim);
    vq::validate_and_infer_shapes(g);

    const vq::TensorValue out = sole(vq::execute_fp32(g, {s.image}));
    const vq::LabelVolume pred = vq::labels_from_output(out);
    REQUIRE(pred.data.size() == s.labels.data.size());

    // The 3x3x3 smoothing stage mixes intensities across class boundaries, so
    // only voxels whose full neighborhood shares one label are exact.
    auto at = [dim](int64_t z, int64_t y, int64_t x) { return (z * dim + y) * dim + x; };
    int64_t uniform = 0, uniform_wrong = 0;
    for (int64_t z = 1; z < dim - 1; ++z)
        for (int64_t y = 1; y < dim - 1; ++y)
            for (int64_t x = 1; x < dim - 1; ++x) {
                const uint16_t lab = s.labels.data[static_cast<size_t>(at(z, y, x))];
                bool same = true;
                for (int64_t dz = -1; dz <= 1 && same; ++dz)
                    for (int64_t dy = -1; dy <= 1 && same; ++dy)
                        for (int64_t dx = -1; dx <= 1; ++dx)
                            if (s.labels.data[static_cast<size_t>(at(z + dz, y + dy, x + dx))] !=
                                lab) {
                                same = false;
                                break;
                            }
                if (!same) continue;
                uniform++;
                if (pred.data[static_cast<size_t>(at(z, y, x))] != lab) uniform_wrong++;
            }
    REQUIRE(uniform > static_cast<int64_t>(s.labels.data.size()) / 2);
    CHECK(uniform_wrong == 0);

    const vq::DiceResult d = vq::dice_score(pred, s.labels, classes);
    CHECK(d.mean > 0.5);
}

TEST_CASE("labels_from_output handles both output encodings") {
    SUBCASE("u16 passthrough") {
        vq::TensorValue t;
        t.dtype = vq::DType::U16;
        t.shape = vq::Shape{{1, 1, 1, 1, 3}};
        t.u16 = {4, 0, 2};
        const vq::LabelVolume lv = vq::labels_from_output(t);
        CHECK(lv.shape.dims == t.shape.dims);
        CHECK(lv.data == std::vector<uint16_t>{4, 0, 2});
    }

    SUBCASE("f32 channel argmax keeps the lowest tied class") {
        vq::TensorValue t;
        t.dtype = vq::DType::F32;
        t.shape = vq::Shape{{1, 3, 1, 1, 2}};
        t.f32 = {1.0f, 7.0f, /*ch1*/ 1.0f, 3.0f, /*ch2*/ 0.0f, 9.0f};
        const vq::LabelVolume lv = vq::labels_from_output(t);
        CHECK(lv.shape.dims == vq::Shape{{1, 1, 1, 1, 2}}.dims);
        CHECK(lv.data == std::vector<uint16_t>{0, 2});
    }

    SUBCASE("code tensors are rejected") {
        vq::TensorValue t;
        t.dtype = vq::DType::U8;
        t.shape = vq::Shape{{1, 1, 1, 1, 1}};
        t.u8 = {5};
        CHECK_RAISES(InvalidConfig, vq::labels_from_output(t));
    }
}

TEST_CASE("summarize_latency reports order statistics") {
    const vq::LatencyStats odd = vq::summarize_latency({5.0, 1.0, 3.0});
    CHECK(odd.samples_ms.size() == 3);
    CHECK(odd.median_ms == 3.0);
    CHECK(odd.mean_ms == 3.0);
    CHECK(odd.min_ms == 1.0);
    CHECK(odd.max_ms == 5.0);

    const vq::LatencyStats even = vq::summarize_latency({4.0, 1.0, 3.0, 2.0});
    CHECK(even.median_ms == 2.5);
    CHECK(even.mean_ms == 2.5);
    CHECK(even.min_ms == 1.0);
    CHECK(even.max_ms == 4.0);

    const vq::LatencyStats one = vq::summarize_latency({7.0});
    CHECK(one.median_ms == 7.0);
    CHECK(one.min_ms == 7.0);
    CHECK(one.max_ms == 7.0);

    CHECK_RAISES(InvalidConfig, vq::summarize_latency({}));
}

TEST_CASE("run_pipeline writes a deterministic artifact tree") {
    const fs::path work = temp_dir("pipeline");
    const fs::path data_dir = work / "data";
    const fs::path model_dir = work / "centroid";

    vq::DataGenOptions dopts;
    dopts.count = 2;
    dopts.classes = 4;
    dopts.dim = 16;
    dopts.sigma = 0.02;
    dopts.seed = 9;
    vq::gen_synthetic_dataset(data_dir.string(), dopts);

    vq::Graph g = vq::gen_centroid_model(4, 16);
    vq::save_model(model_dir / "model.json", g);

    vq::PipelineOptions popts;
    const vq::PipelineResult res = vq::run_pipeline(model_dir.string(), data_dir.string(), popts);
    CHECK(res.model_dir == model_dir.string());
    CHECK(res.fp32_bytes > 0);
    CHECK(res.fake_bytes > 0);
    CHECK(res.engine_bytes > 0);
    for (const char* name :
         {"calib.json", "fake.model.json", "fake.model.bin", "engine.vqe", "manifest.json"})
        CHECK(fs::exists(model_dir / name));

    const vq::EnginePlan plan = vq::load_engine((model_dir / "engine.vqe").string());
    CHECK(plan.workspace_bytes == res.workspace_bytes);

    SUBCASE("second run is byte-identical") {
        const auto calib1 = vq::read_file(model_dir / "calib.json");
        const auto fake1 = vq::read_file(model_dir / "fake.model.bin");
        const auto engine1 = vq::read_file(model_dir / "engine.vqe");
        const auto manifest1 = vq::read_file(model_dir / "manifest.json");
        (void)vq::run_pipeline(model_dir.string(), data_dir.string(), popts);
        CHECK(vq::read_file(model_dir / "calib.json") == calib1);
        CHECK(vq::read_file(model_dir / "fake.model.bin") == fake1);
        CHECK(vq::read_file(model_dir / "engine.vqe") == engine1);
        CHECK(vq::read_file(model_dir / "manifest.json") == manifest1);
    }

    SUBCASE("the engine artifact runs") {
        const vq::EngineRuntime rt(plan);
        const vq::Volume img = vq::load_volume(
            vq::load_dataset_info(data_dir.string()).image_paths[0]);
        const vq::TensorValue out = sole(vq::execute_engine(rt, {img}));
        CHECK(out.shape.dims == vq::Shape{{1, 1, 16, 16, 16}}.dims);
    }

    SUBCASE("errors carry their pipeline stage") {
        const fs::path empty = work / "empty";
        fs::create_directories(empty);
        CHECK_RAISES(MissingArtifact, vq::run_pipeline(empty.string(), data_dir.string(), popts));
        try {
            (void)vq::run_pipeline(model_dir.string(), empty.string(), popts);
            CHECK(false);
        } catch (const vq::Error& e) {
            CHECK(e.code() == vq::ErrorCode::MissingArtifact);
            CHECK(std::string(e.what()).find("load-data") != std::string::npos);
        }
    }
    fs::remove_all(work);
}

TEST_CASE("pipeline, latency, and compare work end to end on a small unet") {
    const fs::path work = temp_dir("compare");
    const fs::path data_dir = work / "data";

    vq::DataGenOptions dopts;
    dopts.count = 2;
    dopts.classes = 4;
    dopts.dim = 16;
    dopts.sigma = 0.01;
    dopts.seed = 21;
    vq::gen_synthetic_dataset(data_dir.string(), dopts);

    const fs::path centroid_dir = work / "centroid";
    vq::save_model(centroid_dir / "model.json", vq::gen_centroid_model(4, 16));
    const fs::path unet_dir = work / "unet";
    vq::save_model(unet_dir / "model.json", vq::gen_toy_unet(4, 16, vq::UnetSize::S, 5));

    vq::PipelineOptions popts;
    const vq::PipelineResult rc =
        vq::run_pipeline(centroid_dir.string(), data_dir.string(), popts);
    const vq::PipelineResult ru = vq::run_pipeline(unet_dir.string(), data_dir.string(), popts);

    SUBCASE("bench helpers return the requested number of samples") {
        vq::Graph g = vq::load_model(centroid_dir / "model.json");
        vq::validate_and_infer_shapes(g);
        const vq::Volume img = vq::load_volume(
            vq::load_dataset_info(data_dir.string()).image_paths[0]);
        const vq::LatencyStats st = vq::bench_fp32(g, {img}, 1, 3, 1);
        CHECK(st.samples_ms.size() == 3);
        CHECK(st.min_ms > 0.0);
        CHECK(st.median_ms >= st.min_ms);
        CHECK(st.median_ms <= st.max_ms);

        const vq::EngineRuntime rt(vq::load_engine((centroid_dir / "engine.vqe").string()));
        const vq::LatencyStats se = vq::bench_engine(rt, {img}, 0, 2, 1);
        CHECK(se.samples_ms.size() == 2);
        CHECK(se.min_ms > 0.0);
        CHECK_RAISES(InvalidConfig, vq::bench_engine(rt, {img}, -1, 2, 1));
        CHECK_RAISES(InvalidConfig, vq::bench_engine(rt, {img}, 0, 0, 1));
    }

    SUBCASE("fp32 and engine dice agree closely") {
        vq::Graph g = vq::load_model(unet_dir / "model.json");
        vq::validate_and_infer_shapes(g);
        const vq::EngineRuntime rt(vq::load_engine((unet_dir / "engine.vqe").string()));
        const vq::DatasetInfo data = vq::load_dataset_info(data_dir.string());
        const vq::EvalResult ef = vq::eval_dice_fp32(g, data, 1);
        const vq::EvalResult ee = vq::eval_dice_engine(rt, data, 1);
        CHECK(ef.per_volume.size() == 2);
        CHECK(ee.per_volume.size() == 2);
        CHECK(ef.mean_dice >= 0.0);
        CHECK(ef.mean_dice <= 1.0);
        // An untrained unet segments poorly; quantization must still track it.
        CHECK(std::abs(ef.mean_dice - ee.mean_dice) < 0.1);
    }

    SUBCASE("compare_models summarizes both directories") {
        const vq::CompareReport report = vq::compare_models(
            {centroid_dir.string(), unet_dir.string()}, data_dir.string(), 0, 2, 1, true);
        REQUIRE(report.entries.size() == 2);
        const vq::CompareEntry& c = report.entries[0];
        CHECK(c.model_name == "centroid-net");
        CHECK(c.fp32_bytes == rc.fp32_bytes);
        CHECK(c.engine_bytes == rc.engine_bytes);
        CHECK(c.size_ratio ==
              doctest::Approx(static_cast<double>(rc.fp32_bytes) / rc.engine_bytes));
        CHECK(c.fp32_median_ms > 0.0);
        CHECK(c.engine_median_ms > 0.0);
        CHECK(c.speedup == doctest::Approx(c.fp32_median_ms / c.engine_median_ms));
        CHECK(c.has_dice);
        CHECK(c.fp32_dice >= 0.0);
        CHECK(c.fp32_dice <= 1.0);

        const vq::CompareEntry& u = report.entries[1];
        CHECK(u.model_name == "toy-unet-S");
        CHECK(u.fp32_bytes == ru.fp32_bytes);
        // The unet is conv-heavy, so folded 8-bit weights shrink it well.
        CHECK(u.size_ratio > 2.0);

        const std::string js = report.to_json();
        CHECK(js.find("toy-unet-S") != std::string::npos);
        CHECK(js.find("size_ratio") != std::string::npos);
        const std::string txt = report.to_text();
        CHECK(txt.find("centroid-net") != std::string::npos);
        CHECK(txt.find("speedup") != std::string::npos);

        CHECK_RAISES(InvalidConfig,
                     vq::compare_models({}, data_dir.string(), 0, 1, 1, false));
        CHECK_RAISES(IoError,
                     vq::compare_models({(work / "absent").string()}, data_dir.string(), 0, 1,
                                        1, false));
    }
    fs::remove_all(work);
}
