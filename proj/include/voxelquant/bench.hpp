// SPDX-License-Identifier: Apache-2.0
//
// Everything around the core toolchain: synthetic phantom volumes with known
// labels, reference model generators, the calibrate->rewrite->build pipeline
// over a directory layout, wall-clock latency measurement, side-by-side
// model comparison, and the model-size scaling sweep.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "voxelquant/calibrate.hpp"
#include "voxelquant/dice.hpp"
#include "voxelquant/engine_exec.hpp"
#include "voxelquant/graph.hpp"
#include "voxelquant/tensor.hpp"

namespace vq {

// ============================================================================
// Synthetic data
// ============================================================================

struct DataGenOptions {
    int count = 8;
    int classes = 4;
    int64_t dim = 96;  // cubic volumes, dim^3 voxels
    double sigma = 0.05;
    uint64_t seed = 1;
};

struct SyntheticSample {
    Volume image;
    LabelVolume labels;
};

/// One phantom volume: a few concentric-shell spheres (classes 1..C-1 from
/// the inside out) plus one large class-1 box, over background 0. The image
/// is (label + 0.5) / classes plus Gaussian noise. Pure function of the
/// arguments. Shapes are kept at least 3 voxels from the border and mutually
/// disjoint; geometry scales with dim (reference proportions at dim = 96).
SyntheticSample gen_synthetic_volume(uint64_t seed, int classes, int64_t dim, double sigma);

/// Writes img_###.bin/.json, lbl_###.bin/.json and dataset.json into dir.
void gen_synthetic_dataset(const std::string& dir, const DataGenOptions& opts);

struct DatasetInfo {
    int64_t count = 0;
    int classes = 0;
    int64_t dim = 0;
    double sigma = 0.0;
    uint64_t seed = 0;
    std::vector<std::string> image_paths;  // absolute-ish: dir-joined
    std::vector<std::string> label_paths;
};

DatasetInfo load_dataset_info(const std::string& dir);

// ============================================================================
// Model generators
// ============================================================================

/// Two-conv classifier: a 3^3 box smoothing conv followed by a 1x1x1 conv
/// whose channel c scores mu_c * x - mu_c^2 / 2 (nearest-centroid rule for
/// the class intensities used by the data generator), then channel ArgMax.
Graph gen_centroid_model(int classes, int64_t dim);

enum class UnetSize { S, M, L };
const char* unet_size_name(UnetSize s);
std::optional<UnetSize> unet_size_from_name(const std::string& name);

/// Three-pool encoder/decoder with skip concats, a residual bottleneck Add,
/// and a softmax head. Channel widths (1x, 3x, 12x, 48x of a base width 2 /
/// 4 / 20 for S / M / L) grow steeply so parameters concentrate in the
/// low-resolution levels; S:M:L parameter counts scale roughly 1:4:100.
/// Weights are uniform +-sqrt(3 / fan_in), biases uniform +-0.05, from seed.
/// dim must be divisible by 8.
Graph gen_toy_unet(int classes, int64_t dim, UnetSize size, uint64_t seed);

// ============================================================================
// Pipeline over a model directory
// ============================================================================

struct PipelineOptions {
    int bits = 8;
    CalibMethod method = CalibMethod::MinMax;
    double percentile = 99.9;
    int threads = 1;
    int max_calib = 0;  // cap on calibration volumes; 0 = all
};

struct PipelineResult {
    std::string model_dir;
    uint64_t fp32_bytes = 0;    // model.json + model.bin
    uint64_t fake_bytes = 0;    // fake.model.json + fake.model.bin
    uint64_t engine_bytes = 0;  // engine.vqe
    uint64_t workspace_bytes = 0;
};

/// Reads model.json/model.bin from model_dir and the calibration volumes
/// from data_dir, then writes calib.json, fake.model.json/.bin, engine.vqe
/// and manifest.json back into model_dir. Every stage failure is rethrown
/// with the stage name prefixed to the message. Deterministic: running it
/// twice produces byte-identical artifacts.
PipelineResult run_pipeline(const std::string& model_dir, const std::string& data_dir,
                            const PipelineOptions& opts = {});

// ============================================================================
// Latency
// ============================================================================

struct LatencyStats {
    std::vector<double> samples_ms;
    double median_ms = 0.0;
    double mean_ms = 0.0;
    double min_ms = 0.0;
    double max_ms = 0.0;
};

LatencyStats summarize_latency(std::vector<double> samples_ms);
LatencyStats bench_fp32(const Graph& g, const std::vector<Volume>& inputs, int warmup, int runs,
                        int threads);
LatencyStats bench_engine(const EngineRuntime& rt, const std::vector<Volume>& inputs, int warmup,
                          int runs, int threads);

// ============================================================================
// Evaluation and comparison
// ============================================================================

/// Labels from a model output: u16 tensors pass through, f32 tensors take
/// the per-voxel channel argmax (lowest index wins ties).
LabelVolume labels_from_output(const TensorValue& out);

struct EvalResult {
    double mean_dice = 0.0;
    std::vector<double> per_volume;
};

EvalResult eval_dice_fp32(const Graph& g, const DatasetInfo& data, int threads);
EvalResult eval_dice_engine(const EngineRuntime& rt, const DatasetInfo& data, int threads);

struct CompareEntry {
    std::string dir;
    std::string model_name;
    uint64_t fp32_bytes = 0;
    uint64_t fake_bytes = 0;
    uint64_t engine_bytes = 0;
    double size_ratio = 0.0;  // fp32 / engine
    double fp32_median_ms = 0.0;
    double engine_median_ms = 0.0;
    double speedup = 0.0;
    bool has_dice = false;
    double fp32_dice = 0.0;
    double engine_dice = 0.0;
};

struct CompareReport {
    std::vector<CompareEntry> entries;
    std::string to_json() const;
    std::string to_text() const;
};

/// Each dir must hold the run_pipeline artifact layout. Latency uses the
/// first dataset volume; dice runs over all volumes with the dataset's class
/// count (skipped when with_dice is false).
CompareReport compare_models(const std::vector<std::string>& model_dirs,
                             const std::string& data_dir, int warmup, int runs, int threads,
                             bool with_dice);

// ============================================================================
// Scaling sweep
// ============================================================================

struct SweepRow {
    std::string size;
    uint64_t param_count = 0;
    uint64_t fp32_bytes = 0;
    uint64_t engine_bytes = 0;
    double ratio = 0.0;  // fp32 / engine
};

/// Generates S/M/L models (plus a small calibration set) under work_dir,
/// runs the pipeline on each, and reports the size compression ratios.
std::vector<SweepRow> scaling_sweep(const std::string& work_dir, int classes, int64_t dim,
                                    uint64_t seed, const PipelineOptions& opts);
std::string sweep_to_json(const std::vector<SweepRow>& rows);

}  // namespace vq
