// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include <json.hpp>

#include "voxelquant/bench.hpp"
#include "voxelquant/util.hpp"

namespace vq {

namespace {

// Axis-aligned box in voxel coordinates, inclusive bounds.
struct Aabb {
    int64_t lo[3];
    int64_t hi[3];

    bool intersects(const Aabb& o) const {
        for (int a = 0; a < 3; ++a)
            if (hi[a] < o.lo[a] || o.hi[a] < lo[a]) return false;
        return true;
    }
};

bool clear_of_all(const Aabb& box, const std::vector<Aabb>& placed) {
    for (const auto& p : placed)
        if (box.intersects(p)) return false;
    return true;
}

}  // namespace

SyntheticSample gen_synthetic_volume(uint64_t seed, int classes, int64_t dim, double sigma) {
    if (classes < 2 || classes > 32)
        raise(ErrorCode::InvalidConfig,
              "synthetic volumes need 2..32 classes, got " + std::to_string(classes));
    if (dim < 16)
        raise(ErrorCode::InvalidConfig, "synthetic volume dim must be >= 16, got " + std::to_string(dim));
    if (!(sigma >= 0.0) || !std::isfinite(sigma))
        raise(ErrorCode::InvalidConfig, "noise sigma must be finite and >= 0");

    Rng rng(seed);
    const Shape shape{{1, 1, dim, dim, dim}};
    SyntheticSample out;
    out.labels = LabelVolume::zeros(shape);
    out.image = Volume::zeros(shape);

    const int64_t margin = 3;
    // Reference proportions at dim = 96, scaled down for smaller volumes.
    const int64_t box_lo = std::max<int64_t>(6, 40 * dim / 96);
    const int64_t box_hi = std::max(box_lo, 48 * dim / 96);
    // Nested-shell spheres: a generous core radius and shell thickness keep
    // the curvature of every class boundary low. On a voxel lattice, sharply
    // curved boundaries misclassify under local averaging, so small cores
    // would put a hard ceiling on downstream segmentation scores.
    const int64_t core_rad = std::max<int64_t>(4, 13 * dim / 96);
    const int64_t shell_t = std::max<int64_t>(2, 5 * dim / 96);
    const int kMaxTries = 64;

    std::vector<Aabb> placed;
    auto* lbl = out.labels.data.data();
    auto at = [dim](int64_t z, int64_t y, int64_t x) { return (z * dim + y) * dim + x; };

    // Two concentric-shell spheres, placed first so the rare high classes
    // materialize whenever the geometry allows. Shells run class C-1 at the
    // core down to class 1 at the rim, so every contact surface
    // (shell-to-shell as well as rim-to-background) separates classes whose
    // intensity bands are adjacent. Local averaging then stays inside the
    // band everywhere except at lattice stairsteps, which keeps
    // nearest-centroid segmentation nearly exact. Structures that do not fit
    // are simply skipped.
    const int bands = classes - 1;
    const int64_t radius = core_rad + shell_t * (bands - 1);
    for (int s = 0; s < 2; ++s) {
        const int64_t span_lo = margin + radius;
        const int64_t span_hi = dim - 1 - margin - radius;
        if (span_hi < span_lo) continue;
        for (int attempt = 0; attempt < kMaxTries; ++attempt) {
            int64_t c[3];
            for (int a = 0; a < 3; ++a) c[a] = rng.uniform_int(span_lo, span_hi);
            Aabb b;
            for (int a = 0; a < 3; ++a) {
                b.lo[a] = c[a] - radius;
                b.hi[a] = c[a] + radius;
            }
            if (!clear_of_all(b, placed)) continue;
            placed.push_back(b);
            for (int64_t z = b.lo[0]; z <= b.hi[0]; ++z)
                for (int64_t y = b.lo[1]; y <= b.hi[1]; ++y)
                    for (int64_t x = b.lo[2]; x <= b.hi[2]; ++x) {
                        const double dz = static_cast<double>(z - c[0]);
                        const double dy = static_cast<double>(y - c[1]);
                        const double dx = static_cast<double>(x - c[2]);
                        const double d = std::sqrt(dz * dz + dy * dy + dx * dx);
                        if (d > static_cast<double>(radius)) continue;
                        const auto depth = static_cast<int64_t>(static_cast<double>(radius) - d);
                        const int band = std::min<int64_t>(bands - 1, depth / shell_t);
                        lbl[at(z, y, x)] = static_cast<uint16_t>(1 + band);
                    }
            break;
        }
    }

    // One large class-1 box in the remaining space. Its flat faces survive
    // local smoothing while its edges and corners do not, which gives
    // downstream segmentation metrics a small, stable imperfection to
    // measure.
    {
        const int64_t side = rng.uniform_int(box_lo, box_hi);
        for (int attempt = 0; attempt < kMaxTries; ++attempt) {
            Aabb b;
            bool fits = true;
            for (int a = 0; a < 3; ++a) {
                const int64_t max_lo = dim - margin - side;
                if (max_lo < margin) {
                    fits = false;
                    break;
                }
                b.lo[a] = rng.uniform_int(margin, max_lo);
                b.hi[a] = b.lo[a] + side - 1;
            }
            if (!fits) break;
            if (!clear_of_all(b, placed)) continue;
            placed.push_back(b);
            for (int64_t z = b.lo[0]; z <= b.hi[0]; ++z)
                for (int64_t y = b.lo[1]; y <= b.hi[1]; ++y)
                    for (int64_t x = b.lo[2]; x <= b.hi[2]; ++x) lbl[at(z, y, x)] = 1;
            break;
        }
    }

    // Intensity: class centroid plus Gaussian noise, one draw per voxel in
    // linear order so the field is a pure function of the seed.
    const double delta = 1.0 / classes;
    const size_t n = out.image.data.size();
    for (size_t i = 0; i < n; ++i)
        out.image.data[i] =
            static_cast<float>((out.labels.data[i] + 0.5) * delta + sigma * rng.normal());
    return out;
}

void gen_synthetic_dataset(const std::string& dir, const DataGenOptions& opts) {
    if (opts.count < 1)
        raise(ErrorCode::InvalidConfig, "dataset count must be >= 1, got " + std::to_string(opts.count));
    namespace fs = std::filesystem;
    const fs::path root(dir);

    nlohmann::ordered_json meta;
    meta["classes"] = opts.classes;
    meta["count"] = opts.count;
    meta["dim"] = opts.dim;
    meta["seed"] = opts.seed;
    meta["sigma"] = opts.sigma;
    auto vols = nlohmann::ordered_json::array();

    for (int i = 0; i < opts.count; ++i) {
        const uint64_t vol_seed = opts.seed + 0x9e3779b97f4a7c15ULL * (static_cast<uint64_t>(i) + 1);
        SyntheticSample s = gen_synthetic_volume(vol_seed, opts.classes, opts.dim, opts.sigma);
        char img[32], lab[32];
        std::snprintf(img, sizeof img, "img_%03d.bin", i);
        std::snprintf(lab, sizeof lab, "lbl_%03d.bin", i);
        save_volume(root / img, s.image);
        save_labels(root / lab, s.labels);
        nlohmann::ordered_json v;
        v["image"] = img;
        v["labels"] = lab;
        vols.push_back(v);
    }
    meta["volumes"] = vols;
    write_text_file(root / "dataset.json", meta.dump(2) + "\n");
}

DatasetInfo load_dataset_info(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path root(dir);
    const fs::path meta_path = root / "dataset.json";
    if (!fs::exists(meta_path))
        raise(ErrorCode::MissingArtifact, "no dataset.json in " + dir);

    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(meta_path));
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorCode::SyntaxError, std::string("dataset.json: ") + e.what());
    }
    if (!j.is_object() || !j.contains("volumes") || !j["volumes"].is_array())
        raise(ErrorCode::SyntaxError, "dataset.json: expected object with a \"volumes\" array");

    DatasetInfo info;
    info.classes = j.value("classes", 0);
    info.dim = j.value("dim", int64_t{0});
    info.sigma = j.value("sigma", 0.0);
    info.seed = j.value("seed", uint64_t{0});
    for (const auto& v : j["volumes"]) {
        if (!v.is_object() || !v.contains("image"))
            raise(ErrorCode::SyntaxError, "dataset.json: volume entries need an \"image\" field");
        info.image_paths.push_back((root / v["image"].get<std::string>()).string());
        if (v.contains("labels"))
            info.label_paths.push_back((root / v["labels"].get<std::string>()).string());
    }
    info.count = static_cast<int64_t>(info.image_paths.size());
    if (info.count == 0) raise(ErrorCode::EmptyDataset, "dataset.json lists no volumes");
    if (!info.label_paths.empty() && info.label_paths.size() != info.image_paths.size())
        raise(ErrorCode::SyntaxError, "dataset.json: labels must be present for all volumes or none");
    return info;
}

}  // namespace vq
