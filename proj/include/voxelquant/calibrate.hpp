// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "voxelquant/graph.hpp"
#include "voxelquant/qdq.hpp"
#include "voxelquant/quant.hpp"
#include "voxelquant/tensor.hpp"

namespace vq {

enum class CalibMethod {
    MinMax,      // exact running min/max, one pass
    Percentile,  // clip to symmetric tail quantiles, two passes
};

const char* calib_method_name(CalibMethod m);
std::optional<CalibMethod> calib_method_from_name(const std::string& name);

struct CalibOptions {
    int bits = 8;
    CalibMethod method = CalibMethod::MinMax;
    /// Upper tail percentile in (50, 100]; the range becomes
    /// [quantile(100 - p), quantile(p)]. Only used by Percentile.
    double percentile = 99.9;
    int threads = 1;
};

/// Runs the model over the calibration volumes and returns a table covering
/// every tensor the policy selects. Activation ranges come from the recorded
/// tensor streams (optionally percentile-clipped on a second, histogram
/// pass); weight ranges always come from the exact min/max of the stored
/// values. Expects a validated single-input graph.
CalibrationTable calibrate_graph(const Graph& g, const std::vector<Volume>& dataset,
                                 const QdqPolicy& policy, const CalibOptions& opts = {});

}  // namespace vq
