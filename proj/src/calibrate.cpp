// SPDX-License-Identifier: Apache-2.0
#include "voxelquant/calibrate.hpp"

#include <map>
#include <set>

#include "voxelquant/executor.hpp"

namespace vq {

const char* calib_method_name(CalibMethod m) {
    switch (m) {
        case CalibMethod::MinMax: return "minmax";
        case CalibMethod::Percentile: return "percentile";
    }
    return "?";
}

std::optional<CalibMethod> calib_method_from_name(const std::string& name) {
    if (name == "minmax") return CalibMethod::MinMax;
    if (name == "percentile") return CalibMethod::Percentile;
    return std::nullopt;
}

CalibrationTable calibrate_graph(const Graph& g, const std::vector<Volume>& dataset,
                                 const QdqPolicy& policy, const CalibOptions& opts) {
    if (!g.validated())
        raise(ErrorCode::InvalidConfig, "graph must be validated before calibration");
    if (g.inputs.size() != 1)
        raise(ErrorCode::InvalidConfig, "calibration expects a single-input model");
    if (dataset.empty()) raise(ErrorCode::EmptyDataset, "no calibration volumes");
    if (opts.method == CalibMethod::Percentile &&
        !(opts.percentile > 50.0 && opts.percentile <= 100.0))
        raise(ErrorCode::InvalidConfig, "percentile must be in (50, 100]");

    const QdqSelection sel = select_quant_tensors(g, policy);
    std::map<std::string, RangeObserver> obs;
    std::set<std::string> watched;
    for (const auto& name : sel.activations) {
        obs.emplace(name, RangeObserver{});
        watched.insert(name);
    }

    ExecOptions exec;
    exec.threads = opts.threads;
    exec.on_tensor = [&](const std::string& name, const TensorValue& t) {
        if (t.dtype != DType::F32 || !watched.count(name)) return;
        observe(obs[name], t.f32.data(), t.f32.size(), name);
    };
    for (const Volume& v : dataset) execute_fp32(g, {v}, exec);

    std::map<std::string, uint64_t> first_pass_count;
    for (auto& [name, o] : obs) first_pass_count[name] = o.count;

    if (opts.method == CalibMethod::Percentile) {
        // second pass: histogram over the exact range seen in the first
        for (auto& [name, o] : obs) {
            if (o.empty())
                raise(ErrorCode::EmptyObserver, "no values observed for tensor '" + name + "'");
            if (o.max_seen - o.min_seen >= 1e-12) o.arm_histogram(o.min_seen, o.max_seen);
        }
        for (const Volume& v : dataset) execute_fp32(g, {v}, exec);
    }

    CalibrationTable table;
    table.bits = opts.bits;
    for (const auto& name : sel.activations) {
        RangeObserver& o = obs[name];
        if (o.empty())
            raise(ErrorCode::EmptyObserver, "no values observed for tensor '" + name + "'");
        CalibrationEntry e;
        if (opts.method == CalibMethod::Percentile && o.histogram_armed) {
            e.min_value = o.quantile(100.0 - opts.percentile);
            e.max_value = o.quantile(opts.percentile);
        } else {
            e.min_value = o.min_seen;
            e.max_value = o.max_seen;
        }
        e.count = first_pass_count[name];
        e.params = params_from_range(e.min_value, e.max_value, opts.bits);
        table.entries.emplace(name, e);
    }
    for (const auto& name : sel.weights) {
        const WeightEntry* w = g.find_weight(name);
        if (!w) raise(ErrorCode::DanglingInput, "weight '" + name + "' not in the manifest");
        RangeObserver o;
        observe(o, g.weight_data_f32(*w), static_cast<size_t>(w->element_count()), name);
        CalibrationEntry e;
        e.min_value = o.min_seen;
        e.max_value = o.max_seen;
        e.count = o.count;
        e.params = params_from_range(e.min_value, e.max_value, opts.bits);
        table.entries.emplace(name, e);
    }
    return table;
}

}  // namespace vq
