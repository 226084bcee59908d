// SPDX-License-Identifier: Apache-2.0
#include "voxelquant/quant.hpp"

#include <algorithm>
#include <json.hpp>

namespace vq {

void RangeObserver::arm_histogram(double lo, double hi) {
    if (!(hi > lo))
        raise(ErrorCode::InvalidConfig, "histogram range must be non-empty");
    histogram_armed = true;
    hist_lo = lo;
    hist_hi = hi;
    hist_bins.assign(kHistogramBins, 0);
}

double RangeObserver::quantile(double p) const {
    if (!histogram_armed)
        raise(ErrorCode::InvalidConfig, "quantile requested on an observer without a histogram");
    if (empty()) raise(ErrorCode::EmptyObserver, "quantile of an empty observer");
    uint64_t total = 0;
    for (uint64_t b : hist_bins) total += b;
    if (total == 0) raise(ErrorCode::EmptyObserver, "histogram holds no samples");
    double target = (p / 100.0) * static_cast<double>(total);
    double width = (hist_hi - hist_lo) / kHistogramBins;
    double cum = 0.0;
    for (int i = 0; i < kHistogramBins; ++i) {
        double next = cum + static_cast<double>(hist_bins[i]);
        if (next >= target && hist_bins[i] > 0) {
            double frac = (target - cum) / static_cast<double>(hist_bins[i]);
            frac = std::clamp(frac, 0.0, 1.0);
            return hist_lo + width * (i + frac);
        }
        cum = next;
    }
    return hist_hi;
}

void observe(RangeObserver& o, const float* values, size_t n, const std::string& label) {
    for (size_t i = 0; i < n; ++i) {
        float v = values[i];
        if (!std::isfinite(v))
            raise(ErrorCode::NonFiniteValue,
                  "non-finite value at index " + std::to_string(i) +
                      (label.empty() ? "" : " while observing tensor '" + label + "'"));
        double d = static_cast<double>(v);
        if (d < o.min_seen) o.min_seen = d;
        if (d > o.max_seen) o.max_seen = d;
        if (o.histogram_armed) {
            double width = (o.hist_hi - o.hist_lo) / RangeObserver::kHistogramBins;
            int idx = static_cast<int>((d - o.hist_lo) / width);
            idx = std::clamp(idx, 0, RangeObserver::kHistogramBins - 1);
            o.hist_bins[static_cast<size_t>(idx)]++;
        }
    }
    o.count += n;
}

void observe(RangeObserver& o, const std::vector<float>& values, const std::string& label) {
    observe(o, values.data(), values.size(), label);
}

RangeObserver merge_observers(const RangeObserver& a, const RangeObserver& b) {
    RangeObserver m;
    m.min_seen = std::min(a.min_seen, b.min_seen);
    m.max_seen = std::max(a.max_seen, b.max_seen);
    m.count = a.count + b.count;
    if (a.histogram_armed || b.histogram_armed) {
        // Rebin both histograms into the union range. Approximate (bin mass
        // moves to the midpoint's destination bin); exact min/max semantics
        // are unaffected.
        double lo = std::min(a.histogram_armed ? a.hist_lo : b.hist_lo,
                             b.histogram_armed ? b.hist_lo : a.hist_lo);
        double hi = std::max(a.histogram_armed ? a.hist_hi : b.hist_hi,
                             b.histogram_armed ? b.hist_hi : a.hist_hi);
        m.arm_histogram(lo, hi);
        double width = (hi - lo) / RangeObserver::kHistogramBins;
        for (const RangeObserver* src : {&a, &b}) {
            if (!src->histogram_armed) continue;
            double sw = (src->hist_hi - src->hist_lo) / RangeObserver::kHistogramBins;
            for (int i = 0; i < RangeObserver::kHistogramBins; ++i) {
                if (src->hist_bins[static_cast<size_t>(i)] == 0) continue;
                double mid = src->hist_lo + sw * (i + 0.5);
                int idx = std::clamp(static_cast<int>((mid - lo) / width), 0,
                                     RangeObserver::kHistogramBins - 1);
                m.hist_bins[static_cast<size_t>(idx)] += src->hist_bins[static_cast<size_t>(i)];
            }
        }
    }
    return m;
}

QuantParams params_from_range(double min_value, double max_value, int bits) {
    if (bits < 2 || bits > 8)
        raise(ErrorCode::UnsupportedBits, "bits must be in [2, 8], got " + std::to_string(bits));
    if (!std::isfinite(min_value) || !std::isfinite(max_value) || min_value > max_value)
        raise(ErrorCode::NonFiniteValue, "invalid range for params");
    // zero inclusion keeps real 0 exactly representable
    double lo = std::min(min_value, 0.0);
    double hi = std::max(max_value, 0.0);
    if (hi - lo < 1e-12) hi = lo + 1e-6;
    QuantParams p;
    p.bits = bits;
    p.scale = (hi - lo) / static_cast<double>((1 << bits) - 1);
    double z = -round_half_even(lo / p.scale);
    p.zero_point = static_cast<int32_t>(std::clamp(z, 0.0, static_cast<double>(p.qmax())));
    return p;
}

QuantParams finalize_params(const RangeObserver& o, int bits) {
    if (o.empty()) raise(ErrorCode::EmptyObserver, "finalize_params on an observer with count 0");
    return params_from_range(o.min_seen, o.max_seen, bits);
}

int32_t quantize_scalar(double x, const QuantParams& p) {
    if (!std::isfinite(x)) raise(ErrorCode::NonFiniteValue, "quantize_scalar of non-finite value");
    return quantize_value(x, p);
}

double dequantize_scalar(int32_t q, const QuantParams& p) {
    if (q < 0 || q > p.qmax())
        raise(ErrorCode::QuantizedValueOutOfRange,
              "code " + std::to_string(q) + " outside [0, " + std::to_string(p.qmax()) + "]");
    return dequantize_code(q, p);
}

const CalibrationEntry& CalibrationTable::at(const std::string& name) const {
    auto it = entries.find(name);
    if (it == entries.end())
        raise(ErrorCode::MissingCalibration, "no calibration entry for tensor '" + name + "'");
    return it->second;
}

std::string CalibrationTable::to_json() const {
    nlohmann::ordered_json j;
    j["bits"] = bits;
    nlohmann::ordered_json tensors = nlohmann::ordered_json::object();
    for (const auto& [name, e] : entries) {  // std::map iterates sorted
        nlohmann::ordered_json entry;
        entry["min"] = e.min_value;
        entry["max"] = e.max_value;
        entry["count"] = e.count;
        entry["scale"] = e.params.scale;
        entry["zero_point"] = e.params.zero_point;
        entry["bits"] = e.params.bits;
        tensors[name] = std::move(entry);
    }
    j["tensors"] = std::move(tensors);
    return j.dump(2) + "\n";
}

CalibrationTable CalibrationTable::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorCode::SyntaxError, std::string("calibration table: ") + e.what());
    }
    if (!j.is_object() || !j.contains("bits") || !j.contains("tensors"))
        raise(ErrorCode::SyntaxError, "calibration table must be {bits, tensors}");
    CalibrationTable t;
    try {
        t.bits = j["bits"].get<int>();
        for (auto it = j["tensors"].begin(); it != j["tensors"].end(); ++it) {
            const auto& e = it.value();
            for (const char* key : {"min", "max", "count", "scale", "zero_point", "bits"})
                if (!e.contains(key))
                    raise(ErrorCode::SyntaxError,
                          "calibration entry '" + it.key() + "' missing key '" + key + "'");
            CalibrationEntry entry;
            entry.min_value = e["min"].get<double>();
            entry.max_value = e["max"].get<double>();
            entry.count = e["count"].get<uint64_t>();
            entry.params.scale = e["scale"].get<double>();
            entry.params.zero_point = e["zero_point"].get<int32_t>();
            entry.params.bits = e["bits"].get<int>();
            t.entries[it.key()] = entry;
        }
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorCode::SyntaxError, std::string("calibration table: ") + e.what());
    }
    return t;
}

}  // namespace vq
