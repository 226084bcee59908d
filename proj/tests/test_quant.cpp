// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "support/test_util.hpp"
#include "voxelquant/quant.hpp"

using vq::CalibrationEntry;
using vq::CalibrationTable;
using vq::QuantParams;
using vq::RangeObserver;

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();
}  // namespace

TEST_CASE("round_half_even ties go to the even neighbour") {
    CHECK(vq::round_half_even(0.5) == 0.0);
    CHECK(vq::round_half_even(1.5) == 2.0);
    CHECK(vq::round_half_even(2.5) == 2.0);
    CHECK(vq::round_half_even(3.5) == 4.0);
    CHECK(vq::round_half_even(-0.5) == 0.0);
    CHECK(vq::round_half_even(-1.5) == -2.0);
    CHECK(vq::round_half_even(-127.5) == -128.0);
    CHECK(vq::round_half_even(42.5) == 42.0);
    CHECK(vq::round_half_even(1.4999999) == 1.0);
    CHECK(vq::round_half_even(1.5000001) == 2.0);
}

TEST_CASE("params_from_range frozen values") {
    SUBCASE("[-1, 2] at 8 bits") {
        QuantParams p = vq::params_from_range(-1.0, 2.0, 8);
        CHECK(p.scale == 3.0 / 255.0);
        CHECK(p.zero_point == 85);
        CHECK(p.bits == 8);
        CHECK(p.qmax() == 255);
    }
    SUBCASE("[0, 255] at 8 bits") {
        QuantParams p = vq::params_from_range(0.0, 255.0, 8);
        CHECK(p.scale == 1.0);
        CHECK(p.zero_point == 0);
    }
    SUBCASE("[0, 1] at 8 bits") {
        QuantParams p = vq::params_from_range(0.0, 1.0, 8);
        CHECK(p.scale == 1.0 / 255.0);
        CHECK(p.zero_point == 0);
    }
    SUBCASE("symmetric [-0.5, 0.5]: zero_point tie rounds to -128 and negates") {
        QuantParams p = vq::params_from_range(-0.5, 0.5, 8);
        CHECK(p.scale == 1.0 / 255.0);
        CHECK(p.zero_point == 128);
    }
    SUBCASE("[-1, 2] at 4 bits") {
        QuantParams p = vq::params_from_range(-1.0, 2.0, 4);
        CHECK(p.scale == 0.2);
        CHECK(p.zero_point == 5);
        CHECK(p.qmax() == 15);
    }
    SUBCASE("[-1, 2] at 2 bits") {
        QuantParams p = vq::params_from_range(-1.0, 2.0, 2);
        CHECK(p.scale == 1.0);
        CHECK(p.zero_point == 1);
        CHECK(p.qmax() == 3);
        CHECK(vq::quantize_value(2.0, p) == 3);
        CHECK(vq::quantize_value(-1.0, p) == 0);
    }
    SUBCASE("positive-only range widens to include zero") {
        // [5, 5] widens to [0, 5]; after widening the span is not degenerate
        QuantParams p = vq::params_from_range(5.0, 5.0, 8);
        CHECK(p.scale == 5.0 / 255.0);
        CHECK(p.zero_point == 0);
    }
    SUBCASE("negative-only range widens to include zero") {
        QuantParams p = vq::params_from_range(-3.0, -1.0, 8);
        CHECK(p.scale == 3.0 / 255.0);
        CHECK(p.zero_point == 255);
    }
    SUBCASE("degenerate [0, 0] falls back to a 1e-6 span") {
        QuantParams p = vq::params_from_range(0.0, 0.0, 8);
        CHECK(p.scale == 1e-6 / 255.0);
        CHECK(p.zero_point == 0);
    }
}

TEST_CASE("params_from_range rejects bad arguments") {
    CHECK_RAISES(UnsupportedBits, vq::params_from_range(0.0, 1.0, 1));
    CHECK_RAISES(UnsupportedBits, vq::params_from_range(0.0, 1.0, 9));
    CHECK_RAISES(UnsupportedBits, vq::params_from_range(0.0, 1.0, 0));
    // bits is validated before the range, even when the range is also bad
    CHECK_RAISES(UnsupportedBits, vq::params_from_range(kNaN, 1.0, 16));
    CHECK_RAISES(NonFiniteValue, vq::params_from_range(kNaN, 1.0, 8));
    CHECK_RAISES(NonFiniteValue, vq::params_from_range(0.0, kInf, 8));
    CHECK_RAISES(NonFiniteValue, vq::params_from_range(2.0, 1.0, 8));
}

TEST_CASE("quantize_value frozen codes for [-1, 2] at 8 bits") {
    QuantParams p = vq::params_from_range(-1.0, 2.0, 8);
    // 0.5 / scale = 42.5, a tie: rounds to 42, so the code is 127
    CHECK(vq::quantize_value(0.5, p) == 127);
    CHECK(vq::dequantize_code(127, p) == 126.0 / 255.0);
    CHECK(vq::quantize_value(-1.0, p) == 0);
    CHECK(vq::quantize_value(0.0, p) == 85);
    CHECK(vq::quantize_value(1.0, p) == 170);
    CHECK(vq::quantize_value(2.0, p) == 255);
    // out-of-range values clamp instead of wrapping
    CHECK(vq::quantize_value(-2.0, p) == 0);
    CHECK(vq::quantize_value(2.1, p) == 255);
    CHECK(vq::quantize_value(1e9, p) == 255);
    CHECK(vq::quantize_value(-1e9, p) == 0);
}

TEST_CASE("zero is exactly representable for every derived parameter set") {
    const double ranges[][2] = {
        {-1.0, 2.0}, {0.0, 1.0}, {-0.5, 0.5}, {-3.0, -1.0}, {5.0, 5.0}, {0.0, 0.0},
    };
    for (const auto& r : ranges) {
        for (int bits : {2, 4, 8}) {
            QuantParams p = vq::params_from_range(r[0], r[1], bits);
            int32_t zq = vq::quantize_value(0.0, p);
            CHECK(zq == p.zero_point);
            CHECK(vq::dequantize_code(zq, p) == 0.0);
        }
    }
}

TEST_CASE("round trip error is bounded by half a step for in-range values") {
    QuantParams p = vq::params_from_range(-1.0, 2.0, 8);
    for (double x : {-1.0, -0.33, 0.0, 0.1, 0.5, 0.999, 1.5, 2.0}) {
        double back = vq::dequantize_code(vq::quantize_value(x, p), p);
        CHECK(std::fabs(back - x) <= p.scale / 2.0 + 1e-15);
    }
    QuantParams p4 = vq::params_from_range(-1.0, 2.0, 4);
    for (double x : {-1.0, 0.0, 0.31, 1.7, 2.0}) {
        double back = vq::dequantize_code(vq::quantize_value(x, p4), p4);
        CHECK(std::fabs(back - x) <= p4.scale / 2.0 + 1e-15);
    }
}

TEST_CASE("checked scalar variants validate their inputs") {
    QuantParams p = vq::params_from_range(0.0, 1.0, 8);
    CHECK(vq::quantize_scalar(0.5, p) == vq::quantize_value(0.5, p));
    CHECK_RAISES(NonFiniteValue, vq::quantize_scalar(kNaN, p));
    CHECK_RAISES(NonFiniteValue, vq::quantize_scalar(kInf, p));
    CHECK(vq::dequantize_scalar(0, p) == 0.0);
    CHECK(vq::dequantize_scalar(255, p) == 1.0);
    CHECK_RAISES(QuantizedValueOutOfRange, vq::dequantize_scalar(-1, p));
    CHECK_RAISES(QuantizedValueOutOfRange, vq::dequantize_scalar(256, p));
    QuantParams p4 = vq::params_from_range(0.0, 1.0, 4);
    CHECK_RAISES(QuantizedValueOutOfRange, vq::dequantize_scalar(16, p4));
}

TEST_CASE("observer tracks exact min, max, and count") {
    RangeObserver o;
    CHECK(o.empty());
    std::vector<float> v = {1.0f, -1.0f, 2.0f};
    vq::observe(o, v, "act");
    CHECK(o.min_seen == -1.0);
    CHECK(o.max_seen == 2.0);
    CHECK(o.count == 3);
    CHECK_FALSE(o.empty());

    QuantParams p = vq::finalize_params(o, 8);
    CHECK(p.scale == 3.0 / 255.0);
    CHECK(p.zero_point == 85);
}

TEST_CASE("observer rejects non-finite values and names the tensor") {
    RangeObserver o;
    std::vector<float> v = {0.0f, std::numeric_limits<float>::quiet_NaN()};
    bool caught = false;
    try {
        vq::observe(o, v, "conv1#out");
    } catch (const vq::Error& e) {
        caught = true;
        CHECK(e.code() == vq::ErrorCode::NonFiniteValue);
        CHECK(std::string(e.what()).find("conv1#out") != std::string::npos);
    }
    CHECK(caught);

    RangeObserver o2;
    std::vector<float> w = {std::numeric_limits<float>::infinity()};
    CHECK_RAISES(NonFiniteValue, vq::observe(o2, w, "x"));
}

TEST_CASE("finalize_params on an empty observer raises EmptyObserver") {
    RangeObserver o;
    CHECK_RAISES(EmptyObserver, vq::finalize_params(o, 8));
}

TEST_CASE("merge_observers is exact, commutative, and has the empty identity") {
    RangeObserver a;
    RangeObserver b;
    std::vector<float> va = {1.0f, 2.0f};
    std::vector<float> vb = {-1.0f, 0.5f, 0.25f};
    vq::observe(a, va);
    vq::observe(b, vb);

    RangeObserver ab = vq::merge_observers(a, b);
    CHECK(ab.min_seen == -1.0);
    CHECK(ab.max_seen == 2.0);
    CHECK(ab.count == 5);

    RangeObserver ba = vq::merge_observers(b, a);
    CHECK(ba.min_seen == ab.min_seen);
    CHECK(ba.max_seen == ab.max_seen);
    CHECK(ba.count == ab.count);

    RangeObserver empty;
    RangeObserver same = vq::merge_observers(a, empty);
    CHECK(same.min_seen == a.min_seen);
    CHECK(same.max_seen == a.max_seen);
    CHECK(same.count == a.count);

    // associativity on a third observer
    RangeObserver c;
    std::vector<float> vc = {-4.0f};
    vq::observe(c, vc);
    RangeObserver l = vq::merge_observers(vq::merge_observers(a, b), c);
    RangeObserver r = vq::merge_observers(a, vq::merge_observers(b, c));
    CHECK(l.min_seen == r.min_seen);
    CHECK(l.max_seen == r.max_seen);
    CHECK(l.count == r.count);
}

TEST_CASE("histogram quantile interpolates within bins") {
    RangeObserver o;
    o.arm_histogram(0.0, 100.0);
    std::vector<float> v;
    v.reserve(10000);
    for (int i = 0; i < 10000; ++i) v.push_back(static_cast<float>((i + 0.5) * 0.01));
    vq::observe(o, v);
    CHECK(o.count == 10000);
    // uniform data: quantile(p) is p to within one bin width (100/2048)
    const double bin = 100.0 / RangeObserver::kHistogramBins;
    CHECK(std::fabs(o.quantile(50.0) - 50.0) <= bin);
    CHECK(std::fabs(o.quantile(99.9) - 99.9) <= bin);
    CHECK(std::fabs(o.quantile(0.1) - 0.1) <= bin);
    CHECK(o.quantile(0.001) >= 0.0);
    CHECK(o.quantile(99.999) <= 100.0);
}

TEST_CASE("quantile misuse maps to structured errors") {
    RangeObserver unarmed;
    std::vector<float> v = {1.0f};
    vq::observe(unarmed, v);
    CHECK_RAISES(InvalidConfig, unarmed.quantile(50.0));

    RangeObserver armed_empty;
    armed_empty.arm_histogram(0.0, 1.0);
    CHECK_RAISES(EmptyObserver, armed_empty.quantile(50.0));
}

TEST_CASE("histogram merge rebins into the union range") {
    RangeObserver a;
    a.arm_histogram(0.0, 1.0);
    RangeObserver b;
    b.arm_histogram(2.0, 4.0);
    std::vector<float> va(100, 0.5f);
    std::vector<float> vb(300, 3.0f);
    vq::observe(a, va);
    vq::observe(b, vb);
    RangeObserver m = vq::merge_observers(a, b);
    CHECK(m.count == 400);
    CHECK(m.histogram_armed);
    // 25% of mass sits at 0.5, the rest at 3.0
    const double bin = (m.hist_hi - m.hist_lo) / RangeObserver::kHistogramBins;
    CHECK(std::fabs(m.quantile(12.5) - 0.5) <= bin + 1e-9);
    CHECK(std::fabs(m.quantile(60.0) - 3.0) <= bin + 1e-9);
}

TEST_CASE("calibration table JSON round trips exactly") {
    CalibrationTable t;
    t.bits = 8;
    CalibrationEntry e1;
    e1.min_value = -1.0;
    e1.max_value = 2.0;
    e1.count = 12345;
    e1.params = vq::params_from_range(-1.0, 2.0, 8);
    t.entries["conv1#out"] = e1;
    CalibrationEntry e2;
    e2.min_value = 0.0;
    e2.max_value = 0.73125;
    e2.count = 7;
    e2.params = vq::params_from_range(0.0, 0.73125, 8);
    t.entries["input"] = e2;

    const std::string text = t.to_json();
    CalibrationTable back = CalibrationTable::from_json(text);
    CHECK(back.bits == t.bits);
    REQUIRE(back.entries.size() == 2);
    for (const auto& [name, entry] : t.entries) {
        REQUIRE(back.has(name));
        const CalibrationEntry& b = back.at(name);
        CHECK(b.min_value == entry.min_value);
        CHECK(b.max_value == entry.max_value);
        CHECK(b.count == entry.count);
        CHECK(b.params == entry.params);
    }
    // a second round trip must be byte-identical
    CHECK(back.to_json() == text);
}

TEST_CASE("calibration table lookup and parse errors") {
    CalibrationTable t;
    CHECK_FALSE(t.has("missing"));
    CHECK_RAISES(MissingCalibration, t.at("missing"));

    CHECK_RAISES(SyntaxError, CalibrationTable::from_json("{"));
    CHECK_RAISES(SyntaxError, CalibrationTable::from_json("[]"));
    CHECK_RAISES(SyntaxError, CalibrationTable::from_json("{\"bits\": 8}"));
    CHECK_RAISES(SyntaxError, CalibrationTable::from_json("{\"tensors\": {}}"));
    // wrong value types inside an entry must not escape as library exceptions
    CHECK_RAISES(SyntaxError, CalibrationTable::from_json(
                                  "{\"bits\": 8, \"tensors\": {\"a\": {\"min\": \"x\", \"max\": 1,"
                                  " \"count\": 1, \"scale\": 1, \"zero_point\": 0, \"bits\": 8}}}"));
    CHECK_RAISES(SyntaxError, CalibrationTable::from_json(
                                  "{\"bits\": 8, \"tensors\": {\"a\": {\"min\": 0}}}"));
    CHECK_RAISES(SyntaxError, CalibrationTable::from_json("{\"bits\": \"x\", \"tensors\": {}}"));
}
