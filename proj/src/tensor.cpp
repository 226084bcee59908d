// SPDX-License-Identifier: Apache-2.0
#include "voxelquant/tensor.hpp"

#include <json.hpp>

#include "voxelquant/util.hpp"

namespace vq {

const char* dtype_name(DType t) {
    switch (t) {
        case DType::F32: return "f32";
        case DType::U8: return "u8";
        case DType::I32: return "i32";
        case DType::U16: return "u16";
    }
    return "?";
}

DType dtype_from_name(const std::string& name) {
    if (name == "f32") return DType::F32;
    if (name == "u8") return DType::U8;
    if (name == "i32") return DType::I32;
    if (name == "u16") return DType::U16;
    raise(ErrorCode::SyntaxError, "unknown dtype '" + name + "'");
}

size_t dtype_size(DType t) {
    switch (t) {
        case DType::F32: return 4;
        case DType::U8: return 1;
        case DType::I32: return 4;
        case DType::U16: return 2;
    }
    return 0;
}

std::string Shape::str() const {
    std::string s = "(";
    for (int i = 0; i < 5; ++i) {
        if (i) s += ", ";
        s += (i == 0 && has_dynamic_batch()) ? "dynamic" : std::to_string(dims[i]);
    }
    return s + ")";
}

namespace {

std::filesystem::path sidecar_path(const std::filesystem::path& payload) {
    std::filesystem::path p = payload;
    p.replace_extension(".json");
    return p;
}

void save_sidecar(const std::filesystem::path& payload, const Shape& shape, DType dtype) {
    nlohmann::ordered_json j;
    j["shape"] = shape.dims;
    j["dtype"] = dtype_name(dtype);
    write_text_file(sidecar_path(payload), j.dump(2) + "\n");
}

std::pair<Shape, DType> load_sidecar(const std::filesystem::path& payload) {
    auto text = read_text_file(sidecar_path(payload));
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorCode::SyntaxError, "sidecar " + sidecar_path(payload).string() + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("shape") || !j.contains("dtype"))
        raise(ErrorCode::SyntaxError,
              "sidecar " + sidecar_path(payload).string() + ": expected {shape, dtype}");
    auto arr = j["shape"];
    if (!arr.is_array() || arr.size() != 5)
        raise(ErrorCode::SyntaxError, "sidecar shape must have 5 entries");
    Shape s;
    for (size_t i = 0; i < 5; ++i) {
        if (!arr[i].is_number_integer() || arr[i].get<int64_t>() <= 0)
            raise(ErrorCode::SyntaxError, "sidecar shape entries must be positive integers");
        s.dims[i] = arr[i].get<int64_t>();
    }
    return {s, dtype_from_name(j["dtype"].get<std::string>())};
}

}  // namespace

void save_volume(const std::filesystem::path& payload_path, const Volume& v) {
    write_file(payload_path, v.data.data(), v.data.size() * sizeof(float));
    save_sidecar(payload_path, v.shape, DType::F32);
}

Volume load_volume(const std::filesystem::path& payload_path) {
    auto [shape, dtype] = load_sidecar(payload_path);
    if (dtype != DType::F32)
        raise(ErrorCode::SyntaxError,
              payload_path.string() + ": expected f32 payload, got " + dtype_name(dtype));
    auto bytes = read_file(payload_path);
    size_t expect = static_cast<size_t>(shape.volume()) * sizeof(float);
    if (bytes.size() != expect)
        raise(ErrorCode::ShapeMismatch, payload_path.string() + ": payload is " +
                                            std::to_string(bytes.size()) + " bytes, sidecar implies " +
                                            std::to_string(expect));
    Volume v;
    v.shape = shape;
    v.data.resize(static_cast<size_t>(shape.volume()));
    std::memcpy(v.data.data(), bytes.data(), bytes.size());
    return v;
}

void save_labels(const std::filesystem::path& payload_path, const LabelVolume& v) {
    write_file(payload_path, v.data.data(), v.data.size() * sizeof(uint16_t));
    save_sidecar(payload_path, v.shape, DType::U16);
}

LabelVolume load_labels(const std::filesystem::path& payload_path) {
    auto [shape, dtype] = load_sidecar(payload_path);
    if (dtype != DType::U16)
        raise(ErrorCode::SyntaxError,
              payload_path.string() + ": expected u16 payload, got " + dtype_name(dtype));
    auto bytes = read_file(payload_path);
    size_t expect = static_cast<size_t>(shape.volume()) * sizeof(uint16_t);
    if (bytes.size() != expect)
        raise(ErrorCode::ShapeMismatch, payload_path.string() + ": payload is " +
                                            std::to_string(bytes.size()) + " bytes, sidecar implies " +
                                            std::to_string(expect));
    LabelVolume v;
    v.shape = shape;
    v.data.resize(static_cast<size_t>(shape.volume()));
    std::memcpy(v.data.data(), bytes.data(), bytes.size());
    return v;
}

}  // namespace vq
