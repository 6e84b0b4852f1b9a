#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "isomerge/errors.hpp"
#include "isomerge/tensor.hpp"

// ISOT checkpoint container, little-endian throughout:
//   bytes 0-3   magic "ISOT"
//   bytes 4-7   u32 version (currently 1)
//   bytes 8-15  u64 header_len
//   header_len bytes of UTF-8 JSON:
//     {"tensors": {name: {"dtype":"f32","shape":[...],"offset":u64}},
//      "meta": {string: string}}
//   payload starts at the first 64-byte boundary after the header;
//   offsets are relative to payload start, payloads are contiguous
//   row-major IEEE-754 f32.

namespace isomerge {

namespace detail {

constexpr char kIsotMagic[4] = {'I', 'S', 'O', 'T'};
constexpr std::uint32_t kIsotVersion = 1;
constexpr std::size_t kPayloadAlign = 64;

inline std::size_t align_up(std::size_t x, std::size_t a) {
    return (x + a - 1) / a * a;
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

inline std::uint64_t get_u64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_bundle(const TensorBundle& bundle) {
    using detail::align_up;
    for (const auto& [name, tensor] : bundle.entries()) {
        if (!tensor.all_finite())
            fail(errc::non_finite_value, "tensor '" + name + "' contains NaN or Inf");
    }

    nlohmann::ordered_json tensors = nlohmann::ordered_json::object();
    std::uint64_t offset = 0;
    for (const auto& [name, tensor] : bundle.entries()) {
        nlohmann::ordered_json entry;
        entry["dtype"] = "f32";
        entry["shape"] = tensor.shape();
        entry["offset"] = offset;
        tensors[name] = std::move(entry);
        offset += tensor.numel() * 4;
    }
    nlohmann::ordered_json header;
    header["tensors"] = std::move(tensors);
    header["meta"] = bundle.meta;
    const std::string header_text = header.dump();

    std::vector<std::uint8_t> out;
    out.reserve(align_up(16 + header_text.size(), detail::kPayloadAlign) + offset);
    out.insert(out.end(), detail::kIsotMagic, detail::kIsotMagic + 4);
    detail::put_u32(out, detail::kIsotVersion);
    detail::put_u64(out, header_text.size());
    out.insert(out.end(), header_text.begin(), header_text.end());
    out.resize(align_up(out.size(), detail::kPayloadAlign), 0);

    for (const auto& [name, tensor] : bundle.entries()) {
        for (float v : tensor.values()) {
            const auto bits = std::bit_cast<std::uint32_t>(v);
            detail::put_u32(out, bits);
        }
    }
    return out;
}

inline TensorBundle deserialize_bundle(const std::vector<std::uint8_t>& raw,
                                       const std::string& origin = "<memory>") {
    using detail::align_up;
    if (raw.size() < 4 || !std::equal(detail::kIsotMagic, detail::kIsotMagic + 4, raw.begin()))
        fail(errc::magic_mismatch, origin + " is not an ISOT file");
    if (raw.size() < 16)
        fail(errc::header_malformed, origin + " is truncated before the header");
    const std::uint32_t version = detail::get_u32(raw.data() + 4);
    if (version != detail::kIsotVersion)
        fail(errc::version_unsupported,
             origin + " has version " + std::to_string(version) + ", expected 1");
    const std::uint64_t header_len = detail::get_u64(raw.data() + 8);
    if (16 + header_len > raw.size())
        fail(errc::header_malformed, origin + " declares a header past end of file");

    nlohmann::ordered_json header;
    try {
        header = nlohmann::ordered_json::parse(raw.begin() + 16,
                                               raw.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
    } catch (const nlohmann::json::exception& e) {
        fail(errc::header_malformed, origin + ": " + e.what());
    }
    if (!header.is_object() || !header.contains("tensors") || !header["tensors"].is_object())
        fail(errc::header_malformed, origin + " header lacks a tensors table");

    const std::size_t payload_start = align_up(16 + header_len, detail::kPayloadAlign);
    const std::size_t payload_len = raw.size() > payload_start ? raw.size() - payload_start : 0;

    TensorBundle bundle;
    if (header.contains("meta")) {
        if (!header["meta"].is_object())
            fail(errc::header_malformed, origin + " meta must be a string map");
        for (const auto& [key, value] : header["meta"].items()) {
            if (!value.is_string())
                fail(errc::header_malformed, origin + " meta values must be strings");
            bundle.meta[key] = value.get<std::string>();
        }
    }

    for (const auto& [name, spec] : header["tensors"].items()) {
        if (name.empty())
            fail(errc::header_malformed, origin + " contains an empty tensor name");
        if (!spec.is_object() || !spec.contains("dtype") || !spec.contains("shape") ||
            !spec.contains("offset"))
            fail(errc::header_malformed, origin + " tensor '" + name + "' entry is incomplete");
        if (spec["dtype"] != "f32")
            fail(errc::header_malformed,
                 origin + " tensor '" + name + "' has unsupported dtype (only f32 in v1)");
        std::vector<std::int64_t> shape;
        for (const auto& d : spec["shape"]) {
            if (!d.is_number_integer() || d.get<std::int64_t>() < 1)
                fail(errc::header_malformed, origin + " tensor '" + name + "' has a bad extent");
            shape.push_back(d.get<std::int64_t>());
        }
        if (shape.empty() || shape.size() > 2)
            fail(errc::header_malformed,
                 origin + " tensor '" + name + "' must be rank-1 or rank-2");
        std::size_t numel = 1;
        for (auto d : shape) numel *= static_cast<std::size_t>(d);
        const std::uint64_t offset = spec["offset"].get<std::uint64_t>();
        if (offset + numel * 4 > payload_len)
            fail(errc::payload_truncated,
                 origin + " tensor '" + name + "' payload extends past end of file");

        std::vector<float> data(numel);
        const std::uint8_t* p = raw.data() + payload_start + offset;
        for (std::size_t i = 0; i < numel; ++i) {
            const float v = std::bit_cast<float>(detail::get_u32(p + 4 * i));
            if (!std::isfinite(v))
                fail(errc::non_finite_value,
                     origin + " tensor '" + name + "' contains NaN or Inf");
            data[i] = v;
        }
        bundle.add(name, Tensor(std::move(shape), std::move(data)));
    }
    return bundle;
}

inline TensorBundle load_bundle(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(errc::io_failure, "cannot open '" + path + "' for reading");
    std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
    if (in.bad())
        fail(errc::io_failure, "read error on '" + path + "'");
    return deserialize_bundle(raw, path);
}

inline void save_bundle(const TensorBundle& bundle, const std::string& path) {
    const std::vector<std::uint8_t> raw = serialize_bundle(bundle);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        fail(errc::io_failure, "cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(raw.data()),
              static_cast<std::streamsize>(raw.size()));
    out.flush();
    if (!out)
        fail(errc::io_failure, "write error on '" + path + "'");
}

}  // namespace isomerge
