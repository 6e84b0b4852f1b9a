#include <catch2/catch_amalgamated.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "isomerge/isot.hpp"
#include "isomerge/merge.hpp"
#include "isomerge/task_matrix.hpp"
#include "isomerge/tensor.hpp"
#include "support/generators.hpp"

using namespace isomerge;

namespace {

bool throws_code(errc expected, const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code() == expected;
    }
    return false;
}

// hand-rolled ISOT image with full control over every header field
std::vector<std::uint8_t> raw_isot(const std::string& magic, std::uint32_t version,
                                   const std::string& header_json,
                                   const std::vector<float>& payload) {
    std::vector<std::uint8_t> out(magic.begin(), magic.end());
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(version >> (8 * i)));
    const std::uint64_t hlen = header_json.size();
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(hlen >> (8 * i)));
    out.insert(out.end(), header_json.begin(), header_json.end());
    out.resize((out.size() + 63) / 64 * 64, 0);
    for (float v : payload) {
        const auto bits = std::bit_cast<std::uint32_t>(v);
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
    return out;
}

const std::string kOneTensorHeader =
    R"({"tensors":{"w":{"dtype":"f32","shape":[2,2],"offset":0}},"meta":{}})";

}  // namespace

TEST_CASE("well-formed two-tensor file round trips") {
    TensorBundle bundle;
    bundle.add("layer.weight", Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
    bundle.add("layer.bias", Tensor::vector({0.5f, -0.5f}));
    bundle.meta["arch"] = "demo";

    const auto path = std::filesystem::temp_directory_path() / "isomerge_roundtrip.isot";
    save_bundle(bundle, path.string());
    const TensorBundle loaded = load_bundle(path.string());

    REQUIRE(loaded.size() == 2);
    CHECK(loaded.entries()[0].first == "layer.weight");
    CHECK(loaded.entries()[1].first == "layer.bias");
    CHECK(loaded.at("layer.weight").shape() == std::vector<std::int64_t>{2, 3});
    CHECK(loaded.at("layer.bias").shape() == std::vector<std::int64_t>{2});
    CHECK(loaded.meta.at("arch") == "demo");
    std::filesystem::remove(path);
}

TEST_CASE("bad magic is rejected") {
    const auto raw = raw_isot("XXXX", 1, kOneTensorHeader, {1, 2, 3, 4});
    CHECK(throws_code(errc::magic_mismatch, [&] { deserialize_bundle(raw); }));
}

TEST_CASE("unsupported version is rejected") {
    const auto raw = raw_isot("ISOT", 2, kOneTensorHeader, {1, 2, 3, 4});
    CHECK(throws_code(errc::version_unsupported, [&] { deserialize_bundle(raw); }));
}

TEST_CASE("offset past end of file is a truncated payload") {
    const std::string header =
        R"({"tensors":{"w":{"dtype":"f32","shape":[2,2],"offset":4096}},"meta":{}})";
    const auto raw = raw_isot("ISOT", 1, header, {1, 2, 3, 4});
    CHECK(throws_code(errc::payload_truncated, [&] { deserialize_bundle(raw); }));
}

TEST_CASE("malformed headers are rejected") {
    CHECK(throws_code(errc::header_malformed,
                      [&] { deserialize_bundle(raw_isot("ISOT", 1, "{not json", {})); }));
    CHECK(throws_code(errc::header_malformed, [&] {
        deserialize_bundle(raw_isot(
            "ISOT", 1, R"({"tensors":{"w":{"dtype":"f64","shape":[1],"offset":0}}})", {1}));
    }));
    CHECK(throws_code(errc::header_malformed, [&] {
        deserialize_bundle(raw_isot(
            "ISOT", 1, R"({"tensors":{"w":{"dtype":"f32","shape":[1,1,1],"offset":0}}})", {1}));
    }));
    CHECK(throws_code(errc::header_malformed, [&] {
        deserialize_bundle(raw_isot(
            "ISOT", 1, R"({"tensors":{"w":{"dtype":"f32","shape":[0],"offset":0}}})", {}));
    }));
    CHECK(throws_code(errc::header_malformed, [&] {
        deserialize_bundle(raw_isot(
            "ISOT", 1, R"({"tensors":{"":{"dtype":"f32","shape":[1],"offset":0}}})", {1}));
    }));
}

TEST_CASE("non-finite payload values are rejected at load") {
    const float bad = std::bit_cast<float>(std::uint32_t{0x7fc00000});  // quiet NaN
    const auto raw = raw_isot("ISOT", 1, kOneTensorHeader, {1, bad, 3, 4});
    CHECK(throws_code(errc::non_finite_value, [&] { deserialize_bundle(raw); }));
}

TEST_CASE("single value save/load preserves the exact value") {
    TensorBundle bundle;
    bundle.add("x", Tensor::matrix(1, 1, {3.5f}));
    const auto path = std::filesystem::temp_directory_path() / "isomerge_scalar.isot";
    save_bundle(bundle, path.string());
    const TensorBundle loaded = load_bundle(path.string());
    CHECK(loaded.at("x").values()[0] == 3.5f);
    std::filesystem::remove(path);
}

TEST_CASE("duplicate parameter names are rejected before write") {
    TensorBundle bundle;
    bundle.add("w", Tensor::vector({1.f}));
    CHECK(throws_code(errc::duplicate_name, [&] { bundle.add("w", Tensor::vector({2.f})); }));
}

TEST_CASE("4x3 payload survives byte-for-byte") {
    std::vector<float> values(12);
    for (std::size_t i = 0; i < 12; ++i) values[i] = 0.125f * static_cast<float>(i) - 0.7f;
    TensorBundle bundle;
    bundle.add("m", Tensor::matrix(4, 3, values));
    const auto path = std::filesystem::temp_directory_path() / "isomerge_4x3.isot";
    save_bundle(bundle, path.string());
    const TensorBundle loaded = load_bundle(path.string());
    REQUIRE(loaded.at("m").values().size() == 12);
    for (std::size_t i = 0; i < 12; ++i) {
        const auto expect = std::bit_cast<std::uint32_t>(values[i]);
        const auto got = std::bit_cast<std::uint32_t>(loaded.at("m").values()[i]);
        CHECK(expect == got);
    }
    std::filesystem::remove(path);
}

TEST_CASE("serialization round trip is the identity on 100+ random bundles") {
    Rng rng(1001);
    for (int trial = 0; trial < 100; ++trial) {
        const TensorBundle bundle = testgen::random_bundle(rng);
        const auto bytes = serialize_bundle(bundle);
        const TensorBundle loaded = deserialize_bundle(bytes);
        const auto bytes2 = serialize_bundle(loaded);
        REQUIRE(bytes == bytes2);
        REQUIRE(loaded.size() == bundle.size());
        for (std::size_t i = 0; i < bundle.size(); ++i) {
            CHECK(loaded.entries()[i].first == bundle.entries()[i].first);
            const auto& a = bundle.entries()[i].second.values();
            const auto& b = loaded.entries()[i].second.values();
            REQUIRE(a.size() == b.size());
            CHECK(std::memcmp(a.data(), b.data(), a.size() * 4) == 0);
        }
        CHECK(loaded.meta == bundle.meta);
    }
}

TEST_CASE("bundle_delta computes elementwise differences") {
    TensorBundle base, tuned;
    base.add("w", Tensor::matrix(2, 2, {1, 0, 0, 1}));
    base.add("b", Tensor::vector({1.f, 1.f}));
    tuned.add("w", Tensor::matrix(2, 2, {2, 0, 0, 2}));
    tuned.add("b", Tensor::vector({1.f, 2.f}));

    const TaskMatrixSet delta = bundle_delta(tuned, base);
    REQUIRE(delta.matrices.size() == 1);
    REQUIRE(delta.vectors.size() == 1);
    const Matrix& d = delta.matrices[0].second;
    CHECK(d(0, 0) == 1.0);
    CHECK(d(0, 1) == 0.0);
    CHECK(d(1, 0) == 0.0);
    CHECK(d(1, 1) == 1.0);
    CHECK(delta.vectors[0].second[0] == 0.0);
    CHECK(delta.vectors[0].second[1] == 1.0);
}

TEST_CASE("bundle_delta of a bundle with itself is zero") {
    Rng rng(1002);
    for (int trial = 0; trial < 20; ++trial) {
        const TensorBundle bundle = testgen::random_bundle(rng);
        const TaskMatrixSet delta = bundle_delta(bundle, bundle);
        for (const auto& [name, m] : delta.matrices) CHECK(m.is_zero());
        for (const auto& [name, v] : delta.vectors)
            for (double x : v) CHECK(x == 0.0);
    }
}

TEST_CASE("bundle_delta validates name sets and shapes") {
    TensorBundle a, b, c;
    a.add("w", Tensor::vector({1.f}));
    b.add("v", Tensor::vector({1.f}));
    c.add("w", Tensor::vector({1.f, 2.f}));
    CHECK(throws_code(errc::name_set_mismatch, [&] { bundle_delta(a, b); }));
    CHECK(throws_code(errc::shape_mismatch, [&] { bundle_delta(a, c); }));
}

TEST_CASE("apply_delta at alpha zero returns the base bit-for-bit") {
    Rng rng(1003);
    const TensorBundle base = testgen::random_bundle(rng);
    const TensorBundle tuned = [&] {
        TensorBundle t;
        for (const auto& [name, tensor] : base.entries()) {
            std::vector<float> shifted = tensor.values();
            for (float& v : shifted) v *= 1.25f;
            t.add(name, Tensor(tensor.shape(), std::move(shifted)));
        }
        return t;
    }();
    MergeOutcome outcome;
    outcome.deltas = bundle_delta(tuned, base);
    const TensorBundle out = apply_delta(base, outcome, 0.0);
    for (const auto& [name, tensor] : base.entries()) {
        const auto& got = out.at(name).values();
        for (std::size_t i = 0; i < got.size(); ++i)
            CHECK(std::bit_cast<std::uint32_t>(got[i]) ==
                  std::bit_cast<std::uint32_t>(tensor.values()[i]));
    }
}

TEST_CASE("single-task arithmetic at alpha one reproduces the fine-tuned model exactly") {
    Rng rng(1004);
    for (int trial = 0; trial < 50; ++trial) {
        const TensorBundle base = testgen::random_bundle(rng);
        TensorBundle tuned;
        Rng vals = rng.stream(trial);
        for (const auto& [name, tensor] : base.entries()) {
            std::vector<float> fresh(tensor.values().size());
            for (float& v : fresh) v = testgen::random_benign_float(vals);
            tuned.add(name, Tensor(tensor.shape(), std::move(fresh)));
        }
        std::vector<TaskMatrixSet> tasks{bundle_delta(tuned, base)};
        const MergeOutcome ta = merge_task_arithmetic(tasks);
        const TensorBundle rebuilt = apply_delta(base, ta, 1.0);
        for (const auto& [name, tensor] : tuned.entries()) {
            const auto& got = rebuilt.at(name).values();
            for (std::size_t i = 0; i < got.size(); ++i)
                CHECK(std::bit_cast<std::uint32_t>(got[i]) ==
                      std::bit_cast<std::uint32_t>(tensor.values()[i]));
        }
    }
}

TEST_CASE("apply_delta scales the delta") {
    TensorBundle base;
    base.add("w", Tensor::matrix(2, 2, {0, 0, 0, 0}));
    MergeOutcome outcome;
    outcome.deltas.matrices.emplace_back("w", Matrix{{1, 1}, {1, 1}});
    const TensorBundle out = apply_delta(base, outcome, 2.0);
    for (float v : out.at("w").values()) CHECK(v == 2.0f);
}
