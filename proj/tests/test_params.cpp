#include <doctest.h>

#include <filesystem>

#include "tts/common.hpp"
#include "tts/params.hpp"

using namespace tts;
using params::DType;
using params::ParameterArchive;

namespace {

ParameterArchive random_archive(std::uint64_t seed, int tensors) {
    Rng rng(seed);
    ParameterArchive a;
    a.metadata["kind"] = "test";
    a.metadata["seed"] = seed;
    a.metadata["note"] = "randomized archive";
    for (int i = 0; i < tensors; ++i) {
        const std::int64_t r = 1 + static_cast<std::int64_t>(rng.uniform_int(6));
        const std::int64_t c = 1 + static_cast<std::int64_t>(rng.uniform_int(6));
        auto t = ad::randn({r, c}, rng, 1.0, rng.uniform01() < 0.8);
        a.put("block" + std::to_string(i / 4) + ".tensor" + std::to_string(i), t,
              rng.uniform01() < 0.25 ? DType::f32 : DType::f64);
    }
    return a;
}

} // namespace

TEST_CASE("archive save/load/save is byte-identical") {
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        auto a = random_archive(seed, 23);
        const auto bytes1 = params::archive_bytes(a);
        auto b = params::archive_from_bytes(bytes1);
        const auto bytes2 = params::archive_bytes(b);
        CHECK(bytes1 == bytes2);
        CHECK(b.order() == a.order());
        for (const auto& n : a.order()) {
            CHECK(b.at(n)->requires_grad == a.at(n)->requires_grad);
            CHECK(b.dtype_of(n) == a.dtype_of(n));
        }
        CHECK(b.metadata["note"] == "randomized archive");
    }
}

TEST_CASE("archive rejects corrupted magic and truncation") {
    auto a = random_archive(7, 5);
    auto bytes = params::archive_bytes(a);
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_WITH_AS(params::archive_from_bytes(bad), doctest::Contains("magic"), DataError);
    for (std::size_t cut : {bytes.size() - 3, bytes.size() / 2, std::size_t{6}}) {
        CHECK_THROWS_AS(params::archive_from_bytes(bytes.substr(0, cut)), DataError);
    }
    auto bad_version = bytes;
    bad_version[4] = 9;
    CHECK_THROWS_WITH_AS(params::archive_from_bytes(bad_version), doctest::Contains("version"),
                         DataError);
}

TEST_CASE("atomic save leaves no temp file and loads back") {
    auto a = random_archive(11, 8);
    const auto path = (std::filesystem::temp_directory_path() / "arch.ttsf").string();
    params::save_archive(a, path);
    CHECK(!std::filesystem::exists(path + ".tmp"));
    auto b = params::load_archive(path);
    CHECK(params::archive_bytes(b) == params::archive_bytes(a));
    std::filesystem::remove(path);
}

TEST_CASE("f32 entries survive the round trip losslessly") {
    ParameterArchive a;
    a.metadata["kind"] = "test";
    a.put("x", ad::make_tensor({3}, {0.125, -2.5, 1.0f / 3.0f}, true), DType::f32);
    auto b = params::archive_from_bytes(params::archive_bytes(a));
    CHECK(params::archive_bytes(b) == params::archive_bytes(a));
}

TEST_CASE("clone is deep and preserves flags") {
    auto a = random_archive(13, 6);
    auto b = a.clone();
    b.at(a.order()[0])->value[0] += 1.0;
    CHECK(a.at(a.order()[0])->value[0] != b.at(a.order()[0])->value[0]);
    CHECK(params::tensor_bytes_equal(a, b, a.order()[1]));
    CHECK(a.names_with_prefix("block0.").size() == 4);
}

TEST_CASE("content id is sensitive to payload changes") {
    auto a = random_archive(17, 6);
    const auto id1 = params::archive_content_id(a);
    a.at(a.order()[2])->value[0] += 1e-9;
    CHECK(params::archive_content_id(a) != id1);
}
