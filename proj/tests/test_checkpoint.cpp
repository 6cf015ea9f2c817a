#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "agd/core/checkpoint.hpp"

using agd::ParamStore;
using agd::Tensor;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
}

template <typename T>
ParamStore<T> sample_store(uint64_t seed, bool zeroed = false) {
    ParamStore<T> ps;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    auto fill = [&](agd::Shape shape) {
        std::vector<T> v(agd::shape_numel(shape));
        if (!zeroed)
            for (auto& x : v) x = T(dist(rng));
        return Tensor<T>::from(shape, std::move(v));
    };
    ps.add("enc.w", fill({4, 3, 3, 3}));
    ps.add("enc.b", fill({4}));
    ps.add("head.w", fill({8, 2}));
    ps.add("head.b", fill({2}));
    return ps;
}

}  // namespace

TEST_CASE("checkpoint round-trip is bit-exact") {
    const fs::path dir = fs::temp_directory_path() / "agd_ckpt_test";
    fs::create_directories(dir);
    const fs::path p1 = dir / "a.ckpt", p2 = dir / "b.ckpt";

    auto ps = sample_store<float>(42);
    agd::json meta;
    meta["note"] = "round trip";
    meta["epoch"] = 7;
    agd::save_checkpoint(p1, ps, meta);

    auto ps2 = sample_store<float>(0, /*zeroed=*/true);
    agd::json header = agd::load_checkpoint(p1, ps2);
    CHECK(header["meta"]["note"] == "round trip");
    CHECK(header["meta"]["epoch"] == 7);
    for (size_t t = 0; t < ps.count(); ++t) {
        auto a = ps.tensors()[t].values();
        auto b = ps2.tensors()[t].values();
        for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    }

    agd::save_checkpoint(p2, ps2, meta);
    CHECK(slurp(p1) == slurp(p2));
    fs::remove_all(dir);
}

TEST_CASE("checkpoint round-trip is bit-exact for doubles") {
    const fs::path dir = fs::temp_directory_path() / "agd_ckpt_test_f64";
    fs::create_directories(dir);
    const fs::path p1 = dir / "a.ckpt", p2 = dir / "b.ckpt";
    auto ps = sample_store<double>(7);
    agd::save_checkpoint(p1, ps);
    auto ps2 = sample_store<double>(0, true);
    agd::load_checkpoint(p1, ps2);
    agd::save_checkpoint(p2, ps2);
    CHECK(slurp(p1) == slurp(p2));
    fs::remove_all(dir);
}

TEST_CASE("checkpoint rejects mismatched models") {
    const fs::path dir = fs::temp_directory_path() / "agd_ckpt_mismatch";
    fs::create_directories(dir);
    const fs::path p = dir / "m.ckpt";
    auto ps = sample_store<float>(1);
    agd::save_checkpoint(p, ps);

    // wrong shape
    {
        ParamStore<float> bad;
        bad.add("enc.w", Tensor<float>::zeros({4, 3, 3, 3}));
        bad.add("enc.b", Tensor<float>::zeros({4}));
        bad.add("head.w", Tensor<float>::zeros({8, 3}));  // differs
        bad.add("head.b", Tensor<float>::zeros({2}));
        CHECK_THROWS_AS(agd::load_checkpoint(p, bad), agd::IoError);
    }
    // missing parameter
    {
        ParamStore<float> bad;
        bad.add("enc.w", Tensor<float>::zeros({4, 3, 3, 3}));
        CHECK_THROWS_AS(agd::load_checkpoint(p, bad), agd::IoError);
    }
    // extra parameter in the model
    {
        auto bad = sample_store<float>(2);
        bad.add("extra", Tensor<float>::zeros({3}));
        CHECK_THROWS_AS(agd::load_checkpoint(p, bad), agd::IoError);
    }
    fs::remove_all(dir);
}

TEST_CASE("checkpoint converts dtype on load") {
    const fs::path dir = fs::temp_directory_path() / "agd_ckpt_dtype";
    fs::create_directories(dir);
    const fs::path p = dir / "m.ckpt";
    auto psd = sample_store<double>(3);
    agd::save_checkpoint(p, psd);
    auto psf = sample_store<float>(0, true);
    agd::load_checkpoint(p, psf);
    for (size_t t = 0; t < psd.count(); ++t)
        for (size_t i = 0; i < psd.tensors()[t].size(); ++i)
            CHECK(psf.tensors()[t].values()[i] ==
                  doctest::Approx(psd.tensors()[t].values()[i]).epsilon(1e-6));
    fs::remove_all(dir);
}

TEST_CASE("header peek lists tensors without a model") {
    const fs::path dir = fs::temp_directory_path() / "agd_ckpt_peek";
    fs::create_directories(dir);
    const fs::path p = dir / "m.ckpt";
    auto ps = sample_store<float>(5);
    agd::save_checkpoint(p, ps);
    auto header = agd::read_checkpoint_header(p);
    CHECK(header["dtype"] == "f32");
    CHECK(header["tensors"].size() == 4);
    CHECK(header["tensors"][0]["name"] == "enc.w");
    fs::remove_all(dir);
}
