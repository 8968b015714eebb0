#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "oav/tensor.hpp"

using namespace oav;

TEST_CASE("matmul identity") {
    Tensor i2({2, 2}, {1, 0, 0, 1});
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor c = matmul(i2, a);
    REQUIRE(max_abs_diff(c, a) == 0.0);
}

TEST_CASE("matmul 1x2 times 2x1") {
    Tensor a({1, 2}, {1, 2});
    Tensor b({2, 1}, {3, 4});
    Tensor c = matmul(a, b);
    REQUIRE(c.shape == Shape{1, 1});
    REQUIRE(c.data[0] == 11.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
    Rng rng(42);
    Tensor a = rand_normal(rng, {5, 7});
    Tensor b = rand_normal(rng, {7, 3});
    Tensor c = matmul(a, b);
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < 7; ++k) s += a.at2(i, k) * b.at2(k, j);
            REQUIRE(std::abs(c.at2(i, j) - s) < 1e-12);
        }
    }
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tensor a({2, 3});
    Tensor b({4, 2});
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        REQUIRE(msg.find("[2,3]") != std::string::npos);
        REQUIRE(msg.find("[4,2]") != std::string::npos);
    }
}

TEST_CASE("rand_normal golden values for seed 0") {
    // Pinned from the repo's fixed generator (splitmix64 + Box-Muller) on
    // first run; guards against accidental changes to the stream.
    Rng rng(0);
    Tensor t = rand_normal(rng, {2});
    Rng check(0);
    const double u1 = 1.0 - check.uniform01();
    const double u2 = check.uniform01();
    const double expect0 =
        std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    REQUIRE(t.data[0] == expect0);
    REQUIRE(t.data[0] == Catch::Approx(-1.8839083333524405).epsilon(1e-12));
    REQUIRE(t.data[1] == Catch::Approx(0.22760793546360525).epsilon(1e-12));
}

TEST_CASE("rand_normal moments") {
    Rng rng(7);
    Tensor t = rand_normal(rng, {100000});
    double mean = 0.0;
    for (double v : t.data) mean += v;
    mean /= static_cast<double>(t.numel());
    double var = 0.0;
    for (double v : t.data) var += (v - mean) * (v - mean);
    var /= static_cast<double>(t.numel());
    REQUIRE(std::abs(mean) < 0.02);
    REQUIRE(std::abs(std::sqrt(var) - 1.0) < 0.02);
}

TEST_CASE("rand_normal determinism") {
    Rng a(123), b(123);
    Tensor ta = rand_normal(a, {3, 4});
    Tensor tb = rand_normal(b, {3, 4});
    REQUIRE(bitwise_equal(ta, tb));
}

TEST_CASE("elementwise ops match scalar-loop oracles") {
    Rng rng(5);
    Tensor a = rand_normal(rng, {4, 8});
    Tensor b = rand_normal(rng, {4, 8});
    Tensor s = add(a, b);
    Tensor d = sub(a, b);
    Tensor m = scale(a, 2.5);
    for (std::size_t i = 0; i < a.numel(); ++i) {
        REQUIRE(std::abs(s.data[i] - (a.data[i] + b.data[i])) < 1e-12);
        REQUIRE(std::abs(d.data[i] - (a.data[i] - b.data[i])) < 1e-12);
        REQUIRE(std::abs(m.data[i] - 2.5 * a.data[i]) < 1e-12);
    }
}

TEST_CASE("exact sum is order independent") {
    Rng rng(9);
    std::vector<double> xs(257);
    for (double& x : xs) x = rng.normal() * std::pow(10.0, rng.uniform01() * 20.0 - 10.0);
    ExactSum fwd;
    for (double x : xs) fwd.add(x);
    ExactSum rev;
    for (auto it = xs.rbegin(); it != xs.rend(); ++it) rev.add(*it);
    REQUIRE(fwd.result() == rev.result());
    // shuffled
    Rng shuf(11);
    for (std::size_t i = xs.size() - 1; i > 0; --i) {
        std::swap(xs[i], xs[shuf.below(i + 1)]);
    }
    ExactSum mixed;
    for (double x : xs) mixed.add(x);
    REQUIRE(mixed.result() == fwd.result());
}

TEST_CASE("OAVT round trip in both dtypes") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "oav_tensor_test";
    fs::create_directories(dir);
    Rng rng(3);
    Tensor t = rand_normal(rng, {2, 3, 4});

    const std::string p64 = (dir / "t64.oavt").string();
    save_tensor(p64, t, TensorDType::f64);
    Tensor r64 = load_tensor(p64);
    REQUIRE(bitwise_equal(t, r64));

    const std::string p32 = (dir / "t32.oavt").string();
    save_tensor(p32, t, TensorDType::f32);
    Tensor r32 = load_tensor(p32);
    REQUIRE(r32.shape == t.shape);
    REQUIRE(max_abs_diff(t, r32) < 1e-6);
    fs::remove_all(dir);
}

TEST_CASE("OAVT rejects unknown versions and bad magic") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "oav_tensor_test2";
    fs::create_directories(dir);
    const std::string path = (dir / "t.oavt").string();
    Tensor t({2}, {1.0, 2.0});
    save_tensor(path, t);

    // bump the version field
    {
        std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(4);
        std::uint32_t v = 99;
        f.write(reinterpret_cast<const char*>(&v), 4);
    }
    REQUIRE_THROWS_AS(load_tensor(path), FormatError);

    // corrupt the magic
    {
        std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(0);
        f.write("XXXX", 4);
    }
    REQUIRE_THROWS_AS(load_tensor(path), FormatError);
    fs::remove_all(dir);
}
