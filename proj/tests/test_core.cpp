#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <random>
#include <sstream>

#include "flowstego/core.hpp"
#include "flowstego/io.hpp"
#include "flowstego/stats.hpp"

using namespace flowstego;

namespace {
StegoKey test_key(std::string domain = "") {
    return StegoKey::from_string("0123456789abcdef", std::move(domain));
}
}  // namespace

TEST_CASE("keyed_uniform is deterministic") {
    StegoKey k = test_key();
    REQUIRE(keyed_uniform(k, 0) == keyed_uniform(k, 0));
    REQUIRE(keyed_uniform(k, 12345) == keyed_uniform(k, 12345));
}

TEST_CASE("keyed_uniform separates domains") {
    StegoKey mag = test_key("mag");
    StegoKey perm = test_key("perm");
    REQUIRE(keyed_uniform(mag, 7) != keyed_uniform(perm, 7));
}

TEST_CASE("keyed_uniform separates indices and keys") {
    StegoKey k = test_key();
    REQUIRE(keyed_uniform(k, 0) != keyed_uniform(k, 1));
    StegoKey k2 = StegoKey::from_string("fedcba9876543210");
    REQUIRE(keyed_uniform(k, 0) != keyed_uniform(k2, 0));
}

TEST_CASE("keyed_uniform draws look uniform") {
    StegoKey k = test_key("uniformity");
    const std::size_t n = 100000;
    std::vector<double> draws(n);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        draws[i] = keyed_uniform(k, i);
        REQUIRE(draws[i] >= 0.0);
        REQUIRE(draws[i] < 1.0);
        sum += draws[i];
    }
    REQUIRE(std::abs(sum / n - 0.5) < 0.005);
    double ks = ks_statistic(draws, [](double x) { return x; });
    REQUIRE(ks < 0.01);
}

TEST_CASE("short keys are rejected") {
    REQUIRE_THROWS_AS(StegoKey::from_string("too short"), ConfigError);
}

TEST_CASE("message bits are validated") {
    REQUIRE_THROWS_AS(Message(std::vector<std::uint8_t>{0, 2}), ConfigError);
    REQUIRE_THROWS_AS(Message(std::vector<std::uint8_t>{}), ConfigError);
}

TEST_CASE("time grid nodes are uniform over [0,1]") {
    for (std::size_t n : {1u, 7u, 20u, 100u}) {
        TimeGrid g(n);
        REQUIRE(g.nodes.size() == n + 1);
        REQUIRE(g.t(0) == 0.0);
        REQUIRE(g.t(n) == 1.0);
        for (std::size_t k = 0; k < n; ++k) {
            double gap = g.t(k + 1) - g.t(k);
            REQUIRE(std::abs(gap - 1.0 / n) <= 1e-15);
        }
    }
    REQUIRE_THROWS_AS(TimeGrid(0), ConfigError);
}

TEST_CASE("latent shape hint must match dim") {
    REQUIRE_THROWS_AS(LatentVector(std::vector<double>{1, 2, 3}, 2, 2), ShapeError);
}

TEST_CASE("latent serialization round trip is bit exact") {
    LatentVector v(std::vector<double>{0.0, 1.0, -1.0, 0.5});
    std::stringstream ss;
    write_latent(ss, v);
    LatentVector back = read_latent(ss);
    REQUIRE(back.dim() == 4);
    for (std::size_t i = 0; i < 4; ++i) REQUIRE(back[i] == v[i]);
    REQUIRE(!back.shape_hint.has_value());
}

TEST_CASE("latent serialization preserves shape hints at large dim") {
    LatentVector v(std::vector<double>(16384, 0.25), 128, 128);
    std::stringstream ss;
    write_latent(ss, v);
    LatentVector back = read_latent(ss);
    REQUIRE(back.shape_hint.has_value());
    REQUIRE(back.shape_hint->first == 128);
    REQUIRE(back.shape_hint->second == 128);
    REQUIRE(back.data == v.data);
}

TEST_CASE("latent serialization rejects bad input") {
    SECTION("bad magic") {
        std::stringstream ss;
        ss.write("XXXX", 4);
        ss.write("\0\0\0\0\0\0\0\0", 8);
        REQUIRE_THROWS_AS(read_latent(ss), FormatError);
    }
    SECTION("truncated payload") {
        LatentVector v(std::vector<double>{1.0, 2.0});
        std::stringstream ss;
        write_latent(ss, v);
        std::string raw = ss.str();
        std::stringstream cut(raw.substr(0, raw.size() - 4));
        REQUIRE_THROWS_AS(read_latent(cut), FormatError);
    }
    SECTION("non-finite data refused on write") {
        LatentVector v(std::vector<double>{1.0, std::nan("")});
        std::stringstream ss;
        REQUIRE_THROWS_AS(write_latent(ss, v), FormatError);
    }
}

TEST_CASE("latent serialization round trip on random vectors") {
    std::mt19937_64 rng(42);
    std::normal_distribution<double> gauss(0.0, 10.0);
    std::uniform_int_distribution<std::size_t> dim_dist(1, 257);
    for (int trial = 0; trial < 50; ++trial) {
        LatentVector v(dim_dist(rng));
        for (auto& x : v.data) x = gauss(rng);
        std::stringstream ss;
        write_latent(ss, v);
        LatentVector back = read_latent(ss);
        REQUIRE(back.data == v.data);
    }
}

TEST_CASE("latent file io works through paths") {
    namespace fs = std::filesystem;
    fs::path path = fs::temp_directory_path() / "flowstego_test_latent.fstg";
    LatentVector v(std::vector<double>{3.5, -2.25}, 1, 2);
    write_latent(path.string(), v);
    LatentVector back = read_latent(path.string());
    REQUIRE(back.data == v.data);
    REQUIRE(back.shape_hint == v.shape_hint);
    fs::remove(path);
}

TEST_CASE("normal quantile inverts the normal cdf") {
    for (double p : {1e-6, 0.01, 0.3, 0.5, 0.9, 0.999, 1.0 - 1e-9}) {
        double x = normal_quantile(p);
        REQUIRE(std::abs(normal_cdf(x) - p) < 1e-12);
    }
    REQUIRE(normal_quantile(0.5) == Catch::Approx(0.0).margin(1e-15));
    REQUIRE_THROWS_AS(normal_quantile(0.0), DomainError);
    REQUIRE_THROWS_AS(normal_quantile(1.0), DomainError);
}

TEST_CASE("keyed normal draws match the standard normal") {
    StegoKey k = test_key("normality");
    const std::size_t n = 100000;
    std::vector<double> draws(n);
    for (std::size_t i = 0; i < n; ++i) draws[i] = keyed_normal(k, i);
    double ks = ks_statistic(draws, [](double x) { return normal_cdf(x); });
    REQUIRE(ks < 0.01);
}
