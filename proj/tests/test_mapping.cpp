#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "flowstego/mapping.hpp"
#include "flowstego/metrics.hpp"
#include "flowstego/stats.hpp"

using namespace flowstego;

namespace {
StegoKey test_key(std::string domain = "") {
    return StegoKey::from_string("mapping-test-key", std::move(domain));
}

Message random_message(std::mt19937_64& rng, std::size_t length) {
    std::uniform_int_distribution<int> bit(0, 1);
    std::vector<std::uint8_t> bits(length);
    for (auto& b : bits) b = static_cast<std::uint8_t>(bit(rng));
    return Message(std::move(bits));
}
}  // namespace

TEST_CASE("embedding encodes the bit in the coordinate sign") {
    StegoKey key = test_key();
    MappingParams params{1, false};
    double g = std::abs(keyed_normal(key.with_domain("/mag"), 0));
    LatentVector one = embed_message(Message({std::vector<std::uint8_t>{1}}), key, params);
    LatentVector zero = embed_message(Message({std::vector<std::uint8_t>{0}}), key, params);
    REQUIRE(one[0] == g);
    REQUIRE(zero[0] == -g);
}

TEST_CASE("embedding with identity permutation follows the sign rule per dimension") {
    StegoKey key = test_key();
    MappingParams params{2, false};
    StegoKey mag = key.with_domain("/mag");
    double g0 = std::abs(keyed_normal(mag, 0));
    double g1 = std::abs(keyed_normal(mag, 1));
    LatentVector x = embed_message(Message({std::vector<std::uint8_t>{0, 1}}), key, params);
    REQUIRE(x[0] == -g0);
    REQUIRE(x[1] == g1);
}

TEST_CASE("embedded coordinates are standard normal") {
    std::mt19937_64 rng(7);
    MappingParams params{100, true};
    std::vector<double> coords;
    coords.reserve(100000);
    for (int trial = 0; trial < 1000; ++trial) {
        StegoKey key = test_key("t" + std::to_string(trial));
        LatentVector x = embed_message(random_message(rng, 100), key, params);
        for (double v : x.data) coords.push_back(v);
    }
    double ks = ks_statistic(coords, [](double v) { return normal_cdf(v); });
    REQUIRE(ks < 0.01);
}

TEST_CASE("round trip recovers every message exhaustively at short lengths") {
    MappingParams params{16, true};
    for (std::size_t length : {1u, 5u, 12u}) {
        StegoKey key = test_key("exhaustive" + std::to_string(length));
        for (std::uint64_t m = 0; m < (1ull << length); ++m) {
            std::vector<std::uint8_t> bits(length);
            for (std::size_t j = 0; j < length; ++j) bits[j] = (m >> j) & 1;
            Message msg(bits);
            LatentVector x = embed_message(msg, key, params);
            REQUIRE(extract_message(x, key, params, length) == msg);
        }
    }
}

TEST_CASE("round trip recovers random long messages") {
    std::mt19937_64 rng(11);
    MappingParams params{256, true};
    for (int trial = 0; trial < 50; ++trial) {
        StegoKey key = test_key("long" + std::to_string(trial));
        Message msg = random_message(rng, 200);
        LatentVector x = embed_message(msg, key, params);
        REQUIRE(extract_message(x, key, params, msg.length()) == msg);
    }
}

TEST_CASE("extraction is a pure sign read") {
    StegoKey key = test_key();
    MappingParams params{2, false};
    LatentVector x(std::vector<double>{-0.01, 5.0});
    Message m = extract_message(x, key, params, 2);
    REQUIRE(m.bits == std::vector<std::uint8_t>{0, 1});
}

TEST_CASE("extraction only depends on coordinate signs") {
    std::mt19937_64 rng(13);
    MappingParams params{64, true};
    StegoKey key = test_key("scale");
    Message msg = random_message(rng, 48);
    LatentVector x = embed_message(msg, key, params);
    for (double lambda : {1e-6, 0.5, 3.0, 1e6}) {
        LatentVector scaled = x;
        for (auto& v : scaled.data) v *= lambda;
        REQUIRE(extract_message(scaled, key, params, msg.length()) == msg);
    }
}

TEST_CASE("capacity overflows are rejected") {
    StegoKey key = test_key();
    MappingParams params{4, true};
    std::vector<std::uint8_t> bits(5, 1);
    REQUIRE_THROWS_AS(embed_message(Message(bits), key, params), CapacityError);
    LatentVector x(3);
    REQUIRE_THROWS_AS(extract_message(x, key, params, 2), CapacityError);
}

TEST_CASE("tolerance radius is the smallest message magnitude") {
    StegoKey key = test_key();
    MappingParams params{2, false};
    LatentVector x(std::vector<double>{0.7, -1.2});
    REQUIRE(tolerance_radius(x, key, params, 2) == 0.7);
    LatentVector single(std::vector<double>{0.3});
    MappingParams p1{1, false};
    REQUIRE(tolerance_radius(single, key, p1, 1) == 0.3);
}

TEST_CASE("perturbations below the tolerance radius never flip bits") {
    std::mt19937_64 rng(17);
    MappingParams params{64, true};
    std::uniform_real_distribution<double> sign(-1.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        StegoKey key = test_key("tol" + std::to_string(trial));
        Message msg = random_message(rng, 32);
        LatentVector x = embed_message(msg, key, params);
        double r = tolerance_radius(x, key, params, msg.length());
        REQUIRE(r > 0.0);

        LatentVector below = x;
        for (auto& v : below.data) v += 0.99 * r * (sign(rng) > 0 ? 1.0 : -1.0);
        REQUIRE(extract_message(below, key, params, msg.length()) == msg);

        // Push the minimizing coordinate just past the radius toward zero.
        auto dims = detail::message_dims(key, params, msg.length());
        std::size_t weakest = dims[0];
        for (std::size_t i : dims)
            if (std::abs(x[i]) < std::abs(x[weakest])) weakest = i;
        LatentVector above = x;
        above[weakest] -= 1.01 * r * (x[weakest] >= 0 ? 1.0 : -1.0);
        Message flipped = extract_message(above, key, params, msg.length());
        REQUIRE(extraction_accuracy(msg, flipped) < 1.0);
    }
}

TEST_CASE("bit errors grow with additive noise level") {
    std::mt19937_64 rng(19);
    MappingParams params{64, true};
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> mean_acc;
    for (double sigma : {0.0, 0.05, 0.2, 0.8}) {
        std::vector<double> accs;
        for (int trial = 0; trial < 1000; ++trial) {
            StegoKey key = test_key("noise" + std::to_string(trial));
            Message msg = random_message(rng, 48);
            LatentVector x = embed_message(msg, key, params);
            for (auto& v : x.data) v += sigma * gauss(rng);
            accs.push_back(
                extraction_accuracy(msg, extract_message(x, key, params, msg.length())));
        }
        mean_acc.push_back(mean(accs));
    }
    for (std::size_t i = 0; i + 1 < mean_acc.size(); ++i)
        REQUIRE(mean_acc[i + 1] <= mean_acc[i] + 1e-12);
    REQUIRE(mean_acc.front() == 1.0);
    REQUIRE(mean_acc.back() < 0.95);
}

TEST_CASE("keyed permutation is a permutation and key dependent") {
    StegoKey a = test_key("perm-a");
    StegoKey b = test_key("perm-b");
    auto pa = keyed_permutation(a, 128);
    auto pb = keyed_permutation(b, 128);
    std::vector<bool> seen(128, false);
    for (std::size_t i : pa) {
        REQUIRE(i < 128);
        REQUIRE(!seen[i]);
        seen[i] = true;
    }
    REQUIRE(pa != pb);
    REQUIRE(pa == keyed_permutation(a, 128));
}
