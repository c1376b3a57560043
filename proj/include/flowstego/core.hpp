#pragma once

// Core domain types shared by the whole library: latent vectors, time
// grids, messages, keyed deterministic randomness and trajectory records.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace flowstego {

// ---------------------------------------------------------------------------
// Errors

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CapacityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IntegrationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// LatentVector

struct LatentVector {
    std::vector<double> data;
    // (rows, cols) for grid-structured latents; required by blur/resize.
    std::optional<std::pair<std::size_t, std::size_t>> shape_hint;

    LatentVector() = default;
    explicit LatentVector(std::size_t d) : data(d, 0.0) {}
    explicit LatentVector(std::vector<double> v) : data(std::move(v)) {}
    LatentVector(std::vector<double> v, std::size_t rows, std::size_t cols)
        : data(std::move(v)), shape_hint(std::make_pair(rows, cols)) {
        if (rows * cols != data.size())
            throw ShapeError("shape_hint does not match dim");
    }

    std::size_t dim() const { return data.size(); }
    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

// ---------------------------------------------------------------------------
// TimeGrid: N uniform Euler steps over [0, 1].

struct TimeGrid {
    std::size_t n_steps = 0;
    std::vector<double> nodes;  // n_steps + 1 nodes, nodes[0]=0, nodes[N]=1

    explicit TimeGrid(std::size_t n) : n_steps(n) {
        if (n < 1) throw ConfigError("TimeGrid needs at least one step");
        nodes.resize(n + 1);
        for (std::size_t k = 0; k <= n; ++k)
            nodes[k] = static_cast<double>(k) / static_cast<double>(n);
        nodes[n] = 1.0;
    }

    double dt() const { return 1.0 / static_cast<double>(n_steps); }
    double t(std::size_t k) const { return nodes[k]; }
};

// ---------------------------------------------------------------------------
// Message

struct Message {
    std::vector<std::uint8_t> bits;  // each element 0 or 1

    Message() = default;
    explicit Message(std::vector<std::uint8_t> b) : bits(std::move(b)) {
        for (auto v : bits)
            if (v > 1) throw ConfigError("message bits must be 0 or 1");
        if (bits.empty()) throw ConfigError("message must have length >= 1");
    }

    std::size_t length() const { return bits.size(); }
    bool operator==(const Message& o) const { return bits == o.bits; }
};

// ---------------------------------------------------------------------------
// StegoKey and keyed randomness.
//
// Draws are produced by a counter-mode keyed hash over
// (key_bytes, counter_domain, index), so they are order-independent,
// reentrant, and identical for identical inputs.

struct StegoKey {
    std::vector<std::uint8_t> key_bytes;
    std::string counter_domain;

    StegoKey(std::vector<std::uint8_t> bytes, std::string domain = "")
        : key_bytes(std::move(bytes)), counter_domain(std::move(domain)) {
        if (key_bytes.size() < 16)
            throw ConfigError("stego key must be at least 16 bytes");
    }

    static StegoKey from_string(std::string_view s, std::string domain = "") {
        return StegoKey(std::vector<std::uint8_t>(s.begin(), s.end()),
                        std::move(domain));
    }

    StegoKey with_domain(std::string domain) const {
        return StegoKey(key_bytes, std::move(domain));
    }
};

namespace detail {

inline std::uint64_t fnv1a64(std::uint64_t h, const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t keyed_word(const StegoKey& key, std::uint64_t index) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    h = fnv1a64(h, key.key_bytes.data(), key.key_bytes.size());
    const std::uint8_t sep = 0xff;
    h = fnv1a64(h, &sep, 1);
    h = fnv1a64(h, key.counter_domain.data(), key.counter_domain.size());
    h = fnv1a64(h, &sep, 1);
    std::uint8_t idx[8];
    for (int i = 0; i < 8; ++i) idx[i] = static_cast<std::uint8_t>(index >> (8 * i));
    h = fnv1a64(h, idx, 8);
    h += 0x9e3779b97f4a7c15ULL;
    return mix64(mix64(h));
}

}  // namespace detail

// Deterministic uniform draw in [0, 1).
inline double keyed_uniform(const StegoKey& key, std::uint64_t index) {
    return static_cast<double>(detail::keyed_word(key, index) >> 11) * 0x1.0p-53;
}

// ---------------------------------------------------------------------------
// TrajectoryRecord

enum class Direction { Forward, Reverse };

struct TrajectoryRecord {
    // states[k] is the latent at node t_k, regardless of direction.
    std::vector<LatentVector> states;
    // For Forward: velocities[n] is the field value used at (x_n, t_n).
    // For Reverse: velocities[n] is the field value used at (x_{n+1}, t_{n+1}).
    std::vector<LatentVector> velocities;
    TimeGrid grid;
    Direction direction = Direction::Forward;

    const LatentVector& initial() const { return states.front(); }
    const LatentVector& terminal() const { return states.back(); }
};

}  // namespace flowstego
