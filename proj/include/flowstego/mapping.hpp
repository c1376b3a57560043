#pragma once

// Message mapping F and its inverse: a keyed, distribution-preserving
// sign/half-normal encoding of bits into a standard-normal latent.
//
// Each coordinate carries at most one bit. The magnitude of coordinate i is
// |Phi^-1(u_i)| drawn from the keyed stream, the sign carries the bit, and
// a keyed permutation routes bit j to dimension pi(j). Unused dimensions are
// filled with full signed keyed normals, so the complete latent is exactly
// standard normal when the bits are unbiased.

#include <algorithm>
#include <cstdint>
#include <vector>

#include "core.hpp"
#include "stats.hpp"

namespace flowstego {

struct MappingParams {
    std::size_t latent_dim = 0;
    bool permutation_seeded = true;  // identity permutation when false
};

// Keyed Fisher-Yates permutation of [0, d).
inline std::vector<std::size_t> keyed_permutation(const StegoKey& key, std::size_t d) {
    StegoKey pk = key.with_domain(key.counter_domain + "/perm");
    std::vector<std::size_t> perm(d);
    for (std::size_t i = 0; i < d; ++i) perm[i] = i;
    for (std::size_t i = d; i-- > 1;) {
        double u = keyed_uniform(pk, i);
        auto j = static_cast<std::size_t>(u * static_cast<double>(i + 1));
        if (j > i) j = i;
        std::swap(perm[i], perm[j]);
    }
    return perm;
}

namespace detail {

inline std::vector<std::size_t> message_dims(const StegoKey& key,
                                             const MappingParams& params,
                                             std::size_t length) {
    if (params.permutation_seeded) {
        auto perm = keyed_permutation(key, params.latent_dim);
        perm.resize(length);
        return perm;
    }
    std::vector<std::size_t> dims(length);
    for (std::size_t j = 0; j < length; ++j) dims[j] = j;
    return dims;
}

}  // namespace detail

inline LatentVector embed_message(const Message& m, const StegoKey& key,
                                  const MappingParams& params) {
    if (m.length() > params.latent_dim)
        throw CapacityError("message longer than latent dimension");
    StegoKey mag_key = key.with_domain(key.counter_domain + "/mag");
    StegoKey fill_key = key.with_domain(key.counter_domain + "/fill");

    auto dims = detail::message_dims(key, params, m.length());
    std::vector<bool> carries(params.latent_dim, false);
    LatentVector x(params.latent_dim);
    for (std::size_t j = 0; j < m.length(); ++j) {
        std::size_t i = dims[j];
        carries[i] = true;
        double g = std::abs(keyed_normal(mag_key, i));
        x[i] = m.bits[j] ? g : -g;
    }
    for (std::size_t i = 0; i < params.latent_dim; ++i)
        if (!carries[i]) x[i] = keyed_normal(fill_key, i);
    return x;
}

inline Message extract_message(const LatentVector& x_hat, const StegoKey& key,
                               const MappingParams& params, std::size_t length) {
    if (x_hat.dim() != params.latent_dim)
        throw CapacityError("latent dimension does not match mapping params");
    if (length > params.latent_dim)
        throw CapacityError("message longer than latent dimension");
    auto dims = detail::message_dims(key, params, length);
    std::vector<std::uint8_t> bits(length);
    for (std::size_t j = 0; j < length; ++j)
        bits[j] = x_hat[dims[j]] >= 0.0 ? 1 : 0;  // ties at 0 decode as 1
    return Message(std::move(bits));
}

// Largest infinity-norm perturbation of the embedded latent that is
// guaranteed not to flip any message bit.
inline double tolerance_radius(const LatentVector& x0, const StegoKey& key,
                               const MappingParams& params, std::size_t length) {
    auto dims = detail::message_dims(key, params, length);
    double r = std::numeric_limits<double>::infinity();
    for (std::size_t i : dims) r = std::min(r, std::abs(x0[i]));
    return r;
}

}  // namespace flowstego
