#pragma once

// Corruption simulation: quantizing codec round trip (the VAE stand-in) and
// a channel of ordered distortions with keyed noise. All operations act on
// the latent directly; blur and resize require a grid shape_hint.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <variant>
#include <vector>

#include "core.hpp"
#include "stats.hpp"

namespace flowstego {

// Clip to [lo, hi] and uniform-quantize to 2^bits bin centers. Idempotent.
inline LatentVector codec_roundtrip(const LatentVector& x, int bits, double lo, double hi) {
    if (!(lo < hi)) throw ConfigError("codec range: lo must be < hi");
    if (bits < 1 || bits > 16) throw ConfigError("codec bits must be in [1, 16]");
    const double levels = static_cast<double>(1u << bits);
    const double step = (hi - lo) / levels;
    LatentVector out(x.dim());
    out.shape_hint = x.shape_hint;
    for (std::size_t i = 0; i < x.dim(); ++i) {
        double v = std::min(std::max(x[i], lo), hi);
        double idx = std::floor((v - lo) / step);
        idx = std::min(std::max(idx, 0.0), levels - 1.0);
        out[i] = lo + (idx + 0.5) * step;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Distortions.

struct GaussianNoiseOp {
    double stddev = 0.0;
};
struct QuantizeOp {
    int bits = 8;
    double lo = -4.0, hi = 4.0;
};
struct MedianBlurOp {
    int k = 3;
};
struct GaussianBlurOp {
    int k = 3;
};
struct ResizeOp {
    double scale = 1.0;
};

using Distortion =
    std::variant<GaussianNoiseOp, QuantizeOp, MedianBlurOp, GaussianBlurOp, ResizeOp>;

struct ChannelSpec {
    std::vector<Distortion> ops;
    std::uint64_t seed = 0;
};

namespace detail {

inline std::pair<std::size_t, std::size_t> require_shape(const LatentVector& x,
                                                         const char* what) {
    if (!x.shape_hint)
        throw ShapeError(std::string(what) + " requires a grid-shaped latent");
    return *x.shape_hint;
}

inline std::size_t reflect_index(long i, long n) {
    // Symmetric reflection: ... c b a | a b c ... | c b a ...
    if (n == 1) return 0;
    long period = 2 * n;
    long m = ((i % period) + period) % period;
    if (m >= n) m = period - 1 - m;
    return static_cast<std::size_t>(m);
}

inline LatentVector median_blur(const LatentVector& x, int k) {
    auto [rows, cols] = require_shape(x, "median_blur");
    if (k < 1 || k % 2 == 0) throw ConfigError("median blur kernel must be odd");
    const long h = static_cast<long>(rows), w = static_cast<long>(cols);
    const long r = k / 2;
    LatentVector out(x.dim());
    out.shape_hint = x.shape_hint;
    std::vector<double> window;
    window.reserve(static_cast<std::size_t>(k) * k);
    for (long i = 0; i < h; ++i)
        for (long j = 0; j < w; ++j) {
            window.clear();
            for (long di = -r; di <= r; ++di)
                for (long dj = -r; dj <= r; ++dj) {
                    std::size_t ii = reflect_index(i + di, h);
                    std::size_t jj = reflect_index(j + dj, w);
                    window.push_back(x[ii * cols + jj]);
                }
            auto mid = window.begin() + window.size() / 2;
            std::nth_element(window.begin(), mid, window.end());
            out[static_cast<std::size_t>(i) * cols + j] = *mid;
        }
    return out;
}

inline LatentVector gaussian_blur(const LatentVector& x, int k) {
    auto [rows, cols] = require_shape(x, "gaussian_blur");
    if (k < 1 || k % 2 == 0) throw ConfigError("gaussian blur kernel must be odd");
    const long r = k / 2;
    const double sigma = 0.3 * ((k - 1) * 0.5 - 1.0) + 0.8;
    std::vector<double> kernel(k);
    double sum = 0.0;
    for (long i = -r; i <= r; ++i) {
        kernel[i + r] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        sum += kernel[i + r];
    }
    for (double& v : kernel) v /= sum;

    const long h = static_cast<long>(rows), w = static_cast<long>(cols);
    LatentVector tmp(x.dim()), out(x.dim());
    out.shape_hint = x.shape_hint;
    for (long i = 0; i < h; ++i)
        for (long j = 0; j < w; ++j) {
            double acc = 0.0;
            for (long dj = -r; dj <= r; ++dj)
                acc += kernel[dj + r] * x[i * w + reflect_index(j + dj, w)];
            tmp[i * w + j] = acc;
        }
    for (long i = 0; i < h; ++i)
        for (long j = 0; j < w; ++j) {
            double acc = 0.0;
            for (long di = -r; di <= r; ++di)
                acc += kernel[di + r] * tmp[reflect_index(i + di, h) * cols + j];
            out[static_cast<std::size_t>(i) * cols + j] = acc;
        }
    return out;
}

inline std::vector<double> bilinear_resample(const std::vector<double>& src, long sh,
                                             long sw, long dh, long dw) {
    std::vector<double> dst(static_cast<std::size_t>(dh) * dw);
    for (long i = 0; i < dh; ++i)
        for (long j = 0; j < dw; ++j) {
            double sy = (i + 0.5) * static_cast<double>(sh) / dh - 0.5;
            double sx = (j + 0.5) * static_cast<double>(sw) / dw - 0.5;
            long y0 = static_cast<long>(std::floor(sy));
            long x0 = static_cast<long>(std::floor(sx));
            double fy = sy - y0, fx = sx - x0;
            auto at = [&](long y, long x) {
                y = std::clamp(y, 0L, sh - 1);
                x = std::clamp(x, 0L, sw - 1);
                return src[static_cast<std::size_t>(y) * sw + x];
            };
            dst[static_cast<std::size_t>(i) * dw + j] =
                (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
        }
    return dst;
}

inline LatentVector resize_roundtrip(const LatentVector& x, double scale) {
    auto [rows, cols] = require_shape(x, "resize");
    if (!(scale > 0.0)) throw ConfigError("resize scale must be positive");
    long h = static_cast<long>(rows), w = static_cast<long>(cols);
    long sh = std::max(1L, static_cast<long>(std::lround(h * scale)));
    long sw = std::max(1L, static_cast<long>(std::lround(w * scale)));
    auto scaled = bilinear_resample(x.data, h, w, sh, sw);
    LatentVector out(x.dim());
    out.data = bilinear_resample(scaled, sh, sw, h, w);
    out.shape_hint = x.shape_hint;
    return out;
}

}  // namespace detail

// Apply distortions in listed order. Deterministic given (x, spec, seed).
inline LatentVector apply_channel(const LatentVector& x, const ChannelSpec& spec) {
    std::vector<std::uint8_t> key_bytes(16, 0);
    for (int i = 0; i < 8; ++i)
        key_bytes[i] = static_cast<std::uint8_t>(spec.seed >> (8 * i));
    LatentVector cur = x;
    for (std::size_t op_idx = 0; op_idx < spec.ops.size(); ++op_idx) {
        const auto& op = spec.ops[op_idx];
        if (const auto* noise = std::get_if<GaussianNoiseOp>(&op)) {
            if (noise->stddev < 0.0) throw ConfigError("noise stddev must be >= 0");
            if (noise->stddev > 0.0) {
                StegoKey key(key_bytes, "chan/" + std::to_string(op_idx));
                for (std::size_t i = 0; i < cur.dim(); ++i)
                    cur[i] += noise->stddev * keyed_normal(key, i);
            }
        } else if (const auto* quant = std::get_if<QuantizeOp>(&op)) {
            cur = codec_roundtrip(cur, quant->bits, quant->lo, quant->hi);
        } else if (const auto* mb = std::get_if<MedianBlurOp>(&op)) {
            cur = detail::median_blur(cur, mb->k);
        } else if (const auto* gb = std::get_if<GaussianBlurOp>(&op)) {
            cur = detail::gaussian_blur(cur, gb->k);
        } else if (const auto* rs = std::get_if<ResizeOp>(&op)) {
            cur = detail::resize_roundtrip(cur, rs->scale);
        }
    }
    return cur;
}

}  // namespace flowstego
