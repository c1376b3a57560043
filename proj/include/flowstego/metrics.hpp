#pragma once

// Quantitative evaluation: extraction accuracy, inversion error, trajectory
// straightness, cover-vs-stego detection error, and Frechet/energy
// distribution distances standing in for FID.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "core.hpp"
#include "stats.hpp"

namespace flowstego {

// acc = 1 - hamming(M, M_hat) / L
inline double extraction_accuracy(const Message& m, const Message& m_hat) {
    if (m.length() != m_hat.length())
        throw ConfigError("extraction_accuracy: length mismatch");
    std::size_t mismatches = 0;
    for (std::size_t i = 0; i < m.length(); ++i)
        if (m.bits[i] != m_hat.bits[i]) ++mismatches;
    return 1.0 - static_cast<double>(mismatches) / static_cast<double>(m.length());
}

struct InversionError {
    double l2 = 0.0;
    double linf = 0.0;
    std::vector<double> per_dim;
};

inline InversionError inversion_error(const LatentVector& x0, const LatentVector& x0_hat) {
    if (x0.dim() != x0_hat.dim()) throw ConfigError("inversion_error: dim mismatch");
    InversionError e;
    e.per_dim.resize(x0.dim());
    double s = 0.0;
    for (std::size_t i = 0; i < x0.dim(); ++i) {
        double d = std::abs(x0_hat[i] - x0[i]);
        e.per_dim[i] = d;
        e.linf = std::max(e.linf, d);
        s += d * d;
    }
    e.l2 = std::sqrt(s);
    return e;
}

// Normalized mean chord deviation over interior nodes; 0 iff the trajectory
// lies on the straight line from x0 to xT.
inline double straightness(const TrajectoryRecord& traj) {
    const std::size_t n = traj.grid.n_steps;
    if (n < 2) throw ConfigError("straightness needs at least 2 steps");
    const LatentVector& x0 = traj.states.front();
    const LatentVector& xT = traj.states.back();
    double chord = 0.0;
    for (std::size_t i = 0; i < x0.dim(); ++i) {
        double d = xT[i] - x0[i];
        chord += d * d;
    }
    chord = std::sqrt(chord);
    if (chord == 0.0) return 0.0;  // degenerate by convention
    double acc = 0.0;
    for (std::size_t k = 1; k < n; ++k) {
        double t = traj.grid.t(k);
        double dev = 0.0;
        for (std::size_t i = 0; i < x0.dim(); ++i) {
            double ref = (1.0 - t) * x0[i] + t * xT[i];
            double d = traj.states[k][i] - ref;
            dev += d * d;
        }
        acc += std::sqrt(dev) / chord;
    }
    return acc / static_cast<double>(n - 1);
}

// ---------------------------------------------------------------------------
// Detection error P_E = (P_FA + P_MD) / 2 of a linear detector.
//
// The detector is a ridge-regularized Fisher direction (pooled-covariance
// whitened mean difference) with the threshold chosen on the validation
// split; P_E is reported on the test split. Whitening makes the detector
// invariant under invertible affine maps applied to both classes.

struct DetectionSplit {
    std::size_t train = 0, val = 0, test = 0;
};

struct DetectionResult {
    double p_fa = 0.0;
    double p_md = 0.0;
    double p_e = 0.0;
};

inline DetectionResult detection_error(const std::vector<LatentVector>& cover,
                                       const std::vector<LatentVector>& stego,
                                       const DetectionSplit& split) {
    const std::size_t need = split.train + split.val + split.test;
    if (cover.size() < need || stego.size() < need)
        throw ConfigError("detection_error: not enough samples for the split");
    double imbalance = std::abs(static_cast<double>(cover.size()) -
                                static_cast<double>(stego.size())) /
                       static_cast<double>(std::max(cover.size(), stego.size()));
    if (imbalance > 0.10) throw ConfigError("detection_error: class imbalance above 10%");
    const std::size_t d = cover[0].dim();

    auto mean_of = [&](const std::vector<LatentVector>& xs, std::size_t lo, std::size_t hi) {
        Eigen::VectorXd m = Eigen::VectorXd::Zero(d);
        for (std::size_t i = lo; i < hi; ++i)
            m += Eigen::Map<const Eigen::VectorXd>(xs[i].data.data(), d);
        return Eigen::VectorXd(m / static_cast<double>(hi - lo));
    };
    Eigen::VectorXd mu_c = mean_of(cover, 0, split.train);
    Eigen::VectorXd mu_s = mean_of(stego, 0, split.train);

    Eigen::MatrixXd pooled = Eigen::MatrixXd::Zero(d, d);
    auto accumulate = [&](const std::vector<LatentVector>& xs, const Eigen::VectorXd& mu) {
        for (std::size_t i = 0; i < split.train; ++i) {
            Eigen::VectorXd c =
                Eigen::Map<const Eigen::VectorXd>(xs[i].data.data(), d) - mu;
            pooled += c * c.transpose();
        }
    };
    accumulate(cover, mu_c);
    accumulate(stego, mu_s);
    pooled /= static_cast<double>(2 * split.train - 2);
    pooled += 1e-6 * Eigen::MatrixXd::Identity(d, d);
    Eigen::VectorXd w = pooled.ldlt().solve(mu_s - mu_c);

    auto score = [&](const LatentVector& x) {
        return w.dot(Eigen::Map<const Eigen::VectorXd>(x.data.data(), d));
    };

    // Threshold candidates: midpoints of the sorted validation scores.
    std::vector<double> val_scores;
    for (std::size_t i = split.train; i < split.train + split.val; ++i) {
        val_scores.push_back(score(cover[i]));
        val_scores.push_back(score(stego[i]));
    }
    std::vector<double> candidates = val_scores;
    std::sort(candidates.begin(), candidates.end());
    std::vector<double> thresholds{candidates.front() - 1.0};
    for (std::size_t i = 0; i + 1 < candidates.size(); ++i)
        thresholds.push_back(0.5 * (candidates[i] + candidates[i + 1]));
    thresholds.push_back(candidates.back() + 1.0);

    auto error_at = [&](double thr, std::size_t lo, std::size_t hi) {
        std::size_t fa = 0, md = 0;
        for (std::size_t i = lo; i < hi; ++i) {
            if (score(cover[i]) > thr) ++fa;   // cover called stego
            if (score(stego[i]) <= thr) ++md;  // stego called cover
        }
        double n = static_cast<double>(hi - lo);
        return DetectionResult{static_cast<double>(fa) / n, static_cast<double>(md) / n,
                               0.5 * (fa + md) / n};
    };

    double best_thr = thresholds.front();
    double best_err = 1.0;
    for (double thr : thresholds) {
        double err = error_at(thr, split.train, split.train + split.val).p_e;
        if (err < best_err) {
            best_err = err;
            best_thr = thr;
        }
    }
    return error_at(best_thr, split.train + split.val, split.train + split.val + split.test);
}

// ---------------------------------------------------------------------------
// Distribution distances between two sample sets: squared Frechet distance
// between Gaussian fits plus an energy-distance variant. Both are explicit
// stand-ins for FID on raw latents.

struct DistDistance {
    double frechet2 = 0.0;
    double energy = 0.0;
    bool covariance_regularized = false;
};

namespace detail {

inline Eigen::MatrixXd spd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

inline void gaussian_fit(const std::vector<LatentVector>& xs, Eigen::VectorXd& mu,
                         Eigen::MatrixXd& cov) {
    const std::size_t n = xs.size(), d = xs[0].dim();
    mu = Eigen::VectorXd::Zero(d);
    for (const auto& x : xs) mu += Eigen::Map<const Eigen::VectorXd>(x.data.data(), d);
    mu /= static_cast<double>(n);
    cov = Eigen::MatrixXd::Zero(d, d);
    for (const auto& x : xs) {
        Eigen::VectorXd c = Eigen::Map<const Eigen::VectorXd>(x.data.data(), d) - mu;
        cov += c * c.transpose();
    }
    cov /= static_cast<double>(n - 1);
}

inline double energy_distance(const std::vector<LatentVector>& a,
                              const std::vector<LatentVector>& b) {
    // V-statistic on a deterministic stride subsample capped at 512 points.
    auto subsample = [](const std::vector<LatentVector>& xs) {
        std::vector<const LatentVector*> out;
        std::size_t stride = std::max<std::size_t>(1, xs.size() / 512);
        for (std::size_t i = 0; i < xs.size(); i += stride) out.push_back(&xs[i]);
        return out;
    };
    auto sa = subsample(a), sb = subsample(b);
    auto dist = [](const LatentVector& x, const LatentVector& y) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.dim(); ++i) {
            double d = x[i] - y[i];
            s += d * d;
        }
        return std::sqrt(s);
    };
    auto cross = [&](const auto& u, const auto& v) {
        double s = 0.0;
        for (const auto* x : u)
            for (const auto* y : v) s += dist(*x, *y);
        return s / (static_cast<double>(u.size()) * static_cast<double>(v.size()));
    };
    return 2.0 * cross(sa, sb) - cross(sa, sa) - cross(sb, sb);
}

}  // namespace detail

inline DistDistance dist_distance(const std::vector<LatentVector>& a,
                                  const std::vector<LatentVector>& b) {
    if (a.size() < 100 || b.size() < 100)
        throw ConfigError("dist_distance needs at least 100 samples per set");
    if (a[0].dim() != b[0].dim()) throw ConfigError("dist_distance: dim mismatch");
    DistDistance out;

    Eigen::VectorXd mu_a, mu_b;
    Eigen::MatrixXd cov_a, cov_b;
    detail::gaussian_fit(a, mu_a, cov_a);
    detail::gaussian_fit(b, mu_b, cov_b);
    const std::size_t d = a[0].dim();
    double min_eig = std::min(
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(cov_a).eigenvalues().minCoeff(),
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(cov_b).eigenvalues().minCoeff());
    if (min_eig < 1e-10) {
        cov_a += 1e-6 * Eigen::MatrixXd::Identity(d, d);
        cov_b += 1e-6 * Eigen::MatrixXd::Identity(d, d);
        out.covariance_regularized = true;
    }
    Eigen::MatrixXd sqrt_a = detail::spd_sqrt(cov_a);
    Eigen::MatrixXd inner = detail::spd_sqrt(sqrt_a * cov_b * sqrt_a);
    double tr = (cov_a + cov_b - 2.0 * inner).trace();
    out.frechet2 = (mu_a - mu_b).squaredNorm() + std::max(0.0, tr);
    out.energy = detail::energy_distance(a, b);
    return out;
}

}  // namespace flowstego
