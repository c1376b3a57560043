#pragma once

// Velocity-field abstraction and exact analytic implementations: the closed
// form rectified-flow marginal field for Gaussian endpoint pairs, constant
// linear-coupling transport, VP-diffusion probability-flow fields for
// Gaussian mixtures, and guidance blending.

#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "core.hpp"
#include "stats.hpp"

namespace flowstego {

// ---------------------------------------------------------------------------
// VelocityField contract: (x, t) -> velocity, t in [0, 1].
// Condition and guidance enter by composing field objects.

class VelocityField {
  public:
    virtual ~VelocityField() = default;
    virtual std::size_t dim() const = 0;
    virtual void eval(std::span<const double> x, double t, std::span<double> out) const = 0;
    virtual std::optional<double> lipschitz_bound() const { return std::nullopt; }

    LatentVector operator()(const LatentVector& x, double t) const {
        LatentVector out(x.dim());
        eval(x.data, t, out.data);
        out.shape_hint = x.shape_hint;
        return out;
    }
};

namespace detail {
inline void check_time(double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw DomainError("field time outside [0,1]");
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Exact rectified-flow marginal field for independent Gaussian endpoints.
//
// Per dimension, with m(t) = (1-t)mu0 + t*mu1 and
// s^2(t) = (1-t)^2 s0^2 + t^2 s1^2:
//   v(x,t) = (mu1 - mu0) + [(t*s1^2 - (1-t)*s0^2) / s^2(t)] * (x - m(t))
// which equals E[X1 - X0 | X_t = x] under the independent coupling.

struct GaussianEndpoints {
    std::vector<double> mu0, sigma0, mu1, sigma1;

    std::size_t dim() const { return mu0.size(); }
    void validate() const {
        if (mu0.size() != sigma0.size() || mu0.size() != mu1.size() ||
            mu0.size() != sigma1.size() || mu0.empty())
            throw ConfigError("GaussianEndpoints: mismatched dims");
        for (double s : sigma0)
            if (!(s > 0)) throw ConfigError("GaussianEndpoints: sigma0 must be > 0");
        for (double s : sigma1)
            if (!(s > 0)) throw ConfigError("GaussianEndpoints: sigma1 must be > 0");
    }

    static GaussianEndpoints isotropic(std::size_t d, double m0, double s0, double m1,
                                       double s1) {
        GaussianEndpoints ep;
        ep.mu0.assign(d, m0);
        ep.sigma0.assign(d, s0);
        ep.mu1.assign(d, m1);
        ep.sigma1.assign(d, s1);
        return ep;
    }
};

class RfGaussianField final : public VelocityField {
  public:
    explicit RfGaussianField(GaussianEndpoints ep) : ep_(std::move(ep)) {
        ep_.validate();
        // Empirical Lipschitz constant in x: max_t max_i |a_i(t)|.
        double lip = 0.0;
        for (int k = 0; k <= 2000; ++k) {
            double t = static_cast<double>(k) / 2000.0;
            for (std::size_t i = 0; i < ep_.dim(); ++i)
                lip = std::max(lip, std::abs(coeff(i, t)));
        }
        lipschitz_ = lip;
    }

    std::size_t dim() const override { return ep_.dim(); }
    std::optional<double> lipschitz_bound() const override { return lipschitz_; }

    void eval(std::span<const double> x, double t, std::span<double> out) const override {
        detail::check_time(t);
        for (std::size_t i = 0; i < ep_.dim(); ++i) {
            double m = (1.0 - t) * ep_.mu0[i] + t * ep_.mu1[i];
            out[i] = (ep_.mu1[i] - ep_.mu0[i]) + coeff(i, t) * (x[i] - m);
        }
    }

    // Exact flow map of this field: x(t) = m(t) + (s(t)/s(0)) * (x0 - mu0).
    LatentVector transport_exact(const LatentVector& x0, double t) const {
        detail::check_time(t);
        LatentVector out(x0.dim());
        for (std::size_t i = 0; i < ep_.dim(); ++i) {
            double m = (1.0 - t) * ep_.mu0[i] + t * ep_.mu1[i];
            out[i] = m + (std(i, t) / ep_.sigma0[i]) * (x0[i] - ep_.mu0[i]);
        }
        out.shape_hint = x0.shape_hint;
        return out;
    }

    // Inverse of the exact flow map.
    LatentVector transport_exact_inverse(const LatentVector& xt, double t) const {
        detail::check_time(t);
        LatentVector out(xt.dim());
        for (std::size_t i = 0; i < ep_.dim(); ++i) {
            double m = (1.0 - t) * ep_.mu0[i] + t * ep_.mu1[i];
            out[i] = ep_.mu0[i] + (ep_.sigma0[i] / std(i, t)) * (xt[i] - m);
        }
        out.shape_hint = xt.shape_hint;
        return out;
    }

    const GaussianEndpoints& endpoints() const { return ep_; }

  private:
    double var(std::size_t i, double t) const {
        double a = (1.0 - t) * ep_.sigma0[i];
        double b = t * ep_.sigma1[i];
        return a * a + b * b;
    }
    double std(std::size_t i, double t) const { return std::sqrt(var(i, t)); }
    double coeff(std::size_t i, double t) const {
        double s0 = ep_.sigma0[i], s1 = ep_.sigma1[i];
        return (t * s1 * s1 - (1.0 - t) * s0 * s0) / var(i, t);
    }

    GaussianEndpoints ep_;
    double lipschitz_ = 0.0;
};

inline std::shared_ptr<VelocityField> rf_gaussian_field(GaussianEndpoints ep) {
    return std::make_shared<RfGaussianField>(std::move(ep));
}

// ---------------------------------------------------------------------------
// Constant transport v(x,t) = delta: the perfectly straight flow.

class LinearCouplingField final : public VelocityField {
  public:
    explicit LinearCouplingField(LatentVector delta) : delta_(std::move(delta)) {}

    std::size_t dim() const override { return delta_.dim(); }
    std::optional<double> lipschitz_bound() const override { return 0.0; }

    void eval(std::span<const double> x, double t, std::span<double> out) const override {
        (void)x;
        (void)t;
        for (std::size_t i = 0; i < delta_.dim(); ++i) out[i] = delta_[i];
    }

  private:
    LatentVector delta_;
};

inline std::shared_ptr<VelocityField> linear_coupling_field(LatentVector delta) {
    return std::make_shared<LinearCouplingField>(std::move(delta));
}

// ---------------------------------------------------------------------------
// Gaussian mixture data distribution (isotropic components, optional labels).

struct GmmSpec {
    std::vector<double> weights;              // simplex
    std::vector<std::vector<double>> means;   // K x d
    std::vector<double> stds;                 // K, isotropic per component
    std::vector<int> labels;                  // K, class label per component

    std::size_t components() const { return weights.size(); }
    std::size_t dim() const { return means.empty() ? 0 : means[0].size(); }

    void validate() const {
        if (weights.empty() || weights.size() != means.size() ||
            weights.size() != stds.size())
            throw ConfigError("GmmSpec: mismatched component counts");
        if (!labels.empty() && labels.size() != weights.size())
            throw ConfigError("GmmSpec: labels must match component count");
        double sum = 0.0;
        for (double w : weights) {
            if (!(w > 0)) throw ConfigError("GmmSpec: weights must be positive");
            sum += w;
        }
        if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("GmmSpec: weights must sum to 1");
        for (double s : stds)
            if (!(s > 0)) throw ConfigError("GmmSpec: stds must be positive");
        for (const auto& m : means)
            if (m.size() != dim()) throw ConfigError("GmmSpec: ragged means");
    }

    // Mixture restricted to one class label, weights renormalized.
    GmmSpec restricted(int label) const {
        GmmSpec out;
        double total = 0.0;
        for (std::size_t k = 0; k < components(); ++k) {
            int lk = labels.empty() ? 0 : labels[k];
            if (lk != label) continue;
            out.weights.push_back(weights[k]);
            out.means.push_back(means[k]);
            out.stds.push_back(stds[k]);
            out.labels.push_back(lk);
            total += weights[k];
        }
        if (out.weights.empty()) throw ConfigError("GmmSpec: no component with that label");
        for (double& w : out.weights) w /= total;
        return out;
    }

    template <typename Rng>
    LatentVector sample(Rng& rng) const {
        std::uniform_real_distribution<double> uni(0.0, 1.0);
        std::normal_distribution<double> gauss(0.0, 1.0);
        double u = uni(rng);
        std::size_t k = 0;
        double acc = 0.0;
        for (; k < components(); ++k) {
            acc += weights[k];
            if (u < acc) break;
        }
        if (k == components()) k = components() - 1;
        LatentVector x(dim());
        for (std::size_t i = 0; i < dim(); ++i)
            x[i] = means[k][i] + stds[k] * gauss(rng);
        return x;
    }
};

// ---------------------------------------------------------------------------
// Variance-preserving schedule, linear beta, diffusion time s in [0, 1]
// with alpha(0) = 1, sigma(0) = 0 at the data end. The interior grid is
// clamped to [eps, 1 - eps] to avoid endpoint singularities.

struct VpSchedule {
    double beta_min = 0.1;
    double beta_max = 20.0;
    double clamp_eps = 1e-3;

    void check(double s) const {
        if (!(s >= 0.0 && s <= 1.0)) throw DomainError("VP schedule time outside [0,1]");
    }
    double beta(double s) const {
        check(s);
        return beta_min + s * (beta_max - beta_min);
    }
    double log_alpha(double s) const {
        check(s);
        return -0.5 * beta_min * s - 0.25 * (beta_max - beta_min) * s * s;
    }
    double alpha(double s) const { return std::exp(log_alpha(s)); }
    double sigma2(double s) const { return -std::expm1(2.0 * log_alpha(s)); }
    double sigma(double s) const { return std::sqrt(sigma2(s)); }
    double clamp(double s) const {
        return std::min(std::max(s, clamp_eps), 1.0 - clamp_eps);
    }
};

// ---------------------------------------------------------------------------
// Noise predictor contract eps_hat(x, s) over a VP schedule. The exact GMM
// predictor computes the score of the diffused mixture in closed form via
// responsibility-weighted component scores; eps_hat = -sigma(s) * score.

class NoisePredictor {
  public:
    virtual ~NoisePredictor() = default;
    virtual std::size_t dim() const = 0;
    virtual void eval(std::span<const double> x, double s, std::span<double> out) const = 0;

    LatentVector operator()(const LatentVector& x, double s) const {
        LatentVector out(x.dim());
        eval(x.data, s, out.data);
        return out;
    }
};

class GmmNoisePredictor final : public NoisePredictor {
  public:
    GmmNoisePredictor(GmmSpec gmm, VpSchedule sched)
        : gmm_(std::move(gmm)), sched_(sched) {
        gmm_.validate();
    }

    std::size_t dim() const override { return gmm_.dim(); }

    void eval(std::span<const double> x, double s, std::span<double> out) const override {
        score(x, s, out);
        double sig = sched_.sigma(s);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = -sig * out[i];
    }

    // Score of p_s = sum_k w_k N(alpha(s) mu_k, alpha^2 std_k^2 + sigma^2).
    void score(std::span<const double> x, double s, std::span<double> out) const {
        auto resp = responsibilities(x, s);
        double a = sched_.alpha(s);
        double sig2 = sched_.sigma2(s);
        const std::size_t d = gmm_.dim();
        for (std::size_t i = 0; i < d; ++i) out[i] = 0.0;
        for (std::size_t k = 0; k < gmm_.components(); ++k) {
            double vk = a * a * gmm_.stds[k] * gmm_.stds[k] + sig2;
            for (std::size_t i = 0; i < d; ++i)
                out[i] -= resp[k] * (x[i] - a * gmm_.means[k][i]) / vk;
        }
    }

    std::vector<double> responsibilities(std::span<const double> x, double s) const {
        sched_.check(s);
        double a = sched_.alpha(s);
        double sig2 = sched_.sigma2(s);
        const std::size_t d = gmm_.dim();
        const std::size_t kk = gmm_.components();
        std::vector<double> logp(kk);
        double lmax = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < kk; ++k) {
            double vk = a * a * gmm_.stds[k] * gmm_.stds[k] + sig2;
            double q = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                double r = x[i] - a * gmm_.means[k][i];
                q += r * r;
            }
            logp[k] = std::log(gmm_.weights[k]) - 0.5 * q / vk -
                      0.5 * static_cast<double>(d) * std::log(vk);
            lmax = std::max(lmax, logp[k]);
        }
        double z = 0.0;
        for (std::size_t k = 0; k < kk; ++k) {
            logp[k] = std::exp(logp[k] - lmax);
            z += logp[k];
        }
        for (std::size_t k = 0; k < kk; ++k) logp[k] /= z;
        return logp;
    }

    const GmmSpec& gmm() const { return gmm_; }
    const VpSchedule& schedule() const { return sched_; }

  private:
    GmmSpec gmm_;
    VpSchedule sched_;
};

// Classifier-free guidance on noise predictions:
//   eps_w = eps_u + w * (eps_c - eps_u), with w == 1 returning cond exactly.
class GuidedNoisePredictor final : public NoisePredictor {
  public:
    GuidedNoisePredictor(std::shared_ptr<const NoisePredictor> cond,
                         std::shared_ptr<const NoisePredictor> uncond, double w)
        : cond_(std::move(cond)), uncond_(std::move(uncond)), w_(w) {
        if (cond_->dim() != uncond_->dim())
            throw ConfigError("guided predictor: dim mismatch");
    }

    std::size_t dim() const override { return cond_->dim(); }

    void eval(std::span<const double> x, double s, std::span<double> out) const override {
        if (w_ == 1.0) {
            cond_->eval(x, s, out);
            return;
        }
        if (w_ == 0.0) {
            uncond_->eval(x, s, out);
            return;
        }
        std::vector<double> u(out.size());
        cond_->eval(x, s, out);
        uncond_->eval(x, s, u);
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = u[i] + w_ * (out[i] - u[i]);
    }

  private:
    std::shared_ptr<const NoisePredictor> cond_, uncond_;
    double w_;
};

// ---------------------------------------------------------------------------
// Probability-flow velocity of the VP diffusion, expressed in the artifact
// time convention (t = 0 noise side, t = 1 data side; s = 1 - t):
//   v(x, t) = 0.5 * beta(s) * (x + score(x, s)),  s clamped interior.

class VpScoreField final : public VelocityField {
  public:
    explicit VpScoreField(std::shared_ptr<const GmmNoisePredictor> pred)
        : pred_(std::move(pred)) {}

    std::size_t dim() const override { return pred_->dim(); }

    void eval(std::span<const double> x, double t, std::span<double> out) const override {
        detail::check_time(t);
        const auto& sched = pred_->schedule();
        double s = sched.clamp(1.0 - t);
        pred_->score(x, s, out);
        double half_beta = 0.5 * sched.beta(s);
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = half_beta * (x[i] + out[i]);
    }

  private:
    std::shared_ptr<const GmmNoisePredictor> pred_;
};

inline std::shared_ptr<VelocityField> vp_score_field(GmmSpec gmm, VpSchedule sched) {
    auto pred = std::make_shared<GmmNoisePredictor>(std::move(gmm), sched);
    return std::make_shared<VpScoreField>(pred);
}

// ---------------------------------------------------------------------------
// Guidance blending in velocity space:
//   v_w = v_u + w * (v_c - v_u), with w == 1 returning cond exactly.

class GuidedField final : public VelocityField {
  public:
    GuidedField(std::shared_ptr<const VelocityField> cond,
                std::shared_ptr<const VelocityField> uncond, double w)
        : cond_(std::move(cond)), uncond_(std::move(uncond)), w_(w) {
        if (cond_->dim() != uncond_->dim()) throw ConfigError("guided field: dim mismatch");
    }

    std::size_t dim() const override { return cond_->dim(); }

    void eval(std::span<const double> x, double t, std::span<double> out) const override {
        if (w_ == 1.0) {
            cond_->eval(x, t, out);
            return;
        }
        if (w_ == 0.0) {
            uncond_->eval(x, t, out);
            return;
        }
        std::vector<double> u(out.size());
        cond_->eval(x, t, out);
        uncond_->eval(x, t, u);
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = u[i] + w_ * (out[i] - u[i]);
    }

    std::optional<double> lipschitz_bound() const override {
        auto lc = cond_->lipschitz_bound();
        auto lu = uncond_->lipschitz_bound();
        if (!lc || !lu) return std::nullopt;
        return std::abs(w_) * *lc + std::abs(1.0 - w_) * *lu;
    }

  private:
    std::shared_ptr<const VelocityField> cond_, uncond_;
    double w_;
};

inline std::shared_ptr<VelocityField> guided_field(
    std::shared_ptr<const VelocityField> cond,
    std::shared_ptr<const VelocityField> uncond, double w) {
    return std::make_shared<GuidedField>(std::move(cond), std::move(uncond), w);
}

}  // namespace flowstego
