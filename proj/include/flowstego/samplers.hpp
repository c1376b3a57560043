#pragma once

// Forward and time-reversed integrators: the explicit Euler scheme and its
// reverse, the path-consistency residual diagnostic, local/accumulated error
// accounting, and DDIM/DDPM comparison samplers over a VP schedule.

#include <cmath>
#include <string>
#include <vector>

#include "core.hpp"
#include "flows.hpp"
#include "stats.hpp"

namespace flowstego {

namespace detail {
inline void check_finite_state(const LatentVector& x, std::size_t step, const char* what) {
    if (!x.all_finite())
        throw IntegrationError(std::string(what) + ": non-finite state at step " +
                               std::to_string(step));
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Explicit Euler: x_{n+1} = x_n + dt * v(x_n, t_n).

inline TrajectoryRecord euler_forward(const LatentVector& x0, const VelocityField& field,
                                      const TimeGrid& grid) {
    detail::check_finite_state(x0, 0, "euler_forward");
    const std::size_t n = grid.n_steps;
    const double dt = grid.dt();
    TrajectoryRecord traj{{}, {}, grid, Direction::Forward};
    traj.states.reserve(n + 1);
    traj.velocities.reserve(n);
    traj.states.push_back(x0);
    for (std::size_t k = 0; k < n; ++k) {
        LatentVector v = field(traj.states[k], grid.t(k));
        detail::check_finite_state(v, k, "euler_forward velocity");
        LatentVector next(traj.states[k].dim());
        next.shape_hint = x0.shape_hint;
        for (std::size_t i = 0; i < next.dim(); ++i)
            next[i] = traj.states[k][i] + dt * v[i];
        detail::check_finite_state(next, k + 1, "euler_forward");
        traj.velocities.push_back(std::move(v));
        traj.states.push_back(std::move(next));
    }
    return traj;
}

// Time-reversed Euler: x_{t_n} = x_{t_{n+1}} - dt * v(x_{t_{n+1}}, t_{n+1}).
// The receiver only holds the terminal state, so the field is evaluated at
// the reconstructed right endpoint of each step.
inline TrajectoryRecord euler_inverse(const LatentVector& xT, const VelocityField& field,
                                      const TimeGrid& grid) {
    detail::check_finite_state(xT, grid.n_steps, "euler_inverse");
    const std::size_t n = grid.n_steps;
    const double dt = grid.dt();
    TrajectoryRecord traj{{}, {}, grid, Direction::Reverse};
    traj.states.assign(n + 1, LatentVector(xT.dim()));
    traj.velocities.assign(n, LatentVector(xT.dim()));
    traj.states[n] = xT;
    for (std::size_t k = n; k-- > 0;) {
        LatentVector v = field(traj.states[k + 1], grid.t(k + 1));
        detail::check_finite_state(v, k + 1, "euler_inverse velocity");
        LatentVector prev(xT.dim());
        prev.shape_hint = xT.shape_hint;
        for (std::size_t i = 0; i < prev.dim(); ++i)
            prev[i] = traj.states[k + 1][i] - dt * v[i];
        detail::check_finite_state(prev, k, "euler_inverse");
        traj.velocities[k] = std::move(v);
        traj.states[k] = std::move(prev);
    }
    return traj;
}

// ---------------------------------------------------------------------------
// Path-consistency residuals: r_n = || v(x_{t_n}, t_n) - v(x_{t_{n+1}}, t_{n+1}) ||.
// Zero residuals mean the forward and reverse Euler updates are symmetric.

struct PcliResiduals {
    std::vector<double> per_step;
    double max = 0.0;
    double mean = 0.0;
};

inline PcliResiduals pcli_residual(const TrajectoryRecord& traj, const VelocityField& field) {
    PcliResiduals res;
    const std::size_t n = traj.grid.n_steps;
    res.per_step.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        LatentVector a = field(traj.states[k], traj.grid.t(k));
        LatentVector b = field(traj.states[k + 1], traj.grid.t(k + 1));
        double s = 0.0;
        for (std::size_t i = 0; i < a.dim(); ++i) {
            double d = a[i] - b[i];
            s += d * d;
        }
        res.per_step[k] = std::sqrt(s);
        res.max = std::max(res.max, res.per_step[k]);
        res.mean += res.per_step[k];
    }
    if (n > 0) res.mean /= static_cast<double>(n);
    return res;
}

// ---------------------------------------------------------------------------
// Local approximation errors against an exact field and the accumulated
// bound  ||x_hat0 - x0|| <= exp(C_L) * sum_n delta_n * dt.
//
// The forward trajectory is generated with the oracle field; both fields
// then invert the oracle terminal state and the bound governs the gap
// between the two reconstructions (the discrete Gronwall recursion), so
// shared discretization error cancels.

struct ErrorBudget {
    std::vector<double> deltas;  // per-step ||v_subject - v_oracle|| on the path
    double sum_delta_dt = 0.0;
    double lipschitz = 0.0;
    double bound = 0.0;
    double measured = 0.0;  // || x_hat0(subject) - x_hat0(oracle) ||_2
    bool holds = false;
};

inline ErrorBudget local_and_global_error(const LatentVector& x0,
                                          const VelocityField& subject,
                                          const VelocityField& oracle,
                                          const TimeGrid& grid,
                                          std::optional<double> lipschitz = std::nullopt) {
    if (subject.dim() != oracle.dim())
        throw ConfigError("local_and_global_error: field dim mismatch");
    ErrorBudget out;
    out.lipschitz = lipschitz ? *lipschitz : oracle.lipschitz_bound().value_or(0.0);
    TrajectoryRecord fwd = euler_forward(x0, oracle, grid);
    const double dt = grid.dt();
    out.deltas.resize(grid.n_steps);
    for (std::size_t k = 0; k < grid.n_steps; ++k) {
        LatentVector vs = subject(fwd.states[k], grid.t(k));
        double s = 0.0;
        for (std::size_t i = 0; i < vs.dim(); ++i) {
            double d = vs[i] - fwd.velocities[k][i];
            s += d * d;
        }
        out.deltas[k] = std::sqrt(s);
        out.sum_delta_dt += out.deltas[k] * dt;
    }
    TrajectoryRecord rev = euler_inverse(fwd.terminal(), subject, grid);
    TrajectoryRecord ref = euler_inverse(fwd.terminal(), oracle, grid);
    double s = 0.0;
    for (std::size_t i = 0; i < x0.dim(); ++i) {
        double d = rev.initial()[i] - ref.initial()[i];
        s += d * d;
    }
    out.measured = std::sqrt(s);
    out.bound = std::exp(out.lipschitz) * out.sum_delta_dt;
    // Tiny slack absorbs floating-point summation-order differences when the
    // bound is met with equality (constant perturbations).
    out.holds = out.measured <= out.bound * (1.0 + 1e-9) + 1e-12;
    return out;
}

// ---------------------------------------------------------------------------
// DDIM over the VP schedule (artifact time t, diffusion time s = 1 - t,
// clamped interior grid). Forward transports the noise-side latent toward
// the data side; inversion runs the same recursion with the time index
// reversed and the noise prediction taken at the known endpoint.

inline TrajectoryRecord ddim_forward(const LatentVector& x0, const NoisePredictor& pred,
                                     const VpSchedule& sched, const TimeGrid& grid) {
    detail::check_finite_state(x0, 0, "ddim_forward");
    const std::size_t n = grid.n_steps;
    TrajectoryRecord traj{{}, {}, grid, Direction::Forward};
    traj.states.reserve(n + 1);
    traj.velocities.reserve(n);
    traj.states.push_back(x0);
    for (std::size_t k = 0; k < n; ++k) {
        double s_cur = sched.clamp(1.0 - grid.t(k));
        double s_next = sched.clamp(1.0 - grid.t(k + 1));
        LatentVector eps = pred(traj.states[k], s_cur);
        detail::check_finite_state(eps, k, "ddim_forward noise");
        double ac = sched.alpha(s_cur), sc = sched.sigma(s_cur);
        double an = sched.alpha(s_next), sn = sched.sigma(s_next);
        LatentVector next(x0.dim());
        next.shape_hint = x0.shape_hint;
        LatentVector v(x0.dim());
        const double dt = grid.dt();
        for (std::size_t i = 0; i < next.dim(); ++i) {
            double pred_x0 = (traj.states[k][i] - sc * eps[i]) / ac;
            next[i] = an * pred_x0 + sn * eps[i];
            v[i] = (next[i] - traj.states[k][i]) / dt;  // step increment per unit time
        }
        detail::check_finite_state(next, k + 1, "ddim_forward");
        traj.velocities.push_back(std::move(v));
        traj.states.push_back(std::move(next));
    }
    return traj;
}

inline TrajectoryRecord ddim_inverse(const LatentVector& xT, const NoisePredictor& pred,
                                     const VpSchedule& sched, const TimeGrid& grid) {
    detail::check_finite_state(xT, grid.n_steps, "ddim_inverse");
    const std::size_t n = grid.n_steps;
    TrajectoryRecord traj{{}, {}, grid, Direction::Reverse};
    traj.states.assign(n + 1, LatentVector(xT.dim()));
    traj.velocities.assign(n, LatentVector(xT.dim()));
    traj.states[n] = xT;
    for (std::size_t k = n; k-- > 0;) {
        double s_cur = sched.clamp(1.0 - grid.t(k + 1));
        double s_prev = sched.clamp(1.0 - grid.t(k));
        LatentVector eps = pred(traj.states[k + 1], s_cur);
        detail::check_finite_state(eps, k + 1, "ddim_inverse noise");
        double ac = sched.alpha(s_cur), sc = sched.sigma(s_cur);
        double ap = sched.alpha(s_prev), sp = sched.sigma(s_prev);
        LatentVector prev(xT.dim());
        prev.shape_hint = xT.shape_hint;
        const double dt = grid.dt();
        for (std::size_t i = 0; i < prev.dim(); ++i) {
            double pred_x0 = (traj.states[k + 1][i] - sc * eps[i]) / ac;
            prev[i] = ap * pred_x0 + sp * eps[i];
            traj.velocities[k][i] = (traj.states[k + 1][i] - prev[i]) / dt;
        }
        detail::check_finite_state(prev, k, "ddim_inverse");
        traj.states[k] = std::move(prev);
    }
    return traj;
}

// ---------------------------------------------------------------------------
// DDPM: ancestral sampling with keyed noise. eta scales the per-step noise;
// eta = 0 reduces to DDIM exactly. The scheme has no deterministic inverse;
// paired extraction experiments invert with ddim_inverse on the same
// schedule.

inline TrajectoryRecord ddpm_forward(const LatentVector& x0, const NoisePredictor& pred,
                                     const VpSchedule& sched, const TimeGrid& grid,
                                     const StegoKey& key, double eta = 1.0) {
    detail::check_finite_state(x0, 0, "ddpm_forward");
    const std::size_t n = grid.n_steps;
    StegoKey noise_key = key.with_domain(key.counter_domain + "/ddpm");
    TrajectoryRecord traj{{}, {}, grid, Direction::Forward};
    traj.states.reserve(n + 1);
    traj.velocities.reserve(n);
    traj.states.push_back(x0);
    std::uint64_t draw = 0;
    for (std::size_t k = 0; k < n; ++k) {
        double s_cur = sched.clamp(1.0 - grid.t(k));
        double s_next = sched.clamp(1.0 - grid.t(k + 1));
        LatentVector eps = pred(traj.states[k], s_cur);
        detail::check_finite_state(eps, k, "ddpm_forward noise");
        double ac = sched.alpha(s_cur), sc = sched.sigma(s_cur);
        double an = sched.alpha(s_next), sn = sched.sigma(s_next);
        // Posterior noise scale for the step toward the less-noisy time.
        double ratio = 1.0 - (ac * ac) / (an * an);
        double post = eta * (sn / sc) * std::sqrt(std::max(0.0, ratio));
        double dir = std::sqrt(std::max(0.0, sn * sn - post * post));
        LatentVector next(x0.dim());
        next.shape_hint = x0.shape_hint;
        LatentVector v(x0.dim());
        const double dt = grid.dt();
        for (std::size_t i = 0; i < next.dim(); ++i) {
            double pred_x0 = (traj.states[k][i] - sc * eps[i]) / ac;
            double z = post > 0.0 ? keyed_normal(noise_key, draw++) : 0.0;
            next[i] = an * pred_x0 + dir * eps[i] + post * z;
            v[i] = (next[i] - traj.states[k][i]) / dt;
        }
        detail::check_finite_state(next, k + 1, "ddpm_forward");
        traj.velocities.push_back(std::move(v));
        traj.states.push_back(std::move(next));
    }
    return traj;
}

}  // namespace flowstego
