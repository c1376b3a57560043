#pragma once

// Minimal fully-connected network with hand-written backpropagation, the
// rectified-flow training loop, and the reflow procedure producing a
// 2-rectified flow. Training is single-threaded and bit-reproducible given
// (seed, config); trained nets are immutable VelocityField implementations.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "core.hpp"
#include "flows.hpp"
#include "io.hpp"
#include "samplers.hpp"

namespace flowstego {

// ---------------------------------------------------------------------------
// Sinusoidal time features, dimension kTimeEmbed.

constexpr std::size_t kTimeEmbed = 8;

inline void time_features(double t, std::span<double> out) {
    for (std::size_t j = 0; j < kTimeEmbed / 2; ++j) {
        double f = M_PI * static_cast<double>(1u << j) * t;
        out[2 * j] = std::sin(f);
        out[2 * j + 1] = std::cos(f);
    }
}

// ---------------------------------------------------------------------------
// Mlp: input = latent (d) concatenated with time features, tanh hidden
// layers, linear output of dimension d.

struct Mlp {
    std::size_t latent_dim = 0;
    std::vector<std::size_t> dims;                   // [d + kTimeEmbed, h..., d]
    std::vector<std::vector<double>> weights;        // per layer, row-major out x in
    std::vector<std::vector<double>> biases;

    std::size_t n_layers() const { return weights.size(); }

    static Mlp make(std::size_t latent_dim, const std::vector<std::size_t>& hidden,
                    std::uint64_t seed) {
        Mlp net;
        net.latent_dim = latent_dim;
        net.dims.push_back(latent_dim + kTimeEmbed);
        for (std::size_t h : hidden) net.dims.push_back(h);
        net.dims.push_back(latent_dim);
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (std::size_t l = 0; l + 1 < net.dims.size(); ++l) {
            std::size_t in = net.dims[l], out = net.dims[l + 1];
            double scale = std::sqrt(1.0 / static_cast<double>(in));
            net.weights.emplace_back(in * out);
            net.biases.emplace_back(out, 0.0);
            for (double& w : net.weights.back()) w = scale * gauss(rng);
        }
        return net;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (std::size_t l = 0; l < n_layers(); ++l)
            n += weights[l].size() + biases[l].size();
        return n;
    }

    // Forward pass; when acts is non-null, post-activation values of every
    // layer (including the input) are recorded for backprop.
    void forward(std::span<const double> x, double t, std::span<double> out,
                 std::vector<std::vector<double>>* acts = nullptr) const {
        if (x.size() != latent_dim) throw ConfigError("mlp_forward: dim mismatch");
        std::vector<double> cur(dims[0]);
        for (std::size_t i = 0; i < latent_dim; ++i) cur[i] = x[i];
        time_features(t, std::span<double>(cur).subspan(latent_dim));
        if (acts) {
            acts->clear();
            acts->push_back(cur);
        }
        for (std::size_t l = 0; l < n_layers(); ++l) {
            std::size_t in = dims[l], outn = dims[l + 1];
            std::vector<double> next(outn);
            const double* w = weights[l].data();
            for (std::size_t o = 0; o < outn; ++o) {
                double acc = biases[l][o];
                const double* row = w + o * in;
                for (std::size_t i = 0; i < in; ++i) acc += row[i] * cur[i];
                next[o] = (l + 1 < n_layers()) ? std::tanh(acc) : acc;
            }
            cur = std::move(next);
            if (acts) acts->push_back(cur);
        }
        for (std::size_t i = 0; i < latent_dim; ++i) out[i] = cur[i];
    }

    LatentVector operator()(const LatentVector& x, double t) const {
        LatentVector out(latent_dim);
        forward(x.data, t, out.data);
        out.shape_hint = x.shape_hint;
        return out;
    }
};

// ---------------------------------------------------------------------------
// Gradients of the mean-squared-error loss
//   L = (1/B) sum_b || net(x_b, t_b) - target_b ||^2
// via reverse-mode accumulation.

struct MlpGradients {
    std::vector<std::vector<double>> weights;
    std::vector<std::vector<double>> biases;
    double loss = 0.0;

    static MlpGradients zeros_like(const Mlp& net) {
        MlpGradients g;
        for (std::size_t l = 0; l < net.n_layers(); ++l) {
            g.weights.emplace_back(net.weights[l].size(), 0.0);
            g.biases.emplace_back(net.biases[l].size(), 0.0);
        }
        return g;
    }
};

struct TrainSample {
    LatentVector x;       // interpolated state x_t
    double t = 0.0;
    LatentVector target;  // regression target (X1 - X0)
};

inline MlpGradients mlp_grad(const Mlp& net, const std::vector<TrainSample>& batch) {
    MlpGradients g = MlpGradients::zeros_like(net);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    std::vector<std::vector<double>> acts;
    std::vector<double> out(net.latent_dim);
    for (const auto& sample : batch) {
        net.forward(sample.x.data, sample.t, out, &acts);
        // dL/dy for this sample, including the 1/B batch normalization.
        std::vector<double> delta(net.latent_dim);
        for (std::size_t i = 0; i < net.latent_dim; ++i) {
            double r = out[i] - sample.target[i];
            g.loss += inv_b * r * r;
            delta[i] = 2.0 * inv_b * r;
        }
        for (std::size_t l = net.n_layers(); l-- > 0;) {
            std::size_t in = net.dims[l], outn = net.dims[l + 1];
            const auto& a_in = acts[l];
            for (std::size_t o = 0; o < outn; ++o) {
                g.biases[l][o] += delta[o];
                double* grow = g.weights[l].data() + o * in;
                for (std::size_t i = 0; i < in; ++i) grow[i] += delta[o] * a_in[i];
            }
            if (l == 0) break;
            std::vector<double> prev(in, 0.0);
            const double* w = net.weights[l].data();
            for (std::size_t o = 0; o < outn; ++o) {
                const double* row = w + o * in;
                for (std::size_t i = 0; i < in; ++i) prev[i] += row[i] * delta[o];
            }
            // tanh' = 1 - a^2 on the post-activation of layer l.
            for (std::size_t i = 0; i < in; ++i) prev[i] *= 1.0 - a_in[i] * a_in[i];
            delta = std::move(prev);
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Training.

enum class Optimizer { Sgd, Adam };

struct TrainConfig {
    std::size_t batch_size = 64;
    std::size_t n_iters = 2000;
    double learning_rate = 1e-3;
    Optimizer optimizer = Optimizer::Adam;
    std::uint64_t seed = 1;
    std::size_t eval_interval = 100;
    std::vector<std::size_t> hidden = {64, 64};

    void validate() const {
        if (batch_size == 0 || n_iters == 0 || !(learning_rate > 0.0))
            throw ConfigError("TrainConfig: hyperparameters must be positive");
    }
};

using PairSampler = std::function<std::pair<LatentVector, LatentVector>(std::mt19937_64&)>;
using PriorSampler = std::function<LatentVector(std::mt19937_64&)>;

struct TrainResult {
    Mlp net;
    std::vector<double> loss_log;  // one entry per eval interval
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

namespace detail {

struct AdamState {
    std::vector<std::vector<double>> m_w, v_w, m_b, v_b;
    std::size_t step = 0;

    static AdamState zeros_like(const Mlp& net) {
        AdamState s;
        for (std::size_t l = 0; l < net.n_layers(); ++l) {
            s.m_w.emplace_back(net.weights[l].size(), 0.0);
            s.v_w.emplace_back(net.weights[l].size(), 0.0);
            s.m_b.emplace_back(net.biases[l].size(), 0.0);
            s.v_b.emplace_back(net.biases[l].size(), 0.0);
        }
        return s;
    }
};

inline void apply_update(Mlp& net, const MlpGradients& g, const TrainConfig& cfg,
                         AdamState& adam) {
    if (cfg.optimizer == Optimizer::Sgd) {
        for (std::size_t l = 0; l < net.n_layers(); ++l) {
            for (std::size_t i = 0; i < net.weights[l].size(); ++i)
                net.weights[l][i] -= cfg.learning_rate * g.weights[l][i];
            for (std::size_t i = 0; i < net.biases[l].size(); ++i)
                net.biases[l][i] -= cfg.learning_rate * g.biases[l][i];
        }
        return;
    }
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    adam.step += 1;
    double c1 = 1.0 - std::pow(b1, static_cast<double>(adam.step));
    double c2 = 1.0 - std::pow(b2, static_cast<double>(adam.step));
    auto update = [&](std::vector<double>& p, const std::vector<double>& grad,
                      std::vector<double>& m, std::vector<double>& v) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
            p[i] -= cfg.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    };
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
        update(net.weights[l], g.weights[l], adam.m_w[l], adam.v_w[l]);
        update(net.biases[l], g.biases[l], adam.m_b[l], adam.v_b[l]);
    }
}

}  // namespace detail

// Rectified-flow regression: draw (X0, X1) pairs, t ~ U(0,1), form
// X_t = (1-t) X0 + t X1 and regress the net onto X1 - X0.
inline TrainResult train_rectified_flow(const PairSampler& pairs, std::size_t latent_dim,
                                        const TrainConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    Mlp net = Mlp::make(latent_dim, cfg.hidden, rng());

    TrainResult result;
    detail::AdamState adam = detail::AdamState::zeros_like(net);
    std::size_t diverged_streak = 0;
    std::vector<TrainSample> batch(cfg.batch_size);
    for (std::size_t it = 0; it < cfg.n_iters; ++it) {
        for (auto& sample : batch) {
            auto [x0, x1] = pairs(rng);
            if (x0.dim() != latent_dim || x1.dim() != latent_dim)
                throw ConfigError("pair sampler yielded mismatched dims");
            double t = uni(rng);
            sample.t = t;
            sample.x = LatentVector(latent_dim);
            sample.target = LatentVector(latent_dim);
            for (std::size_t i = 0; i < latent_dim; ++i) {
                sample.x[i] = (1.0 - t) * x0[i] + t * x1[i];
                sample.target[i] = x1[i] - x0[i];
            }
        }
        MlpGradients g = mlp_grad(net, batch);
        if (it == 0) result.initial_loss = g.loss;
        if (g.loss > 10.0 * result.initial_loss && it > 0) {
            if (++diverged_streak >= 100)
                throw IntegrationError("rectified-flow training diverged");
        } else {
            diverged_streak = 0;
        }
        if (it % cfg.eval_interval == 0) result.loss_log.push_back(g.loss);
        result.final_loss = g.loss;
        // Cosine decay to 5% of the base rate sharpens late convergence.
        TrainConfig step = cfg;
        double progress = static_cast<double>(it) / static_cast<double>(cfg.n_iters);
        step.learning_rate *=
            std::max(0.05, 0.5 * (1.0 + std::cos(M_PI * progress)));
        detail::apply_update(net, g, step, adam);
    }
    result.net = std::move(net);
    return result;
}

// Denoising regression over a VP schedule: sample a data point, diffuse it to
// a clamped time s and regress the net onto the injected noise.
inline TrainResult train_noise_predictor(const PriorSampler& data, std::size_t latent_dim,
                                         const VpSchedule& sched, const TrainConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Mlp net = Mlp::make(latent_dim, cfg.hidden, rng());

    TrainResult result;
    detail::AdamState adam = detail::AdamState::zeros_like(net);
    std::size_t diverged_streak = 0;
    std::vector<TrainSample> batch(cfg.batch_size);
    for (std::size_t it = 0; it < cfg.n_iters; ++it) {
        for (auto& sample : batch) {
            LatentVector x0 = data(rng);
            if (x0.dim() != latent_dim)
                throw ConfigError("data sampler yielded mismatched dims");
            double s = sched.clamp(uni(rng));
            double alpha = sched.alpha(s), sigma = sched.sigma(s);
            sample.t = s;
            sample.x = LatentVector(latent_dim);
            sample.target = LatentVector(latent_dim);
            for (std::size_t i = 0; i < latent_dim; ++i) {
                double eps = gauss(rng);
                sample.x[i] = alpha * x0[i] + sigma * eps;
                sample.target[i] = eps;
            }
        }
        MlpGradients g = mlp_grad(net, batch);
        if (it == 0) result.initial_loss = g.loss;
        if (g.loss > 10.0 * result.initial_loss && it > 0) {
            if (++diverged_streak >= 100)
                throw IntegrationError("noise-predictor training diverged");
        } else {
            diverged_streak = 0;
        }
        if (it % cfg.eval_interval == 0) result.loss_log.push_back(g.loss);
        result.final_loss = g.loss;
        TrainConfig step = cfg;
        double progress = static_cast<double>(it) / static_cast<double>(cfg.n_iters);
        step.learning_rate *=
            std::max(0.05, 0.5 * (1.0 + std::cos(M_PI * progress)));
        detail::apply_update(net, g, step, adam);
    }
    result.net = std::move(net);
    return result;
}

// ---------------------------------------------------------------------------
// VelocityField adapter for a trained net.

class MlpVelocityField final : public VelocityField {
  public:
    explicit MlpVelocityField(std::shared_ptr<const Mlp> net) : net_(std::move(net)) {}
    explicit MlpVelocityField(Mlp net) : net_(std::make_shared<Mlp>(std::move(net))) {}

    std::size_t dim() const override { return net_->latent_dim; }
    void eval(std::span<const double> x, double t, std::span<double> out) const override {
        detail::check_time(t);
        net_->forward(x, t, out);
    }
    const Mlp& net() const { return *net_; }

  private:
    std::shared_ptr<const Mlp> net_;
};

// NoisePredictor adapter: the net consumes the diffusion time s directly.
class MlpNoisePredictor final : public NoisePredictor {
  public:
    explicit MlpNoisePredictor(std::shared_ptr<const Mlp> net) : net_(std::move(net)) {}
    explicit MlpNoisePredictor(Mlp net) : net_(std::make_shared<Mlp>(std::move(net))) {}

    std::size_t dim() const override { return net_->latent_dim; }
    void eval(std::span<const double> x, double s, std::span<double> out) const override {
        net_->forward(x, s, out);
    }
    const Mlp& net() const { return *net_; }

  private:
    std::shared_ptr<const Mlp> net_;
};

// Empirical Lipschitz estimate from finite-difference slopes over random
// probe pairs; used as the constant of the accumulated-error bound.
inline double empirical_lipschitz(const VelocityField& field, std::size_t n_probes,
                                  std::uint64_t seed, double radius = 3.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const std::size_t d = field.dim();
    double lip = 0.0;
    LatentVector a(d), b(d);
    for (std::size_t p = 0; p < n_probes; ++p) {
        double t = uni(rng);
        for (std::size_t i = 0; i < d; ++i) {
            a[i] = radius * gauss(rng) / std::sqrt(static_cast<double>(d));
            b[i] = a[i] + 0.05 * gauss(rng);
        }
        LatentVector va = field(a, t);
        LatentVector vb = field(b, t);
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            num += (va[i] - vb[i]) * (va[i] - vb[i]);
            den += (a[i] - b[i]) * (a[i] - b[i]);
        }
        if (den > 0.0) lip = std::max(lip, std::sqrt(num / den));
    }
    return lip;
}

// ---------------------------------------------------------------------------
// Reflow: re-pair endpoints with the flow's own forward-Euler transport and
// retrain on the resulting deterministic coupling.

inline TrainResult reflow(const Mlp& net1, const PriorSampler& prior, const TimeGrid& grid,
                          const TrainConfig& cfg) {
    auto field = std::make_shared<MlpVelocityField>(net1);
    PairSampler coupled = [field, prior, grid](std::mt19937_64& rng) {
        LatentVector x0 = prior(rng);
        LatentVector x1 = euler_forward(x0, *field, grid).terminal();
        return std::make_pair(std::move(x0), std::move(x1));
    };
    return train_rectified_flow(coupled, net1.latent_dim, cfg);
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "FSTM" | u16 version | u32 latent_dim | u32 layer count |
// u32 dims... | binary64 parameters (weights then biases, per layer).

inline void save_mlp(const std::string& path, const Mlp& net) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for write: " + path);
    os.write("FSTM", 4);
    detail::write_le<std::uint16_t>(os, 1);
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(net.latent_dim));
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(net.dims.size()));
    for (std::size_t d : net.dims)
        detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
        for (double w : net.weights[l]) detail::write_f64(os, w);
        for (double b : net.biases[l]) detail::write_f64(os, b);
    }
    if (!os) throw FormatError("checkpoint write failed: " + path);
}

inline Mlp load_mlp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open for read: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "FSTM", 4) != 0) throw FormatError("bad checkpoint magic");
    if (detail::read_le<std::uint16_t>(is) != 1)
        throw FormatError("unsupported checkpoint version");
    Mlp net;
    net.latent_dim = detail::read_le<std::uint32_t>(is);
    auto n_dims = detail::read_le<std::uint32_t>(is);
    net.dims.resize(n_dims);
    for (auto& d : net.dims) d = detail::read_le<std::uint32_t>(is);
    if (n_dims < 2 || net.dims.front() != net.latent_dim + kTimeEmbed ||
        net.dims.back() != net.latent_dim)
        throw FormatError("checkpoint layer dims inconsistent");
    for (std::size_t l = 0; l + 1 < n_dims; ++l) {
        net.weights.emplace_back(net.dims[l] * net.dims[l + 1]);
        net.biases.emplace_back(net.dims[l + 1]);
        for (double& w : net.weights.back()) w = detail::read_f64(is);
        for (double& b : net.biases.back()) b = detail::read_f64(is);
    }
    return net;
}

}  // namespace flowstego
