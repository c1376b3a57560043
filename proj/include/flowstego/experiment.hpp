#pragma once

// Experiment configuration and orchestration: the embed/transport/invert/
// extract pipeline, the step/guidance/robustness benchmarks and the
// security evaluation. All runs are deterministic functions of the config
// and master seed; trials execute sequentially so aggregated outputs are
// byte-reproducible.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "channel.hpp"
#include "core.hpp"
#include "flows.hpp"
#include "io.hpp"
#include "mapping.hpp"
#include "metrics.hpp"
#include "nn.hpp"
#include "samplers.hpp"
#include "stats.hpp"

namespace flowstego {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Config.

enum class SamplerKind { EulerRF, Ddim, Ddpm };

inline SamplerKind sampler_from_string(const std::string& s) {
    if (s == "euler_rf") return SamplerKind::EulerRF;
    if (s == "ddim") return SamplerKind::Ddim;
    if (s == "ddpm") return SamplerKind::Ddpm;
    throw ConfigError("unknown sampler: " + s);
}

inline std::string sampler_name(SamplerKind k) {
    switch (k) {
        case SamplerKind::EulerRF: return "euler_rf";
        case SamplerKind::Ddim: return "ddim";
        default: return "ddpm";
    }
}

struct CodecSpec {
    bool enabled = true;
    int bits = 8;
    double lo = -4.0, hi = 4.0;
};

struct FieldSpec {
    enum class Type { Constant, RfGaussian, Trained } type = Type::RfGaussian;
    // Constant
    double delta = 0.0;
    // RfGaussian (isotropic)
    double mu0 = 0.0, sigma0 = 1.0, mu1 = 1.5, sigma1 = 0.75;
    // Trained: checkpoints live under <out_dir>/ckpt
    std::string checkpoint_dir;
};

struct DataSpec {
    std::size_t components = 4;
    double mean_scale = 1.0;
    double component_std = 0.5;
    int n_labels = 2;
    std::uint64_t seed = 7;
};

struct ExperimentConfig {
    std::uint64_t master_seed = 1;
    std::size_t latent_dim = 256;
    std::optional<std::pair<std::size_t, std::size_t>> latent_shape =
        std::make_pair<std::size_t, std::size_t>(16, 16);
    std::size_t message_length = 64;
    std::vector<std::uint8_t> key_bytes;  // derived from master_seed when empty
    SamplerKind sampler = SamplerKind::EulerRF;
    std::size_t n_steps = 20;
    double guidance = 1.25;
    int condition = 0;
    bool unsafe_override = false;
    CodecSpec codec;
    std::vector<Distortion> channel;
    FieldSpec field;
    DataSpec data;
    TrainConfig train;
    std::size_t trials = 256;
    std::string out_dir = "results";

    StegoKey master_key() const {
        if (!key_bytes.empty()) return StegoKey(key_bytes);
        std::vector<std::uint8_t> kb(16);
        for (int i = 0; i < 8; ++i) {
            kb[i] = static_cast<std::uint8_t>(master_seed >> (8 * i));
            kb[8 + i] = static_cast<std::uint8_t>(detail::mix64(master_seed) >> (8 * i));
        }
        return StegoKey(kb);
    }

    void validate() const {
        if (message_length < 1 || message_length > latent_dim)
            throw ConfigError("message_length must be in [1, latent_dim]");
        if (latent_shape && latent_shape->first * latent_shape->second != latent_dim)
            throw ConfigError("latent_shape does not match latent_dim");
        if (!unsafe_override) {
            static const std::size_t steps_menu[] = {10, 20, 30, 40, 50};
            bool ok = false;
            for (auto n : steps_menu) ok = ok || n == n_steps;
            if (!ok) throw ConfigError("steps outside menu {10,20,30,40,50}; use unsafe_override");
            static const double w_menu[] = {1.0, 1.25, 1.5, 1.75, 2.0};
            ok = false;
            for (auto w : w_menu) ok = ok || w == guidance;
            if (!ok)
                throw ConfigError("guidance outside menu {1,1.25,1.5,1.75,2}; use unsafe_override");
        }
    }
};

// JSON <-> config -------------------------------------------------------------

inline std::vector<Distortion> channel_from_json(const json& arr) {
    std::vector<Distortion> ops;
    for (const auto& op : arr) {
        std::string type = op.at("type").get<std::string>();
        if (type == "gaussian_noise")
            ops.push_back(GaussianNoiseOp{op.at("std").get<double>()});
        else if (type == "quantize")
            ops.push_back(QuantizeOp{op.at("bits").get<int>(),
                                     op.value("lo", -4.0), op.value("hi", 4.0)});
        else if (type == "median_blur")
            ops.push_back(MedianBlurOp{op.at("k").get<int>()});
        else if (type == "gaussian_blur")
            ops.push_back(GaussianBlurOp{op.at("k").get<int>()});
        else if (type == "resize")
            ops.push_back(ResizeOp{op.at("scale").get<double>()});
        else
            throw ConfigError("unknown distortion type: " + type);
    }
    return ops;
}

inline json channel_to_json(const std::vector<Distortion>& ops) {
    json arr = json::array();
    for (const auto& op : ops) {
        if (const auto* n = std::get_if<GaussianNoiseOp>(&op))
            arr.push_back({{"type", "gaussian_noise"}, {"std", n->stddev}});
        else if (const auto* q = std::get_if<QuantizeOp>(&op))
            arr.push_back({{"type", "quantize"}, {"bits", q->bits}, {"lo", q->lo}, {"hi", q->hi}});
        else if (const auto* m = std::get_if<MedianBlurOp>(&op))
            arr.push_back({{"type", "median_blur"}, {"k", m->k}});
        else if (const auto* g = std::get_if<GaussianBlurOp>(&op))
            arr.push_back({{"type", "gaussian_blur"}, {"k", g->k}});
        else if (const auto* r = std::get_if<ResizeOp>(&op))
            arr.push_back({{"type", "resize"}, {"scale", r->scale}});
    }
    return arr;
}

inline ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig cfg;
    if (!j.contains("master_seed")) throw ConfigError("config: master_seed is mandatory");
    cfg.master_seed = j.at("master_seed").get<std::uint64_t>();
    cfg.latent_dim = j.value("latent_dim", cfg.latent_dim);
    if (j.contains("latent_shape")) {
        if (j["latent_shape"].is_null()) {
            cfg.latent_shape.reset();
        } else {
            auto s = j["latent_shape"].get<std::vector<std::size_t>>();
            if (s.size() != 2) throw ConfigError("latent_shape must be [rows, cols]");
            cfg.latent_shape = std::make_pair(s[0], s[1]);
        }
    } else if (cfg.latent_shape->first * cfg.latent_shape->second != cfg.latent_dim) {
        cfg.latent_shape.reset();
    }
    cfg.message_length = j.value("message_length", cfg.message_length);
    if (j.contains("key")) {
        std::string k = j["key"].get<std::string>();
        cfg.key_bytes.assign(k.begin(), k.end());
    }
    cfg.sampler = sampler_from_string(j.value("sampler", std::string("euler_rf")));
    cfg.n_steps = j.value("steps", cfg.n_steps);
    cfg.guidance = j.value("guidance", cfg.guidance);
    cfg.condition = j.value("condition", cfg.condition);
    cfg.unsafe_override = j.value("unsafe_override", false);
    if (j.contains("codec")) {
        const auto& c = j["codec"];
        cfg.codec.enabled = c.value("enabled", true);
        cfg.codec.bits = c.value("bits", cfg.codec.bits);
        cfg.codec.lo = c.value("lo", cfg.codec.lo);
        cfg.codec.hi = c.value("hi", cfg.codec.hi);
    }
    if (j.contains("channel")) cfg.channel = channel_from_json(j["channel"]);
    if (j.contains("field")) {
        const auto& f = j["field"];
        std::string type = f.value("type", std::string("rf_gaussian"));
        if (type == "constant")
            cfg.field.type = FieldSpec::Type::Constant;
        else if (type == "rf_gaussian")
            cfg.field.type = FieldSpec::Type::RfGaussian;
        else if (type == "trained")
            cfg.field.type = FieldSpec::Type::Trained;
        else
            throw ConfigError("unknown field type: " + type);
        cfg.field.delta = f.value("delta", cfg.field.delta);
        cfg.field.mu0 = f.value("mu0", cfg.field.mu0);
        cfg.field.sigma0 = f.value("sigma0", cfg.field.sigma0);
        cfg.field.mu1 = f.value("mu1", cfg.field.mu1);
        cfg.field.sigma1 = f.value("sigma1", cfg.field.sigma1);
        cfg.field.checkpoint_dir = f.value("checkpoint_dir", std::string());
    }
    if (j.contains("data")) {
        const auto& d = j["data"];
        cfg.data.components = d.value("components", cfg.data.components);
        cfg.data.mean_scale = d.value("mean_scale", cfg.data.mean_scale);
        cfg.data.component_std = d.value("component_std", cfg.data.component_std);
        cfg.data.n_labels = d.value("n_labels", cfg.data.n_labels);
        cfg.data.seed = d.value("seed", cfg.data.seed);
    }
    if (j.contains("train")) {
        const auto& t = j["train"];
        cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
        cfg.train.n_iters = t.value("iters", cfg.train.n_iters);
        cfg.train.learning_rate = t.value("lr", cfg.train.learning_rate);
        std::string opt = t.value("optimizer", std::string("adam"));
        cfg.train.optimizer = opt == "sgd" ? Optimizer::Sgd : Optimizer::Adam;
        if (t.contains("hidden"))
            cfg.train.hidden = t["hidden"].get<std::vector<std::size_t>>();
    }
    cfg.trials = j.value("trials", cfg.trials);
    cfg.out_dir = j.value("out_dir", cfg.out_dir);
    cfg.validate();
    return cfg;
}

inline json config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["master_seed"] = cfg.master_seed;
    j["latent_dim"] = cfg.latent_dim;
    if (cfg.latent_shape)
        j["latent_shape"] = {cfg.latent_shape->first, cfg.latent_shape->second};
    else
        j["latent_shape"] = nullptr;
    j["message_length"] = cfg.message_length;
    if (!cfg.key_bytes.empty())
        j["key"] = std::string(cfg.key_bytes.begin(), cfg.key_bytes.end());
    j["sampler"] = sampler_name(cfg.sampler);
    j["steps"] = cfg.n_steps;
    j["guidance"] = cfg.guidance;
    j["condition"] = cfg.condition;
    j["unsafe_override"] = cfg.unsafe_override;
    j["codec"] = {{"enabled", cfg.codec.enabled},
                  {"bits", cfg.codec.bits},
                  {"lo", cfg.codec.lo},
                  {"hi", cfg.codec.hi}};
    j["channel"] = channel_to_json(cfg.channel);
    json f;
    switch (cfg.field.type) {
        case FieldSpec::Type::Constant: f["type"] = "constant"; break;
        case FieldSpec::Type::RfGaussian: f["type"] = "rf_gaussian"; break;
        case FieldSpec::Type::Trained: f["type"] = "trained"; break;
    }
    f["delta"] = cfg.field.delta;
    f["mu0"] = cfg.field.mu0;
    f["sigma0"] = cfg.field.sigma0;
    f["mu1"] = cfg.field.mu1;
    f["sigma1"] = cfg.field.sigma1;
    f["checkpoint_dir"] = cfg.field.checkpoint_dir;
    j["field"] = f;
    j["data"] = {{"components", cfg.data.components},
                 {"mean_scale", cfg.data.mean_scale},
                 {"component_std", cfg.data.component_std},
                 {"n_labels", cfg.data.n_labels},
                 {"seed", cfg.data.seed}};
    j["train"] = {{"batch_size", cfg.train.batch_size},
                  {"iters", cfg.train.n_iters},
                  {"lr", cfg.train.learning_rate},
                  {"optimizer", cfg.train.optimizer == Optimizer::Sgd ? "sgd" : "adam"},
                  {"hidden", cfg.train.hidden}};
    j["trials"] = cfg.trials;
    j["out_dir"] = cfg.out_dir;
    return j;
}

// ---------------------------------------------------------------------------
// Formatting shared by CSV cells, row labels and checkpoint tags.

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string fmt_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// Benchmark data distribution: a deterministic GMM generated from the data
// seed. Component k carries label k % n_labels.

inline GmmSpec make_benchmark_gmm(const DataSpec& spec, std::size_t dim) {
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    GmmSpec gmm;
    for (std::size_t k = 0; k < spec.components; ++k) {
        gmm.weights.push_back(1.0 / static_cast<double>(spec.components));
        std::vector<double> mean(dim);
        for (auto& m : mean) m = spec.mean_scale * gauss(rng);
        gmm.means.push_back(std::move(mean));
        gmm.stds.push_back(spec.component_std);
        gmm.labels.push_back(static_cast<int>(k) % spec.n_labels);
    }
    gmm.validate();
    return gmm;
}

// ---------------------------------------------------------------------------
// Trained 2-rectified-flow fields for the benchmark task. The conditional
// field is trained on the label-restricted mixture, the unconditional field
// on the full mixture; each is trained once and then straightened by reflow.
// Checkpoints are cached under <out_dir>/ckpt keyed by seed and label.

struct BenchFields {
    GmmSpec gmm;
    VpSchedule sched;
    std::shared_ptr<VelocityField> rf_cond, rf_uncond;
    std::shared_ptr<NoisePredictor> np_cond, np_uncond;
};

namespace detail {

inline Mlp train_2rf(const GmmSpec& target, std::size_t dim, TrainConfig cfg,
                     std::size_t n_reflow_steps) {
    PairSampler pairs = [&target, dim](std::mt19937_64& rng) {
        std::normal_distribution<double> gauss(0.0, 1.0);
        LatentVector x0(dim);
        for (auto& v : x0.data) v = gauss(rng);
        return std::make_pair(std::move(x0), target.sample(rng));
    };
    Mlp net = train_rectified_flow(pairs, dim, cfg).net;

    // Two reflow rounds against precomputed pools of self-transport
    // couplings; pools amortize the forward integrations across training
    // iterations and each round straightens the trajectories further.
    TimeGrid grid(n_reflow_steps);
    for (int round = 0; round < 2; ++round) {
        MlpVelocityField field(net);
        std::mt19937_64 pool_rng(cfg.seed + 7919 + static_cast<std::uint64_t>(round));
        std::normal_distribution<double> gauss(0.0, 1.0);
        auto pool = std::make_shared<std::vector<std::pair<LatentVector, LatentVector>>>();
        pool->reserve(4096);
        for (std::size_t i = 0; i < 4096; ++i) {
            LatentVector x0(dim);
            for (auto& v : x0.data) v = gauss(pool_rng);
            LatentVector x1 = euler_forward(x0, field, grid).terminal();
            pool->emplace_back(std::move(x0), std::move(x1));
        }
        PairSampler coupled = [pool](std::mt19937_64& rng) {
            return (*pool)[rng() % pool->size()];
        };
        cfg.seed += 1;
        net = train_rectified_flow(coupled, dim, cfg).net;
    }
    return net;
}

inline Mlp cached_2rf(const std::string& ckpt_dir, const std::string& name,
                      const GmmSpec& target, std::size_t dim, const TrainConfig& cfg) {
    namespace fs = std::filesystem;
    fs::path path = fs::path(ckpt_dir) / (name + ".fstm");
    if (fs::exists(path)) {
        Mlp net = load_mlp(path.string());
        if (net.latent_dim == dim) return net;
    }
    Mlp net = train_2rf(target, dim, cfg, 50);
    fs::create_directories(ckpt_dir);
    save_mlp(path.string(), net);
    return net;
}

inline Mlp cached_eps(const std::string& ckpt_dir, const std::string& name,
                      const GmmSpec& target, std::size_t dim, const VpSchedule& sched,
                      const TrainConfig& cfg) {
    namespace fs = std::filesystem;
    fs::path path = fs::path(ckpt_dir) / (name + ".fstm");
    if (fs::exists(path)) {
        Mlp net = load_mlp(path.string());
        if (net.latent_dim == dim) return net;
    }
    PriorSampler data = [&target](std::mt19937_64& rng) { return target.sample(rng); };
    Mlp net = train_noise_predictor(data, dim, sched, cfg).net;
    fs::create_directories(ckpt_dir);
    save_mlp(path.string(), net);
    return net;
}

}  // namespace detail

inline BenchFields prepare_bench_fields(const ExperimentConfig& cfg) {
    BenchFields out;
    out.gmm = make_benchmark_gmm(cfg.data, cfg.latent_dim);
    out.sched = VpSchedule{};
    GmmSpec cond_gmm = out.gmm.restricted(cfg.condition);

    std::string ckpt = cfg.field.checkpoint_dir.empty()
                           ? (std::filesystem::path(cfg.out_dir) / "ckpt").string()
                           : cfg.field.checkpoint_dir;
    // Tag everything the trained net depends on so stale checkpoints are
    // never reused across config changes.
    std::string hidden_tag;
    for (std::size_t h : cfg.train.hidden) hidden_tag += "x" + std::to_string(h);
    std::string tag = std::to_string(cfg.data.seed) + "_" +
                      std::to_string(cfg.master_seed) + "_" +
                      std::to_string(cfg.data.components) + "_" +
                      fmt_label(cfg.data.mean_scale) + "_" +
                      fmt_label(cfg.data.component_std) + "_i" +
                      std::to_string(cfg.train.n_iters) + hidden_tag;
    TrainConfig tc = cfg.train;
    tc.seed = cfg.master_seed * 1000 + 11;
    Mlp uncond = detail::cached_2rf(ckpt, "rf3_uncond_" + tag, out.gmm, cfg.latent_dim, tc);
    tc.seed = cfg.master_seed * 1000 + 23 + static_cast<std::uint64_t>(cfg.condition);
    Mlp cond = detail::cached_2rf(ckpt, "rf3_cond" + std::to_string(cfg.condition) + "_" + tag,
                                  cond_gmm, cfg.latent_dim, tc);
    out.rf_uncond = std::make_shared<MlpVelocityField>(std::move(uncond));
    out.rf_cond = std::make_shared<MlpVelocityField>(std::move(cond));

    // Noise-prediction baselines train on the same mixtures so the sampler
    // comparison is between learned models throughout.
    tc.seed = cfg.master_seed * 1000 + 47;
    Mlp eps_uncond =
        detail::cached_eps(ckpt, "eps_uncond_" + tag, out.gmm, cfg.latent_dim, out.sched, tc);
    tc.seed = cfg.master_seed * 1000 + 59 + static_cast<std::uint64_t>(cfg.condition);
    Mlp eps_cond =
        detail::cached_eps(ckpt, "eps_cond" + std::to_string(cfg.condition) + "_" + tag,
                           cond_gmm, cfg.latent_dim, out.sched, tc);
    out.np_uncond = std::make_shared<MlpNoisePredictor>(std::move(eps_uncond));
    out.np_cond = std::make_shared<MlpNoisePredictor>(std::move(eps_cond));
    return out;
}

// ---------------------------------------------------------------------------
// One trial of the full pipeline.

struct TrialResult {
    double accuracy = 0.0;
    double l2_error = 0.0;
    double pcli_max = 0.0;
    double pcli_mean = 0.0;
    double straight = 0.0;
    double tolerance = 0.0;
};

struct PipelineContext {
    SamplerKind sampler = SamplerKind::EulerRF;
    std::shared_ptr<const VelocityField> rf_field;      // EulerRF lane
    std::shared_ptr<const NoisePredictor> noise_pred;   // Ddim / Ddpm lanes
    VpSchedule sched;
};

inline Message keyed_message(const StegoKey& trial_key, std::size_t length) {
    StegoKey mk = trial_key.with_domain(trial_key.counter_domain + "/msg");
    std::vector<std::uint8_t> bits(length);
    for (std::size_t j = 0; j < length; ++j)
        bits[j] = keyed_uniform(mk, j) < 0.5 ? 0 : 1;
    return Message(std::move(bits));
}

inline TrialResult run_trial(const PipelineContext& ctx, const ExperimentConfig& cfg,
                             std::size_t trial_index) {
    StegoKey trial_key =
        cfg.master_key().with_domain("trial/" + std::to_string(trial_index));
    Message msg = keyed_message(trial_key, cfg.message_length);
    MappingParams params{cfg.latent_dim, true};
    LatentVector x0 = embed_message(msg, trial_key, params);
    if (cfg.latent_shape) x0.shape_hint = cfg.latent_shape;

    TimeGrid grid(cfg.n_steps);
    TrajectoryRecord fwd = [&] {
        switch (ctx.sampler) {
            case SamplerKind::EulerRF: return euler_forward(x0, *ctx.rf_field, grid);
            case SamplerKind::Ddim: return ddim_forward(x0, *ctx.noise_pred, ctx.sched, grid);
            default: return ddpm_forward(x0, *ctx.noise_pred, ctx.sched, grid, trial_key);
        }
    }();

    LatentVector xT = fwd.terminal();
    if (cfg.codec.enabled)
        xT = codec_roundtrip(xT, cfg.codec.bits, cfg.codec.lo, cfg.codec.hi);
    if (!cfg.channel.empty()) {
        ChannelSpec spec{cfg.channel,
                         detail::keyed_word(trial_key.with_domain("chan-seed"), 0)};
        xT = apply_channel(xT, spec);
    }

    TrajectoryRecord rev = [&] {
        switch (ctx.sampler) {
            case SamplerKind::EulerRF: return euler_inverse(xT, *ctx.rf_field, grid);
            default: return ddim_inverse(xT, *ctx.noise_pred, ctx.sched, grid);
        }
    }();

    TrialResult res;
    Message m_hat = extract_message(rev.initial(), trial_key, params, cfg.message_length);
    res.accuracy = extraction_accuracy(msg, m_hat);
    res.l2_error = inversion_error(x0, rev.initial()).l2;
    res.tolerance = tolerance_radius(x0, trial_key, params, cfg.message_length);
    res.straight = cfg.n_steps >= 2 ? straightness(fwd) : 0.0;
    if (ctx.sampler == SamplerKind::EulerRF) {
        PcliResiduals r = pcli_residual(fwd, *ctx.rf_field);
        res.pcli_max = r.max;
        res.pcli_mean = r.mean;
    } else {
        // Directional-variation diagnostic from recorded step increments.
        for (std::size_t k = 0; k + 1 < fwd.velocities.size(); ++k) {
            double s = 0.0;
            for (std::size_t i = 0; i < fwd.velocities[k].dim(); ++i) {
                double d = fwd.velocities[k][i] - fwd.velocities[k + 1][i];
                s += d * d;
            }
            double r = std::sqrt(s);
            res.pcli_max = std::max(res.pcli_max, r);
            res.pcli_mean += r;
        }
        if (fwd.velocities.size() > 1)
            res.pcli_mean /= static_cast<double>(fwd.velocities.size() - 1);
    }
    return res;
}

struct TrialSummary {
    double mean_accuracy = 0.0;
    double se_accuracy = 0.0;
    double mean_l2 = 0.0;
    double mean_pcli = 0.0;
    double mean_straight = 0.0;
};

inline TrialSummary run_trials(const PipelineContext& ctx, const ExperimentConfig& cfg) {
    std::vector<double> acc, l2, pcli, straight;
    for (std::size_t i = 0; i < cfg.trials; ++i) {
        TrialResult r = run_trial(ctx, cfg, i);
        acc.push_back(r.accuracy);
        l2.push_back(r.l2_error);
        pcli.push_back(r.pcli_mean);
        straight.push_back(r.straight);
    }
    return TrialSummary{mean(acc), standard_error(acc), mean(l2), mean(pcli),
                        mean(straight)};
}

// ---------------------------------------------------------------------------
// Field construction for analytic configurations.

inline std::shared_ptr<VelocityField> make_analytic_field(const ExperimentConfig& cfg) {
    switch (cfg.field.type) {
        case FieldSpec::Type::Constant: {
            LatentVector delta(cfg.latent_dim);
            for (auto& v : delta.data) v = cfg.field.delta;
            return linear_coupling_field(std::move(delta));
        }
        case FieldSpec::Type::RfGaussian:
            return rf_gaussian_field(GaussianEndpoints::isotropic(
                cfg.latent_dim, cfg.field.mu0, cfg.field.sigma0, cfg.field.mu1,
                cfg.field.sigma1));
        default:
            throw ConfigError("field type 'trained' needs prepare_bench_fields");
    }
}

// Pipeline context for the configured sampler at a given guidance scale.
inline PipelineContext make_context(const ExperimentConfig& cfg, const BenchFields* fields,
                                    SamplerKind sampler, double w) {
    PipelineContext ctx;
    ctx.sampler = sampler;
    if (sampler == SamplerKind::EulerRF) {
        if (cfg.field.type == FieldSpec::Type::Trained) {
            if (!fields) throw ConfigError("trained field requested without bench fields");
            ctx.rf_field = w == 1.0 ? fields->rf_cond
                                    : guided_field(fields->rf_cond, fields->rf_uncond, w);
        } else {
            ctx.rf_field = make_analytic_field(cfg);
        }
    } else {
        if (!fields) throw ConfigError("ddim/ddpm lanes need bench fields");
        ctx.sched = fields->sched;
        ctx.noise_pred =
            w == 1.0 ? fields->np_cond
                     : std::make_shared<GuidedNoisePredictor>(fields->np_cond,
                                                              fields->np_uncond, w);
    }
    return ctx;
}

// ---------------------------------------------------------------------------
// CSV output. Numeric cells use shortest round-trip formatting so reruns
// with the same config and seed are byte-identical; wall-clock data goes to
// the separate metadata file.

constexpr int kCsvSchemaVersion = 1;

struct BenchRow {
    std::string sampler;
    double param = 0.0;  // steps or guidance
    TrialSummary summary;
};

inline void write_bench_csv(const std::string& path, const std::string& param_name,
                            const std::vector<BenchRow>& rows) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for write: " + path);
    os << "schema_version,sampler," << param_name
       << ",mean_accuracy,se_accuracy,mean_l2_inversion_error,mean_pcli_residual,"
          "mean_straightness\n";
    for (const auto& r : rows)
        os << kCsvSchemaVersion << ',' << r.sampler << ',' << fmt_double(r.param) << ','
           << fmt_double(r.summary.mean_accuracy) << ',' << fmt_double(r.summary.se_accuracy)
           << ',' << fmt_double(r.summary.mean_l2) << ',' << fmt_double(r.summary.mean_pcli)
           << ',' << fmt_double(r.summary.mean_straight) << '\n';
}

// ---------------------------------------------------------------------------
// Benchmarks.

inline const std::vector<std::size_t>& steps_menu() {
    static const std::vector<std::size_t> menu{10, 20, 30, 40, 50};
    return menu;
}

inline const std::vector<double>& guidance_menu() {
    static const std::vector<double> menu{1.0, 1.25, 1.5, 1.75, 2.0};
    return menu;
}

// Step-count ablation: one row per (sampler, N) at the configured w.
inline std::vector<BenchRow> bench_steps(const ExperimentConfig& cfg,
                                         const BenchFields& fields) {
    std::vector<BenchRow> rows;
    for (SamplerKind s : {SamplerKind::EulerRF, SamplerKind::Ddim, SamplerKind::Ddpm}) {
        PipelineContext ctx = make_context(cfg, &fields, s, cfg.guidance);
        for (std::size_t n : steps_menu()) {
            ExperimentConfig run = cfg;
            run.n_steps = n;
            rows.push_back({sampler_name(s), static_cast<double>(n), run_trials(ctx, run)});
        }
    }
    return rows;
}

// Guidance ablation: one row per (sampler, w) at fixed N = 20.
inline std::vector<BenchRow> bench_guidance(const ExperimentConfig& cfg,
                                            const BenchFields& fields) {
    std::vector<BenchRow> rows;
    for (SamplerKind s : {SamplerKind::EulerRF, SamplerKind::Ddim, SamplerKind::Ddpm}) {
        for (double w : guidance_menu()) {
            PipelineContext ctx = make_context(cfg, &fields, s, w);
            ExperimentConfig run = cfg;
            run.n_steps = 20;
            rows.push_back({sampler_name(s), w, run_trials(ctx, run)});
        }
    }
    return rows;
}

// Robustness protocol: single distortions, severity sweeps and the combined
// presets, all on the configured analytic field with the EulerRF sampler.
struct RobustnessRow {
    std::string label;
    TrialSummary summary;
};

inline std::vector<RobustnessRow> bench_robustness(const ExperimentConfig& cfg) {
    std::vector<RobustnessRow> rows;
    auto run_with = [&](const std::string& label, const ExperimentConfig& run) {
        PipelineContext ctx = make_context(run, nullptr, SamplerKind::EulerRF, run.guidance);
        rows.push_back({label, run_trials(ctx, run)});
    };

    {
        // Exact-transport reference: straight field, no codec, no channel.
        ExperimentConfig run = cfg;
        run.field.type = FieldSpec::Type::Constant;
        run.field.delta = 1.0;
        run.codec.enabled = false;
        run.channel.clear();
        run_with("lossless_straight", run);
    }
    {
        ExperimentConfig run = cfg;
        run.channel.clear();
        run_with("lossless", run);
    }
    for (double s : {0.01, 0.05, 0.1}) {
        ExperimentConfig run = cfg;
        run.channel = {GaussianNoiseOp{s}};
        run_with("noise_" + fmt_label(s), run);
    }
    const QuantizeOp jpeg50{6, cfg.codec.lo, cfg.codec.hi};
    const MedianBlurOp mb7{7};
    const GaussianNoiseOp gn{0.1};
    {
        ExperimentConfig run = cfg;
        run.channel = {jpeg50};
        run_with("jpeg_q50", run);
    }
    for (int k : {3, 5, 7}) {
        ExperimentConfig run = cfg;
        run.channel = {MedianBlurOp{k}};
        run_with("median_blur_" + std::to_string(k), run);
    }
    for (int k : {3, 5, 7}) {
        ExperimentConfig run = cfg;
        run.channel = {GaussianBlurOp{k}};
        run_with("gaussian_blur_" + std::to_string(k), run);
    }
    for (double sc : {0.5, 0.75, 1.25, 1.5}) {
        ExperimentConfig run = cfg;
        run.channel = {ResizeOp{sc}};
        run_with("resize_" + fmt_label(sc), run);
    }
    {
        ExperimentConfig run = cfg;
        run.channel = {jpeg50, mb7};
        run_with("jpeg+mb", run);
    }
    {
        ExperimentConfig run = cfg;
        run.channel = {jpeg50, gn};
        run_with("jpeg+gn", run);
    }
    {
        ExperimentConfig run = cfg;
        run.channel = {gn, mb7};
        run_with("gn+mb", run);
    }
    {
        ExperimentConfig run = cfg;
        run.channel = {jpeg50, mb7, gn};
        run_with("jpeg+mb+gn", run);
    }
    return rows;
}

inline void write_robustness_csv(const std::string& path,
                                 const std::vector<RobustnessRow>& rows) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for write: " + path);
    os << "schema_version,channel,mean_accuracy,se_accuracy,mean_l2_inversion_error\n";
    for (const auto& r : rows)
        os << kCsvSchemaVersion << ',' << r.label << ','
           << fmt_double(r.summary.mean_accuracy) << ',' << fmt_double(r.summary.se_accuracy)
           << ',' << fmt_double(r.summary.mean_l2) << '\n';
}

// ---------------------------------------------------------------------------
// Security: cover (pure keyed normal) vs stego (embedded) latent sets,
// linear-detector P_E and distribution distances, plus the deliberately
// broken all-positive mapping as a negative control.

struct SecurityReport {
    DetectionResult stego;
    DetectionResult negative_control;
    DistDistance distance;
    std::size_t per_class = 0;
};

inline SecurityReport security_eval(const ExperimentConfig& cfg, std::size_t n_train = 2000,
                                    std::size_t n_val = 250, std::size_t n_test = 250) {
    const std::size_t per_class = n_train + n_val + n_test;
    const std::size_t d = cfg.latent_dim;
    MappingParams params{d, true};
    StegoKey master = cfg.master_key();

    std::vector<LatentVector> cover, stego, broken;
    cover.reserve(per_class);
    stego.reserve(per_class);
    broken.reserve(per_class);
    for (std::size_t i = 0; i < per_class; ++i) {
        StegoKey ck = master.with_domain("cover/" + std::to_string(i));
        LatentVector c(d);
        for (std::size_t j = 0; j < d; ++j) c[j] = keyed_normal(ck, j);
        cover.push_back(std::move(c));

        StegoKey sk = master.with_domain("stego/" + std::to_string(i));
        Message msg = keyed_message(sk, cfg.message_length);
        stego.push_back(embed_message(msg, sk, params));

        // Negative control: magnitudes without sign balance.
        LatentVector b = stego.back();
        auto dims = detail::message_dims(sk, params, cfg.message_length);
        for (std::size_t dim_idx : dims) b[dim_idx] = std::abs(b[dim_idx]);
        broken.push_back(std::move(b));
    }

    SecurityReport report;
    report.per_class = per_class;
    DetectionSplit split{n_train, n_val, n_test};
    report.stego = detection_error(cover, stego, split);
    report.negative_control = detection_error(cover, broken, split);
    report.distance = dist_distance(cover, stego);
    return report;
}

// ---------------------------------------------------------------------------
// Output plumbing shared by the CLI.

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for write: " + path);
    os << content;
}

inline std::string csv_schema_description() {
    return "schema_version " + std::to_string(kCsvSchemaVersion) +
           "\n"
           "bench_steps.csv / bench_guidance.csv columns:\n"
           "  schema_version, sampler, steps|guidance, mean_accuracy, se_accuracy,\n"
           "  mean_l2_inversion_error, mean_pcli_residual, mean_straightness\n"
           "robustness.csv columns:\n"
           "  schema_version, channel, mean_accuracy, se_accuracy,\n"
           "  mean_l2_inversion_error\n"
           "security.csv columns:\n"
           "  schema_version, metric, value\n";
}

}  // namespace flowstego
