// Command line front end. Subcommands cover the embed/extract round trip,
// rectified-flow training and reflow, the three benchmark protocols and the
// security evaluation. FLOWSTEGO_SEED overrides the configured master seed.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "flowstego/flowstego.hpp"

namespace fs = std::filesystem;
using namespace flowstego;

namespace {

ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config: " + path);
    json j = json::parse(is);
    ExperimentConfig cfg = config_from_json(j);
    if (const char* env = std::getenv("FLOWSTEGO_SEED")) {
        cfg.master_seed = std::stoull(env);
    }
    return cfg;
}

Message parse_bits(std::string s) {
    if (s.rfind("0b", 0) == 0) s.erase(0, 2);
    std::vector<std::uint8_t> bits;
    for (char c : s) {
        if (c == '0')
            bits.push_back(0);
        else if (c == '1')
            bits.push_back(1);
        else
            throw ConfigError("message must be a string of 0/1 characters");
    }
    return Message(std::move(bits));
}

std::string bits_to_string(const Message& m) {
    std::string s;
    for (auto b : m.bits) s += b ? '1' : '0';
    return s;
}

void echo_effective_config(const ExperimentConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    write_text_file((fs::path(cfg.out_dir) / "effective_config.json").string(),
                    config_to_json(cfg).dump(2) + "\n");
}

void write_meta(const ExperimentConfig& cfg, const std::string& name, double wall_ms) {
    json meta;
    meta["schema_version"] = kCsvSchemaVersion;
    meta["command"] = name;
    meta["master_seed"] = cfg.master_seed;
    meta["trials"] = cfg.trials;
    meta["wall_ms"] = wall_ms;
    write_text_file((fs::path(cfg.out_dir) / (name + "_meta.json")).string(),
                    meta.dump(2) + "\n");
}

struct Stopwatch {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double ms() const {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                         t0)
            .count();
    }
};

int cmd_embed(const std::string& config_path, const std::string& message,
              const std::string& out_path) {
    ExperimentConfig cfg = load_config(config_path);
    Message msg = parse_bits(message);
    if (msg.length() > cfg.latent_dim)
        throw CapacityError("message longer than latent dimension");
    cfg.message_length = msg.length();

    StegoKey key = cfg.master_key();
    MappingParams params{cfg.latent_dim, true};
    LatentVector x0 = embed_message(msg, key, params);
    if (cfg.latent_shape) x0.shape_hint = cfg.latent_shape;
    double r_tol = tolerance_radius(x0, key, params, msg.length());

    TimeGrid grid(cfg.n_steps);
    std::unique_ptr<BenchFields> fields;
    if (cfg.field.type == FieldSpec::Type::Trained ||
        cfg.sampler != SamplerKind::EulerRF)
        fields = std::make_unique<BenchFields>(prepare_bench_fields(cfg));
    PipelineContext ctx = make_context(cfg, fields.get(), cfg.sampler, cfg.guidance);

    TrajectoryRecord fwd = [&] {
        switch (cfg.sampler) {
            case SamplerKind::EulerRF: return euler_forward(x0, *ctx.rf_field, grid);
            case SamplerKind::Ddim:
                return ddim_forward(x0, *ctx.noise_pred, ctx.sched, grid);
            default:
                return ddpm_forward(x0, *ctx.noise_pred, ctx.sched, grid, key);
        }
    }();
    LatentVector xT = fwd.terminal();
    if (cfg.codec.enabled)
        xT = codec_roundtrip(xT, cfg.codec.bits, cfg.codec.lo, cfg.codec.hi);
    write_latent(out_path, xT);

    json info;
    info["tolerance_radius"] = r_tol;
    info["straightness"] = cfg.n_steps >= 2 ? straightness(fwd) : 0.0;
    info["steps"] = cfg.n_steps;
    info["sampler"] = sampler_name(cfg.sampler);
    std::cerr << info.dump() << "\n";
    std::cout << out_path << "\n";
    return 0;
}

int cmd_extract(const std::string& config_path, const std::string& in_path,
                std::size_t length, const std::string& expected) {
    ExperimentConfig cfg = load_config(config_path);
    if (length == 0) length = cfg.message_length;
    LatentVector xT = read_latent(in_path);
    if (xT.dim() != cfg.latent_dim)
        throw ConfigError("latent dimension does not match config");
    if (!xT.shape_hint && cfg.latent_shape) xT.shape_hint = cfg.latent_shape;
    if (!cfg.channel.empty()) {
        ChannelSpec spec{cfg.channel, cfg.master_seed};
        xT = apply_channel(xT, spec);
    }

    TimeGrid grid(cfg.n_steps);
    std::unique_ptr<BenchFields> fields;
    if (cfg.field.type == FieldSpec::Type::Trained ||
        cfg.sampler != SamplerKind::EulerRF)
        fields = std::make_unique<BenchFields>(prepare_bench_fields(cfg));
    PipelineContext ctx = make_context(cfg, fields.get(), cfg.sampler, cfg.guidance);

    TrajectoryRecord rev = [&] {
        switch (cfg.sampler) {
            case SamplerKind::EulerRF: return euler_inverse(xT, *ctx.rf_field, grid);
            default: return ddim_inverse(xT, *ctx.noise_pred, ctx.sched, grid);
        }
    }();

    StegoKey key = cfg.master_key();
    MappingParams params{cfg.latent_dim, true};
    Message m_hat = extract_message(rev.initial(), key, params, length);
    std::cout << bits_to_string(m_hat) << "\n";
    if (!expected.empty()) {
        Message truth = parse_bits(expected);
        json info;
        info["accuracy"] = extraction_accuracy(truth, m_hat);
        std::cerr << info.dump() << "\n";
    }
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_path, bool cond) {
    ExperimentConfig cfg = load_config(config_path);
    GmmSpec gmm = make_benchmark_gmm(cfg.data, cfg.latent_dim);
    if (cond) gmm = gmm.restricted(cfg.condition);
    TrainConfig tc = cfg.train;
    tc.seed = cfg.master_seed;
    PairSampler pairs = [&gmm, &cfg](std::mt19937_64& rng) {
        std::normal_distribution<double> gauss(0.0, 1.0);
        LatentVector x0(cfg.latent_dim);
        for (auto& v : x0.data) v = gauss(rng);
        return std::make_pair(std::move(x0), gmm.sample(rng));
    };
    TrainResult result = train_rectified_flow(pairs, cfg.latent_dim, tc);
    fs::create_directories(fs::path(out_path).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(out_path).parent_path());
    save_mlp(out_path, result.net);
    json info;
    info["initial_loss"] = result.initial_loss;
    info["final_loss"] = result.final_loss;
    info["checkpoint"] = out_path;
    std::cerr << info.dump() << "\n";
    return 0;
}

int cmd_reflow(const std::string& config_path, const std::string& in_path,
               const std::string& out_path) {
    ExperimentConfig cfg = load_config(config_path);
    Mlp net1 = load_mlp(in_path);
    TrainConfig tc = cfg.train;
    tc.seed = cfg.master_seed + 1;
    PriorSampler prior = [&net1](std::mt19937_64& rng) {
        std::normal_distribution<double> gauss(0.0, 1.0);
        LatentVector x0(net1.latent_dim);
        for (auto& v : x0.data) v = gauss(rng);
        return x0;
    };
    TrainResult result = reflow(net1, prior, TimeGrid(50), tc);
    save_mlp(out_path, result.net);
    json info;
    info["initial_loss"] = result.initial_loss;
    info["final_loss"] = result.final_loss;
    info["checkpoint"] = out_path;
    std::cerr << info.dump() << "\n";
    return 0;
}

int cmd_bench_steps(const std::string& config_path) {
    ExperimentConfig cfg = load_config(config_path);
    echo_effective_config(cfg);
    Stopwatch sw;
    BenchFields fields = prepare_bench_fields(cfg);
    auto rows = bench_steps(cfg, fields);
    write_bench_csv((fs::path(cfg.out_dir) / "bench_steps.csv").string(), "steps", rows);
    write_meta(cfg, "bench_steps", sw.ms());
    std::cout << (fs::path(cfg.out_dir) / "bench_steps.csv").string() << "\n";
    return 0;
}

int cmd_bench_guidance(const std::string& config_path) {
    ExperimentConfig cfg = load_config(config_path);
    echo_effective_config(cfg);
    Stopwatch sw;
    BenchFields fields = prepare_bench_fields(cfg);
    auto rows = bench_guidance(cfg, fields);
    write_bench_csv((fs::path(cfg.out_dir) / "bench_guidance.csv").string(), "guidance",
                    rows);
    write_meta(cfg, "bench_guidance", sw.ms());
    std::cout << (fs::path(cfg.out_dir) / "bench_guidance.csv").string() << "\n";
    return 0;
}

int cmd_bench_robustness(const std::string& config_path) {
    ExperimentConfig cfg = load_config(config_path);
    echo_effective_config(cfg);
    Stopwatch sw;
    auto rows = bench_robustness(cfg);
    write_robustness_csv((fs::path(cfg.out_dir) / "robustness.csv").string(), rows);
    write_meta(cfg, "robustness", sw.ms());
    std::cout << (fs::path(cfg.out_dir) / "robustness.csv").string() << "\n";
    return 0;
}

int cmd_security(const std::string& config_path) {
    ExperimentConfig cfg = load_config(config_path);
    echo_effective_config(cfg);
    Stopwatch sw;
    SecurityReport report = security_eval(cfg);
    std::ostringstream os;
    os << "schema_version,metric,value\n";
    auto row = [&](const char* name, double v) {
        os << kCsvSchemaVersion << ',' << name << ',' << fmt_double(v) << '\n';
    };
    row("p_e", report.stego.p_e);
    row("p_fa", report.stego.p_fa);
    row("p_md", report.stego.p_md);
    row("negative_control_p_e", report.negative_control.p_e);
    row("frechet2", report.distance.frechet2);
    row("energy", report.distance.energy);
    row("per_class_samples", static_cast<double>(report.per_class));
    write_text_file((fs::path(cfg.out_dir) / "security.csv").string(), os.str());
    write_meta(cfg, "security", sw.ms());
    std::cout << (fs::path(cfg.out_dir) / "security.csv").string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"flowstego: flow-based latent steganography toolkit"};
    app.require_subcommand(1);

    std::string config_path, message, latent_path, expected, ckpt_in, ckpt_out;
    std::size_t length = 0;
    bool cond = false;

    auto* embed = app.add_subcommand("embed", "embed a bit string into a latent");
    embed->add_option("--config", config_path, "JSON config")->required();
    embed->add_option("--message", message, "bit string, e.g. 0110...")->required();
    embed->add_option("--out", latent_path, "output latent file")->required();

    auto* extract = app.add_subcommand("extract", "recover a bit string from a latent");
    extract->add_option("--config", config_path, "JSON config")->required();
    extract->add_option("--in", latent_path, "input latent file")->required();
    extract->add_option("--length", length, "message length (default from config)");
    extract->add_option("--expected", expected, "ground-truth bits for accuracy report");

    auto* train = app.add_subcommand("train", "train a rectified-flow velocity net");
    train->add_option("--config", config_path, "JSON config")->required();
    train->add_option("--out", ckpt_out, "checkpoint path")->required();
    train->add_flag("--cond", cond, "train on the label-restricted mixture");

    auto* rf = app.add_subcommand("reflow", "straighten a trained flow (2-RF)");
    rf->add_option("--config", config_path, "JSON config")->required();
    rf->add_option("--in", ckpt_in, "input checkpoint")->required();
    rf->add_option("--out", ckpt_out, "output checkpoint")->required();

    auto* bs = app.add_subcommand("bench-steps", "sampler x step-count ablation");
    bs->add_option("--config", config_path, "JSON config")->required();
    auto* bg = app.add_subcommand("bench-guidance", "sampler x guidance ablation");
    bg->add_option("--config", config_path, "JSON config")->required();
    auto* br = app.add_subcommand("bench-robustness", "channel distortion protocol");
    br->add_option("--config", config_path, "JSON config")->required();
    auto* sec = app.add_subcommand("security", "cover/stego detectability evaluation");
    sec->add_option("--config", config_path, "JSON config")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (embed->parsed()) return cmd_embed(config_path, message, latent_path);
        if (extract->parsed()) return cmd_extract(config_path, latent_path, length, expected);
        if (train->parsed()) return cmd_train(config_path, ckpt_out, cond);
        if (rf->parsed()) return cmd_reflow(config_path, ckpt_in, ckpt_out);
        if (bs->parsed()) return cmd_bench_steps(config_path);
        if (bg->parsed()) return cmd_bench_guidance(config_path);
        if (br->parsed()) return cmd_bench_robustness(config_path);
        if (sec->parsed()) return cmd_security(config_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
