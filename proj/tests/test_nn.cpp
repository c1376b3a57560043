#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>

#include "flowstego/flows.hpp"
#include "flowstego/metrics.hpp"
#include "flowstego/nn.hpp"
#include "flowstego/samplers.hpp"

using namespace flowstego;

namespace {

std::vector<TrainSample> random_batch(const Mlp& net, std::mt19937_64& rng, std::size_t n) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::vector<TrainSample> batch(n);
    for (auto& s : batch) {
        s.x = LatentVector(net.latent_dim);
        s.target = LatentVector(net.latent_dim);
        for (auto& v : s.x.data) v = gauss(rng);
        for (auto& v : s.target.data) v = gauss(rng);
        s.t = uni(rng);
    }
    return batch;
}

}  // namespace

TEST_CASE("zero network outputs zero") {
    Mlp net = Mlp::make(3, {4}, 1);
    for (auto& layer : net.weights)
        for (auto& w : layer) w = 0.0;
    LatentVector x(std::vector<double>{1.0, -2.0, 0.5});
    LatentVector out = net(x, 0.3);
    for (double v : out.data) REQUIRE(v == 0.0);
}

TEST_CASE("a single linear layer is a plain matrix product") {
    Mlp net = Mlp::make(2, {}, 5);  // [2 + kTimeEmbed, 2], no hidden layer
    LatentVector x(std::vector<double>{0.7, -0.4});
    double t = 0.6;
    std::vector<double> input(2 + kTimeEmbed);
    input[0] = x[0];
    input[1] = x[1];
    time_features(t, std::span<double>(input).subspan(2));
    LatentVector out = net(x, t);
    for (std::size_t o = 0; o < 2; ++o) {
        double acc = net.biases[0][o];
        for (std::size_t i = 0; i < input.size(); ++i)
            acc += net.weights[0][o * input.size() + i] * input[i];
        REQUIRE(out[o] == acc);
    }
}

TEST_CASE("network evaluation is bit reproducible") {
    Mlp net = Mlp::make(4, {8, 8}, 9);
    LatentVector x(std::vector<double>{0.1, 0.2, 0.3, 0.4});
    LatentVector a = net(x, 0.25);
    LatentVector b = net(x, 0.25);
    REQUIRE(a.data == b.data);
}

TEST_CASE("gradient vanishes when the network already matches the target") {
    Mlp net = Mlp::make(2, {4}, 3);
    std::vector<TrainSample> batch(1);
    batch[0].x = LatentVector(std::vector<double>{0.5, -0.5});
    batch[0].t = 0.4;
    batch[0].target = net(batch[0].x, batch[0].t);
    MlpGradients g = mlp_grad(net, batch);
    REQUIRE(g.loss == Catch::Approx(0.0).margin(1e-28));
    for (const auto& layer : g.weights)
        for (double v : layer) REQUIRE(std::abs(v) < 1e-14);
    for (const auto& layer : g.biases)
        for (double v : layer) REQUIRE(std::abs(v) < 1e-14);
}

TEST_CASE("gradients match central finite differences across layer shapes") {
    std::mt19937_64 rng(77);
    const double h = 1e-5;
    for (std::size_t n_hidden : {1u, 2u, 3u}) {
        for (std::size_t width : {4u, 16u}) {
            std::vector<std::size_t> hidden(n_hidden, width);
            Mlp net = Mlp::make(3, hidden, 1000 * n_hidden + width);
            auto batch = random_batch(net, rng, 4);
            MlpGradients g = mlp_grad(net, batch);
            auto loss_of = [&](const Mlp& m) { return mlp_grad(m, batch).loss; };
            for (std::size_t l = 0; l < net.n_layers(); ++l) {
                // Probe a deterministic subset of parameters per layer.
                for (std::size_t i = 0; i < net.weights[l].size();
                     i += std::max<std::size_t>(1, net.weights[l].size() / 7)) {
                    Mlp plus = net, minus = net;
                    plus.weights[l][i] += h;
                    minus.weights[l][i] -= h;
                    double fd = (loss_of(plus) - loss_of(minus)) / (2 * h);
                    double scale = std::max({std::abs(fd), std::abs(g.weights[l][i]), 1e-4});
                    REQUIRE(std::abs(g.weights[l][i] - fd) / scale < 1e-6);
                }
                for (std::size_t i = 0; i < net.biases[l].size();
                     i += std::max<std::size_t>(1, net.biases[l].size() / 5)) {
                    Mlp plus = net, minus = net;
                    plus.biases[l][i] += h;
                    minus.biases[l][i] -= h;
                    double fd = (loss_of(plus) - loss_of(minus)) / (2 * h);
                    double scale = std::max({std::abs(fd), std::abs(g.biases[l][i]), 1e-4});
                    REQUIRE(std::abs(g.biases[l][i] - fd) / scale < 1e-6);
                }
            }
        }
    }
}

TEST_CASE("duplicating the batch leaves the mean gradient unchanged") {
    std::mt19937_64 rng(81);
    Mlp net = Mlp::make(2, {4}, 2);
    auto batch = random_batch(net, rng, 3);
    auto doubled = batch;
    doubled.insert(doubled.end(), batch.begin(), batch.end());
    MlpGradients g1 = mlp_grad(net, batch);
    MlpGradients g2 = mlp_grad(net, doubled);
    REQUIRE(g1.loss == Catch::Approx(g2.loss).margin(1e-12));
    for (std::size_t l = 0; l < net.n_layers(); ++l)
        for (std::size_t i = 0; i < g1.weights[l].size(); ++i)
            REQUIRE(g1.weights[l][i] == Catch::Approx(g2.weights[l][i]).margin(1e-12));
}

TEST_CASE("training learns a constant coupling") {
    const double c = 1.5;
    PairSampler pairs = [c](std::mt19937_64& rng) {
        std::normal_distribution<double> gauss(0.0, 1.0);
        LatentVector x0(std::vector<double>{gauss(rng), gauss(rng)});
        LatentVector x1(std::vector<double>{x0[0] + c, x0[1] + c});
        return std::make_pair(std::move(x0), std::move(x1));
    };
    TrainConfig cfg;
    cfg.n_iters = 8000;
    cfg.learning_rate = 3e-3;
    cfg.hidden = {32, 32};
    cfg.seed = 4;
    TrainResult result = train_rectified_flow(pairs, 2, cfg);
    REQUIRE(result.final_loss < 1e-3);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (int probe = 0; probe < 50; ++probe) {
        LatentVector x(std::vector<double>{gauss(rng), gauss(rng)});
        LatentVector v = result.net(x, uni(rng));
        REQUIRE(std::abs(v[0] - c) < 0.05);
        REQUIRE(std::abs(v[1] - c) < 0.05);
    }
}

TEST_CASE("training on independent gaussians recovers the closed-form field") {
    PairSampler pairs = [](std::mt19937_64& rng) {
        std::normal_distribution<double> gauss(0.0, 1.0);
        return std::make_pair(LatentVector(std::vector<double>{gauss(rng)}),
                              LatentVector(std::vector<double>{gauss(rng)}));
    };
    TrainConfig cfg;
    cfg.n_iters = 8000;
    cfg.learning_rate = 3e-3;
    cfg.hidden = {32, 32};
    cfg.seed = 6;
    TrainResult result = train_rectified_flow(pairs, 1, cfg);
    RfGaussianField exact(GaussianEndpoints::isotropic(1, 0.0, 1.0, 0.0, 1.0));
    for (double t : {0.1, 0.3, 0.5, 0.7, 0.9}) {
        for (double xv : {-1.5, -0.5, 0.0, 0.5, 1.5}) {
            LatentVector x(std::vector<double>{xv});
            REQUIRE(std::abs(result.net(x, t)[0] - exact(x, t)[0]) < 0.1);
        }
    }
}

TEST_CASE("initial loss is near the expected squared endpoint gap") {
    // Near-zero initialization output: loss at iter 0 should be close to
    // E||X1 - X0||^2 = 2 for independent 1-D standard gaussians.
    PairSampler pairs = [](std::mt19937_64& rng) {
        std::normal_distribution<double> gauss(0.0, 1.0);
        return std::make_pair(LatentVector(std::vector<double>{gauss(rng)}),
                              LatentVector(std::vector<double>{gauss(rng)}));
    };
    TrainConfig cfg;
    cfg.n_iters = 1;
    cfg.batch_size = 4096;
    cfg.seed = 8;
    TrainResult result = train_rectified_flow(pairs, 1, cfg);
    REQUIRE(result.initial_loss > 1.5);
    REQUIRE(result.initial_loss < 2.5);
}

TEST_CASE("training is bit reproducible for a fixed seed") {
    PairSampler pairs = [](std::mt19937_64& rng) {
        std::normal_distribution<double> gauss(0.0, 1.0);
        LatentVector x0(std::vector<double>{gauss(rng)});
        LatentVector x1(std::vector<double>{x0[0] + 1.0});
        return std::make_pair(std::move(x0), std::move(x1));
    };
    TrainConfig cfg;
    cfg.n_iters = 200;
    cfg.hidden = {8};
    cfg.seed = 10;
    Mlp a = train_rectified_flow(pairs, 1, cfg).net;
    Mlp b = train_rectified_flow(pairs, 1, cfg).net;
    for (std::size_t l = 0; l < a.n_layers(); ++l) {
        REQUIRE(a.weights[l] == b.weights[l]);
        REQUIRE(a.biases[l] == b.biases[l]);
    }
}

TEST_CASE("reflow is a fixed point on an already-straight flow") {
    const double c = -0.8;
    PairSampler pairs = [c](std::mt19937_64& rng) {
        std::normal_distribution<double> gauss(0.0, 1.0);
        LatentVector x0(std::vector<double>{gauss(rng)});
        LatentVector x1(std::vector<double>{x0[0] + c});
        return std::make_pair(std::move(x0), std::move(x1));
    };
    TrainConfig cfg;
    cfg.n_iters = 2000;
    cfg.hidden = {16, 16};
    cfg.seed = 12;
    Mlp net1 = train_rectified_flow(pairs, 1, cfg).net;
    PriorSampler prior = [](std::mt19937_64& rng) {
        std::normal_distribution<double> gauss(0.0, 1.0);
        return LatentVector(std::vector<double>{gauss(rng)});
    };
    cfg.seed = 13;
    Mlp net2 = reflow(net1, prior, TimeGrid(20), cfg).net;
    std::mt19937_64 rng(14);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (int probe = 0; probe < 50; ++probe) {
        LatentVector x(std::vector<double>{gauss(rng)});
        double t = uni(rng);
        REQUIRE(std::abs(net1(x, t)[0] - net2(x, t)[0]) < 0.05);
    }
}

TEST_CASE("reflow does not bend trajectories on a two-gaussian task") {
    GmmSpec gmm;
    gmm.weights = {0.5, 0.5};
    gmm.means = {{-2.0, 0.0}, {2.0, 0.0}};
    gmm.stds = {0.5, 0.5};
    PairSampler pairs = [&gmm](std::mt19937_64& rng) {
        std::normal_distribution<double> gauss(0.0, 1.0);
        LatentVector x0(std::vector<double>{gauss(rng), gauss(rng)});
        return std::make_pair(std::move(x0), gmm.sample(rng));
    };
    TrainConfig cfg;
    cfg.n_iters = 2500;
    cfg.hidden = {32, 32};
    cfg.seed = 15;
    Mlp net1 = train_rectified_flow(pairs, 2, cfg).net;
    PriorSampler prior = [](std::mt19937_64& rng) {
        std::normal_distribution<double> gauss(0.0, 1.0);
        return LatentVector(std::vector<double>{gauss(rng), gauss(rng)});
    };
    cfg.seed = 16;
    Mlp net2 = reflow(net1, prior, TimeGrid(20), cfg).net;

    MlpVelocityField f1(net1), f2(net2);
    std::mt19937_64 rng(17);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> s1, s2;
    TimeGrid grid(20);
    for (int i = 0; i < 64; ++i) {
        LatentVector x0(std::vector<double>{gauss(rng), gauss(rng)});
        s1.push_back(straightness(euler_forward(x0, f1, grid)));
        s2.push_back(straightness(euler_forward(x0, f2, grid)));
    }
    REQUIRE(median(s2) <= median(s1));
}

TEST_CASE("checkpoints round trip bit exactly") {
    namespace fs = std::filesystem;
    Mlp net = Mlp::make(3, {8, 4}, 21);
    fs::path path = fs::temp_directory_path() / "flowstego_test_ckpt.fstm";
    save_mlp(path.string(), net);
    Mlp back = load_mlp(path.string());
    REQUIRE(back.latent_dim == net.latent_dim);
    REQUIRE(back.dims == net.dims);
    for (std::size_t l = 0; l < net.n_layers(); ++l) {
        REQUIRE(back.weights[l] == net.weights[l]);
        REQUIRE(back.biases[l] == net.biases[l]);
    }
    fs::remove(path);
    REQUIRE_THROWS_AS(load_mlp("/nonexistent/ckpt.fstm"), FormatError);
}

TEST_CASE("empirical lipschitz estimates are finite and positive") {
    Mlp net = Mlp::make(2, {8}, 23);
    MlpVelocityField field(net);
    double lip = empirical_lipschitz(field, 1000, 25);
    REQUIRE(std::isfinite(lip));
    REQUIRE(lip > 0.0);
}

TEST_CASE("invalid training configs are rejected") {
    TrainConfig cfg;
    cfg.batch_size = 0;
    PairSampler pairs = [](std::mt19937_64&) {
        return std::make_pair(LatentVector(1), LatentVector(1));
    };
    REQUIRE_THROWS_AS(train_rectified_flow(pairs, 1, cfg), ConfigError);
}
