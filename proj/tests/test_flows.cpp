#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "flowstego/flows.hpp"
#include "flowstego/nn.hpp"
#include "flowstego/samplers.hpp"

using namespace flowstego;

TEST_CASE("symmetric gaussian endpoints give a vanishing field at t=0.5") {
    auto field = rf_gaussian_field(GaussianEndpoints::isotropic(3, 0.0, 1.0, 0.0, 1.0));
    for (double xv : {-2.0, 0.0, 0.7, 5.0}) {
        LatentVector x(std::vector<double>{xv, xv, xv});
        LatentVector v = (*field)(x, 0.5);
        for (std::size_t i = 0; i < 3; ++i) REQUIRE(std::abs(v[i]) < 1e-14);
    }
}

TEST_CASE("narrow gaussian endpoints approach constant transport") {
    auto field = rf_gaussian_field(GaussianEndpoints::isotropic(1, 0.0, 1e-8, 3.0, 1e-8));
    for (double t : {0.1, 0.5, 0.9}) {
        LatentVector x(std::vector<double>{3.0 * t});  // on the transport line
        REQUIRE((*field)(x, t)[0] == Catch::Approx(3.0).margin(1e-6));
    }
}

TEST_CASE("standard gaussian field matches hand computation at a probe") {
    auto field = rf_gaussian_field(GaussianEndpoints::isotropic(1, 0.0, 1.0, 0.0, 1.0));
    LatentVector x(std::vector<double>{1.0});
    // (2t-1)/((1-t)^2 + t^2) * x at t = 0.25 equals -0.8.
    REQUIRE((*field)(x, 0.25)[0] == Catch::Approx(-0.8).margin(1e-12));
}

TEST_CASE("gaussian field equals the conditional mean of the endpoint gap") {
    // Binned Monte Carlo estimate of E[X1 - X0 | X_t near x] at one probe.
    std::mt19937_64 rng(101);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double t = 0.25, probe = 1.0, halfwidth = 0.02;
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < 2000000; ++i) {
        double x0 = gauss(rng), x1 = gauss(rng);
        double xt = (1.0 - t) * x0 + t * x1;
        if (std::abs(xt - probe) < halfwidth) {
            sum += x1 - x0;
            ++count;
        }
    }
    REQUIRE(count > 1000);
    auto field = rf_gaussian_field(GaussianEndpoints::isotropic(1, 0.0, 1.0, 0.0, 1.0));
    LatentVector x(std::vector<double>{probe});
    REQUIRE(std::abs(sum / count - (*field)(x, t)[0]) < 0.05);
}

TEST_CASE("exact transport of the gaussian field reproduces the target moments") {
    GaussianEndpoints ep = GaussianEndpoints::isotropic(1, -0.5, 1.0, 2.0, 0.5);
    RfGaussianField field(ep);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const std::size_t n = 100000;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        LatentVector x0(std::vector<double>{-0.5 + gauss(rng)});
        out[i] = field.transport_exact(x0, 1.0)[0];
    }
    double se_mean = 0.5 / std::sqrt(static_cast<double>(n));
    REQUIRE(std::abs(mean(out) - 2.0) < 3.0 * se_mean);
    double se_std = 0.5 / std::sqrt(2.0 * static_cast<double>(n));
    REQUIRE(std::abs(sample_stddev(out) - 0.5) < 3.0 * se_std);
}

TEST_CASE("exact transport inverts exactly") {
    GaussianEndpoints ep = GaussianEndpoints::isotropic(4, 0.0, 1.0, 1.5, 0.75);
    RfGaussianField field(ep);
    LatentVector x0(std::vector<double>{0.3, -1.2, 2.0, 0.0});
    for (double t : {0.25, 0.5, 1.0}) {
        LatentVector xt = field.transport_exact(x0, t);
        LatentVector back = field.transport_exact_inverse(xt, t);
        for (std::size_t i = 0; i < 4; ++i)
            REQUIRE(back[i] == Catch::Approx(x0[i]).margin(1e-12));
    }
}

TEST_CASE("gaussian field matches conditional-mean monte carlo at random probes") {
    GaussianEndpoints ep = GaussianEndpoints::isotropic(1, 0.0, 1.0, 1.0, 0.5);
    RfGaussianField field(ep);
    std::mt19937_64 rng(23);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> tdist(0.1, 0.9);
    std::uniform_real_distribution<double> xdist(-0.5, 1.5);

    const std::size_t n_pairs = 1000000;
    std::vector<std::pair<double, double>> pairs(n_pairs);
    for (auto& p : pairs) p = {gauss(rng), 1.0 + 0.5 * gauss(rng)};

    std::mt19937_64 probe_rng(29);
    for (int probe = 0; probe < 20; ++probe) {
        double t = tdist(probe_rng);
        double x = xdist(probe_rng);
        double sum = 0.0;
        std::size_t count = 0;
        for (const auto& [x0, x1] : pairs) {
            double xt = (1.0 - t) * x0 + t * x1;
            if (std::abs(xt - x) < 0.03) {
                sum += x1 - x0;
                ++count;
            }
        }
        if (count < 2000) continue;  // probe landed in a thin tail
        LatentVector xv(std::vector<double>{x});
        REQUIRE(std::abs(sum / count - field(xv, t)[0]) < 0.05);
    }
}

TEST_CASE("field times outside the unit interval are rejected") {
    auto field = rf_gaussian_field(GaussianEndpoints::isotropic(1, 0.0, 1.0, 0.0, 1.0));
    LatentVector x(std::vector<double>{0.0});
    REQUIRE_THROWS_AS((*field)(x, -0.1), DomainError);
    REQUIRE_THROWS_AS((*field)(x, 1.1), DomainError);
}

TEST_CASE("constant coupling field transports exactly under euler") {
    SECTION("zero delta is the identity") {
        auto field = linear_coupling_field(LatentVector(std::vector<double>{0.0, 0.0}));
        LatentVector x0(std::vector<double>{0.4, -0.7});
        auto traj = euler_forward(x0, *field, TimeGrid(17));
        REQUIRE(traj.terminal().data == x0.data);
    }
    SECTION("delta reaches x0 + delta at t=1 for any step count") {
        auto field = linear_coupling_field(LatentVector(std::vector<double>{1.0, -2.0}));
        LatentVector x0(std::vector<double>{0.0, 0.0});
        for (std::size_t n : {1u, 4u, 20u, 100u}) {
            auto traj = euler_forward(x0, *field, TimeGrid(n));
            REQUIRE(traj.terminal()[0] == Catch::Approx(1.0).margin(1e-13));
            REQUIRE(traj.terminal()[1] == Catch::Approx(-2.0).margin(1e-13));
        }
    }
}

TEST_CASE("vp schedule satisfies the variance-preserving identity") {
    VpSchedule sched;
    for (double s : {0.0, 0.001, 0.3, 0.999, 1.0}) {
        double a = sched.alpha(s), v = sched.sigma2(s);
        REQUIRE(a * a + v == Catch::Approx(1.0).margin(1e-12));
    }
    REQUIRE(sched.alpha(0.0) == 1.0);
    REQUIRE(sched.sigma(0.0) == 0.0);
    REQUIRE_THROWS_AS(sched.beta(1.5), DomainError);
}

TEST_CASE("single gaussian score field matches the closed form") {
    VpSchedule sched;
    const double mu = 0.7, std0 = 0.5;
    GmmSpec gmm;
    gmm.weights = {1.0};
    gmm.means = {{mu}};
    gmm.stds = {std0};
    auto field = vp_score_field(gmm, sched);
    for (double t : {0.05, 0.3, 0.6, 0.95}) {
        double s = sched.clamp(1.0 - t);
        double a = sched.alpha(s);
        double var = a * a * std0 * std0 + sched.sigma2(s);
        for (double xv : {-1.0, 0.2, 2.5}) {
            double score = -(xv - a * mu) / var;
            double expected = 0.5 * sched.beta(s) * (xv + score);
            LatentVector x(std::vector<double>{xv});
            REQUIRE((*field)(x, t)[0] == Catch::Approx(expected).margin(1e-10));
        }
    }
}

TEST_CASE("mixture score vanishes on the symmetry axis") {
    VpSchedule sched;
    GmmSpec gmm;
    gmm.weights = {0.5, 0.5};
    gmm.means = {{-2.0, 0.0}, {2.0, 0.0}};
    gmm.stds = {0.5, 0.5};
    GmmNoisePredictor pred(gmm, sched);
    std::vector<double> out(2);
    for (double s : {0.1, 0.5, 0.9}) {
        std::vector<double> x{0.0, 1.3};  // on the axis between the components
        pred.score(x, s, out);
        REQUIRE(std::abs(out[0]) < 1e-12);
    }
}

TEST_CASE("mixture responsibilities are normalized") {
    VpSchedule sched;
    GmmSpec gmm;
    gmm.weights = {0.2, 0.3, 0.5};
    gmm.means = {{-3.0}, {0.0}, {4.0}};
    gmm.stds = {0.5, 1.0, 0.25};
    GmmNoisePredictor pred(gmm, sched);
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> xdist(-6.0, 6.0), sdist(0.01, 0.99);
    for (int i = 0; i < 100; ++i) {
        std::vector<double> x{xdist(rng)};
        auto r = pred.responsibilities(x, sdist(rng));
        double sum = 0.0;
        for (double v : r) {
            REQUIRE(v >= 0.0);
            sum += v;
        }
        REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("guidance blending obeys the blend identities") {
    auto cond = linear_coupling_field(LatentVector(std::vector<double>{2.0, -1.0}));
    auto uncond = rf_gaussian_field(GaussianEndpoints::isotropic(2, 0.0, 1.0, 1.0, 1.0));
    LatentVector x(std::vector<double>{0.3, -0.8});
    for (double t : {0.2, 0.7}) {
        LatentVector c = (*cond)(x, t), u = (*uncond)(x, t);
        LatentVector g1 = (*guided_field(cond, uncond, 1.0))(x, t);
        LatentVector g0 = (*guided_field(cond, uncond, 0.0))(x, t);
        LatentVector g2 = (*guided_field(cond, uncond, 2.0))(x, t);
        for (std::size_t i = 0; i < 2; ++i) {
            REQUIRE(g1[i] == c[i]);  // exact, not approximate
            REQUIRE(g0[i] == u[i]);
            REQUIRE(g2[i] == Catch::Approx(2.0 * c[i] - u[i]).margin(1e-13));
        }
    }
}

TEST_CASE("declared lipschitz bound dominates empirical slopes") {
    GaussianEndpoints ep = GaussianEndpoints::isotropic(2, 0.0, 1.0, 1.5, 0.75);
    auto field = std::make_shared<RfGaussianField>(ep);
    double declared = field->lipschitz_bound().value();
    double empirical = empirical_lipschitz(*field, 10000, 37);
    REQUIRE(empirical <= declared * (1.0 + 1e-9));
}

TEST_CASE("label restriction keeps only matching components") {
    GmmSpec gmm;
    gmm.weights = {0.25, 0.25, 0.25, 0.25};
    gmm.means = {{-1.0}, {1.0}, {-2.0}, {2.0}};
    gmm.stds = {0.5, 0.5, 0.5, 0.5};
    gmm.labels = {0, 1, 0, 1};
    GmmSpec r = gmm.restricted(1);
    REQUIRE(r.components() == 2);
    REQUIRE(r.means[0][0] == 1.0);
    REQUIRE(r.means[1][0] == 2.0);
    REQUIRE(r.weights[0] + r.weights[1] == Catch::Approx(1.0).margin(1e-15));
    REQUIRE_THROWS_AS(gmm.restricted(7), ConfigError);
}
