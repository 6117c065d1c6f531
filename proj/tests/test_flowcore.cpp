#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "avflow/flowcore.hpp"
#include "avflow/rng.hpp"

#include "testutil.hpp"

using namespace avflow;

TEST_CASE("interpolate: endpoints and linearity") {
    Rng rng(1);
    Tensor x0 = rng.normal_tensor({5});
    Tensor x1 = rng.normal_tensor({5});
    CHECK(interpolate(x0, x1, 0.0).value.identical(x0));
    CHECK(interpolate(x0, x1, 1.0).value.identical(x1));

    PathState mid = interpolate(Tensor::vec({0.0}), Tensor::vec({2.0}), 0.25);
    CHECK(mid.value[0] == 0.5);
    CHECK(mid.time == 0.25);

    CHECK_THROWS_AS(interpolate(x0, Tensor::vec({1.0}), 0.5), ContractViolation);
    CHECK_THROWS_AS(interpolate(x0, x1, 1.5), ContractViolation);
}

TEST_CASE("TimePair: construction and degenerate alphas") {
    TimePair a(0.9, 0.3, 0.0);
    CHECK(a.m == 0.9);  // alpha = 0 puts m exactly at t1
    TimePair b(0.9, 0.3, 1.0);
    CHECK(b.m == 0.3);  // alpha = 1 puts m exactly at t2
    TimePair c(0.8, 0.2, 0.5);
    CHECK(c.m == Catch::Approx(0.5).margin(1e-15));
    CHECK(c.d1() == Catch::Approx(0.3).margin(1e-15));
    CHECK(c.d2() == Catch::Approx(0.3).margin(1e-15));
    CHECK_THROWS_AS(TimePair(0.2, 0.8, 0.5), ContractViolation);
    CHECK_THROWS_AS(TimePair(0.8, 0.2, 1.5), ContractViolation);
}

TEST_CASE("sample_time_pair: forced equal-times branch") {
    Rng rng(7);
    TimeSamplerConfig cfg;
    cfg.p_equal = 1.0;
    for (int i = 0; i < 200; ++i) {
        TimePair tp = sample_time_pair(rng, cfg);
        CHECK(tp.t1 == tp.t2);
        CHECK(tp.m == tp.t1);
    }
}

TEST_CASE("sample_time_pair: invariants hold over 1e6 draws") {
    Rng rng(11);
    TimeSamplerConfig cfg;
    bool ok = true;
    for (int i = 0; i < 1000000 && ok; ++i) {
        TimePair tp = sample_time_pair(rng, cfg);
        ok = tp.t1 > 0.0 && tp.t1 < 1.0 && tp.t2 > 0.0 && tp.t2 < 1.0 && tp.t2 <= tp.m && tp.m <= tp.t1 &&
             tp.alpha >= 0.0 && tp.alpha <= 1.0 &&
             std::abs(tp.m - (tp.t1 + tp.alpha * (tp.t2 - tp.t1))) <= 1e-12;
    }
    CHECK(ok);
}

TEST_CASE("sample_time_pair: raw-time mean matches an independent Monte-Carlo oracle") {
    // implementation side: mean over both drawn times with the equal-times
    // branch disabled, so the multiset of raw draws is untouched by sorting
    Rng rng(13);
    TimeSamplerConfig cfg;
    cfg.p_equal = 0.0;
    const int n = 1000000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        TimePair tp = sample_time_pair(rng, cfg);
        sum += tp.t1 + tp.t2;
        sum_sq += tp.t1 * tp.t1 + tp.t2 * tp.t2;
    }
    const double mean_impl = sum / (2.0 * n);
    const double var_impl = sum_sq / (2.0 * n) - mean_impl * mean_impl;

    // oracle side: a fresh direct simulation of sigmoid(N(-0.4, 1))
    Rng oracle_rng(987654321);
    double osum = 0.0, osum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double t = 1.0 / (1.0 + std::exp(-(-0.4 + oracle_rng.normal())));
        osum += t;
        osum_sq += t * t;
    }
    const double mean_oracle = osum / n;
    const double var_oracle = osum_sq / n - mean_oracle * mean_oracle;

    const double se = std::sqrt(var_impl / (2.0 * n) + var_oracle / n);
    CHECK(std::abs(mean_impl - mean_oracle) < 3.0 * se);
}

TEST_CASE("oracle_velocity: closed forms") {
    Tensor x = Tensor::vec({1.0});
    OracleField cf = OracleField::constant(Tensor::vec({2.0}));
    CHECK(oracle_velocity(cf, x, 0.1)[0] == 2.0);
    CHECK(oracle_velocity(cf, Tensor::vec({-3.0}), 0.9)[0] == 2.0);

    OracleField sp = OracleField::single_point(Tensor::vec({0.0}));
    CHECK(oracle_velocity(sp, x, 0.5)[0] == 2.0);  // (1-0)/0.5
    CHECK_THROWS_AS(oracle_velocity(sp, x, 1e-10), DomainError);

    OracleField g1 = OracleField::gaussian1d(1.0);
    CHECK(oracle_velocity(g1, x, 0.5)[0] == 0.0);  // t == (1-t)·sigma0^2
    CHECK_THROWS_AS(OracleField::gaussian1d(0.0), ContractViolation);
}

TEST_CASE("oracle_velocity: gaussian form matches a windowed Monte-Carlo conditional mean") {
    struct Case {
        double sigma0, t, x;
    };
    for (const Case c : {Case{1.0, 0.5, 1.0}, Case{2.0, 0.3, 0.7}}) {
        OracleField field = OracleField::gaussian1d(c.sigma0);
        const double expected = oracle_velocity(field, Tensor::vec({c.x}), c.t)[0];

        Rng rng(5000 + static_cast<std::uint64_t>(c.sigma0 * 10.0));
        const int n = 4000000;
        const double window = 0.02;
        double acc = 0.0, acc_sq = 0.0;
        long hits = 0;
        for (int i = 0; i < n; ++i) {
            const double x0 = c.sigma0 * rng.normal();
            const double x1 = rng.normal();
            const double xt = (1.0 - c.t) * x0 + c.t * x1;
            if (std::abs(xt - c.x) < window) {
                const double v = x1 - x0;
                acc += v;
                acc_sq += v * v;
                ++hits;
            }
        }
        REQUIRE(hits > 1000);
        const double mc = acc / static_cast<double>(hits);
        const double mc_var = acc_sq / static_cast<double>(hits) - mc * mc;
        const double se = std::sqrt(mc_var / static_cast<double>(hits));
        INFO("sigma0=" << c.sigma0 << " expected=" << expected << " mc=" << mc << " se=" << se);
        CHECK(std::abs(mc - expected) < 3.0 * se + 0.01);
    }
}

TEST_CASE("displacement: closed forms and convergence") {
    Tensor x = Tensor::vec({1.5});

    OracleField cf = OracleField::constant(Tensor::vec({-0.7}));
    Tensor k = displacement(cf, x, 0.8, 0.3, 64);
    CHECK(k[0] == Catch::Approx(-0.7 * 0.5).margin(1e-14));

    // single-point trajectories are straight, so v is constant along them
    OracleField sp = OracleField::single_point(Tensor::vec({0.25}));
    Tensor k2 = displacement(sp, x, 0.8, 0.1, 256);
    const double expected = (1.5 - 0.25) / 0.8 * (0.8 - 0.1);
    CHECK(k2[0] == Catch::Approx(expected).margin(1e-12));

    // self-convergence
    OracleField g = OracleField::gaussian1d(2.0);
    Tensor coarse = displacement(g, Tensor::vec({1.0}), 0.9, 0.3, 256);
    Tensor fine = displacement(g, Tensor::vec({1.0}), 0.9, 0.3, 4096);
    CHECK(std::abs(coarse[0] - fine[0]) < 1e-9);

    // 4th-order error decay: halving the step shrinks the error ~16x
    OracleField g3 = OracleField::gaussian1d(3.0);
    const double ref = displacement(g3, Tensor::vec({1.0}), 0.95, 0.05, 8192)[0];
    const double e8 = std::abs(displacement(g3, Tensor::vec({1.0}), 0.95, 0.05, 8)[0] - ref);
    const double e16 = std::abs(displacement(g3, Tensor::vec({1.0}), 0.95, 0.05, 16)[0] - ref);
    CHECK(e8 / e16 > 8.0);
    CHECK(e8 / e16 < 40.0);

    CHECK_THROWS_AS(displacement(cf, x, 0.3, 0.8, 64), ContractViolation);
}

TEST_CASE("average_velocity: boundary and closed forms") {
    Tensor x = Tensor::vec({0.8});
    OracleField g = OracleField::gaussian1d(2.0);

    // t1 == t2 goes through the instantaneous-velocity code path, bitwise
    CHECK(average_velocity(g, x, 0.4, 0.4).identical(oracle_velocity(g, x, 0.4)));

    OracleField cf = OracleField::constant(Tensor::vec({3.25}));
    CHECK(average_velocity(cf, x, 0.9, 0.2, 128)[0] == Catch::Approx(3.25).margin(1e-13));

    OracleField sp = OracleField::single_point(Tensor::vec({-0.5}));
    const double want = (0.8 - (-0.5)) / 0.9;
    CHECK(average_velocity(sp, x, 0.9, 0.5, 256)[0] == Catch::Approx(want).margin(1e-12));
    CHECK(average_velocity(sp, x, 0.9, 0.1, 256)[0] == Catch::Approx(want).margin(1e-12));  // independent of t2
}

TEST_CASE("meanflow identity residual") {
    Tensor x = Tensor::vec({1.2});

    OracleField cf = OracleField::constant(Tensor::vec({0.4}));
    CHECK(check_meanflow_identity(cf, x, 0.8, 0.2, 1e-4, 512) < 1e-13);

    OracleField sp = OracleField::single_point(Tensor::vec({0.1}));
    CHECK(check_meanflow_identity(sp, x, 0.8, 0.2, 1e-4, 512) < 1e-10);

    OracleField g = OracleField::gaussian1d(2.0);
    const double r = check_meanflow_identity(g, x, 0.8, 0.2, 1e-4, 1024);
    CHECK(r < 1e-6);

    // O(h^2) decay of the finite-difference residual
    const double r_coarse = check_meanflow_identity(g, x, 0.8, 0.2, 1e-2, 1024);
    const double r_fine = check_meanflow_identity(g, x, 0.8, 0.2, 1e-3, 1024);
    CHECK(r_coarse / r_fine > 30.0);
    CHECK(r_coarse / r_fine < 300.0);
}

TEST_CASE("composition identity residual") {
    Tensor x = Tensor::vec({1.0});
    OracleField g = OracleField::gaussian1d(2.0);

    CHECK(check_composition_identity(g, x, 0.9, 0.9, 0.1, 512) == 0.0);  // m == t1
    CHECK(check_composition_identity(g, x, 0.9, 0.1, 0.1, 512) == 0.0);  // m == t2

    CHECK(check_composition_identity(g, x, 0.9, 0.5, 0.1, 2048) < 1e-8);

    // residual shrinks as the integrator is refined
    const double coarse = check_composition_identity(g, x, 0.9, 0.5, 0.1, 16);
    const double fine = check_composition_identity(g, x, 0.9, 0.5, 0.1, 1024);
    CHECK(fine < coarse);

    CHECK_THROWS_AS(check_composition_identity(g, x, 0.5, 0.5, 0.5, 64), ContractViolation);
    CHECK_THROWS_AS(check_composition_identity(g, x, 0.9, 0.95, 0.1, 64), ContractViolation);
}

TEST_CASE("displacement additivity and composition sweep under 1e-8") {
    Tensor x = Tensor::vec({0.9});
    const std::vector<OracleField> fields = {OracleField::constant(Tensor::vec({1.1})),
                                             OracleField::single_point(Tensor::vec({-0.2})),
                                             OracleField::gaussian1d(2.0)};
    const std::vector<double> ts = {0.15, 0.5, 0.85};
    for (const auto& field : fields)
        for (double t1 : ts)
            for (double m : ts)
                for (double t2 : ts) {
                    if (!(t2 <= m && m <= t1)) continue;
                    CHECK(check_displacement_additivity(field, x, t1, m, t2, 2048) < 1e-8);
                    if (t1 > t2) CHECK(check_composition_identity(field, x, t1, m, t2, 2048) < 1e-8);
                }
}

TEST_CASE("split-point conventions agree after relabeling alpha to 1-alpha") {
    // the cited convention s = t2 + alpha·(t1-t2) equals Algorithm 1's
    // m = t1 + alpha'·(t2-t1) at alpha' = 1-alpha
    Rng rng(99);
    Tensor x = Tensor::vec({1.3});
    OracleField g = OracleField::gaussian1d(2.0);
    for (int i = 0; i < 20; ++i) {
        const double t1 = rng.uniform(0.5, 0.95);
        const double t2 = rng.uniform(0.05, 0.45);
        const double alpha = rng.uniform01();
        const double m_alg = t1 + (1.0 - alpha) * (t2 - t1);
        const double s_paper = t2 + alpha * (t1 - t2);
        CHECK(std::abs(m_alg - s_paper) < 1e-15);
        const double ra = check_composition_identity(g, x, t1, m_alg, t2, 512);
        const double rb = check_composition_identity(g, x, t1, s_paper, t2, 512);
        CHECK(std::abs(ra - rb) < 1e-12);
        CHECK(ra < 1e-7);
    }
}
