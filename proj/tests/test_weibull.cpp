#include <gtest/gtest.h>

#include <cmath>

#include "ruackit/rng.hpp"
#include "ruackit/weibull.hpp"

using namespace ruackit;

TEST(Weibull, SampleClosedFormPoints) {
    EXPECT_NEAR(weibull_sample({2.0, 1.0}, 1.0 - std::exp(-1.0)), 2.0, 1e-12);
    EXPECT_NEAR(weibull_sample({1.0, 2.0}, 1.0 - std::exp(-4.0)), 2.0, 1e-12);
    EXPECT_LT(weibull_sample({1.0, 2.0}, 1e-12), 1e-5);  // u -> 0+ gives w -> 0+
    EXPECT_THROW(weibull_sample({1.0, 1.0}, 0.0), std::invalid_argument);
    EXPECT_THROW(weibull_sample({1.0, 1.0}, 1.0), std::invalid_argument);
}

TEST(Weibull, SampleIsMonotoneInU) {
    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        WeibullParams p{rng.uniform(0.2, 4.0), rng.uniform(0.5, 10.0)};
        double u1 = rng.uniform(0.01, 0.98);
        double u2 = u1 + rng.uniform(1e-4, 1.0 - u1 - 1e-4);
        EXPECT_LT(weibull_sample(p, u1), weibull_sample(p, u2));
    }
}

TEST(Weibull, MeanClosedForm) {
    EXPECT_NEAR(weibull_mean({3.0, 1.0}), 3.0, 1e-12);
    EXPECT_NEAR(weibull_mean({2.0, 0.5}), 4.0, 1e-10);
    // Gamma(1.5) = sqrt(pi)/2 via an independent route
    EXPECT_NEAR(weibull_mean({1.0, 2.0}), std::sqrt(M_PI) / 2.0, 1e-10);
}

TEST(Weibull, VarianceClosedForm) {
    EXPECT_NEAR(weibull_variance({1.0, 1.0}), 1.0, 1e-12);
    EXPECT_NEAR(weibull_variance({2.0, 1.0}), 4.0, 1e-11);
    EXPECT_NEAR(weibull_variance({1.0, 2.0}), 1.0 - M_PI / 4.0, 1e-10);
}

TEST(Weibull, EmpiricalMomentsMatchClosedForms) {
    // 1e6 reparameterized draws: mean within 0.5%, variance within 2%
    Rng rng(99);
    for (WeibullParams p : {WeibullParams{1.0, 1.0}, WeibullParams{2.0, 2.0},
                            WeibullParams{0.5, 0.7}, WeibullParams{1.5, 5.0}}) {
        const int n = 1000000;
        double s = 0.0, s2 = 0.0;
        for (int i = 0; i < n; ++i) {
            double w = weibull_sample(p, rng.uniform_open01());
            s += w;
            s2 += w * w;
        }
        double mean = s / n;
        double var = s2 / n - mean * mean;
        EXPECT_NEAR(mean, weibull_mean(p), 0.005 * weibull_mean(p));
        EXPECT_NEAR(var, weibull_variance(p), 0.02 * weibull_variance(p));
    }
}

TEST(Weibull, KlZeroAtMatchedExponential) {
    // Weibull(1/3, 1) is Exponential(rate 3) = Gamma(1, 3)
    EXPECT_NEAR(kl_weibull_gamma({1.0 / 3.0, 1.0}, {1.0, 3.0}), 0.0, 1e-9);
    EXPECT_NEAR(kl_weibull_gamma({1.0, 1.0}, {1.0, 1.0}), 0.0, 1e-9);
}

namespace {

double mc_kl(const WeibullParams& p, const GammaPrior& prior, int n, std::uint64_t seed) {
    Rng rng(seed);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        double w = weibull_sample(p, rng.uniform_open01());
        acc += weibull_log_pdf(p, w) - gamma_log_pdf(prior, w);
    }
    return acc / n;
}

}  // namespace

TEST(Weibull, KlMatchesMonteCarloEstimate) {
    WeibullParams p{1.0, 2.0};
    GammaPrior prior{1.0, 3.0};
    double closed = kl_weibull_gamma(p, prior);
    double mc = mc_kl(p, prior, 1000000, 1234);
    EXPECT_NEAR(closed, mc, 0.01 * std::abs(mc));
}

TEST(Weibull, KlNonNegativeOnParameterGrid) {
    // 5x5 posterior grid x 3x3 prior grid; zero only at the matched point.
    const double lams[5] = {1.0 / 3.0, 0.5, 1.0, 2.0, 4.0};
    const double kaps[5] = {0.5, 1.0, 2.0, 5.0, 10.0};
    const double alphas[3] = {0.5, 1.0, 2.0};
    const double betas[3] = {1.0, 3.0, 5.0};
    for (double lam : lams)
        for (double kap : kaps)
            for (double a : alphas)
                for (double b : betas) {
                    double kl = kl_weibull_gamma({lam, kap}, {a, b});
                    EXPECT_GE(kl, -1e-12);
                    bool matched = kap == 1.0 && a == 1.0 && std::abs(lam * b - 1.0) < 1e-12;
                    if (matched)
                        EXPECT_NEAR(kl, 0.0, 1e-9);
                    else
                        EXPECT_GT(kl, 1e-6);
                }
}

TEST(Weibull, TapeCompositionsAgreeWithScalarForms) {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        double lam = rng.uniform(0.3, 3.0), kap = rng.uniform(0.5, 8.0);
        Tape t;
        Value lv = t.param(Grid::scalar(lam));
        Value kv = t.param(Grid::scalar(kap));
        EXPECT_NEAR(weibull_mean_v(lv, kv).value()[0], weibull_mean({lam, kap}), 1e-10);
        EXPECT_NEAR(weibull_variance_v(lv, kv).value()[0], weibull_variance({lam, kap}), 1e-10);
        GammaPrior prior{1.0, 3.0};
        EXPECT_NEAR(kl_weibull_gamma_v(lv, kv, prior).value()[0],
                    kl_weibull_gamma({lam, kap}, prior), 1e-10);
    }
}

TEST(Weibull, TapeKlGradientsPassFiniteDifferences) {
    Rng rng(8);
    for (int trial = 0; trial < 5; ++trial) {
        Grid lam = rng.uniform_grid({3}, 0.4, 2.5);
        Grid kap = rng.uniform_grid({3}, 0.7, 6.0);
        double err = grad_check(
            [](Tape&, const std::vector<Value>& p) {
                return kl_weibull_gamma_v(p[0], p[1], GammaPrior{}).sum();
            },
            {lam, kap}, 1e-5);
        EXPECT_LT(err, 1e-4);
    }
}
