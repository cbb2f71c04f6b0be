#pragma once

#include <cmath>
#include <stdexcept>

#include "ruackit/special.hpp"
#include "ruackit/tape.hpp"

namespace ruackit {

inline constexpr double kKappaMin = 0.5;
inline constexpr double kKappaMax = 10.0;

/// Scale/shape pair of one Weibull posterior element.
struct WeibullParams {
    double lambda = 1.0;
    double kappa = 1.0;

    void validate() const {
        if (!(lambda > 0.0)) throw std::invalid_argument("WeibullParams: lambda must be > 0");
        if (!(kappa >= kKappaMin && kappa <= kKappaMax))
            throw std::invalid_argument("WeibullParams: kappa outside [0.5, 10.0]");
    }
};

/// Gamma prior in shape/rate form. Default (1, 3).
struct GammaPrior {
    double alpha = 1.0;
    double beta = 3.0;

    void validate() const {
        if (!(alpha > 0.0 && beta > 0.0))
            throw std::invalid_argument("GammaPrior: alpha and beta must be > 0");
    }
};

/// Inverse-CDF reparameterized draw: w = lambda * (-ln(1-u))^(1/kappa).
inline double weibull_sample(const WeibullParams& p, double u) {
    p.validate();
    if (!(u > 0.0 && u < 1.0))
        throw std::invalid_argument("weibull_sample: u must lie in (0,1)");
    return p.lambda * std::pow(-std::log1p(-u), 1.0 / p.kappa);
}

/// E[w] = lambda * Gamma(1 + 1/kappa).
inline double weibull_mean(const WeibullParams& p) {
    p.validate();
    return p.lambda * gamma_fn(1.0 + 1.0 / p.kappa);
}

/// Var[w] = lambda^2 * (Gamma(1 + 2/kappa) - Gamma(1 + 1/kappa)^2).
inline double weibull_variance(const WeibullParams& p) {
    p.validate();
    double g1 = gamma_fn(1.0 + 1.0 / p.kappa);
    double g2 = gamma_fn(1.0 + 2.0 / p.kappa);
    return p.lambda * p.lambda * (g2 - g1 * g1);
}

/// KL(Weibull(lambda, kappa) || Gamma(alpha, beta)), shape/rate Gamma.
/// Standard closed form; validated against a Monte Carlo estimate in tests.
inline double kl_weibull_gamma(const WeibullParams& p, const GammaPrior& prior) {
    p.validate();
    prior.validate();
    double lam = p.lambda, kap = p.kappa, a = prior.alpha, b = prior.beta;
    return kEulerGamma * a / kap - a * std::log(lam) + std::log(kap) +
           b * lam * gamma_fn(1.0 + 1.0 / kap) - a * std::log(b) + log_gamma(a) -
           kEulerGamma - 1.0;
}

/// ln q(w) for Weibull(lambda, kappa); used by the MC KL oracle.
inline double weibull_log_pdf(const WeibullParams& p, double w) {
    double z = w / p.lambda;
    return std::log(p.kappa / p.lambda) + (p.kappa - 1.0) * std::log(z) -
           std::pow(z, p.kappa);
}

/// ln p(w) for Gamma(alpha, beta) in shape/rate form.
inline double gamma_log_pdf(const GammaPrior& g, double w) {
    return g.alpha * std::log(g.beta) - log_gamma(g.alpha) +
           (g.alpha - 1.0) * std::log(w) - g.beta * w;
}

// ---- tape compositions (element-wise over lambda/kappa grids) ----

/// E[w] on the tape: lam * exp(lgamma(1 + 1/kap)).
inline Value weibull_mean_v(Value lam, Value kap) {
    return lam * (1.0 + 1.0 / kap).lgamma().exp();
}

/// Var[w] on the tape.
inline Value weibull_variance_v(Value lam, Value kap) {
    Value g1 = (1.0 + 1.0 / kap).lgamma().exp();
    Value g2 = (1.0 + 2.0 / kap).lgamma().exp();
    return lam * lam * (g2 - g1 * g1);
}

/// Element-wise KL to the Gamma prior on the tape.
inline Value kl_weibull_gamma_v(Value lam, Value kap, const GammaPrior& prior) {
    prior.validate();
    double a = prior.alpha, b = prior.beta;
    Value mean_term = b * lam * (1.0 + 1.0 / kap).lgamma().exp();
    return kEulerGamma * a / kap - a * lam.log() + kap.log() + mean_term +
           (-a * std::log(b) + log_gamma(a) - kEulerGamma - 1.0);
}

}  // namespace ruackit
