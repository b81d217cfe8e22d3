#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "error.hpp"

namespace gacm {

enum class FamilyKind { BernoulliLogit, GaussianIdentity };

/// First derivative of the quasi-likelihood in eta and the Fisher weight.
struct QDerivs {
    double q1;  // -(y - mu) * rho_1(eta)
    double w;   // rho_2(eta) = (dmu/deta)^2 / V(mu)
};

/// Quasi-likelihood family: link, variance function and the derived
/// quantities the optimizer needs. Losses are oriented for minimization.
class Family {
public:
    static constexpr double kMeanClamp = 1e-12;

    constexpr explicit Family(FamilyKind kind = FamilyKind::BernoulliLogit) : kind_(kind) {}
    static constexpr Family logit() { return Family(FamilyKind::BernoulliLogit); }
    static constexpr Family gaussian() { return Family(FamilyKind::GaussianIdentity); }

    static Family from_name(const std::string& name) {
        if (name == "logit" || name == "bernoulli-logit" || name == "binomial") return logit();
        if (name == "gaussian" || name == "gaussian-identity" || name == "identity")
            return gaussian();
        throw ArgumentError("unknown family '" + name + "'");
    }

    constexpr FamilyKind kind() const { return kind_; }
    constexpr bool canonical() const { return true; }
    std::string name() const {
        return kind_ == FamilyKind::BernoulliLogit ? "bernoulli-logit" : "gaussian-identity";
    }

    bool valid_response(double y) const {
        if (!std::isfinite(y)) return false;
        return kind_ == FamilyKind::GaussianIdentity || (y >= 0.0 && y <= 1.0);
    }

    /// g^{-1}(eta); the logit mean is clamped to [1e-12, 1 - 1e-12].
    double mean(double eta) const {
        if (kind_ == FamilyKind::GaussianIdentity) return eta;
        double mu;
        if (eta >= 0.0) {
            mu = 1.0 / (1.0 + std::exp(-eta));
        } else {
            const double e = std::exp(eta);
            mu = e / (1.0 + e);
        }
        return clamp_mean(mu);
    }

    /// d g^{-1} / d eta, evaluated consistently with the clamped mean.
    double mu_eta(double eta) const {
        if (kind_ == FamilyKind::GaussianIdentity) return 1.0;
        const double mu = mean(eta);
        return mu * (1.0 - mu);
    }

    double variance(double mu) const {
        if (kind_ == FamilyKind::GaussianIdentity) return 1.0;
        mu = clamp_mean(mu);
        return mu * (1.0 - mu);
    }

    QDerivs q_derivs(double eta, double y) const {
        const double mu = mean(eta);
        const double d = mu_eta(eta);
        const double v = variance(mu);
        const double rho1 = d / v;
        return {-(y - mu) * rho1, d * d / v};
    }

    /// Q(g^{-1}(eta), y) evaluated in eta without forming 1 - mu, which keeps
    /// the loss accurate when the mean saturates. Agrees with q_loss(mean(eta), y).
    double loss_eta(double eta, double y) const {
        if (kind_ == FamilyKind::GaussianIdentity) return 0.5 * (y - eta) * (y - eta);
        const double e = std::clamp(eta, -kEtaClamp, kEtaClamp);
        // -log(mu) = softplus(-e), -log(1 - mu) = softplus(e)
        return xlogx(y) + xlogx(1.0 - y) + y * softplus(-e) + (1.0 - y) * softplus(e);
    }

    /// Q(mu, y) = int_mu^y (y - z) / V(z) dz.
    double q_loss(double mu, double y) const {
        if (kind_ == FamilyKind::GaussianIdentity) return 0.5 * (y - mu) * (y - mu);
        mu = clamp_mean(mu);
        return xlogx_ratio(y, mu) + xlogx_ratio(1.0 - y, 1.0 - mu);
    }

private:
    static constexpr double kEtaClamp = 27.631021115928547;  // logit(1 - 1e-12)

    static double softplus(double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }
    static double xlogx(double a) { return a > 0.0 ? a * std::log(a) : 0.0; }
    static double clamp_mean(double mu) {
        if (mu < kMeanClamp) return kMeanClamp;
        if (mu > 1.0 - kMeanClamp) return 1.0 - kMeanClamp;
        return mu;
    }
    // a * log(a / b) with 0 * log 0 := 0
    static double xlogx_ratio(double a, double b) { return a > 0.0 ? a * std::log(a / b) : 0.0; }

    FamilyKind kind_;
};

} // namespace gacm
