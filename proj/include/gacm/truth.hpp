#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "family.hpp"

namespace gacm {

/// Closed-form coefficient functions on [0,1], each with zero mean under
/// the uniform distribution.
struct TruthFn {
    enum class Kind { Zero, Cos2Pi, Sin2Pi, SinCos2Pi, Linear, Quadratic };
    Kind kind = Kind::Zero;
    double amplitude = 0.0;

    double operator()(double x) const {
        constexpr double tau = 2.0 * std::numbers::pi;
        switch (kind) {
        case Kind::Zero: return 0.0;
        case Kind::Cos2Pi: return amplitude * std::cos(tau * x);
        case Kind::Sin2Pi: return amplitude * std::sin(tau * x);
        case Kind::SinCos2Pi: return amplitude * (std::sin(tau * x) + std::cos(tau * x));
        case Kind::Linear: return amplitude * (2.0 * x - 1.0);
        case Kind::Quadratic: return amplitude * ((2.0 * x - 1.0) * (2.0 * x - 1.0) - 1.0 / 3.0);
        }
        return 0.0;
    }

    static const char* kind_name(Kind k) {
        switch (k) {
        case Kind::Zero: return "zero";
        case Kind::Cos2Pi: return "cos2pi";
        case Kind::Sin2Pi: return "sin2pi";
        case Kind::SinCos2Pi: return "sincos2pi";
        case Kind::Linear: return "linear";
        case Kind::Quadratic: return "quadratic";
        }
        return "zero";
    }
    static Kind kind_from_name(const std::string& s) {
        for (Kind k : {Kind::Zero, Kind::Cos2Pi, Kind::Sin2Pi, Kind::SinCos2Pi, Kind::Linear, Kind::Quadratic})
            if (s == kind_name(k)) return k;
        throw SchemaError("kind", "unknown truth function kind '" + s + "'");
    }
};

/// True model: eta_i = sum over signal groups l of
/// {intercept_l + sum_k f_lk(X_ik)} T_il; every other group is zero.
struct TruthSpec {
    Family family = Family::logit();
    Eigen::Index n = 0, p = 0, d = 0;
    std::vector<int> signal;                 // T columns, 0-based
    std::vector<double> intercept;           // per signal group
    std::vector<std::vector<TruthFn>> fns;   // [signal group][covariate]

    Eigen::Index s() const { return static_cast<Eigen::Index>(signal.size()); }

    /// Position of T column l among the signal groups, or -1.
    int signal_index(int l) const {
        for (std::size_t j = 0; j < signal.size(); ++j)
            if (signal[j] == l) return static_cast<int>(j);
        return -1;
    }
    bool is_signal(int l) const { return signal_index(l) >= 0; }

    double alpha0(int l) const {
        const int j = signal_index(l);
        return j < 0 ? 0.0 : intercept[static_cast<std::size_t>(j)];
    }
    double alpha(int l, Eigen::Index k, double x) const {
        const int j = signal_index(l);
        return j < 0 ? 0.0 : fns[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)](x);
    }

    double eta_row(const Eigen::Ref<const Eigen::RowVectorXd>& x, const Eigen::Ref<const Eigen::RowVectorXd>& t) const {
        double e = 0.0;
        for (std::size_t j = 0; j < signal.size(); ++j) {
            double coef = intercept[j];
            for (Eigen::Index k = 0; k < d; ++k) coef += fns[j][static_cast<std::size_t>(k)](x[k]);
            e += coef * t[signal[j]];
        }
        return e;
    }

    Eigen::VectorXd eta(const Eigen::MatrixXd& X, const Eigen::MatrixXd& T) const {
        Eigen::VectorXd out(X.rows());
        for (Eigen::Index i = 0; i < X.rows(); ++i) out[i] = eta_row(X.row(i), T.row(i));
        return out;
    }

    Eigen::VectorXd mean(const Eigen::MatrixXd& X, const Eigen::MatrixXd& T) const {
        Eigen::VectorXd e = eta(X, T);
        for (auto& v : e) v = family.mean(v);
        return e;
    }

    void validate() const {
        if (intercept.size() != signal.size() || fns.size() != signal.size())
            throw SchemaError("signal", "truth signal, intercept and function lists differ in length");
        for (const auto& row : fns)
            if (static_cast<Eigen::Index>(row.size()) != d)
                throw SchemaError("functions", "truth function row does not have d entries");
        for (int l : signal)
            if (l < 0 || l >= p) throw SchemaError("signal", "signal column out of range");
    }
};

/// The four signal groups of the simulation design, d = 2.
inline TruthSpec example1_truth(Eigen::Index n, Eigen::Index p) {
    using K = TruthFn::Kind;
    TruthSpec t;
    t.family = Family::logit();
    t.n = n;
    t.p = p;
    t.d = 2;
    t.signal = {0, 1, 2, 3};
    t.intercept = {0.5, 0.5, 0.5, 0.5};
    const TruthFn cos4{K::Cos2Pi, 4.0}, quad5{K::Quadratic, 5.0}, lin3{K::Linear, 3.0},
        sincos4{K::SinCos2Pi, 4.0}, sin4{K::Sin2Pi, 4.0};
    t.fns = {{cos4, quad5}, {lin3, sincos4}, {sin4, lin3}, {cos4, quad5}};
    return t;
}

} // namespace gacm
