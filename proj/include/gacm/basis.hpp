#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"

namespace gacm {

/// Clamped knot vector on [0,1]: boundary knots 0 and 1 each repeated `order`
/// times around strictly increasing interior knots in (0,1).
struct KnotVector {
    int order = 4;                 // q; polynomial degree is q - 1
    std::vector<double> interior;  // t_1 < ... < t_N
    int requested_interior = 0;    // N asked for before tie collapsing

    int num_interior() const { return static_cast<int>(interior.size()); }
    /// Number of raw B-spline functions, J = N + q.
    int size() const { return num_interior() + order; }
    bool reduced() const { return num_interior() < requested_interior; }

    /// Full knot sequence of length J + q.
    std::vector<double> full() const {
        std::vector<double> u(static_cast<std::size_t>(size() + order));
        std::fill_n(u.begin(), order, 0.0);
        std::copy(interior.begin(), interior.end(), u.begin() + order);
        std::fill(u.begin() + order + num_interior(), u.end(), 1.0);
        return u;
    }
};

inline KnotVector make_knot_vector(std::vector<double> interior, int order) {
    if (order < 2) throw ArgumentError("spline order must be >= 2");
    for (std::size_t i = 0; i < interior.size(); ++i) {
        if (!(interior[i] > 0.0 && interior[i] < 1.0))
            throw DomainError("interior knots must lie in (0,1)");
        if (i > 0 && !(interior[i] > interior[i - 1]))
            throw ArgumentError("interior knots must be strictly increasing");
    }
    KnotVector kv;
    kv.order = order;
    kv.requested_interior = static_cast<int>(interior.size());
    kv.interior = std::move(interior);
    return kv;
}

namespace detail {

// Linear-interpolation empirical quantile of sorted data (the usual "type 7").
inline double quantile_sorted(const std::vector<double>& s, double prob) {
    const double h = (static_cast<double>(s.size()) - 1.0) * prob;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, s.size() - 1);
    return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

} // namespace detail

/// Interior knots at the j/(N+1) empirical quantiles of `column`. Tied
/// quantiles and quantiles landing on the boundary are collapsed, which
/// lowers N; `requested_interior` keeps the original request.
inline KnotVector make_knots(const Eigen::Ref<const Eigen::VectorXd>& column, int num_interior,
                             int order, const std::string& name = "x") {
    if (num_interior < 0) throw ArgumentError("number of interior knots must be >= 0");
    if (order < 2) throw ArgumentError("spline order must be >= 2");
    std::vector<double> s(column.data(), column.data() + column.size());
    if (s.empty()) throw DegenerateCovariate(name, "covariate '" + name + "' is empty");
    std::sort(s.begin(), s.end());
    if (s.front() < 0.0 || s.back() > 1.0)
        throw DomainError("covariate '" + name + "' has values outside [0,1]");
    if (s.front() == s.back())
        throw DegenerateCovariate(name, "covariate '" + name + "' is constant");

    std::vector<double> knots;
    for (int j = 1; j <= num_interior; ++j) {
        double t = detail::quantile_sorted(s, static_cast<double>(j) / (num_interior + 1));
        if (t <= 0.0 || t >= 1.0) continue;
        if (!knots.empty() && t <= knots.back()) continue;
        knots.push_back(t);
    }
    KnotVector kv;
    kv.order = order;
    kv.interior = std::move(knots);
    kv.requested_interior = num_interior;
    return kv;
}

/// Writes the J raw B-spline values at x into `out` (Cox-de Boor, evaluated
/// on the single nonzero span). x = 1 belongs to the last span.
inline void eval_raw(const KnotVector& kv, double x, Eigen::Ref<Eigen::VectorXd> out) {
    if (!(x >= 0.0 && x <= 1.0)) throw DomainError("spline argument outside [0,1]");
    const int q = kv.order;
    const int deg = q - 1;
    const int J = kv.size();
    if (out.size() != J) throw StructuralError("eval_raw output has wrong length");
    out.setZero();

    // Span s with u[s] <= x < u[s+1], s in [q-1, J-1]; u[q-1+i] is the i-th breakpoint.
    auto it = std::upper_bound(kv.interior.begin(), kv.interior.end(), x);
    const int span = deg + static_cast<int>(it - kv.interior.begin());
    auto knot = [&](int idx) -> double {
        if (idx < q) return 0.0;
        if (idx >= q + kv.num_interior()) return 1.0;
        return kv.interior[static_cast<std::size_t>(idx - q)];
    };

    double vals[32];
    double left[32];
    double right[32];
    if (q > 32) throw ArgumentError("spline order above 32 is not supported");
    vals[0] = 1.0;
    for (int j = 1; j <= deg; ++j) {
        left[j] = x - knot(span + 1 - j);
        right[j] = knot(span + j) - x;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            const double denom = right[r + 1] + left[j - r];
            const double temp = denom > 0.0 ? vals[r] / denom : 0.0;
            vals[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        vals[j] = saved;
    }
    for (int r = 0; r <= deg; ++r) out[span - deg + r] = vals[r];
}

inline Eigen::VectorXd eval_raw(const KnotVector& kv, double x) {
    Eigen::VectorXd out(kv.size());
    eval_raw(kv, x, out);
    return out;
}

/// Empirically centered B-spline system for one covariate:
///   B_j(x) = scale * (b_j(x) - r_j b_1(x)),  j = 2..J,
/// with r_j = mean(b_j) / mean(b_1) over the fitting column and
/// scale = sqrt(N) (1 when N = 0). B_1 vanishes identically and is dropped.
struct CenteredBasis {
    KnotVector knots;
    double scale = 1.0;
    Eigen::VectorXd ratios;  // length J, ratios[0] == 1

    int raw_size() const { return knots.size(); }
    /// Number of active centered functions, J - 1.
    int size() const { return knots.size() - 1; }

    void eval(double x, Eigen::Ref<Eigen::VectorXd> out) const {
        if (out.size() != size()) throw StructuralError("centered basis output has wrong length");
        Eigen::VectorXd raw(raw_size());
        eval_raw(knots, x, raw);
        const double b1 = raw[0];
        for (int j = 1; j < raw_size(); ++j) out[j - 1] = scale * (raw[j] - ratios[j] * b1);
    }
};

inline CenteredBasis fit_centering(const KnotVector& kv,
                                   const Eigen::Ref<const Eigen::VectorXd>& column) {
    if (column.size() == 0) throw ArgumentError("centering column is empty");
    const int J = kv.size();
    Eigen::VectorXd means = Eigen::VectorXd::Zero(J);
    Eigen::VectorXd raw(J);
    for (Eigen::Index i = 0; i < column.size(); ++i) {
        eval_raw(kv, column[i], raw);
        means += raw;
    }
    means /= static_cast<double>(column.size());
    if (!(means[0] > 0.0))
        throw NumericalError("first B-spline has zero sample mean; cannot center");

    CenteredBasis cb;
    cb.knots = kv;
    cb.scale = kv.num_interior() > 0 ? std::sqrt(static_cast<double>(kv.num_interior())) : 1.0;
    cb.ratios = means / means[0];
    cb.ratios[0] = 1.0;
    return cb;
}

inline Eigen::VectorXd eval_centered(const CenteredBasis& cb, double x) {
    Eigen::VectorXd out(cb.size());
    cb.eval(x, out);
    return out;
}

} // namespace gacm
