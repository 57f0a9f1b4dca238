#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trustcons/errors.hpp"
#include "trustcons/format.hpp"
#include "trustcons/protocol.hpp"

namespace trustcons {

namespace detail {

inline void require_schedule(double c, double gamma) {
    if (!(c > 0.0 && c < 1.0)) {
        throw DomainError("c must lie in (0, 1), got " + format_double(c));
    }
    if (!(gamma > 0.0)) {
        throw DomainError("gamma must be positive, got " + format_double(gamma));
    }
}

inline void require_epsilon(double epsilon) {
    if (!(epsilon > 0.0)) {
        throw DomainError("epsilon must be positive, got " + format_double(epsilon));
    }
}

} // namespace detail

/// sbar(x) = (x - x ln(1-x) + ln(1-x)) / x = sum_{k>=1} x^k / (k (k+1)), 0 <= x < 1.
/// The closed form cancels badly near 0, where the series converges fast instead.
inline double sbar(double x) {
    if (!(x >= 0.0 && x < 1.0)) {
        throw DomainError("sbar needs 0 <= x < 1, got " + format_double(x));
    }
    if (x < 0.05) {
        double sum = 0.0;
        double power = x;
        for (int k = 1; k < 64 && power > 0.0; ++k) {
            const double term = power / (static_cast<double>(k) * static_cast<double>(k + 1));
            sum += term;
            if (term < 1e-18 * sum) {
                break;
            }
            power *= x;
        }
        return sum;
    }
    const double l = std::log1p(-x);
    return (x - x * l + l) / x;
}

/// s(gamma) = -sbar(c e^{-gamma}) / gamma. Always negative on the domain.
inline double s_of_gamma(double c, double gamma) {
    detail::require_schedule(c, gamma);
    return -sbar(c * std::exp(-gamma)) / gamma;
}

/// Legitimate-contribution diagonal bound ell_1 for a recovery time `tf`.
inline double ell1(double c, double gamma, std::size_t tf, std::size_t d_max) {
    detail::require_schedule(c, gamma);
    const double g = gamma;
    const double one_minus_decay = -std::expm1(-g);  // 1 - e^{-gamma}
    const double first_round = static_cast<double>(std::max<std::size_t>(tf, 1));
    const double lead =
        std::exp(std::log1p(-c * std::exp(-g * first_round)) / one_minus_decay);
    const double shift = tf >= 1 ? static_cast<double>(tf - 1) : 0.0;
    double bracket = c * std::exp(-g * shift);
    if (tf > 1) {
        const double ratio = (1.0 - c * std::exp(-g)) / static_cast<double>(d_max + 1);
        const double geometric = -std::expm1(-g * shift) / one_minus_decay;
        bracket += c * std::pow(ratio, shift) * geometric;
    }
    return lead * bracket;
}

/// ell_2 = 1 - e^{s(gamma)}, unscaled.
inline double ell2(double c, double gamma) {
    return -std::expm1(s_of_gamma(c, gamma));
}

inline double ell(double c, double gamma, std::size_t tf, std::size_t d_max) {
    return std::min(ell1(c, gamma, tf, d_max), ell2(c, gamma));
}

/// Closed form of lim z_t, z_t = sum_{k<=t} (1-lambda_{k+1})(1-lambda_k) e^{-2(k+1)E_M^2}.
inline double xi(double c, double gamma, double offset_malicious) {
    if (!(c >= 0.0 && c < 1.0)) {
        throw DomainError("c must lie in [0, 1), got " + format_double(c));
    }
    if (!(gamma > 0.0)) {
        throw DomainError("gamma must be positive, got " + format_double(gamma));
    }
    if (offset_malicious == 0.0 || !std::isfinite(offset_malicious)) {
        throw DomainError("malicious trust offset must be non-zero");
    }
    const double two_e2 = 2.0 * offset_malicious * offset_malicious;
    const double growth = std::exp(two_e2);
    const double d1 = std::expm1(two_e2);                          // e^{2E^2} - 1
    const double d2 = growth - std::exp(-gamma);                   // e^{2E^2} - e^{-gamma}
    const double d3 = growth - std::exp(-2.0 * gamma);             // e^{2E^2} - e^{-2 gamma}
    return 1.0 / d1 - c * (1.0 + std::exp(-gamma)) / d2 + c * c * std::exp(-gamma) / d3;
}

/// Inputs of the deviation bounds.
struct BoundParams {
    double c = 0.9;
    double gamma = 0.05;
    std::size_t d_max = 0;
    double offset_legit = 0.2;
    double offset_malicious = -0.2;
    std::size_t legit_count = 0;
    std::size_t malicious_count = 0;
    double min_perron = 1.0;
    double eta = 1.0;
    /// Recovery-time samples; the expectations E[T_f] and E[ell] average over them.
    std::vector<std::size_t> tf_samples{0};

    void validate() const {
        detail::require_schedule(c, gamma);
        if (!(offset_legit > 0.0)) {
            throw DomainError("E_L must be positive, got " + format_double(offset_legit));
        }
        if (!(offset_malicious < 0.0)) {
            throw DomainError("E_M must be negative, got " + format_double(offset_malicious));
        }
        if (!(min_perron > 0.0 && min_perron <= 1.0)) {
            throw DomainError("v_m must lie in (0, 1], got " + format_double(min_perron));
        }
        if (!(eta > 0.0)) {
            throw DomainError("eta must be positive");
        }
        if (tf_samples.empty()) {
            throw DomainError("at least one recovery-time sample is required");
        }
    }

    double mean_tf() const {
        double s = 0.0;
        for (std::size_t t : tf_samples) {
            s += static_cast<double>(t);
        }
        return s / static_cast<double>(tf_samples.size());
    }

    double mean_ell1() const {
        double s = 0.0;
        for (std::size_t t : tf_samples) {
            s += ell1(c, gamma, t, d_max);
        }
        return s / static_cast<double>(tf_samples.size());
    }

    double mean_ell() const {
        double s = 0.0;
        for (std::size_t t : tf_samples) {
            s += ell(c, gamma, t, d_max);
        }
        return s / static_cast<double>(tf_samples.size());
    }
};

/// Markov-type bound on the legitimate-contribution deviation exceeding epsilon
/// (to be scaled by eta).
inline double u_leg(double epsilon, const BoundParams& p) {
    detail::require_epsilon(epsilon);
    p.validate();
    const double settle = 1.0 - std::pow(1.0 / static_cast<double>(p.d_max + 1), p.mean_tf());
    return 2.0 / epsilon *
           (std::exp(s_of_gamma(p.c, p.gamma)) * settle + 1.0 - p.min_perron * p.mean_ell());
}

inline double u_mal(double epsilon, const BoundParams& p) {
    detail::require_epsilon(epsilon);
    p.validate();
    const double exposed = static_cast<double>(p.legit_count) *
                           static_cast<double>(std::min(p.d_max, p.malicious_count));
    return exposed / (2.0 * epsilon) * xi(p.c, p.gamma, p.offset_malicious);
}

inline double u_total(double epsilon, const BoundParams& p) {
    detail::require_epsilon(epsilon);
    return u_leg(epsilon / 2.0, p) + u_mal(epsilon / 2.0, p);
}

struct BoundReport {
    double gamma = 0.0;
    double c = 0.0;
    double tf = 0.0;  ///< E[T_f]
    double ell1 = 0.0;
    double ell2 = 0.0;
    double ell = 0.0;
    double s_gamma = 0.0;
    double xi = 0.0;
    double u_leg = 0.0;
    double u_mal = 0.0;
    double u_total = 0.0;
    double eta_u_total = 0.0;
};

inline BoundReport evaluate_bounds(double epsilon, const BoundParams& p) {
    p.validate();
    BoundReport r;
    r.gamma = p.gamma;
    r.c = p.c;
    r.tf = p.mean_tf();
    r.ell1 = p.mean_ell1();
    r.ell2 = ell2(p.c, p.gamma);
    r.ell = p.mean_ell();
    r.s_gamma = s_of_gamma(p.c, p.gamma);
    r.xi = xi(p.c, p.gamma, p.offset_malicious);
    r.u_leg = u_leg(epsilon, p);
    r.u_mal = u_mal(epsilon, p);
    r.u_total = u_total(epsilon, p);
    r.eta_u_total = p.eta * r.u_total;
    return r;
}

/// Upper estimate of E[T_f] from Hoeffding union bounds:
/// E[T_f] = sum_k P(T_f > k) <= sum_k min(1, sum_edges sum_{s>=k} P(edge wrong at s)).
inline double recovery_time_union_bound(std::size_t legit_edges, std::size_t malicious_edges,
                                        double offset_legit, double offset_malicious) {
    if (!(offset_legit > 0.0) || !(offset_malicious < 0.0)) {
        throw DomainError("union bound needs E_L > 0 and E_M < 0");
    }
    auto tail = [](std::size_t edges, double e, std::size_t k) {
        if (edges == 0) {
            return 0.0;
        }
        const double q = 2.0 * e * e;
        // sum_{s>=k} e^{-q (s+1)} = e^{-q (k+1)} / (1 - e^{-q})
        return static_cast<double>(edges) * std::exp(-q * static_cast<double>(k + 1)) /
               -std::expm1(-q);
    };
    double total = 0.0;
    for (std::size_t k = 0;; ++k) {
        const double p = std::min(1.0, tail(legit_edges, offset_legit, k) +
                                           tail(malicious_edges, offset_malicious, k));
        total += p;
        if (p < 1e-15) {
            break;
        }
    }
    return total;
}

/// Smallest k such that the weights of every step s in [k, horizon) are
/// nominal; nullopt when the last step is still misclassified.
inline std::optional<std::size_t> empirical_recovery_time(const RunTrace& trace) {
    const auto& ok = trace.weights_nominal;
    if (ok.empty()) {
        return std::size_t{0};
    }
    if (!ok.back()) {
        return std::nullopt;
    }
    std::size_t k = ok.size();
    while (k > 0 && ok[k - 1]) {
        --k;
    }
    return k;
}

/// Per-agent deviations from the nominal consensus value.
///
/// Series are flattened row-major [snapshot][agent]: total |x - x*|,
/// legitimate |a - x*| and malicious |b|.
struct DeviationMetrics {
    std::size_t legit_count = 0;
    std::vector<double> total;
    std::vector<double> legit;
    std::vector<double> malicious;

    /// Max over agents at the final snapshot.
    double final_max_total = 0.0;
    double final_max_legit = 0.0;
    double final_max_malicious = 0.0;

    /// Largest violation of e <= e^L + e^M over all entries (0 when it holds).
    double max_triangle_violation = 0.0;
};

inline DeviationMetrics deviation_metrics(const RunTrace& trace, double x_nominal) {
    DeviationMetrics m;
    m.legit_count = trace.legit_count;
    const std::size_t n = trace.x_legit.size();
    m.total.resize(n);
    m.legit.resize(n);
    m.malicious.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        m.total[k] = std::abs(trace.x_legit[k] - x_nominal);
        m.legit[k] = std::abs(trace.contrib_legit[k] - x_nominal);
        m.malicious[k] = std::abs(trace.contrib_malicious[k]);
        m.max_triangle_violation =
            std::max(m.max_triangle_violation, m.total[k] - (m.legit[k] + m.malicious[k]));
    }
    if (trace.legit_count > 0 && n >= trace.legit_count) {
        const std::size_t first = n - trace.legit_count;
        for (std::size_t k = first; k < n; ++k) {
            m.final_max_total = std::max(m.final_max_total, m.total[k]);
            m.final_max_legit = std::max(m.final_max_legit, m.legit[k]);
            m.final_max_malicious = std::max(m.final_max_malicious, m.malicious[k]);
        }
    }
    return m;
}

inline std::vector<double> log_grid(double lo, double hi, std::size_t points) {
    if (!(lo > 0.0 && hi > lo) || points < 2) {
        throw ConfigError("log grid needs 0 < lo < hi and at least 2 points");
    }
    std::vector<double> out(points);
    const double a = std::log(lo);
    const double b = std::log(hi);
    for (std::size_t k = 0; k < points; ++k) {
        out[k] = std::exp(a + (b - a) * static_cast<double>(k) / static_cast<double>(points - 1));
    }
    out.front() = lo;
    out.back() = hi;
    return out;
}

struct EllProfileRow {
    double gamma = 0.0;
    double c = 0.0;
    std::size_t tf = 0;
    double ell1 = 0.0;
    double ell2 = 0.0;
    double ell = 0.0;
    double s_gamma = 0.0;
    double neg_ell = 0.0;  ///< -v_m * ell, the term entering u_leg
};

struct EllProfile {
    std::vector<EllProfileRow> rows;           ///< grouped by tf, gamma ascending
    std::vector<std::size_t> tf_values;
    std::vector<double> argmin_gamma;          ///< per tf, minimizer of -ell over the grid
    std::vector<bool> argmin_interior;         ///< minimizer not at a grid end
};

inline EllProfile ell_profile(double c, std::size_t d_max, double min_perron, std::size_t tf_min,
                              std::size_t tf_max, std::span<const double> gammas) {
    if (gammas.empty() || tf_max < tf_min) {
        throw ConfigError("ell profile needs a non-empty gamma grid and tf range");
    }
    EllProfile p;
    for (std::size_t tf = tf_min; tf <= tf_max; ++tf) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_k = 0;
        for (std::size_t k = 0; k < gammas.size(); ++k) {
            EllProfileRow r;
            r.gamma = gammas[k];
            r.c = c;
            r.tf = tf;
            r.ell1 = ell1(c, r.gamma, tf, d_max);
            r.ell2 = ell2(c, r.gamma);
            r.ell = std::min(r.ell1, r.ell2);
            r.s_gamma = s_of_gamma(c, r.gamma);
            r.neg_ell = -min_perron * r.ell;
            if (r.neg_ell < best) {
                best = r.neg_ell;
                best_k = k;
            }
            p.rows.push_back(r);
        }
        p.tf_values.push_back(tf);
        p.argmin_gamma.push_back(gammas[best_k]);
        p.argmin_interior.push_back(best_k > 0 && best_k + 1 < gammas.size());
    }
    return p;
}

/// True when the sequence first does not increase and then does not decrease
/// (at most one sign change of the discrete differences, from - to +).
inline bool is_quasi_convex(std::span<const double> values) {
    bool rising = false;
    for (std::size_t k = 1; k < values.size(); ++k) {
        const double d = values[k] - values[k - 1];
        if (d > 0.0) {
            rising = true;
        } else if (d < 0.0 && rising) {
            return false;
        }
    }
    return true;
}

} // namespace trustcons
