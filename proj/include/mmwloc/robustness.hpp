#pragma once

// Chi-square innovation gating, windowed Q/R rescaling and the fixed-interval
// Rauch-Tung-Striebel smoother.

#include "mmwloc/error.hpp"
#include "mmwloc/linalg.hpp"
#include "mmwloc/types.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

namespace mmwloc {

// ---------------------------------------------------------------------------
// Chi-square distribution

namespace detail {

// Regularized lower incomplete gamma P(a, x): power series for x < a + 1,
// Lentz continued fraction for Q(a, x) otherwise.
inline double gamma_p(double a, double x) {
    if (x <= 0.0) return 0.0;
    const double log_prefix = a * std::log(x) - x - std::lgamma(a);
    if (x < a + 1.0) {
        double term = 1.0 / a;
        double sum = term;
        for (int n = 1; n < 1000; ++n) {
            term *= x / (a + n);
            sum += term;
            if (std::abs(term) < std::abs(sum) * 1e-17) break;
        }
        return std::exp(log_prefix) * sum;
    }
    constexpr double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < 1000; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < 1e-17) break;
    }
    return 1.0 - std::exp(log_prefix) * h;
}

}  // namespace detail

inline double chi2_cdf(double x, int dof) {
    if (dof < 1) throw InvalidArgument("chi2_cdf: dof must be >= 1");
    return detail::gamma_p(0.5 * dof, 0.5 * x);
}

/// Inverse chi-square CDF by safeguarded Newton iteration on P(dof/2, t/2).
inline double chi2_quantile(int dof, double p) {
    if (dof < 1) throw InvalidArgument("chi2_quantile: dof must be >= 1");
    if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("chi2_quantile: p must lie in (0, 1)");
    const double k = dof;
    double lo = 0.0;
    double hi = std::max(1.0, k);
    while (chi2_cdf(hi, dof) < p) {
        lo = hi;
        hi *= 2.0;
    }
    double t = 0.5 * (lo + hi);
    for (int it = 0; it < 200; ++it) {
        const double f = chi2_cdf(t, dof) - p;
        if (f < 0.0) lo = t; else hi = t;
        const double log_pdf =
            (0.5 * k - 1.0) * std::log(t) - 0.5 * t - 0.5 * k * std::log(2.0) - std::lgamma(0.5 * k);
        double next = t - f / std::exp(log_pdf);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (std::abs(next - t) <= 1e-15 * std::max(1.0, t) || hi - lo <= 1e-15 * hi) return next;
        t = next;
    }
    return t;
}

// ---------------------------------------------------------------------------
// Gating

/// Normalized innovation squared y^T S^-1 y.
inline double nis(const Eigen::VectorXd& y, const Eigen::MatrixXd& s) {
    if (s.rows() != y.size() || s.cols() != y.size()) throw InvalidArgument("nis: size mismatch");
    if (y.size() == 0) return 0.0;
    return linalg::SpdSolver(s).quadratic_form(y);
}

struct GateConfig {
    bool enabled = true;
    double confidence = 0.99;
    /// Screen each scalar channel against chi2(1) instead of the whole bundle.
    bool per_channel = false;
    /// After this many rejected epochs in a row the next bundle is accepted
    /// unconditionally so a track that has lost lock can recover. 0 disables.
    int max_consecutive_rejections = 3;
    /// Bundle gating only: when the stacked NIS fails, up to this many of the
    /// most inconsistent channels are dropped and the remainder re-gated
    /// before the whole bundle is discarded. 0 gives pure bundle gating.
    int max_isolated = 3;
};

struct GateOutcome {
    GateDecision decision = GateDecision::Accepted;
    double nis = 0.0;
    double threshold = 0.0;
};

inline GateOutcome gate_nis(double value, int dof, const GateConfig& cfg) {
    if (!(cfg.confidence > 0.0 && cfg.confidence < 1.0))
        throw InvalidArgument("gate: confidence must lie in (0, 1)");
    if (dof == 0) return {GateDecision::Accepted, value, 0.0};
    const double thr = chi2_quantile(dof, cfg.confidence);
    return {value < thr ? GateDecision::Accepted : GateDecision::Rejected, value, thr};
}

/// Accepts iff NIS is below the chi2(dim y) quantile at cfg.confidence.
inline GateOutcome gate(const Eigen::VectorXd& y, const Eigen::MatrixXd& s, const GateConfig& cfg) {
    return gate_nis(nis(y, s), static_cast<int>(y.size()), cfg);
}

/// Index of the component whose removal lowers the NIS the most, and that
/// reduction. Deleting entry i from y and S reduces y^T S^-1 y by
/// (S^-1 y)_i^2 / (S^-1)_ii.
inline std::pair<Eigen::Index, double> most_inconsistent(const Eigen::VectorXd& y,
                                                         const linalg::SpdSolver& solver) {
    if (y.size() == 0) throw InvalidArgument("most_inconsistent: empty innovation");
    const Eigen::VectorXd w = solver.solve(y);
    const Eigen::MatrixXd inv = solver.solve(Eigen::MatrixXd::Identity(y.size(), y.size()));
    Eigen::Index best = 0;
    double drop = -1.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double d = w(i) * w(i) / inv(i, i);
        if (d > drop) {
            drop = d;
            best = i;
        }
    }
    return {best, drop};
}

// ---------------------------------------------------------------------------
// Adaptive noise scaling

struct AdaptationConfig {
    bool enabled = true;
    std::size_t window = 20;
    double gamma_min = 0.5;
    double gamma_max = 2.0;
};

/// Sliding window of normalized NIS values driving a common Q/R scale gamma.
///
/// Each sample is stored as (NIS / d) * gamma_in_use, i.e. referred back to
/// unit scale, so that a filter which becomes consistent under gamma keeps
/// gamma instead of snapping back to 1 on the next window.
class AdaptationState {
public:
    explicit AdaptationState(AdaptationConfig cfg = {}) : cfg_(cfg) {
        if (cfg_.window < 1) throw InvalidArgument("adaptation: window must be >= 1");
        if (!(cfg_.gamma_min > 0.0 && cfg_.gamma_min <= 1.0 && cfg_.gamma_max >= 1.0))
            throw InvalidArgument("adaptation: bounds must satisfy 0 < min <= 1 <= max");
    }

    double gamma() const { return gamma_; }
    std::size_t size() const { return samples_.size(); }
    const AdaptationConfig& config() const { return cfg_; }

    /// Feeds one epoch's NIS with its degrees of freedom; returns the new gamma.
    double push(double latest_nis, int dof) {
        if (dof < 1) throw InvalidArgument("adaptation: dof must be >= 1");
        samples_.push_back(latest_nis / dof * gamma_);
        if (samples_.size() > cfg_.window) samples_.pop_front();
        if (samples_.size() == cfg_.window) {
            const double mean =
                std::accumulate(samples_.begin(), samples_.end(), 0.0) / samples_.size();
            gamma_ = std::clamp(mean, cfg_.gamma_min, cfg_.gamma_max);
        }
        return gamma_;
    }

private:
    AdaptationConfig cfg_;
    std::deque<double> samples_;
    double gamma_ = 1.0;
};

// ---------------------------------------------------------------------------
// RTS smoother

/// One epoch of forward-filter output. `predicted_next` is x_{k+1|k},
/// produced from `filtered` with F and Q; it is ignored for the last epoch.
template <int N>
struct SmootherEpoch {
    Gaussian<N> filtered;
    Gaussian<N> predicted_next;
    Eigen::Matrix<double, N, N> F;
    Eigen::Matrix<double, N, N> Q;
};

/// Backward pass over a contiguous window, seeded by the last filtered estimate.
template <int N>
std::vector<Gaussian<N>> rts_smooth(const std::vector<SmootherEpoch<N>>& in) {
    std::vector<Gaussian<N>> out(in.size());
    if (in.empty()) return out;
    for (std::size_t k = 1; k < in.size(); ++k)
        if (in[k].filtered.epoch != in[k - 1].filtered.epoch + 1)
            throw InvalidArgument("rts_smooth: epochs are not contiguous");
    out.back() = in.back().filtered;
    for (std::size_t j = in.size() - 1; j-- > 0;) {
        const auto& e = in[j];
        Eigen::MatrixXd pred_cov = e.F * e.filtered.cov * e.F.transpose() + e.Q;
        linalg::symmetrize(pred_cov);
        const Eigen::MatrixXd gain =
            linalg::right_solve_active(e.filtered.cov * e.F.transpose(), pred_cov);
        Gaussian<N> s;
        s.epoch = e.filtered.epoch;
        s.mean = e.filtered.mean + gain * (out[j + 1].mean - e.predicted_next.mean);
        s.cov = e.filtered.cov + gain * (out[j + 1].cov - pred_cov) * gain.transpose();
        linalg::symmetrize(s.cov);
        out[j] = s;
    }
    return out;
}

}  // namespace mmwloc
