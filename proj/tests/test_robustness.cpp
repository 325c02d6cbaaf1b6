#include "mmwloc/robustness.hpp"
#include "support.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <gtest/gtest.h>

#include <algorithm>

using namespace mmwloc;
using mmwloc::test::Gen;
using mmwloc::test::max_abs;

// ---------------------------------------------------------------------------
// Chi-square

TEST(ChiSquare, TableValues) {
    EXPECT_NEAR(chi2_quantile(2, 0.95), 5.99, 0.01);
    EXPECT_NEAR(chi2_quantile(1, 0.99), 6.635, 1e-3);
    EXPECT_NEAR(chi2_quantile(13, 0.99), 27.69, 1e-2);
    EXPECT_NEAR(chi2_quantile(2, 0.99), 9.21, 1e-2);
}

TEST(ChiSquare, MatchesBoostQuantile) {
    for (int dof = 1; dof <= 60; ++dof)
        for (double p : {0.001, 0.05, 0.5, 0.9, 0.95, 0.99, 0.995, 0.9999}) {
            const double ref = boost::math::quantile(boost::math::chi_squared(dof), p);
            EXPECT_NEAR(chi2_quantile(dof, p), ref, 1e-6) << "dof " << dof << " p " << p;
        }
}

TEST(ChiSquare, IncompleteGammaMatchesBoost) {
    Gen g(1);
    for (int t = 0; t < 2000; ++t) {
        const double a = g.uniform(0.5, 40.0), x = g.uniform(0.0, 120.0);
        EXPECT_NEAR(detail::gamma_p(a, x), boost::math::gamma_p(a, x), 1e-12) << a << " " << x;
    }
}

TEST(ChiSquare, QuantileInvertsCdf) {
    Gen g(2);
    for (int t = 0; t < 500; ++t) {
        const int dof = g.integer(1, 40);
        const double p = g.uniform(0.001, 0.999);
        EXPECT_NEAR(chi2_cdf(chi2_quantile(dof, p), dof), p, 1e-10);
    }
}

TEST(ChiSquare, RejectsBadArguments) {
    EXPECT_THROW(chi2_quantile(0, 0.5), InvalidArgument);
    EXPECT_THROW(chi2_quantile(2, 0.0), InvalidArgument);
    EXPECT_THROW(chi2_quantile(2, 1.0), InvalidArgument);
    EXPECT_THROW(chi2_cdf(1.0, 0), InvalidArgument);
}

// ---------------------------------------------------------------------------
// Gate

TEST(Nis, Examples) {
    EXPECT_EQ(nis(Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3)), 0.0);
    EXPECT_DOUBLE_EQ(nis(Eigen::Vector2d(3, 4), Eigen::Matrix2d::Identity()), 25.0);
    EXPECT_DOUBLE_EQ(nis(Eigen::VectorXd::Constant(1, 2.0), Eigen::MatrixXd::Constant(1, 1, 4.0)), 1.0);
    EXPECT_THROW(nis(Eigen::Vector2d(1, 1), Eigen::Matrix3d::Identity()), InvalidArgument);
}

TEST(Gate, Examples) {
    const GateConfig cfg;
    auto g = gate_nis(5.0, 2, cfg);
    EXPECT_EQ(g.decision, GateDecision::Accepted);
    EXPECT_NEAR(g.threshold, 9.21, 0.01);
    EXPECT_EQ(gate_nis(50.0, 2, cfg).decision, GateDecision::Rejected);
    for (int d = 1; d < 10; ++d)
        EXPECT_EQ(gate(Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Identity(d, d), cfg).decision,
                  GateDecision::Accepted);
    GateConfig bad;
    bad.confidence = 1.0;
    EXPECT_THROW(gate_nis(1.0, 2, bad), InvalidArgument);
}

TEST(Gate, AcceptanceRateMatchesConfidence) {
    const auto run = test::run_linear(7, 10000);
    const GateConfig cfg;
    std::size_t accepted = 0;
    for (double v : run.nis)
        if (gate_nis(v, run.dof, cfg).decision == GateDecision::Accepted) ++accepted;
    const double rate = static_cast<double>(accepted) / static_cast<double>(run.nis.size());
    EXPECT_GE(rate, 0.985);
    EXPECT_LE(rate, 0.995);
}

TEST(Gate, MostInconsistentMatchesBruteForce) {
    Gen g(3);
    for (int t = 0; t < 300; ++t) {
        const int d = g.integer(2, 12);
        const Eigen::MatrixXd s = g.spd(d, 1.0, 0.1);
        Eigen::VectorXd y = g.normal_vec(d);
        y(g.integer(0, d - 1)) += g.uniform(0, 20);
        const double full = nis(y, s);
        Eigen::Index best = -1;
        double best_drop = -1.0;
        for (Eigen::Index i = 0; i < d; ++i) {
            std::vector<Eigen::Index> keep;
            for (Eigen::Index j = 0; j < d; ++j)
                if (j != i) keep.push_back(j);
            Eigen::VectorXd ys(d - 1);
            for (std::size_t j = 0; j < keep.size(); ++j) ys(static_cast<Eigen::Index>(j)) = y(keep[j]);
            const double drop = full - nis(ys, linalg::gather(s, keep, keep));
            if (drop > best_drop) {
                best_drop = drop;
                best = i;
            }
        }
        const auto got = most_inconsistent(y, linalg::SpdSolver(s));
        EXPECT_EQ(got.first, best);
        EXPECT_NEAR(got.second, best_drop, 1e-8 * std::max(1.0, full));
    }
}

// ---------------------------------------------------------------------------
// Adaptation

TEST(Adaptation, FixedPointAndClamps) {
    AdaptationState consistent;
    for (int k = 0; k < 40; ++k) consistent.push(3.0, 3);
    EXPECT_DOUBLE_EQ(consistent.gamma(), 1.0);

    AdaptationState high;
    for (int k = 0; k < 20; ++k) high.push(3.7 * 4, 4);
    EXPECT_DOUBLE_EQ(high.gamma(), 2.0);

    AdaptationState low;
    for (int k = 0; k < 20; ++k) low.push(0.2 * 2, 2);
    EXPECT_DOUBLE_EQ(low.gamma(), 0.5);
}

TEST(Adaptation, WaitsForFullWindowThenSlides) {
    AdaptationState a(AdaptationConfig{true, 4, 0.5, 2.0});
    for (int k = 0; k < 3; ++k) EXPECT_EQ(a.push(1.5, 1), 1.0);
    EXPECT_DOUBLE_EQ(a.push(1.5, 1), 1.5);
    EXPECT_EQ(a.size(), 4u);
    a.push(1.0, 1);
    EXPECT_EQ(a.size(), 4u);
}

TEST(Adaptation, GammaAlwaysWithinBounds) {
    Gen g(4);
    for (int t = 0; t < 50; ++t) {
        AdaptationState a(AdaptationConfig{true, static_cast<std::size_t>(g.integer(1, 30)), 0.5, 2.0});
        for (int k = 0; k < 200; ++k) {
            const int dof = g.integer(1, 15);
            const double v = std::pow(10.0, g.uniform(-4, 4)) * dof;
            const double gamma = a.push(v, dof);
            EXPECT_GE(gamma, 0.5);
            EXPECT_LE(gamma, 2.0);
        }
    }
}

TEST(Adaptation, RejectsBadConfig) {
    EXPECT_THROW(AdaptationState(AdaptationConfig{true, 0, 0.5, 2.0}), InvalidArgument);
    EXPECT_THROW(AdaptationState(AdaptationConfig{true, 5, 1.5, 2.0}), InvalidArgument);
    AdaptationState a;
    EXPECT_THROW(a.push(1.0, 0), InvalidArgument);
}

// ---------------------------------------------------------------------------
// RTS smoother

namespace {

using G1 = Gaussian<1>;
using M1 = Eigen::Matrix<double, 1, 1>;

struct ScalarProblem {
    double a, q, h, r, m0, p0;
    std::vector<double> z;
};

std::vector<SmootherEpoch<1>> scalar_filter(const ScalarProblem& pb) {
    std::vector<SmootherEpoch<1>> out;
    G1 est;
    est.mean << pb.m0;
    est.cov << pb.p0;
    const LinearModel model{M1::Constant(pb.h)};
    for (std::size_t k = 0; k < pb.z.size(); ++k) {
        G1 pred = k == 0 ? est : propagate<1>(est, M1::Constant(pb.a), M1::Constant(pb.q));
        pred.epoch = k;
        est = ekf_update(pred, Eigen::VectorXd::Constant(1, pb.z[k]), model, M1::Constant(pb.r)).posterior;
        if (k > 0) out.back().predicted_next = pred;
        out.push_back({est, est, M1::Constant(pb.a), M1::Constant(pb.q)});
    }
    return out;
}

}  // namespace

TEST(Rts, SingleEpochIsIdentity) {
    Gen g(5);
    SmootherEpoch<kStateDim> e;
    e.filtered = {g.normal_vec(kStateDim), StateMatrix(g.spd(kStateDim)), 3};
    e.predicted_next = e.filtered;
    e.F = build_transition(1.0).F;
    e.Q = StateMatrix::Identity();
    const auto out = rts_smooth(std::vector{e});
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0].mean, e.filtered.mean);
    EXPECT_EQ(out[0].cov, e.filtered.cov);
    EXPECT_TRUE(rts_smooth(std::vector<SmootherEpoch<kStateDim>>{}).empty());
}

TEST(Rts, UninformativeFutureLeavesFiltered) {
    Gen g(6);
    const auto tr = build_transition(1.0);
    const StateMatrix q = 1e12 * StateMatrix::Identity();
    std::vector<SmootherEpoch<kStateDim>> in;
    for (std::size_t k = 0; k < 5; ++k) {
        StateEstimate f{g.normal_vec(kStateDim), StateMatrix(g.spd(kStateDim)), k};
        in.push_back({f, propagate(f, tr, q), tr.F, q});
    }
    // Later filtered estimates are arbitrary; with Q this large they carry no information back.
    const auto out = rts_smooth(in);
    for (std::size_t k = 0; k < in.size(); ++k) {
        EXPECT_LT(max_abs(out[k].mean - in[k].filtered.mean), 1e-9);
        EXPECT_LT(max_abs(out[k].cov - in[k].filtered.cov), 1e-9);
    }
}

TEST(Rts, RejectsGaps) {
    SmootherEpoch<kStateDim> e;
    e.filtered = {StateVector::Zero(), StateMatrix::Identity(), 0};
    auto f = e;
    f.filtered.epoch = 2;
    EXPECT_THROW(rts_smooth(std::vector{e, f}), InvalidArgument);
}

TEST(Rts, MatchesDenseBatchPosterior) {
    Gen g(8);
    for (int trial = 0; trial < 20; ++trial) {
        ScalarProblem pb{g.uniform(0.5, 1.2), g.uniform(0.05, 2.0), g.uniform(0.5, 2.0),
                         g.uniform(0.1, 3.0), g.normal(), g.uniform(0.5, 5.0), {}};
        double x = pb.m0 + std::sqrt(pb.p0) * g.normal();
        for (int k = 0; k < 10; ++k) {
            if (k > 0) x = pb.a * x + std::sqrt(pb.q) * g.normal();
            pb.z.push_back(pb.h * x + std::sqrt(pb.r) * g.normal());
        }
        // Information form of the joint density over x_0..x_9.
        Eigen::MatrixXd lam = Eigen::MatrixXd::Zero(10, 10);
        Eigen::VectorXd eta = Eigen::VectorXd::Zero(10);
        lam(0, 0) += 1.0 / pb.p0;
        eta(0) += pb.m0 / pb.p0;
        for (int k = 0; k < 10; ++k) {
            lam(k, k) += pb.h * pb.h / pb.r;
            eta(k) += pb.h * pb.z[k] / pb.r;
            if (k + 1 < 10) {
                lam(k, k) += pb.a * pb.a / pb.q;
                lam(k + 1, k + 1) += 1.0 / pb.q;
                lam(k, k + 1) -= pb.a / pb.q;
                lam(k + 1, k) -= pb.a / pb.q;
            }
        }
        const Eigen::MatrixXd cov = lam.inverse();
        const Eigen::VectorXd mean = cov * eta;

        const auto sm = rts_smooth(scalar_filter(pb));
        ASSERT_EQ(sm.size(), 10u);
        for (int k = 0; k < 10; ++k) {
            EXPECT_NEAR(sm[k].mean(0), mean(k), 1e-6);
            EXPECT_NEAR(sm[k].cov(0, 0), cov(k, k), 1e-6);
        }
    }
}

namespace {

struct LinearTrack {
    std::vector<SmootherEpoch<kStateDim>> epochs;
    std::vector<StateVector> truth;
};

LinearTrack random_linear_track(Gen& g, std::size_t n) {
    const auto tr = build_transition(g.uniform(0.2, 2.0));
    ProcessNoiseParams p{g.uniform(0.001, 0.1), g.uniform(0.001, 0.1), g.uniform(0.001, 0.5),
                         g.uniform(0.001, 0.1), g.uniform(1e-5, 1e-2), 0.0};
    const StateMatrix q = build_process_noise(p, 0.0);
    // F has eigenvalue 1 with geometric multiplicity 4, so H needs at least 4 rows to be observable.
    const int d = g.integer(4, 6);
    const LinearModel model{g.matrix(d, kStateDim)};
    const Eigen::MatrixXd r = g.spd(d, 0.2, 0.05);
    const Eigen::LLT<Eigen::MatrixXd> r_sqrt(r);

    LinearTrack out;
    StateEstimate est{StateVector::Zero(), StateMatrix::Identity(), 0};
    StateVector x = g.normal_vec(kStateDim);
    for (std::size_t k = 0; k < n; ++k) {
        StateEstimate pred = est;
        if (k > 0) {
            x = tr.F * x + StateVector(q.diagonal().cwiseSqrt().cwiseProduct(g.normal_vec(kStateDim)));
            pred = propagate(est, tr, q);
            out.epochs.back().predicted_next = pred;
        }
        pred.epoch = k;
        const Eigen::VectorXd z = model.H * x + r_sqrt.matrixL() * g.normal_vec(d);
        est = ekf_update(pred, z, model, r).posterior;
        out.epochs.push_back({est, est, tr.F, q});
        out.truth.push_back(x);
    }
    return out;
}

double position_rmse(const std::vector<StateEstimate>& est, const std::vector<StateVector>& truth) {
    double s = 0.0;
    for (std::size_t k = 0; k < est.size(); ++k) s += (est[k].mean - truth[k]).head<3>().squaredNorm();
    return std::sqrt(s / static_cast<double>(est.size()));
}

}  // namespace

TEST(Rts, SmoothedVariancesNeverExceedFiltered) {
    Gen g(9);
    for (int t = 0; t < 100; ++t) {
        const auto track = random_linear_track(g, 30);
        const auto sm = rts_smooth(track.epochs);
        for (std::size_t k = 0; k < sm.size(); ++k) {
            for (int i = 0; i < kStateDim; ++i)
                EXPECT_LE(sm[k].cov(i, i), track.epochs[k].filtered.cov(i, i) + 1e-9);
            EXPECT_GE(linalg::min_eigenvalue(sm[k].cov), -1e-9);
        }
    }
}

TEST(Rts, SmoothingLowersMseOnLinearScenario) {
    double filtered_se = 0.0, smoothed_se = 0.0;
    int wins = 0;
    for (int seed = 0; seed < 100; ++seed) {
        Gen g(1000 + seed);
        const auto track = random_linear_track(g, 100);
        std::vector<StateEstimate> filtered;
        for (const auto& e : track.epochs) filtered.push_back(e.filtered);
        const double f = position_rmse(filtered, track.truth), s = position_rmse(rts_smooth(track.epochs), track.truth);
        filtered_se += f * f;
        smoothed_se += s * s;
        if (s <= f) ++wins;
    }
    EXPECT_LT(smoothed_se, filtered_se);
    EXPECT_GE(wins, 95);
}
