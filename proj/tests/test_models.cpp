#include "mmwloc/measurement.hpp"
#include "mmwloc/state_space.hpp"
#include "oracles.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace mmwloc;
using mmwloc::test::Gen;
using mmwloc::test::fd_jacobian;
using mmwloc::test::max_abs;

namespace {

constexpr double kPi = std::numbers::pi;

StateVector sv(std::initializer_list<double> v) {
    StateVector x;
    int i = 0;
    for (double e : v) x(i++) = e;
    return x;
}

}  // namespace

// ---------------------------------------------------------------------------
// Transition and process noise

TEST(Transition, AppliesConstantVelocity) {
    const auto m = build_transition(1.0);
    EXPECT_TRUE((m.F * sv({0, 0, 0, 1, 2, 0, 5})).isApprox(sv({1, 2, 0, 1, 2, 0, 5})));
    const auto half = build_transition(0.5);
    EXPECT_DOUBLE_EQ((half.F * sv({10, 0, 0, 4, 0, 0, 0}))(idx::kX), 12.0);
}

TEST(Transition, StructureAndDeterminant) {
    const auto m = build_transition(1.0);
    EXPECT_EQ((m.F.array() != 0.0).count(), 10);
    EXPECT_DOUBLE_EQ(m.F.determinant(), 1.0);
    Eigen::Matrix<double, 1, kStateDim> bias_row = Eigen::Matrix<double, 1, kStateDim>::Zero();
    bias_row(idx::kBias) = 1.0;
    EXPECT_EQ(m.F.row(idx::kBias), bias_row);
}

TEST(Transition, RejectsBadDt) {
    EXPECT_THROW(build_transition(0.0), InvalidArgument);
    EXPECT_THROW(build_transition(-1.0), InvalidArgument);
    EXPECT_THROW(build_transition(std::numeric_limits<double>::infinity()), InvalidArgument);
}

TEST(Transition, SemigroupOnMean) {
    Gen g(11);
    for (int t = 0; t < 200; ++t) {
        const double dt = g.uniform(0.01, 5.0);
        const StateVector x = g.normal_vec(kStateDim);
        const auto f1 = build_transition(dt).F;
        const auto f2 = build_transition(2.0 * dt).F;
        EXPECT_LE(max_abs(f1 * (f1 * x) - f2 * x), 1e-12 * std::max(1.0, max_abs(f2 * x)));
    }
}

TEST(ProcessNoise, DopplerScaling) {
    ProcessNoiseParams p;
    p.sigma_v2_base = 0.1;
    p.kappa_d = 1.0;
    const auto q0 = build_process_noise(p, 0.0);
    EXPECT_DOUBLE_EQ(q0(idx::kVx, idx::kVx), 0.1);
    EXPECT_DOUBLE_EQ(q0(idx::kVz, idx::kVz), p.sigma_vz2_base);
    const auto q2 = build_process_noise(p, 2.0);
    EXPECT_NEAR(q2(idx::kVx, idx::kVx), 0.3, 1e-15);
    EXPECT_NEAR(q2(idx::kVy, idx::kVy), 0.3, 1e-15);

    p.kappa_d = 0.0;
    EXPECT_EQ(build_process_noise(p, 0.0), build_process_noise(p, 7.5));
}

TEST(ProcessNoise, ValidatesInputs) {
    ProcessNoiseParams p;
    EXPECT_THROW(build_process_noise(p, -1.0), InvalidArgument);
    p.sigma_b2 = -1e-3;
    EXPECT_THROW(build_process_noise(p, 0.0), InvalidArgument);
}

TEST(ProcessNoise, FlattenedPinsVertical) {
    const auto q = build_process_noise(ProcessNoiseParams{}.flattened(), 3.0);
    EXPECT_EQ(q(idx::kZ, idx::kZ), 0.0);
    EXPECT_EQ(q(idx::kVz, idx::kVz), 0.0);
    EXPECT_GT(q(idx::kX, idx::kX), 0.0);
}

TEST(Propagate, Examples) {
    const auto m = build_transition(1.0);
    Gen g(3);
    StateEstimate est{sv({1, 2, 3, 0, 0, 0, 0.5}), StateMatrix(g.spd(kStateDim)), 4};
    auto out = propagate(est, m, StateMatrix::Zero());
    EXPECT_EQ(out.mean, est.mean);
    EXPECT_TRUE(out.cov.isApprox(m.F * est.cov * m.F.transpose(), 1e-14));
    EXPECT_EQ(out.epoch, 5u);

    est.cov.setZero();
    out = propagate(est, m, StateMatrix::Identity());
    EXPECT_EQ(out.cov, StateMatrix::Identity());

    ProcessNoiseParams p;
    est.cov.setIdentity();
    out = propagate(est, m, build_process_noise(p, 0.0));
    EXPECT_NEAR(out.cov(idx::kX, idx::kX), 2.0 + p.sigma_p2, 1e-15);
}

TEST(Propagate, RejectsDimensionMismatch) {
    StateEstimate est{StateVector::Zero(), StateMatrix::Identity(), 0};
    EXPECT_THROW(propagate(est, build_transition(1.0), Eigen::MatrixXd::Identity(3, 3)), InvalidArgument);
}

TEST(Propagate, NeverShrinksDiagonalForDiagonalPrior) {
    Gen g(5);
    for (int t = 0; t < 300; ++t) {
        StateVector d;
        for (int i = 0; i < kStateDim; ++i) d(i) = g.uniform(0.0, 10.0);
        StateEstimate est{g.normal_vec(kStateDim), d.asDiagonal(), 0};
        ProcessNoiseParams p{g.uniform(0, 1), g.uniform(0, 1), g.uniform(0, 1),
                             g.uniform(0, 1), g.uniform(0, 1), g.uniform(0, 2)};
        const auto out =
            propagate(est, build_transition(g.uniform(0.1, 3.0)), build_process_noise(p, g.uniform(0, 2)));
        for (int i = 0; i < kStateDim; ++i) EXPECT_GE(out.cov(i, i), est.cov(i, i));
    }
}

TEST(Propagate, PreservesSymmetricPsd) {
    Gen g(7);
    for (int t = 0; t < 300; ++t) {
        StateEstimate est{g.normal_vec(kStateDim), StateMatrix(g.psd(kStateDim, g.integer(1, kStateDim))), 0};
        const auto out = propagate(est, build_transition(g.uniform(0.1, 3.0)),
                                   build_process_noise(ProcessNoiseParams{}, g.uniform(0, 3)));
        EXPECT_TRUE(linalg::is_symmetric_psd(out.cov));
    }
}

// ---------------------------------------------------------------------------
// Channel functions

TEST(Channels, TimeOfArrival) {
    const auto origin = test::anchor(1, Vec3::Zero(), true);
    EXPECT_NEAR(toa({300, 0, 0}, origin), 300.0 / kSpeedOfLight, 1e-20);
    EXPECT_NEAR(toa({300, 0, 0}, origin), 1.00069e-6, 1e-11);
    EXPECT_DOUBLE_EQ(toa({3, 4, 0}, origin), 5.0 / kSpeedOfLight);
    EXPECT_THROW(toa(Vec3::Zero(), origin), DegenerateGeometry);
}

TEST(Channels, AngleOfArrival) {
    const auto origin = test::anchor(1, Vec3::Zero(), true);
    EXPECT_NEAR(aoa({1, 1, 0}, origin).azimuth, kPi / 4, 1e-15);
    EXPECT_NEAR(aoa({1, 1, 0}, origin).elevation, 0.0, 1e-15);
    EXPECT_NEAR(aoa({0, -2, 0}, origin).azimuth, -kPi / 2, 1e-15);
    EXPECT_NEAR(aoa({1, 0, 1}, origin).elevation, kPi / 4, 1e-15);
    EXPECT_THROW(aoa({0, 0, 5}, origin), DegenerateGeometry);
}

TEST(Channels, AngleOfDeparture) {
    const auto origin = test::anchor(1, Vec3::Zero(), true);
    EXPECT_NEAR(aod({1, 1, 0}, origin), -3 * kPi / 4, 1e-15);
    EXPECT_NEAR(aod({-5, 0, 0}, origin), 0.0, 1e-15);
}

TEST(Channels, DepartureIsReversedArrival) {
    Gen g(13);
    for (int t = 0; t < 1000; ++t) {
        const auto a = test::anchor(1, g.vec3(-50, 50), true);
        Vec3 p = g.vec3(-50, 50);
        if (std::hypot(p.x() - a.position.x(), p.y() - a.position.y()) < 1e-3) continue;
        EXPECT_NEAR(wrap_angle(aod(p, a) - aoa(p, a).azimuth - kPi), 0.0, 1e-12);
        EXPECT_NEAR(wrap_angle(aoa(p, a).azimuth - wrap_angle(aod(p, a) + kPi)), 0.0, 1e-12);
    }
}

TEST(Channels, Doppler) {
    const auto origin = test::anchor(1, Vec3::Zero(), true);
    EXPECT_DOUBLE_EQ(doppler_los({10, 0, 0}, {-3, 0, 0}, 0.0, origin), -3.0);
    EXPECT_NEAR(doppler_los({10, 0, 0}, {0, 4, 1}, 0.0, origin), 0.0, 1e-15);
    EXPECT_DOUBLE_EQ(doppler_los({10, 3, 0}, Vec3::Zero(), 1.5, origin), 1.5);
    EXPECT_THROW(doppler_los(Vec3::Zero(), Vec3::Ones(), 0.0, origin), DegenerateGeometry);
}

TEST(Channels, DopplerFlipsWithVelocity) {
    Gen g(17);
    for (int t = 0; t < 500; ++t) {
        const auto a = test::anchor(1, g.vec3(-20, 20), true);
        const Vec3 p = g.vec3(-50, 50), v = g.vec3(-15, 15);
        EXPECT_NEAR(doppler_los(p, v, 0.0, a), -doppler_los(p, -v, 0.0, a), 1e-12);
    }
}

TEST(Channels, Odometry) {
    auto r = odometry(make_state(Vec3::Zero(), {1, 1, 0}, 0));
    EXPECT_NEAR(r.speed, std::sqrt(2.0), 1e-15);
    EXPECT_NEAR(r.heading, kPi / 4, 1e-15);
    r = odometry(StateVector::Zero());
    EXPECT_EQ(r.speed, 0.0);
    EXPECT_EQ(r.heading, 0.0);
    r = odometry(make_state(Vec3::Zero(), {0, -2, 0}, 0));
    EXPECT_DOUBLE_EQ(r.speed, 2.0);
    EXPECT_NEAR(r.heading, -kPi / 2, 1e-15);
}

TEST(Channels, ToaTranslationInvariant) {
    Gen g(19);
    for (int t = 0; t < 500; ++t) {
        const Vec3 p = g.vec3(-100, 100), a = g.vec3(-100, 100), s = g.vec3(-1000, 1000);
        const double base = toa(p, test::anchor(1, a, true));
        EXPECT_NEAR(toa(p + s, test::anchor(1, a + s, true)), base, 1e-12 * base);
    }
}

// ---------------------------------------------------------------------------
// Angles

TEST(WrapAngle, Examples) {
    EXPECT_NEAR(wrap_angle(3 * kPi / 2), -kPi / 2, 1e-15);
    EXPECT_DOUBLE_EQ(wrap_angle(-kPi), kPi);
    EXPECT_DOUBLE_EQ(wrap_angle(kPi), kPi);
    EXPECT_DOUBLE_EQ(wrap_angle(0.3), 0.3);
}

TEST(WrapAngle, IdempotentAndPeriodic) {
    Gen g(23);
    for (int t = 0; t < 2000; ++t) {
        const double a = g.uniform(-50, 50);
        const double w = wrap_angle(a);
        EXPECT_GT(w, -kPi);
        EXPECT_LE(w, kPi);
        EXPECT_EQ(wrap_angle(w), w);
        EXPECT_NEAR(std::cos(w), std::cos(a), 1e-12);
        EXPECT_NEAR(std::sin(w), std::sin(a), 1e-12);
        const double shifted = wrap_angle(a + 2 * kPi * g.integer(-5, 5));
        EXPECT_NEAR(std::abs(wrap_angle(shifted - w)), 0.0, 1e-11);
    }
}

// ---------------------------------------------------------------------------
// Stacking, Jacobian, R

TEST(Layout, Dimensions) {
    const auto anchors = test::three_anchors();
    EXPECT_EQ(canonical_layout(anchors, MobilityMode::HighMobility).size(), 13u);
    EXPECT_EQ(canonical_layout(anchors, MobilityMode::LowMobility).size(), 15u);

    auto one = test::anchor(1, Vec3::Zero(), true);
    one.channels = {Channel::Toa, Channel::Doppler};
    const auto layout = canonical_layout({one}, MobilityMode::HighMobility);
    ASSERT_EQ(layout.size(), 2u);
    EXPECT_EQ(layout[0].channel, Channel::Toa);
    EXPECT_EQ(layout[1].channel, Channel::Doppler);
}

TEST(Layout, CanonicalOrder) {
    AnchorList anchors = {test::anchor(3, {20, 40, 8}, false), test::anchor(1, {0, 0, 10}, true),
                          test::anchor(2, {45, 0, 8}, false)};
    const auto layout = canonical_layout(anchors, MobilityMode::LowMobility);
    EXPECT_TRUE(is_canonical(layout));
    EXPECT_EQ(layout.front(), (LayoutEntry{1, Channel::Toa}));
    EXPECT_EQ(layout[12], (LayoutEntry{1, Channel::Doppler}));
    EXPECT_EQ(layout.back(), (LayoutEntry{kNoAnchor, Channel::OdoHeading}));
}

TEST(Layout, StackMatchesChannelFunctions) {
    const auto anchors = test::three_anchors();
    const StateVector x = make_state({12, 7, 1.5}, {1.0, -0.5, 0.1}, 0.3);
    const auto s = stack_predicted(x, anchors, MobilityMode::LowMobility);
    ASSERT_EQ(s.z.size(), 15);
    EXPECT_DOUBLE_EQ(s.z(0), toa(position_of(x), anchors[0]));
    EXPECT_DOUBLE_EQ(s.z(1), aoa(position_of(x), anchors[0]).azimuth);
    EXPECT_DOUBLE_EQ(s.z(2), aoa(position_of(x), anchors[0]).elevation);
    EXPECT_DOUBLE_EQ(s.z(7), aod(position_of(x), anchors[1]));
    EXPECT_DOUBLE_EQ(s.z(12), doppler_los(position_of(x), velocity_of(x), 0.3, anchors[0]));
    EXPECT_DOUBLE_EQ(s.z(13), odometry(x).speed);
    EXPECT_DOUBLE_EQ(s.z(14), odometry(x).heading);
}

TEST(Layout, ValidatesAnchors) {
    EXPECT_THROW(validated_anchors({}), InvalidArgument);
    EXPECT_THROW(validated_anchors({test::anchor(1, Vec3::Zero(), false)}), InvalidArgument);
    EXPECT_THROW(validated_anchors({test::anchor(1, Vec3::Zero(), true), test::anchor(2, Vec3::Ones(), true)}),
                 InvalidArgument);
    EXPECT_THROW(validated_anchors({test::anchor(1, Vec3::Zero(), true), test::anchor(1, Vec3::Ones(), false)}),
                 InvalidArgument);
    auto v = test::anchor(2, Vec3::Ones(), false);
    v.channels.insert(Channel::Doppler);
    EXPECT_THROW(validated_anchors({test::anchor(1, Vec3::Zero(), true), v}), InvalidArgument);
}

TEST(Jacobian, BiasColumn) {
    const auto anchors = test::three_anchors();
    const StateVector x = make_state({12, 7, 1.5}, {1.0, -0.5, 0.1}, 0.3);
    const auto layout = canonical_layout(anchors, MobilityMode::LowMobility);
    const auto h = jacobian(x, anchors, layout);
    for (std::size_t i = 0; i < layout.size(); ++i)
        EXPECT_EQ(h(static_cast<Eigen::Index>(i), idx::kBias), layout[i].channel == Channel::Doppler ? 1.0 : 0.0);
}

TEST(Jacobian, ToaRowMatchesFiniteDifference) {
    const auto anchors = test::three_anchors();
    const StateVector x = make_state({12, 7, 1.5}, {1.0, -0.5, 0.1}, 0.3);
    const Layout layout = {{1, Channel::Toa}, {2, Channel::Toa}, {3, Channel::Toa}};
    const auto h = jacobian(x, anchors, layout);
    for (int j = 0; j < 3; ++j) {
        StateVector xp = x, xm = x;
        xp(j) += 1e-4;
        xm(j) -= 1e-4;
        const Eigen::VectorXd fd = (evaluate(xp, anchors, layout) - evaluate(xm, anchors, layout)) / 2e-4;
        EXPECT_LT(max_abs(fd - h.col(j)), 1e-8);
    }
}

TEST(Jacobian, DopplerPositionColumnsVanishAtRest) {
    const auto anchors = test::three_anchors();
    const StateVector x = make_state({12, 7, 1.5}, Vec3::Zero(), 0.3);
    const auto h = jacobian(x, anchors, Layout{{1, Channel::Doppler}});
    EXPECT_EQ(h.block(0, idx::kX, 1, 3), Eigen::MatrixXd::Zero(1, 3));
}

TEST(Jacobian, MatchesCentralDifferencesOnRandomStates) {
    Gen g(29);
    const auto anchors = test::three_anchors();
    const auto layout = canonical_layout(anchors, MobilityMode::LowMobility);
    double worst = 0.0;
    for (int t = 0; t < 1000; ++t) {
        const StateVector x = g.state_near(anchors);
        const auto h = jacobian(x, anchors, layout);
        const auto fd = fd_jacobian(x, anchors, layout);
        for (Eigen::Index r = 0; r < h.rows(); ++r) {
            const double scale = h.row(r).cwiseAbs().maxCoeff();
            worst = std::max(worst, (h.row(r) - fd.row(r)).cwiseAbs().maxCoeff() / scale);
        }
    }
    EXPECT_LE(worst, 1e-6);
}

TEST(Residual, WrapsAngularEntriesOnly) {
    const Layout layout = {{1, Channel::Toa}, {1, Channel::AoaAz}, {1, Channel::Doppler}};
    Eigen::VectorXd z(3), zhat(3);
    z << 1.0, kPi - 0.1, 5.0;
    zhat << 0.5, -kPi + 0.1, -5.0;
    const auto y = residual(z, zhat, layout);
    EXPECT_DOUBLE_EQ(y(0), 0.5);
    EXPECT_NEAR(y(1), -0.2, 1e-12);
    EXPECT_DOUBLE_EQ(y(2), 10.0);
    EXPECT_THROW(residual(z, zhat.head(2), layout), InvalidArgument);
}

TEST(NoiseAssembly, Examples) {
    NoiseProfile p;
    p.sigma_toa = 1e-9;
    const auto r = assemble_R(p, {{1, Channel::Toa}, {2, Channel::Toa}});
    EXPECT_EQ(r.rows(), 2);
    EXPECT_DOUBLE_EQ(r(0, 0), 1e-18);
    EXPECT_DOUBLE_EQ(r(1, 1), 1e-18);
    EXPECT_EQ(r(0, 1), 0.0);

    const auto empty = assemble_R(p, {});
    EXPECT_EQ(empty.rows(), 0);
    EXPECT_EQ(empty.cols(), 0);

    const auto layout = canonical_layout(test::three_anchors(), MobilityMode::LowMobility);
    const auto mixed = assemble_R(p, layout);
    EXPECT_EQ(mixed, Eigen::MatrixXd(mixed.diagonal().asDiagonal()));
    for (std::size_t i = 0; i < layout.size(); ++i)
        EXPECT_DOUBLE_EQ(mixed(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)),
                         p.variance(layout[i].channel));
}

TEST(Bundle, ValidationAndFiltering) {
    MeasurementBundle b;
    b.entries = {{1, Channel::Toa, 1e-7, 1e-18}, {1, Channel::Doppler, 0.3, 0.25},
                 {kNoAnchor, Channel::OdoSpeed, 1.0, 0.01}};
    EXPECT_NO_THROW(validate_bundle(b));
    EXPECT_TRUE(b.has(Channel::Doppler));
    const auto f = filter_entries(b, [](const Measurement& m) { return m.channel != Channel::Doppler; });
    EXPECT_EQ(f.entries.size(), 2u);
    EXPECT_FALSE(f.has(Channel::Doppler));

    std::swap(b.entries[0], b.entries[1]);
    EXPECT_THROW(validate_bundle(b), ValidationError);
    std::swap(b.entries[0], b.entries[1]);
    b.entries[0].variance = 0.0;
    EXPECT_THROW(validate_bundle(b), ValidationError);
}
