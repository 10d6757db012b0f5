#include <gtest/gtest.h>

#include "pcrf/geometry.hpp"
#include "test_util.hpp"

using namespace pcrf;

namespace {

const LandmarkLayout kTiny{3, 0, 1};

LandmarkFrame tiny(Point2 a, Point2 b, Point2 c) {
    LandmarkFrame f;
    f.landmarks = {a, b, c};
    return f;
}

}  // namespace

TEST(InterOcular, ThreeFourFive) {
    EXPECT_DOUBLE_EQ(inter_ocular_distance(tiny({0, 0}, {3, 4}, {1, 1}), kTiny), 5.0);
}

TEST(InterOcular, CoincidentEyesRejected) {
    EXPECT_THROW(inter_ocular_distance(tiny({10, 10}, {10, 10}, {1, 1}), kTiny), DataError);
    EXPECT_THROW(validate_frame(tiny({10, 10}, {10, 10}, {1, 1}), kTiny), DataError);
}

TEST(InterOcular, WrongLandmarkCountRejected) {
    LandmarkFrame f = tiny({0, 0}, {3, 4}, {1, 1});
    f.landmarks.pop_back();
    EXPECT_THROW(validate_frame(f, kTiny), DataError);
}

TEST(Phi1, UnitDistance) {
    EXPECT_DOUBLE_EQ(phi1(tiny({0, 0}, {3, 4}, {9, 9}), 0, 1, kTiny), 1.0);
}

TEST(Phi1, CoincidentPointsGiveZero) {
    EXPECT_DOUBLE_EQ(phi1(tiny({0, 0}, {3, 4}, {3, 4}), 1, 2, kTiny), 0.0);
}

TEST(Phi1, MatchesNaiveRecomputation) {
    Rng rng(7);
    const LandmarkLayout layout;
    for (int trial = 0; trial < 200; ++trial) {
        const auto f = testutil::random_frame(rng, layout);
        const std::size_t a = uniform_index(rng, layout.count), b = uniform_index(rng, layout.count);
        const double dx = f.landmarks[a].x - f.landmarks[b].x, dy = f.landmarks[a].y - f.landmarks[b].y;
        const double ex = f.landmarks[19].x - f.landmarks[28].x, ey = f.landmarks[19].y - f.landmarks[28].y;
        EXPECT_NEAR(phi1(f, a, b, layout), std::sqrt(dx * dx + dy * dy) / std::sqrt(ex * ex + ey * ey), 1e-12);
    }
}

TEST(Phi2, RightAngle) {
    const auto f = tiny({1, 0}, {0, 0}, {0, 1});
    EXPECT_NEAR(phi2(f, 0, 1, 2, true), 0.0, 1e-15);
    EXPECT_NEAR(phi2(f, 0, 1, 2, false), 1.0, 1e-15);
}

TEST(Phi2, SignedAngleFlipsSine) {
    const auto f = tiny({1, 0}, {0, 0}, {0, 1});
    EXPECT_NEAR(phi2(f, 2, 1, 0, false), -1.0, 1e-15);
}

TEST(Phi2, CollinearOppositeRays) {
    EXPECT_NEAR(phi2(tiny({-1, 0}, {0, 0}, {2, 0}), 0, 1, 2, true), -1.0, 1e-15);
}

TEST(Phi2, ZeroRayEvaluatesToZero) {
    const auto f = tiny({0, 0}, {0, 0}, {1, 1});
    EXPECT_EQ(phi2(f, 0, 1, 2, true), 0.0);
    EXPECT_EQ(phi2(f, 0, 1, 2, false), 0.0);
}

TEST(Phi2, MatchesAtan2Oracle) {
    Rng rng(11);
    const LandmarkLayout layout;
    for (int trial = 0; trial < 200; ++trial) {
        const auto f = testutil::random_frame(rng, layout);
        const std::size_t a = 0, b = 1, c = 2;
        const double ta = std::atan2(f.landmarks[a].y - f.landmarks[b].y, f.landmarks[a].x - f.landmarks[b].x);
        const double tc = std::atan2(f.landmarks[c].y - f.landmarks[b].y, f.landmarks[c].x - f.landmarks[b].x);
        EXPECT_NEAR(phi2(f, a, b, c, true), std::cos(tc - ta), 1e-12);
        EXPECT_NEAR(phi2(f, a, b, c, false), std::sin(tc - ta), 1e-12);
    }
}

TEST(Phi4, IdentityPairIsExactlyZero) {
    Rng rng(3);
    const LandmarkLayout layout;
    for (int trial = 0; trial < 50; ++trial) {
        const auto f = testutil::random_frame(rng, layout);
        const GeomParams p{static_cast<std::uint16_t>(uniform_index(rng, 49)), static_cast<std::uint16_t>(uniform_index(rng, 49)),
                           static_cast<std::uint16_t>(uniform_index(rng, 49)), trial % 2 == 0};
        EXPECT_EQ(phi4(f, f, p, layout), 0.0);
        EXPECT_EQ(phi5(f, f, p), 0.0);
    }
}

TEST(Phi4, Arithmetic) {
    // phi1(prev) = 0.5, phi1(cur) = 0.8 with iod 10.
    LandmarkFrame prev = tiny({0, 0}, {10, 0}, {5, 0});
    LandmarkFrame cur = tiny({0, 0}, {10, 0}, {8, 0});
    const GeomParams p{0, 2, 1, true};
    EXPECT_NEAR(phi4(prev, cur, p, kTiny), 0.3, 1e-15);
}

TEST(Phi4, ComposesIndependentCalls) {
    Rng rng(5);
    const LandmarkLayout layout;
    for (int trial = 0; trial < 100; ++trial) {
        const auto a = testutil::random_frame(rng, layout), b = testutil::random_frame(rng, layout);
        const GeomParams p{3, 7, 12, trial % 2 == 0};
        EXPECT_EQ(phi4(a, b, p, layout), phi1(b, p, layout) - phi1(a, p, layout));
        EXPECT_EQ(phi5(a, b, p), phi2(b, p) - phi2(a, p));
    }
}

TEST(GeometryProperties, ScaleAndTranslationInvariance) {
    Rng rng(13);
    const LandmarkLayout layout;
    std::uniform_real_distribution<double> k(0.1, 10.0), t(-500.0, 500.0);
    for (int trial = 0; trial < 100; ++trial) {
        const auto f = testutil::random_frame(rng, layout);
        auto g = f;
        const double s = k(rng);
        const Point2 off{t(rng), t(rng)};
        for (auto& p : g.landmarks) p = s * p + off;
        const GeomParams p{1, 2, 3, true}, q{4, 5, 6, false};
        EXPECT_NEAR(phi1(f, p, layout), phi1(g, p, layout), 1e-9);
        EXPECT_NEAR(phi2(f, p), phi2(g, p), 1e-9);
        EXPECT_NEAR(phi2(f, q), phi2(g, q), 1e-9);
    }
}

TEST(GeometryProperties, AngleOutputsOnUnitCircle) {
    Rng rng(17);
    const LandmarkLayout layout;
    for (int trial = 0; trial < 500; ++trial) {
        const auto f = testutil::random_frame(rng, layout);
        const double c = phi2(f, 5, 6, 7, true), s = phi2(f, 5, 6, 7, false);
        EXPECT_GE(c, -1.0);
        EXPECT_LE(c, 1.0);
        EXPECT_GE(s, -1.0);
        EXPECT_LE(s, 1.0);
        EXPECT_NEAR(c * c + s * s, 1.0, 1e-9);
    }
}
