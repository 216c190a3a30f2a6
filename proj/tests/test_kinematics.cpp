#include <gtest/gtest.h>

#include "hierlab/kinematics.hpp"

using namespace hierlab;

namespace {

void expect_vec(const Vec& a, const Vec& b, double tol = 1e-15) {
  ASSERT_EQ(a.d, b.d);
  for (int i = 0; i < a.d; ++i) EXPECT_NEAR(a[i], b[i], tol) << "component " << i;
}

}  // namespace

TEST(PostCollision, AlignedSigmaSwapsVelocities) {
  const auto out = post_collision(Vec{0, 0, 0}, Vec{2, 0, 0}, ScatterDirection(Vec{1, 0, 0}));
  expect_vec(out.v_star, Vec{2, 0, 0});
  expect_vec(out.v1_star, Vec{0, 0, 0});
}

TEST(PostCollision, OrthogonalSigmaExample) {
  const auto out = post_collision(Vec{0, 0, 0}, Vec{2, 0, 0}, ScatterDirection(Vec{0, 1, 0}));
  expect_vec(out.v_star, Vec{1, 1, 0});
  expect_vec(out.v1_star, Vec{1, -1, 0});
  EXPECT_DOUBLE_EQ(norm2(out.v_star) + norm2(out.v1_star), 4.0);
}

TEST(PostCollision, NonFiniteInputRejected) {
  EXPECT_THROW(post_collision(Vec{NAN, 0, 0}, Vec{1, 0, 0}, ScatterDirection(Vec{0, 1, 0})), PreconditionError);
  EXPECT_THROW(ScatterDirection(Vec{0, 0, 0}), PreconditionError);
}

TEST(PostCollision, ScatterDirectionIsNormalized) {
  const ScatterDirection s(Vec{0, 3, 4});
  EXPECT_NEAR(norm(s.vec()), 1.0, 1e-15);
}

TEST(CollisionGeometry, WorkedExample) {
  const auto g = collision_geometry(Vec{0, 0, 0}, Vec{2, 0, 0}, ScatterDirection(Vec{0, 1, 0}));
  EXPECT_NEAR(g.d_star, std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(g.d1_star, std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(g.ortho_defect, 0.0, 1e-15);
  EXPECT_NEAR(g.carleman_lhs, 2.0, 1e-15);
  EXPECT_NEAR(g.carleman_rhs, 2.0, 1e-15);
}

TEST(CollisionGeometry, GrazingDegenerate) {
  const Vec v{0.3, -1.0, 2.0};
  const auto g = collision_geometry(v, v, ScatterDirection(Vec{0, 0, 1}));
  EXPECT_EQ(g.d_star, 0.0);
  EXPECT_EQ(g.d1_star, 0.0);
  EXPECT_EQ(g.ortho_defect, 0.0);
  EXPECT_EQ(g.carleman_lhs, 0.0);
  EXPECT_EQ(g.carleman_rhs, 0.0);
}

// Property sweep over 10^5 seeded draws per dimension.
class KinematicsProperty : public ::testing::TestWithParam<int> {};

TEST_P(KinematicsProperty, ConservationAndGeometryIdentities) {
  const int d = GetParam();
  double mom = 0, en = 0, spd = 0, orth = 0, carl = 0, rev = 0;
  for (int i = 0; i < 100000; ++i) {
    Rng rng(2024, static_cast<std::uint64_t>(d), static_cast<std::uint64_t>(i));
    const double scale = std::pow(10.0, rng.uniform(-2.0, 2.0));
    const Vec v = rng.normal_vec(d) * scale, v1 = rng.normal_vec(d) * scale;
    const ScatterDirection s(rng.unit_vec(d));
    const auto o = post_collision(v, v1, s);
    const double un2 = norm2(v1 - v);
    mom = std::max(mom, norm(o.v_star + o.v1_star - v - v1) / (norm(v) + norm(v1)));
    en = std::max(en, std::abs(norm2(o.v_star) + norm2(o.v1_star) - norm2(v) - norm2(v1)) / (norm2(v) + norm2(v1)));
    spd = std::max(spd, std::abs(norm(o.v1_star - o.v_star) - std::sqrt(un2)) / std::sqrt(un2));
    const auto g = collision_geometry(v, v1, s);
    orth = std::max(orth, std::abs(g.ortho_defect) / un2);
    carl = std::max(carl, std::abs(g.carleman_lhs - g.carleman_rhs) / un2);
    // Reverse collision along the old direction of v - v1.
    const auto back = post_collision(o.v_star, o.v1_star, ScatterDirection(v - v1));
    rev = std::max(rev, (norm(back.v_star - v) + norm(back.v1_star - v1)) / (norm(v) + norm(v1)));
  }
  EXPECT_LT(mom, 1e-12);
  EXPECT_LT(en, 1e-12);
  EXPECT_LT(spd, 1e-12);
  EXPECT_LT(orth, 1e-12);
  EXPECT_LT(carl, 1e-10);
  EXPECT_LT(rev, 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Dims, KinematicsProperty, ::testing::Values(3, 4));

TEST(PostCollision, FixedSigmaIsIdempotent) {
  // With sigma held fixed the map is a projection, not an involution.
  const Vec v{0.5, -1, 2}, v1{-1, 0.25, 0};
  const ScatterDirection s(Vec{1, 2, -2});
  const auto once = post_collision(v, v1, s);
  const auto twice = post_collision(once.v_star, once.v1_star, s);
  expect_vec(twice.v_star, once.v_star, 1e-14);
  expect_vec(twice.v1_star, once.v1_star, 1e-14);
}

TEST(CrossSection, HardSphere) {
  const CrossSectionModel m(3, 1.0, AngularKernel::constant(0.5));
  Rng rng(3);
  for (int i = 0; i < 10; ++i)
    EXPECT_DOUBLE_EQ(cross_section(m, ScatterDirection(rng.unit_vec(3)), Vec{2, 0, 0}), 1.0);
}

TEST(CrossSection, MaxwellMoleculesIndependentOfSpeed) {
  const CrossSectionModel m(3, 0.0, AngularKernel::constant(1.0));
  for (double s : {1e-6, 0.1, 1.0, 37.0, 1e5})
    EXPECT_DOUBLE_EQ(cross_section(m, ScatterDirection(Vec{0, 1, 0}), Vec{s, 0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(cross_section(m, ScatterDirection(Vec{0, 1, 0}), Vec{0, 0, 0}), 1.0);
}

TEST(CrossSection, VanishesAtZeroRelativeVelocityForPositiveGamma) {
  const CrossSectionModel m(3, 1.0, AngularKernel::constant(0.5));
  EXPECT_EQ(cross_section(m, ScatterDirection(Vec{0, 0, 1}), Vec{0, 0, 0}), 0.0);
}

TEST(CrossSection, SoftPotentialSingularAtZero) {
  const CrossSectionModel m(3, -1.0, AngularKernel::constant(1.0));
  EXPECT_THROW(cross_section(m, ScatterDirection(Vec{0, 0, 1}), Vec{0, 0, 0}), SingularPoint);
}

TEST(CrossSection, EvenInSigma) {
  const auto b = AngularKernel::table({-1.0, 0.0, 1.0}, {0.2, 1.0, 0.6});
  EXPECT_FALSE(b.warnings().empty());
  const CrossSectionModel m(3, 1.0, b);
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const Vec s = rng.unit_vec(3), u = rng.normal_vec(3);
    EXPECT_NEAR(cross_section(m, ScatterDirection(s), u), cross_section(m, ScatterDirection(-s), u), 1e-14);
  }
}

TEST(AngularKernel, PolynomialOddPartRemoved) {
  const auto b = AngularKernel::polynomial({1.0, 0.5, 2.0});
  EXPECT_FALSE(b.warnings().empty());
  EXPECT_DOUBLE_EQ(b(0.5), 1.0 + 2.0 * 0.25);
  EXPECT_DOUBLE_EQ(b(-0.5), b(0.5));
  EXPECT_DOUBLE_EQ(b.sup(), 3.0);
}

TEST(AngularKernel, RejectsNegativeValues) {
  EXPECT_THROW(AngularKernel::constant(-1.0), PreconditionError);
  EXPECT_THROW(AngularKernel::polynomial({-1.0}), PreconditionError);
  EXPECT_THROW(AngularKernel::table({-0.5, 1.0}, {1.0, 1.0}), PreconditionError);
}

TEST(CrossSectionModel, GammaRange) {
  EXPECT_THROW(CrossSectionModel(3, 1.5, AngularKernel::constant(1.0)), PreconditionError);
  EXPECT_THROW(CrossSectionModel(3, -2.0, AngularKernel::constant(1.0)), PreconditionError);
  EXPECT_NO_THROW(CrossSectionModel(3, -1.9, AngularKernel::constant(1.0)));
}
