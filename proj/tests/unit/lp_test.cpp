#include <gtest/gtest.h>

#include "evload/lp.hpp"

using namespace evload;

// min -x - 2y  s.t.  x + y + s = 4,  x ≤ 3,  y ≤ 2  →  x = 2, y = 2, objective -6.
TEST(Lp, BoundedTwoVariable) {
  LinearProgram lp;
  const int r = lp.add_row(4);
  const int x = lp.add_variable(-1, 3), y = lp.add_variable(-2, 2), s = lp.add_variable(0);
  lp.add_coefficient(r, x, 1);
  lp.add_coefficient(r, y, 1);
  lp.add_coefficient(r, s, 1);
  const auto sol = solve_lp(lp);
  ASSERT_EQ(sol.status, LpStatus::Optimal);
  EXPECT_NEAR(sol.objective, -6, 1e-7);
  EXPECT_NEAR(sol.x[x], 2, 1e-6);
  EXPECT_NEAR(sol.x[y], 2, 1e-6);
}

// Supplies a=15, b=15; demands 1=10, 2=20; costs a1=2 a2=4 b1=5 b2=1.
// Optimum ships a1=10, a2=5, b2=15 for 20 + 20 + 15 = 55.
TEST(Lp, Transportation) {
  LinearProgram lp;
  const int sa = lp.add_row(15), sb = lp.add_row(15), d1 = lp.add_row(10), d2 = lp.add_row(20);
  auto arc = [&](int s, int d, double c) {
    const int v = lp.add_variable(c);
    lp.add_coefficient(s, v, 1);
    lp.add_coefficient(d, v, 1);
    return v;
  };
  arc(sa, d1, 2);
  arc(sa, d2, 4);
  arc(sb, d1, 5);
  arc(sb, d2, 1);
  const auto sol = solve_lp(lp);
  ASSERT_EQ(sol.status, LpStatus::Optimal);
  EXPECT_NEAR(sol.objective, 55, 1e-6);
  EXPECT_LT(sol.relative_gap, 1e-6);
}

TEST(Lp, EmptyProgram) {
  LinearProgram lp;
  const auto sol = solve_lp(lp);
  EXPECT_EQ(sol.status, LpStatus::Optimal);
  EXPECT_EQ(sol.objective, 0.0);
}
