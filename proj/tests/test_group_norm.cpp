#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "gdro/group_norm.hpp"
#include "gdro/rng.hpp"
#include "oracles.hpp"

using namespace gdro;

namespace {

GroupPartition two_pairs() { return GroupPartition::contiguous({2, 2}); }

Vector vec(std::initializer_list<double> v)
{
    Vector out(static_cast<Index>(v.size()));
    Index i = 0;
    for (double x : v)
        out[i++] = x;
    return out;
}

NormSpec spec(Vector alpha, double p, double s)
{
    return {std::move(alpha), Exponent::of(p), Exponent::of(s), {}};
}

constexpr double inf = std::numeric_limits<double>::infinity();

} // namespace

TEST(GroupNorm, TwoGroupValues)
{
    const Vector x = vec({3, 4, 0, 1});
    EXPECT_DOUBLE_EQ(group_norm(x, two_pairs(), spec(vec({1, 2}), 2, 1)), 7.0);
    EXPECT_DOUBLE_EQ(group_norm(x, two_pairs(), spec(vec({1, 2}), 2, inf)), 5.0);
    EXPECT_DOUBLE_EQ(group_norm(Vector::Zero(4), two_pairs(), spec(vec({1, 2}), 3, 1.5)), 0.0);
}

TEST(GroupNorm, InfiniteInnerExponentIsMaxAbs)
{
    const Vector x = vec({3, -4, 0, 1});
    EXPECT_DOUBLE_EQ(group_norm(x, two_pairs(), spec(vec({1, 1}), inf, 1)), 5.0);
}

TEST(GroupNorm, RejectsBadInput)
{
    EXPECT_THROW(group_norm(vec({1, 2, 3}), two_pairs(), spec(vec({1, 1}), 2, 1)),
                 std::invalid_argument);
    EXPECT_THROW(group_norm(vec({1, 2, 3, 4}), two_pairs(), spec(vec({1, 0}), 2, 1)),
                 std::invalid_argument);
    EXPECT_THROW(group_norm(vec({1, 2, 3, 4}), two_pairs(), spec(vec({1}), 2, 1)),
                 std::invalid_argument);
    EXPECT_THROW(Exponent::finite(0.5), std::invalid_argument);
}

TEST(GroupPartition, Invariants)
{
    EXPECT_THROW(GroupPartition(3, {{0, 1}, {1, 2}}), std::invalid_argument);
    EXPECT_THROW(GroupPartition(3, {{0, 1}}), std::invalid_argument);
    EXPECT_THROW(GroupPartition(3, {{0, 1, 2}, {}}), std::invalid_argument);
    EXPECT_THROW(GroupPartition(2, {{0, 2}}), std::invalid_argument);
    const GroupPartition p(4, {{3, 0}, {1}, {2}});
    EXPECT_EQ(p.group_of(3), 0);
    EXPECT_EQ(p.group_of(2), 2);
    EXPECT_EQ(p.num_groups(), 3);
}

TEST(Conjugate, Values)
{
    EXPECT_TRUE(conjugate(Exponent::finite(1)).is_infinite());
    EXPECT_EQ(conjugate(Exponent::infinity()), Exponent::finite(1));
    EXPECT_EQ(conjugate(Exponent::finite(2)), Exponent::finite(2));
    EXPECT_DOUBLE_EQ(conjugate(Exponent::finite(3)).value(), 1.5);
    EXPECT_THROW(conjugate(Exponent::of(0.9)), std::invalid_argument);
}

TEST(DualSpec, Values)
{
    const NormSpec d = dual_spec(spec(vec({1, 2}), 2, 1));
    EXPECT_EQ(d.alpha, vec({1, 0.5}));
    EXPECT_EQ(d.p, Exponent::finite(2));
    EXPECT_TRUE(d.s.is_infinite());

    const GroupPartition part = GroupPartition::contiguous({3, 2, 4});
    const NormSpec pen = dual_spec(penalty_spec(part));
    for (Index j = 0; j < 3; ++j)
        EXPECT_DOUBLE_EQ(pen.alpha[j], 1.0 / std::sqrt(static_cast<double>(part.group_size(j))));
    EXPECT_TRUE(pen.s.is_infinite());
}

TEST(DualSpec, Involution)
{
    CounterRng rng(11);
    const double exps[] = {1.0, 1.5, 2.0, 3.0, 7.0, inf};
    for (int k = 0; k < 50; ++k) {
        Vector alpha(3);
        for (Index j = 0; j < 3; ++j)
            alpha[j] = 0.1 + 3.0 * rng.uniform();
        const NormSpec s0 = spec(alpha, exps[rng.below(6)], exps[rng.below(6)]);
        const NormSpec s2 = dual_spec(dual_spec(s0));
        EXPECT_EQ(s2.p, s0.p);
        EXPECT_EQ(s2.s, s0.s);
        EXPECT_LT((s2.alpha - s0.alpha).cwiseAbs().maxCoeff(), 1e-15);
    }
}

TEST(DualWitness, ScalarCase)
{
    const GroupPartition part = GroupPartition::singletons(1);
    const Vector a = dual_witness(vec({-7}), part, spec(vec({1}), 2, 1));
    EXPECT_DOUBLE_EQ(a[0], -1.0);
    EXPECT_DOUBLE_EQ(a.dot(vec({-7})), 7.0);
}

TEST(DualWitness, SupportFollowsNonzeroGroup)
{
    const GroupPartition part = GroupPartition::contiguous({2, 3});
    const Vector b = vec({0, 0, 1, -2, 0.5});
    for (double p : {1.0, 2.0, 3.0, inf})
        for (double s : {1.0, 2.0, 4.0, inf}) {
            const Vector a = dual_witness(b, part, spec(vec({1.5, 0.7}), p, s));
            EXPECT_EQ(a[0], 0.0);
            EXPECT_EQ(a[1], 0.0);
        }
}

TEST(DualWitness, ZeroVectorThrows)
{
    EXPECT_THROW(dual_witness(Vector::Zero(4), two_pairs(), spec(vec({1, 1}), 2, 1)),
                 std::invalid_argument);
}

TEST(DualWitness, AttainsHolderEquality)
{
    CounterRng rng(5);
    const double exps[] = {1.0, 1.3, 2.0, 2.5, 6.0, inf};
    const GroupPartition part = GroupPartition::contiguous({1, 3, 2, 4});
    for (int k = 0; k < 300; ++k) {
        Vector alpha(4), b(10);
        for (Index j = 0; j < 4; ++j)
            alpha[j] = 0.2 + 2.0 * rng.uniform();
        for (Index i = 0; i < 10; ++i)
            b[i] = rng.normal();
        const NormSpec s0 = spec(alpha, exps[rng.below(6)], exps[rng.below(6)]);
        const Vector a = dual_witness(b, part, s0);
        const double dn = group_norm(b, part, dual_spec(s0));
        EXPECT_NEAR(group_norm(a, part, s0), 1.0, 1e-9) << s0.p.to_string() << " " << s0.s.to_string();
        EXPECT_NEAR(a.dot(b), dn, 1e-9 * dn);
    }
}

TEST(DualWitness, MatchesProjectedAscentOracle)
{
    CounterRng rng(17);
    const GroupPartition part = GroupPartition::contiguous({2, 3, 1});
    for (int k = 0; k < 10; ++k) {
        Vector alpha(3), b(6);
        for (Index j = 0; j < 3; ++j)
            alpha[j] = 0.5 + rng.uniform();
        for (Index i = 0; i < 6; ++i)
            b[i] = rng.normal();
        const NormSpec s0 = spec(alpha, 2, 1);
        const double ours = dual_witness(b, part, s0).dot(b);
        const double ref = oracle::dual_norm_by_ascent(b, part, alpha);
        EXPECT_NEAR(ours, ref, 1e-9 * ref);
    }
}

TEST(Norm, HomogeneityTriangleAndReduction)
{
    CounterRng rng(3);
    const GroupPartition part = GroupPartition::contiguous({2, 2, 3});
    for (int k = 0; k < 100; ++k) {
        Vector x(7), y(7), alpha(3);
        for (Index i = 0; i < 7; ++i) {
            x[i] = rng.normal();
            y[i] = rng.normal();
        }
        for (Index j = 0; j < 3; ++j)
            alpha[j] = 0.3 + rng.uniform();
        const double p = 1.0 + 4.0 * rng.uniform(), s = 1.0 + 4.0 * rng.uniform();
        const NormSpec sp = spec(alpha, p, s);
        const double c = rng.normal();
        EXPECT_NEAR(group_norm(c * x, part, sp), std::abs(c) * group_norm(x, part, sp),
                    1e-12 * group_norm(x, part, sp));
        EXPECT_LE(group_norm(x + y, part, sp),
                  group_norm(x, part, sp) + group_norm(y, part, sp) + 1e-12);
        const double tau = rng.uniform() * 3.0;
        EXPECT_NEAR(group_norm(x + tau * x, part, sp),
                    group_norm(x, part, sp) + group_norm(tau * x, part, sp), 1e-12 * (1 + tau) * 10);
    }
    const GroupPartition single = GroupPartition::singletons(5);
    const Vector x = vec({1, -2, 3, 0.5, -1});
    for (double p : {1.0, 2.0, 3.5})
        EXPECT_NEAR(group_norm(x, single, spec(Vector::Ones(5), p, p)),
                    std::pow(x.cwiseAbs().array().pow(p).sum(), 1.0 / p), 1e-12);
    EXPECT_DOUBLE_EQ(group_norm(x, single, spec(Vector::Ones(5), inf, inf)), 3.0);
}

TEST(Norm, DualOfDualRecoversPrimal)
{
    CounterRng rng(23);
    const GroupPartition part = GroupPartition::contiguous({3, 1, 2});
    for (int k = 0; k < 100; ++k) {
        Vector x(6), alpha(3);
        for (Index i = 0; i < 6; ++i)
            x[i] = rng.normal();
        for (Index j = 0; j < 3; ++j)
            alpha[j] = 0.3 + rng.uniform();
        const NormSpec sp = spec(alpha, 1.0 + 3.0 * rng.uniform(), 1.0 + 3.0 * rng.uniform());
        // The dual of the dual norm evaluated through the witness of the dual.
        const Vector a = dual_witness(x, part, dual_spec(sp));
        const double primal = group_norm(x, part, sp);
        EXPECT_NEAR(a.dot(x), primal, 1e-9 * primal);
        EXPECT_EQ(group_norm(x, part, dual_spec(dual_spec(sp))), primal);
    }
}
