#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "gdro/rwpi.hpp"
#include "oracles.hpp"

using namespace gdro;

namespace {

Matrix gaussian_matrix(Index n, Index d, std::uint64_t seed)
{
    CounterRng rng(seed);
    Matrix X(n, d);
    for (Index i = 0; i < n; ++i)
        for (Index k = 0; k < d; ++k)
            X(i, k) = rng.normal();
    return X;
}

NormSpec dual_penalty(const GroupPartition& part) { return dual_spec(penalty_spec(part)); }

} // namespace

TEST(Covariance, SmallCases)
{
    Matrix same(3, 2);
    same << 1, 2, 1, 2, 1, 2;
    EXPECT_EQ(estimate_covariance(same), Matrix::Zero(2, 2));
    Matrix two(2, 1);
    two << 0, 2;
    EXPECT_DOUBLE_EQ(estimate_covariance(two)(0, 0), 1.0);
    EXPECT_THROW(estimate_covariance(Matrix::Zero(1, 2)), std::invalid_argument);
}

TEST(Covariance, LargeSampleOffDiagonals)
{
    const Index n = 20000;
    const Matrix cov = estimate_covariance(gaussian_matrix(n, 3, 1));
    for (Index a = 0; a < 3; ++a)
        for (Index b = 0; b < 3; ++b)
            if (a != b) {
                EXPECT_LT(std::abs(cov(a, b)), 3.0 / std::sqrt(static_cast<double>(n)));
            }
    EXPECT_LT((cov - cov.transpose()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(PsdFactor, ReconstructsAndRejects)
{
    Matrix c(2, 2);
    c << 2, 1, 1, 2;
    const Matrix F = psd_factor(c);
    EXPECT_LT((F * F.transpose() - c).cwiseAbs().maxCoeff(), 1e-12);
    c << 1, 2, 2, 1;
    EXPECT_THROW(psd_factor(c), std::invalid_argument);
}

TEST(DualGaussianNorm, HalfNormalQuantile)
{
    const GroupPartition part = GroupPartition::singletons(1);
    const NormSpec dual{Vector::Ones(1), Exponent::finite(2), Exponent::infinity(), {}};
    const LimitLawSample s =
        sample_dual_gaussian_norm(Matrix::Identity(1, 1), part, dual, 100000, 3, false);
    const double q = quantile(s.draws, 0.95);
    const double se = quantile_mc_error(s.draws, 0.95);
    EXPECT_NEAR(q, 1.959964, 3.0 * se);
    EXPECT_LT(se, 0.02);
}

TEST(DualGaussianNorm, ZeroCovariance)
{
    const GroupPartition part = GroupPartition::contiguous({2, 1});
    const LimitLawSample s =
        sample_dual_gaussian_norm(Matrix::Zero(3, 3), part, dual_penalty(part), 100, 1, true);
    for (double v : s.draws)
        EXPECT_EQ(v, 0.0);
}

TEST(DualGaussianNorm, IndependentChiOracle)
{
    const std::vector<Index> sizes{3, 3, 3, 3};
    const GroupPartition part = GroupPartition::contiguous(sizes);
    const LimitLawSample s =
        sample_dual_gaussian_norm(Matrix::Identity(12, 12), part, dual_penalty(part), 100000, 7, false);
    const std::vector<int> gs{3, 3, 3, 3};
    const double ref = oracle::max_scaled_chi_quantile(0.95, gs);
    EXPECT_NEAR(quantile(s.draws, 0.95), ref, 3.0 * quantile_mc_error(s.draws, 0.95));
}

TEST(DualGaussianNorm, DeterminismAndScaling)
{
    const GroupPartition part = GroupPartition::contiguous({2, 3});
    const Matrix cov = estimate_covariance(gaussian_matrix(50, 5, 2));
    const auto a = sample_dual_gaussian_norm(cov, part, dual_penalty(part), 1000, 9, false);
    const auto b = sample_dual_gaussian_norm(cov, part, dual_penalty(part), 1000, 9, false);
    EXPECT_EQ(a.draws, b.draws);
    const double c = 4.0;  // exact power of two keeps the factor exact
    const auto scaled = sample_dual_gaussian_norm(c * c * cov, part, dual_penalty(part), 1000, 9, false);
    const auto sq = sample_dual_gaussian_norm(c * c * cov, part, dual_penalty(part), 1000, 9, true);
    for (std::size_t i = 0; i < a.draws.size(); ++i) {
        EXPECT_NEAR(scaled.draws[i], c * a.draws[i], 1e-12 * (1.0 + a.draws[i]));
        EXPECT_NEAR(sq.draws[i], c * c * a.draws[i] * a.draws[i], 1e-11 * (1.0 + sq.draws[i]));
    }
}

TEST(Quantile, OrderStatisticAndMonotonicity)
{
    const std::vector<double> v{5, 1, 4, 2, 3};
    EXPECT_EQ(quantile(v, 0.5), 3.0);
    EXPECT_EQ(quantile(v, 0.95), 5.0);
    EXPECT_EQ(quantile(v, 0.2), 1.0);
    EXPECT_EQ(quantile(v, 0.21), 2.0);
    CounterRng rng(4);
    std::vector<double> w(500);
    for (auto& x : w)
        x = rng.normal();
    double prev = -1e300;
    for (double lvl = 0.05; lvl < 1.0; lvl += 0.05) {
        const double q = quantile(w, lvl);
        EXPECT_GE(q, prev);
        prev = q;
    }
    EXPECT_THROW(quantile({}, 0.5), std::invalid_argument);
}

TEST(ErrorMoments, Values)
{
    Matrix X = Matrix::Zero(2, 1);
    Vector y(2);
    y << -1, 1;
    const Dataset data{X, y, GroupPartition::singletons(1), Task::linear, false};
    ModelFit pilot;
    pilot.beta = Vector::Zero(1);
    const ErrorMoments m = estimate_error_moments(data, pilot);
    EXPECT_DOUBLE_EQ(m.mean_abs, 1.0);
    EXPECT_DOUBLE_EQ(m.mean_sq, 1.0);

    const Dataset exact{X, Vector::Zero(2), GroupPartition::singletons(1), Task::linear, false};
    EXPECT_THROW(estimate_error_moments(exact, pilot), DegenerateError);

    const Index n = 200000;
    const Matrix Xg = Matrix::Zero(n, 1);
    const Vector e = gaussian_matrix(n, 1, 8).col(0);
    const Dataset g{Xg, e, GroupPartition::singletons(1), Task::linear, false};
    EXPECT_NEAR(estimate_error_moments(g, pilot).ratio(), 2.0 / std::numbers::pi, 5e-3);
}

TEST(LambdaFormulas, Values)
{
    const double ratio = 2.0 / std::numbers::pi;
    EXPECT_NEAR(lambda_linear(4.0, 100, std::sqrt(ratio), 1.0),
                2.0 / std::sqrt(100.0 * (1.0 - ratio)), 1e-15);
    EXPECT_NEAR(lambda_linear(4.0, 100, std::sqrt(ratio), 1.0), 0.33178, 1e-5);
    EXPECT_DOUBLE_EQ(lambda_linear(4.0, 100, 0.0, 1.0), std::sqrt(4.0 / 100.0));
    EXPECT_THROW(lambda_linear(4.0, 100, 1.0, 1.0), DegenerateError);
    EXPECT_DOUBLE_EQ(lambda_logistic(2.0, 4), 1.0);
    EXPECT_DOUBLE_EQ(lambda_logistic(0.0, 4), 0.0);
    EXPECT_NEAR(lambda_logistic(3.0, 10000), 0.03, 1e-15);
}

TEST(SelectLambda, LogisticOneDimension)
{
    const Index n = 100;
    // Covariates with sample variance exactly 1.
    Matrix X = gaussian_matrix(n, 1, 10);
    X.array() -= X.mean();
    X /= std::sqrt(X.squaredNorm() / n);
    Vector y(n);
    for (Index i = 0; i < n; ++i)
        y[i] = i % 2 == 0 ? 1.0 : -1.0;
    const Dataset data{X, y, GroupPartition::singletons(1), Task::logistic, false};
    const RwpiSelection sel = select_lambda(data, 0.05, 100000, 11);
    EXPECT_NEAR(sel.lambda, 1.959964 / 10.0, 3.0 * sel.eta_mc_error / 10.0);
    EXPECT_FALSE(sel.moment_ratio.has_value());
}

TEST(SelectLambda, LinearExactFitIsDegenerate)
{
    const Matrix X = gaussian_matrix(100, 6, 12);
    Vector beta(6);
    beta << 1, -2, 0.5, 0, 1, 3;
    const Dataset data{X, X * beta, GroupPartition::contiguous({3, 3}), Task::linear, false};
    EXPECT_THROW(select_lambda(data, 0.05, 2000, 1), DegenerateError);
}

TEST(SelectLambda, DeterministicAndNoiseScaleFree)
{
    const Matrix X = gaussian_matrix(200, 6, 13);
    Vector beta(6);
    beta << 1, -1, 0, 0, 0.5, 0;
    const Vector e = gaussian_matrix(200, 1, 14).col(0);
    const GroupPartition part = GroupPartition::contiguous({2, 2, 2});
    const Dataset a{X, X * beta + e, part, Task::linear, false};
    const RwpiSelection s1 = select_lambda(a, 0.05, 5000, 3);
    const RwpiSelection s2 = select_lambda(a, 0.05, 5000, 3);
    EXPECT_EQ(s1.lambda, s2.lambda);
    EXPECT_EQ(s1.eta_hat, s2.eta_hat);
    EXPECT_EQ(s1.pilot_lambdas, s2.pilot_lambdas);
    ASSERT_TRUE(s1.moment_ratio.has_value());
    EXPECT_GT(*s1.moment_ratio, 0.0);
    EXPECT_LT(*s1.moment_ratio, 1.0);
    // Scaling y scales every pilot residual, leaving the moment ratio alone.
    const Dataset b{X, 3.0 * (X * beta + e), part, Task::linear, false};
    const RwpiSelection s3 = select_lambda(b, 0.05, 5000, 3);
    EXPECT_NEAR(s3.lambda, s1.lambda, 1e-6 * s1.lambda);
}

TEST(SampleL1, ZeroBetaMatchesClosedForm)
{
    const GroupPartition part = GroupPartition::contiguous({2, 3});
    const Index M = 300, d = 5, n_mc = 50;
    const Matrix Xs = gaussian_matrix(M, d, 20);
    const Vector e = gaussian_matrix(M, 1, 21).col(0);
    const NormSpec spec = penalty_spec(part);
    const LimitLawSample l1 = sample_L1(Vector::Zero(d), e, Xs, part, spec, n_mc, 5);
    EXPECT_EQ(l1.failures, 0);
    const Matrix Z = psd_factor(estimate_covariance(Xs)) * gaussian_block(CounterRng(5, 1), 0, n_mc, d);
    for (Index i = 0; i < n_mc; ++i) {
        // sigma^2 ||Z||_dual^2 / E e^2 with sigma^2 = E e^2.
        const double dn = group_norm(Z.col(i), part, dual_spec(spec));
        EXPECT_NEAR(l1.draws[static_cast<std::size_t>(i)], dn * dn, 1e-4 * (1.0 + dn * dn));
    }
}

TEST(SampleL1, BoundedByL2)
{
    const GroupPartition part = GroupPartition::contiguous({2, 2});
    const Index M = 200, d = 4;
    const Matrix Xs = gaussian_matrix(M, d, 30);
    const Vector e = gaussian_matrix(M, 1, 31).col(0);
    Vector beta(d);
    beta << 0.8, -0.5, 0.0, 0.3;
    const NormSpec spec = penalty_spec(part);
    const auto l1 = sample_L1(beta, e, Xs, part, spec, 300, 6);
    const auto l2 = sample_L2(e, Xs, part, spec, 300, 6);
    EXPECT_EQ(l1.failures, 0);
    EXPECT_LE(quantile(l1.draws, 0.9),
              quantile(l2.draws, 0.9) + 2.0 * std::hypot(quantile_mc_error(l1.draws, 0.9),
                                                         quantile_mc_error(l2.draws, 0.9)));
}
