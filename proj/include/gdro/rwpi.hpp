#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gdro/group_norm.hpp"
#include "gdro/rng.hpp"
#include "gdro/solvers.hpp"

namespace gdro {

/// Column-centered sample covariance with denominator n.
inline Matrix estimate_covariance(const Matrix& X)
{
    if (X.rows() < 2)
        throw std::invalid_argument("covariance needs at least two rows");
    const Matrix Xc = X.rowwise() - X.colwise().mean();
    Matrix cov = Xc.transpose() * Xc / static_cast<double>(X.rows());
    return 0.5 * (cov + cov.transpose());
}

/// Symmetric square root F (F F' = cov) from the eigendecomposition.
/// Eigenvalues in [-1e-12 * max, 0) are clamped to zero; anything more
/// negative means the input is not positive semidefinite.
inline Matrix psd_factor(const Matrix& cov)
{
    if (cov.rows() != cov.cols() || cov.rows() == 0)
        throw std::invalid_argument("covariance must be a nonempty square matrix");
    if (!cov.allFinite())
        throw std::invalid_argument("covariance has NaN or Inf entries");
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, cov.cwiseAbs().maxCoeff()))
        throw std::invalid_argument("covariance is not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (cov + cov.transpose()));
    if (es.info() != Eigen::Success)
        throw std::runtime_error("eigendecomposition of the covariance failed");
    Vector ev = es.eigenvalues();
    const double top = std::max(ev.cwiseAbs().maxCoeff(), 0.0);
    for (Index k = 0; k < ev.size(); ++k) {
        if (ev[k] < -1e-12 * top)
            throw std::invalid_argument("covariance is not positive semidefinite (eigenvalue " +
                                        std::to_string(ev[k]) + ")");
        ev[k] = std::sqrt(std::max(ev[k], 0.0));
    }
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

enum class LimitLaw { L1, L2, L4 };

inline const char* to_string(LimitLaw law)
{
    switch (law) {
    case LimitLaw::L1: return "L1";
    case LimitLaw::L2: return "L2";
    case LimitLaw::L4: return "L4";
    }
    return "?";
}

struct LimitLawSample {
    LimitLaw law = LimitLaw::L2;
    std::vector<double> draws;
    Index n_mc = 0;
    std::uint64_t seed = 0;
    bool squared = false;
    /// Draws whose inner maximization stopped before its tolerance (L1 only).
    Index failures = 0;
};

/// Standard normal draws for Monte Carlo replicate i: coordinates i*stride + k
/// of the counter stream, so any replicate is reproducible on its own.
inline Matrix gaussian_block(const CounterRng& rng, Index first, Index count, Index d)
{
    const Index stride = d + (d & 1);
    Matrix xi(d, count);
    for (Index i = 0; i < count; ++i) {
        const auto base = static_cast<std::uint64_t>((first + i) * stride);
        for (Index k = 0; k < d; ++k)
            xi(k, i) = rng.normal_at(base + static_cast<std::uint64_t>(k));
    }
    return xi;
}

/// Draws ||Z||_dual (or its square) for Z ~ N(0, cov).
inline LimitLawSample sample_dual_gaussian_norm(const Matrix& cov, const GroupPartition& part,
                                                const NormSpec& dual, Index n_mc,
                                                std::uint64_t seed, bool squared)
{
    if (n_mc < 1)
        throw std::invalid_argument("n_mc must be positive");
    if (cov.rows() != part.dim())
        throw std::invalid_argument("covariance dimension does not match the partition");
    dual.validate(part);
    const Matrix F = psd_factor(cov);
    const CounterRng rng(seed, 0);
    LimitLawSample out;
    out.law = squared ? LimitLaw::L2 : LimitLaw::L4;
    out.n_mc = n_mc;
    out.seed = seed;
    out.squared = squared;
    out.draws.resize(static_cast<std::size_t>(n_mc));
    constexpr Index chunk = 4096;
    for (Index first = 0; first < n_mc; first += chunk) {
        const Index count = std::min(chunk, n_mc - first);
        const Matrix Z = F * gaussian_block(rng, first, count, part.dim());
        for (Index i = 0; i < count; ++i) {
            const double v = group_norm(Z.col(i), part, dual);
            out.draws[static_cast<std::size_t>(first + i)] = squared ? v * v : v;
        }
    }
    return out;
}

/// Order statistic of rank ceil(level * n) (1-based) of the draws.
inline double quantile(std::vector<double> draws, double level)
{
    if (draws.empty())
        throw std::invalid_argument("quantile of an empty sample");
    if (!(level > 0.0 && level < 1.0))
        throw std::invalid_argument("quantile level must lie in (0, 1)");
    const auto n = static_cast<double>(draws.size());
    auto rank = static_cast<std::size_t>(std::ceil(level * n));
    rank = std::clamp<std::size_t>(rank, 1, draws.size());
    std::nth_element(draws.begin(), draws.begin() + static_cast<std::ptrdiff_t>(rank - 1), draws.end());
    return draws[rank - 1];
}

/// Monte Carlo standard error of the level-quantile: half the spread of the
/// order statistics at ranks n*level -+ sqrt(n*level*(1-level)).
inline double quantile_mc_error(std::vector<double> draws, double level)
{
    if (draws.size() < 2)
        throw std::invalid_argument("quantile error needs at least two draws");
    std::sort(draws.begin(), draws.end());
    const auto n = static_cast<double>(draws.size());
    const double spread = std::sqrt(n * level * (1.0 - level));
    auto at = [&](double r) {
        const auto k = static_cast<std::size_t>(std::clamp(std::ceil(r), 1.0, n));
        return draws[k - 1];
    };
    return 0.5 * (at(n * level + spread) - at(n * level - spread));
}

struct ErrorMoments {
    double mean_abs = 0.0;
    double mean_sq = 0.0;

    /// (E|e|)^2 / E e^2.
    double ratio() const { return mean_abs * mean_abs / mean_sq; }
};

/// Residual moments of a pilot fit.
inline ErrorMoments estimate_error_moments(const Dataset& data, const ModelFit& pilot)
{
    if (data.task != Task::linear)
        throw std::invalid_argument("error moments are defined for linear data only");
    const Vector r = data.y - predict(data.X, pilot.beta, pilot.intercept);
    ErrorMoments m{r.cwiseAbs().mean(), r.squaredNorm() / static_cast<double>(r.size())};
    if (!(m.mean_sq > 0.0))
        throw DegenerateError("pilot fit has zero residuals");
    return m;
}

/// sqrt(eta) / sqrt(n (1 - (E|e|)^2 / E e^2)).
inline double lambda_linear(double eta_sq_quantile, Index n, double mean_abs, double mean_sq)
{
    if (n < 1 || eta_sq_quantile < 0.0)
        throw std::invalid_argument("lambda_linear needs n >= 1 and a nonnegative quantile");
    if (!(mean_sq > 0.0) || mean_sq - mean_abs * mean_abs <= 1e-12 * mean_sq)
        throw DegenerateError("error distribution is degenerate: E e^2 <= (E|e|)^2");
    const double ratio = mean_abs * mean_abs / mean_sq;
    return std::sqrt(eta_sq_quantile) / std::sqrt(static_cast<double>(n) * (1.0 - ratio));
}

/// eta / sqrt(n).
inline double lambda_logistic(double eta_quantile, Index n)
{
    if (n < 1)
        throw std::invalid_argument("lambda_logistic needs n >= 1");
    return eta_quantile / std::sqrt(static_cast<double>(n));
}

struct RwpiSelection {
    double chi = 0.05;
    Index n_mc = 100000;
    std::uint64_t seed = 0;
    /// (1 - chi)-quantile of the dual norm (squared for linear).
    double eta_hat = 0.0;
    double eta_mc_error = 0.0;
    Matrix sigma_hat_cov;
    /// (E|e|)^2 / E e^2 from the final pilot (linear only).
    std::optional<double> moment_ratio;
    std::optional<ErrorMoments> moments;
    /// lambda of the pilot fits, in order (linear only).
    std::vector<double> pilot_lambdas;
    double lambda = 0.0;
};

/// Closed-form regularization from the limit-law recipes.
///
/// Linear: eta = (1-chi)-quantile of ||Z||^2 in the dual of the penalty norm,
/// Z ~ N(0, cov(X)). A square-root lasso pilot at sqrt(eta/n) supplies the
/// residual moments, lambda is recomputed, and one refinement pilot at that
/// lambda gives the final moments and lambda.
/// Logistic: lambda = (1-chi)-quantile of ||Z|| divided by sqrt(n).
inline RwpiSelection select_lambda(const Dataset& data, double chi = 0.05, Index n_mc = 100000,
                                   std::uint64_t seed = 0, const SolverOptions& opts = {})
{
    data.validate();
    if (!(chi > 0.0 && chi < 1.0))
        throw std::invalid_argument("chi must lie in (0, 1)");
    RwpiSelection sel;
    sel.chi = chi;
    sel.n_mc = n_mc;
    sel.seed = seed;
    sel.sigma_hat_cov = estimate_covariance(data.X);
    const NormSpec penalty{penalty_weights(data.part, opts.weights), Exponent::finite(2.0),
                           Exponent::finite(1.0), {}};
    const NormSpec dual = dual_spec(penalty);
    const bool linear = data.task == Task::linear;
    const LimitLawSample draws =
        sample_dual_gaussian_norm(sel.sigma_hat_cov, data.part, dual, n_mc, seed, linear);
    sel.eta_hat = quantile(draws.draws, 1.0 - chi);
    sel.eta_mc_error = n_mc >= 2 ? quantile_mc_error(draws.draws, 1.0 - chi) : 0.0;

    if (!linear) {
        sel.lambda = lambda_logistic(sel.eta_hat, data.n());
        return sel;
    }
    double lam = std::sqrt(sel.eta_hat / static_cast<double>(data.n()));
    for (int step = 0; step < 2; ++step) {
        sel.pilot_lambdas.push_back(lam);
        const ModelFit pilot = fit_gsrl_linear(data, lam, opts);
        const ErrorMoments m = estimate_error_moments(data, pilot);
        sel.moments = m;
        sel.moment_ratio = m.ratio();
        lam = lambda_linear(sel.eta_hat, data.n(), m.mean_abs, m.mean_sq);
    }
    sel.lambda = lam;
    return sel;
}

namespace detail {

/// Smoothed sqrt(g)-(2,1) type norm: sum_j a_j (sqrt(||v_j||^2 + eps^2) - eps),
/// with gradient and Hessian.
struct SmoothGroupNorm {
    const GroupPartition* part;
    Vector alpha;

    double value(const Vector& v, double eps, Vector* grad, Matrix* hess) const
    {
        double acc = 0.0;
        if (grad)
            grad->setZero(v.size());
        if (hess)
            hess->setZero(v.size(), v.size());
        for (Index j = 0; j < part->num_groups(); ++j) {
            const auto idx = part->group(j);
            double sq = 0.0;
            for (Index i : idx)
                sq += v[i] * v[i];
            const double r = std::sqrt(sq + eps * eps);
            acc += alpha[j] * (r - eps);
            if (grad)
                for (Index i : idx)
                    (*grad)[i] = alpha[j] * v[i] / r;
            if (hess)
                for (Index a : idx) {
                    (*hess)(a, a) += alpha[j] / r;
                    for (Index b : idx)
                        (*hess)(a, b) -= alpha[j] * v[a] * v[b] / (r * r * r);
                }
        }
        return acc;
    }
};

} // namespace detail

/// Draws of max_zeta { 2 sigma zeta'Z - mean_i ||e_i zeta - (zeta'x_i) beta*||^2 }
/// with Z ~ N(0, cov of the x samples), sigma^2 = mean e^2, and the norm the
/// sqrt(g)-(2,1) type norm with weights spec.alpha (p = 2, s = 1 only).
///
/// The inner concave problem is solved by damped Newton ascent on a smoothed
/// norm with the smoothing driven from 1e-1 to 1e-9 (relative); the reported
/// value is the exact objective at the final iterate, so each draw is a lower
/// bound on the true maximum up to the solver tolerance.
inline LimitLawSample sample_L1(const Vector& beta_star, const Vector& error_samples,
                                const Matrix& X_samples, const GroupPartition& part,
                                const NormSpec& spec, Index n_mc, std::uint64_t seed)
{
    spec.validate(part);
    if (!(spec.p == Exponent::finite(2.0) && spec.s == Exponent::finite(1.0)))
        throw std::invalid_argument("sample_L1 supports the (2,1) norm family only");
    const Index M = error_samples.size();
    const Index d = part.dim();
    if (M < 2 || X_samples.rows() != M || X_samples.cols() != d || beta_star.size() != d)
        throw std::invalid_argument("sample_L1: inconsistent sample dimensions");
    if (n_mc < 1)
        throw std::invalid_argument("n_mc must be positive");

    const double mean_sq = error_samples.squaredNorm() / static_cast<double>(M);
    const double sigma = std::sqrt(mean_sq);
    const Matrix cov = estimate_covariance(X_samples);
    const Matrix F = psd_factor(cov);
    const detail::SmoothGroupNorm norm{&part, spec.alpha};
    const double Md = static_cast<double>(M);

    // Rows of A_i zeta: e_i zeta - (x_i'zeta) beta*.
    auto apply = [&](Index i, const Vector& zeta) {
        return Vector(error_samples[i] * zeta - X_samples.row(i).dot(zeta) * beta_star);
    };
    auto exact = [&](const Vector& zeta, const Vector& Z) {
        double acc = 0.0;
        for (Index i = 0; i < M; ++i) {
            const Vector v = apply(i, zeta);
            double nv = 0.0;
            for (Index j = 0; j < part.num_groups(); ++j)
                nv += spec.alpha[j] * part.gather(v, j).norm();
            acc += nv * nv;
        }
        return 2.0 * sigma * zeta.dot(Z) - acc / Md;
    };
    auto smooth = [&](const Vector& zeta, const Vector& Z, double eps, Vector* g, Matrix* H) {
        double acc = 0.0;
        if (g)
            *g = 2.0 * sigma * Z;
        if (H)
            H->setZero(d, d);
        Vector gv;
        Matrix Hv;
        for (Index i = 0; i < M; ++i) {
            const Vector v = apply(i, zeta);
            const double psi = norm.value(v, eps, g || H ? &gv : nullptr, H ? &Hv : nullptr);
            acc += psi * psi;
            if (g || H) {
                // d/dzeta of psi^2 = 2 psi A_i' grad, A_i' w = e_i w - x_i (beta*'w).
                const double e = error_samples[i];
                const auto x = X_samples.row(i).transpose();
                if (g)
                    *g -= (2.0 * psi / Md) * (e * gv - x * beta_star.dot(gv));
                if (H) {
                    // Hessian of psi^2 in v: 2 gv gv' + 2 psi Hv, pulled back by A_i.
                    Matrix Q = 2.0 * gv * gv.transpose() + 2.0 * psi * Hv;
                    const Vector Qb = Q * beta_star;
                    const double bQb = beta_star.dot(Qb);
                    Matrix term = e * e * Q;
                    term.noalias() -= e * (x * Qb.transpose() + Qb * x.transpose());
                    term.noalias() += bQb * x * x.transpose();
                    *H -= term / Md;
                }
            }
        }
        return 2.0 * sigma * zeta.dot(Z) - acc / Md;
    };

    LimitLawSample out;
    out.law = LimitLaw::L1;
    out.n_mc = n_mc;
    out.seed = seed;
    out.squared = true;
    out.draws.resize(static_cast<std::size_t>(n_mc));
    const CounterRng rng(seed, 1);
    const Matrix Zall = F * gaussian_block(rng, 0, n_mc, d);

    for (Index draw = 0; draw < n_mc; ++draw) {
        const Vector Z = Zall.col(draw);
        if (Z.cwiseAbs().maxCoeff() == 0.0) {
            out.draws[static_cast<std::size_t>(draw)] = 0.0;
            continue;
        }
        // Start on the best multiple of the direction Z: for a 2-homogeneous
        // penalty q, max_t 2 sigma t u'Z - t^2 q(u) = sigma^2 (u'Z)^2 / q(u).
        Vector zeta = Z;
        const double q0 = (2.0 * sigma * zeta.dot(Z) - exact(zeta, Z)) ;
        if (q0 > 0.0)
            zeta *= sigma * Z.dot(Z) / q0;
        const double scale = std::max(1e-300, zeta.norm());
        bool ok = true;
        for (double eps_rel = 1e-1; eps_rel >= 1e-9 * 0.99; eps_rel *= 1e-2) {
            const double eps = eps_rel * scale * std::max(1.0, beta_star.norm() + sigma);
            bool stage_ok = false;
            for (int it = 0; it < 100; ++it) {
                Vector g;
                Matrix H;
                const double f0 = smooth(zeta, Z, eps, &g, &H);
                // H is negative definite; ascend along -H^{-1} g.
                Matrix negH = -H;
                negH.diagonal().array() += 1e-14 * std::max(1.0, negH.diagonal().maxCoeff());
                Eigen::LLT<Matrix> llt(negH);
                Vector step = llt.info() == Eigen::Success ? Vector(llt.solve(g)) : g;
                double slope = g.dot(step);
                if (slope <= 0.0) {
                    step = g;
                    slope = g.squaredNorm();
                }
                if (slope <= 1e-15 * std::max(1.0, std::abs(f0))) {
                    stage_ok = true;
                    break;
                }
                double a = 1.0;
                while (smooth(zeta + a * step, Z, eps, nullptr, nullptr) < f0 + 1e-4 * a * slope &&
                       a > 1e-12)
                    a *= 0.5;
                zeta += a * step;
                if (a <= 1e-12) {
                    stage_ok = slope <= 1e-10 * std::max(1.0, std::abs(f0));
                    break;
                }
            }
            ok = stage_ok;
        }
        if (!ok)
            ++out.failures;
        out.draws[static_cast<std::size_t>(draw)] = std::max(0.0, exact(zeta, Z));
    }
    return out;
}

/// Draws of L2 = E e^2 / (E e^2 - (E|e|)^2) * ||Z||^2_dual from error samples and
/// the covariance of the x samples, with the same Z draws as sample_L1.
inline LimitLawSample sample_L2(const Vector& error_samples, const Matrix& X_samples,
                                const GroupPartition& part, const NormSpec& spec, Index n_mc,
                                std::uint64_t seed)
{
    const double mean_sq = error_samples.squaredNorm() / static_cast<double>(error_samples.size());
    const double mean_abs = error_samples.cwiseAbs().mean();
    if (mean_sq - mean_abs * mean_abs <= 1e-12 * mean_sq)
        throw DegenerateError("error distribution is degenerate: E e^2 <= (E|e|)^2");
    const double factor = mean_sq / (mean_sq - mean_abs * mean_abs);
    const NormSpec dual = dual_spec(spec);
    const Matrix F = psd_factor(estimate_covariance(X_samples));
    const CounterRng rng(seed, 1);
    const Matrix Zall = F * gaussian_block(rng, 0, n_mc, part.dim());
    LimitLawSample out;
    out.law = LimitLaw::L2;
    out.n_mc = n_mc;
    out.seed = seed;
    out.squared = true;
    out.draws.resize(static_cast<std::size_t>(n_mc));
    for (Index i = 0; i < n_mc; ++i) {
        const double v = group_norm(Zall.col(i), part, dual);
        out.draws[static_cast<std::size_t>(i)] = factor * v * v;
    }
    return out;
}

} // namespace gdro
