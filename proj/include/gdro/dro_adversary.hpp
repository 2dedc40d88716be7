#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <ceres/ceres.h>

#include "gdro/group_norm.hpp"
#include "gdro/rng.hpp"
#include "gdro/solvers.hpp"
#include "gdro/transport.hpp"

namespace gdro {

/// (sqrt(MSE) + sqrt(delta) ||beta||)^2: worst-case mean squared error over the
/// transport ball of radius delta (rho = 2, cost in the dual norm).
inline double worst_case_linear(const Dataset& data, const Vector& beta, double delta,
                                const NormSpec& spec, double intercept = 0.0)
{
    if (!(delta >= 0.0))
        throw std::invalid_argument("delta must be nonnegative");
    const double root = std::sqrt(mean_squared_error(data.X, data.y, beta, intercept)) +
                        std::sqrt(delta) * group_norm(beta, data.part, spec);
    return root * root;
}

/// Mean log loss + delta ||beta||: worst case over the rho = 1 transport ball.
inline double worst_case_logistic(const Dataset& data, const Vector& beta, double delta,
                                  const NormSpec& spec, double intercept = 0.0)
{
    if (!(delta >= 0.0))
        throw std::invalid_argument("delta must be nonnegative");
    return mean_log_loss(data.X, data.y, beta, intercept) + delta * group_norm(beta, data.part, spec);
}

struct AdversaryResult {
    double value = 0.0;
    bool converged = false;
    int iterations = 0;
    /// Per-sample displacements achieving value (rows match data.X).
    Matrix displacement;
};

/// Primal lower bound on the worst-case loss: maximize the mean loss at
/// x_i + Delta_i over displacements with (1/n) sum ||Delta_i||^rho <= delta
/// (norm = cost.norm), responses fixed.
///
/// Delta_i = t_i d_i, where d_i is the unit-cost direction maximizing the
/// loss slope (the Hölder witness of the loss gradient in x) and t >= 0 the
/// magnitudes. Magnitudes are updated by maximizing the linearized loss over
/// the budget set: a sphere for rho = 2, simplex vertices for rho = 1. For
/// convex losses each update cannot decrease the value. Starts from the
/// uniform allocation plus seeded random restarts; the best value is kept.
inline AdversaryResult adversary_lower_bound(const Dataset& data, const Vector& beta, double delta,
                                             const CostSpec& cost, int iters = 2000,
                                             std::uint64_t seed = 0, double intercept = 0.0,
                                             int restarts = 3)
{
    data.validate();
    cost.validate();
    if (!(delta >= 0.0))
        throw std::invalid_argument("delta must be nonnegative");
    if (beta.size() != data.d())
        throw std::invalid_argument("beta has the wrong length");
    const Index n = data.n();
    const double nd = static_cast<double>(n);
    const bool linear = data.task == Task::linear;

    auto loss_at = [&](double margin_input, double y) {
        // margin_input = b0 + u'beta
        if (linear) {
            const double r = y - margin_input;
            return r * r;
        }
        return log1pexp(-y * margin_input);
    };
    auto dloss = [&](double margin_input, double y) {
        if (linear)
            return -2.0 * (y - margin_input);
        return -y * logistic(-y * margin_input);
    };

    const Vector base = predict(data.X, beta, intercept);
    const bool beta_zero = beta.cwiseAbs().maxCoeff() == 0.0;
    // Unit-cost directions for increasing and decreasing u'beta.
    const Vector up = beta_zero ? Vector::Zero(data.d()) : dual_witness(beta, data.part, cost.norm);
    const double slope_unit = up.dot(beta);

    AdversaryResult best;
    best.value = 0.0;
    for (Index i = 0; i < n; ++i)
        best.value += loss_at(base[i], data.y[i]);
    best.value /= nd;
    best.displacement = Matrix::Zero(n, data.d());
    best.converged = true;
    if (delta == 0.0 || beta_zero)
        return best;

    // With direction sign s_i the margin input moves by s_i t_i slope_unit.
    auto evaluate = [&](const Vector& t, const std::vector<double>& sgn) {
        double acc = 0.0;
        for (Index i = 0; i < n; ++i)
            acc += loss_at(base[i] + sgn[static_cast<std::size_t>(i)] * t[i] * slope_unit, data.y[i]);
        return acc / nd;
    };
    auto directions = [&](const Vector& t, std::vector<double>& sgn) {
        Vector slope(n);
        for (Index i = 0; i < n; ++i) {
            const double m = base[i] + sgn[static_cast<std::size_t>(i)] * t[i] * slope_unit;
            const double g = dloss(m, data.y[i]);
            if (g != 0.0)
                sgn[static_cast<std::size_t>(i)] = g > 0.0 ? 1.0 : -1.0;
            slope[i] = std::abs(g) * slope_unit / nd;
        }
        return slope;
    };
    const double radius = cost.rho == 2 ? std::sqrt(nd * delta) : nd * delta;
    auto lmo = [&](const Vector& slope) {
        Vector t = Vector::Zero(n);
        if (cost.rho == 2) {
            const double s = slope.norm();
            if (s > 0.0)
                t = radius * slope / s;
            else
                t.setConstant(std::sqrt(delta));
        } else {
            Index k = 0;
            slope.maxCoeff(&k);
            t[k] = radius;
        }
        return t;
    };

    CounterRng rng(seed, 7);
    int total = 0;
    bool all_converged = true;
    for (int start = 0; start <= restarts; ++start) {
        Vector t(n);
        if (start == 0) {
            t.setConstant(cost.rho == 2 ? std::sqrt(delta) : delta);
        } else {
            for (Index i = 0; i < n; ++i)
                t[i] = rng.uniform();
            if (cost.rho == 2)
                t *= radius / t.norm();
            else
                t *= radius / t.sum();
        }
        std::vector<double> sgn(static_cast<std::size_t>(n), 1.0);
        directions(Vector::Zero(n), sgn);
        double value = evaluate(t, sgn);
        bool converged = false;
        for (int it = 0; it < iters; ++it) {
            ++total;
            std::vector<double> next_sgn = sgn;
            const Vector slope = directions(t, next_sgn);
            const Vector cand = lmo(slope);
            const double cand_value = evaluate(cand, next_sgn);
            if (cand_value <= value * (1.0 + 1e-15) + 1e-300) {
                if (cand_value > value) {
                    t = cand;
                    sgn = next_sgn;
                    value = cand_value;
                }
                converged = true;
                break;
            }
            t = cand;
            sgn = next_sgn;
            value = cand_value;
        }
        all_converged = all_converged && converged;
        if (value > best.value) {
            best.value = value;
            for (Index i = 0; i < n; ++i)
                best.displacement.row(i) = (sgn[static_cast<std::size_t>(i)] * t[i]) * up.transpose();
        }
    }
    if (cost.rho == 1) {
        // The separable convex objective peaks at a vertex of the budget
        // simplex; scan them all.
        double total_base = 0.0;
        std::vector<double> li(static_cast<std::size_t>(n));
        for (Index i = 0; i < n; ++i) {
            li[static_cast<std::size_t>(i)] = loss_at(base[i], data.y[i]);
            total_base += li[static_cast<std::size_t>(i)];
        }
        for (Index i = 0; i < n; ++i) {
            const double g = dloss(base[i], data.y[i]);
            const double s = g >= 0.0 ? 1.0 : -1.0;
            const double v =
                (total_base - li[static_cast<std::size_t>(i)] + loss_at(base[i] + s * radius * slope_unit, data.y[i])) / nd;
            if (v > best.value) {
                best.value = v;
                best.displacement.setZero();
                best.displacement.row(i) = (s * radius) * up.transpose();
            }
        }
    }
    best.iterations = total;
    best.converged = all_converged;
    return best;
}

/// Atom-splitting perturbation for rho = 1: mass fraction eps of atom i moves
/// a distance delta / (w_i eps) along the cost-unit direction that lowers
/// its margin fastest; the rest stays. This lies in the transport ball and
/// approaches the closed-form logistic worst case as eps -> 0.
struct SplitPerturbation {
    double value = 0.0;
    Index atom = -1;
    double fraction = 0.0;
    /// Displacement of the moved fraction.
    Vector shift;
};

inline SplitPerturbation split_lower_bound(const Dataset& data, const Vector& beta, double delta,
                                           const CostSpec& cost, double intercept = 0.0)
{
    data.validate();
    cost.validate();
    if (cost.rho != 1)
        throw std::invalid_argument("atom splitting applies to rho = 1 only");
    if (data.task != Task::logistic)
        throw std::invalid_argument("atom splitting is implemented for logistic loss");
    if (!(delta >= 0.0))
        throw std::invalid_argument("delta must be nonnegative");
    const Index n = data.n();
    const double w = 1.0 / static_cast<double>(n);
    const Vector eta = predict(data.X, beta, intercept);
    std::vector<double> li(static_cast<std::size_t>(n));
    double total = 0.0;
    for (Index i = 0; i < n; ++i) {
        li[static_cast<std::size_t>(i)] = log1pexp(-data.y[i] * eta[i]);
        total += li[static_cast<std::size_t>(i)];
    }
    SplitPerturbation best;
    best.value = total * w;
    if (delta == 0.0 || beta.cwiseAbs().maxCoeff() == 0.0)
        return best;
    // u has unit cost and beta'u equals the penalty norm of beta.
    const Vector u = dual_witness(beta, cost.part, cost.norm);
    const double slope = beta.dot(u);
    for (Index i = 0; i < n; ++i) {
        const double li_old = li[static_cast<std::size_t>(i)];
        for (int k = 0; k <= 12; ++k) {
            const double eps = std::pow(10.0, -k);
            const double r = delta / (w * eps);
            const double m_new = data.y[i] * eta[i] - r * slope;
            const double v = (total - eps * li_old) * w + w * eps * log1pexp(-m_new);
            if (v > best.value) {
                best.value = v;
                best.atom = i;
                best.fraction = eps;
                best.shift = (-data.y[i] * r) * u;
            }
        }
    }
    return best;
}

struct RwpEstimate {
    /// Achieved transport cost (1/n) sum ||Delta_i||^2 at the final point.
    double value = 0.0;
    /// Max-abs violation of the moment equations at the final point.
    double violation = 0.0;
    /// Set when the violation exceeds 1e-6.
    bool flagged = false;
    int rounds = 0;
    Matrix displacement;
};

namespace detail {

/// Squared alpha-(2,t) norm with t >= 2: the power mean
/// (sum_j s_j^k)^(1/k) of s_j = alpha_j^2 ||v_j||^2 with k = t/2.
/// k = inf is the max; a finite k over-estimates it by at most (groups)^(1/k).
inline double power_mean_sq(const double* v, const GroupPartition& part, const Vector& alpha,
                            double k, double* grad)
{
    const Index ng = part.num_groups();
    std::vector<double> s(static_cast<std::size_t>(ng));
    double top = 0.0;
    for (Index j = 0; j < ng; ++j) {
        double acc = 0.0;
        for (Index i : part.group(j))
            acc += v[i] * v[i];
        s[static_cast<std::size_t>(j)] = alpha[j] * alpha[j] * acc;
        top = std::max(top, s[static_cast<std::size_t>(j)]);
    }
    if (top == 0.0) {
        if (grad)
            for (Index i = 0; i < part.dim(); ++i)
                grad[i] = 0.0;
        return 0.0;
    }
    double sum = 0.0;
    for (double x : s)
        sum += std::pow(x / top, k);
    const double value = top * std::pow(sum, 1.0 / k);
    if (grad) {
        const double outer = std::pow(sum, 1.0 / k - 1.0);
        for (Index j = 0; j < ng; ++j) {
            const double w = std::pow(s[static_cast<std::size_t>(j)] / top, k - 1.0) * outer;
            for (Index i : part.group(j))
                grad[i] = w * 2.0 * alpha[j] * alpha[j] * v[i];
        }
    }
    return value;
}

/// Augmented Lagrangian of the moment-constrained transport problem in the
/// displacements Delta (row-major n x d).
class RwpLagrangian final : public ceres::FirstOrderFunction {
public:
    RwpLagrangian(const Dataset& data, const Vector& beta, const Vector& alpha, double k,
                  const Vector& mu, double rho)
        : data_(data), beta_(beta), alpha_(alpha), k_(k), mu_(mu), rho_(rho)
    {}

    bool Evaluate(const double* params, double* cost, double* gradient) const override
    {
        const Index n = data_.n(), d = data_.d();
        const double nd = static_cast<double>(n);
        Vector h = Vector::Zero(d);
        std::vector<double> resid(static_cast<std::size_t>(n));
        double transport = 0.0;
        std::vector<double> g(static_cast<std::size_t>(d));
        for (Index i = 0; i < n; ++i) {
            const double* delta = params + i * d;
            const double c = power_mean_sq(delta, data_.part, alpha_, k_, gradient ? g.data() : nullptr);
            transport += c;
            if (gradient)
                for (Index a = 0; a < d; ++a)
                    gradient[i * d + a] = g[static_cast<std::size_t>(a)] / nd;
            double ub = 0.0;
            for (Index a = 0; a < d; ++a)
                ub += (data_.X(i, a) + delta[a]) * beta_[a];
            const double r = data_.y[i] - ub;
            resid[static_cast<std::size_t>(i)] = r;
            for (Index a = 0; a < d; ++a)
                h[a] += (data_.X(i, a) + delta[a]) * r;
        }
        h /= nd;
        *cost = transport / nd + mu_.dot(h) + 0.5 * rho_ * h.squaredNorm();
        if (gradient) {
            const Vector w = mu_ + rho_ * h;
            for (Index i = 0; i < n; ++i) {
                const double* delta = params + i * d;
                double wu = 0.0;
                for (Index a = 0; a < d; ++a)
                    wu += w[a] * (data_.X(i, a) + delta[a]);
                const double r = resid[static_cast<std::size_t>(i)];
                for (Index a = 0; a < d; ++a)
                    gradient[i * d + a] += (w[a] * r - wu * beta_[a]) / nd;
            }
        }
        return true;
    }

    int NumParameters() const override { return static_cast<int>(data_.n() * data_.d()); }

private:
    const Dataset& data_;
    const Vector& beta_;
    const Vector& alpha_;
    double k_;
    Vector mu_;
    double rho_;
};

inline Vector moment_residual(const Dataset& data, const Vector& beta, const Matrix& delta)
{
    const Matrix U = data.X + delta;
    const Vector r = data.y - U * beta;
    return U.transpose() * r / static_cast<double>(data.n());
}

} // namespace detail

/// Upper estimate of the linear RWP function
///   R_n(beta) = min { D_c(P, P_n) : E_P[X (Y - X'beta)] = 0 }
/// restricted to per-sample displacements of x (rho = 2). Solved by an
/// augmented Lagrangian on the d moment equations with L-BFGS inner solves.
/// Penalty starts at 10 and grows tenfold whenever the violation fails to
/// shrink by a factor 4, for at most 20 rounds; the multiplier update is
/// mu += rho h. For t = inf the max over groups is smoothed by a power mean
/// whose order grows 4, 16, 64, 256 over the rounds. The returned value is
/// the exact (unsmoothed) cost of the final displacements.
inline RwpEstimate rwp_primal_estimate(const Dataset& data, const Vector& beta, const CostSpec& cost)
{
    data.validate();
    cost.validate();
    if (data.task != Task::linear)
        throw std::invalid_argument("rwp_primal_estimate needs a linear dataset");
    if (cost.rho != 2)
        throw std::invalid_argument("rwp_primal_estimate uses the rho = 2 cost");
    if (!(cost.norm.p == Exponent::finite(2.0)) ||
        !(cost.norm.s.is_infinite() || cost.norm.s.value() >= 2.0))
        throw std::invalid_argument("rwp_primal_estimate supports (2, t) norms with t >= 2 only");
    if (beta.size() != data.d())
        throw std::invalid_argument("beta has the wrong length");

    const Index n = data.n(), d = data.d();
    const double nd = static_cast<double>(n);
    RwpEstimate est;
    est.displacement = Matrix::Zero(n, d);
    const Vector h0 = detail::moment_residual(data, beta, est.displacement);
    const double h0n = h0.cwiseAbs().maxCoeff();
    if (h0n == 0.0)
        return est;

    // Linearized minimum-norm start: Delta_i = -J_i' K^{-1} h0 with
    // J_i = r_i I - x_i beta' and K = (1/n) sum J_i J_i'.
    const Vector r0 = data.y - data.X * beta;
    Matrix K = Matrix::Zero(d, d);
    for (Index i = 0; i < n; ++i) {
        const Matrix J = r0[i] * Matrix::Identity(d, d) - data.X.row(i).transpose() * beta.transpose();
        K += J * J.transpose();
    }
    K /= nd;
    const Vector lam = K.completeOrthogonalDecomposition().solve(h0);
    for (Index i = 0; i < n; ++i) {
        const Matrix J = r0[i] * Matrix::Identity(d, d) - data.X.row(i).transpose() * beta.transpose();
        est.displacement.row(i) = -(J.transpose() * lam).transpose();
    }

    const bool max_norm = cost.norm.s.is_infinite();
    const double fixed_k = max_norm ? 0.0 : 0.5 * cost.norm.s.value();
    const Vector& alpha = cost.norm.alpha;

    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> params = est.displacement;
    Vector mu = Vector::Zero(d);
    double rho = 10.0;
    double prev_viol = std::numeric_limits<double>::infinity();
    const double target = 1e-10 * std::max(1.0, h0n);

    ceres::GradientProblemSolver::Options options;
    options.line_search_direction_type = ceres::LBFGS;
    options.max_num_iterations = 2000;
    options.function_tolerance = 1e-15;
    options.gradient_tolerance = 1e-13;
    options.parameter_tolerance = 1e-15;
    options.logging_type = ceres::SILENT;
    options.minimizer_progress_to_stdout = false;

    for (int round = 0; round < 20; ++round) {
        const double k = max_norm ? std::min(256.0, 4.0 * std::pow(4.0, round)) : fixed_k;
        ceres::GradientProblem problem(new detail::RwpLagrangian(data, beta, alpha, k, mu, rho));
        ceres::GradientProblemSolver::Summary summary;
        ceres::Solve(options, problem, params.data(), &summary);
        est.rounds = round + 1;
        const Matrix delta = params;
        const Vector h = detail::moment_residual(data, beta, delta);
        const double viol = h.cwiseAbs().maxCoeff();
        mu += rho * h;
        if (viol > 0.25 * prev_viol)
            rho *= 10.0;
        prev_viol = viol;
        const bool smoothing_done = !max_norm || k >= 256.0;
        if (viol <= target && smoothing_done)
            break;
    }
    est.displacement = params;
    const Vector h = detail::moment_residual(data, beta, est.displacement);
    est.violation = h.cwiseAbs().maxCoeff();
    est.flagged = est.violation > 1e-6;
    double total = 0.0;
    for (Index i = 0; i < n; ++i) {
        const double c = group_norm(est.displacement.row(i).transpose(), data.part, cost.norm);
        total += c * c;
    }
    est.value = total / nd;
    return est;
}

} // namespace gdro
