#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gdro/group_norm.hpp"

namespace gdro {

enum class Task { linear, logistic };

inline const char* to_string(Task t) { return t == Task::linear ? "linear" : "logistic"; }

inline Task parse_task(const std::string& s)
{
    if (s == "linear")
        return Task::linear;
    if (s == "logistic")
        return Task::logistic;
    throw std::invalid_argument("unknown task '" + s + "' (expected linear or logistic)");
}

/// Raised when a fit or an estimate collapses to a degenerate configuration
/// (zero residual scale, degenerate error distribution, ...).
class DegenerateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Dataset {
    Matrix X;
    Vector y;
    GroupPartition part;
    Task task = Task::linear;
    /// Fit an unpenalized constant alongside beta.
    bool intercept = false;

    Index n() const { return X.rows(); }
    Index d() const { return X.cols(); }

    void validate() const
    {
        if (X.rows() < 1)
            throw std::invalid_argument("dataset needs at least one row");
        if (y.size() != X.rows())
            throw std::invalid_argument("response length does not match predictor rows");
        if (part.dim() != X.cols())
            throw std::invalid_argument("partition dimension does not match predictor columns");
        if (!X.allFinite() || !y.allFinite())
            throw std::invalid_argument("dataset contains NaN or Inf entries");
        if (task == Task::logistic)
            for (Index i = 0; i < y.size(); ++i)
                if (y[i] != 1.0 && y[i] != -1.0)
                    throw std::invalid_argument("logistic responses must be +1 or -1");
    }

    Dataset subset(const std::vector<Index>& rows) const
    {
        Dataset out{Matrix(static_cast<Index>(rows.size()), X.cols()),
                    Vector(static_cast<Index>(rows.size())), part, task, intercept};
        for (std::size_t k = 0; k < rows.size(); ++k) {
            out.X.row(static_cast<Index>(k)) = X.row(rows[k]);
            out.y[static_cast<Index>(k)] = y[rows[k]];
        }
        return out;
    }
};

struct SolverOptions {
    double tol = 1e-8;
    int max_iter = 10000;
    double outer_tol = 1e-6;
    int outer_max_iter = 100;
    /// Sweep cap per outer square-root lasso step; later steps resume warm.
    int inner_step_iter = 1000;
    /// Optimality (KKT / gradient-mapping) residual required at convergence.
    double kkt_tol = 1e-6;
    /// Per-group penalty weights; empty selects sqrt(group size).
    Vector weights;
    std::optional<Vector> warm_start;
    double warm_intercept = 0.0;
};

struct ModelFit {
    Vector beta;
    double intercept = 0.0;
    double lambda = 0.0;
    /// Root mean squared residual at beta (linear fits only).
    double sigma_hat = 0.0;
    int iterations = 0;
    bool converged = false;
    double objective = 0.0;
    double kkt_residual = 0.0;
    /// Objective after each sweep / outer step; non-increasing.
    std::vector<double> trace;
};

inline Vector penalty_weights(const GroupPartition& part, const Vector& weights = {})
{
    if (weights.size() == 0)
        return penalty_spec(part).alpha;
    if (weights.size() != part.num_groups())
        throw std::invalid_argument("penalty weights do not match the number of groups");
    if ((weights.array() < 0.0).any() || !weights.allFinite())
        throw std::invalid_argument("penalty weights must be nonnegative and finite");
    return weights;
}

/// sum_j w_j ||beta(G_j)||_2
inline double group_penalty(const Vector& beta, const GroupPartition& part, const Vector& weights)
{
    double acc = 0.0;
    for (Index j = 0; j < part.num_groups(); ++j)
        acc += weights[j] * part.gather(beta, j).norm();
    return acc;
}

/// Proximal map of thresh * sum_j w_j ||.(G_j)||_2 (group soft-thresholding).
inline Vector group_prox(const Vector& v, const GroupPartition& part, const Vector& weights,
                         double thresh)
{
    if (thresh < 0.0)
        throw std::invalid_argument("prox threshold must be nonnegative");
    if (v.size() != part.dim() || weights.size() != part.num_groups())
        throw std::invalid_argument("group_prox dimension mismatch");
    Vector out = Vector::Zero(v.size());
    for (Index j = 0; j < part.num_groups(); ++j) {
        const Vector block = part.gather(v, j);
        const double nrm = block.norm();
        const double cut = thresh * weights[j];
        if (nrm > cut)
            part.scatter(block * (1.0 - cut / nrm), j, out);
    }
    return out;
}

inline Vector predict(const Matrix& X, const Vector& beta, double intercept = 0.0)
{
    return (X * beta).array() + intercept;
}

/// log(1 + exp(z)) without overflow.
inline double log1pexp(double z)
{
    return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

/// 1 / (1 + exp(-z)).
inline double logistic(double z)
{
    if (z >= 0.0)
        return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline double mean_squared_error(const Matrix& X, const Vector& y, const Vector& beta,
                                 double intercept = 0.0)
{
    return (y - predict(X, beta, intercept)).squaredNorm() / static_cast<double>(y.size());
}

/// Mean log-exponential loss log(1 + exp(-y x'beta)).
inline double mean_log_loss(const Matrix& X, const Vector& y, const Vector& beta,
                            double intercept = 0.0)
{
    const Vector eta = predict(X, beta, intercept);
    double acc = 0.0;
    for (Index i = 0; i < y.size(); ++i)
        acc += log1pexp(-y[i] * eta[i]);
    return acc / static_cast<double>(y.size());
}

/// Task loss: squared error (linear) or log-exponential (logistic).
inline double task_loss(const Dataset& data, const Vector& beta, double intercept = 0.0)
{
    return data.task == Task::linear ? mean_squared_error(data.X, data.y, beta, intercept)
                                     : mean_log_loss(data.X, data.y, beta, intercept);
}

/// The objective the task's headline estimator minimizes: sqrt(MSE) + lambda*P
/// for linear (group square-root lasso), mean log loss + lambda*P for logistic.
inline double penalized_objective(const Dataset& data, const Vector& beta, double lambda,
                                  double intercept = 0.0, const Vector& weights = {})
{
    const Vector w = penalty_weights(data.part, weights);
    const double pen = lambda * group_penalty(beta, data.part, w);
    if (data.task == Task::linear)
        return std::sqrt(mean_squared_error(data.X, data.y, beta, intercept)) + pen;
    return mean_log_loss(data.X, data.y, beta, intercept) + pen;
}

/// MSE + lambda*P, the plain group lasso objective.
inline double group_lasso_objective(const Dataset& data, const Vector& beta, double lambda,
                                    double intercept = 0.0, const Vector& weights = {})
{
    const Vector w = penalty_weights(data.part, weights);
    return mean_squared_error(data.X, data.y, beta, intercept) +
           lambda * group_penalty(beta, data.part, w);
}

/// Largest violation of the group-lasso optimality conditions for a smooth
/// loss with gradient `grad`:
///   nonzero group: ||grad_j + tau_j beta_j/||beta_j|| ||,
///   zero group:    max(0, ||grad_j|| - tau_j),   tau_j = lambda w_j.
inline double kkt_residual(const Vector& grad, const Vector& beta, const GroupPartition& part,
                           const Vector& weights, double lambda)
{
    double worst = 0.0;
    for (Index j = 0; j < part.num_groups(); ++j) {
        const Vector g = part.gather(grad, j);
        const Vector b = part.gather(beta, j);
        const double bn = b.norm();
        const double tau = lambda * weights[j];
        const double r = bn > 0.0 ? (g + tau * b / bn).norm() : std::max(0.0, g.norm() - tau);
        worst = std::max(worst, r);
    }
    return worst;
}

namespace detail {

/// Centered (when fitting an intercept) design split into group blocks, with
/// the eigendecomposition of each block Hessian 2 X_j'X_j / n.
struct LinearProblem {
    const GroupPartition* part = nullptr;
    Index n = 0;
    Vector x_mean;
    double y_mean = 0.0;
    Vector yc;
    std::vector<Matrix> blocks;
    std::vector<Vector> evals;
    std::vector<Matrix> evecs;

    LinearProblem(const Dataset& data) : part(&data.part), n(data.n())
    {
        data.validate();
        Matrix Xc = data.X;
        yc = data.y;
        x_mean = Vector::Zero(data.d());
        if (data.intercept) {
            x_mean = data.X.colwise().mean().transpose();
            y_mean = data.y.mean();
            Xc.rowwise() -= x_mean.transpose();
            yc.array() -= y_mean;
        }
        const Index ng = data.part.num_groups();
        blocks.resize(static_cast<std::size_t>(ng));
        evals.resize(static_cast<std::size_t>(ng));
        evecs.resize(static_cast<std::size_t>(ng));
        for (Index j = 0; j < ng; ++j) {
            auto idx = data.part.group(j);
            Matrix B(n, static_cast<Index>(idx.size()));
            for (std::size_t k = 0; k < idx.size(); ++k)
                B.col(static_cast<Index>(k)) = Xc.col(idx[k]);
            const Matrix A = 2.0 * B.transpose() * B / static_cast<double>(n);
            Eigen::SelfAdjointEigenSolver<Matrix> es(A);
            evals[static_cast<std::size_t>(j)] = es.eigenvalues().cwiseMax(0.0);
            evecs[static_cast<std::size_t>(j)] = es.eigenvectors();
            blocks[static_cast<std::size_t>(j)] = std::move(B);
        }
    }

    double intercept_for(const Vector& beta) const { return y_mean - x_mean.dot(beta); }

    /// Gradient of (1/n)||yc - Xc beta||^2 given the residual.
    Vector gradient(const Vector& resid) const
    {
        Vector g(part->dim());
        for (Index j = 0; j < part->num_groups(); ++j)
            part->scatter(-2.0 * blocks[static_cast<std::size_t>(j)].transpose() * resid /
                              static_cast<double>(n),
                          j, g);
        return g;
    }
};

/// argmin_b 0.5 b'Ab - lin'b + tau ||b||_2 with A = Q diag(evals) Q'.
/// For ||lin|| > tau the minimizer is b = nu (I + nu A)^{-1} lin, where nu > 0
/// solves ||(I + nu A)^{-1} lin|| = tau; solved by safeguarded Newton on
/// 1/||(I + nu A)^{-1} lin|| - 1/tau, which is close to linear in nu.
inline Vector block_minimizer(const Vector& evals, const Matrix& evecs, const Vector& lin,
                              double tau)
{
    const double ln = lin.norm();
    if (ln <= tau)
        return Vector::Zero(lin.size());
    const Vector c = evecs.transpose() * lin;
    const double floor = 1e-14 * std::max(1.0, evals.maxCoeff());
    if (tau == 0.0) {
        Vector coef(c.size());
        for (Index k = 0; k < c.size(); ++k)
            coef[k] = evals[k] > floor ? c[k] / evals[k] : 0.0;
        return evecs * coef;
    }

    auto inv_root = [&](double nu, double* deriv) {
        double F = 0.0, dF = 0.0;
        for (Index k = 0; k < c.size(); ++k) {
            const double den = 1.0 + evals[k] * nu;
            F += c[k] * c[k] / (den * den);
            dF -= 2.0 * c[k] * c[k] * evals[k] / (den * den * den);
        }
        const double root = std::sqrt(F);
        if (deriv)
            *deriv = -0.5 * dF / (F * root);
        return 1.0 / root - 1.0 / tau;
    };

    double lo = 0.0, hi = 1.0;
    for (int k = 0; k < 400 && inv_root(hi, nullptr) < 0.0; ++k)
        hi *= 2.0;
    double nu = 0.0;
    for (int it = 0; it < 200; ++it) {
        double deriv = 0.0;
        const double h = inv_root(nu, &deriv);
        if (h == 0.0)
            break;
        if (h < 0.0)
            lo = nu;
        else
            hi = nu;
        double next = deriv > 0.0 ? nu - h / deriv : 0.5 * (lo + hi);
        if (!(next > lo && next < hi))
            next = 0.5 * (lo + hi);
        if (std::abs(next - nu) <= 1e-15 * std::max(1.0, nu)) {
            nu = next;
            break;
        }
        nu = next;
    }
    Vector coef(c.size());
    for (Index k = 0; k < c.size(); ++k)
        coef[k] = nu * c[k] / (1.0 + evals[k] * nu);
    return evecs * coef;
}

struct BcdState {
    int sweeps = 0;
    bool converged = false;
    double objective = 0.0;
    double kkt = 0.0;
};

/// Exact block coordinate descent on (1/n)||yc - Xc beta||^2 + lambda sum w_j ||beta_j||.
/// `resid` must equal yc - Xc beta on entry and is kept in sync.
inline BcdState bcd_linear(const LinearProblem& prob, const Vector& weights, double lambda,
                           Vector& beta, Vector& resid, double tol, double kkt_tol, int max_iter,
                           std::vector<double>* trace)
{
    const GroupPartition& part = *prob.part;
    const double n = static_cast<double>(prob.n);
    auto objective = [&] {
        return resid.squaredNorm() / n + lambda * group_penalty(beta, part, weights);
    };
    BcdState st;
    double prev = objective();
    for (int sweep = 0; sweep < max_iter; ++sweep) {
        for (Index j = 0; j < part.num_groups(); ++j) {
            const auto ju = static_cast<std::size_t>(j);
            const Matrix& B = prob.blocks[ju];
            const Vector bj = part.gather(beta, j);
            const Vector& ev = prob.evals[ju];
            const Matrix& Q = prob.evecs[ju];
            // lin = 2 B'r/n + A bj, the linear term of the block subproblem.
            const Vector lin = 2.0 * B.transpose() * resid / n + Q * (ev.asDiagonal() * (Q.transpose() * bj));
            const Vector nb = block_minimizer(ev, Q, lin, lambda * weights[j]);
            const Vector delta = nb - bj;
            if (delta.cwiseAbs().maxCoeff() > 0.0) {
                resid.noalias() -= B * delta;
                part.scatter(nb, j, beta);
            }
        }
        st.sweeps = sweep + 1;
        const double obj = objective();
        if (trace)
            trace->push_back(obj);
        const double decrease = prev - obj;
        prev = obj;
        if (decrease < tol) {
            st.kkt = kkt_residual(prob.gradient(resid), beta, part, weights, lambda);
            if (st.kkt <= kkt_tol) {
                st.converged = true;
                break;
            }
        }
    }
    st.objective = prev;
    if (!st.converged)
        st.kkt = kkt_residual(prob.gradient(resid), beta, part, weights, lambda);
    return st;
}

inline Vector initial_beta(const Dataset& data, const SolverOptions& opts)
{
    if (!opts.warm_start)
        return Vector::Zero(data.d());
    if (opts.warm_start->size() != data.d())
        throw std::invalid_argument("warm start has the wrong length");
    return *opts.warm_start;
}

} // namespace detail

/// Group lasso for linear regression: (1/n)||y - Xb||^2 + lambda sum_j w_j ||b_j||_2.
inline ModelFit fit_group_lasso_linear(const Dataset& data, double lambda,
                                       const SolverOptions& opts = {})
{
    if (data.task != Task::linear)
        throw std::invalid_argument("fit_group_lasso_linear needs a linear dataset");
    if (!(lambda >= 0.0))
        throw std::invalid_argument("lambda must be nonnegative");
    const detail::LinearProblem prob(data);
    const Vector w = penalty_weights(data.part, opts.weights);
    ModelFit fit;
    fit.lambda = lambda;
    fit.beta = detail::initial_beta(data, opts);
    Vector resid = prob.yc;
    for (Index j = 0; j < data.part.num_groups(); ++j)
        resid.noalias() -= prob.blocks[static_cast<std::size_t>(j)] * data.part.gather(fit.beta, j);
    const auto st = detail::bcd_linear(prob, w, lambda, fit.beta, resid, opts.tol, opts.kkt_tol,
                                       opts.max_iter, &fit.trace);
    fit.intercept = data.intercept ? prob.intercept_for(fit.beta) : 0.0;
    fit.iterations = st.sweeps;
    fit.converged = st.converged;
    fit.kkt_residual = st.kkt;
    fit.objective = group_lasso_objective(data, fit.beta, lambda, fit.intercept, w);
    fit.sigma_hat = std::sqrt(mean_squared_error(data.X, data.y, fit.beta, fit.intercept));
    return fit;
}

/// Group square-root lasso: sqrt(MSE(b)) + lambda sum_j w_j ||b_j||_2.
///
/// Scaled-lasso alternation: with sigma fixed the problem
///   MSE(b)/(2 sigma) + sigma/2 + lambda P(b)
/// is a group lasso with penalty 2 lambda sigma, and for fixed b the optimal
/// sigma is sqrt(MSE(b)). Starts from b = 0, sigma = sqrt(mean y^2).
inline ModelFit fit_gsrl_linear(const Dataset& data, double lambda, const SolverOptions& opts = {})
{
    if (data.task != Task::linear)
        throw std::invalid_argument("fit_gsrl_linear needs a linear dataset");
    if (!(lambda >= 0.0))
        throw std::invalid_argument("lambda must be nonnegative");
    const detail::LinearProblem prob(data);
    const Vector w = penalty_weights(data.part, opts.weights);
    const double n = static_cast<double>(data.n());

    ModelFit fit;
    fit.lambda = lambda;
    fit.beta = detail::initial_beta(data, opts);
    Vector resid = prob.yc;
    for (Index j = 0; j < data.part.num_groups(); ++j)
        resid.noalias() -= prob.blocks[static_cast<std::size_t>(j)] * data.part.gather(fit.beta, j);

    constexpr double sigma_floor = 1e-12;
    double sigma = std::sqrt(resid.squaredNorm() / n);
    if (sigma < sigma_floor)
        throw DegenerateError("square-root lasso: residual scale vanished at the start point");
    double best = sigma + lambda * group_penalty(fit.beta, data.part, w);
    fit.trace.push_back(best);

    // The joint objective is min over s > 0 of MSE/(2s) + s/2 + lambda P, and
    // its stationary s solves g(s) = s - phi(s) = 0 with phi(s) = RMSE of the
    // group lasso fit at penalty 2 lambda s. phi is nondecreasing and
    // g changes sign once, so plain alternation s <- phi(s) descends
    // monotonically from above; secant steps on g accelerate it, and once a
    // point with g < 0 is found the root is kept bracketed (Illinois rule).
    struct Point {
        double s, g;
        Vector beta, resid;
    };
    std::optional<Point> hi, lo, prev;
    int last_side = 0;
    for (int outer = 0; outer < opts.outer_max_iter; ++outer) {
        // Warm start from the evaluated point nearest to sigma.
        const Point* near = nullptr;
        for (const Point* p : {hi ? &*hi : nullptr, lo ? &*lo : nullptr})
            if (p && (!near || std::abs(p->s - sigma) < std::abs(near->s - sigma)))
                near = p;
        if (near) {
            fit.beta = near->beta;
            resid = near->resid;
        }
        const auto st = detail::bcd_linear(prob, w, 2.0 * lambda * sigma, fit.beta, resid,
                                           opts.tol * sigma * sigma, opts.kkt_tol * sigma,
                                           std::min(opts.max_iter, opts.inner_step_iter), nullptr);
        const double phi = std::sqrt(resid.squaredNorm() / n);
        const double obj = phi + lambda * group_penalty(fit.beta, data.part, w);
        best = std::min(best, obj);
        fit.trace.push_back(best);
        fit.iterations = outer + 1;
        if (std::abs(sigma - phi) <= opts.outer_tol * std::max(phi, sigma_floor) && st.converged) {
            fit.converged = true;
            break;
        }
        const Point cur{sigma, sigma - phi, fit.beta, resid};
        const int side = cur.g > 0.0 ? 1 : -1;
        // Illinois rule: halve the stale endpoint when the same side moves twice.
        if (side == last_side) {
            if (side > 0 && lo)
                lo->g *= 0.5;
            if (side < 0 && hi)
                hi->g *= 0.5;
        }
        last_side = side;
        (side > 0 ? hi : lo) = cur;

        double next = phi;
        if (lo && hi) {
            next = hi->s - hi->g * (hi->s - lo->s) / (hi->g - lo->g);
            if (!(next > lo->s && next < hi->s))
                next = 0.5 * (lo->s + hi->s);
        } else if (prev && prev->g != cur.g) {
            // Secant extrapolation past phi, limited to a factor of ten.
            const double sec = cur.s - cur.g * (cur.s - prev->s) / (cur.g - prev->g);
            if (side > 0 && sec < phi)
                next = std::max(sec, 0.1 * phi);
            else if (side < 0 && sec > phi)
                next = std::min(sec, 10.0 * phi);
        }
        prev = cur;
        if (!lo && next < sigma_floor) {
            if (sigma <= sigma_floor)
                throw DegenerateError("square-root lasso: residual scale fell below 1e-12 "
                                      "(the fit interpolates the data)");
            next = sigma_floor;
        }
        sigma = next;
    }
    if (!fit.converged && hi && lo) {
        fit.beta = hi->beta;
        resid = hi->resid;
    }
    if (std::sqrt(resid.squaredNorm() / n) < sigma_floor)
        throw DegenerateError("square-root lasso: residual scale fell below 1e-12 "
                              "(the fit interpolates the data)");
    fit.intercept = data.intercept ? prob.intercept_for(fit.beta) : 0.0;
    fit.sigma_hat = std::sqrt(mean_squared_error(data.X, data.y, fit.beta, fit.intercept));
    fit.objective = penalized_objective(data, fit.beta, lambda, fit.intercept, w);
    // d sqrt(MSE) = grad MSE / (2 sigma)
    fit.kkt_residual =
        kkt_residual(prob.gradient(resid) / (2.0 * fit.sigma_hat), fit.beta, data.part, w, lambda);
    return fit;
}

namespace detail {

struct LogisticEval {
    double loss = 0.0;
    Vector grad;
    double grad0 = 0.0;
};

inline LogisticEval logistic_eval(const Dataset& data, const Vector& beta, double b0,
                                  bool with_grad)
{
    const Vector eta = predict(data.X, beta, b0);
    const double n = static_cast<double>(data.n());
    LogisticEval ev;
    Vector coef(data.n());
    for (Index i = 0; i < data.n(); ++i) {
        const double m = data.y[i] * eta[i];
        ev.loss += log1pexp(-m);
        coef[i] = -data.y[i] * logistic(-m);
    }
    ev.loss /= n;
    if (with_grad) {
        ev.grad = data.X.transpose() * coef / n;
        ev.grad0 = data.intercept ? coef.sum() / n : 0.0;
    }
    return ev;
}

} // namespace detail

/// Group lasso logistic regression:
///   (1/n) sum log(1 + exp(-y_i (b0 + x_i'b))) + lambda sum_j w_j ||b_j||_2,
/// by accelerated proximal gradient with backtracking (step halving) and a
/// monotone safeguard: the accepted iterate never increases the objective.
inline ModelFit fit_grlasso_logistic(const Dataset& data, double lambda,
                                     const SolverOptions& opts = {})
{
    if (data.task != Task::logistic)
        throw std::invalid_argument("fit_grlasso_logistic needs a logistic dataset");
    if (!(lambda >= 0.0))
        throw std::invalid_argument("lambda must be nonnegative");
    data.validate();
    const Vector w = penalty_weights(data.part, opts.weights);
    const GroupPartition& part = data.part;

    auto penalty = [&](const Vector& b) { return lambda * group_penalty(b, part, w); };
    auto prox_step = [&](const Vector& b, double b0, const detail::LogisticEval& ev, double L,
                         Vector& out, double& out0) {
        out = group_prox(b - ev.grad / L, part, w, lambda / L);
        out0 = data.intercept ? b0 - ev.grad0 / L : 0.0;
    };

    ModelFit fit;
    fit.lambda = lambda;
    Vector x = detail::initial_beta(data, opts);
    double x0 = data.intercept ? opts.warm_intercept : 0.0;
    Vector y = x;
    double y0 = x0;
    double L = 1e-2;
    double t = 1.0;
    auto evx = detail::logistic_eval(data, x, x0, true);
    double Fx = evx.loss + penalty(x);
    fit.trace.push_back(Fx);

    Vector z, zz;
    double z0 = 0.0, zz0 = 0.0;
    for (int it = 0; it < opts.max_iter; ++it) {
        const auto evy = detail::logistic_eval(data, y, y0, true);
        detail::LogisticEval evz;
        for (int bt = 0; bt < 200; ++bt) {
            prox_step(y, y0, evy, L, z, z0);
            evz = detail::logistic_eval(data, z, z0, false);
            const Vector dz = z - y;
            const double d0 = z0 - y0;
            const double model = evy.loss + evy.grad.dot(dz) + evy.grad0 * d0 +
                                 0.5 * L * (dz.squaredNorm() + d0 * d0);
            if (evz.loss <= model + 1e-15 * std::abs(evy.loss))
                break;
            L *= 2.0;
        }
        const double Fz = evz.loss + penalty(z);
        const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        Vector x_prev = x;
        const double x0_prev = x0;
        if (Fz <= Fx) {
            x = z;
            x0 = z0;
            y = x + (t / t_next) * (z - x) + ((t - 1.0) / t_next) * (x - x_prev);
            y0 = x0 + (t / t_next) * (z0 - x0) + ((t - 1.0) / t_next) * (x0 - x0_prev);
            // z == x here, so the first momentum term vanishes.
            t = t_next;
        } else {
            // Restart momentum from the current accepted point.
            y = x;
            y0 = x0;
            t = 1.0;
        }
        const double decrease = Fx - std::min(Fz, Fx);
        Fx = std::min(Fz, Fx);
        fit.trace.push_back(Fx);
        fit.iterations = it + 1;

        evx = detail::logistic_eval(data, x, x0, true);
        prox_step(x, x0, evx, L, zz, zz0);
        const double resid = L * std::sqrt((zz - x).squaredNorm() + (zz0 - x0) * (zz0 - x0));
        fit.kkt_residual = resid;
        if (resid <= opts.kkt_tol && decrease < opts.tol) {
            fit.converged = true;
            break;
        }
    }
    fit.beta = x;
    fit.intercept = x0;
    fit.objective = penalized_objective(data, fit.beta, lambda, fit.intercept, w);
    return fit;
}

/// Minimum-norm least squares (with an unpenalized intercept when requested).
inline ModelFit fit_least_squares(const Dataset& data)
{
    data.validate();
    Matrix Xc = data.X;
    Vector yc = data.y;
    Vector xm = Vector::Zero(data.d());
    double ym = 0.0;
    if (data.intercept) {
        xm = data.X.colwise().mean().transpose();
        ym = data.y.mean();
        Xc.rowwise() -= xm.transpose();
        yc.array() -= ym;
    }
    ModelFit fit;
    fit.beta = Xc.completeOrthogonalDecomposition().solve(yc);
    fit.intercept = data.intercept ? ym - xm.dot(fit.beta) : 0.0;
    fit.sigma_hat = std::sqrt(mean_squared_error(data.X, data.y, fit.beta, fit.intercept));
    fit.objective = fit.sigma_hat * fit.sigma_hat;
    fit.converged = true;
    fit.iterations = 1;
    return fit;
}

/// Unpenalized logistic regression by Newton / IRLS with a fixed iteration cap.
/// On separable data the coefficients diverge and converged stays false.
inline ModelFit fit_logistic_unpenalized(const Dataset& data, int max_iter = 25,
                                         double tol = 1e-8)
{
    data.validate();
    if (data.task != Task::logistic)
        throw std::invalid_argument("fit_logistic_unpenalized needs a logistic dataset");
    const Index n = data.n();
    const Index p = data.d() + (data.intercept ? 1 : 0);
    Matrix Z(n, p);
    Z.leftCols(data.d()) = data.X;
    if (data.intercept)
        Z.col(p - 1).setOnes();
    Vector theta = Vector::Zero(p);
    ModelFit fit;
    double dev = 2.0 * n * std::log(2.0);
    for (int it = 0; it < max_iter; ++it) {
        const Vector eta = Z * theta;
        Vector grad = Vector::Zero(p);
        Vector wts(n);
        for (Index i = 0; i < n; ++i) {
            const double mu = logistic(eta[i]);
            const double target = data.y[i] > 0.0 ? 1.0 : 0.0;
            wts[i] = std::max(mu * (1.0 - mu), 1e-300);
            grad += (target - mu) * Z.row(i).transpose();
        }
        Matrix H = Z.transpose() * wts.asDiagonal() * Z;
        H.diagonal().array() += 1e-10 * std::max(1.0, H.diagonal().maxCoeff());
        theta += H.ldlt().solve(grad);
        double next_dev = 0.0;
        const Vector eta2 = Z * theta;
        for (Index i = 0; i < n; ++i)
            next_dev += 2.0 * log1pexp(-data.y[i] * eta2[i]);
        fit.iterations = it + 1;
        fit.trace.push_back(next_dev / (2.0 * n));
        const bool done = std::abs(next_dev - dev) / (std::abs(next_dev) + 0.1) < tol;
        dev = next_dev;
        if (done) {
            fit.converged = true;
            break;
        }
    }
    fit.beta = theta.head(data.d());
    fit.intercept = data.intercept ? theta[p - 1] : 0.0;
    fit.objective = mean_log_loss(data.X, data.y, fit.beta, fit.intercept);
    return fit;
}

enum class Model { gsrl_linear, group_lasso_linear, grlasso_logistic };

/// Smallest lambda with an all-zero solution, from the optimality conditions
/// at beta = 0 (with the intercept, if any, at its own optimum).
inline double lambda_max(const Dataset& data, Model model, const Vector& weights = {})
{
    data.validate();
    const Vector w = penalty_weights(data.part, weights);
    const double n = static_cast<double>(data.n());
    Vector score(data.n());
    if (model == Model::grlasso_logistic) {
        double b0 = 0.0;
        if (data.intercept) {
            const double pos = (data.y.array() > 0.0).cast<double>().mean();
            if (pos <= 0.0 || pos >= 1.0)
                throw DegenerateError("single-class response");
            b0 = std::log(pos / (1.0 - pos));
        }
        for (Index i = 0; i < data.n(); ++i)
            score[i] = data.y[i] * logistic(-data.y[i] * b0);
    } else {
        score = data.y;
        if (data.intercept)
            score.array() -= data.y.mean();
    }
    Matrix Xc = data.X;
    if (data.intercept)
        Xc.rowwise() -= data.X.colwise().mean();
    const Vector xs = Xc.transpose() * score / n;
    double scale = 1.0;
    if (model == Model::group_lasso_linear)
        scale = 2.0;
    if (model == Model::gsrl_linear) {
        const double rms = std::sqrt(score.squaredNorm() / n);
        if (rms == 0.0)
            throw DegenerateError("constant response");
        scale = 1.0 / rms;
    }
    double best = 0.0;
    for (Index j = 0; j < data.part.num_groups(); ++j) {
        if (w[j] == 0.0)
            continue;
        best = std::max(best, scale * data.part.gather(xs, j).norm() / w[j]);
    }
    // Relative slack so that fits at exactly lambda_max are zero despite
    // rounding differences between this formula and the solvers' updates.
    return best * (1.0 + 1e-10);
}

} // namespace gdro
