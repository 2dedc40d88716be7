#pragma once

// Independent reference computations used only by the tests. None of these
// share code paths with the library algorithms they check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/special_functions/gamma.hpp>

#include "gdro/group_norm.hpp"

namespace oracle {

using gdro::GroupPartition;
using gdro::Index;
using gdro::Matrix;
using gdro::Vector;

/// Euclidean projection onto {a : sum_j w_j ||a_j||_2 <= 1}. The group norms
/// are projected onto a weighted simplex-ball by bisection on the shift.
inline Vector project_group_ball(const Vector& a, const GroupPartition& part, const Vector& w)
{
    const Index ng = part.num_groups();
    Vector r(ng);
    for (Index j = 0; j < ng; ++j)
        r[j] = part.gather(a, j).norm();
    if (w.dot(r) <= 1.0)
        return a;
    double lo = 0.0, hi = 0.0;
    for (Index j = 0; j < ng; ++j)
        hi = std::max(hi, r[j] / w[j]);
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        double s = 0.0;
        for (Index j = 0; j < ng; ++j)
            s += w[j] * std::max(0.0, r[j] - mid * w[j]);
        (s > 1.0 ? lo : hi) = mid;
    }
    const double theta = hi;
    Vector out = Vector::Zero(a.size());
    for (Index j = 0; j < ng; ++j) {
        const double nr = std::max(0.0, r[j] - theta * w[j]);
        if (r[j] > 0.0)
            part.scatter(part.gather(a, j) * (nr / r[j]), j, out);
    }
    return out;
}

/// max a'b over the w-(2,1) unit ball by projected gradient ascent.
inline double dual_norm_by_ascent(const Vector& b, const GroupPartition& part, const Vector& w,
                                  int iters = 20000)
{
    Vector a = Vector::Zero(b.size());
    const double step = 0.05 / std::max(b.norm(), 1e-300);
    for (int it = 0; it < iters; ++it)
        a = project_group_ball(a + step * b, part, w);
    return a.dot(b);
}

/// Nelder-Mead simplex minimization.
inline Vector nelder_mead(const std::function<double(const Vector&)>& f, Vector x0,
                          double scale = 1.0, int iters = 20000)
{
    const Index n = x0.size();
    std::vector<Vector> pts(static_cast<std::size_t>(n + 1), x0);
    for (Index i = 0; i < n; ++i)
        pts[static_cast<std::size_t>(i + 1)][i] += scale;
    std::vector<double> val(pts.size());
    for (std::size_t k = 0; k < pts.size(); ++k)
        val[k] = f(pts[k]);
    for (int it = 0; it < iters; ++it) {
        std::vector<std::size_t> ord(pts.size());
        for (std::size_t k = 0; k < ord.size(); ++k)
            ord[k] = k;
        std::sort(ord.begin(), ord.end(), [&](auto a, auto b) { return val[a] < val[b]; });
        const std::size_t best = ord.front(), worst = ord.back(), second = ord[ord.size() - 2];
        if (std::abs(val[worst] - val[best]) < 1e-16 && it > 100)
            break;
        Vector centroid = Vector::Zero(n);
        for (std::size_t k = 0; k < pts.size(); ++k)
            if (k != worst)
                centroid += pts[k];
        centroid /= static_cast<double>(n);
        const Vector xr = centroid + (centroid - pts[worst]);
        const double fr = f(xr);
        if (fr < val[best]) {
            const Vector xe = centroid + 2.0 * (centroid - pts[worst]);
            const double fe = f(xe);
            if (fe < fr) {
                pts[worst] = xe;
                val[worst] = fe;
            } else {
                pts[worst] = xr;
                val[worst] = fr;
            }
        } else if (fr < val[second]) {
            pts[worst] = xr;
            val[worst] = fr;
        } else {
            const Vector xc = centroid + 0.5 * (pts[worst] - centroid);
            const double fc = f(xc);
            if (fc < val[worst]) {
                pts[worst] = xc;
                val[worst] = fc;
            } else {
                for (std::size_t k = 0; k < pts.size(); ++k)
                    if (k != best) {
                        pts[k] = pts[best] + 0.5 * (pts[k] - pts[best]);
                        val[k] = f(pts[k]);
                    }
            }
        }
    }
    std::size_t best = 0;
    for (std::size_t k = 1; k < pts.size(); ++k)
        if (val[k] < val[best])
            best = k;
    return pts[best];
}

enum class Loss { squared, root_squared, logistic };

/// Interior-point (log-barrier Newton) solver for
///   loss(b0 + X beta) + lambda sum_j w_j t_j   s.t. ||beta_j||_2 <= t_j,
/// with the root-squared loss written through an extra epigraph variable
/// s >= ||y - b0 - X beta|| / sqrt(n). Returns the optimal objective value.
struct BarrierResult {
    double objective = 0.0;
    Vector beta;
    double intercept = 0.0;
};

inline BarrierResult barrier_solve(Loss loss, const Matrix& X, const Vector& y,
                                   const GroupPartition& part, const Vector& w, double lambda,
                                   bool intercept)
{
    const Index n = X.rows(), d = X.cols(), ng = part.num_groups();
    const Index ib = d;                       // intercept slot
    const Index it0 = d + 1;                  // t_j slots
    const Index is = d + 1 + ng;              // s slot
    const Index dim = d + 1 + ng + 1;
    const double nn = static_cast<double>(n);

    Vector z = Vector::Zero(dim);
    for (Index j = 0; j < ng; ++j)
        z[it0 + j] = 1.0;
    z[is] = std::sqrt(y.squaredNorm() / nn) + 1.0;

    auto resid = [&](const Vector& v) {
        return Vector(y - X * v.head(d) - Vector::Constant(n, intercept ? v[ib] : 0.0));
    };

    // Returns +inf outside the barrier domain.
    auto phi = [&](const Vector& v, double tau, Vector* g, Matrix* H) {
        double val = 0.0;
        if (g)
            g->setZero(dim);
        if (H)
            H->setZero(dim, dim);
        for (Index j = 0; j < ng; ++j) {
            const auto idx = part.group(j);
            double uu = 0.0;
            for (Index i : idx)
                uu += v[i] * v[i];
            const double t = v[it0 + j];
            const double D = t * t - uu;
            if (!(t > 0.0 && D > 0.0))
                return std::numeric_limits<double>::infinity();
            val += tau * lambda * w[j] * t - std::log(D);
            if (g) {
                (*g)[it0 + j] += tau * lambda * w[j] - 2.0 * t / D;
                for (Index i : idx)
                    (*g)[i] += 2.0 * v[i] / D;
            }
            if (H) {
                (*H)(it0 + j, it0 + j) += -2.0 / D + 4.0 * t * t / (D * D);
                for (Index a : idx) {
                    (*H)(a, a) += 2.0 / D;
                    (*H)(a, it0 + j) += -4.0 * t * v[a] / (D * D);
                    (*H)(it0 + j, a) += -4.0 * t * v[a] / (D * D);
                    for (Index b : idx)
                        (*H)(a, b) += 4.0 * v[a] * v[b] / (D * D);
                }
            }
        }
        // Design with an intercept column; unused columns stay zero.
        Matrix Z = Matrix::Zero(n, dim);
        Z.leftCols(d) = X;
        if (intercept)
            Z.col(ib).setOnes();
        const Vector r = resid(v);
        if (loss == Loss::squared) {
            val += tau * r.squaredNorm() / nn;
            if (g)
                *g += tau * (-2.0 / nn) * Z.transpose() * r;
            if (H)
                *H += tau * (2.0 / nn) * Z.transpose() * Z;
        } else if (loss == Loss::logistic) {
            const Vector eta = Z * v;
            Vector c(n), h(n);
            for (Index i = 0; i < n; ++i) {
                const double m = y[i] * eta[i];
                val += tau * (m > 0 ? std::log1p(std::exp(-m)) : -m + std::log1p(std::exp(m))) / nn;
                const double p = 1.0 / (1.0 + std::exp(m));
                c[i] = -y[i] * p;
                h[i] = p * (1.0 - p);
            }
            if (g)
                *g += tau * Z.transpose() * c / nn;
            if (H)
                *H += tau * Z.transpose() * h.asDiagonal() * Z / nn;
        } else {
            // s >= ||r||/sqrt(n): barrier -log(s^2 - r'r/n), objective tau*s.
            const double s = v[is];
            const double D = s * s - r.squaredNorm() / nn;
            if (!(s > 0.0 && D > 0.0))
                return std::numeric_limits<double>::infinity();
            val += tau * s - std::log(D);
            // u = r/sqrt(n) = (y - Z v)/sqrt(n), du/dv = -Z/sqrt(n)
            const Vector u = r / std::sqrt(nn);
            const Matrix J = -Z / std::sqrt(nn);
            if (g) {
                (*g)[is] += tau - 2.0 * s / D;
                *g += J.transpose() * (2.0 * u / D);
            }
            if (H) {
                (*H)(is, is) += -2.0 / D + 4.0 * s * s / (D * D);
                const Vector Ju = J.transpose() * u;
                *H += J.transpose() * J * (2.0 / D) + Ju * Ju.transpose() * (4.0 / (D * D));
                const Vector cross = Ju * (-4.0 * s / (D * D));
                H->col(is) += cross;
                H->row(is) += cross.transpose();
            }
        }
        return val;
    };

    // Keep unused coordinates pinned: regularize their Hessian diagonal.
    std::vector<bool> active(static_cast<std::size_t>(dim), true);
    if (!intercept)
        active[static_cast<std::size_t>(ib)] = false;
    if (loss != Loss::root_squared)
        active[static_cast<std::size_t>(is)] = false;

    double tau = 1.0;
    const double m = static_cast<double>(ng + (loss == Loss::root_squared ? 1 : 0));
    while (m / tau > 1e-11) {
        for (int it = 0; it < 200; ++it) {
            Vector g;
            Matrix H;
            const double f0 = phi(z, tau, &g, &H);
            for (Index k = 0; k < dim; ++k)
                if (!active[static_cast<std::size_t>(k)]) {
                    H.row(k).setZero();
                    H.col(k).setZero();
                    H(k, k) = 1.0;
                    g[k] = 0.0;
                }
            const Vector step = -H.ldlt().solve(g);
            const double dec = -g.dot(step);
            if (dec / 2.0 < 1e-14)
                break;
            double a = 1.0;
            while (phi(z + a * step, tau, nullptr, nullptr) > f0 - 0.25 * a * dec && a > 1e-20)
                a *= 0.5;
            z += a * step;
        }
        tau *= 8.0;
    }
    BarrierResult out;
    out.beta = z.head(d);
    out.intercept = intercept ? z[ib] : 0.0;
    const Vector r = resid(z);
    double pen = 0.0;
    for (Index j = 0; j < ng; ++j)
        pen += w[j] * part.gather(out.beta, j).norm();
    if (loss == Loss::squared)
        out.objective = r.squaredNorm() / nn + lambda * pen;
    else if (loss == Loss::root_squared)
        out.objective = std::sqrt(r.squaredNorm() / nn) + lambda * pen;
    else {
        const Vector eta = X * out.beta + Vector::Constant(n, out.intercept);
        double acc = 0.0;
        for (Index i = 0; i < n; ++i) {
            const double mm = y[i] * eta[i];
            acc += mm > 0 ? std::log1p(std::exp(-mm)) : -mm + std::log1p(std::exp(mm));
        }
        out.objective = acc / nn + lambda * pen;
    }
    return out;
}

/// CDF of max_j chi_{g_j} / sqrt(g_j) for independent chi variables.
inline double max_scaled_chi_cdf(double x, const std::vector<int>& sizes)
{
    if (x <= 0.0)
        return 0.0;
    double p = 1.0;
    for (int g : sizes)
        p *= boost::math::gamma_p(0.5 * g, 0.5 * g * x * x);
    return p;
}

inline double max_scaled_chi_quantile(double level, const std::vector<int>& sizes)
{
    double lo = 0.0, hi = 1.0;
    while (max_scaled_chi_cdf(hi, sizes) < level)
        hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (max_scaled_chi_cdf(mid, sizes) < level ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

/// Density of the same law, for the quantile standard error.
inline double max_scaled_chi_pdf(double x, const std::vector<int>& sizes)
{
    const double h = 1e-6 * std::max(1.0, x);
    return (max_scaled_chi_cdf(x + h, sizes) - max_scaled_chi_cdf(x - h, sizes)) / (2.0 * h);
}

} // namespace oracle
