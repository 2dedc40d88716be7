#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gdro/group_norm.hpp"
#include "gdro/solvers.hpp"

namespace gdro {

/// Finitely supported measure on (x, y): atom k is (X.row(k), y[k]).
struct DiscreteMeasure {
    Matrix X;
    Vector y;
    Vector weights;

    Index size() const { return X.rows(); }

    void validate() const
    {
        if (X.rows() < 1 || y.size() != X.rows() || weights.size() != X.rows())
            throw std::invalid_argument("measure atoms and weights disagree in size");
        if (!X.allFinite() || !y.allFinite() || !weights.allFinite())
            throw std::invalid_argument("measure has NaN or Inf entries");
        if ((weights.array() < 0.0).any())
            throw std::invalid_argument("measure weights must be nonnegative");
        if (std::abs(weights.sum() - 1.0) > 1e-12)
            throw std::invalid_argument("measure weights must sum to 1");
    }

    /// Empirical measure of a dataset.
    static DiscreteMeasure empirical(const Dataset& data)
    {
        return {data.X, data.y, Vector::Constant(data.n(), 1.0 / static_cast<double>(data.n()))};
    }
};

/// c((x,y),(x',y')) = ||x - x'||^rho in the given norm when y = y', +inf otherwise.
struct CostSpec {
    GroupPartition part;
    NormSpec norm;
    int rho = 2;

    void validate() const
    {
        if (rho != 1 && rho != 2)
            throw std::invalid_argument("cost exponent must be 1 or 2");
        norm.validate(part);
    }

    double operator()(const Vector& x, double y, const Vector& x2, double y2) const
    {
        if (y != y2)
            return std::numeric_limits<double>::infinity();
        const double d = group_norm(x - x2, part, norm);
        return rho == 2 ? d * d : d;
    }
};

/// Transport cost with displacement measured in the dual of the estimator's
/// penalty norm (rho = 2 for linear, 1 for logistic regression).
inline CostSpec dual_penalty_cost(const GroupPartition& part, int rho, const Vector& weights = {})
{
    const NormSpec pen{penalty_weights(part, weights), Exponent::finite(2.0), Exponent::finite(1.0), {}};
    return {part, dual_spec(pen), rho};
}

struct TransportPlan {
    /// coupling(i, j): mass moved from atom i of P to atom j of Q.
    Matrix coupling;
    double value = 0.0;
    /// True when some mass would have to change its response value.
    bool infinite = false;
    int pivots = 0;
};

namespace detail {

/// Balanced transportation problem min <C, pi> s.t. pi 1 = a, pi' 1 = b,
/// pi >= 0, by the transportation simplex: northwest-corner start (exactly
/// m + n - 1 basic cells, degenerate ones included), dual potentials from
/// the basis tree, and Bland's rule (lowest-index improving cell enters,
/// lowest-index blocking cell leaves) against cycling.
inline Matrix transportation_simplex(const Matrix& C, Vector a, Vector b, int* pivots)
{
    const Index m = C.rows(), n = C.cols();
    Matrix flow = Matrix::Zero(m, n);
    std::vector<std::vector<bool>> basic(static_cast<std::size_t>(m),
                                         std::vector<bool>(static_cast<std::size_t>(n), false));
    {
        Index i = 0, j = 0;
        while (true) {
            const double x = std::min(a[i], b[j]);
            flow(i, j) = x;
            basic[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = true;
            a[i] -= x;
            b[j] -= x;
            if (i == m - 1 && j == n - 1)
                break;
            if (i < m - 1 && (a[i] <= b[j] || j == n - 1))
                ++i;
            else
                ++j;
        }
    }
    const double tol = 1e-12 * std::max(1.0, C.cwiseAbs().maxCoeff());
    int count = 0;
    const int limit = 100000;
    // Nodes 0..m-1 are rows, m..m+n-1 columns.
    std::vector<std::vector<Index>> adj(static_cast<std::size_t>(m + n));
    std::vector<double> pot(static_cast<std::size_t>(m + n));
    std::vector<Index> parent(static_cast<std::size_t>(m + n));
    std::vector<bool> seen(static_cast<std::size_t>(m + n));
    for (; count < limit; ++count) {
        for (auto& v : adj)
            v.clear();
        for (Index i = 0; i < m; ++i)
            for (Index j = 0; j < n; ++j)
                if (basic[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) {
                    adj[static_cast<std::size_t>(i)].push_back(m + j);
                    adj[static_cast<std::size_t>(m + j)].push_back(i);
                }
        // Potentials u_i + v_j = C_ij on basic cells, u_0 = 0; BFS over the tree.
        std::fill(seen.begin(), seen.end(), false);
        std::vector<Index> queue{0};
        seen[0] = true;
        pot[0] = 0.0;
        for (std::size_t h = 0; h < queue.size(); ++h) {
            const Index u = queue[h];
            for (Index v : adj[static_cast<std::size_t>(u)]) {
                if (seen[static_cast<std::size_t>(v)])
                    continue;
                seen[static_cast<std::size_t>(v)] = true;
                const double c = u < m ? C(u, v - m) : C(v, u - m);
                pot[static_cast<std::size_t>(v)] = c - pot[static_cast<std::size_t>(u)];
                queue.push_back(v);
            }
        }
        Index ei = -1, ej = -1;
        for (Index i = 0; i < m && ei < 0; ++i)
            for (Index j = 0; j < n; ++j) {
                if (basic[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)])
                    continue;
                const double rc = C(i, j) - pot[static_cast<std::size_t>(i)] -
                                  pot[static_cast<std::size_t>(m + j)];
                if (rc < -tol) {
                    ei = i;
                    ej = j;
                    break;
                }
            }
        if (ei < 0)
            break;
        // Tree path from column node of ej back to row node ei.
        std::fill(seen.begin(), seen.end(), false);
        queue.assign(1, m + ej);
        seen[static_cast<std::size_t>(m + ej)] = true;
        parent[static_cast<std::size_t>(m + ej)] = -1;
        for (std::size_t h = 0; h < queue.size() && !seen[static_cast<std::size_t>(ei)]; ++h) {
            const Index u = queue[h];
            for (Index v : adj[static_cast<std::size_t>(u)])
                if (!seen[static_cast<std::size_t>(v)]) {
                    seen[static_cast<std::size_t>(v)] = true;
                    parent[static_cast<std::size_t>(v)] = u;
                    queue.push_back(v);
                }
        }
        // Cycle cells: entering (+), then alternating along the path from ei.
        std::vector<std::pair<Index, Index>> minus, plus;
        Index node = ei;
        bool sign_minus = true;
        while (parent[static_cast<std::size_t>(node)] != -1) {
            const Index next = parent[static_cast<std::size_t>(node)];
            const auto cell = node < m ? std::make_pair(node, next - m) : std::make_pair(next, node - m);
            (sign_minus ? minus : plus).push_back(cell);
            sign_minus = !sign_minus;
            node = next;
        }
        double theta = std::numeric_limits<double>::infinity();
        std::pair<Index, Index> leave{-1, -1};
        for (const auto& c : minus) {
            const double f = flow(c.first, c.second);
            if (f < theta ||
                (f == theta && c.first * n + c.second < leave.first * n + leave.second)) {
                theta = f;
                leave = c;
            }
        }
        flow(ei, ej) += theta;
        for (const auto& c : plus)
            flow(c.first, c.second) += theta;
        for (const auto& c : minus)
            flow(c.first, c.second) = std::max(0.0, flow(c.first, c.second) - theta);
        flow(leave.first, leave.second) = 0.0;
        basic[static_cast<std::size_t>(leave.first)][static_cast<std::size_t>(leave.second)] = false;
        basic[static_cast<std::size_t>(ei)][static_cast<std::size_t>(ej)] = true;
    }
    if (count >= limit)
        throw std::runtime_error("transportation simplex exceeded its pivot limit");
    if (pivots)
        *pivots += count;
    return flow;
}

} // namespace detail

/// Optimal transport discrepancy D_c(P, Q) as an exact linear program. Atoms
/// are split by response value (moving across responses costs +inf); each
/// class is a balanced transportation problem. Unequal class masses make the
/// discrepancy infinite.
inline TransportPlan transport_discrepancy(const DiscreteMeasure& P, const DiscreteMeasure& Q,
                                           const CostSpec& cost)
{
    P.validate();
    Q.validate();
    cost.validate();
    if (P.X.cols() != Q.X.cols() || P.X.cols() != cost.part.dim())
        throw std::invalid_argument("measures and cost disagree in dimension");

    TransportPlan plan;
    plan.coupling = Matrix::Zero(P.size(), Q.size());
    std::map<double, std::pair<std::vector<Index>, std::vector<Index>>> classes;
    for (Index i = 0; i < P.size(); ++i)
        classes[P.y[i]].first.push_back(i);
    for (Index j = 0; j < Q.size(); ++j)
        classes[Q.y[j]].second.push_back(j);

    for (const auto& [yval, members] : classes) {
        const auto& rows = members.first;
        const auto& cols = members.second;
        double ma = 0.0, mb = 0.0;
        for (Index i : rows)
            ma += P.weights[i];
        for (Index j : cols)
            mb += Q.weights[j];
        if (std::abs(ma - mb) > 1e-12) {
            plan.infinite = true;
            plan.value = std::numeric_limits<double>::infinity();
            return plan;
        }
        if (rows.empty() || cols.empty())
            continue;
        const auto m = static_cast<Index>(rows.size()), n = static_cast<Index>(cols.size());
        Matrix C(m, n);
        Vector a(m), b(n);
        for (Index r = 0; r < m; ++r) {
            a[r] = P.weights[rows[static_cast<std::size_t>(r)]];
            for (Index c = 0; c < n; ++c)
                C(r, c) = cost(P.X.row(rows[static_cast<std::size_t>(r)]).transpose(), yval,
                               Q.X.row(cols[static_cast<std::size_t>(c)]).transpose(), yval);
        }
        for (Index c = 0; c < n; ++c)
            b[c] = Q.weights[cols[static_cast<std::size_t>(c)]];
        // Absorb the rounding difference between the two class masses.
        b[n - 1] += a.sum() - b.sum();
        const Matrix flow = detail::transportation_simplex(C, a, b, &plan.pivots);
        for (Index r = 0; r < m; ++r)
            for (Index c = 0; c < n; ++c) {
                plan.coupling(rows[static_cast<std::size_t>(r)], cols[static_cast<std::size_t>(c)]) = flow(r, c);
                plan.value += flow(r, c) * C(r, c);
            }
    }
    return plan;
}

} // namespace gdro
