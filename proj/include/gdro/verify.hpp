#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "gdro/data.hpp"
#include "gdro/dro_adversary.hpp"
#include "gdro/group_norm.hpp"
#include "gdro/rng.hpp"
#include "gdro/rwpi.hpp"
#include "gdro/solvers.hpp"

namespace gdro {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

namespace detail {

class Stopwatch {
public:
    double seconds() const
    {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

} // namespace detail

/// Random instance: n in [10, 50], 2 to 4 groups of size 1 to 3 (d <= 10),
/// Gaussian X and beta, noisy response (signs for logistic).
inline std::pair<Dataset, Vector> random_instance(std::uint64_t seed, Task task)
{
    CounterRng rng(seed, 31);
    const Index n = 10 + static_cast<Index>(rng.below(41));
    const int groups = 2 + static_cast<int>(rng.below(3));
    std::vector<Index> sizes;
    for (int g = 0; g < groups; ++g)
        sizes.push_back(1 + static_cast<Index>(rng.below(3)));
    const GroupPartition part = GroupPartition::contiguous(sizes);
    const Index d = part.dim();
    Matrix X(n, d);
    for (Index i = 0; i < n; ++i)
        for (Index k = 0; k < d; ++k)
            X(i, k) = rng.normal();
    Vector truth(d), beta(d);
    for (Index k = 0; k < d; ++k) {
        truth[k] = rng.normal();
        beta[k] = truth[k] + 0.3 * rng.normal();
    }
    Vector y = X * truth;
    for (Index i = 0; i < n; ++i) {
        y[i] += rng.normal();
        if (task == Task::logistic)
            y[i] = y[i] > 0.0 ? 1.0 : -1.0;
    }
    return {Dataset{std::move(X), std::move(y), part, task, false}, beta};
}

/// Linear duality: the primal adversary reaches the closed-form worst case
/// within rel_tol and never exceeds it by more than 1e-6. delta_scale != 1
/// compares against the closed form at a different budget (negative control).
inline CheckResult check_linear_duality(int instances, std::uint64_t seed, double rel_tol = 1e-3,
                                        double delta_scale = 1.0)
{
    detail::Stopwatch sw;
    CheckResult res{"linear duality (worst case = (sqrt(MSE) + sqrt(delta)||b||)^2)", true, {}, 0};
    double worst_gap = 0.0, worst_excess = -1e300;
    int bad = 0;
    for (int k = 0; k < instances; ++k) {
        const auto [data, beta] = random_instance(seed + static_cast<std::uint64_t>(k), Task::linear);
        const NormSpec spec = penalty_spec(data.part);
        for (double delta : {0.01, 0.1, 1.0}) {
            const double closed = worst_case_linear(data, beta, delta * delta_scale, spec);
            const double adv = adversary_lower_bound(data, beta, delta, dual_penalty_cost(data.part, 2),
                                                     2000, seed + static_cast<std::uint64_t>(k))
                                   .value;
            const double gap = std::abs(closed - adv) / closed;
            worst_gap = std::max(worst_gap, gap);
            worst_excess = std::max(worst_excess, adv - closed);
            if (gap > rel_tol || adv > closed + 1e-6)
                ++bad;
        }
    }
    res.passed = bad == 0;
    res.detail = detail::fmt("%.0f bad of ", bad) + std::to_string(3 * instances) +
                 detail::fmt("; max rel gap %.3g; max excess %.3g", worst_gap, worst_excess);
    res.seconds = sw.seconds();
    return res;
}

/// Logistic weak duality: adversary <= closed form + 1e-6 everywhere, and
/// relative gap <= gap_tol at delta = 0.01.
inline CheckResult check_logistic_duality(int instances, std::uint64_t seed, double gap_tol = 5e-2,
                                          double delta_scale = 1.0)
{
    detail::Stopwatch sw;
    CheckResult res{"logistic weak duality (adversary <= loss + delta||b||)", true, {}, 0};
    double worst_gap = 0.0, worst_excess = -1e300;
    int bad = 0;
    for (int k = 0; k < instances; ++k) {
        const auto [data, beta] = random_instance(seed + static_cast<std::uint64_t>(k), Task::logistic);
        const NormSpec spec = penalty_spec(data.part);
        for (double delta : {0.01, 0.1, 1.0}) {
            const double closed = worst_case_logistic(data, beta, delta * delta_scale, spec);
            const CostSpec cost = dual_penalty_cost(data.part, 1);
            // Best of the per-sample displacement adversary and atom splitting.
            const double adv = std::max(
                adversary_lower_bound(data, beta, delta, cost, 500, seed + static_cast<std::uint64_t>(k))
                    .value,
                split_lower_bound(data, beta, delta, cost).value);
            worst_excess = std::max(worst_excess, adv - closed);
            bool ok = adv <= closed + 1e-6;
            if (delta == 0.01) {
                const double gap = std::abs(closed - adv) / closed;
                worst_gap = std::max(worst_gap, gap);
                ok = ok && gap <= gap_tol;
            }
            if (!ok)
                ++bad;
        }
    }
    res.passed = bad == 0;
    res.detail = detail::fmt("%.0f bad of ", bad) + std::to_string(3 * instances) +
                 detail::fmt("; max rel gap at delta=0.01 %.3g; max excess %.3g", worst_gap,
                             worst_excess);
    res.seconds = sw.seconds();
    return res;
}

/// Random (x, b, spec) triples: Hölder inequality, witness equality,
/// triangle inequality with equality on colinear pairs, dual-of-dual round trip.
inline CheckResult check_norm_duality(int triples, std::uint64_t seed)
{
    detail::Stopwatch sw;
    CheckResult res{"group norm duality (Hölder, witness, triangle, dual of dual)", true, {}, 0};
    CounterRng rng(seed, 41);
    const double exps[] = {1.0, 1.5, 2.0, 3.0, std::numeric_limits<double>::infinity()};
    double holder = 0.0, witness = 0.0, colinear = 0.0, roundtrip = 0.0;
    int bad = 0;
    for (int k = 0; k < triples; ++k) {
        const int groups = 1 + static_cast<int>(rng.below(4));
        std::vector<Index> sizes;
        for (int g = 0; g < groups; ++g)
            sizes.push_back(1 + static_cast<Index>(rng.below(4)));
        const GroupPartition part = GroupPartition::contiguous(sizes);
        const Index d = part.dim();
        Vector alpha(groups);
        for (int g = 0; g < groups; ++g)
            alpha[g] = 0.2 + 3.0 * rng.uniform();
        const NormSpec spec{alpha, Exponent::of(exps[rng.below(5)]), Exponent::of(exps[rng.below(5)]), {}};
        const NormSpec dual = dual_spec(spec);
        Vector x(d), b(d);
        for (Index i = 0; i < d; ++i) {
            x[i] = rng.normal();
            b[i] = rng.normal();
        }
        const double nx = group_norm(x, part, spec), nb = group_norm(b, part, dual);
        const double slack = std::abs(x.dot(b)) - nx * nb;
        holder = std::max(holder, slack / (nx * nb));
        const Vector w = dual_witness(b, part, spec);
        const double werr = std::max(std::abs(group_norm(w, part, spec) - 1.0),
                                     std::abs(w.dot(b) - nb) / nb);
        witness = std::max(witness, werr);
        const double c = 0.1 + 5.0 * rng.uniform();
        const double tri = group_norm(x + c * x, part, spec) - (1.0 + c) * nx;
        colinear = std::max(colinear, std::abs(tri) / ((1.0 + c) * nx));
        const bool tri_ok = group_norm(x + b, part, spec) <=
                            (nx + group_norm(b, part, spec)) * (1.0 + 1e-12);
        const NormSpec back = dual_spec(dual);
        const double rt = std::abs(group_norm(x, part, back) - nx) / nx;
        roundtrip = std::max(roundtrip, rt);
        if (slack > 1e-12 * nx * nb || werr > 1e-9 || std::abs(tri) > 1e-12 * (1.0 + c) * nx ||
            !tri_ok || rt > 1e-9)
            ++bad;
    }
    res.passed = bad == 0;
    res.detail = std::to_string(bad) + " bad of " + std::to_string(triples) +
                 detail::fmt("; Hölder excess %.2g; witness err %.2g; ", holder, witness) +
                 detail::fmt("colinear err %.2g; round trip %.2g", colinear, roundtrip);
    res.seconds = sw.seconds();
    return res;
}

/// Limit-law dominance: empirical 0.5 / 0.9 / 0.95 quantiles of L1 stay below
/// those of L2 plus 2 combined MC standard errors, on a simulated design.
inline CheckResult check_limit_law_dominance(Index draws, std::uint64_t seed, Index samples = 400)
{
    detail::Stopwatch sw;
    CheckResult res{"limit-law dominance (L1 quantiles <= L2 quantiles)", true, {}, 0};
    SimulationConfig cfg;
    cfg.n = samples;
    cfg.seed = seed;
    cfg.n_covariates = 5;
    cfg.degree = 2;
    cfg.active_groups = {2, 4};
    const Simulation sim = simulate(cfg);
    const Vector e = sim.data.y - sim.data.X * sim.beta_star;
    const NormSpec spec = penalty_spec(sim.data.part);
    const auto l1 = sample_L1(sim.beta_star, e, sim.data.X, sim.data.part, spec, draws, seed);
    const auto l2 = sample_L2(e, sim.data.X, sim.data.part, spec, draws, seed);
    std::string detail;
    for (double level : {0.5, 0.9, 0.95}) {
        const double q1 = quantile(l1.draws, level), q2 = quantile(l2.draws, level);
        const double se = std::hypot(quantile_mc_error(l1.draws, level),
                                     quantile_mc_error(l2.draws, level));
        if (q1 > q2 + 2.0 * se)
            res.passed = false;
        detail += detail::fmt("q%.2f: L1 %.4g L2 %.4g; ", level, q1, q2);
    }
    res.detail = detail + "L1 solve failures " + std::to_string(l1.failures);
    res.seconds = sw.seconds();
    return res;
}

/// The verify-duality suite. quick trims instance counts to fit in seconds;
/// delta_scale != 1 is the mismatch negative control and must fail.
inline std::vector<CheckResult> run_verification(std::uint64_t seed, bool quick,
                                                 double delta_scale = 1.0)
{
    std::vector<CheckResult> out;
    out.push_back(check_norm_duality(quick ? 200 : 1000, seed));
    out.push_back(check_linear_duality(quick ? 5 : 50, seed, 1e-3, delta_scale));
    out.push_back(check_logistic_duality(quick ? 5 : 50, seed, 5e-2, delta_scale));
    if (!quick)
        out.push_back(check_limit_law_dominance(2000, seed));
    return out;
}

} // namespace gdro
