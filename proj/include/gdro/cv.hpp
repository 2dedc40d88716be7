#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "gdro/rng.hpp"
#include "gdro/solvers.hpp"

namespace gdro {

struct CvResult {
    /// Strictly decreasing.
    std::vector<double> grid;
    /// fold_losses(f, g): held-out loss of fold f at grid[g]; NaN rows for
    /// skipped folds, +inf where the fit degenerated.
    Matrix fold_losses;
    /// Mean over the folds that were not skipped.
    Vector mean_loss;
    /// Standard error of mean_loss across folds.
    Vector se_loss;
    double best_lambda = 0.0;
    double one_se_lambda = 0.0;
    int k = 0;
    int k_effective = 0;
    /// fold[i] is the held-out fold of row i.
    std::vector<int> fold;
    std::vector<std::string> warnings;
};

inline Model default_model(Task task)
{
    return task == Task::linear ? Model::gsrl_linear : Model::grlasso_logistic;
}

/// Log-spaced grid from lambda_max down to lambda_max * ratio.
inline std::vector<double> default_grid(const Dataset& data, Model model, int length = 50,
                                        double ratio = 1e-3, const Vector& weights = {})
{
    if (length < 1)
        throw std::invalid_argument("grid length must be at least 1");
    if (!(ratio > 0.0 && ratio < 1.0))
        throw std::invalid_argument("grid ratio must lie in (0, 1)");
    const double top = lambda_max(data, model, weights);
    if (!(top > 0.0))
        throw DegenerateError("lambda_max is zero: the response carries no signal");
    std::vector<double> grid(static_cast<std::size_t>(length));
    for (int g = 0; g < length; ++g)
        grid[static_cast<std::size_t>(g)] =
            length == 1 ? top : top * std::pow(ratio, static_cast<double>(g) / (length - 1));
    return grid;
}

/// Fold labels 0..k-1 over a seeded permutation; fold sizes differ by at most one.
inline std::vector<int> balanced_folds(Index n, int k, std::uint64_t seed)
{
    CounterRng rng(seed, 21);
    const auto perm = permutation(static_cast<std::size_t>(n), rng);
    std::vector<int> fold(static_cast<std::size_t>(n));
    for (std::size_t pos = 0; pos < perm.size(); ++pos)
        fold[perm[pos]] = static_cast<int>(pos % static_cast<std::size_t>(k));
    return fold;
}

inline ModelFit fit_model(const Dataset& data, Model model, double lambda,
                          const SolverOptions& opts = {})
{
    switch (model) {
    case Model::gsrl_linear:
        return fit_gsrl_linear(data, lambda, opts);
    case Model::group_lasso_linear:
        return fit_group_lasso_linear(data, lambda, opts);
    case Model::grlasso_logistic:
        return fit_grlasso_logistic(data, lambda, opts);
    }
    throw std::invalid_argument("unknown model");
}

/// k-fold cross-validation over a strictly decreasing grid with warm starts
/// along the grid. Held-out loss is squared error (linear) or log loss
/// (logistic). best_lambda minimizes the mean loss; ties go to the larger
/// lambda. A fold whose training part has a single class (logistic) is
/// skipped. A linear fit that interpolates its training part scores +inf.
inline CvResult cross_validate(const Dataset& data, Model model, int k,
                               const std::vector<double>& grid, std::uint64_t seed,
                               const SolverOptions& opts = {})
{
    data.validate();
    if (k < 2)
        throw std::invalid_argument("cross-validation needs k >= 2");
    if (data.n() < k)
        throw std::invalid_argument("cross-validation needs n >= k");
    if (grid.empty())
        throw std::invalid_argument("empty lambda grid");
    for (std::size_t g = 0; g < grid.size(); ++g) {
        if (!(grid[g] >= 0.0) || !std::isfinite(grid[g]))
            throw std::invalid_argument("grid entries must be finite and nonnegative");
        if (g > 0 && !(grid[g] < grid[g - 1]))
            throw std::invalid_argument("lambda grid must be strictly decreasing");
    }
    if ((model == Model::grlasso_logistic) != (data.task == Task::logistic))
        throw std::invalid_argument("model does not match the dataset task");

    CvResult res;
    res.grid = grid;
    res.k = k;
    res.fold = balanced_folds(data.n(), k, seed);
    const auto L = static_cast<Index>(grid.size());
    const double nan = std::numeric_limits<double>::quiet_NaN();
    res.fold_losses = Matrix::Constant(k, L, nan);

    for (int f = 0; f < k; ++f) {
        std::vector<Index> train_rows, test_rows;
        for (Index i = 0; i < data.n(); ++i)
            (res.fold[static_cast<std::size_t>(i)] == f ? test_rows : train_rows).push_back(i);
        const Dataset train = data.subset(train_rows);
        const Dataset test = data.subset(test_rows);
        if (data.task == Task::logistic) {
            const auto pos = (train.y.array() > 0.0).count();
            if (pos == 0 || pos == train.n()) {
                res.warnings.push_back("fold " + std::to_string(f + 1) +
                                       " skipped: training part has a single class");
                continue;
            }
        }
        SolverOptions o = opts;
        o.warm_start.reset();
        bool degenerate = false;
        for (Index g = 0; g < L; ++g) {
            if (degenerate) {
                res.fold_losses(f, g) = std::numeric_limits<double>::infinity();
                continue;
            }
            try {
                const ModelFit fit = fit_model(train, model, grid[static_cast<std::size_t>(g)], o);
                res.fold_losses(f, g) = task_loss(test, fit.beta, fit.intercept);
                o.warm_start = fit.beta;
                o.warm_intercept = fit.intercept;
            } catch (const DegenerateError&) {
                degenerate = true;
                res.fold_losses(f, g) = std::numeric_limits<double>::infinity();
                res.warnings.push_back("fold " + std::to_string(f + 1) +
                                       ": fit interpolates the training part from lambda = " +
                                       std::to_string(grid[static_cast<std::size_t>(g)]));
            }
        }
        ++res.k_effective;
    }
    if (res.k_effective == 0)
        throw DegenerateError("every cross-validation fold was skipped");

    res.mean_loss = Vector::Zero(L);
    res.se_loss = Vector::Zero(L);
    for (Index g = 0; g < L; ++g) {
        double sum = 0.0;
        for (int f = 0; f < k; ++f)
            if (!std::isnan(res.fold_losses(f, g)))
                sum += res.fold_losses(f, g);
        const double mean = sum / res.k_effective;
        double ss = 0.0;
        for (int f = 0; f < k; ++f)
            if (!std::isnan(res.fold_losses(f, g)))
                ss += (res.fold_losses(f, g) - mean) * (res.fold_losses(f, g) - mean);
        res.mean_loss[g] = mean;
        res.se_loss[g] = res.k_effective > 1 && std::isfinite(mean)
                             ? std::sqrt(ss / (res.k_effective - 1) / res.k_effective)
                             : 0.0;
    }
    Index best = 0;
    for (Index g = 1; g < L; ++g)
        if (res.mean_loss[g] < res.mean_loss[best])
            best = g;
    res.best_lambda = grid[static_cast<std::size_t>(best)];
    const double cap = res.mean_loss[best] + res.se_loss[best];
    Index one_se = best;
    for (Index g = 0; g < best; ++g)
        if (res.mean_loss[g] <= cap) {
            one_se = g;
            break;
        }
    res.one_se_lambda = grid[static_cast<std::size_t>(one_se)];
    return res;
}

} // namespace gdro
