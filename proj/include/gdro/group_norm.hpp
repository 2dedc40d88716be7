#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace gdro {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Norm exponent in [1, inf]. Infinity is a tag, never a floating-point inf,
/// so ratios such as q/p stay well defined. The Hölder conjugate is stored
/// alongside, which makes conjugation an exact involution.
class Exponent {
public:
    constexpr Exponent() = default;

    static Exponent finite(double value)
    {
        if (!(value >= 1.0) || !std::isfinite(value))
            throw std::invalid_argument("exponent must be a finite value >= 1, got " +
                                        std::to_string(value));
        Exponent e;
        e.value_ = value;
        e.infinite_ = false;
        if (value == 1.0) {
            e.conj_infinite_ = true;
            e.conj_ = 0.0;
        } else {
            e.conj_infinite_ = false;
            e.conj_ = value == 2.0 ? 2.0 : value / (value - 1.0);
        }
        return e;
    }

    static constexpr Exponent infinity()
    {
        Exponent e;
        e.infinite_ = true;
        e.value_ = 0.0;
        e.conj_infinite_ = false;
        e.conj_ = 1.0;
        return e;
    }

    /// Accepts +inf as the infinite exponent.
    static Exponent of(double value)
    {
        if (value == std::numeric_limits<double>::infinity())
            return infinity();
        return finite(value);
    }

    constexpr bool is_infinite() const { return infinite_; }
    constexpr bool is_one() const { return !infinite_ && value_ == 1.0; }

    /// Interior exponents (strictly between 1 and infinity).
    constexpr bool is_interior() const { return !infinite_ && value_ > 1.0; }

    double value() const { return infinite_ ? std::numeric_limits<double>::infinity() : value_; }

    constexpr Exponent swapped() const
    {
        Exponent e;
        e.value_ = conj_;
        e.infinite_ = conj_infinite_;
        e.conj_ = value_;
        e.conj_infinite_ = infinite_;
        return e;
    }

    /// Compares the exponent value only.
    friend constexpr bool operator==(const Exponent& a, const Exponent& b)
    {
        return a.infinite_ == b.infinite_ && (a.infinite_ || a.value_ == b.value_);
    }

    std::string to_string() const { return infinite_ ? "inf" : std::to_string(value_); }

private:
    double value_ = 2.0;
    bool infinite_ = false;
    double conj_ = 2.0;
    bool conj_infinite_ = false;
};

/// Hölder conjugate: 1/e + 1/conjugate(e) = 1, with 1 <-> inf.
inline Exponent conjugate(Exponent e) { return e.swapped(); }

/// A disjoint cover of {0..d-1} by nonempty groups.
class GroupPartition {
public:
    GroupPartition() = default;

    GroupPartition(Index dim, std::vector<std::vector<Index>> groups)
        : dim_(dim), groups_(std::move(groups)), owner_(static_cast<std::size_t>(dim), -1)
    {
        if (dim < 1)
            throw std::invalid_argument("partition dimension must be positive");
        if (groups_.empty())
            throw std::invalid_argument("partition needs at least one group");
        for (std::size_t j = 0; j < groups_.size(); ++j) {
            if (groups_[j].empty())
                throw std::invalid_argument("group " + std::to_string(j) + " is empty");
            for (Index i : groups_[j]) {
                if (i < 0 || i >= dim)
                    throw std::invalid_argument("index " + std::to_string(i) +
                                                " outside [0, " + std::to_string(dim) + ")");
                auto& slot = owner_[static_cast<std::size_t>(i)];
                if (slot != -1)
                    throw std::invalid_argument("index " + std::to_string(i) +
                                                " appears in more than one group");
                slot = static_cast<Index>(j);
            }
        }
        for (Index i = 0; i < dim; ++i)
            if (owner_[static_cast<std::size_t>(i)] == -1)
                throw std::invalid_argument("index " + std::to_string(i) + " is not covered");
    }

    /// Consecutive blocks with the given sizes.
    static GroupPartition contiguous(const std::vector<Index>& sizes)
    {
        std::vector<std::vector<Index>> groups;
        Index next = 0;
        for (Index g : sizes) {
            if (g < 1)
                throw std::invalid_argument("group sizes must be positive");
            std::vector<Index> grp(static_cast<std::size_t>(g));
            std::iota(grp.begin(), grp.end(), next);
            next += g;
            groups.push_back(std::move(grp));
        }
        return GroupPartition(next, std::move(groups));
    }

    static GroupPartition singletons(Index dim)
    {
        return contiguous(std::vector<Index>(static_cast<std::size_t>(dim), 1));
    }

    Index dim() const { return dim_; }
    Index num_groups() const { return static_cast<Index>(groups_.size()); }
    std::span<const Index> group(Index j) const { return groups_[static_cast<std::size_t>(j)]; }
    Index group_size(Index j) const { return static_cast<Index>(groups_[static_cast<std::size_t>(j)].size()); }
    Index group_of(Index i) const { return owner_[static_cast<std::size_t>(i)]; }
    const std::vector<std::vector<Index>>& groups() const { return groups_; }

    Vector gather(const Vector& x, Index j) const
    {
        auto idx = group(j);
        Vector out(static_cast<Index>(idx.size()));
        for (std::size_t k = 0; k < idx.size(); ++k)
            out[static_cast<Index>(k)] = x[idx[k]];
        return out;
    }

    void scatter(const Vector& block, Index j, Vector& x) const
    {
        auto idx = group(j);
        for (std::size_t k = 0; k < idx.size(); ++k)
            x[idx[k]] = block[static_cast<Index>(k)];
    }

    friend bool operator==(const GroupPartition& a, const GroupPartition& b)
    {
        return a.dim_ == b.dim_ && a.groups_ == b.groups_;
    }

private:
    Index dim_ = 0;
    std::vector<std::vector<Index>> groups_;
    std::vector<Index> owner_;
};

/// Weights and exponents of an alpha-(p,s) norm.
struct NormSpec {
    Vector alpha;
    Exponent p;
    Exponent s;
    /// Weights of the spec this one is the dual of, if any; lets dual_spec
    /// return the original weights bit for bit instead of 1/(1/alpha).
    Vector dual_alpha;

    void validate(const GroupPartition& part) const
    {
        if (alpha.size() != part.num_groups())
            throw std::invalid_argument("norm spec has " + std::to_string(alpha.size()) +
                                        " weights for " + std::to_string(part.num_groups()) +
                                        " groups");
        for (Index j = 0; j < alpha.size(); ++j)
            if (!(alpha[j] > 0.0) || !std::isfinite(alpha[j]))
                throw std::invalid_argument("norm weights must be positive and finite");
    }

    friend bool operator==(const NormSpec& a, const NormSpec& b)
    {
        return a.p == b.p && a.s == b.s && a.alpha.size() == b.alpha.size() &&
               a.alpha == b.alpha;
    }
};

/// sqrt(g)-(2,1): the group square-root lasso / group lasso penalty.
inline NormSpec penalty_spec(const GroupPartition& part)
{
    Vector alpha(part.num_groups());
    for (Index j = 0; j < part.num_groups(); ++j)
        alpha[j] = std::sqrt(static_cast<double>(part.group_size(j)));
    return {alpha, Exponent::finite(2.0), Exponent::finite(1.0), {}};
}

namespace detail {

/// Ordinary l_p norm, scaled by the max entry to avoid overflow.
template <class Derived>
double lp_norm(const Eigen::MatrixBase<Derived>& v, Exponent p)
{
    if (v.size() == 0)
        return 0.0;
    const double m = v.cwiseAbs().maxCoeff();
    if (p.is_infinite() || m == 0.0)
        return m;
    if (p.is_one())
        return v.cwiseAbs().sum();
    const double e = p.value();
    if (e == 2.0)
        return m * (v / m).norm();
    double acc = 0.0;
    for (Index i = 0; i < v.size(); ++i)
        acc += std::pow(std::abs(v[i]) / m, e);
    return m * std::pow(acc, 1.0 / e);
}

inline double sign(double x) { return (x > 0.0) - (x < 0.0); }

/// Unit l_p vector u with u'v = ||v||_q (q conjugate to p). Ties at p = 1
/// resolve to the lowest index. Zero input gives zero output.
inline Vector unit_witness(const Vector& v, Exponent p)
{
    Vector u = Vector::Zero(v.size());
    if (v.size() == 0 || v.cwiseAbs().maxCoeff() == 0.0)
        return u;
    if (p.is_infinite()) {
        for (Index i = 0; i < v.size(); ++i)
            u[i] = sign(v[i]);
        return u;
    }
    if (p.is_one()) {
        Index k = 0;
        double best = std::abs(v[0]);
        for (Index i = 1; i < v.size(); ++i)
            if (std::abs(v[i]) > best) {
                best = std::abs(v[i]);
                k = i;
            }
        u[k] = sign(v[k]);
        return u;
    }
    const Exponent q = conjugate(p);
    const double nq = lp_norm(v, q);
    const double power = q.value() - 1.0;
    for (Index i = 0; i < v.size(); ++i)
        u[i] = sign(v[i]) * std::pow(std::abs(v[i]) / nq, power);
    return u;
}

inline void check_dim(const Vector& x, const GroupPartition& part)
{
    if (x.size() != part.dim())
        throw std::invalid_argument("vector of length " + std::to_string(x.size()) +
                                    " does not match partition dimension " +
                                    std::to_string(part.dim()));
}

} // namespace detail

/// Per-group weighted inner norms alpha_j * ||x(G_j)||_p.
inline Vector group_norms(const Vector& x, const GroupPartition& part, const NormSpec& spec)
{
    detail::check_dim(x, part);
    spec.validate(part);
    Vector out(part.num_groups());
    for (Index j = 0; j < part.num_groups(); ++j)
        out[j] = spec.alpha[j] * detail::lp_norm(part.gather(x, j), spec.p);
    return out;
}

/// (sum_j alpha_j^s ||x(G_j)||_p^s)^(1/s), max over groups when s = inf.
inline double group_norm(const Vector& x, const GroupPartition& part, const NormSpec& spec)
{
    return detail::lp_norm(group_norms(x, part, spec), spec.s);
}

/// Weights inverted, exponents conjugated. An involution.
inline NormSpec dual_spec(const NormSpec& spec)
{
    Vector alpha = spec.dual_alpha.size() == spec.alpha.size() ? spec.dual_alpha
                                                               : Vector(spec.alpha.cwiseInverse());
    return {std::move(alpha), conjugate(spec.p), conjugate(spec.s), spec.alpha};
}

/// Returns a with group_norm(a, spec) = 1 and a'b = group_norm(b, dual_spec(spec)).
///
/// For interior exponents this is the explicit power formula
///   a(G_j)_i = sign(b_i)/alpha_j * |c_i|^(q/p) / (||c_j||_q^(q/p - t/s) ||b||_*^(t/s)),
/// with c_j = b(G_j)/alpha_j, evaluated in normalised form. When p or s sits on
/// the boundary {1, inf} the witness is assembled group by group from the
/// sign/argmax maximisers (lowest index wins ties). Groups where b vanishes
/// get zero entries.
inline Vector dual_witness(const Vector& b, const GroupPartition& part, const NormSpec& spec)
{
    detail::check_dim(b, part);
    spec.validate(part);
    if (b.cwiseAbs().maxCoeff() == 0.0)
        throw std::invalid_argument("dual witness undefined for the zero vector");

    const Exponent q = conjugate(spec.p);
    const Exponent t = conjugate(spec.s);
    const Index ng = part.num_groups();

    Vector cnorm(ng);
    std::vector<Vector> scaled(static_cast<std::size_t>(ng));
    for (Index j = 0; j < ng; ++j) {
        scaled[static_cast<std::size_t>(j)] = part.gather(b, j) / spec.alpha[j];
        cnorm[j] = detail::lp_norm(scaled[static_cast<std::size_t>(j)], q);
    }

    Vector a = Vector::Zero(b.size());
    if (spec.p.is_interior() && spec.s.is_interior()) {
        const double dual = detail::lp_norm(cnorm, t);
        const double q_over_p = q.value() - 1.0;
        const double t_over_s = t.value() - 1.0;
        for (Index j = 0; j < ng; ++j) {
            if (cnorm[j] == 0.0)
                continue;
            const Vector& c = scaled[static_cast<std::size_t>(j)];
            const double outer = std::pow(cnorm[j] / dual, t_over_s);
            Vector block(c.size());
            for (Index i = 0; i < c.size(); ++i)
                block[i] = detail::sign(c[i]) * std::pow(std::abs(c[i]) / cnorm[j], q_over_p) *
                           outer / spec.alpha[j];
            part.scatter(block, j, a);
        }
        return a;
    }

    const Vector radii = detail::unit_witness(cnorm, spec.s);
    for (Index j = 0; j < ng; ++j) {
        if (radii[j] == 0.0)
            continue;
        const Vector u = detail::unit_witness(scaled[static_cast<std::size_t>(j)], spec.p);
        part.scatter(u * (radii[j] / spec.alpha[j]), j, a);
    }
    return a;
}

} // namespace gdro
