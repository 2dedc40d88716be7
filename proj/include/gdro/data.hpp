#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "gdro/group_norm.hpp"
#include "gdro/rng.hpp"
#include "gdro/solvers.hpp"

namespace gdro {

/// Malformed or inconsistent input files.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class BetaLaw { normal, uniform };

/// Law of the active coefficients: N(0, scale^2) or U(-scale, scale).
struct BetaDraw {
    BetaLaw law = BetaLaw::normal;
    double scale = 1.0;
};

/// Polynomial group design: covariates (Z_i + W)/sqrt(2) with Z_i, W iid
/// standard normal, each expanded to its powers 1..degree.
struct SimulationConfig {
    Index n = 100;
    std::uint64_t seed = 0;
    Task task = Task::linear;
    Index n_covariates = 16;
    Index degree = 3;
    /// 1-based covariate indices carrying signal.
    std::vector<Index> active_groups{3, 5};
    BetaDraw beta_draw;
    double noise_sd = 1.0;

    void validate() const
    {
        if (n < 1 || degree < 1 || n_covariates < 1)
            throw std::invalid_argument("simulation needs n, degree and n_covariates >= 1");
        for (Index g : active_groups)
            if (g < 1 || g > n_covariates)
                throw std::invalid_argument("active group " + std::to_string(g) + " outside 1.." +
                                            std::to_string(n_covariates));
        if (!(noise_sd >= 0.0) || !(beta_draw.scale >= 0.0))
            throw std::invalid_argument("noise_sd and beta scale must be nonnegative");
    }
};

struct Simulation {
    Dataset data;
    Vector beta_star;
};

/// Contiguous groups of size `degree`, one per source column.
inline GroupPartition polynomial_partition(Index columns, Index degree)
{
    return GroupPartition::contiguous(std::vector<Index>(static_cast<std::size_t>(columns), degree));
}

/// Column j of raw becomes (x_j, x_j^2, ..., x_j^degree), grouped per column.
inline std::pair<Matrix, GroupPartition> polynomial_group_expand(const Matrix& raw, Index degree)
{
    if (degree < 1)
        throw std::invalid_argument("degree must be at least 1");
    if (raw.cols() < 1)
        throw std::invalid_argument("nothing to expand");
    Matrix out(raw.rows(), raw.cols() * degree);
    for (Index j = 0; j < raw.cols(); ++j) {
        Vector power = raw.col(j);
        for (Index k = 0; k < degree; ++k) {
            out.col(j * degree + k) = power;
            if (k + 1 < degree)
                power = power.cwiseProduct(raw.col(j));
        }
    }
    return {out, polynomial_partition(raw.cols(), degree)};
}

/// Coefficients on stream 0 of the config seed; zero outside active groups.
inline Vector draw_coefficients(const SimulationConfig& cfg)
{
    cfg.validate();
    CounterRng rng(cfg.seed, 0);
    Vector beta = Vector::Zero(cfg.n_covariates * cfg.degree);
    std::vector<Index> active = cfg.active_groups;
    std::sort(active.begin(), active.end());
    active.erase(std::unique(active.begin(), active.end()), active.end());
    for (Index g : active)
        for (Index k = 0; k < cfg.degree; ++k) {
            const double v = cfg.beta_draw.law == BetaLaw::normal
                                 ? rng.normal()
                                 : 2.0 * rng.uniform() - 1.0;
            beta[(g - 1) * cfg.degree + k] = cfg.beta_draw.scale * v;
        }
    return beta;
}

/// n rows of the design with the given coefficients, drawn from stream
/// `stream` of the config seed.
inline Dataset simulate_design(const SimulationConfig& cfg, const Vector& beta_star, Index n,
                               std::uint64_t stream)
{
    cfg.validate();
    const Index m = cfg.n_covariates;
    if (beta_star.size() != m * cfg.degree)
        throw std::invalid_argument("coefficient vector does not match the design");
    CounterRng rng(cfg.seed, stream);
    Matrix raw(n, m);
    Vector z(m);
    for (Index i = 0; i < n; ++i) {
        for (Index k = 0; k < m; ++k)
            z[k] = rng.normal();
        const double w = rng.normal();
        for (Index k = 0; k < m; ++k)
            raw(i, k) = (z[k] + w) / std::sqrt(2.0);
    }
    auto [X, part] = polynomial_group_expand(raw, cfg.degree);
    const Vector eta = X * beta_star;
    Vector y(n);
    for (Index i = 0; i < n; ++i) {
        if (cfg.task == Task::linear)
            y[i] = eta[i] + cfg.noise_sd * rng.normal();
        else
            y[i] = rng.uniform() < logistic(eta[i]) ? 1.0 : -1.0;
    }
    return {std::move(X), std::move(y), std::move(part), cfg.task, false};
}

/// Training sample of size cfg.n (stream 1) with freshly drawn coefficients.
inline Simulation simulate(const SimulationConfig& cfg)
{
    Vector beta = draw_coefficients(cfg);
    Dataset data = simulate_design(cfg, beta, cfg.n, 1);
    return {std::move(data), std::move(beta)};
}

// ---------------------------------------------------------------------------
// CSV and partition files

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no)
{
    std::vector<std::string> cells;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            cells.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (quoted)
        throw InputError("line " + std::to_string(line_no) + ": unterminated quote");
    cells.push_back(cur);
    for (auto& s : cells) {
        const auto b = s.find_first_not_of(" \t");
        const auto e = s.find_last_not_of(" \t");
        s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    }
    return cells;
}

/// Strict locale-free decimal parse of the whole cell.
inline std::optional<double> parse_double(const std::string& s)
{
    if (s.empty())
        return std::nullopt;
    double v = 0.0;
    const char* first = s.data();
    if (*first == '+')
        ++first;
    const auto res = std::from_chars(first, s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v))
        return std::nullopt;
    return v;
}

inline std::vector<std::vector<std::string>> read_csv_rows(const std::string& path,
                                                           std::vector<std::string>& header)
{
    std::ifstream in(path);
    if (!in)
        throw InputError("cannot open '" + path + "'");
    std::string line;
    std::vector<std::vector<std::string>> rows;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0)
            line.erase(0, 3);
        if (line.empty())
            continue;
        auto cells = split_csv_line(line, line_no);
        if (header.empty()) {
            header = std::move(cells);
            continue;
        }
        if (cells.size() != header.size())
            throw InputError("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(header.size()) + " cells, found " +
                             std::to_string(cells.size()));
        rows.push_back(std::move(cells));
    }
    if (header.empty())
        throw InputError("'" + path + "' is empty");
    return rows;
}

} // namespace detail

struct CsvTable {
    Matrix X;
    Vector y;
    std::vector<std::string> names;
};

/// Reads a header-first CSV. The response column is chosen by name; every
/// other column must be numeric. With positive_label the response must take
/// exactly that label and one other, mapped to +1 / -1.
inline CsvTable load_csv(const std::string& path, const std::string& response_column,
                         const std::optional<std::string>& positive_label = std::nullopt)
{
    std::vector<std::string> header;
    const auto rows = detail::read_csv_rows(path, header);
    const auto it = std::find(header.begin(), header.end(), response_column);
    if (it == header.end())
        throw InputError("response column '" + response_column + "' not found in '" + path + "'");
    const auto resp = static_cast<std::size_t>(it - header.begin());
    if (rows.empty())
        throw InputError("'" + path + "' has no data rows");

    CsvTable t;
    for (std::size_t c = 0; c < header.size(); ++c)
        if (c != resp)
            t.names.push_back(header[c]);
    t.X.resize(static_cast<Index>(rows.size()), static_cast<Index>(header.size() - 1));
    t.y.resize(static_cast<Index>(rows.size()));
    std::set<std::string> others;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        Index col = 0;
        for (std::size_t c = 0; c < header.size(); ++c) {
            const std::string& cell = rows[r][c];
            if (c == resp) {
                if (positive_label) {
                    if (cell == *positive_label) {
                        t.y[static_cast<Index>(r)] = 1.0;
                    } else {
                        others.insert(cell);
                        if (others.size() > 1)
                            throw InputError("row " + std::to_string(r + 1) + ", column '" +
                                             header[c] + "': unknown label '" + cell + "'");
                        t.y[static_cast<Index>(r)] = -1.0;
                    }
                    continue;
                }
            }
            const auto v = detail::parse_double(cell);
            if (!v)
                throw InputError("row " + std::to_string(r + 1) + ", column '" + header[c] +
                                 "': cannot parse '" + cell + "' as a number");
            if (c == resp)
                t.y[static_cast<Index>(r)] = *v;
            else
                t.X(static_cast<Index>(r), col++) = *v;
        }
    }
    return t;
}

/// Writes x1..xd,y with round-trip precision.
inline void write_dataset_csv(const std::string& path, const Dataset& data)
{
    std::ofstream out(path);
    if (!out)
        throw InputError("cannot write '" + path + "'");
    for (Index k = 0; k < data.d(); ++k)
        out << 'x' << (k + 1) << ',';
    out << "y\n";
    char buf[64];
    auto put = [&](double v) {
        const auto res = std::to_chars(buf, buf + sizeof buf, v);
        out.write(buf, res.ptr - buf);
    };
    for (Index i = 0; i < data.n(); ++i) {
        for (Index k = 0; k < data.d(); ++k) {
            put(data.X(i, k));
            out << ',';
        }
        put(data.y[i]);
        out << '\n';
    }
}

/// {"groups": [[1,2,3], ...]} with 1-based indices.
inline nlohmann::json partition_to_json(const GroupPartition& part)
{
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& g : part.groups()) {
        nlohmann::json arr = nlohmann::json::array();
        for (Index i : g)
            arr.push_back(i + 1);
        groups.push_back(arr);
    }
    return {{"groups", groups}};
}

inline GroupPartition partition_from_json(const nlohmann::json& j, Index dim)
{
    if (!j.is_object() || !j.contains("groups") || !j["groups"].is_array())
        throw InputError("partition JSON needs a \"groups\" array");
    std::vector<std::vector<Index>> groups;
    for (const auto& g : j["groups"]) {
        if (!g.is_array())
            throw InputError("each group must be an array of 1-based indices");
        std::vector<Index> grp;
        for (const auto& v : g) {
            if (!v.is_number_integer())
                throw InputError("group entries must be integers");
            grp.push_back(v.get<Index>() - 1);
        }
        groups.push_back(std::move(grp));
    }
    try {
        return GroupPartition(dim, std::move(groups));
    } catch (const std::invalid_argument& e) {
        throw InputError(std::string("invalid partition: ") + e.what());
    }
}

inline void write_partition_json(const std::string& path, const GroupPartition& part)
{
    std::ofstream out(path);
    if (!out)
        throw InputError("cannot write '" + path + "'");
    out << partition_to_json(part).dump() << '\n';
}

inline GroupPartition read_partition_json(const std::string& path, Index dim)
{
    std::ifstream in(path);
    if (!in)
        throw InputError("cannot open partition file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InputError("'" + path + "': " + e.what());
    }
    return partition_from_json(j, dim);
}

// ---------------------------------------------------------------------------
// Train/test split

/// Per-column affine map x -> (x - mean) / sd fitted on training rows.
struct Standardizer {
    Vector mean;
    Vector sd;
    /// Columns left unscaled because their training sd was zero.
    std::vector<Index> constant_columns;

    Matrix apply(const Matrix& X) const
    {
        Matrix out = X.rowwise() - mean.transpose();
        return out.array().rowwise() / sd.transpose().array();
    }

    Matrix invert(const Matrix& Z) const
    {
        Matrix out = Z.array().rowwise() * sd.transpose().array();
        return out.rowwise() + mean.transpose();
    }

    static Standardizer identity(Index d) { return {Vector::Zero(d), Vector::Ones(d), {}}; }

    /// Training columns get mean 0 and sd 1 (denominator n).
    static Standardizer fit(const Matrix& X)
    {
        Standardizer s;
        s.mean = X.colwise().mean().transpose();
        s.sd.resize(X.cols());
        for (Index k = 0; k < X.cols(); ++k) {
            const double v = (X.col(k).array() - s.mean[k]).square().mean();
            if (v > 0.0) {
                s.sd[k] = std::sqrt(v);
            } else {
                s.sd[k] = 1.0;
                s.constant_columns.push_back(k);
            }
        }
        return s;
    }
};

struct Split {
    Dataset train;
    Dataset test;
    std::vector<Index> train_rows;
    std::vector<Index> test_rows;
    Standardizer transform;
    std::vector<std::string> warnings;
};

/// Seeded random split into train_n training rows and the rest; optional
/// standardization fitted on the training rows only.
inline Split split_standardize(const Dataset& data, Index train_n, std::uint64_t seed,
                               bool standardize)
{
    data.validate();
    if (train_n < 1 || train_n >= data.n())
        throw std::invalid_argument("train_n must lie in [1, n)");
    CounterRng rng(seed, 11);
    const auto perm = permutation(static_cast<std::size_t>(data.n()), rng);
    Split s;
    for (std::size_t k = 0; k < perm.size(); ++k)
        (static_cast<Index>(k) < train_n ? s.train_rows : s.test_rows)
            .push_back(static_cast<Index>(perm[k]));
    s.train = data.subset(s.train_rows);
    s.test = data.subset(s.test_rows);
    s.transform = standardize ? Standardizer::fit(s.train.X) : Standardizer::identity(data.d());
    for (Index k : s.transform.constant_columns)
        s.warnings.push_back("column " + std::to_string(k + 1) +
                             " is constant on the training rows; left unscaled");
    if (standardize) {
        s.train.X = s.transform.apply(s.train.X);
        s.test.X = s.transform.apply(s.test.X);
    }
    return s;
}

} // namespace gdro
