#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "gdro/cv.hpp"
#include "gdro/data.hpp"
#include "gdro/rwpi.hpp"
#include "gdro/solvers.hpp"

namespace gdro {

/// Real-data study: polynomial expansion of a CSV file, repeated random
/// train/test splits.
struct RealDataConfig {
    std::string path;
    std::string response_column;
    std::optional<std::string> positive_label;
    Index train_n = 112;
    Index degree = 3;
};

struct ExperimentConfig {
    Task task = Task::linear;
    std::vector<Index> sizes{50, 100, 500, 1000};
    int replications = 20;
    double chi = 0.05;
    Index n_mc = 100000;
    int folds = 5;
    int grid_length = 50;
    double grid_ratio = 1e-3;
    std::uint64_t seed = 0;
    std::string out_dir;
    Index test_n = 1000;
    /// Simulation design (ignored when real_data is set).
    Index n_covariates = 16;
    Index degree = 3;
    std::vector<Index> active_groups{3, 5};
    BetaDraw beta_draw;
    double noise_sd = 1.0;
    /// Standardize columns on the training rows; no intercept unless asked.
    bool standardize = true;
    bool intercept = false;
    std::optional<RealDataConfig> real_data;
    /// Worker threads; 0 selects the hardware concurrency.
    int threads = 0;

    void validate() const
    {
        if (replications < 1)
            throw std::invalid_argument("replications must be at least 1");
        if (folds < 2)
            throw std::invalid_argument("folds must be at least 2");
        if (!(chi > 0.0 && chi < 1.0))
            throw std::invalid_argument("chi must lie in (0, 1)");
        if (n_mc < 1 || test_n < 1 || grid_length < 1)
            throw std::invalid_argument("n_mc, test_n and grid_length must be positive");
        if (!real_data) {
            if (sizes.empty())
                throw std::invalid_argument("no sample sizes given");
            for (Index n : sizes)
                if (n < folds)
                    throw std::invalid_argument("every sample size must be at least the fold count");
        }
    }
};

inline std::vector<std::string> method_names(Task task)
{
    if (task == Task::linear)
        return {"RWPI GSRL", "CV GSRL", "OLS"};
    return {"RWPI GR-Lasso", "CV GR-Lasso", "LR"};
}

struct MethodOutcome {
    double lambda = 0.0;
    double train_loss = 0.0;
    double test_loss = 0.0;
    bool converged = true;
};

struct Replication {
    Index n = 0;
    int index = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    /// One entry per method, in method_names order.
    std::vector<MethodOutcome> methods;
};

struct TableRow {
    std::string method;
    Index n = 0;
    double train_mean = 0.0;
    double train_sd = 0.0;
    double test_mean = 0.0;
    double test_sd = 0.0;
    int count = 0;
};

struct ExperimentResult {
    std::vector<Replication> replications;
    std::vector<TableRow> table;
    int failures = 0;

    bool too_many_failures() const
    {
        return !replications.empty() && 10 * failures > static_cast<int>(replications.size());
    }
};

/// Seed of replication r at sample size n, from the config seed.
inline std::uint64_t replication_seed(std::uint64_t seed, Index n, int r)
{
    return CounterRng(seed, 1000 + static_cast<std::uint64_t>(n)).word_at(static_cast<std::uint64_t>(r));
}

namespace detail {

inline MethodOutcome evaluate(const Dataset& train, const Dataset& test, const ModelFit& fit)
{
    return {fit.lambda, task_loss(train, fit.beta, fit.intercept),
            task_loss(test, fit.beta, fit.intercept), fit.converged};
}

/// RWPI fit, CV fit and unpenalized fit on one train/test pair.
inline std::vector<MethodOutcome> run_methods(const Dataset& train, const Dataset& test,
                                              const ExperimentConfig& cfg, std::uint64_t seed)
{
    const Model model = default_model(train.task);
    std::vector<MethodOutcome> out;

    const RwpiSelection sel = select_lambda(train, cfg.chi, cfg.n_mc, seed);
    out.push_back(evaluate(train, test, fit_model(train, model, sel.lambda)));

    const auto grid = default_grid(train, model, cfg.grid_length, cfg.grid_ratio);
    const CvResult cv = cross_validate(train, model, cfg.folds, grid, seed);
    out.push_back(evaluate(train, test, fit_model(train, model, cv.best_lambda)));

    const ModelFit plain = train.task == Task::linear ? fit_least_squares(train)
                                                      : fit_logistic_unpenalized(train);
    out.push_back(evaluate(train, test, plain));
    return out;
}

inline Replication run_simulated(const ExperimentConfig& cfg, Index n, int r)
{
    Replication rep{n, r, replication_seed(cfg.seed, n, r), false, {}, {}};
    SimulationConfig sc;
    sc.n = n;
    sc.seed = rep.seed;
    sc.task = cfg.task;
    sc.n_covariates = cfg.n_covariates;
    sc.degree = cfg.degree;
    sc.active_groups = cfg.active_groups;
    sc.beta_draw = cfg.beta_draw;
    sc.noise_sd = cfg.noise_sd;
    const Simulation sim = simulate(sc);
    Dataset train = sim.data;
    Dataset test = simulate_design(sc, sim.beta_star, cfg.test_n, 2);
    if (cfg.standardize) {
        const Standardizer t = Standardizer::fit(train.X);
        train.X = t.apply(train.X);
        test.X = t.apply(test.X);
    }
    train.intercept = test.intercept = cfg.intercept;
    rep.methods = run_methods(train, test, cfg, rep.seed);
    rep.ok = true;
    return rep;
}

inline Replication run_split(const ExperimentConfig& cfg, const Dataset& full, int r)
{
    const Index n = cfg.real_data->train_n;
    Replication rep{n, r, replication_seed(cfg.seed, n, r), false, {}, {}};
    Split s = split_standardize(full, n, rep.seed, cfg.standardize);
    s.train.intercept = s.test.intercept = cfg.intercept;
    rep.methods = run_methods(s.train, s.test, cfg, rep.seed);
    rep.ok = true;
    return rep;
}

inline void mean_sd(const std::vector<double>& v, double& mean, double& sd)
{
    mean = 0.0;
    for (double x : v)
        mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v)
        ss += (x - mean) * (x - mean);
    sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
}

} // namespace detail

/// Loads the real-data file of the config as a grouped logistic or linear dataset.
inline Dataset load_real_data(const ExperimentConfig& cfg)
{
    const RealDataConfig& rd = *cfg.real_data;
    const CsvTable t = load_csv(rd.path, rd.response_column, rd.positive_label);
    auto [X, part] = polynomial_group_expand(t.X, rd.degree);
    Dataset d{std::move(X), t.y, std::move(part), cfg.task, cfg.intercept};
    d.validate();
    if (rd.train_n < cfg.folds || rd.train_n >= d.n())
        throw std::invalid_argument("train_n must lie in [folds, n)");
    return d;
}

/// Mean and sample sd of each method's losses over successful replications.
inline std::vector<TableRow> summarize(const std::vector<Replication>& reps, Task task)
{
    const auto names = method_names(task);
    std::vector<Index> sizes;
    for (const auto& r : reps)
        if (std::find(sizes.begin(), sizes.end(), r.n) == sizes.end())
            sizes.push_back(r.n);
    std::vector<TableRow> rows;
    for (std::size_t m = 0; m < names.size(); ++m)
        for (Index n : sizes) {
            std::vector<double> tr, te;
            for (const auto& r : reps)
                if (r.ok && r.n == n) {
                    tr.push_back(r.methods[m].train_loss);
                    te.push_back(r.methods[m].test_loss);
                }
            TableRow row;
            row.method = names[m];
            row.n = n;
            row.count = static_cast<int>(tr.size());
            if (!tr.empty()) {
                detail::mean_sd(tr, row.train_mean, row.train_sd);
                detail::mean_sd(te, row.test_mean, row.test_sd);
            } else {
                row.train_mean = row.train_sd = row.test_mean = row.test_sd =
                    std::numeric_limits<double>::quiet_NaN();
            }
            rows.push_back(row);
        }
    return rows;
}

/// Runs every (n, replication) cell on a thread pool. Failed replications
/// are recorded and the run continues. `log` receives one line per
/// replication.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       const std::function<void(const std::string&)>& log = {})
{
    cfg.validate();
    std::optional<Dataset> full;
    if (cfg.real_data)
        full = load_real_data(cfg);
    const std::vector<Index> sizes =
        cfg.real_data ? std::vector<Index>{cfg.real_data->train_n} : cfg.sizes;

    ExperimentResult res;
    for (Index n : sizes)
        for (int r = 0; r < cfg.replications; ++r)
            res.replications.push_back({n, r, replication_seed(cfg.seed, n, r), false, {}, {}});

    std::atomic<std::size_t> next{0};
    std::mutex log_mutex;
    auto worker = [&] {
        for (std::size_t k = next++; k < res.replications.size(); k = next++) {
            Replication& slot = res.replications[k];
            try {
                slot = full ? detail::run_split(cfg, *full, slot.index)
                            : detail::run_simulated(cfg, slot.n, slot.index);
            } catch (const std::exception& e) {
                slot.ok = false;
                slot.error = e.what();
            }
            if (log) {
                std::ostringstream line;
                line << "n=" << slot.n << " rep=" << slot.index + 1 << '/' << cfg.replications;
                if (slot.ok) {
                    line << " test";
                    for (const auto& m : slot.methods)
                        line << ' ' << m.test_loss;
                } else {
                    line << " failed: " << slot.error;
                }
                const std::lock_guard<std::mutex> lock(log_mutex);
                log(line.str());
            }
        }
    };
    unsigned nthreads = cfg.threads > 0 ? static_cast<unsigned>(cfg.threads)
                                        : std::max(1u, std::thread::hardware_concurrency());
    nthreads = std::min<unsigned>(nthreads, static_cast<unsigned>(res.replications.size()));
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < nthreads; ++t)
        pool.emplace_back(worker);
    worker();
    for (auto& t : pool)
        t.join();

    for (const auto& r : res.replications)
        if (!r.ok)
            ++res.failures;
    res.table = summarize(res.replications, cfg.task);
    return res;
}

// ---------------------------------------------------------------------------
// Output

inline std::string format_g17(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// method,n,train_mean,train_sd,test_mean,test_sd
inline std::string table_csv(const std::vector<TableRow>& rows)
{
    std::ostringstream out;
    out << "method,n,train_mean,train_sd,test_mean,test_sd\n";
    for (const auto& r : rows)
        out << r.method << ',' << r.n << ',' << format_g17(r.train_mean) << ','
            << format_g17(r.train_sd) << ',' << format_g17(r.test_mean) << ','
            << format_g17(r.test_sd) << '\n';
    return out.str();
}

inline std::vector<TableRow> parse_table_csv(const std::string& text)
{
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    if (line != "method,n,train_mean,train_sd,test_mean,test_sd")
        throw InputError("unexpected table header '" + line + "'");
    std::vector<TableRow> rows;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        const auto cells = detail::split_csv_line(line, rows.size() + 2);
        if (cells.size() != 6)
            throw InputError("table row needs 6 cells: '" + line + "'");
        TableRow r;
        r.method = cells[0];
        auto num = [&](const std::string& s) {
            if (s == "nan" || s == "-nan")
                return std::numeric_limits<double>::quiet_NaN();
            const auto v = detail::parse_double(s);
            if (!v)
                throw InputError("bad number '" + s + "' in table");
            return *v;
        };
        r.n = static_cast<Index>(num(cells[1]));
        r.train_mean = num(cells[2]);
        r.train_sd = num(cells[3]);
        r.test_mean = num(cells[4]);
        r.test_sd = num(cells[5]);
        rows.push_back(r);
    }
    return rows;
}

/// Methods as rows, sample sizes as column pairs (training, testing), cells mean ± sd.
inline std::string table_text(const std::vector<TableRow>& rows, Task task)
{
    std::vector<Index> sizes;
    for (const auto& r : rows)
        if (std::find(sizes.begin(), sizes.end(), r.n) == sizes.end())
            sizes.push_back(r.n);
    auto cell = [](double m, double s) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.4g ± %.3g", m, s);
        return std::string(buf);
    };
    std::vector<std::vector<std::string>> grid;
    std::vector<std::string> head{"method"};
    for (Index n : sizes) {
        head.push_back("train n=" + std::to_string(n));
        head.push_back("test n=" + std::to_string(n));
    }
    grid.push_back(head);
    for (const auto& name : method_names(task)) {
        std::vector<std::string> line{name};
        for (Index n : sizes)
            for (const auto& r : rows)
                if (r.method == name && r.n == n) {
                    line.push_back(cell(r.train_mean, r.train_sd));
                    line.push_back(cell(r.test_mean, r.test_sd));
                }
        grid.push_back(line);
    }
    // Display width in code points (the ± sign is two bytes).
    auto width = [](const std::string& s) {
        std::size_t w = 0;
        for (unsigned char c : s)
            w += (c & 0xC0) != 0x80;
        return w;
    };
    std::vector<std::size_t> cols(head.size(), 0);
    for (const auto& line : grid)
        for (std::size_t c = 0; c < line.size(); ++c)
            cols[c] = std::max(cols[c], width(line[c]));
    std::ostringstream out;
    for (const auto& line : grid) {
        for (std::size_t c = 0; c < line.size(); ++c) {
            out << line[c];
            if (c + 1 < line.size())
                out << std::string(cols[c] - width(line[c]) + 2, ' ');
        }
        out << '\n';
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// JSON config

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j,
                                                    ExperimentConfig cfg = {})
{
    if (!j.is_object())
        throw InputError("experiment config must be a JSON object");
    try {
        if (j.contains("task"))
            cfg.task = parse_task(j["task"].get<std::string>());
        if (j.contains("sizes"))
            cfg.sizes = j["sizes"].get<std::vector<Index>>();
        if (j.contains("replications"))
            cfg.replications = j["replications"].get<int>();
        if (j.contains("chi"))
            cfg.chi = j["chi"].get<double>();
        if (j.contains("n_mc"))
            cfg.n_mc = j["n_mc"].get<Index>();
        if (j.contains("folds"))
            cfg.folds = j["folds"].get<int>();
        if (j.contains("grid_length"))
            cfg.grid_length = j["grid_length"].get<int>();
        if (j.contains("grid_ratio"))
            cfg.grid_ratio = j["grid_ratio"].get<double>();
        if (j.contains("seed"))
            cfg.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("out_dir"))
            cfg.out_dir = j["out_dir"].get<std::string>();
        if (j.contains("test_n"))
            cfg.test_n = j["test_n"].get<Index>();
        if (j.contains("n_covariates"))
            cfg.n_covariates = j["n_covariates"].get<Index>();
        if (j.contains("degree"))
            cfg.degree = j["degree"].get<Index>();
        if (j.contains("active_groups"))
            cfg.active_groups = j["active_groups"].get<std::vector<Index>>();
        if (j.contains("beta_law")) {
            const auto law = j["beta_law"].get<std::string>();
            if (law == "normal")
                cfg.beta_draw.law = BetaLaw::normal;
            else if (law == "uniform")
                cfg.beta_draw.law = BetaLaw::uniform;
            else
                throw InputError("beta_law must be normal or uniform");
        }
        if (j.contains("beta_scale"))
            cfg.beta_draw.scale = j["beta_scale"].get<double>();
        if (j.contains("noise_sd"))
            cfg.noise_sd = j["noise_sd"].get<double>();
        if (j.contains("standardize"))
            cfg.standardize = j["standardize"].get<bool>();
        if (j.contains("intercept"))
            cfg.intercept = j["intercept"].get<bool>();
        if (j.contains("threads"))
            cfg.threads = j["threads"].get<int>();
        if (j.contains("real_data")) {
            const auto& r = j["real_data"];
            RealDataConfig rd;
            rd.path = r.at("path").get<std::string>();
            rd.response_column = r.at("response_column").get<std::string>();
            if (r.contains("positive_label"))
                rd.positive_label = r["positive_label"].get<std::string>();
            if (r.contains("train_n"))
                rd.train_n = r["train_n"].get<Index>();
            if (r.contains("degree"))
                rd.degree = r["degree"].get<Index>();
            cfg.real_data = rd;
        }
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("experiment config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw InputError(std::string("experiment config: ") + e.what());
    }
    return cfg;
}

} // namespace gdro
