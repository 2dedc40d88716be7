#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include <nlohmann/json.hpp>

#include "gdro/cv.hpp"
#include "gdro/data.hpp"
#include "gdro/experiment.hpp"
#include "gdro/rwpi.hpp"
#include "gdro/solvers.hpp"
#include "gdro/verify.hpp"

using namespace gdro;
namespace fs = std::filesystem;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_verify = 1;
constexpr int exit_input = 2;
constexpr int exit_numeric = 3;

struct DataArgs {
    std::string data;
    std::string groups;
    std::string task = "linear";
    std::string response = "y";
    std::string positive_label;
    bool intercept = false;
};

void add_data_options(CLI::App* cmd, DataArgs& a)
{
    cmd->add_option("--data", a.data, "CSV file with a header row")->required();
    cmd->add_option("--groups", a.groups, "partition JSON sidecar (default: <data>.groups.json)");
    cmd->add_option("--task", a.task, "linear or logistic")->capture_default_str();
    cmd->add_option("--response", a.response, "response column name")->capture_default_str();
    cmd->add_option("--positive-label", a.positive_label,
                    "response label mapped to +1 (logistic; the other label maps to -1)");
    cmd->add_flag("--intercept", a.intercept, "fit an unpenalized intercept");
}

std::string sidecar_path(const std::string& data)
{
    fs::path p(data);
    return (p.parent_path() / (p.stem().string() + ".groups.json")).string();
}

Dataset load_dataset(const DataArgs& a)
{
    const Task task = parse_task(a.task);
    const std::optional<std::string> label =
        a.positive_label.empty() ? std::nullopt : std::optional<std::string>(a.positive_label);
    CsvTable t = load_csv(a.data, a.response, label);
    const std::string groups = a.groups.empty() ? sidecar_path(a.data) : a.groups;
    if (!fs::exists(groups))
        throw InputError("partition sidecar '" + groups + "' not found (pass --groups)");
    GroupPartition part = read_partition_json(groups, t.X.cols());
    Dataset d{std::move(t.X), std::move(t.y), std::move(part), task, a.intercept};
    d.validate();
    return d;
}

fs::path prepare_out(const std::string& out)
{
    const fs::path dir = out.empty() ? fs::path(".") : fs::path(out);
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream f(path);
    if (!f)
        throw InputError("cannot write '" + path.string() + "'");
    f << text;
}

nlohmann::json selection_json(const RwpiSelection& s)
{
    nlohmann::json j{{"lambda", s.lambda},
                     {"chi", s.chi},
                     {"n_mc", s.n_mc},
                     {"seed", s.seed},
                     {"eta_hat", s.eta_hat},
                     {"eta_mc_error", s.eta_mc_error},
                     {"pilot_lambdas", s.pilot_lambdas}};
    if (s.moment_ratio)
        j["moment_ratio"] = *s.moment_ratio;
    if (s.moments)
        j["moments"] = {{"mean_abs", s.moments->mean_abs}, {"mean_sq", s.moments->mean_sq}};
    return j;
}

int cmd_fit(const DataArgs& a, std::optional<double> lambda, bool rwpi, double chi, Index mc,
            std::uint64_t seed, const std::string& out)
{
    const Dataset data = load_dataset(a);
    if (!lambda && !rwpi)
        throw InputError("fit needs --lambda or --rwpi");
    if (lambda && rwpi)
        throw InputError("pass only one of --lambda and --rwpi");
    nlohmann::json report;
    double lam = lambda.value_or(0.0);
    if (rwpi) {
        const RwpiSelection sel = select_lambda(data, chi, mc, seed);
        report["selection"] = selection_json(sel);
        lam = sel.lambda;
    }
    if (!(lam >= 0.0))
        throw InputError("lambda must be nonnegative");
    const ModelFit fit = fit_model(data, default_model(data.task), lam);

    const fs::path dir = prepare_out(out);
    std::ostringstream beta;
    beta << "index,group,value\n";
    for (Index k = 0; k < data.d(); ++k)
        beta << k + 1 << ',' << data.part.group_of(k) + 1 << ',' << format_g17(fit.beta[k]) << '\n';
    write_text(dir / "beta.csv", beta.str());
    report["task"] = to_string(data.task);
    report["lambda"] = lam;
    report["objective"] = fit.objective;
    report["intercept"] = fit.intercept;
    report["converged"] = fit.converged;
    report["iterations"] = fit.iterations;
    report["kkt_residual"] = fit.kkt_residual;
    report["train_loss"] = task_loss(data, fit.beta, fit.intercept);
    if (data.task == Task::linear)
        report["sigma_hat"] = fit.sigma_hat;
    write_text(dir / "fit.json", report.dump(2) + "\n");
    std::printf("lambda %.17g objective %.17g converged %s\nwrote %s, %s\n", lam, fit.objective,
                fit.converged ? "yes" : "no", (dir / "beta.csv").c_str(),
                (dir / "fit.json").c_str());
    if (!fit.converged) {
        std::fprintf(stderr, "solver did not converge\n");
        return exit_numeric;
    }
    return exit_ok;
}

int cmd_select(const DataArgs& a, double chi, Index mc, std::uint64_t seed, const std::string& out)
{
    const Dataset data = load_dataset(a);
    const RwpiSelection sel = select_lambda(data, chi, mc, seed);
    const std::string text = selection_json(sel).dump(2) + "\n";
    std::printf("lambda %.17g\n", sel.lambda);
    if (!out.empty())
        write_text(prepare_out(out) / "selection.json", text);
    else
        std::cout << text;
    return exit_ok;
}

int cmd_cv(const DataArgs& a, int folds, int grid_length, std::uint64_t seed, const std::string& out)
{
    const Dataset data = load_dataset(a);
    const Model model = default_model(data.task);
    const CvResult r = cross_validate(data, model, folds, default_grid(data, model, grid_length), seed);
    std::ostringstream csv;
    csv << "fold";
    for (double lam : r.grid)
        csv << ',' << format_g17(lam);
    csv << '\n';
    for (int f = 0; f < r.k; ++f) {
        csv << f + 1;
        for (Index g = 0; g < r.fold_losses.cols(); ++g)
            csv << ',' << format_g17(r.fold_losses(f, g));
        csv << '\n';
    }
    csv << "mean";
    for (Index g = 0; g < r.mean_loss.size(); ++g)
        csv << ',' << format_g17(r.mean_loss[g]);
    csv << '\n';
    const fs::path dir = prepare_out(out);
    write_text(dir / "cv_losses.csv", csv.str());
    const nlohmann::json summary{{"best_lambda", r.best_lambda},
                                 {"one_se_lambda", r.one_se_lambda},
                                 {"k", r.k},
                                 {"k_effective", r.k_effective},
                                 {"warnings", r.warnings}};
    write_text(dir / "cv.json", summary.dump(2) + "\n");
    for (const auto& w : r.warnings)
        std::fprintf(stderr, "warning: %s\n", w.c_str());
    std::printf("best lambda %.17g (one-se %.17g), %d of %d folds used\n", r.best_lambda,
                r.one_se_lambda, r.k_effective, r.k);
    return exit_ok;
}

int cmd_simulate(const SimulationConfig& cfg, const std::string& out)
{
    const Simulation sim = simulate(cfg);
    const fs::path dir = prepare_out(out);
    write_dataset_csv((dir / "data.csv").string(), sim.data);
    write_partition_json((dir / "data.groups.json").string(), sim.data.part);
    std::ostringstream beta;
    beta << "index,group,value\n";
    for (Index k = 0; k < sim.beta_star.size(); ++k)
        beta << k + 1 << ',' << sim.data.part.group_of(k) + 1 << ','
             << format_g17(sim.beta_star[k]) << '\n';
    write_text(dir / "beta_star.csv", beta.str());
    std::printf("wrote %s (n=%ld, d=%ld, %ld groups)\n", (dir / "data.csv").c_str(),
                static_cast<long>(sim.data.n()), static_cast<long>(sim.data.d()),
                static_cast<long>(sim.data.part.num_groups()));
    return exit_ok;
}

int cmd_verify(std::uint64_t seed, bool quick, double mismatch)
{
    bool all = true;
    for (const auto& c : run_verification(seed, quick, mismatch)) {
        std::printf("[%s] %s: %s (%.2f s)\n", c.passed ? "PASS" : "FAIL", c.name.c_str(),
                    c.detail.c_str(), c.seconds);
        all = all && c.passed;
    }
    return all ? exit_ok : exit_verify;
}

int cmd_experiment(ExperimentConfig cfg)
{
    std::fprintf(stderr, "experiment: %s, %d replications per size\n", to_string(cfg.task),
                 cfg.replications);
    const ExperimentResult res =
        run_experiment(cfg, [](const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); });
    const std::string csv = table_csv(res.table);
    const std::string text = table_text(res.table, cfg.task);
    std::cout << text;
    if (!cfg.out_dir.empty()) {
        const fs::path dir = prepare_out(cfg.out_dir);
        write_text(dir / "table.csv", csv);
        write_text(dir / "table.txt", text);
        std::ostringstream reps;
        reps << "n,replication,seed,ok,method,lambda,train_loss,test_loss,error\n";
        const auto names = method_names(cfg.task);
        for (const auto& r : res.replications) {
            if (!r.ok) {
                reps << r.n << ',' << r.index + 1 << ',' << r.seed << ",0,,,,,\"" << r.error << "\"\n";
                continue;
            }
            for (std::size_t m = 0; m < r.methods.size(); ++m)
                reps << r.n << ',' << r.index + 1 << ',' << r.seed << ",1," << names[m] << ','
                     << format_g17(r.methods[m].lambda) << ','
                     << format_g17(r.methods[m].train_loss) << ','
                     << format_g17(r.methods[m].test_loss) << ",\n";
        }
        write_text(dir / "replications.csv", reps.str());
    }
    if (res.failures > 0)
        std::fprintf(stderr, "%d of %zu replications failed\n", res.failures, res.replications.size());
    return res.too_many_failures() ? exit_numeric : exit_ok;
}

} // namespace

int main(int argc, char** argv)
{
    FLAGS_minloglevel = 2; // Ceres line-search chatter
    CLI::App app{"gdro: groupwise distributionally robust regression"};
    app.require_subcommand(1);

    std::uint64_t seed = 0;
    double chi = 0.05;
    Index mc = 100000;
    std::string out;

    DataArgs fit_args;
    std::optional<double> lambda;
    bool rwpi = false;
    auto* fit = app.add_subcommand("fit", "fit GSRL (linear) or GR-Lasso (logistic)");
    add_data_options(fit, fit_args);
    fit->add_option("--lambda", lambda, "regularization parameter");
    fit->add_flag("--rwpi", rwpi, "select lambda by RWPI before fitting");
    fit->add_option("--chi", chi, "RWPI confidence level chi")->capture_default_str();
    fit->add_option("--mc", mc, "Monte Carlo draws")->capture_default_str();
    fit->add_option("--seed", seed, "random seed")->capture_default_str();
    fit->add_option("--out", out, "output directory");

    DataArgs sel_args;
    auto* sel = app.add_subcommand("select-lambda", "RWPI regularization selection");
    add_data_options(sel, sel_args);
    sel->add_option("--chi", chi, "confidence level chi")->capture_default_str();
    sel->add_option("--mc", mc, "Monte Carlo draws")->capture_default_str();
    sel->add_option("--seed", seed, "random seed")->capture_default_str();
    sel->add_option("--out", out, "output directory");

    DataArgs cv_args;
    int folds = 5, grid_length = 50;
    auto* cv = app.add_subcommand("cv", "k-fold cross-validation over the default grid");
    add_data_options(cv, cv_args);
    cv->add_option("--folds", folds, "number of folds")->capture_default_str();
    cv->add_option("--grid-length", grid_length, "grid size")->capture_default_str();
    cv->add_option("--seed", seed, "random seed")->capture_default_str();
    cv->add_option("--out", out, "output directory");

    SimulationConfig sim_cfg;
    std::string sim_task = "linear";
    auto* sim = app.add_subcommand("simulate", "simulate the polynomial group design");
    sim->add_option("--n", sim_cfg.n, "sample size")->capture_default_str();
    sim->add_option("--task", sim_task, "linear or logistic")->capture_default_str();
    sim->add_option("--noise-sd", sim_cfg.noise_sd, "error sd (linear)")->capture_default_str();
    sim->add_option("--covariates", sim_cfg.n_covariates, "number of covariates")->capture_default_str();
    sim->add_option("--degree", sim_cfg.degree, "polynomial degree")->capture_default_str();
    sim->add_option("--seed", seed, "random seed")->capture_default_str();
    sim->add_option("--out", out, "output directory");

    bool quick = false;
    double mismatch = 1.0;
    auto* ver = app.add_subcommand("verify-duality", "duality, norm and dominance checks");
    ver->add_flag("--quick", quick, "reduced instance counts");
    ver->add_option("--delta-mismatch", mismatch,
                    "compare against the closed form at this multiple of delta (negative control)")
        ->capture_default_str();
    ver->add_option("--seed", seed, "random seed")->capture_default_str();

    std::string config_path, exp_task;
    std::vector<Index> sizes;
    std::optional<int> reps, exp_folds, threads;
    std::optional<double> exp_chi;
    std::optional<Index> exp_mc;
    std::optional<std::uint64_t> exp_seed;
    bool full = false, exp_intercept = false;
    auto* exp = app.add_subcommand("experiment", "simulation / real-data comparison tables");
    exp->add_option("--config", config_path, "JSON experiment config");
    exp->add_option("--task", exp_task, "linear or logistic");
    exp->add_option("--sizes", sizes, "sample sizes");
    exp->add_option("--replications", reps, "replications per size (default 20)");
    exp->add_flag("--full", full, "200 replications");
    exp->add_option("--chi", exp_chi, "RWPI confidence level chi");
    exp->add_option("--mc", exp_mc, "Monte Carlo draws");
    exp->add_option("--folds", exp_folds, "CV folds");
    exp->add_option("--seed", exp_seed, "base seed");
    exp->add_option("--threads", threads, "worker threads");
    exp->add_flag("--intercept", exp_intercept, "fit an intercept");
    exp->add_option("--out", out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_input;
    }

    try {
        if (*fit)
            return cmd_fit(fit_args, lambda, rwpi, chi, mc, seed, out);
        if (*sel)
            return cmd_select(sel_args, chi, mc, seed, out);
        if (*cv)
            return cmd_cv(cv_args, folds, grid_length, seed, out);
        if (*sim) {
            sim_cfg.task = parse_task(sim_task);
            sim_cfg.seed = seed;
            return cmd_simulate(sim_cfg, out);
        }
        if (*ver)
            return cmd_verify(seed, quick, mismatch);
        if (*exp) {
            ExperimentConfig cfg;
            if (!config_path.empty()) {
                std::ifstream f(config_path);
                if (!f)
                    throw InputError("cannot open config '" + config_path + "'");
                nlohmann::json j;
                try {
                    f >> j;
                } catch (const nlohmann::json::exception& e) {
                    throw InputError("config '" + config_path + "': " + e.what());
                }
                cfg = experiment_config_from_json(j);
            }
            if (!exp_task.empty())
                cfg.task = parse_task(exp_task);
            if (!sizes.empty())
                cfg.sizes = sizes;
            if (full)
                cfg.replications = 200;
            if (reps)
                cfg.replications = *reps;
            if (exp_chi)
                cfg.chi = *exp_chi;
            if (exp_mc)
                cfg.n_mc = *exp_mc;
            if (exp_folds)
                cfg.folds = *exp_folds;
            if (exp_seed)
                cfg.seed = *exp_seed;
            if (threads)
                cfg.threads = *threads;
            if (exp_intercept)
                cfg.intercept = true;
            if (!out.empty())
                cfg.out_dir = out;
            return cmd_experiment(cfg);
        }
    } catch (const InputError& e) {
        std::fprintf(stderr, "input error: %s\n", e.what());
        return exit_input;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "input error: %s\n", e.what());
        return exit_input;
    } catch (const DegenerateError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return exit_numeric;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return exit_numeric;
    }
    return exit_ok;
}
