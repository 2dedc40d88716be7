#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "gdro/data.hpp"

using namespace gdro;

namespace {

std::string temp_file(const std::string& name, const std::string& content)
{
    const auto path = std::filesystem::temp_directory_path() / ("gdro_test_" + name);
    std::ofstream(path) << content;
    return path.string();
}

} // namespace

TEST(Simulate, DefaultShape)
{
    SimulationConfig cfg;
    cfg.n = 20;
    const Simulation sim = simulate(cfg);
    EXPECT_EQ(sim.data.d(), 48);
    EXPECT_EQ(sim.data.part.num_groups(), 16);
    for (Index j = 0; j < 16; ++j)
        EXPECT_EQ(sim.data.part.group_size(j), 3);
    for (Index k = 0; k < 48; ++k) {
        const bool active = k / 3 == 2 || k / 3 == 4;
        EXPECT_EQ(sim.beta_star[k] != 0.0, active) << k;
    }
    EXPECT_NO_THROW(sim.data.validate());
}

TEST(Simulate, NoiselessResponseInActiveSpan)
{
    SimulationConfig cfg;
    cfg.n = 30;
    cfg.noise_sd = 0.0;
    const Simulation sim = simulate(cfg);
    Matrix A(30, 6);
    A << sim.data.X.middleCols(6, 3), sim.data.X.middleCols(12, 3);
    const Vector coef = A.colPivHouseholderQr().solve(sim.data.y);
    EXPECT_LT((A * coef - sim.data.y).norm(), 1e-10 * sim.data.y.norm());
    EXPECT_LT((sim.data.X * sim.beta_star - sim.data.y).norm(), 1e-12 * sim.data.y.norm());
}

TEST(Simulate, CovariatesArePowers)
{
    SimulationConfig cfg;
    cfg.n = 5;
    const Simulation sim = simulate(cfg);
    for (Index j = 0; j < 16; ++j) {
        const Vector x = sim.data.X.col(3 * j);
        EXPECT_EQ(sim.data.X.col(3 * j + 1), x.cwiseProduct(x));
        EXPECT_EQ(sim.data.X.col(3 * j + 2), x.cwiseProduct(x).cwiseProduct(x));
    }
}

TEST(Simulate, DeterministicAndSeedSensitive)
{
    SimulationConfig cfg;
    cfg.n = 25;
    cfg.seed = 9;
    const Simulation a = simulate(cfg), b = simulate(cfg);
    EXPECT_EQ(a.data.X, b.data.X);
    EXPECT_EQ(a.data.y, b.data.y);
    EXPECT_EQ(a.beta_star, b.beta_star);
    cfg.seed = 10;
    EXPECT_NE(simulate(cfg).data.y, a.data.y);
}

TEST(Simulate, LogisticLabels)
{
    SimulationConfig cfg;
    cfg.n = 200;
    cfg.task = Task::logistic;
    const Simulation sim = simulate(cfg);
    EXPECT_NO_THROW(sim.data.validate());
    const auto pos = (sim.data.y.array() > 0).count();
    EXPECT_GT(pos, 0);
    EXPECT_LT(pos, 200);
}

TEST(Simulate, CovariateCorrelation)
{
    // (Z_i + W)/sqrt(2): unit variance, pairwise correlation 1/2.
    SimulationConfig cfg;
    cfg.n = 20000;
    cfg.degree = 1;
    cfg.n_covariates = 2;
    cfg.active_groups = {1};
    const Simulation sim = simulate(cfg);
    const Vector a = sim.data.X.col(0), b = sim.data.X.col(1);
    EXPECT_NEAR(a.squaredNorm() / 20000.0, 1.0, 0.05);
    EXPECT_NEAR(a.dot(b) / 20000.0, 0.5, 0.05);
}

TEST(Simulate, RejectsBadConfig)
{
    SimulationConfig cfg;
    cfg.active_groups = {17};
    EXPECT_THROW(simulate(cfg), std::invalid_argument);
    cfg.active_groups = {1};
    cfg.degree = 0;
    EXPECT_THROW(simulate(cfg), std::invalid_argument);
}

TEST(PolynomialExpand, WidthAndGroups)
{
    Matrix raw = Matrix::Random(7, 30);
    raw.col(4).setZero();
    const auto [X, part] = polynomial_group_expand(raw, 3);
    EXPECT_EQ(X.cols(), 90);
    EXPECT_EQ(part.num_groups(), 30);
    EXPECT_TRUE(X.middleCols(12, 3).isZero(0.0));
    const auto [X1, part1] = polynomial_group_expand(raw, 1);
    EXPECT_EQ(X1, raw);
    for (Index j = 0; j < 30; ++j)
        EXPECT_EQ(part1.group_size(j), 1);
}

TEST(Csv, ExactFixture)
{
    const auto path = temp_file("fixture.csv", "a,y,b\n1.5,2,-3\n0,1e-3,4\n\"7\",0.25,8.125\n");
    const CsvTable t = load_csv(path, "y");
    Matrix X(3, 2);
    X << 1.5, -3, 0, 4, 7, 8.125;
    Vector y(3);
    y << 2, 1e-3, 0.25;
    EXPECT_EQ(t.X, X);
    EXPECT_EQ(t.y, y);
    EXPECT_EQ(t.names, (std::vector<std::string>{"a", "b"}));
}

TEST(Csv, Labels)
{
    const auto path = temp_file("labels.csv", "id,diag,x\n1,M,0.5\n2,B,1\n3,M,2\n");
    const CsvTable t = load_csv(path, "diag", std::string("M"));
    Vector y(3);
    y << 1, -1, 1;
    EXPECT_EQ(t.y, y);
    const auto bad = temp_file("labels3.csv", "diag,x\nM,1\nB,2\nX,3\n");
    try {
        load_csv(bad, "diag", std::string("M"));
        FAIL();
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find("unknown label"), std::string::npos);
    }
}

TEST(Csv, Errors)
{
    const auto path = temp_file("bad.csv", "x,y\n1,2\n3,abc\n");
    try {
        load_csv(path, "x");
        FAIL();
    } catch (const InputError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("row 2"), std::string::npos) << msg;
        EXPECT_NE(msg.find("'y'"), std::string::npos) << msg;
    }
    EXPECT_THROW(load_csv(path, "z"), InputError);
    EXPECT_THROW(load_csv("/nonexistent/file.csv", "x"), InputError);
    EXPECT_THROW(load_csv(temp_file("ragged.csv", "x,y\n1\n"), "x"), InputError);
    EXPECT_THROW(load_csv(temp_file("trail.csv", "x,y\n1,2x\n"), "x"), InputError);
}

TEST(Csv, RoundTripIsExact)
{
    SimulationConfig cfg;
    cfg.n = 12;
    const Simulation sim = simulate(cfg);
    const auto path = (std::filesystem::temp_directory_path() / "gdro_test_rt.csv").string();
    write_dataset_csv(path, sim.data);
    const CsvTable t = load_csv(path, "y");
    EXPECT_EQ(t.X, sim.data.X);
    EXPECT_EQ(t.y, sim.data.y);
}

TEST(PartitionJson, RoundTripAndErrors)
{
    const GroupPartition part = polynomial_partition(4, 3);
    const auto path = (std::filesystem::temp_directory_path() / "gdro_test_groups.json").string();
    write_partition_json(path, part);
    const GroupPartition back = read_partition_json(path, 12);
    EXPECT_EQ(back.groups(), part.groups());
    EXPECT_EQ(partition_to_json(part).dump().substr(0, 22), "{\"groups\":[[1,2,3],[4,");
    EXPECT_THROW(read_partition_json(path, 13), InputError);
    EXPECT_THROW(partition_from_json(nlohmann::json::parse(R"({"groups":[[1,1]]})"), 1),
                 InputError);
    EXPECT_THROW(read_partition_json("/nonexistent.json", 3), InputError);
}

TEST(Split, PreservesRowsAndStandardizes)
{
    SimulationConfig cfg;
    cfg.n = 40;
    Simulation sim = simulate(cfg);
    sim.data.X.col(5).setConstant(2.0);
    const Split s = split_standardize(sim.data, 30, 3, true);
    EXPECT_EQ(s.train.n(), 30);
    EXPECT_EQ(s.test.n(), 10);
    std::vector<Index> all = s.train_rows;
    all.insert(all.end(), s.test_rows.begin(), s.test_rows.end());
    std::sort(all.begin(), all.end());
    for (Index i = 0; i < 40; ++i)
        EXPECT_EQ(all[static_cast<std::size_t>(i)], i);
    for (Index k = 0; k < s.train.d(); ++k) {
        const double mean = s.train.X.col(k).mean();
        EXPECT_NEAR(mean, 0.0, 1e-10);
        if (k != 5) {
            EXPECT_NEAR(std::sqrt((s.train.X.col(k).array() - mean).square().mean()), 1.0, 1e-10);
        }
    }
    ASSERT_EQ(s.transform.constant_columns, std::vector<Index>{5});
    EXPECT_EQ(s.warnings.size(), 1u);
    const Matrix back = s.transform.invert(s.test.X);
    for (std::size_t r = 0; r < s.test_rows.size(); ++r)
        EXPECT_LT((back.row(static_cast<Index>(r)) - sim.data.X.row(s.test_rows[r])).norm(), 1e-10);
    const Split again = split_standardize(sim.data, 30, 3, true);
    EXPECT_EQ(again.train_rows, s.train_rows);
    EXPECT_EQ(split_standardize(sim.data, 39, 1, false).test.n(), 1);
    EXPECT_THROW(split_standardize(sim.data, 40, 1, false), std::invalid_argument);
}
