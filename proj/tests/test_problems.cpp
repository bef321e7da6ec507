#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>

#include <unistd.h>

#include <gtest/gtest.h>

#include "odesr/problems.hpp"
#include "odesr/random.hpp"

using namespace odesr;

namespace {

struct Expected {
    std::size_t dim;
    std::size_t n;
    double t_max; // 0 for file-backed instances
};

std::map<std::string, Expected> const table {
    { "ChemicalReaction", { 3, 100, 1.0 } },
    { "ECell", { 3, 40, 0.4 } },
    { "SSystem", { 5, 30, 0.3 } },
    { "LotkaVolterra3", { 3, 100, 100.0 } },
    { "LotkaVolterra", { 2, 300, 300.0 } },
    { "Glider", { 2, 100, 10.0 } },
    { "BacterialRespiration", { 2, 100, 10.0 } },
    { "PredatorPrey", { 2, 100, 10.0 } },
    { "BarMagnets", { 2, 100, 10.0 } },
    { "ShearFlow", { 2, 100, 10.0 } },
    { "VanDerPol", { 2, 100, 10.0 } },
    { "LinearOscillatorReal", { 2, 879, 0.0 } },
    { "LinearOscillatorSim", { 2, 512, 0.0 } },
    { "PendulumReal", { 2, 568, 0.0 } },
    { "PendulumSim", { 2, 502, 0.0 } },
    { "DoubleOscillatorReal", { 4, 150, 0.0 } },
    { "DoubleOscillatorSim", { 4, 200, 0.0 } },
    { "DoublePendulumReal", { 4, 200, 0.0 } },
    { "DoublePendulumSim", { 4, 1355, 0.0 } },
};

// Frozen dataset fingerprints; a change here means the generator changed.
std::map<std::string, std::uint64_t> const checksums {
    { "ChemicalReaction", 0x51dba3e9af10a010ULL },
    { "ECell", 0x3c7e46b3102e953cULL },
    { "SSystem", 0xfe4e1b9096d7d8c8ULL },
    { "LotkaVolterra3", 0x6d05265d097f8236ULL },
    { "LotkaVolterra", 0x3aafa33f82a63da6ULL },
    { "Glider", 0xafd4b2ec76a14bc4ULL },
    { "BacterialRespiration", 0xe6b913a49df0a366ULL },
    { "PredatorPrey", 0x4953d47770e9ce4dULL },
    { "BarMagnets", 0x5eb70f07829c0ad2ULL },
    { "ShearFlow", 0x90e51fa745d32c2aULL },
    { "VanDerPol", 0xcd6411b09bc61a6dULL },
};

class TempDir {
public:
    TempDir()
    {
        path_ = std::filesystem::temp_directory_path() / ("odesr_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    [[nodiscard]] std::filesystem::path const& path() const { return path_; }

    std::filesystem::path write(std::string const& name, std::string const& content) const
    {
        auto p = path_ / name;
        std::ofstream(p) << content;
        return p;
    }

private:
    std::filesystem::path path_;
    static inline int counter_ = 0;
};

RawSeries parse(std::string const& text, std::size_t dim, bool first_segment = false)
{
    std::istringstream in(text);
    return parse_raw_series(in, dim, "test.txt", first_segment);
}

} // namespace

TEST(Instances, NineteenWithPublishedShapes)
{
    auto const& all = all_instances();
    ASSERT_EQ(all.size(), 19u);
    std::size_t simulated = 0;
    for (auto const& inst : all) {
        auto it = table.find(inst.name);
        ASSERT_NE(it, table.end()) << inst.name;
        EXPECT_EQ(inst.dimension(), it->second.dim) << inst.name;
        if (inst.simulated()) {
            ++simulated;
            EXPECT_EQ(inst.simulation().n_points, it->second.n) << inst.name;
            EXPECT_EQ(inst.simulation().t_max, it->second.t_max) << inst.name;
            EXPECT_EQ(inst.ground_truth().dimension(), inst.dimension()) << inst.name;
        } else {
            EXPECT_EQ(inst.data_file().n_points, it->second.n) << inst.name;
        }
    }
    EXPECT_EQ(simulated, 11u);
}

TEST(Instances, LookupByName)
{
    EXPECT_EQ(instance("Glider").variables, (std::vector<std::string> { "v", "theta" }));
    EXPECT_EQ(instance("PendulumReal").variables, (std::vector<std::string> { "theta", "omega" }));
    EXPECT_EQ(instance("PendulumReal").data_file().file_name, "real_pend_h_1.txt");
    EXPECT_EQ(find_instance("Nope"), nullptr);
    EXPECT_THROW(instance("Nope"), std::invalid_argument);
    EXPECT_TRUE(instance("SSystem").uses_power);
}

TEST(Generate, ChemicalReaction)
{
    auto data = generate(instance("ChemicalReaction"));
    ASSERT_EQ(data.episodes.size(), 1u);
    auto const& ep = data.episodes[0];
    EXPECT_EQ(ep.values.rows(), 3);
    EXPECT_EQ(ep.values.cols(), 100);
    EXPECT_EQ(ep.grid.t_max, 1.0);
    EXPECT_EQ(ep.values(0, 0), 0.1);
    EXPECT_EQ(ep.values(1, 0), 0.0);
    EXPECT_EQ(ep.values(2, 0), 0.0);
    for (Eigen::Index j = 0; j < ep.values.cols(); ++j) {
        EXPECT_NEAR(ep.values.col(j).sum(), 0.1, 1e-9);
    }
}

TEST(Generate, LotkaVolterra)
{
    auto data = generate(instance("LotkaVolterra"));
    auto const& ep = data.episodes[0];
    EXPECT_EQ(ep.values.cols(), 300);
    EXPECT_EQ(ep.grid.t_max, 300.0);
    EXPECT_EQ(ep.values(0, 0), 20.0);
    EXPECT_EQ(ep.values(1, 0), 20.0);
}

TEST(Generate, SSystemHasThreeEpisodes)
{
    auto data = generate(instance("SSystem"));
    ASSERT_EQ(data.episodes.size(), 3u);
    for (auto const& ep : data.episodes) {
        EXPECT_EQ(ep.values.cols(), 30);
        EXPECT_EQ(ep.values.rows(), 5);
    }
    EXPECT_EQ(data.episodes[2].values(0, 0), 1.5);
}

TEST(Generate, DeterministicAndFrozen)
{
    for (auto const& inst : all_instances()) {
        if (!inst.simulated()) {
            continue;
        }
        auto a = generate(inst);
        auto b = generate(inst);
        ASSERT_EQ(a.episodes.size(), b.episodes.size());
        for (std::size_t e = 0; e < a.episodes.size(); ++e) {
            EXPECT_TRUE((a.episodes[e].values.array() == b.episodes[e].values.array()).all()) << inst.name;
        }
        auto it = checksums.find(inst.name);
        ASSERT_NE(it, checksums.end()) << inst.name << " checksum " << dataset_checksum(a);
        EXPECT_EQ(dataset_checksum(a), it->second) << inst.name;
    }
}

TEST(Generate, SelfConsistentUnderIvpFitness)
{
    for (auto const& inst : all_instances()) {
        if (!inst.simulated()) {
            continue;
        }
        auto data = generate(inst);
        auto m = inst.ground_truth();
        EXPECT_LT(ivp_snmse(m, m.theta(), data), 1e-6) << inst.name;
    }
}

TEST(Generate, FixedStepAgreesWithAdaptiveReference)
{
    IntegratorControls tight;
    tight.rtol = 1e-10;
    tight.atol = 1e-12;
    tight.max_steps = 1'000'000;
    for (auto const& inst : all_instances()) {
        if (!inst.simulated()) {
            continue;
        }
        auto data = generate(inst);
        auto m = inst.ground_truth();
        for (auto const& ep : data.episodes) {
            Eigen::VectorXd y0 = ep.values.col(0);
            auto ref = integrate(m, m.theta(), std::span<double const>(y0.data(), static_cast<std::size_t>(y0.size())), ep.grid, tight);
            ASSERT_TRUE(ref.ok()) << inst.name;
            EXPECT_LE((ref.states - ep.values).cwiseAbs().maxCoeff(), 1e-6) << inst.name;
        }
    }
}

TEST(Spline, ReproducesCubicInTheMiddle)
{
    RawSeries s;
    auto f = [](double t) { return 0.5 * t * t * t - 2.0 * t * t + t - 3.0; };
    for (int k = 0; k <= 200; ++k) {
        double t = 0.05 * k;
        s.times.push_back(t);
    }
    s.values.resize(1, static_cast<Eigen::Index>(s.times.size()));
    for (std::size_t k = 0; k < s.times.size(); ++k) {
        s.values(0, static_cast<Eigen::Index>(k)) = f(s.times[k]);
    }
    // off-knot evaluation on a 333-point grid over [0, 10]; the middle 80% is checked
    auto out = resample_cubic_spline(s, 333);
    TimeGrid g { 0.0, 10.0, 333 };
    double worst = 0.0;
    for (std::size_t j = 0; j < 333; ++j) {
        double t = g.at(j);
        if (t < 1.0 || t > 9.0) {
            continue;
        }
        worst = std::max(worst, std::abs(out(0, static_cast<Eigen::Index>(j)) - f(t)));
    }
    EXPECT_LT(worst, 1e-9);
}

TEST(Spline, IdentityOnItsOwnKnots)
{
    RawSeries s;
    s.values.resize(2, 50);
    for (int k = 0; k < 50; ++k) {
        s.times.push_back(0.1 * k);
        s.values(0, k) = std::sin(0.3 * k);
        s.values(1, k) = k * k;
    }
    auto out = resample_cubic_spline(s, 50);
    EXPECT_LE((out - s.values).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Spline, SineFromIrregularSamples)
{
    Rng rng(99);
    std::vector<double> t { 0.0, 6.0 };
    while (t.size() < 100) {
        t.push_back(uniform_real(rng, 0.0, 6.0));
    }
    std::sort(t.begin(), t.end());
    RawSeries s;
    s.times = t;
    s.values.resize(1, 100);
    for (int k = 0; k < 100; ++k) {
        s.values(0, k) = std::sin(t[static_cast<std::size_t>(k)]);
    }
    auto out = resample_cubic_spline(s, 250);
    TimeGrid g { 0.0, 6.0, 250 };
    double worst = 0.0;
    for (std::size_t j = 0; j < 250; ++j) {
        worst = std::max(worst, std::abs(out(0, static_cast<Eigen::Index>(j)) - std::sin(g.at(j))));
    }
    EXPECT_LT(worst, 1e-3);
}

TEST(Spline, EndpointsExact)
{
    RawSeries s;
    s.times = { 0.0, 0.3, 1.1, 1.7, 2.0 };
    s.values.resize(1, 5);
    s.values << 1.0, -2.0, 0.5, 3.0, 7.25;
    auto out = resample_cubic_spline(s, 17);
    EXPECT_EQ(out(0, 0), 1.0);
    EXPECT_EQ(out(0, 16), 7.25);
}

TEST(Loader, EquidistantFileIsIdentity)
{
    TempDir dir;
    std::ostringstream text;
    text << std::setprecision(17) << "# time theta omega\n";
    for (int k = 0; k < 568; ++k) {
        text << 0.02 * k << ' ' << std::cos(0.05 * k) << ' ' << -std::sin(0.05 * k) << '\n';
    }
    auto path = dir.write("real_pend_h_1.txt", text.str());
    auto data = load_datafile(path, instance("PendulumReal"));
    ASSERT_EQ(data.episodes.size(), 1u);
    auto const& ep = data.episodes[0];
    EXPECT_EQ(ep.values.cols(), 568);
    EXPECT_EQ(data.variable_names, (std::vector<std::string> { "theta", "omega" }));
    for (Eigen::Index k = 0; k < 568; ++k) {
        EXPECT_NEAR(ep.values(0, k), std::cos(0.05 * static_cast<double>(k)), 1e-12);
        EXPECT_NEAR(ep.values(1, k), -std::sin(0.05 * static_cast<double>(k)), 1e-12);
    }
    auto again = load_instance(instance("PendulumReal"), dir.path());
    EXPECT_TRUE((again.episodes[0].values.array() == ep.values.array()).all());
}

TEST(Loader, NonIncreasingTimestampNamesLine)
{
    try {
        (void)parse("# header\n0 1 2\n1 2 3\n1 3 4\n", 2);
        FAIL() << "expected a load error";
    } catch (LoadError const& e) {
        EXPECT_NE(std::string(e.what()).find("test.txt:4"), std::string::npos) << e.what();
    }
}

TEST(Loader, MalformedRowNamesLine)
{
    try {
        (void)parse("0 1 2\n1 2 x\n", 2);
        FAIL() << "expected a load error";
    } catch (LoadError const& e) {
        EXPECT_NE(std::string(e.what()).find("test.txt:2"), std::string::npos) << e.what();
    }
    EXPECT_THROW((void)parse("0 1 2\n1 2\n", 2), LoadError);
}

TEST(Loader, MissingFileIsUnavailable)
{
    TempDir dir;
    EXPECT_THROW((void)load_instance(instance("PendulumSim"), dir.path()), DataUnavailable);
}

TEST(Loader, FirstSegmentOnly)
{
    std::string text = "0 1 2 3 4\n1 2 3 4 5\n2 3 4 5 6\n3 1 1 1 1\n\n0 9 9 9 9\n1 8 8 8 8\n";
    auto s = parse(text, 4, true);
    EXPECT_EQ(s.times.size(), 4u);
    auto reset = parse("0 1 2 3 4\n1 2 3 4 5\n2 3 4 5 6\n3 1 1 1 1\n0 9 9 9 9\n", 4, true);
    EXPECT_EQ(reset.times.size(), 4u);
    EXPECT_THROW((void)parse("0 1 2 3 4\n1 2 3 4 5\n0 9 9 9 9\n", 4, false), LoadError);
}

TEST(Loader, RowRange)
{
    std::istringstream in("0 1\n1 2\n2 3\n3 4\n4 5\n5 6\n");
    auto s = parse_raw_series(in, 1, "r.txt", false, std::pair<std::size_t, std::size_t> { 2, 5 });
    ASSERT_EQ(s.times.size(), 4u);
    EXPECT_EQ(s.times.front(), 1.0);
    EXPECT_EQ(s.times.back(), 4.0);
}

TEST(Dump, WriteDatasetLayout)
{
    auto data = generate(instance("Glider"));
    std::ostringstream os;
    write_dataset(os, data);
    std::istringstream in(os.str());
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "# t v theta");
    int rows = 0;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        double x;
        int cols = 0;
        while (ls >> x) {
            ++cols;
        }
        EXPECT_EQ(cols, 3);
        ++rows;
    }
    EXPECT_EQ(rows, 100);

    // the dump reads back through the file loader unchanged
    std::istringstream back(os.str());
    auto raw = parse_raw_series(back, 2, "dump");
    EXPECT_EQ(raw.times.size(), 100u);
    EXPECT_LE((raw.values - data.episodes[0].values).cwiseAbs().maxCoeff(), 0.0);
}
