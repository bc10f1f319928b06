#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "pdsga/harness.hpp"

using namespace pdsga;

namespace {

Scenario parse(const std::string& text)
{
    std::istringstream is(text);
    return parse_scenario(is, "test");
}

bool has_code(const ValidationReport& r, const std::string& code)
{
    for (const auto& d : r.errors)
        if (d.code == code)
            return true;
    return false;
}

std::string slurp(const std::string& path)
{
    std::ifstream f(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

// Figure 1 written out as explicit tables.
const char* kExplicit = R"(num_subbands = 2
[links]
1 2
2 3
1 4
4 2
2 5
5 3
4 5
5 6
[commodities]
1 1 6 : 3 7 8
1 2 3 : 1 2
2 1 3 : 2
2 2 6 : 5 8
4 1 3 : 4 2
4 2 3 : 7 6
5 1 6 : 8
5 2 3 : 6
)";

}  // namespace

TEST(Parse, ShippedScenarioIsValid)
{
    const auto sc = load_scenario(std::string(PDSGA_SOURCE_DIR) + "/scenarios/fig1.scn");
    EXPECT_EQ(sc.preset, "fig1");
    EXPECT_DOUBLE_EQ(sc.epsilon, 3e-4);
    EXPECT_EQ(sc.seeds.size(), 10u);
    EXPECT_EQ(sc.t_bar, (std::vector<int>{1, 2, 4, 8, 16}));
    const auto rep = validate_scenario(sc);
    EXPECT_TRUE(rep.ok());
    bool counts = false;
    for (const auto& i : rep.info)
        counts |= i.find("25 literal / 36 per-subband") != std::string::npos;
    EXPECT_TRUE(counts);
}

TEST(Parse, ListsRangesAndComments)
{
    const auto sc = parse("seeds = 3..5, 9  # trailing comment\nmargins = 0, 0.1\npolicies = Con, PDSGA\n");
    EXPECT_EQ(sc.seeds, (std::vector<std::uint64_t>{3, 4, 5, 9}));
    EXPECT_EQ(sc.margins, (std::vector<double>{0.0, 0.1}));
    EXPECT_EQ(sc.policies, (std::vector<std::string>{"Con", "PDSGA"}));
    EXPECT_EQ(sc.key_lines.at("margins"), 2);
}

TEST(Parse, ErrorsCarryLineNumbers)
{
    try {
        parse("horizon = 1000\n\nsnr_db = ten\n");
        FAIL();
    } catch (const ScenarioError& e) {
        EXPECT_EQ(e.code, "E_PARSE");
        EXPECT_EQ(e.line, 3);
    }
    try {
        parse("horizon = 1000\nbogus = 1\n");
        FAIL();
    } catch (const ScenarioError& e) {
        EXPECT_EQ(e.code, "E_KEY");
        EXPECT_EQ(e.line, 2);
    }
    EXPECT_THROW(parse("[links]\n1\n"), ScenarioError);
    EXPECT_THROW(parse("[nodes]\n"), ScenarioError);
    EXPECT_THROW(parse("horizon 5\n"), ScenarioError);
    EXPECT_THROW(parse("seeds = 5..2\n"), ScenarioError);
    EXPECT_THROW(parse("[links]\n1 2\n"), ScenarioError);  // tables come in pairs
    EXPECT_THROW(load_scenario("/nonexistent/file.scn"), ScenarioError);
}

TEST(Parse, ExplicitTablesMatchThePreset)
{
    const auto sc = parse(kExplicit);
    EXPECT_TRUE(sc.preset.empty());
    EXPECT_TRUE(validate_scenario(sc).ok());
    const auto a = scenario_instance(sc, 0.0), b = figure1_instance();
    EXPECT_EQ(a.dim(), b.dim());
    EXPECT_EQ(a.topo.interference, b.topo.interference);
    EXPECT_EQ(a.routing.link_membership, b.routing.link_membership);
}

TEST(Validate, RangeErrors)
{
    EXPECT_TRUE(has_code(validate_scenario(parse("fsmc.epsilon = 0.7\n")), "E_RANGE_EPSILON"));
    EXPECT_TRUE(has_code(validate_scenario(parse("fsmc.states = 2\n")), "E_RANGE_STATES"));
    EXPECT_TRUE(has_code(validate_scenario(parse("t_bar = 0, 2\n")), "E_RANGE_TBAR"));
    EXPECT_TRUE(has_code(validate_scenario(parse("seeds = 1, 1\n")), "E_SEEDS_DUP"));
    EXPECT_TRUE(has_code(validate_scenario(parse("policies = Foo\n")), "E_POLICY"));
    EXPECT_TRUE(has_code(validate_scenario(parse("margins = 0, 1.5\n")), "E_RANGE_MARGIN"));
    EXPECT_TRUE(has_code(validate_scenario(parse("horizon = 5000\n")), "E_HORIZON"));
    EXPECT_TRUE(has_code(validate_scenario(parse("p_max = 1, 2\n")), "E_SIZE_PMAX"));
    EXPECT_TRUE(has_code(validate_scenario(parse("preset = fig9\n")), "E_PRESET"));
}

TEST(Validate, BrokenRouteIsReported)
{
    std::string text = kExplicit;
    text.replace(text.find("1 1 6 : 3 7 8"), 13, "1 1 6 : 3 8  ");
    EXPECT_TRUE(has_code(validate_scenario(parse(text)), "E_ROUTE_PATH"));
}

TEST(Validate, DoubleInterferenceMembershipIsAPartitionError)
{
    // Scenario tables cannot express this directly; build the topology by hand.
    auto [t, r] = builtin_figure1();
    t.interference[2].push_back(0);
    bool found = false;
    for (const auto& e : check_topology(t))
        found |= e.rfind("E_TOPO_PARTITION", 0) == 0;
    EXPECT_TRUE(found);
}

TEST(Hash, DependsOnResultsNotOnOutputDirectory)
{
    const auto a = parse("horizon = 20000\nout = a\n");
    const auto b = parse("horizon = 20000\nout = b\n");
    const auto c = parse("horizon = 20001\nout = a\n");
    EXPECT_EQ(config_hash(a), config_hash(b));
    EXPECT_NE(config_hash(a), config_hash(c));
    EXPECT_EQ(config_hash(a).size(), 16u);
    EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
    EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}

TEST(Harness, Fig4IsSelfNormalizedAndDeterministic)
{
    auto sc = parse("fsmc.epsilon = 3e-3\nhorizon = 12000\nfig4.horizon = 150\nfig4.policies = PDSGA, Con\n");
    const auto base = std::filesystem::temp_directory_path() / "pdsga_harness_test";
    std::filesystem::remove_all(base);
    for (const char* d : {"a", "b"}) {
        HarnessOptions o;
        o.out_dir = (base / d).string();
        Experiment ex(sc, o);
        ex.run("fig4");
    }
    const auto a = slurp((base / "a" / "fig4.csv").string());
    const auto b = slurp((base / "b" / "fig4.csv").string());
    ASSERT_FALSE(a.empty());
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.rfind("# config_hash=" + config_hash(sc), 0), 0u);
    EXPECT_EQ(a.find('\r'), std::string::npos);

    // Each utility column peaks at exactly 1.
    std::istringstream is(a);
    std::string line;
    std::getline(is, line);
    std::getline(is, line);
    std::vector<double> peak(3, 0.0);
    int rows = 0;
    while (std::getline(is, line)) {
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        for (int c = 0; c < 3; ++c) {
            std::getline(ss, cell, ',');
            peak[c] = std::max(peak[c], std::stod(cell));
        }
        ++rows;
    }
    EXPECT_EQ(rows, 150);
    for (double p : peak)
        EXPECT_EQ(p, 1.0);

    const auto manifest = nlohmann::json::parse(slurp((base / "a" / "manifest.json").string()));
    EXPECT_EQ(manifest["config_hash"], config_hash(sc));
    EXPECT_EQ(manifest["rows"][(base / "a" / "fig4.csv").string()], 150);
    std::filesystem::remove_all(base);
}

TEST(Harness, ParallelForMatchesSerial)
{
    std::vector<double> a(64), b(64);
    parallel_for(64, 1, [&](int i) { a[i] = std::sqrt(double(i)); });
    parallel_for(64, 4, [&](int i) { b[i] = std::sqrt(double(i)); });
    EXPECT_EQ(a, b);
    EXPECT_THROW(parallel_for(8, 3, [](int i) {
                     if (i == 5)
                         throw std::runtime_error("boom");
                 }),
                 std::runtime_error);
}

TEST(Harness, CsvNumberFormat)
{
    EXPECT_EQ(fmt(0.1), "0.1");
    EXPECT_EQ(fmt(1.0 / 3.0), "0.3333333333");
    EXPECT_EQ(fmt(std::nan("")), "nan");
    EXPECT_EQ(fmt(-std::numeric_limits<double>::infinity()), "-inf");
}

TEST(Harness, EpsilonSweepAddsCellsAtTheFirstUpdatePeriod)
{
    auto sc = parse("fsmc.epsilon = 3e-3\nfsmc.epsilon_grid = 1e-3, 6e-3\nt_bar = 2, 4\nhorizon = 3000\n"
                    "seeds = 1\npolicies = PDSGA\n");
    Experiment ex(sc, {});
    const auto& cells = ex.sweep({"PDSGA"});
    ASSERT_EQ(cells.size(), 4u);
    EXPECT_EQ(cells[1].t_bar, 4);
    EXPECT_EQ(cells[1].epsilon, 3e-3);
    for (int i : {2, 3}) {
        EXPECT_EQ(cells[i].t_bar, 2);
        EXPECT_NEAR(cells[i].n_bar, 1.0 / (1.0 - std::pow(1.0 - 2.0 * cells[i].epsilon, 16)), 1e-10);
        EXPECT_DOUBLE_EQ(cells[i].ratio, 2.0 / cells[i].n_bar);
    }
    EXPECT_EQ(cells[2].epsilon, 1e-3);
    EXPECT_GT(cells[2].n_bar, cells[3].n_bar);
}
