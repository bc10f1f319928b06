#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <type_traits>
#include <vector>

#include "equilibrium.hpp"
#include "metrics.hpp"
#include "fsmc.hpp"
#include "network.hpp"
#include "problem.hpp"
#include "scaling.hpp"

namespace pdsga {

// Scenario files are line oriented:
//
//   # comment
//   key = value            scalars; lists are comma separated; "a..b" expands integer ranges
//   [links]                one "tx rx" pair per line, 1-based nodes
//   [commodities]          "source index destination : link link ...", 1-based
//
// A preset (preset = fig1) supplies the tables; explicit tables replace it.
struct Scenario {
    std::string name;
    std::string preset = "fig1";
    int num_nodes = 0;
    std::vector<std::pair<int, int>> links;  // 0-based
    std::vector<Commodity> commodities;      // 0-based

    int num_subbands = 2;
    double snr_db = 10.0;
    std::vector<double> p_max = {1.0};      // one value for all nodes, or one per node
    std::vector<double> weights = {1.0};    // one value for all commodities, or one per commodity
    double prox_weight = 0.1;

    int fsmc_states = 3;
    double epsilon = 0.05;
    std::vector<double> epsilon_grid;  // optional sweep at the first t_bar

    std::vector<int> t_bar = {1, 2, 4, 8, 16};
    long horizon = 200000;
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    std::vector<std::string> policies = {"PDSGA", "Dia", "Con"};
    std::vector<double> margins = {0.0, 0.05, 0.1, 0.2};
    double outage_epsilon = 0.0;

    double xi = 0.005;
    double pd_floor = 1e-3;
    double step_cap = 10.0;
    double relaxation = 0.5;
    int brute_evals = 200;

    int beta_states = 20;
    int beta_samples = 32;
    double beta_perturbation = 0.05;

    long fig4_horizon = 3000;
    int fig4_t_bar = 1;
    std::vector<std::string> fig4_policies = {"Bru", "PDSGA", "Dia", "Con"};
    std::vector<double> fig8_ratios = {0.05, 0.2, 0.8};

    double equilibrium_tolerance = 1e-6;
    double failure_threshold = 0.01;
    std::string out_dir = "results";

    std::map<std::string, int> key_lines;  // where each key was set, for diagnostics
};

class ScenarioError : public std::runtime_error {
public:
    ScenarioError(const std::string& code, int line, const std::string& msg)
        : std::runtime_error(code + (line > 0 ? " (line " + std::to_string(line) + ")" : "") + ": " + msg),
          code(code), line(line)
    {
    }
    std::string code;
    int line;
};

namespace detail {

inline std::string trim(const std::string& s)
{
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos)
        return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_list(const std::string& v)
{
    std::vector<std::string> out;
    std::string cur;
    std::stringstream ss(v);
    while (std::getline(ss, cur, ','))
        if (!trim(cur).empty())
            out.push_back(trim(cur));
    return out;
}

inline double parse_double(const std::string& s, int line)
{
    std::istringstream is(s);
    is.imbue(std::locale::classic());
    double v;
    if (!(is >> v) || !(is >> std::ws).eof())
        throw ScenarioError("E_PARSE", line, "expected a number, got '" + s + "'");
    return v;
}

inline long parse_long(const std::string& s, int line)
{
    std::size_t pos = 0;
    long v = 0;
    try {
        v = std::stol(s, &pos);
    } catch (...) {
        pos = 0;
    }
    if (pos == 0 || pos != s.size())
        throw ScenarioError("E_PARSE", line, "expected an integer, got '" + s + "'");
    return v;
}

inline std::vector<double> parse_doubles(const std::string& v, int line)
{
    std::vector<double> out;
    for (const auto& t : split_list(v))
        out.push_back(parse_double(t, line));
    return out;
}

// Integers with "a..b" ranges.
inline std::vector<long> parse_longs(const std::string& v, int line)
{
    std::vector<long> out;
    for (const auto& t : split_list(v)) {
        const auto dots = t.find("..");
        if (dots == std::string::npos) {
            out.push_back(parse_long(t, line));
            continue;
        }
        const long a = parse_long(trim(t.substr(0, dots)), line), b = parse_long(trim(t.substr(dots + 2)), line);
        if (b < a || b - a > 100000)
            throw ScenarioError("E_PARSE", line, "bad range '" + t + "'");
        for (long x = a; x <= b; ++x)
            out.push_back(x);
    }
    return out;
}

}  // namespace detail

inline Scenario parse_scenario(std::istream& in, const std::string& name = "<scenario>")
{
    using namespace detail;
    Scenario sc;
    sc.name = name;
    std::string raw, section;
    int line = 0;
    bool have_links = false, have_commodities = false;
    while (std::getline(in, raw)) {
        ++line;
        std::string s = trim(raw.substr(0, raw.find('#')));
        if (s.empty())
            continue;
        if (s.front() == '[') {
            if (s.back() != ']')
                throw ScenarioError("E_PARSE", line, "unterminated section header");
            section = trim(s.substr(1, s.size() - 2));
            if (section != "links" && section != "commodities")
                throw ScenarioError("E_PARSE", line, "unknown section [" + section + "]");
            if (section == "links") {
                have_links = true;
                sc.links.clear();
            } else {
                have_commodities = true;
                sc.commodities.clear();
            }
            continue;
        }
        if (section == "links") {
            std::istringstream is(s);
            long a, b;
            if (!(is >> a >> b) || !(is >> std::ws).eof())
                throw ScenarioError("E_PARSE", line, "link rows are 'tx rx'");
            sc.links.emplace_back(static_cast<int>(a - 1), static_cast<int>(b - 1));
            continue;
        }
        if (section == "commodities") {
            const auto colon = s.find(':');
            if (colon == std::string::npos)
                throw ScenarioError("E_PARSE", line, "commodity rows are 'source index destination : links'");
            std::istringstream head(s.substr(0, colon)), tail(s.substr(colon + 1));
            long src, idx, dst, l;
            if (!(head >> src >> idx >> dst) || !(head >> std::ws).eof())
                throw ScenarioError("E_PARSE", line, "commodity rows are 'source index destination : links'");
            Commodity c;
            c.source = static_cast<int>(src - 1);
            c.index = static_cast<int>(idx - 1);
            c.destination = static_cast<int>(dst - 1);
            while (tail >> l)
                c.links.push_back(static_cast<int>(l - 1));
            if (!tail.eof())
                throw ScenarioError("E_PARSE", line, "non-numeric link in commodity row");
            sc.commodities.push_back(c);
            continue;
        }
        const auto eq = s.find('=');
        if (eq == std::string::npos)
            throw ScenarioError("E_PARSE", line, "expected 'key = value'");
        const std::string key = trim(s.substr(0, eq)), val = trim(s.substr(eq + 1));
        if (val.empty())
            throw ScenarioError("E_PARSE", line, "empty value for '" + key + "'");
        sc.key_lines[key] = line;
        auto one = [&](auto v) {
            if (v.size() != 1)
                throw ScenarioError("E_PARSE", line, "'" + key + "' takes a single value");
            return v[0];
        };
        if (key == "preset")
            sc.preset = val;
        else if (key == "num_nodes")
            sc.num_nodes = static_cast<int>(one(parse_longs(val, line)));
        else if (key == "num_subbands")
            sc.num_subbands = static_cast<int>(one(parse_longs(val, line)));
        else if (key == "snr_db")
            sc.snr_db = one(parse_doubles(val, line));
        else if (key == "p_max")
            sc.p_max = parse_doubles(val, line);
        else if (key == "weights")
            sc.weights = parse_doubles(val, line);
        else if (key == "prox_weight")
            sc.prox_weight = one(parse_doubles(val, line));
        else if (key == "fsmc.states")
            sc.fsmc_states = static_cast<int>(one(parse_longs(val, line)));
        else if (key == "fsmc.epsilon")
            sc.epsilon = one(parse_doubles(val, line));
        else if (key == "fsmc.epsilon_grid")
            sc.epsilon_grid = parse_doubles(val, line);
        else if (key == "t_bar") {
            sc.t_bar.clear();
            for (long v : parse_longs(val, line))
                sc.t_bar.push_back(static_cast<int>(v));
        } else if (key == "horizon")
            sc.horizon = one(parse_longs(val, line));
        else if (key == "seeds") {
            sc.seeds.clear();
            for (long v : parse_longs(val, line)) {
                if (v < 0)
                    throw ScenarioError("E_PARSE", line, "seeds must be nonnegative");
                sc.seeds.push_back(static_cast<std::uint64_t>(v));
            }
        } else if (key == "policies")
            sc.policies = split_list(val);
        else if (key == "margins")
            sc.margins = parse_doubles(val, line);
        else if (key == "outage_epsilon")
            sc.outage_epsilon = one(parse_doubles(val, line));
        else if (key == "xi")
            sc.xi = one(parse_doubles(val, line));
        else if (key == "pd_floor")
            sc.pd_floor = one(parse_doubles(val, line));
        else if (key == "step_cap")
            sc.step_cap = one(parse_doubles(val, line));
        else if (key == "relaxation")
            sc.relaxation = one(parse_doubles(val, line));
        else if (key == "brute_evals")
            sc.brute_evals = static_cast<int>(one(parse_longs(val, line)));
        else if (key == "beta.states")
            sc.beta_states = static_cast<int>(one(parse_longs(val, line)));
        else if (key == "beta.samples")
            sc.beta_samples = static_cast<int>(one(parse_longs(val, line)));
        else if (key == "beta.perturbation")
            sc.beta_perturbation = one(parse_doubles(val, line));
        else if (key == "fig4.horizon")
            sc.fig4_horizon = one(parse_longs(val, line));
        else if (key == "fig4.t_bar")
            sc.fig4_t_bar = static_cast<int>(one(parse_longs(val, line)));
        else if (key == "fig4.policies")
            sc.fig4_policies = split_list(val);
        else if (key == "fig8.ratios")
            sc.fig8_ratios = parse_doubles(val, line);
        else if (key == "equilibrium_tolerance")
            sc.equilibrium_tolerance = one(parse_doubles(val, line));
        else if (key == "failure_threshold")
            sc.failure_threshold = one(parse_doubles(val, line));
        else if (key == "out")
            sc.out_dir = val;
        else
            throw ScenarioError("E_KEY", line, "unknown key '" + key + "'");
    }
    if (have_links || have_commodities) {
        if (!(have_links && have_commodities))
            throw ScenarioError("E_PARSE", 0, "explicit topology needs both [links] and [commodities]");
        sc.preset = "";
    }
    return sc;
}

inline Scenario load_scenario(const std::string& path)
{
    std::ifstream f(path);
    if (!f)
        throw ScenarioError("E_IO", 0, "cannot open " + path);
    return parse_scenario(f, path);
}

inline std::pair<Topology, RoutingTable> scenario_network(const Scenario& sc)
{
    if (sc.preset == "fig1")
        return builtin_figure1(sc.num_subbands);
    if (!sc.preset.empty())
        throw ScenarioError("E_PRESET", sc.key_lines.count("preset") ? sc.key_lines.at("preset") : 0,
                            "unknown preset '" + sc.preset + "'");
    int nodes = sc.num_nodes;
    for (auto [a, b] : sc.links)
        nodes = std::max({nodes, a + 1, b + 1});
    Topology t = make_topology(nodes, sc.num_subbands, sc.links);
    return {t, make_routing(t, sc.commodities)};
}

inline ScalingPolicy policy_from_name(const Scenario& sc, const std::string& name)
{
    ScalingPolicy p;
    if (name == "Con")
        p.kind = PolicyKind::Constant;
    else if (name == "Dia")
        p.kind = PolicyKind::DiagonalHessian;
    else if (name == "PDSGA")
        p.kind = PolicyKind::BlockDiagonalAdaptive;
    else if (name == "PDSGA-node") {
        p.kind = PolicyKind::BlockDiagonalAdaptive;
        p.grouping = Grouping::Node;
    } else if (name == "Bru")
        p.kind = PolicyKind::BruteForce;
    else if (name == "Bru-node") {
        p.kind = PolicyKind::BruteForce;
        p.grouping = Grouping::Node;
    } else
        throw ScenarioError("E_POLICY", 0, "unknown policy '" + name + "'");
    p.xi = sc.xi;
    p.pd_floor = sc.pd_floor;
    p.step_cap = sc.step_cap;
    p.relaxation = sc.relaxation;
    p.brute_evals = sc.brute_evals;
    return p;
}

inline ProblemInstance scenario_instance(const Scenario& sc, double margin)
{
    auto [t, r] = scenario_network(sc);
    ProblemParams pp;
    pp.snr_db = sc.snr_db;
    pp.prox_weight = sc.prox_weight;
    pp.p_max = sc.p_max.size() == 1 ? std::vector<double>(t.num_nodes, sc.p_max[0]) : sc.p_max;
    const int R = static_cast<int>(r.commodities.size());
    pp.weights = sc.weights.size() == 1 ? std::vector<double>(R, sc.weights[0]) : sc.weights;
    pp.margin.assign(t.num_nodes, margin);
    return make_instance(t, r, pp);
}

inline ChannelProcess scenario_process(const Scenario& sc, const ProblemInstance& in, std::uint64_t seed,
                                       double epsilon)
{
    return ChannelProcess::uniform(in.idx.L, in.idx.NF, sc.fsmc_states, epsilon, seed);
}

struct Diagnostic {
    std::string code;
    std::string message;
};

struct ValidationReport {
    std::vector<Diagnostic> errors;
    std::vector<std::string> info;
    bool ok() const { return errors.empty(); }
};

// Structural checks only; nothing is simulated.
inline ValidationReport validate_scenario(const Scenario& sc)
{
    ValidationReport rep;
    auto err = [&](const std::string& code, const std::string& msg) { rep.errors.push_back({code, msg}); };

    if (sc.fsmc_states < 3)
        err("E_RANGE_STATES", "fsmc.states must be >= 3");
    auto eps_ok = [](double e) { return e > 0.0 && e <= 0.5; };
    if (!eps_ok(sc.epsilon))
        err("E_RANGE_EPSILON", "fsmc.epsilon must lie in (0, 1/2]");
    for (double e : sc.epsilon_grid)
        if (!eps_ok(e))
            err("E_RANGE_EPSILON", "fsmc.epsilon_grid entries must lie in (0, 1/2]");
    if (sc.num_subbands < 1)
        err("E_RANGE_SUBBANDS", "num_subbands must be >= 1");
    if (sc.t_bar.empty())
        err("E_GRID_EMPTY", "t_bar grid is empty");
    for (int t : sc.t_bar)
        if (t < 1)
            err("E_RANGE_TBAR", "t_bar entries must be >= 1");
    if (sc.seeds.empty())
        err("E_GRID_EMPTY", "seed list is empty");
    if (std::set<std::uint64_t>(sc.seeds.begin(), sc.seeds.end()).size() != sc.seeds.size())
        err("E_SEEDS_DUP", "seeds must be distinct");
    if (sc.policies.empty())
        err("E_GRID_EMPTY", "policy list is empty");
    if (sc.margins.empty())
        err("E_GRID_EMPTY", "margin list is empty");
    if (sc.fig8_ratios.empty())
        err("E_GRID_EMPTY", "fig8.ratios is empty");
    for (double r : sc.fig8_ratios)
        if (!(r > 0.0))
            err("E_RANGE_RATIO", "fig8.ratios must be positive");
    for (const auto& list : {sc.policies, sc.fig4_policies})
        for (const auto& p : list) {
            try {
                policy_from_name(sc, p);
            } catch (const ScenarioError& e) {
                err(e.code, e.what());
            }
        }
    if (!(sc.xi > 0.0) || !(sc.pd_floor > 0.0) || !(sc.step_cap > 0.0) || !(sc.relaxation > 0.0))
        err("E_RANGE_SCALING", "xi, pd_floor, step_cap and relaxation must be positive");
    if (!(sc.prox_weight >= 0.0))
        err("E_RANGE_PROX", "prox_weight must be nonnegative");
    if (!(sc.equilibrium_tolerance > 0.0))
        err("E_RANGE_TOL", "equilibrium_tolerance must be positive");
    if (!(sc.outage_epsilon >= 0.0))
        err("E_RANGE_OUTAGE", "outage_epsilon must be nonnegative");
    if (sc.beta_states < 1 || sc.beta_samples < 0 || !(sc.beta_perturbation >= 0.0))
        err("E_RANGE_BETA", "beta.states >= 1, beta.samples >= 0 and beta.perturbation >= 0 required");
    const int tmax = sc.t_bar.empty() ? 1 : *std::max_element(sc.t_bar.begin(), sc.t_bar.end());
    if (!sc.t_bar.empty()) {
        const long updates = sc.horizon / tmax;
        const long kept = updates - burn_in_count(updates, BurnIn{});
        if (kept < 1000)
            err("E_HORIZON", "horizon leaves " + std::to_string(kept) + " updates after burn-in at t_bar = " +
                                 std::to_string(tmax) + " (need >= 1000)");
    }

    Topology topo;
    RoutingTable routing;
    try {
        std::tie(topo, routing) = scenario_network(sc);
    } catch (const ScenarioError& e) {
        err(e.code, e.what());
        return rep;
    } catch (const std::invalid_argument& e) {
        err("E_TOPO", e.what());
        return rep;
    }
    for (const auto& m : check_topology(topo))
        err(m.substr(0, m.find(':')), m.substr(m.find(':') + 2));
    for (const auto& m : check_routing(topo, routing))
        err(m.substr(0, m.find(':')), m.substr(m.find(':') + 2));
    if (sc.p_max.size() != 1 && static_cast<int>(sc.p_max.size()) != topo.num_nodes)
        err("E_SIZE_PMAX", "p_max needs one value or one per node");
    if (sc.weights.size() != 1 && sc.weights.size() != routing.commodities.size())
        err("E_SIZE_WEIGHTS", "weights need one value or one per commodity");
    for (double p : sc.p_max)
        if (!(p > 0.0))
            err("E_RANGE_PMAX", "power budgets must be positive");
    for (double w : sc.weights)
        if (!(w > 0.0))
            err("E_RANGE_WEIGHTS", "weights must be positive");
    const double pmin = sc.p_max.empty() ? 0.0 : *std::min_element(sc.p_max.begin(), sc.p_max.end());
    for (double K : sc.margins)
        if (!(K >= 0.0 && K < pmin))
            err("E_RANGE_MARGIN", "margins must lie in [0, min p_max)");
    if (!rep.ok())
        return rep;

    const auto cnt = constraint_count(topo, routing);
    rep.info.push_back("constraints: " + std::to_string(cnt.literal) + " literal / " +
                       std::to_string(cnt.per_subband) + " per-subband");

    // Slater probe: a strictly interior point under the weakest gain level and the largest margin.
    const double kmax = *std::max_element(sc.margins.begin(), sc.margins.end());
    const ProblemInstance in = scenario_instance(sc, kmax);
    const double gmin = rayleigh_gain_levels(sc.fsmc_states).front();
    const Mat g = Mat::Constant(in.idx.L, in.idx.NF, gmin);
    const Vec y = detail::interior_start(in, g, nullptr);
    const Vec s = constraint_slacks(in, y, g);
    if (!(s.minCoeff() > 0.0) || !(y.head(in.idx.primal_dim()).minCoeff() > 0.0))
        err("E_SLATER", "no strictly feasible point found at the weakest channel state");
    else
        rep.info.push_back("slater: strictly feasible point found (min slack " + std::to_string(s.minCoeff()) + ")");
    rep.info.push_back("dimension: " + std::to_string(in.dim()) + " (primal " + std::to_string(in.idx.primal_dim()) +
                       ", constraints " + std::to_string(in.idx.dual_dim()) + ")");
    return rep;
}

// Canonical key=value view of everything that affects results; the output directory is excluded.
inline std::map<std::string, std::string> canonical_config(const Scenario& sc)
{
    auto num = [](double v) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    auto list = [&](const auto& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i)
                s += ',';
            if constexpr (std::is_same_v<std::decay_t<decltype(v[i])>, std::string>)
                s += v[i];
            else
                s += num(static_cast<double>(v[i]));
        }
        return s;
    };
    std::map<std::string, std::string> m;
    m["preset"] = sc.preset;
    std::string links;
    for (auto [a, b] : sc.links)
        links += std::to_string(a) + ">" + std::to_string(b) + ";";
    m["links"] = links;
    std::string com;
    for (const auto& c : sc.commodities) {
        com += std::to_string(c.source) + "/" + std::to_string(c.index) + ">" + std::to_string(c.destination) + ":";
        for (int l : c.links)
            com += std::to_string(l) + ".";
        com += ";";
    }
    m["commodities"] = com;
    m["num_nodes"] = std::to_string(sc.num_nodes);
    m["num_subbands"] = std::to_string(sc.num_subbands);
    m["snr_db"] = num(sc.snr_db);
    m["p_max"] = list(sc.p_max);
    m["weights"] = list(sc.weights);
    m["prox_weight"] = num(sc.prox_weight);
    m["fsmc.states"] = std::to_string(sc.fsmc_states);
    m["fsmc.epsilon"] = num(sc.epsilon);
    m["fsmc.epsilon_grid"] = list(sc.epsilon_grid);
    m["t_bar"] = list(sc.t_bar);
    m["horizon"] = std::to_string(sc.horizon);
    m["seeds"] = list(sc.seeds);
    m["policies"] = list(sc.policies);
    m["margins"] = list(sc.margins);
    m["outage_epsilon"] = num(sc.outage_epsilon);
    m["xi"] = num(sc.xi);
    m["pd_floor"] = num(sc.pd_floor);
    m["step_cap"] = num(sc.step_cap);
    m["relaxation"] = num(sc.relaxation);
    m["brute_evals"] = std::to_string(sc.brute_evals);
    m["beta.states"] = std::to_string(sc.beta_states);
    m["beta.samples"] = std::to_string(sc.beta_samples);
    m["beta.perturbation"] = num(sc.beta_perturbation);
    m["fig4.horizon"] = std::to_string(sc.fig4_horizon);
    m["fig4.t_bar"] = std::to_string(sc.fig4_t_bar);
    m["fig4.policies"] = list(sc.fig4_policies);
    m["fig8.ratios"] = list(sc.fig8_ratios);
    m["equilibrium_tolerance"] = num(sc.equilibrium_tolerance);
    m["failure_threshold"] = num(sc.failure_threshold);
    return m;
}

inline std::string fnv1a_hex(const std::string& s)
{
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string config_hash(const Scenario& sc)
{
    std::string s;
    for (const auto& [k, v] : canonical_config(sc))
        s += k + "=" + v + "\n";
    return fnv1a_hex(s);
}

}  // namespace pdsga
