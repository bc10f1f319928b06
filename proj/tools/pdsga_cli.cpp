// Command-line driver: validates scenarios and regenerates the figure and table CSVs.
//
//   pdsga validate --scenario scenarios/fig1.scn
//   pdsga fig5 --scenario scenarios/fig1.scn --out results --jobs 8
//
// Exit codes: 0 ok, 1 invalid input, 2 runtime failure.

#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "pdsga/harness.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kRuntime = 2;

struct Args {
    std::string scenario;
    std::string out;
    std::string seeds;
    std::string checkpoint;
    long horizon = 0;
    int jobs = 1;
    bool quiet = false;
};

int validate(const pdsga::Scenario& sc)
{
    const auto rep = pdsga::validate_scenario(sc);
    for (const auto& d : rep.errors)
        std::cout << "error " << d.code << ": " << d.message << '\n';
    for (const auto& i : rep.info)
        std::cout << "info: " << i << '\n';
    std::cout << (rep.ok() ? "valid" : "invalid") << " (config_hash=" << pdsga::config_hash(sc) << ")\n";
    return rep.ok() ? kOk : kInvalid;
}

int run(const std::string& sub, const Args& a)
{
    pdsga::Scenario sc;
    try {
        sc = pdsga::load_scenario(a.scenario);
        if (!a.seeds.empty()) {
            sc.seeds.clear();
            for (long s : pdsga::detail::parse_longs(a.seeds, 0)) {
                if (s < 0)
                    throw pdsga::ScenarioError("E_PARSE", 0, "--seeds must be nonnegative");
                sc.seeds.push_back(static_cast<std::uint64_t>(s));
            }
            if (sc.seeds.empty())
                throw pdsga::ScenarioError("E_PARSE", 0, "--seeds is empty");
        }
        if (a.horizon > 0)
            sc.horizon = a.horizon;
        if (sub == "validate")
            return validate(sc);
        const auto rep = pdsga::validate_scenario(sc);
        if (!rep.ok()) {
            for (const auto& d : rep.errors)
                std::cerr << "error " << d.code << ": " << d.message << '\n';
            return kInvalid;
        }
    } catch (const pdsga::ScenarioError& e) {
        std::cerr << "error " << e.what() << '\n';
        return kInvalid;
    }

    // --out beats PDSGA_OUT_DIR, which beats the scenario's `out` key.
    std::string out = sc.out_dir;
    if (const char* env = std::getenv("PDSGA_OUT_DIR"); env && *env)
        out = env;
    if (!a.out.empty())
        out = a.out;

    try {
        pdsga::HarnessOptions opt;
        opt.out_dir = out;
        opt.jobs = a.jobs;
        opt.checkpoint_dir = a.checkpoint;
        opt.log = a.quiet ? nullptr : &std::cerr;
        pdsga::Experiment ex(sc, opt);
        ex.run(sub);
        for (const auto& f : ex.outputs())
            std::cout << f << '\n';
    } catch (const pdsga::ScenarioError& e) {
        std::cerr << "error " << e.what() << '\n';
        return kInvalid;
    } catch (const std::exception& e) {
        std::cerr << "runtime failure: " << e.what() << '\n';
        return kRuntime;
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Tracking experiments for the primal-dual scaled gradient algorithm"};
    app.set_version_flag("--version", pdsga::kToolVersion);
    app.require_subcommand(1, 1);

    Args a;
    std::string chosen;
    for (const char* name : {"validate", "fig4", "fig5", "fig6", "fig7", "fig8", "table1", "all"}) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--scenario", a.scenario, "scenario file")->required();
        sub->add_option("--out", a.out, "output directory (overrides PDSGA_OUT_DIR)");
        sub->add_option("--seeds", a.seeds, "seed list, e.g. 1..10 or 1,4,7");
        sub->add_option("--jobs", a.jobs, "worker threads")->check(CLI::PositiveNumber);
        sub->add_option("--horizon", a.horizon, "slots per run")->check(CLI::PositiveNumber);
        sub->add_option("--checkpoint", a.checkpoint, "directory for equilibrium cache checkpoints");
        sub->add_flag("--quiet", a.quiet, "suppress progress on stderr");
        sub->callback([&chosen, sub] { chosen = sub->get_name(); });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kInvalid;
    }
    return run(chosen, a);
}
