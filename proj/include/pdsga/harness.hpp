#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "equilibrium.hpp"
#include "fsmc.hpp"
#include "metrics.hpp"
#include "problem.hpp"
#include "scaling.hpp"
#include "scenario.hpp"
#include "solver.hpp"

namespace pdsga {

inline constexpr const char* kToolVersion = "0.1.0";

// Locale-independent number formatting for CSV output.
inline std::string fmt(double v)
{
    if (std::isnan(v))
        return "nan";
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::string& hash, const std::string& what,
              const std::vector<std::string>& columns)
        : f_(path, std::ios::binary), path_(path)
    {
        if (!f_)
            throw std::runtime_error("cannot write " + path);
        f_ << "# config_hash=" << hash << " data=" << what << '\n';
        row(columns);
    }
    void row(const std::vector<std::string>& cells)
    {
        for (std::size_t i = 0; i < cells.size(); ++i)
            f_ << (i ? "," : "") << cells[i];
        f_ << '\n';
        ++rows_;
    }
    long data_rows() const { return rows_ - 1; }
    const std::string& path() const { return path_; }

private:
    std::ofstream f_;
    std::string path_;
    long rows_ = 0;
};

// Runs fn(i) for i in [0, n) on `jobs` threads; results are written by index so the
// outcome does not depend on scheduling.
inline void parallel_for(int n, int jobs, const std::function<void(int)>& fn)
{
    if (jobs <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr err;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (int t = 0; t < std::min(jobs, n); ++t)
        pool.emplace_back([&] {
            for (int i; (i = next++) < n;) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lk(mu);
                    if (!err)
                        err = std::current_exception();
                }
            }
        });
    for (auto& th : pool)
        th.join();
    if (err)
        std::rethrow_exception(err);
}

struct HarnessOptions {
    std::string out_dir;
    int jobs = 1;
    std::string checkpoint_dir;  // load/save equilibrium caches here when set
    std::ostream* log = nullptr;
};

struct BetaRow {
    std::string policy;
    double avg = 0.0;
    double worst = 0.0;
    std::vector<double> per_state;
};

struct SweepCell {
    std::string policy;
    int t_bar = 1;
    double epsilon = 0.0;
    double n_bar = 0.0;
    double ratio = 0.0;
    std::vector<double> out_of_region, eae, mse;  // one per seed
    long failures = 0;
    long updates = 0;
    bool diverged = false;
};

struct Fig8Cell {
    double margin = 0.0;
    double ratio = 0.0;
    int t_bar = 1;
    std::vector<double> outage, mse;
    double delta_hat = 0.0;
};

class Experiment {
public:
    Experiment(Scenario sc, HarnessOptions opt) : sc_(std::move(sc)), opt_(std::move(opt))
    {
        hash_ = config_hash(sc_);
        base_ = scenario_instance(sc_, 0.0);
        auto p = scenario_process(sc_, base_, 0, sc_.epsilon);
        n_bar_ = mean_sojourn_slots(p);
        if (!opt_.out_dir.empty())
            std::filesystem::create_directories(opt_.out_dir);
        started_ = std::chrono::steady_clock::now();
    }

    const Scenario& scenario() const { return sc_; }
    const std::string& hash() const { return hash_; }
    double n_bar() const { return n_bar_; }
    const ProblemInstance& instance() const { return base_; }

    EquilibriumCache& cache(double margin)
    {
        std::lock_guard lk(cache_mu_);
        auto it = caches_.find(margin);
        if (it != caches_.end())
            return *it->second;
        EquilibriumOptions eo;
        eo.tolerance = sc_.equilibrium_tolerance;
        auto c = std::make_unique<EquilibriumCache>(scenario_instance(sc_, margin), eo, cache_key(margin));
        if (!opt_.checkpoint_dir.empty()) {
            const auto path = checkpoint_path(margin);
            if (std::filesystem::exists(path)) {
                const auto n = c->load(path);
                log("loaded " + std::to_string(n) + " equilibria from " + path);
            }
        }
        return *caches_.emplace(margin, std::move(c)).first->second;
    }

    ChannelProcess process(std::uint64_t seed, double epsilon) const
    {
        return scenario_process(sc_, base_, seed, epsilon);
    }

    // Average and worst contraction estimates over the first distinct states of the first
    // seed's channel path. D is formed at each equilibrium and checked at perturbed copies.
    const std::vector<BetaRow>& betas(const std::vector<std::string>& policies)
    {
        std::vector<std::string> todo;
        for (const auto& p : policies)
            if (!beta_.count(p))
                todo.push_back(p);
        if (todo.empty())
            return beta_rows(policies);
        auto& c = cache(0.0);
        const auto states = beta_states();
        std::vector<std::shared_ptr<const Equilibrium>> eqs(states.size());
        parallel_for(static_cast<int>(states.size()), opt_.jobs, [&](int i) { eqs[i] = c.get(states[i]); });
        std::vector<std::vector<double>> vals(todo.size(), std::vector<double>(states.size()));
        parallel_for(static_cast<int>(states.size()), opt_.jobs, [&](int s) {
            const auto& e = *eqs[s];
            const Mat& g = states[s].gains;
            const LocalModel m = LocalModel::at(base_, e.y, g);
            std::mt19937_64 rng(0x9e3779b97f4a7c15ull ^ states[s].id);
            auto samples = perturbation_samples(e.y, sc_.beta_samples, sc_.beta_perturbation, rng);
            samples.insert(samples.begin(), e.y);
            auto beta_of = [&](const Mat& D) {
                return contraction_modulus_max(D, base_, g, samples, m.free, e.null_dirs);
            };
            for (std::size_t p = 0; p < todo.size(); ++p) {
                const auto pol = policy_from_name(sc_, todo[p]);
                const Mat D = compute_scaling(pol, base_, m, beta_of);
                vals[p][s] = beta_of(D);
            }
        });
        for (std::size_t p = 0; p < todo.size(); ++p) {
            BetaRow r;
            r.policy = todo[p];
            r.per_state = vals[p];
            for (double v : vals[p]) {
                r.avg += v;
                r.worst = std::max(r.worst, v);
            }
            r.avg /= vals[p].size();
            beta_[todo[p]] = r;
        }
        return beta_rows(policies);
    }

    // Distinct states in order of first visit along the first seed's path.
    std::vector<GlobalChannelState> beta_states() const
    {
        auto p = process(sc_.seeds.front(), sc_.epsilon);
        std::vector<GlobalChannelState> out;
        std::set<std::uint64_t> seen;
        for (long t = 0; t < sc_.horizon && static_cast<int>(out.size()) < sc_.beta_states; ++t) {
            if (seen.insert(p.current().id).second)
                out.push_back(p.current());
            p.step();
        }
        return out;
    }

    // Solves every state on every seed's path and returns 1.5 x the largest pairwise distance.
    double region_delta()
    {
        if (delta_ > 0.0)
            return delta_;
        auto& c = cache(0.0);
        std::vector<std::vector<GlobalChannelState>> per_seed(sc_.seeds.size());
        parallel_for(static_cast<int>(sc_.seeds.size()), opt_.jobs, [&](int i) {
            per_seed[i] = visited_states(process(sc_.seeds[i], sc_.epsilon), sc_.horizon);
        });
        std::map<std::uint64_t, GlobalChannelState> all;
        for (auto& v : per_seed)
            for (auto& s : v)
                all.emplace(s.id, s);
        std::vector<GlobalChannelState> flat;
        for (auto& [id, s] : all)
            flat.push_back(s);
        log("solving " + std::to_string(flat.size()) + " visited states");
        std::atomic<long> failures{0};
        std::vector<Vec> ys(flat.size());
        std::vector<char> ok(flat.size(), 0);
        parallel_for(static_cast<int>(flat.size()), opt_.jobs, [&](int i) {
            try {
                ys[i] = c.get(flat[i])->y;
                ok[i] = 1;
            } catch (const EquilibriumError&) {
                ++failures;
            }
        });
        check_failures(failures, static_cast<long>(flat.size()), "visited-state solves");
        std::vector<Vec> good;
        for (std::size_t i = 0; i < ys.size(); ++i)
            if (ok[i])
                good.push_back(std::move(ys[i]));
        delta_hat_ = delta_estimate(good);
        delta_ = 1.5 * delta_hat_;
        return delta_;
    }
    double delta_hat() const { return delta_hat_; }

    // Tracking runs over policy x T x seed at margin 0; shared by fig5, fig6 and fig7.
    const std::vector<SweepCell>& sweep(const std::vector<std::string>& policies)
    {
        if (sweep_done_ && sweep_policies_ == policies)
            return sweep_;
        const double delta = region_delta();
        auto& c = cache(0.0);
        struct Task {
            int cell;
            std::uint64_t seed;
            int seed_idx;
        };
        std::vector<SweepCell> cells;
        std::vector<Task> tasks;
        auto add = [&](const std::string& p, int T, double eps) {
            SweepCell cell;
            cell.policy = p;
            cell.t_bar = T;
            cell.epsilon = eps;
            cell.n_bar = eps == sc_.epsilon ? n_bar_ : mean_sojourn_slots(process(0, eps));
            cell.ratio = T / cell.n_bar;
            cell.out_of_region.assign(sc_.seeds.size(), 0.0);
            cell.eae.assign(sc_.seeds.size(), 0.0);
            cell.mse.assign(sc_.seeds.size(), 0.0);
            for (std::size_t s = 0; s < sc_.seeds.size(); ++s)
                tasks.push_back({static_cast<int>(cells.size()), sc_.seeds[s], static_cast<int>(s)});
            cells.push_back(std::move(cell));
        };
        // T sweep at the scenario epsilon, then the optional epsilon sweep at the first T.
        for (const auto& p : policies) {
            for (int T : sc_.t_bar)
                add(p, T, sc_.epsilon);
            for (double eps : sc_.epsilon_grid)
                add(p, sc_.t_bar.front(), eps);
        }
        std::vector<long> fails(tasks.size(), 0), ups(tasks.size(), 0);
        std::vector<char> div(tasks.size(), 0);
        parallel_for(static_cast<int>(tasks.size()), opt_.jobs, [&](int i) {
            const auto& tk = tasks[i];
            auto& cell = cells[tk.cell];
            const auto pol = policy_from_name(sc_, cell.policy);
            SolverConfig cfg;
            cfg.update_period = cell.t_bar;
            cfg.horizon = sc_.horizon;
            cfg.region_delta = delta;
            auto proc = process(tk.seed, cell.epsilon);
            const Vec start = c.get(proc.current())->y;
            const auto tr = run_tracking(proc, pol, cfg, c, start);
            fails[i] = tr.equilibrium_failures;
            ups[i] = static_cast<long>(tr.records.size());
            div[i] = tr.diverged;
            if (tr.diverged) {
                cell.out_of_region[tk.seed_idx] = cell.eae[tk.seed_idx] = cell.mse[tk.seed_idx] =
                    std::numeric_limits<double>::quiet_NaN();
                return;
            }
            const auto es = eae_mse(tr);
            cell.eae[tk.seed_idx] = es.eae;
            cell.mse[tk.seed_idx] = es.mse;
            cell.out_of_region[tk.seed_idx] = 1.0 - region_probability(tr, delta);
            log("  " + cell.policy + " T=" + std::to_string(cell.t_bar) + " seed=" + std::to_string(tk.seed) +
                " eae=" + fmt(es.eae));
        });
        long f = 0, u = 0;
        for (std::size_t i = 0; i < tasks.size(); ++i) {
            cells[tasks[i].cell].failures += fails[i];
            cells[tasks[i].cell].updates += ups[i];
            cells[tasks[i].cell].diverged |= div[i] != 0;
            f += fails[i];
            u += ups[i];
        }
        check_failures(f, u + f, "tracking updates");
        sweep_ = std::move(cells);
        sweep_policies_ = policies;
        sweep_done_ = true;
        return sweep_;
    }

    // Outage and MSE of the adaptive policy over margin x (T / N) at each seed.
    const std::vector<Fig8Cell>& fig8_cells()
    {
        if (fig8_done_)
            return fig8_;
        const auto pol = policy_from_name(sc_, "PDSGA");
        std::vector<Fig8Cell> cells;
        struct Task {
            int cell;
            int seed_idx;
        };
        std::vector<Task> tasks;
        for (double K : sc_.margins)
            for (double ratio : sc_.fig8_ratios) {
                Fig8Cell c;
                c.margin = K;
                c.ratio = ratio;
                c.t_bar = std::max(1, static_cast<int>(std::lround(ratio * n_bar_)));
                c.outage.assign(sc_.seeds.size(), 0.0);
                c.mse.assign(sc_.seeds.size(), 0.0);
                for (std::size_t s = 0; s < sc_.seeds.size(); ++s)
                    tasks.push_back({static_cast<int>(cells.size()), static_cast<int>(s)});
                cells.push_back(c);
            }
        for (double K : sc_.margins)
            cache(K);
        std::atomic<long> f{0}, u{0};
        parallel_for(static_cast<int>(tasks.size()), opt_.jobs, [&](int i) {
            auto& cell = cells[tasks[i].cell];
            auto& c = cache(cell.margin);
            SolverConfig cfg;
            cfg.update_period = cell.t_bar;
            cfg.horizon = sc_.horizon;
            auto proc = process(sc_.seeds[tasks[i].seed_idx], sc_.epsilon);
            const Vec start = c.get(proc.current())->y;
            const auto tr = run_tracking(proc, pol, cfg, c, start);
            f += tr.equilibrium_failures;
            u += static_cast<long>(tr.records.size());
            const auto pts = outage_probability({{cell.margin, &tr}}, ConstraintFamily::Power, sc_.outage_epsilon);
            cell.outage[tasks[i].seed_idx] = pts[0].empirical;
            cell.mse[tasks[i].seed_idx] = eae_mse(tr).mse;
        });
        check_failures(f, u + f, "fig8 updates");
        for (auto& cell : cells) {
            std::vector<Vec> ys;
            for (const auto& [id, e] : cache(cell.margin).snapshot())
                ys.push_back(e->y);
            cell.delta_hat = ys.size() >= 2 ? delta_estimate(ys) : 0.0;
        }
        fig8_ = std::move(cells);
        fig8_done_ = true;
        return fig8_;
    }

    // Lipschitz constant of the largest per-node power constraint over the power box.
    double power_lipschitz()
    {
        const auto& ix = base_.idx;
        Vec lo = Vec::Zero(ix.dim()), hi = Vec::Zero(ix.dim());
        for (int l = 0; l < ix.L; ++l)
            for (int n = 0; n < ix.NF; ++n)
                hi(ix.P(l, n)) = base_.p_max[base_.topo.links[l].first];
        auto g = [&](const Vec& y) {
            double m = -std::numeric_limits<double>::infinity();
            for (int k = 0; k < ix.K; ++k) {
                double v = -base_.p_max[k];
                for (int l : base_.topo.outgoing[k])
                    for (int n = 0; n < ix.NF; ++n)
                        v += y(ix.P(l, n));
                m = std::max(m, v);
            }
            return m;
        };
        std::mt19937_64 rng(12345);
        return lipschitz_estimate(g, lo, hi, 2000, rng).c_hat;
    }

    // Outage bound for a fig8 cell from the worst adaptive modulus; nan when that is >= 1.
    double outage_bound(const Fig8Cell& c)
    {
        const double beta = betas({"PDSGA"})[0].worst;
        if (!(beta < 1.0))
            return std::nan("");
        if (!(c_hat_ >= 0.0))
            c_hat_ = power_lipschitz();
        return bound_values(beta, c.t_bar, n_bar_, 1.5 * c.delta_hat, c_hat_, sc_.outage_epsilon, c.margin).outage;
    }

    // ---- subcommands -------------------------------------------------------------------

    void run_table1()
    {
        std::vector<std::string> rows = {"Bru", "PDSGA", "Dia", "Con", "PDSGA-node"};
        const auto& b = betas(rows);
        CsvWriter w(out("table1.csv"), hash_, "table1", {"policy", "beta_avg", "beta_worst", "states", "samples"});
        for (const auto& r : b)
            w.row({r.policy, fmt(r.avg), fmt(r.worst), std::to_string(r.per_state.size()),
                   std::to_string(sc_.beta_samples + 1)});
        record(w);
    }

    void run_fig4()
    {
        auto& c = cache(0.0);
        const auto seed = sc_.seeds.front();
        SolverConfig cfg;
        cfg.update_period = sc_.fig4_t_bar;
        cfg.horizon = sc_.fig4_horizon;
        const auto& pols = sc_.fig4_policies;
        std::vector<Trajectory> trs(pols.size());
        parallel_for(static_cast<int>(pols.size()), opt_.jobs, [&](int i) {
            trs[i] = run_tracking(process(seed, sc_.epsilon), policy_from_name(sc_, pols[i]), cfg, c,
                                  Vec::Zero(base_.dim()));
        });
        // utility of the equilibrium along the same path
        std::vector<double> opt_u;
        auto proc = process(seed, sc_.epsilon);
        std::vector<long> slots;
        for (long t = 0; t < cfg.horizon; ++t) {
            if (t % cfg.update_period == 0) {
                slots.push_back(t);
                opt_u.push_back(sum_utility(base_, c.get(proc.current())->y));
            }
            proc.step();
        }
        auto normalize = [](std::vector<double> v) {
            double m = -std::numeric_limits<double>::infinity();
            for (double x : v)
                if (std::isfinite(x))
                    m = std::max(m, x);
            for (double& x : v)
                x = m > 0 ? x / m : std::numeric_limits<double>::quiet_NaN();
            return v;
        };
        std::vector<std::vector<double>> cols;
        for (const auto& tr : trs) {
            std::map<long, double> by_slot;
            for (const auto& r : tr.records)
                by_slot[r.slot] = r.utility;
            std::vector<double> v;
            for (long t : slots)
                v.push_back(by_slot.count(t) ? by_slot[t] : std::numeric_limits<double>::quiet_NaN());
            cols.push_back(normalize(v));
        }
        cols.push_back(normalize(opt_u));
        std::vector<std::string> head = {"slot"};
        for (const auto& p : pols)
            head.push_back(p);
        head.push_back("optimum");
        CsvWriter w(out("fig4.csv"), hash_, "fig4 normalized sum-utility", head);
        for (std::size_t i = 0; i < slots.size(); ++i) {
            std::vector<std::string> row = {std::to_string(slots[i])};
            for (const auto& col : cols)
                row.push_back(fmt(col[i]));
            w.row(row);
        }
        record(w);
    }

    void run_fig5()
    {
        const auto& cells = sweep(sc_.policies);
        const auto& b = betas(sc_.policies);
        CsvWriter w(out("fig5.csv"), hash_, "fig5 out-of-region probability",
                    {"policy", "t_bar", "epsilon", "t_over_n", "out_of_region", "ci95", "bound", "beta_hat", "delta"});
        for (const auto& c : cells) {
            const auto m = mean_ci95(c.out_of_region);
            const double beta = beta_of(b, c.policy);
            const double bound = beta < 1.0 ? region_bound(beta, c.t_bar, c.n_bar) : std::nan("");
            w.row({c.policy, std::to_string(c.t_bar), fmt(c.epsilon), fmt(c.ratio), fmt(m.mean), fmt(m.half_width), fmt(bound),
                   fmt(beta), fmt(delta_)});
        }
        record(w);
    }

    void run_fig6() { error_figure("fig6.csv", "fig6 expected absolute error", true); }
    void run_fig7() { error_figure("fig7.csv", "fig7 mean square error", false); }

    void run_fig8()
    {
        const auto& cells = fig8_cells();
        CsvWriter w(out("fig8.csv"), hash_, "fig8 outage versus mse over backoff margin",
                    {"margin", "t_over_n", "t_bar", "outage", "outage_ci95", "mse", "mse_ci95", "outage_bound"});
        for (const auto& c : cells) {
            const auto o = mean_ci95(c.outage), m = mean_ci95(c.mse);
            w.row({fmt(c.margin), fmt(c.t_bar / n_bar_), std::to_string(c.t_bar), fmt(o.mean), fmt(o.half_width),
                   fmt(m.mean), fmt(m.half_width), fmt(outage_bound(c))});
        }
        record(w);
    }

    void run_all()
    {
        run_table1();
        run_fig4();
        run_fig5();
        run_fig6();
        run_fig7();
        run_fig8();
    }

    void run(const std::string& sub)
    {
        if (sub == "table1")
            run_table1();
        else if (sub == "fig4")
            run_fig4();
        else if (sub == "fig5")
            run_fig5();
        else if (sub == "fig6")
            run_fig6();
        else if (sub == "fig7")
            run_fig7();
        else if (sub == "fig8")
            run_fig8();
        else if (sub == "all")
            run_all();
        else
            throw std::invalid_argument("unknown subcommand '" + sub + "'");
        write_reports();
        write_manifest(sub);
        save_checkpoints();
    }

    // Per (policy, T) metrics averaged over seeds, one JSON object each.
    void write_reports()
    {
        if (!sweep_done_ || opt_.out_dir.empty())
            return;
        const auto& b = betas(sweep_policies_);
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& c : sweep_) {
            MetricsReport r;
            r.eae = mean_ci95(c.eae).mean;
            r.mse = mean_ci95(c.mse).mean;
            r.region_prob_in = 1.0 - mean_ci95(c.out_of_region).mean;
            r.beta_hat = beta_of(b, c.policy);
            r.delta_hat = delta_hat_;
            r.n_bar_slots = c.n_bar;
            r.t_bar = c.t_bar;
            if (r.beta_hat < 1.0) {
                r.bounds = bound_values(r.beta_hat, c.t_bar, c.n_bar, delta_, 0.0, 0.0, 0.0);
                r.bounds_valid = true;
            }
            auto j = r.to_json();
            j["policy"] = c.policy;
            j["epsilon"] = c.epsilon;
            j["diverged"] = c.diverged;
            arr.push_back(j);
        }
        std::ofstream f(out("reports.json"), std::ios::binary);
        f << arr.dump(1) << '\n';
        outputs_.push_back(out("reports.json"));
    }

    void write_manifest(const std::string& sub)
    {
        if (opt_.out_dir.empty())
            return;
        nlohmann::json j;
        j["config_hash"] = hash_;
        j["tool_version"] = kToolVersion;
        j["subcommand"] = sub;
        j["scenario"] = sc_.name;
        j["seeds"] = sc_.seeds;
        j["n_bar_slots"] = n_bar_;
        j["outputs"] = outputs_;
        j["wall_clock_seconds"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
        nlohmann::json cs = nlohmann::json::object();
        for (const auto& [K, c] : caches_)
            cs[fmt(K)] = {{"entries", c->size()}, {"hits", c->hits()}, {"misses", c->misses()}};
        j["equilibrium_cache"] = cs;
        nlohmann::json rows = nlohmann::json::object();
        for (const auto& [path, n] : row_counts_)
            rows[path] = n;
        j["rows"] = rows;
        std::ofstream f(out("manifest.json"), std::ios::binary);
        f << j.dump(1) << '\n';
    }

    void save_checkpoints()
    {
        if (opt_.checkpoint_dir.empty())
            return;
        std::filesystem::create_directories(opt_.checkpoint_dir);
        for (const auto& [K, c] : caches_)
            c->save(checkpoint_path(K));
    }

    const std::vector<std::string>& outputs() const { return outputs_; }

private:
    static double beta_of(const std::vector<BetaRow>& rows, const std::string& p)
    {
        for (const auto& r : rows)
            if (r.policy == p)
                return r.worst;
        return std::nan("");
    }

    std::vector<BetaRow> rows_tmp_;
    const std::vector<BetaRow>& beta_rows(const std::vector<std::string>& policies)
    {
        rows_tmp_.clear();
        for (const auto& p : policies)
            rows_tmp_.push_back(beta_.at(p));
        return rows_tmp_;
    }

    void error_figure(const std::string& file, const std::string& what, bool absolute)
    {
        const auto& cells = sweep(sc_.policies);
        const auto b = betas(sc_.policies);
        double norm = 0.0;
        for (const auto& c : cells) {
            const double v = mean_ci95(absolute ? c.eae : c.mse).mean;
            if (std::isfinite(v))
                norm = std::max(norm, v);
        }
        if (!(norm > 0.0))
            norm = 1.0;
        const std::string name = absolute ? "eae" : "mse";
        CsvWriter w(out(file), hash_, what,
                    {"policy", "t_bar", "epsilon", "t_over_n", name, "ci95", name + "_normalized", "bound", "bound_normalized"});
        for (const auto& c : cells) {
            const auto m = mean_ci95(absolute ? c.eae : c.mse);
            const double beta = beta_of(b, c.policy);
            double bound = std::nan("");
            if (beta < 1.0) {
                const auto bv = bound_values(beta, c.t_bar, c.n_bar, delta_, 0.0, 0.0, 0.0);
                bound = absolute ? bv.eae : bv.mse;
            }
            w.row({c.policy, std::to_string(c.t_bar), fmt(c.epsilon), fmt(c.ratio), fmt(m.mean), fmt(m.half_width),
                   fmt(m.mean / norm), fmt(bound), fmt(bound / norm)});
        }
        record(w);
    }

    std::string out(const std::string& file) const
    {
        return (std::filesystem::path(opt_.out_dir.empty() ? "." : opt_.out_dir) / file).string();
    }
    std::string cache_key(double margin) const { return hash_ + "/K=" + fmt(margin); }
    std::string checkpoint_path(double margin) const
    {
        return (std::filesystem::path(opt_.checkpoint_dir) / ("equilibria_" + hash_ + "_K" + fmt(margin) + ".json"))
            .string();
    }

    void record(const CsvWriter& w)
    {
        outputs_.push_back(w.path());
        row_counts_[w.path()] = w.data_rows();
        log("wrote " + w.path());
    }

    void check_failures(long failures, long total, const std::string& what) const
    {
        if (total > 0 && double(failures) / total > sc_.failure_threshold)
            throw std::runtime_error("equilibrium failures in " + what + ": " + std::to_string(failures) + " of " +
                                     std::to_string(total));
    }

    void log(const std::string& msg) const
    {
        if (opt_.log) {
            static std::mutex mu;
            std::lock_guard lk(mu);
            *opt_.log << msg << '\n';
        }
    }

    Scenario sc_;
    HarnessOptions opt_;
    std::string hash_;
    double c_hat_ = -1.0;
    ProblemInstance base_;
    double n_bar_ = 0.0;
    std::chrono::steady_clock::time_point started_;

    std::mutex cache_mu_;
    std::map<double, std::unique_ptr<EquilibriumCache>> caches_;

    std::map<std::string, BetaRow> beta_;
    double delta_ = 0.0, delta_hat_ = 0.0;
    std::vector<SweepCell> sweep_;
    std::vector<std::string> sweep_policies_;
    bool sweep_done_ = false;
    std::vector<Fig8Cell> fig8_;
    bool fig8_done_ = false;

    std::vector<std::string> outputs_;
    std::map<std::string, long> row_counts_;
};

}  // namespace pdsga
