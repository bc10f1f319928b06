#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "equilibrium.hpp"
#include "fsmc.hpp"
#include "problem.hpp"
#include "scaling.hpp"

namespace pdsga {

// Cheap structural checks on D: dimension, finiteness and a positive diagonal.
// The full symmetric-part spectrum is audited separately (symmetric_part_min_eigenvalue).
inline void check_scaling_matrix(const Mat& D, int dim)
{
    if (D.rows() != dim || D.cols() != dim)
        throw std::invalid_argument("pdsga_step: scaling matrix has wrong dimension");
    if (!D.allFinite())
        throw std::invalid_argument("pdsga_step: scaling matrix is not finite");
    if (!(D.diagonal().array() > 0.0).all())
        throw std::invalid_argument("pdsga_step: scaling matrix is not positive definite");
}

// [y + D grad]^+ for a precomputed fictitious gradient.
inline Vec pdsga_step(const Vec& y, const Vec& grad, const Mat& D)
{
    check_scaling_matrix(D, static_cast<int>(y.size()));
    return project_nonneg(y + D * grad);
}

inline Vec pdsga_step(const ProblemInstance& in, const Vec& y, const Mat& gains, const Mat& D)
{
    if (y.size() != in.dim())
        throw std::invalid_argument("pdsga_step: point has wrong dimension");
    return pdsga_step(y, fictitious_gradient(in, y, gains), D);
}

struct SolverConfig {
    int update_period = 1;  // T_bar in slots
    long horizon = 200000;  // slots
    double equilibrium_tolerance = 1e-6;
    int max_equilibrium_iters = 100000;
    double region_delta = -1.0;  // > 0 enables nearest-equilibrium distances
    bool record_slacks = false;
    bool record_points = false;

    void validate() const
    {
        if (update_period < 1)
            throw std::invalid_argument("solver: update period must be >= 1");
        if (horizon < 1)
            throw std::invalid_argument("solver: horizon must be >= 1");
        if (!(equilibrium_tolerance > 0.0))
            throw std::invalid_argument("solver: equilibrium tolerance must be positive");
    }
};

struct UpdateRecord {
    long slot = 0;
    std::uint64_t state_id = 0;
    double utility = 0.0;
    double distance = 0.0;  // to the equilibrium of the current state, modulo non-unique directions
    double nearest = -1.0;  // to the nearest visited equilibrium; -1 when not computed
    double viol_flow = 0.0, viol_power = 0.0, viol_mud = 0.0;  // max constraint violation per family
    std::vector<double> power_g;                               // sum P - P_max per node, without margin
    Vec slacks;
    Vec y;
};

struct Stage {
    std::uint64_t state_id = 0;
    long start = 0;    // first slot in this state
    long sojourn = 0;  // T_m
    long updates = 0;  // N_m: grid points in (start, start + sojourn]
};

struct Trajectory {
    std::vector<UpdateRecord> records;
    std::vector<Stage> stages;
    long equilibrium_failures = 0;
    long fallback_blocks = 0;
    double margin = 0.0;  // largest power backoff of the instance that produced it
    bool diverged = false;
    long diverged_at = -1;
    std::set<std::uint64_t> visited;
};

// Grid points t = 0, T, 2T, ... in the half-open interval (start, start + sojourn].
inline long grid_points_in_stage(long start, long sojourn, int period)
{
    auto upto = [&](long t) { return t < 0 ? 0 : t / period + 1; };  // grid points in [0, t]
    return upto(start + sojourn) - upto(start);
}

namespace detail {

inline void fill_record(UpdateRecord& r, const ProblemInstance& in, const Vec& y, const Mat& gains, bool slacks)
{
    const auto& ix = in.idx;
    const Vec s = constraint_slacks(in, y, gains);
    r.utility = sum_utility(in, y);
    for (int l = 0; l < ix.L; ++l)
        r.viol_flow = std::max(r.viol_flow, -s(ix.flow_row(l)));
    for (int k = 0; k < ix.K; ++k)
        r.viol_power = std::max(r.viol_power, -s(ix.power_row(k)));
    for (int m = 0; m < ix.NM; ++m)
        r.viol_mud = std::max(r.viol_mud, -s(ix.mud_row(m)));
    r.power_g.resize(ix.K);
    for (int k = 0; k < ix.K; ++k)
        r.power_g[k] = -s(ix.power_row(k)) - in.margin[k];
    if (slacks)
        r.slacks = s;
}

}  // namespace detail

// Visits the channel path once and solves every state it reaches, so that tracking runs
// can measure distances to the nearest visited equilibrium.
inline std::vector<GlobalChannelState> visited_states(ChannelProcess process, long horizon)
{
    std::map<std::uint64_t, GlobalChannelState> seen;
    for (long t = 0; t < horizon; ++t) {
        const auto& s = process.current();
        seen.emplace(s.id, s);
        process.step();
    }
    std::vector<GlobalChannelState> out;
    for (auto& [id, s] : seen)
        out.push_back(s);
    return out;
}

// Runs the iteration along one channel path. The process is copied, so the caller's
// process is left untouched. Updates fire at t = 0, T, 2T, ... with the gains in effect.
inline Trajectory run_tracking(ChannelProcess process, const ScalingPolicy& policy, const SolverConfig& cfg,
                               EquilibriumCache& cache, const Vec& start)
{
    cfg.validate();
    const auto& in = cache.instance();
    if (start.size() != in.dim())
        throw std::invalid_argument("run_tracking: start point has wrong dimension");
    Trajectory tr;
    tr.margin = *std::max_element(in.margin.begin(), in.margin.end());

    std::vector<std::shared_ptr<const Equilibrium>> pool;
    if (cfg.region_delta > 0.0) {
        for (const auto& s : visited_states(process, cfg.horizon)) {
            try {
                pool.push_back(cache.get(s));
            } catch (const EquilibriumError&) {
                ++tr.equilibrium_failures;
            }
        }
    }

    Vec y = start;
    ScalingStats stats;
    Stage cur;
    bool open = false;
    for (long t = 0; t < cfg.horizon; ++t) {
        const GlobalChannelState& st = process.current();
        if (!open || st.id != cur.state_id) {
            if (open) {
                cur.sojourn = t - cur.start;
                cur.updates = grid_points_in_stage(cur.start, cur.sojourn, cfg.update_period);
                tr.stages.push_back(cur);
            }
            cur = Stage{st.id, t, 0, 0};
            open = true;
            tr.visited.insert(st.id);
        }
        if (t % cfg.update_period == 0 && !tr.diverged) {
            const LocalModel m = LocalModel::at(in, y, st.gains);
            const Mat D = compute_scaling(policy, in, m, {}, &stats);
            y = pdsga_step(y, m.grad, D);
            if (!y.allFinite() || y.cwiseAbs().maxCoeff() > 1e12) {
                tr.diverged = true;
                tr.diverged_at = t;
                continue;
            }
            std::shared_ptr<const Equilibrium> eq;
            try {
                eq = cache.get(st);
            } catch (const EquilibriumError&) {
                ++tr.equilibrium_failures;
                continue;
            }
            UpdateRecord r;
            r.slot = t;
            r.state_id = st.id;
            r.distance = reduced_distance(y, eq->y, eq->null_dirs);
            if (cfg.region_delta > 0.0) {
                r.nearest = r.distance;
                if (r.nearest > cfg.region_delta)
                    for (const auto& e : pool)
                        r.nearest = std::min(r.nearest, reduced_distance(y, e->y, e->null_dirs));
            }
            detail::fill_record(r, in, y, st.gains, cfg.record_slacks);
            if (cfg.record_points)
                r.y = y;
            tr.records.push_back(std::move(r));
        }
        process.step();
    }
    if (open) {
        cur.sojourn = cfg.horizon - cur.start;
        cur.updates = grid_points_in_stage(cur.start, cur.sojourn, cfg.update_period);
        tr.stages.push_back(cur);
    }
    tr.fallback_blocks = stats.fallback_blocks;
    return tr;
}

// CSV export: one row per update.
inline void write_trajectory_csv(const Trajectory& tr, std::ostream& out)
{
    out << "slot,state_id,sum_utility,distance,viol_flow,viol_power,viol_mud\n";
    out.precision(12);
    for (const auto& r : tr.records)
        out << r.slot << ',' << r.state_id << ',' << r.utility << ',' << r.distance << ',' << r.viol_flow << ','
            << r.viol_power << ',' << r.viol_mud << '\n';
}

// ---------------------------------------------------------------------------
// Message-passing form of one synchronous round.

struct DistributedStepsizes {
    double alpha_r = 0.005;  // source rates
    double alpha_l = 0.005;  // link rates c
    double gamma_l = 0.005;  // flow prices
    double alpha_p = 0.005;  // powers
    double gamma_M = 0.005;  // MUD prices
    double gamma_p = 0.005;  // power prices
};

enum class RateUpdate { Gradient, ClosedForm };

// Maximizer of w log(1 + r) - r * price over r >= 0.
inline double closed_form_rate(double weight, double price)
{
    if (!(price > 0.0))
        throw std::domain_error("closed_form_rate: price must be positive");
    return std::max(0.0, weight / price - 1.0);
}

// What each node owns. Node k holds the rates it sources, c and the flow price of each link
// it transmits, the powers of the links it receives, its MUD prices and its own power price.
struct NodeState {
    std::vector<double> r;           // commodities sourced here, in commodity order
    std::vector<double> c;           // (outgoing link, subband), link-major
    std::vector<double> lambda_r;    // outgoing links
    std::vector<double> P;           // (incoming link, subband), link-major
    std::vector<double> lambda_mud;  // MUD constraints at this receiver, in enumeration order
    double lambda_P = 0.0;
};

// Values published at the end of a round; each is read only by the nodes that need it.
struct MessageBoard {
    Vec r;           // source -> transmitters along the route
    Vec c;           // transmitter -> receiver of the link
    Vec P;           // receiver -> transmitter of the link
    Vec lambda_r;    // transmitter -> sources routed over the link
    Vec lambda_mud;  // receiver -> transmitters of member links
    Vec lambda_P;    // transmitter -> receivers of its links
    long messages = 0;  // sent in the round that produced this board
};

struct DistributedNetwork {
    std::vector<NodeState> nodes;
    MessageBoard board;
};

namespace detail {

struct Ownership {
    std::vector<std::vector<int>> src_commodities, out_links, in_links, muds;
};

inline Ownership ownership(const ProblemInstance& in)
{
    const auto& ix = in.idx;
    Ownership o;
    o.src_commodities.assign(ix.K, {});
    o.out_links = in.topo.outgoing;
    o.in_links = in.topo.interference;
    o.muds.assign(ix.K, {});
    for (int i = 0; i < ix.R; ++i)
        o.src_commodities[in.routing.commodities[i].source].push_back(i);
    for (int m = 0; m < ix.NM; ++m)
        o.muds[in.mud[m].rx_node].push_back(m);
    return o;
}

// Messages one round sends: each (value, remote recipient) pair counts once.
inline long count_messages(const ProblemInstance& in)
{
    const auto& ix = in.idx;
    long n = 0;
    for (int i = 0; i < ix.R; ++i) {
        std::set<int> tx;
        for (int l : in.routing.commodities[i].links)
            tx.insert(in.topo.links[l].first);
        tx.erase(in.routing.commodities[i].source);
        n += static_cast<long>(tx.size());  // r_i to transmitters on the route
        std::set<int> back;
        for (int l : in.routing.commodities[i].links)
            if (in.topo.links[l].first != in.routing.commodities[i].source)
                back.insert(l);
        n += static_cast<long>(back.size());  // lambda_r of remote links back to the source
    }
    n += 2L * ix.L * ix.NF;  // c to the receiver, P to the transmitter
    for (const auto& cc : in.mud)
        n += static_cast<long>(cc.links.size());  // lambda_mud to member transmitters
    for (int k = 0; k < ix.K; ++k) {
        std::set<int> rx;
        for (int l : in.topo.outgoing[k])
            rx.insert(in.topo.links[l].second);
        n += static_cast<long>(rx.size());  // lambda_P to receivers of its links
    }
    return n;
}

inline MessageBoard publish(const ProblemInstance& in, const std::vector<NodeState>& nodes)
{
    const auto& ix = in.idx;
    const auto o = ownership(in);
    MessageBoard b;
    b.r = Vec::Zero(ix.R);
    b.c = Vec::Zero(ix.L * ix.NF);
    b.P = Vec::Zero(ix.L * ix.NF);
    b.lambda_r = Vec::Zero(ix.L);
    b.lambda_mud = Vec::Zero(ix.NM);
    b.lambda_P = Vec::Zero(ix.K);
    for (int k = 0; k < ix.K; ++k) {
        const auto& s = nodes[k];
        for (std::size_t a = 0; a < o.src_commodities[k].size(); ++a)
            b.r(o.src_commodities[k][a]) = s.r[a];
        for (std::size_t a = 0; a < o.out_links[k].size(); ++a) {
            const int l = o.out_links[k][a];
            b.lambda_r(l) = s.lambda_r[a];
            for (int n = 0; n < ix.NF; ++n)
                b.c(l * ix.NF + n) = s.c[a * ix.NF + n];
        }
        for (std::size_t a = 0; a < o.in_links[k].size(); ++a)
            for (int n = 0; n < ix.NF; ++n)
                b.P(o.in_links[k][a] * ix.NF + n) = s.P[a * ix.NF + n];
        for (std::size_t a = 0; a < o.muds[k].size(); ++a)
            b.lambda_mud(o.muds[k][a]) = s.lambda_mud[a];
        b.lambda_P(k) = s.lambda_P;
    }
    return b;
}

}  // namespace detail

// Splits a flat point into node-local states and the matching message board.
inline DistributedNetwork distribute(const ProblemInstance& in, const Vec& y)
{
    const auto& ix = in.idx;
    const auto o = detail::ownership(in);
    DistributedNetwork net;
    net.nodes.resize(ix.K);
    for (int k = 0; k < ix.K; ++k) {
        auto& s = net.nodes[k];
        for (int i : o.src_commodities[k])
            s.r.push_back(y(ix.r(i)));
        for (int l : o.out_links[k]) {
            s.lambda_r.push_back(y(ix.lam_r(l)));
            for (int n = 0; n < ix.NF; ++n)
                s.c.push_back(y(ix.c(l, n)));
        }
        for (int l : o.in_links[k])
            for (int n = 0; n < ix.NF; ++n)
                s.P.push_back(y(ix.P(l, n)));
        for (int m : o.muds[k])
            s.lambda_mud.push_back(y(ix.lam_mud(m)));
        s.lambda_P = y(ix.lam_P(k));
    }
    net.board = detail::publish(in, net.nodes);
    return net;
}

inline Vec gather(const ProblemInstance& in, const DistributedNetwork& net)
{
    const auto& ix = in.idx;
    const auto& b = net.board;
    Vec y(ix.dim());
    for (int i = 0; i < ix.R; ++i)
        y(ix.r(i)) = b.r(i);
    for (int l = 0; l < ix.L; ++l)
        for (int n = 0; n < ix.NF; ++n) {
            y(ix.P(l, n)) = b.P(l * ix.NF + n);
            y(ix.c(l, n)) = b.c(l * ix.NF + n);
        }
    y.segment(ix.lam_r(0), ix.L) = b.lambda_r;
    y.segment(ix.lam_P(0), ix.K) = b.lambda_P;
    y.segment(ix.lam_mud(0), ix.NM) = b.lambda_mud;
    return y;
}

// One synchronous round: every node updates its own variables from its local state and the
// previous round's messages, then publishes. Equivalent to pdsga_step with the diagonal D
// built by `distributed_scaling` when the rate update is in gradient form.
inline DistributedNetwork distributed_round(const ProblemInstance& in, const DistributedNetwork& net,
                                            const Mat& gains, const DistributedStepsizes& st,
                                            RateUpdate rate_update = RateUpdate::Gradient)
{
    for (double a : {st.alpha_r, st.alpha_l, st.gamma_l, st.alpha_p, st.gamma_M, st.gamma_p})
        if (!(a > 0.0))
            throw std::invalid_argument("distributed_round: stepsizes must be positive");
    const auto& ix = in.idx;
    const auto o = detail::ownership(in);
    const auto& b = net.board;
    const double kappa = in.prox_weight;
    const int NF = ix.NF;
    auto pos = [](double v) { return v > 0.0 ? v : 0.0; };

    DistributedNetwork out;
    out.nodes = net.nodes;
    for (int k = 0; k < ix.K; ++k) {
        auto& s = out.nodes[k];
        const auto& old = net.nodes[k];

        // Source: rate of each commodity against the sum of flow prices on its route.
        for (std::size_t a = 0; a < o.src_commodities[k].size(); ++a) {
            const int i = o.src_commodities[k][a];
            double price = 0.0;
            for (int l : in.routing.commodities[i].links)
                price += b.lambda_r(l);
            const double w = in.weights[i];
            if (rate_update == RateUpdate::ClosedForm)
                s.r[a] = closed_form_rate(w, price);
            else
                s.r[a] = pos(old.r[a] + st.alpha_r * (w / (1.0 + old.r[a]) - price));
        }

        // Transmitter: link rates c and flow prices of outgoing links.
        for (std::size_t a = 0; a < o.out_links[k].size(); ++a) {
            const int l = o.out_links[k][a];
            double csum = 0.0;
            for (int n = 0; n < NF; ++n) {
                const double c = old.c[a * NF + n];
                csum += c;
                double mud = 0.0;
                for (int m : in.mud_of[l * NF + n])
                    mud += b.lambda_mud(m);
                s.c[a * NF + n] = pos(c + st.alpha_l * (-kappa * c + old.lambda_r[a] - mud));
            }
            double load = 0.0;
            for (int i : in.routing.link_membership[l])
                load += b.r(i);
            s.lambda_r[a] = pos(old.lambda_r[a] + st.gamma_l * (load - csum));
        }

        // Receiver: powers of incoming links and MUD prices.
        std::vector<double> den(o.muds[k].size());
        for (std::size_t a = 0; a < o.muds[k].size(); ++a) {
            const auto& cc = in.mud[o.muds[k][a]];
            double rx = 0.0;
            for (int j : cc.links)
                rx += gains(j, cc.subband) * b.P(j * NF + cc.subband);
            den[a] = in.noise_power + rx;
            double crate = 0.0;
            for (int j : cc.links)
                crate += b.c(j * NF + cc.subband);
            s.lambda_mud[a] = pos(old.lambda_mud[a] + st.gamma_M * (crate - std::log1p(rx / in.noise_power)));
        }
        for (std::size_t a = 0; a < o.in_links[k].size(); ++a) {
            const int j = o.in_links[k][a];
            const int tx = in.topo.links[j].first;
            for (int n = 0; n < NF; ++n) {
                const double p = old.P[a * NF + n];
                double grad = -kappa * p - b.lambda_P(tx);
                for (std::size_t q = 0; q < o.muds[k].size(); ++q) {
                    const auto& cc = in.mud[o.muds[k][q]];
                    if (cc.subband != n)
                        continue;
                    for (int jj : cc.links)
                        if (jj == j)
                            grad += old.lambda_mud[q] * gains(j, n) / den[q];
                }
                s.P[a * NF + n] = pos(p + st.alpha_p * grad);
            }
        }

        // Own power price from the powers its receivers reported.
        double used = 0.0;
        for (int l : o.out_links[k])
            for (int n = 0; n < NF; ++n)
                used += b.P(l * NF + n);
        s.lambda_P = pos(old.lambda_P + st.gamma_p * (used - (in.p_max[k] - in.margin[k])));
    }
    out.board = detail::publish(in, out.nodes);
    out.board.messages = detail::count_messages(in);
    return out;
}

// Diagonal D whose pdsga_step reproduces a gradient-form distributed round.
inline Mat distributed_scaling(const ProblemInstance& in, const DistributedStepsizes& st)
{
    const auto& ix = in.idx;
    Vec d(ix.dim());
    for (int i = 0; i < ix.R; ++i)
        d(ix.r(i)) = st.alpha_r;
    for (int l = 0; l < ix.L; ++l) {
        for (int n = 0; n < ix.NF; ++n) {
            d(ix.P(l, n)) = st.alpha_p;
            d(ix.c(l, n)) = st.alpha_l;
        }
        d(ix.lam_r(l)) = st.gamma_l;
    }
    for (int k = 0; k < ix.K; ++k)
        d(ix.lam_P(k)) = st.gamma_p;
    for (int m = 0; m < ix.NM; ++m)
        d(ix.lam_mud(m)) = st.gamma_M;
    return d.asDiagonal();
}

}  // namespace pdsga
