#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace pdsga {

// Nodes and links are stored 0-based; the figure-1 preset numbers them 1..K / 1..L in comments.
struct Topology {
    int num_nodes = 0;
    int num_subbands = 1;
    std::vector<std::pair<int, int>> links;       // (tx, rx)
    std::vector<std::vector<int>> interference;  // I_k: links received at k, ascending
    std::vector<std::vector<int>> outgoing;      // P_k: links transmitted by k, ascending

    int num_links() const { return static_cast<int>(links.size()); }
};

struct Commodity {
    int source = 0;
    int index = 0;  // s within the source node
    int destination = 0;
    std::vector<int> links;
};

struct RoutingTable {
    std::vector<Commodity> commodities;
    std::vector<std::vector<int>> link_membership;  // R_l: commodity indices routed over l
};

struct CapacityConstraint {
    int rx_node = 0;
    int subband = 0;
    unsigned mask = 0;       // subset bitmask over positions of I_k
    std::vector<int> links;  // members of J, ascending
};

inline Topology make_topology(int num_nodes, int num_subbands, std::vector<std::pair<int, int>> links)
{
    if (num_nodes < 1)
        throw std::invalid_argument("network: need at least one node");
    if (num_subbands < 1)
        throw std::invalid_argument("network: need at least one subband");
    Topology t;
    t.num_nodes = num_nodes;
    t.num_subbands = num_subbands;
    t.links = std::move(links);
    t.interference.assign(num_nodes, {});
    t.outgoing.assign(num_nodes, {});
    for (int l = 0; l < t.num_links(); ++l) {
        auto [tx, rx] = t.links[l];
        if (tx < 0 || tx >= num_nodes || rx < 0 || rx >= num_nodes)
            throw std::invalid_argument("network: link endpoint out of range");
        if (tx == rx)
            throw std::invalid_argument("network: self-loop link");
        t.interference[rx].push_back(l);
        t.outgoing[tx].push_back(l);
    }
    return t;
}

// Checks that {I_k} and {P_k} each partition the link set consistently with the endpoints.
inline std::vector<std::string> check_topology(const Topology& t)
{
    std::vector<std::string> errs;
    std::vector<int> in_count(t.num_links(), 0), out_count(t.num_links(), 0);
    for (int k = 0; k < t.num_nodes; ++k) {
        for (int l : t.interference[k]) {
            if (l < 0 || l >= t.num_links()) {
                errs.push_back("E_TOPO_RANGE: link index out of range in I_" + std::to_string(k + 1));
                continue;
            }
            ++in_count[l];
            if (t.links[l].second != k)
                errs.push_back("E_TOPO_RX: link " + std::to_string(l + 1) + " listed in I_" + std::to_string(k + 1) +
                               " but received elsewhere");
        }
        for (int l : t.outgoing[k]) {
            if (l < 0 || l >= t.num_links()) {
                errs.push_back("E_TOPO_RANGE: link index out of range in P_" + std::to_string(k + 1));
                continue;
            }
            ++out_count[l];
            if (t.links[l].first != k)
                errs.push_back("E_TOPO_TX: link " + std::to_string(l + 1) + " listed in P_" + std::to_string(k + 1) +
                               " but transmitted elsewhere");
        }
    }
    for (int l = 0; l < t.num_links(); ++l) {
        if (in_count[l] != 1)
            errs.push_back("E_TOPO_PARTITION: link " + std::to_string(l + 1) + " appears in " +
                           std::to_string(in_count[l]) + " interference sets");
        if (out_count[l] != 1)
            errs.push_back("E_TOPO_PARTITION: link " + std::to_string(l + 1) + " appears in " +
                           std::to_string(out_count[l]) + " outgoing sets");
    }
    return errs;
}

inline RoutingTable make_routing(const Topology& t, std::vector<Commodity> commodities)
{
    RoutingTable r;
    r.commodities = std::move(commodities);
    r.link_membership.assign(t.num_links(), {});
    for (std::size_t i = 0; i < r.commodities.size(); ++i) {
        const auto& c = r.commodities[i];
        if (c.links.empty())
            throw std::invalid_argument("network: commodity routed over no link");
        for (int l : c.links) {
            if (l < 0 || l >= t.num_links())
                throw std::invalid_argument("network: commodity uses unknown link");
            r.link_membership[l].push_back(static_cast<int>(i));
        }
    }
    return r;
}

// Walks each route from its source and reports broken paths.
inline std::vector<std::string> check_routing(const Topology& t, const RoutingTable& r)
{
    std::vector<std::string> errs;
    for (std::size_t i = 0; i < r.commodities.size(); ++i) {
        const auto& c = r.commodities[i];
        const std::string name = "commodity " + std::to_string(i + 1);
        if (c.links.empty()) {
            errs.push_back("E_ROUTE_EMPTY: " + name + " uses no link");
            continue;
        }
        std::vector<int> remaining = c.links;
        int at = c.source;
        while (!remaining.empty()) {
            auto it = remaining.begin();
            for (; it != remaining.end(); ++it)
                if (*it >= 0 && *it < t.num_links() && t.links[*it].first == at)
                    break;
            if (it == remaining.end()) {
                errs.push_back("E_ROUTE_PATH: " + name + " links do not form a path from its source");
                break;
            }
            at = t.links[*it].second;
            remaining.erase(it);
        }
        if (remaining.empty() && at != c.destination)
            errs.push_back("E_ROUTE_DEST: " + name + " path ends at node " + std::to_string(at + 1));
    }
    return errs;
}

// Six nodes, eight links and eight commodities of the reference example.
inline std::pair<Topology, RoutingTable> builtin_figure1(int num_subbands = 2)
{
    // links 1..8 as (tx, rx), 1-based
    const std::vector<std::pair<int, int>> l1 = {{1, 2}, {2, 3}, {1, 4}, {4, 2}, {2, 5}, {5, 3}, {4, 5}, {5, 6}};
    std::vector<std::pair<int, int>> links;
    for (auto [a, b] : l1)
        links.emplace_back(a - 1, b - 1);
    Topology t = make_topology(6, num_subbands, links);

    // (source, s, destination, links), 1-based
    struct Row {
        int src, s, dst;
        std::vector<int> links;
    };
    const std::vector<Row> rows = {
        {1, 1, 6, {3, 7, 8}}, {1, 2, 3, {1, 2}}, {2, 1, 3, {2}}, {2, 2, 6, {5, 8}},
        {4, 1, 3, {4, 2}},    {4, 2, 3, {7, 6}}, {5, 1, 6, {8}}, {5, 2, 3, {6}},
    };
    std::vector<Commodity> cs;
    for (const auto& row : rows) {
        Commodity c;
        c.source = row.src - 1;
        c.index = row.s - 1;
        c.destination = row.dst - 1;
        for (int l : row.links)
            c.links.push_back(l - 1);
        cs.push_back(c);
    }
    RoutingTable r = make_routing(t, cs);
    return {t, r};
}

inline std::vector<CapacityConstraint> enumerate_capacity_constraints(const Topology& t)
{
    std::vector<CapacityConstraint> out;
    for (int k = 0; k < t.num_nodes; ++k) {
        const auto& ik = t.interference[k];
        if (ik.empty())
            continue;
        if (ik.size() >= 31)
            throw std::invalid_argument("network: interference set too large to enumerate");
        for (int n = 0; n < t.num_subbands; ++n) {
            for (unsigned mask = 1; mask < (1u << ik.size()); ++mask) {
                CapacityConstraint c;
                c.rx_node = k;
                c.subband = n;
                c.mask = mask;
                for (std::size_t b = 0; b < ik.size(); ++b)
                    if (mask >> b & 1u)
                        c.links.push_back(ik[b]);
                out.push_back(std::move(c));
            }
        }
    }
    return out;
}

struct ConstraintCount {
    int literal = 0;      // K + L + sum_k (2^|I_k| - 1)
    int per_subband = 0;  // K + L + N_F * sum_k (2^|I_k| - 1)
};

inline ConstraintCount constraint_count(const Topology& t, const RoutingTable&)
{
    int mud = 0;
    for (const auto& ik : t.interference)
        mud += (1 << ik.size()) - 1;
    return {t.num_nodes + t.num_links() + mud, t.num_nodes + t.num_links() + t.num_subbands * mud};
}

// Membership test for the multi-access capacity region at receiver k, subband n.
// rates/powers are indexed by link; gains is links x subbands.
inline bool check_rate_in_region(const Eigen::VectorXd& rates, const Eigen::VectorXd& powers,
                                 const Eigen::MatrixXd& gains, double noise_power, const Topology& t, int k, int n)
{
    const auto& ik = t.interference[k];
    for (unsigned mask = 1; mask < (1u << ik.size()); ++mask) {
        double sum_rate = 0.0, sum_rx = 0.0;
        for (std::size_t b = 0; b < ik.size(); ++b) {
            if (!(mask >> b & 1u))
                continue;
            sum_rate += rates(ik[b]);
            sum_rx += gains(ik[b], n) * powers(ik[b]);
        }
        if (sum_rate > std::log1p(sum_rx / noise_power))
            return false;
    }
    return true;
}

}  // namespace pdsga
