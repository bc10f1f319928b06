#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "pdsga/network.hpp"

using namespace pdsga;

namespace {

std::vector<int> one_based(const std::vector<int>& v)
{
    std::vector<int> o;
    for (int x : v)
        o.push_back(x + 1);
    return o;
}

}  // namespace

TEST(Figure1, InterferenceAndOutgoingSets)
{
    const auto [t, r] = builtin_figure1();
    EXPECT_EQ(t.num_nodes, 6);
    EXPECT_EQ(t.num_links(), 8);
    EXPECT_EQ(one_based(t.interference[1]), (std::vector<int>{1, 4}));
    EXPECT_EQ(one_based(t.interference[2]), (std::vector<int>{2, 6}));
    EXPECT_EQ(one_based(t.outgoing[0]), (std::vector<int>{1, 3}));
    EXPECT_EQ(one_based(t.outgoing[3]), (std::vector<int>{4, 7}));
    EXPECT_TRUE(t.interference[0].empty());
    EXPECT_TRUE(t.outgoing[5].empty());
    EXPECT_TRUE(check_topology(t).empty());
    EXPECT_TRUE(check_routing(t, r).empty());
}

TEST(Figure1, CommodityFiveOne)
{
    const auto [t, r] = builtin_figure1();
    ASSERT_EQ(r.commodities.size(), 8u);
    const auto& c = r.commodities[6];
    EXPECT_EQ(c.source, 4);
    EXPECT_EQ(c.index, 0);
    EXPECT_EQ(c.destination, 5);
    EXPECT_EQ(one_based(c.links), (std::vector<int>{8}));
}

TEST(Figure1, LinkMembershipIsConsistentWithRoutes)
{
    const auto [t, r] = builtin_figure1();
    for (int l = 0; l < t.num_links(); ++l)
        for (int i : r.link_membership[l]) {
            const auto& ls = r.commodities[i].links;
            EXPECT_NE(std::find(ls.begin(), ls.end(), l), ls.end());
        }
    std::size_t total = 0;
    for (const auto& c : r.commodities)
        total += c.links.size();
    std::size_t mem = 0;
    for (const auto& m : r.link_membership)
        mem += m.size();
    EXPECT_EQ(total, mem);
}

TEST(CapacityConstraints, NodeTwoSingleSubband)
{
    const auto [t, r] = builtin_figure1(1);
    std::set<std::vector<int>> sets;
    for (const auto& c : enumerate_capacity_constraints(t))
        if (c.rx_node == 1)
            sets.insert(one_based(c.links));
    EXPECT_EQ(sets, (std::set<std::vector<int>>{{1}, {4}, {1, 4}}));
}

TEST(CapacityConstraints, CountsOnFigure1)
{
    const auto [t, r] = builtin_figure1(2);
    const auto cs = enumerate_capacity_constraints(t);
    EXPECT_EQ(cs.size(), 22u);
    const auto n = constraint_count(t, r);
    EXPECT_EQ(n.literal, 25);
    EXPECT_EQ(n.per_subband, 36);
    EXPECT_EQ(n.per_subband, t.num_nodes + t.num_links() + static_cast<int>(cs.size()));
    std::set<std::tuple<int, int, unsigned>> uniq;
    for (const auto& c : cs)
        uniq.insert({c.rx_node, c.subband, c.mask});
    EXPECT_EQ(uniq.size(), cs.size());
}

TEST(CapacityConstraints, NoReceiversNoConstraints)
{
    const auto t = make_topology(3, 2, {});
    EXPECT_TRUE(enumerate_capacity_constraints(t).empty());
    EXPECT_EQ(constraint_count(t, {}).literal, 3);
    EXPECT_EQ(constraint_count(t, {}).per_subband, 3);
}

TEST(RateRegion, ZeroRatesAlwaysInside)
{
    const auto t = make_topology(3, 1, {{0, 2}, {1, 2}});
    Eigen::VectorXd r = Eigen::VectorXd::Zero(2), p(2);
    p << 0.3, 0.0;
    EXPECT_TRUE(check_rate_in_region(r, p, Eigen::MatrixXd::Ones(2, 1), 1.0, t, 2, 0));
}

TEST(RateRegion, SingleLinkBoundary)
{
    const auto t = make_topology(2, 1, {{0, 1}});
    Eigen::MatrixXd g(1, 1);
    g << 1.0;
    Eigen::VectorXd p(1), c(1);
    p << std::exp(1.0) - 1.0;
    c << 1.0;
    EXPECT_TRUE(check_rate_in_region(c, p, g, 1.0, t, 1, 0));
    c << 1.0 + 1e-6;
    EXPECT_FALSE(check_rate_in_region(c, p, g, 1.0, t, 1, 0));
}

TEST(RateRegion, SumRateFacet)
{
    // Per-link caps 1, sum cap log(2e - 1) ~ 1.49.
    const auto t = make_topology(3, 1, {{0, 2}, {1, 2}});
    Eigen::MatrixXd g(2, 1);
    g << 2.0, 0.5;
    Eigen::VectorXd p(2), c(2);
    p << (std::exp(1.0) - 1.0) / 2.0, (std::exp(1.0) - 1.0) / 0.5;
    c << 0.9, 0.9;
    EXPECT_FALSE(check_rate_in_region(c, p, g, 1.0, t, 2, 0));
    c << 0.7, 0.7;
    EXPECT_TRUE(check_rate_in_region(c, p, g, 1.0, t, 2, 0));
    c << 1.01, 0.0;
    EXPECT_FALSE(check_rate_in_region(c, p, g, 1.0, t, 2, 0));
}

TEST(TopologyChecks, DuplicateInterferenceMembership)
{
    auto [t, r] = builtin_figure1();
    t.interference[2].push_back(0);  // link 1 also listed at node 3
    const auto errs = check_topology(t);
    bool partition = false, rx = false;
    for (const auto& e : errs) {
        partition |= e.rfind("E_TOPO_PARTITION", 0) == 0;
        rx |= e.rfind("E_TOPO_RX", 0) == 0;
    }
    EXPECT_TRUE(partition);
    EXPECT_TRUE(rx);
}

TEST(TopologyChecks, MissingOutgoingMembership)
{
    auto [t, r] = builtin_figure1();
    t.outgoing[0].clear();
    bool partition = false;
    for (const auto& e : check_topology(t))
        partition |= e.rfind("E_TOPO_PARTITION", 0) == 0;
    EXPECT_TRUE(partition);
}

TEST(TopologyChecks, ConstructorRejectsBadLinks)
{
    EXPECT_THROW(make_topology(2, 1, {{0, 2}}), std::invalid_argument);
    EXPECT_THROW(make_topology(2, 1, {{1, 1}}), std::invalid_argument);
    EXPECT_THROW(make_topology(0, 1, {}), std::invalid_argument);
    EXPECT_THROW(make_topology(2, 0, {}), std::invalid_argument);
}

TEST(RoutingChecks, BrokenPathAndWrongDestination)
{
    auto [t, r] = builtin_figure1();
    auto bad = r;
    bad.commodities[0].links = {2, 7};  // links 3, 8: 1 -> 4 then 5 -> 6, gap at node 4
    auto errs = check_routing(t, bad);
    ASSERT_EQ(errs.size(), 1u);
    EXPECT_EQ(errs[0].rfind("E_ROUTE_PATH", 0), 0u);

    bad = r;
    bad.commodities[1].destination = 5;
    errs = check_routing(t, bad);
    ASSERT_EQ(errs.size(), 1u);
    EXPECT_EQ(errs[0].rfind("E_ROUTE_DEST", 0), 0u);

    bad = r;
    bad.commodities[2].links.clear();
    errs = check_routing(t, bad);
    ASSERT_EQ(errs.size(), 1u);
    EXPECT_EQ(errs[0].rfind("E_ROUTE_EMPTY", 0), 0u);

    EXPECT_THROW(make_routing(t, {Commodity{0, 0, 1, {}}}), std::invalid_argument);
    EXPECT_THROW(make_routing(t, {Commodity{0, 0, 1, {9}}}), std::invalid_argument);
}
