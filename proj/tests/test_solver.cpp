#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "pdsga/solver.hpp"

using namespace pdsga;

namespace {

ChannelProcess frozen(std::uint64_t seed)
{
    return ChannelProcess::uniform(8, 2, 3, std::numeric_limits<double>::denorm_min(), seed);
}

Vec random_point(const ProblemInstance& in, std::mt19937_64& rng)
{
    Vec y(in.dim());
    for (int i = 0; i < y.size(); ++i)
        y(i) = uniform01(rng) < 0.1 ? 0.0 : uniform01(rng);
    return y;
}

}  // namespace

TEST(Step, ConstantPolicyIsThePlainPrimalDualUpdate)
{
    const auto in = figure1_instance();
    const auto& ix = in.idx;
    std::mt19937_64 rng(1);
    const Vec y = random_point(in, rng);
    const Mat g = frozen(1).current().gains;
    const Vec next = pdsga_step(in, y, g, 0.005 * Mat::Identity(in.dim(), in.dim()));
    const Vec grad = fictitious_gradient(in, y, g);
    for (int i = 0; i < ix.primal_dim(); ++i)  // ascent on L in x
        EXPECT_DOUBLE_EQ(next(i), std::max(0.0, y(i) + 0.005 * grad(i)));
    const Vec s = constraint_slacks(in, y, g);
    for (int j = 0; j < ix.dual_dim(); ++j)  // descent on L in lambda
        EXPECT_DOUBLE_EQ(next(ix.primal_dim() + j), std::max(0.0, y(ix.primal_dim() + j) - 0.005 * s(j)));
}

TEST(Step, RejectsMalformedScaling)
{
    const Vec y = Vec::Zero(3), g = Vec::Ones(3);
    EXPECT_THROW(pdsga_step(y, g, Mat::Identity(2, 2)), std::invalid_argument);
    Mat D = Mat::Identity(3, 3);
    D(1, 1) = 0.0;
    EXPECT_THROW(pdsga_step(y, g, D), std::invalid_argument);
    D(1, 1) = std::nan("");
    EXPECT_THROW(pdsga_step(y, g, D), std::invalid_argument);
}

TEST(Stages, GridPointsInHalfOpenInterval)
{
    EXPECT_EQ(grid_points_in_stage(0, 10, 4), 2);  // 4, 8
    EXPECT_EQ(grid_points_in_stage(3, 10, 4), 3);  // 4, 8, 12
    EXPECT_EQ(grid_points_in_stage(0, 3, 4), 0);
    for (int T : {1, 2, 3, 4, 7, 16})
        for (long Tm = 1; Tm < 60; ++Tm) {
            for (long k = 0; k < 5; ++k)  // stage starts on the grid
                EXPECT_EQ(grid_points_in_stage(k * T, Tm, T), Tm / T);
            for (long start = 0; start < 40; ++start) {
                const long n = grid_points_in_stage(start, Tm, T);
                EXPECT_TRUE(n == Tm / T || n == (Tm + T - 1) / T);
            }
        }
}

TEST(Tracking, FrozenChannelConvergesGeometrically)
{
    const auto in = figure1_instance();
    EquilibriumCache cache(in);
    SolverConfig cfg;
    cfg.horizon = 400;
    cfg.record_points = true;
    const auto tr = run_tracking(frozen(2), ScalingPolicy::adaptive(), cfg, cache, Vec::Zero(in.dim()));
    ASSERT_EQ(tr.records.size(), 400u);
    ASSERT_EQ(tr.stages.size(), 1u);
    EXPECT_EQ(tr.stages[0].sojourn, 400);
    const auto& r = tr.records;
    EXPECT_LT(r.back().distance, 1e-12);
    // Once the active set settles the error shrinks by roughly 0.6 per update.
    for (int i : {90, 100, 110})
        EXPECT_LT(r[i + 10].distance, 0.02 * r[i].distance) << i;
    EXPECT_LT(kkt_residual(in, r.back().y, frozen(2).current().gains), 1e-6);
    EXPECT_EQ(tr.equilibrium_failures, 0);
    EXPECT_FALSE(tr.diverged);
}

TEST(Tracking, StagesAccountForEveryUpdate)
{
    const auto in = figure1_instance();
    EquilibriumCache cache(in);
    SolverConfig cfg;
    cfg.horizon = 3000;
    cfg.update_period = 4;
    const auto proc = ChannelProcess::uniform(8, 2, 3, 3e-3, 3);
    const auto tr = run_tracking(proc, ScalingPolicy::adaptive(), cfg, cache, Vec::Zero(in.dim()));
    long total = 0, slots = 0;
    for (const auto& s : tr.stages) {
        total += s.updates;
        slots += s.sojourn;
    }
    EXPECT_EQ(slots, 3000);
    // Records sit on slots 0, 4, ..., 2996; stage counts cover the grid on (0, 3000].
    EXPECT_EQ(total, static_cast<long>(tr.records.size()));
    EXPECT_GT(tr.stages.size(), 3u);
    for (const auto& r : tr.records)
        EXPECT_EQ(r.slot % 4, 0);
}

TEST(Tracking, SameSeedSameTrajectory)
{
    const auto in = figure1_instance();
    EquilibriumCache c1(in), c2(in);
    SolverConfig cfg;
    cfg.horizon = 1500;
    cfg.region_delta = 1.0;
    const auto proc = ChannelProcess::uniform(8, 2, 3, 3e-3, 4);
    const auto a = run_tracking(proc, ScalingPolicy::adaptive(), cfg, c1, Vec::Zero(in.dim()));
    const auto b = run_tracking(proc, ScalingPolicy::adaptive(), cfg, c2, Vec::Zero(in.dim()));
    std::ostringstream sa, sb;
    write_trajectory_csv(a, sa);
    write_trajectory_csv(b, sb);
    EXPECT_EQ(sa.str(), sb.str());
    ASSERT_EQ(a.records.size(), b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        EXPECT_EQ(a.records[i].distance, b.records[i].distance);
        EXPECT_EQ(a.records[i].nearest, b.records[i].nearest);
        EXPECT_LE(a.records[i].nearest, a.records[i].distance);
    }
}

TEST(Tracking, RunawayStepsizeIsReportedAsDivergence)
{
    const auto in = figure1_instance();
    EquilibriumCache cache(in);
    SolverConfig cfg;
    cfg.horizon = 2000;
    const auto tr = run_tracking(frozen(5), ScalingPolicy::constant(50.0), cfg, cache, Vec::Zero(in.dim()));
    EXPECT_TRUE(tr.diverged);
    EXPECT_GE(tr.diverged_at, 0);
}

TEST(Tracking, ConfigValidation)
{
    const auto in = figure1_instance();
    EquilibriumCache cache(in);
    SolverConfig cfg;
    cfg.update_period = 0;
    EXPECT_THROW(run_tracking(frozen(1), ScalingPolicy::adaptive(), cfg, cache, Vec::Zero(in.dim())),
                 std::invalid_argument);
    cfg = {};
    EXPECT_THROW(run_tracking(frozen(1), ScalingPolicy::adaptive(), cfg, cache, Vec::Zero(3)), std::invalid_argument);
}

TEST(Tracking, PowerRecordIgnoresMargin)
{
    auto [t, r] = builtin_figure1();
    ProblemParams p;
    p.margin.assign(6, 0.1);
    const auto in = make_instance(t, r, p);
    EquilibriumCache cache(in);
    SolverConfig cfg;
    cfg.horizon = 300;
    cfg.record_points = true;
    const auto tr = run_tracking(frozen(6), ScalingPolicy::adaptive(), cfg, cache, Vec::Zero(in.dim()));
    EXPECT_DOUBLE_EQ(tr.margin, 0.1);
    // The record holds the untightened g = sum P - P_max; the iterate respects g <= -K.
    const auto& last = tr.records.back();
    for (int k = 0; k < in.idx.K; ++k) {
        double used = 0.0;
        for (int l : in.topo.outgoing[k])
            for (int n = 0; n < in.idx.NF; ++n)
                used += last.y(in.idx.P(l, n));
        EXPECT_NEAR(last.power_g[k], used - in.p_max[k], 1e-12);
        EXPECT_LE(last.power_g[k], -0.1 + 1e-6);
    }
}

TEST(Distributed, ClosedFormRate)
{
    EXPECT_DOUBLE_EQ(closed_form_rate(1.0, 0.5), 1.0);
    EXPECT_DOUBLE_EQ(closed_form_rate(1.0, 1.0), 0.0);
    EXPECT_DOUBLE_EQ(closed_form_rate(1.0, 3.0), 0.0);
    EXPECT_THROW(closed_form_rate(1.0, 0.0), std::domain_error);
}

TEST(Distributed, RoundEqualsCentralStep)
{
    const auto in = figure1_instance();
    DistributedStepsizes st;
    st.alpha_r = 0.01;
    st.alpha_l = 0.02;
    st.gamma_l = 0.03;
    st.alpha_p = 0.04;
    st.gamma_M = 0.05;
    st.gamma_p = 0.06;
    const Mat D = distributed_scaling(in, st);
    std::mt19937_64 rng(8);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        auto proc = ChannelProcess::uniform(8, 2, 3, 0.05, 1000 + trial);
        const Mat g = proc.current().gains;
        const Vec y = random_point(in, rng);
        const auto net = distributed_round(in, distribute(in, y), g, st);
        worst = std::max(worst, (gather(in, net) - pdsga_step(in, y, g, D)).cwiseAbs().maxCoeff());
    }
    EXPECT_LT(worst, 1e-12);
}

TEST(Distributed, RoundTripAndMessageCount)
{
    const auto in = figure1_instance();
    std::mt19937_64 rng(9);
    const Vec y = random_point(in, rng);
    const auto net = distribute(in, y);
    EXPECT_EQ(gather(in, net), y);
    const auto next = distributed_round(in, net, ChannelProcess::uniform(8, 2, 3, 0.05, 1).current().gains, {});
    EXPECT_EQ(next.board.messages, 80);
}

TEST(Distributed, ClosedFormSourcesUseRoutePrices)
{
    const auto in = figure1_instance();
    Vec y = Vec::Zero(in.dim());
    for (int l = 0; l < in.idx.L; ++l)
        y(in.idx.lam_r(l)) = 0.25;
    const auto net = distributed_round(in, distribute(in, y), ChannelProcess::uniform(8, 2, 3, 0.05, 1).current().gains,
                                       {}, RateUpdate::ClosedForm);
    const Vec out = gather(in, net);
    for (int i = 0; i < in.idx.R; ++i) {
        const double price = 0.25 * in.routing.commodities[i].links.size();
        EXPECT_DOUBLE_EQ(out(i), closed_form_rate(1.0, price));
    }
}
