#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "network.hpp"

namespace pdsga {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Flat layout of y: r, P(l,n), c(l,n), lambda_r(l), lambda_P(k), lambda_MUD(m).
struct IndexMap {
    int R = 0, L = 0, NF = 0, K = 0, NM = 0;

    int r(int i) const { return i; }
    int P(int l, int n) const { return R + l * NF + n; }
    int c(int l, int n) const { return R + L * NF + l * NF + n; }
    int lam_r(int l) const { return R + 2 * L * NF + l; }
    int lam_P(int k) const { return R + 2 * L * NF + L + k; }
    int lam_mud(int m) const { return R + 2 * L * NF + L + K + m; }

    int primal_dim() const { return R + 2 * L * NF; }        // M
    int dual_dim() const { return L + K + NM; }               // N_c
    int dim() const { return primal_dim() + dual_dim(); }
    // Row of constraint j in the slack vector equals coordinate primal_dim() + j.
    int flow_row(int l) const { return l; }
    int power_row(int k) const { return L + k; }
    int mud_row(int m) const { return L + K + m; }
};

struct ProblemParams {
    std::vector<double> weights;  // per commodity, default 1
    std::vector<double> p_max;    // per node, default 1
    std::vector<double> margin;   // per node power backoff K, default 0
    double snr_db = 10.0;
    double prox_weight = 0.1;     // strong-concavity term on P and c
};

struct ProblemInstance {
    Topology topo;
    RoutingTable routing;
    std::vector<double> weights;
    std::vector<double> p_max;
    std::vector<double> margin;
    double noise_power = 1.0;
    double prox_weight = 0.0;
    std::vector<CapacityConstraint> mud;
    IndexMap idx;
    std::vector<std::vector<int>> mud_of;  // (l * NF + n) -> MUD constraints containing link l on subband n

    int dim() const { return idx.dim(); }
};

inline ProblemInstance make_instance(const Topology& t, const RoutingTable& r, const ProblemParams& p = {})
{
    ProblemInstance inst;
    inst.topo = t;
    inst.routing = r;
    const int R = static_cast<int>(r.commodities.size());
    inst.weights = p.weights.empty() ? std::vector<double>(R, 1.0) : p.weights;
    inst.p_max = p.p_max.empty() ? std::vector<double>(t.num_nodes, 1.0) : p.p_max;
    inst.margin = p.margin.empty() ? std::vector<double>(t.num_nodes, 0.0) : p.margin;
    if (static_cast<int>(inst.weights.size()) != R)
        throw std::invalid_argument("problem: one weight per commodity required");
    if (static_cast<int>(inst.p_max.size()) != t.num_nodes || static_cast<int>(inst.margin.size()) != t.num_nodes)
        throw std::invalid_argument("problem: one power budget and margin per node required");
    for (double w : inst.weights)
        if (!(w > 0.0))
            throw std::invalid_argument("problem: utility weights must be positive");
    for (int k = 0; k < t.num_nodes; ++k) {
        if (!(inst.p_max[k] > 0.0))
            throw std::invalid_argument("problem: power budgets must be positive");
        if (!(inst.margin[k] >= 0.0) || !(inst.margin[k] < inst.p_max[k]))
            throw std::invalid_argument("problem: margin must lie in [0, P_max)");
    }
    if (!(p.prox_weight >= 0.0))
        throw std::invalid_argument("problem: prox_weight must be nonnegative");
    inst.prox_weight = p.prox_weight;

    // sigma^2 = P_ref / SNR with P_ref = P_max / (N_F |P_k|), averaged over transmitting nodes.
    double pref = 0.0;
    int tx = 0;
    for (int k = 0; k < t.num_nodes; ++k) {
        if (t.outgoing[k].empty())
            continue;
        pref += inst.p_max[k] / (t.num_subbands * double(t.outgoing[k].size()));
        ++tx;
    }
    if (tx == 0)
        throw std::invalid_argument("problem: no transmitting node");
    inst.noise_power = (pref / tx) / std::pow(10.0, p.snr_db / 10.0);

    inst.mud = enumerate_capacity_constraints(t);
    inst.idx = IndexMap{R, t.num_links(), t.num_subbands, t.num_nodes, static_cast<int>(inst.mud.size())};
    inst.mud_of.assign(t.num_links() * t.num_subbands, {});
    for (int m = 0; m < static_cast<int>(inst.mud.size()); ++m)
        for (int l : inst.mud[m].links)
            inst.mud_of[l * t.num_subbands + inst.mud[m].subband].push_back(m);
    return inst;
}

inline ProblemInstance figure1_instance(const ProblemParams& p = {}, int num_subbands = 2)
{
    auto [t, r] = builtin_figure1(num_subbands);
    return make_instance(t, r, p);
}

// Structured view of a flat iterate.
struct PrimalDualPoint {
    Vec r, P, c, lambda_r, lambda_P, lambda_mud;  // P and c are link-major (l * NF + n)

    static PrimalDualPoint from_flat(const IndexMap& ix, const Vec& y)
    {
        if (y.size() != ix.dim())
            throw std::invalid_argument("point: dimension mismatch");
        PrimalDualPoint p;
        p.r = y.segment(0, ix.R);
        p.P = y.segment(ix.P(0, 0), ix.L * ix.NF);
        p.c = y.segment(ix.c(0, 0), ix.L * ix.NF);
        p.lambda_r = y.segment(ix.lam_r(0), ix.L);
        p.lambda_P = y.segment(ix.lam_P(0), ix.K);
        p.lambda_mud = y.segment(ix.lam_mud(0), ix.NM);
        return p;
    }

    Vec to_flat(const IndexMap& ix) const
    {
        Vec y(ix.dim());
        y << r, P, c, lambda_r, lambda_P, lambda_mud;
        return y;
    }
};

// Received power sum over the links of MUD constraint m.
inline double mud_rx_sum(const ProblemInstance& in, const Vec& y, const Eigen::MatrixXd& g, int m)
{
    const auto& cc = in.mud[m];
    double s = 0.0;
    for (int l : cc.links)
        s += g(l, cc.subband) * y(in.idx.P(l, cc.subband));
    return s;
}

// Slack per constraint, positive when strictly satisfied; order flow, power, MUD.
inline Vec constraint_slacks(const ProblemInstance& in, const Vec& y, const Eigen::MatrixXd& g)
{
    const auto& ix = in.idx;
    Vec s(ix.dual_dim());
    for (int l = 0; l < ix.L; ++l) {
        double v = 0.0;
        for (int n = 0; n < ix.NF; ++n)
            v += y(ix.c(l, n));
        for (int i : in.routing.link_membership[l])
            v -= y(ix.r(i));
        s(ix.flow_row(l)) = v;
    }
    for (int k = 0; k < ix.K; ++k) {
        double v = in.p_max[k] - in.margin[k];
        for (int l : in.topo.outgoing[k])
            for (int n = 0; n < ix.NF; ++n)
                v -= y(ix.P(l, n));
        s(ix.power_row(k)) = v;
    }
    for (int m = 0; m < ix.NM; ++m) {
        const auto& cc = in.mud[m];
        double v = std::log1p(mud_rx_sum(in, y, g, m) / in.noise_power);
        for (int l : cc.links)
            v -= y(ix.c(l, cc.subband));
        s(ix.mud_row(m)) = v;
    }
    return s;
}

inline double sum_utility(const ProblemInstance& in, const Vec& y)
{
    double u = 0.0;
    for (int i = 0; i < in.idx.R; ++i)
        u += in.weights[i] * std::log1p(y(i));
    return u;
}

inline double lagrangian(const ProblemInstance& in, const Vec& y, const Eigen::MatrixXd& g)
{
    const auto& ix = in.idx;
    const int M = ix.primal_dim();
    double val = sum_utility(in, y);
    if (in.prox_weight > 0.0)
        val -= 0.5 * in.prox_weight * y.segment(ix.R, M - ix.R).squaredNorm();
    return val + y.tail(ix.dual_dim()).dot(constraint_slacks(in, y, g));
}

// [grad_x L ; -grad_lambda L] in index-map order.
inline Vec fictitious_gradient(const ProblemInstance& in, const Vec& y, const Eigen::MatrixXd& g)
{
    const auto& ix = in.idx;
    const int M = ix.primal_dim();
    Vec grad = Vec::Zero(ix.dim());
    for (int i = 0; i < ix.R; ++i)
        grad(ix.r(i)) = in.weights[i] / (1.0 + y(ix.r(i)));
    for (int j = ix.R; j < M; ++j)
        grad(j) = -in.prox_weight * y(j);
    for (int l = 0; l < ix.L; ++l) {
        const double lam = y(ix.lam_r(l));
        for (int n = 0; n < ix.NF; ++n)
            grad(ix.c(l, n)) += lam;
        for (int i : in.routing.link_membership[l])
            grad(ix.r(i)) -= lam;
    }
    for (int k = 0; k < ix.K; ++k) {
        const double lam = y(ix.lam_P(k));
        for (int l : in.topo.outgoing[k])
            for (int n = 0; n < ix.NF; ++n)
                grad(ix.P(l, n)) -= lam;
    }
    for (int m = 0; m < ix.NM; ++m) {
        const auto& cc = in.mud[m];
        const double lam = y(ix.lam_mud(m));
        const double den = in.noise_power + mud_rx_sum(in, y, g, m);
        for (int l : cc.links) {
            grad(ix.P(l, cc.subband)) += lam * g(l, cc.subband) / den;
            grad(ix.c(l, cc.subband)) -= lam;
        }
    }
    grad.tail(ix.dual_dim()) = -constraint_slacks(in, y, g);
    return grad;
}

// Jacobian of the fictitious gradient with respect to y.
inline Mat jacobian(const ProblemInstance& in, const Vec& y, const Eigen::MatrixXd& g)
{
    const auto& ix = in.idx;
    const int M = ix.primal_dim();
    Mat J = Mat::Zero(ix.dim(), ix.dim());
    for (int i = 0; i < ix.R; ++i) {
        const double d = 1.0 + y(ix.r(i));
        J(ix.r(i), ix.r(i)) = -in.weights[i] / (d * d);
    }
    for (int j = ix.R; j < M; ++j)
        J(j, j) = -in.prox_weight;
    auto couple = [&](int x, int lam, double v) {
        J(x, lam) += v;
        J(lam, x) -= v;
    };
    for (int l = 0; l < ix.L; ++l) {
        for (int n = 0; n < ix.NF; ++n)
            couple(ix.c(l, n), ix.lam_r(l), 1.0);
        for (int i : in.routing.link_membership[l])
            couple(ix.r(i), ix.lam_r(l), -1.0);
    }
    for (int k = 0; k < ix.K; ++k)
        for (int l : in.topo.outgoing[k])
            for (int n = 0; n < ix.NF; ++n)
                couple(ix.P(l, n), ix.lam_P(k), -1.0);
    for (int m = 0; m < ix.NM; ++m) {
        const auto& cc = in.mud[m];
        const int n = cc.subband;
        const double lam = y(ix.lam_mud(m));
        const double den = in.noise_power + mud_rx_sum(in, y, g, m);
        for (int a : cc.links) {
            couple(ix.P(a, n), ix.lam_mud(m), g(a, n) / den);
            couple(ix.c(a, n), ix.lam_mud(m), -1.0);
            if (lam != 0.0)
                for (int b : cc.links)
                    J(ix.P(a, n), ix.P(b, n)) -= lam * g(a, n) * g(b, n) / (den * den);
        }
    }
    return J;
}

inline Mat sub_jacobian(const ProblemInstance& in, const Vec& y, const Eigen::MatrixXd& g,
                        const std::vector<int>& group)
{
    const int N = in.dim();
    std::vector<char> seen(N, 0);
    for (int i : group) {
        if (i < 0 || i >= N || seen[i])
            throw std::invalid_argument("sub_jacobian: invalid or repeated index");
        seen[i] = 1;
    }
    const Mat J = jacobian(in, y, g);
    Mat S(group.size(), group.size());
    for (std::size_t a = 0; a < group.size(); ++a)
        for (std::size_t b = 0; b < group.size(); ++b)
            S(a, b) = J(group[a], group[b]);
    return S;
}

inline Vec project_nonneg(const Vec& v) { return v.cwiseMax(0.0); }

inline double kkt_residual(const ProblemInstance& in, const Vec& y, const Eigen::MatrixXd& g)
{
    return (y - project_nonneg(y + fictitious_gradient(in, y, g))).norm();
}

// Coordinates not pinned at the boundary: excludes y_i <= eps with a gradient pushing outward.
inline std::vector<int> free_coordinates(const Vec& y, const Vec& grad, double eps = 1e-12)
{
    std::vector<int> f;
    for (int i = 0; i < y.size(); ++i)
        if (!(y(i) <= eps && grad(i) < 0.0))
            f.push_back(i);
    return f;
}

inline Mat principal_submatrix(const Mat& A, const std::vector<int>& idx)
{
    Mat S(idx.size(), idx.size());
    for (std::size_t a = 0; a < idx.size(); ++a)
        for (std::size_t b = 0; b < idx.size(); ++b)
            S(a, b) = A(idx[a], idx[b]);
    return S;
}

// Directions along which the saddle point is not unique: the null space of the Jacobian
// restricted to the free coordinates, embedded in the full space (orthonormal columns).
// Multipliers of constraints whose primal variables all sit at zero, and multipliers of
// constraints that coincide once some links are silent, live here.
inline Mat null_directions(const Mat& J, const std::vector<int>& free, double rel_tol = 1e-9)
{
    const int N = static_cast<int>(J.rows());
    if (free.empty())
        return Mat(N, 0);
    const Mat JF = principal_submatrix(J, free);
    Eigen::BDCSVD<Mat> svd(JF, Eigen::ComputeFullV);
    const auto& s = svd.singularValues();
    const double smax = s.size() ? s(0) : 0.0;
    int rank = 0;
    for (int i = 0; i < s.size(); ++i)
        if (s(i) > rel_tol * std::max(smax, 1e-300))
            ++rank;
    const int nk = static_cast<int>(free.size()) - rank;
    Mat K = Mat::Zero(N, nk);
    for (int j = 0; j < nk; ++j)
        for (std::size_t a = 0; a < free.size(); ++a)
            K(free[a], j) = svd.matrixV()(a, rank + j);
    return K;
}

// Euclidean distance with the non-unique directions removed.
inline double reduced_distance(const Vec& y, const Vec& ystar, const Mat& null_dirs)
{
    const Vec e = y - ystar;
    if (null_dirs.cols() == 0)
        return e.norm();
    const double proj = (null_dirs.transpose() * e).squaredNorm();
    return std::sqrt(std::max(0.0, e.squaredNorm() - proj));
}

}  // namespace pdsga
