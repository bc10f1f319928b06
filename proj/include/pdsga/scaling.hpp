#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fsmc.hpp"
#include "problem.hpp"

namespace pdsga {

enum class PolicyKind { Constant, DiagonalHessian, BlockDiagonalAdaptive, BruteForce };

enum class Grouping {
    Node,     // per receiving node plus per source node
    Coupled,  // connected components of the Jacobian sparsity on the free coordinates
};

struct ScalingPolicy {
    PolicyKind kind = PolicyKind::BlockDiagonalAdaptive;
    double xi = 0.005;        // constant stepsize, also the fallback for uncoupled coordinates
    double pd_floor = 1e-3;   // lambda_min
    double step_cap = 10.0;   // largest gain any block may apply
    Grouping grouping = Grouping::Coupled;
    double relaxation = 0.5;  // gain a on the damped block inverse; a = 1 cycles between active sets
    int brute_evals = 200;

    static ScalingPolicy constant(double xi) { return {PolicyKind::Constant, xi}; }
    static ScalingPolicy diagonal() { return {PolicyKind::DiagonalHessian}; }
    static ScalingPolicy adaptive(Grouping g = Grouping::Coupled)
    {
        ScalingPolicy p;
        p.grouping = g;
        return p;
    }
    static ScalingPolicy brute(Grouping g = Grouping::Coupled)
    {
        ScalingPolicy p;
        p.kind = PolicyKind::BruteForce;
        p.grouping = g;
        return p;
    }
};

inline std::string policy_name(const ScalingPolicy& p)
{
    switch (p.kind) {
    case PolicyKind::Constant: return "Con";
    case PolicyKind::DiagonalHessian: return "Dia";
    case PolicyKind::BlockDiagonalAdaptive: return p.grouping == Grouping::Node ? "PDSGA-node" : "PDSGA";
    case PolicyKind::BruteForce: return p.grouping == Grouping::Node ? "Bru-node" : "Bru";
    }
    return "?";
}

using Groups = std::vector<std::vector<int>>;

// Static partition: one group per receiving node k holding P, c of links in I_k, its MUD
// multipliers and lambda_P(k); one group per source node holding its rates and the flow
// multipliers of the links it transmits. lambda_P of a node that receives nothing joins
// that node's source group.
inline Groups node_grouping(const ProblemInstance& in)
{
    const auto& ix = in.idx;
    const int K = ix.K;
    Groups rx(K), src(K);
    for (int k = 0; k < K; ++k)
        for (int l : in.topo.interference[k])
            for (int n = 0; n < ix.NF; ++n) {
                rx[k].push_back(ix.P(l, n));
                rx[k].push_back(ix.c(l, n));
            }
    for (int m = 0; m < ix.NM; ++m)
        rx[in.mud[m].rx_node].push_back(ix.lam_mud(m));
    for (int i = 0; i < ix.R; ++i)
        src[in.routing.commodities[i].source].push_back(ix.r(i));
    for (int l = 0; l < ix.L; ++l)
        src[in.topo.links[l].first].push_back(ix.lam_r(l));
    for (int k = 0; k < K; ++k)
        (rx[k].empty() ? src[k] : rx[k]).push_back(ix.lam_P(k));
    Groups out;
    for (int k = 0; k < K; ++k) {
        if (!rx[k].empty())
            out.push_back(rx[k]);
        if (!src[k].empty())
            out.push_back(src[k]);
    }
    for (auto& g : out)
        std::sort(g.begin(), g.end());
    return out;
}

// Connected components of the nonzero pattern of J restricted to `free`.
inline Groups coupled_grouping(const Mat& J, const std::vector<int>& free)
{
    const int n = static_cast<int>(free.size());
    std::vector<int> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int a) {
        while (parent[a] != a)
            a = parent[a] = parent[parent[a]];
        return a;
    };
    for (int a = 0; a < n; ++a)
        for (int b = a + 1; b < n; ++b)
            if (J(free[a], free[b]) != 0.0 || J(free[b], free[a]) != 0.0)
                parent[find(a)] = find(b);
    std::vector<int> slot(n, -1);
    Groups out;
    for (int a = 0; a < n; ++a) {
        const int r = find(a);
        if (slot[r] < 0) {
            slot[r] = static_cast<int>(out.size());
            out.emplace_back();
        }
        out[slot[r]].push_back(free[a]);
    }
    return out;
}

// Jacobian, gradient and free set at one point; shared by every policy.
struct LocalModel {
    Vec grad;
    Mat J;
    std::vector<int> free;

    static LocalModel at(const ProblemInstance& in, const Vec& y, const Mat& gains)
    {
        LocalModel m;
        m.grad = fictitious_gradient(in, y, gains);
        m.J = jacobian(in, y, gains);
        m.free = free_coordinates(y, m.grad);
        return m;
    }
};

struct ScalingStats {
    long fallback_blocks = 0;  // blocks with no curvature, scaled by xi
};

namespace detail {

inline double diag_entry(const ScalingPolicy& p, double jii)
{
    const double a = std::abs(jii);
    if (a < p.pd_floor)
        return p.xi;
    return std::min(p.step_cap, 1.0 / std::max(p.pd_floor, a));
}

// Factored block for D_g = -a V diag(s/(s^2+tau^2)) U^T from J_g = U S V^T.
struct BlockSvd {
    std::vector<int> idx;
    Mat U, V;
    Vec s;
    bool zero = false;
};

inline BlockSvd factor_block(const Mat& J, const std::vector<int>& g)
{
    BlockSvd b;
    b.idx = g;
    const Mat Jg = principal_submatrix(J, g);
    if (Jg.cwiseAbs().maxCoeff() == 0.0) {
        b.zero = true;
        return b;
    }
    Eigen::BDCSVD<Mat> svd(Jg, Eigen::ComputeFullU | Eigen::ComputeFullV);
    b.U = svd.matrixU();
    b.V = svd.matrixV();
    b.s = svd.singularValues();
    return b;
}

inline void place_block(Mat& D, const BlockSvd& b, double a, double tau)
{
    const Vec w = (b.s.array() / (b.s.array().square() + tau * tau)).matrix();
    const Mat Dg = -a * b.V * w.asDiagonal() * b.U.transpose();
    for (std::size_t i = 0; i < b.idx.size(); ++i)
        for (std::size_t j = 0; j < b.idx.size(); ++j)
            D(b.idx[i], b.idx[j]) = Dg(i, j);
}

}  // namespace detail

// Tikhonov damping that keeps the largest gain of a damped block inverse at step_cap.
inline double default_damping(const ScalingPolicy& p) { return 1.0 / (2.0 * p.step_cap); }

inline Groups policy_groups(const ScalingPolicy& p, const ProblemInstance& in, const LocalModel& m)
{
    if (p.grouping == Grouping::Coupled)
        return coupled_grouping(m.J, m.free);
    std::vector<char> is_free(in.dim(), 0);
    for (int i : m.free)
        is_free[i] = 1;
    Groups out;
    for (const auto& g : node_grouping(in)) {
        std::vector<int> f;
        for (int i : g)
            if (is_free[i])
                f.push_back(i);
        // A coordinate with no coupling inside its node group gets its own (fallback) block.
        std::vector<int> kept;
        for (int i : f) {
            bool coupled = false;
            for (int j : f)
                coupled |= m.J(i, j) != 0.0 || m.J(j, i) != 0.0;
            if (coupled)
                kept.push_back(i);
            else
                out.push_back({i});
        }
        if (!kept.empty())
            out.push_back(std::move(kept));
    }
    return out;
}

// Objective for the brute-force policy: contraction estimate of a candidate D.
using ScalingObjective = std::function<double(const Mat& D)>;

// Reduced contraction modulus of the free block, ignoring directions in `null_dirs`.
inline double reduced_contraction_modulus(const Mat& D, const Mat& J, const std::vector<int>& free,
                                          const Mat& null_dirs);

namespace detail {

struct BruteSearch {
    std::vector<BlockSvd> blocks;  // nonzero blocks only
    Mat base;                      // D with everything outside `blocks` filled in
};

// Pattern search over per-block (log a, log tau) subject to a / (2 tau) <= step_cap.
inline Mat brute_force_search(const ScalingPolicy& p, const BruteSearch& s, const ScalingObjective& f)
{
    const int nb = static_cast<int>(s.blocks.size());
    const double tau0 = default_damping(p);
    std::vector<double> th(2 * nb);
    for (int b = 0; b < nb; ++b) {
        th[2 * b] = std::log(p.relaxation);
        th[2 * b + 1] = std::log(tau0);
    }
    auto build = [&](const std::vector<double>& t) {
        Mat D = s.base;
        for (int b = 0; b < nb; ++b)
            place_block(D, s.blocks[b], std::exp(t[2 * b]), std::exp(t[2 * b + 1]));
        return D;
    };
    auto admissible = [&](const std::vector<double>& t) {
        for (int b = 0; b < nb; ++b)
            if (std::exp(t[2 * b]) / (2.0 * std::exp(t[2 * b + 1])) > p.step_cap * (1.0 + 1e-12))
                return false;
        return true;
    };
    double best = f(build(th));
    int evals = 1;
    double step = 0.5;
    while (evals < p.brute_evals && step > 1e-4) {
        bool improved = false;
        for (std::size_t k = 0; k < th.size() && evals < p.brute_evals; ++k) {
            for (double dir : {+1.0, -1.0}) {
                auto t = th;
                t[k] += dir * step;
                if (!admissible(t))
                    continue;
                const double v = f(build(t));
                ++evals;
                if (v < best) {
                    best = v;
                    th = t;
                    improved = true;
                    break;
                }
                if (evals >= p.brute_evals)
                    break;
            }
        }
        if (!improved)
            step *= 0.5;
    }
    return build(th);
}


// With D = -a V diag(s/(s^2+tau^2)) U^T on the whole free set, I + D J has singular values
// |1 - a s^2/(s^2+tau^2)|; the search runs on those scalars.
inline std::pair<double, double> single_block_search(const ScalingPolicy& p, const BlockSvd& b)
{
    const double smax = b.s.size() ? b.s(0) : 0.0;
    std::vector<double> sig;
    for (int i = 0; i < b.s.size(); ++i)
        if (b.s(i) > 1e-9 * smax)
            sig.push_back(b.s(i) * b.s(i));
    auto f = [&](double la, double lt) {
        const double a = std::exp(la), t2 = std::exp(2.0 * lt);
        double worst = 0.0;
        for (double v : sig)
            worst = std::max(worst, std::abs(1.0 - a * v / (v + t2)));
        return worst;
    };
    double la = std::log(p.relaxation), lt = std::log(default_damping(p)), best = f(la, lt), step = 0.5;
    int evals = 1;
    while (evals < p.brute_evals && step > 1e-4) {
        bool improved = false;
        for (int k = 0; k < 2 && !improved; ++k)
            for (double dir : {+1.0, -1.0}) {
                const double na = la + (k == 0 ? dir * step : 0.0);
                const double nt = lt + (k == 1 ? dir * step : 0.0);
                if (std::exp(na - nt) / 2.0 > p.step_cap * (1.0 + 1e-12))
                    continue;
                const double v = f(na, nt);
                ++evals;
                if (v < best) {
                    best = v;
                    la = na;
                    lt = nt;
                    improved = true;
                    break;
                }
            }
        if (!improved)
            step *= 0.5;
    }
    return {std::exp(la), std::exp(lt)};
}

}  // namespace detail

// Scaling matrix for `policy` at the point described by `m`. Coordinates outside the free
// set receive only a diagonal entry so that fixed points of the projection are preserved.
inline Mat compute_scaling(const ScalingPolicy& p, const ProblemInstance& in, const LocalModel& m,
                           const ScalingObjective& brute_objective = {}, ScalingStats* stats = nullptr)
{
    const int N = in.dim();
    if (!(p.xi > 0.0) || !(p.pd_floor > 0.0) || !(p.step_cap > 0.0))
        throw std::invalid_argument("scaling: xi, pd_floor and step_cap must be positive");
    if (p.kind == PolicyKind::Constant)
        return p.xi * Mat::Identity(N, N);

    Mat D = Mat::Zero(N, N);
    for (int i = 0; i < N; ++i)
        D(i, i) = detail::diag_entry(p, m.J(i, i));
    if (p.kind == PolicyKind::DiagonalHessian)
        return D;

    const double tau = default_damping(p);
    const auto groups = policy_groups(p, in, m);
    if (p.kind == PolicyKind::BlockDiagonalAdaptive) {
        for (const auto& g : groups) {
            const Mat Jg = principal_submatrix(m.J, g);
            if (Jg.cwiseAbs().maxCoeff() == 0.0) {
                if (stats)
                    ++stats->fallback_blocks;
                for (int i : g)
                    D(i, i) = p.xi;
                continue;
            }
            // D_g = -a (J_g^T J_g + tau^2 I)^{-1} J_g^T
            Mat A = Jg.transpose() * Jg;
            A.diagonal().array() += tau * tau;
            const Mat Dg = -p.relaxation * Eigen::LLT<Mat>(A).solve(Jg.transpose());
            for (std::size_t i = 0; i < g.size(); ++i)
                for (std::size_t j = 0; j < g.size(); ++j)
                    D(g[i], g[j]) = Dg(i, j);
        }
        return D;
    }

    detail::BruteSearch search;
    for (const auto& g : groups) {
        auto b = detail::factor_block(m.J, g);
        if (b.zero) {
            if (stats)
                ++stats->fallback_blocks;
            for (int i : g)
                D(i, i) = p.xi;
            continue;
        }
        detail::place_block(D, b, p.relaxation, tau);
        search.blocks.push_back(std::move(b));
    }

    search.base = D;
    if (brute_objective)
        return detail::brute_force_search(p, search, brute_objective);

    // Default objective: the contraction estimate at the current point. A single block
    // spanning the free set admits a closed form over its singular values.
    if (search.blocks.size() == 1 && search.blocks[0].idx.size() == m.free.size()) {
        auto [a, t] = detail::single_block_search(p, search.blocks[0]);
        Mat out = search.base;
        detail::place_block(out, search.blocks[0], a, t);
        return out;
    }
    const Mat null0 = Mat(N, 0);
    return detail::brute_force_search(
        p, search, [&](const Mat& Dc) { return reduced_contraction_modulus(Dc, m.J, m.free, null0); });
}

inline Mat compute_scaling(const ScalingPolicy& p, const ProblemInstance& in, const Vec& y, const Mat& gains)
{
    return compute_scaling(p, in, LocalModel::at(in, y, gains));
}

// Spectral norm via the largest eigenvalue of A^T A.
inline double spectral_norm(const Mat& A)
{
    if (A.size() == 0)
        return 0.0;
    Eigen::SelfAdjointEigenSolver<Mat> es(A.transpose() * A, Eigen::EigenvaluesOnly);
    return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
}

// ||I + D J||_2 on the full space.
inline double contraction_modulus(const Mat& D, const Mat& J)
{
    return spectral_norm(Mat::Identity(D.rows(), D.cols()) + D * J);
}

inline double contraction_modulus(const Mat& D, const ProblemInstance& in, const Vec& y, const Mat& gains)
{
    return contraction_modulus(D, jacobian(in, y, gains));
}

inline double reduced_contraction_modulus(const Mat& D, const Mat& J, const std::vector<int>& free,
                                          const Mat& null_dirs)
{
    const int nf = static_cast<int>(free.size());
    if (nf == 0)
        return 0.0;
    Mat T = Mat::Identity(nf, nf) + principal_submatrix(D, free) * principal_submatrix(J, free);
    if (null_dirs.cols() == 0)
        return spectral_norm(T);
    Mat K(nf, null_dirs.cols());
    for (int a = 0; a < nf; ++a)
        K.row(a) = null_dirs.row(free[a]);
    Eigen::HouseholderQR<Mat> qr(K);
    const Mat Q = qr.householderQ() * Mat::Identity(nf, nf);
    const Mat Qp = Q.rightCols(nf - K.cols());
    return spectral_norm(Qp.transpose() * T * Qp);
}

// Perturbed copies of y with each nonzero coordinate scaled by 1 + rel * U(-1, 1).
inline std::vector<Vec> perturbation_samples(const Vec& y, int count, double rel, std::mt19937_64& rng)
{
    std::vector<Vec> out;
    out.reserve(count);
    for (int s = 0; s < count; ++s) {
        Vec v = y;
        for (int i = 0; i < v.size(); ++i)
            v(i) *= 1.0 + rel * (2.0 * uniform01(rng) - 1.0);
        out.push_back(std::move(v));
    }
    return out;
}

// Largest reduced modulus of a fixed D over sample points under the same gains.
inline double contraction_modulus_max(const Mat& D, const ProblemInstance& in, const Mat& gains,
                                      const std::vector<Vec>& samples, const std::vector<int>& free,
                                      const Mat& null_dirs)
{
    if (samples.empty())
        throw std::invalid_argument("contraction_modulus_max: empty sample");
    double worst = 0.0;
    for (const auto& y : samples)
        worst = std::max(worst, reduced_contraction_modulus(D, jacobian(in, y, gains), free, null_dirs));
    return worst;
}

// Smallest eigenvalue of the symmetric part; used to audit produced matrices.
inline double symmetric_part_min_eigenvalue(const Mat& D)
{
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (D + D.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

}  // namespace pdsga
