#pragma once

#include <atomic>
#include <cmath>
#include <limits>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <shared_mutex>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>
#include <json.hpp>

#include "fsmc.hpp"
#include "problem.hpp"

namespace pdsga {

struct EquilibriumOptions {
    double tolerance = 1e-6;       // required kkt_residual
    int max_iterations = 100000;   // total Newton steps across both phases
    double barrier_gap = 1e-10;
    double barrier_growth = 20.0;
    double polish_target = 1e-13;
};

class EquilibriumError : public std::runtime_error {
public:
    EquilibriumError(const std::string& what, double best) : std::runtime_error(what), best_residual(best) {}
    double best_residual;
};

struct Equilibrium {
    Vec y;
    Mat null_dirs;  // non-unique multiplier directions at y
    double residual = 0.0;
    int iterations = 0;
};

namespace detail {

// Strictly feasible primal start; `rng` (optional) shrinks each coordinate by a random factor.
inline Vec interior_start(const ProblemInstance& in, const Eigen::MatrixXd& g, std::mt19937_64* rng)
{
    const auto& ix = in.idx;
    auto factor = [&](double lo) { return rng ? lo + (1.0 - lo) * uniform01(*rng) : 1.0; };
    Vec y = Vec::Zero(ix.dim());
    for (int k = 0; k < ix.K; ++k) {
        const auto& out = in.topo.outgoing[k];
        if (out.empty())
            continue;
        const double p = 0.5 * (in.p_max[k] - in.margin[k]) / (ix.NF * double(out.size()));
        for (int l : out)
            for (int n = 0; n < ix.NF; ++n)
                y(ix.P(l, n)) = p * factor(0.5);
    }
    for (int l = 0; l < ix.L; ++l)
        for (int n = 0; n < ix.NF; ++n) {
            double cap = std::numeric_limits<double>::infinity();
            for (int m : in.mud_of[l * ix.NF + n])
                cap = std::min(cap, std::log1p(mud_rx_sum(in, y, g, m) / in.noise_power) / in.mud[m].links.size());
            y(ix.c(l, n)) = 0.25 * cap * factor(0.2);
        }
    for (int i = 0; i < ix.R; ++i) {
        double cap = std::numeric_limits<double>::infinity();
        for (int l : in.routing.commodities[i].links) {
            double cl = 0.0;
            for (int n = 0; n < ix.NF; ++n)
                cl += y(ix.c(l, n));
            cap = std::min(cap, cl / in.routing.link_membership[l].size());
        }
        y(ix.r(i)) = 0.25 * cap * factor(0.2);
    }
    return y;
}

// Log-barrier Newton method on the primal problem; duals recovered as 1/(t s_j).
inline Vec barrier_solve(const ProblemInstance& in, const Eigen::MatrixXd& g, Vec y, const EquilibriumOptions& opt,
                         int& iters)
{
    const auto& ix = in.idx;
    const int M = ix.primal_dim();
    const int NC = ix.dual_dim();
    const double kappa = in.prox_weight;

    auto feasible_phi = [&](const Vec& x, double t, double& phi) {
        Vec yy = Vec::Zero(ix.dim());
        yy.head(M) = x;
        if ((x.array() <= 0.0).any())
            return false;
        const Vec s = constraint_slacks(in, yy, g);
        if ((s.array() <= 0.0).any() || !s.allFinite())
            return false;
        double f0 = 0.0;
        for (int i = 0; i < ix.R; ++i)
            f0 -= in.weights[i] * std::log1p(x(i));
        f0 += 0.5 * kappa * x.segment(ix.R, M - ix.R).squaredNorm();
        phi = t * f0 - s.array().log().sum() - x.array().log().sum();
        return true;
    };

    Vec x = y.head(M);
    double t = 1.0;
    const double m_total = NC + M;
    Vec s;
    while (true) {
        for (int inner = 0; inner < 200; ++inner) {
            if (++iters > opt.max_iterations)
                throw EquilibriumError("equilibrium: barrier iteration budget exhausted", std::nan(""));
            Vec yy = Vec::Zero(ix.dim());
            yy.head(M) = x;
            s = constraint_slacks(in, yy, g);

            // slack gradients as columns
            Mat A = Mat::Zero(M, NC);
            for (int l = 0; l < ix.L; ++l) {
                for (int n = 0; n < ix.NF; ++n)
                    A(ix.c(l, n), ix.flow_row(l)) = 1.0;
                for (int i : in.routing.link_membership[l])
                    A(ix.r(i), ix.flow_row(l)) = -1.0;
            }
            for (int k = 0; k < ix.K; ++k)
                for (int l : in.topo.outgoing[k])
                    for (int n = 0; n < ix.NF; ++n)
                        A(ix.P(l, n), ix.power_row(k)) = -1.0;
            Mat H = Mat::Zero(M, M);
            for (int m = 0; m < ix.NM; ++m) {
                const auto& cc = in.mud[m];
                const int n = cc.subband;
                const double den = in.noise_power + mud_rx_sum(in, yy, g, m);
                for (int a : cc.links) {
                    A(ix.P(a, n), ix.mud_row(m)) = g(a, n) / den;
                    A(ix.c(a, n), ix.mud_row(m)) = -1.0;
                    for (int b : cc.links)
                        H(ix.P(a, n), ix.P(b, n)) += g(a, n) * g(b, n) / (den * den * s(ix.mud_row(m)));
                }
            }
            Vec grad = Vec::Zero(M);
            for (int i = 0; i < ix.R; ++i) {
                grad(i) = -t * in.weights[i] / (1.0 + x(i));
                H(i, i) += t * in.weights[i] / ((1.0 + x(i)) * (1.0 + x(i)));
            }
            for (int j = ix.R; j < M; ++j) {
                grad(j) = t * kappa * x(j);
                H(j, j) += t * kappa;
            }
            const Vec inv_s = s.cwiseInverse();
            grad -= A * inv_s;
            grad -= x.cwiseInverse();
            H += A * inv_s.cwiseAbs2().asDiagonal() * A.transpose();
            H.diagonal() += x.cwiseInverse().cwiseAbs2();

            Eigen::LLT<Mat> llt(H);
            Vec dx = llt.info() == Eigen::Success ? Vec(llt.solve(-grad)) : Vec(H.fullPivLu().solve(-grad));
            const double dec2 = -grad.dot(dx);
            if (!(dec2 > 2e-10))
                break;
            double phi0 = 0.0, phi1 = 0.0;
            feasible_phi(x, t, phi0);
            double a = 1.0;
            while (a > 1e-14) {
                const Vec xn = x + a * dx;
                if (feasible_phi(xn, t, phi1) && phi1 <= phi0 - 0.25 * a * dec2)
                    break;
                a *= 0.5;
            }
            if (a <= 1e-14)
                break;
            x += a * dx;
        }
        if (m_total / t < opt.barrier_gap)
            break;
        t *= opt.barrier_growth;
    }
    Vec out = Vec::Zero(ix.dim());
    out.head(M) = x;
    out.tail(NC) = (t * s).cwiseInverse();
    return out;
}

// Projected Newton on the fixed-point residual with the active set frozen per step.
inline Vec polish(const ProblemInstance& in, const Eigen::MatrixXd& g, Vec y, const EquilibriumOptions& opt,
                  int& iters)
{
    double res = kkt_residual(in, y, g);
    for (int it = 0; it < 60 && res > opt.polish_target; ++it) {
        ++iters;
        Vec grad = fictitious_gradient(in, y, g);
        for (int i = 0; i < y.size(); ++i)
            if (y(i) + grad(i) < 0.0)
                y(i) = 0.0;
        grad = fictitious_gradient(in, y, g);
        res = kkt_residual(in, y, g);
        std::vector<int> F;
        for (int i = 0; i < y.size(); ++i)
            if (!(y(i) == 0.0 && grad(i) <= 0.0))
                F.push_back(i);
        const Mat JF = principal_submatrix(jacobian(in, y, g), F);
        Vec gF(F.size());
        for (std::size_t a = 0; a < F.size(); ++a)
            gF(a) = grad(F[a]);
        Eigen::CompleteOrthogonalDecomposition<Mat> cod(JF);
        cod.setThreshold(1e-12);
        const Vec dF = cod.solve(-gF);
        Vec d = Vec::Zero(y.size());
        for (std::size_t a = 0; a < F.size(); ++a)
            d(F[a]) = dF(a);
        double a = 1.0;
        bool moved = false;
        while (a > 1e-10) {
            const Vec yn = project_nonneg(y + a * d);
            const double rn = kkt_residual(in, yn, g);
            if (std::isfinite(rn) && rn < (1.0 - 1e-4 * a) * res) {
                y = yn;
                res = rn;
                moved = true;
                break;
            }
            a *= 0.5;
        }
        if (!moved)
            break;
    }
    return y;
}

}  // namespace detail

// Saddle point of the frozen-channel problem. `start_seed` != 0 randomizes the interior start.
inline Equilibrium solve_equilibrium(const ProblemInstance& in, const Eigen::MatrixXd& g,
                                     const EquilibriumOptions& opt = {}, std::uint64_t start_seed = 0)
{
    std::mt19937_64 rng(start_seed);
    int iters = 0;
    Vec y0 = detail::interior_start(in, g, start_seed ? &rng : nullptr);
    Vec y = detail::barrier_solve(in, g, y0, opt, iters);
    y = detail::polish(in, g, y, opt, iters);
    Equilibrium e;
    e.residual = kkt_residual(in, y, g);
    e.iterations = iters;
    if (!(e.residual < opt.tolerance))
        throw EquilibriumError("equilibrium: residual above tolerance", e.residual);
    e.y = y;
    e.null_dirs = null_directions(jacobian(in, y, g), free_coordinates(y, fictitious_gradient(in, y, g)));
    return e;
}

// Thread-safe cache keyed by canonical channel-state id.
class EquilibriumCache {
public:
    EquilibriumCache(const ProblemInstance& in, EquilibriumOptions opt = {}, std::string config_hash = "")
        : in_(in), opt_(opt), hash_(std::move(config_hash))
    {
    }

    std::shared_ptr<const Equilibrium> get(const GlobalChannelState& s)
    {
        {
            std::shared_lock lk(mu_);
            auto it = map_.find(s.id);
            if (it != map_.end()) {
                ++hits_;
                return it->second;
            }
        }
        if (attach(s))
            return get(s);
        auto e = std::make_shared<const Equilibrium>(solve_equilibrium(in_, s.gains, opt_));
        std::unique_lock lk(mu_);
        ++misses_;
        auto [it, inserted] = map_.emplace(s.id, e);
        return it->second;
    }

    bool contains(std::uint64_t id) const
    {
        std::shared_lock lk(mu_);
        return map_.count(id) != 0;
    }

    std::size_t size() const
    {
        std::shared_lock lk(mu_);
        return map_.size();
    }
    long hits() const { return hits_; }
    long misses() const { return misses_; }
    const ProblemInstance& instance() const { return in_; }
    const std::string& config_hash() const { return hash_; }

    std::map<std::uint64_t, std::shared_ptr<const Equilibrium>> snapshot() const
    {
        std::shared_lock lk(mu_);
        return map_;
    }

    void save(const std::string& path) const
    {
        nlohmann::json j;
        j["config_hash"] = hash_;
        j["dimension"] = in_.dim();
        auto& entries = j["entries"];
        entries = nlohmann::json::object();
        for (const auto& [id, e] : snapshot()) {
            nlohmann::json ej;
            ej["y"] = std::vector<double>(e->y.data(), e->y.data() + e->y.size());
            ej["residual"] = e->residual;
            ej["iterations"] = e->iterations;
            entries[std::to_string(id)] = ej;
        }
        std::ofstream f(path, std::ios::binary);
        if (!f)
            throw std::runtime_error("cache: cannot write " + path);
        f << j.dump(1) << '\n';
    }

    // Returns the number of entries loaded; entries from another configuration are rejected.
    std::size_t load(const std::string& path)
    {
        std::ifstream f(path, std::ios::binary);
        if (!f)
            throw std::runtime_error("cache: cannot read " + path);
        nlohmann::json j = nlohmann::json::parse(f);
        if (j.at("config_hash").get<std::string>() != hash_)
            throw std::runtime_error("cache: checkpoint belongs to a different configuration");
        std::size_t n = 0;
        std::unique_lock lk(mu_);
        for (auto& [key, ej] : j.at("entries").items()) {
            auto v = ej.at("y").get<std::vector<double>>();
            if (static_cast<int>(v.size()) != in_.dim())
                throw std::runtime_error("cache: dimension mismatch in checkpoint");
            auto e = std::make_shared<Equilibrium>();
            e->y = Eigen::Map<Vec>(v.data(), v.size());
            e->residual = ej.at("residual").get<double>();
            e->iterations = ej.at("iterations").get<int>();
            pending_.emplace(std::stoull(key), e);
            ++n;
        }
        return n;
    }

    // Entries loaded from disk need the gains to rebuild their null directions; get() does this lazily.
    bool attach(const GlobalChannelState& s)
    {
        std::unique_lock lk(mu_);
        auto it = pending_.find(s.id);
        if (it == pending_.end())
            return false;
        auto e = it->second;
        e->null_dirs = null_directions(jacobian(in_, e->y, s.gains),
                                       free_coordinates(e->y, fictitious_gradient(in_, e->y, s.gains)));
        map_.emplace(s.id, e);
        pending_.erase(it);
        return true;
    }

private:
    ProblemInstance in_;
    EquilibriumOptions opt_;
    std::string hash_;
    mutable std::shared_mutex mu_;
    std::map<std::uint64_t, std::shared_ptr<const Equilibrium>> map_;
    std::map<std::uint64_t, std::shared_ptr<Equilibrium>> pending_;
    std::atomic<long> hits_{0}, misses_{0};
};

}  // namespace pdsga
