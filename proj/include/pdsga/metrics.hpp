#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "fsmc.hpp"
#include "problem.hpp"
#include "solver.hpp"

namespace pdsga {

struct BurnIn {
    double fraction = 0.1;
    long minimum = 100;
};

inline long burn_in_count(long n, const BurnIn& b)
{
    return std::max(b.minimum, static_cast<long>(std::ceil(b.fraction * n)));
}

inline std::vector<double> post_burn_in(const std::vector<double>& v, const BurnIn& b)
{
    const long skip = burn_in_count(static_cast<long>(v.size()), b);
    if (skip >= static_cast<long>(v.size()))
        throw std::invalid_argument("metrics: no updates left after burn-in");
    return {v.begin() + skip, v.end()};
}

inline std::vector<double> distances(const Trajectory& tr)
{
    std::vector<double> d;
    d.reserve(tr.records.size());
    for (const auto& r : tr.records)
        d.push_back(r.distance);
    return d;
}

struct ErrorStats {
    double eae = 0.0;
    double mse = 0.0;
    long count = 0;
};

// Time averages of the distance and squared distance; `d` is already past burn-in.
inline ErrorStats eae_mse(const std::vector<double>& d)
{
    if (d.empty())
        throw std::invalid_argument("eae_mse: empty window");
    ErrorStats s;
    for (double v : d) {
        s.eae += v;
        s.mse += v * v;
    }
    s.count = static_cast<long>(d.size());
    s.eae /= s.count;
    s.mse /= s.count;
    return s;
}

inline ErrorStats eae_mse(const Trajectory& tr, const BurnIn& b = {})
{
    return eae_mse(post_burn_in(distances(tr), b));
}

// Largest pairwise Euclidean distance between equilibria.
inline double delta_estimate(const std::vector<Vec>& eq)
{
    if (eq.size() < 2)
        throw std::invalid_argument("delta_estimate: need at least two equilibria");
    double d = 0.0;
    for (std::size_t a = 0; a < eq.size(); ++a)
        for (std::size_t b = a + 1; b < eq.size(); ++b)
            d = std::max(d, (eq[a] - eq[b]).norm());
    return d;
}

// Fraction of distances to the nearest equilibrium that fall inside the delta-ball union.
inline double region_probability(const std::vector<double>& nearest, double delta)
{
    if (!(delta >= 0.0))
        throw std::invalid_argument("region_probability: delta must be nonnegative");
    if (nearest.empty())
        throw std::invalid_argument("region_probability: empty window");
    long in = 0;
    for (double v : nearest)
        in += v <= delta;
    return double(in) / nearest.size();
}

inline double region_probability(const Trajectory& tr, double delta, const BurnIn& b = {})
{
    std::vector<double> v;
    v.reserve(tr.records.size());
    for (const auto& r : tr.records) {
        if (r.nearest < 0.0)
            throw std::invalid_argument("region_probability: trajectory recorded no nearest distances");
        v.push_back(r.nearest);
    }
    return region_probability(post_burn_in(v, b), delta);
}

inline double region_bound(double beta, double t_bar, double n_bar)
{
    if (!(beta >= 0.0 && beta < 1.0))
        throw std::domain_error("region bound: needs 0 <= beta < 1");
    return std::min(1.0, beta * t_bar / ((1.0 - beta) * n_bar));
}

inline double theoretical_floor(double beta, double t_bar, double n_bar)
{
    return 1.0 - region_bound(beta, t_bar, n_bar);
}

struct BoundValues {
    double eae = 0.0;
    double mse = 0.0;
    double region = 0.0;  // bound on the out-of-region probability
    double outage = 0.0;
};

inline BoundValues bound_values(double beta, double t_bar, double n_bar, double delta, double c, double epsilon,
                                double margin)
{
    if (!(beta >= 0.0))
        throw std::domain_error("bound_values: beta must be nonnegative");
    if (!(beta < 1.0))
        throw std::domain_error("bound_values: beta >= 1, bounds are vacuous");
    if (!(n_bar > 0.0))
        throw std::domain_error("bound_values: n_bar must be positive");
    BoundValues b;
    const double q = 1.0 - beta;
    b.eae = t_bar * delta * beta / (q * n_bar);
    b.mse = delta * delta * beta * beta * (2.0 * beta + t_bar * q * n_bar) / ((1.0 - beta * beta) * q * n_bar * n_bar);
    b.region = std::min(1.0, beta * t_bar / (q * n_bar));
    const double em = epsilon + margin;
    b.outage = em > 0.0 ? std::min(1.0, c * delta * beta * t_bar / (em * q * n_bar)) : 1.0;
    return b;
}

enum class ConstraintFamily { Flow, Power, Mud };

inline std::string family_name(ConstraintFamily f)
{
    switch (f) {
    case ConstraintFamily::Flow: return "flow";
    case ConstraintFamily::Power: return "power";
    case ConstraintFamily::Mud: return "mud";
    }
    return "?";
}

// Largest value of the family's original constraint function g (g <= 0 when satisfied).
inline double family_value(const UpdateRecord& r, ConstraintFamily f)
{
    switch (f) {
    case ConstraintFamily::Power:
        return r.power_g.empty() ? 0.0 : *std::max_element(r.power_g.begin(), r.power_g.end());
    case ConstraintFamily::Flow: return r.viol_flow;
    case ConstraintFamily::Mud: return r.viol_mud;
    }
    return 0.0;
}

struct OutagePoint {
    double margin = 0.0;
    double empirical = 0.0;
    double bound = 1.0;
};

// One trajectory per margin, each produced with that margin applied to the power budgets.
inline std::vector<OutagePoint> outage_probability(const std::vector<std::pair<double, const Trajectory*>>& runs,
                                                   ConstraintFamily family, double epsilon,
                                                   const std::function<double(double margin)>& bound = {},
                                                   const BurnIn& b = {})
{
    if (!(epsilon >= 0.0))
        throw std::invalid_argument("outage_probability: epsilon must be nonnegative");
    std::vector<OutagePoint> out;
    for (const auto& [K, tr] : runs) {
        if (!(K >= 0.0))
            throw std::invalid_argument("outage_probability: margins must be nonnegative");
        if (std::abs(tr->margin - K) > 1e-12)
            throw std::invalid_argument("outage_probability: trajectory was not produced with this margin");
        std::vector<double> v;
        for (const auto& r : tr->records)
            v.push_back(family_value(r, family));
        v = post_burn_in(v, b);
        long hit = 0;
        for (double g : v)
            hit += g > epsilon;
        OutagePoint p;
        p.margin = K;
        p.empirical = double(hit) / v.size();
        if (bound)
            p.bound = bound(K);
        out.push_back(p);
    }
    return out;
}

struct LipschitzEstimate {
    double c_hat = 0.0;         // inflated sampled slope
    double max_slope = 0.0;     // raw sampled slope
    double max_grad_norm = 0.0; // central-difference gradient norm, cross-check
};

// Sampled-pair slope over the box [lo, hi], inflated by 1.2.
inline LipschitzEstimate lipschitz_estimate(const std::function<double(const Vec&)>& g, const Vec& lo, const Vec& hi,
                                            int pairs, std::mt19937_64& rng)
{
    if (pairs < 100)
        throw std::invalid_argument("lipschitz_estimate: need at least 100 sample pairs");
    if (lo.size() != hi.size() || !((hi - lo).array() >= 0.0).all())
        throw std::invalid_argument("lipschitz_estimate: invalid box");
    if ((hi - lo).maxCoeff() <= 0.0)
        throw std::invalid_argument("lipschitz_estimate: degenerate region");
    auto draw = [&]() {
        Vec x(lo.size());
        for (int i = 0; i < x.size(); ++i)
            x(i) = lo(i) + (hi(i) - lo(i)) * uniform01(rng);
        return x;
    };
    LipschitzEstimate e;
    for (int p = 0; p < pairs; ++p) {
        const Vec a = draw(), b = draw();
        const double d = (a - b).norm();
        if (d > 0.0)
            e.max_slope = std::max(e.max_slope, std::abs(g(a) - g(b)) / d);
        Vec grad(a.size());
        for (int i = 0; i < a.size(); ++i) {
            const double h = 1e-6 * (1.0 + std::abs(a(i)));
            Vec ap = a, am = a;
            ap(i) += h;
            am(i) -= h;
            grad(i) = (g(ap) - g(am)) / (2.0 * h);
        }
        e.max_grad_norm = std::max(e.max_grad_norm, grad.norm());
    }
    e.c_hat = 1.2 * e.max_slope;
    return e;
}

// Mean and 95% normal-approximation half width.
struct MeanCi {
    double mean = 0.0;
    double half_width = 0.0;
};

inline MeanCi mean_ci95(const std::vector<double>& v)
{
    MeanCi m;
    if (v.empty())
        return m;
    for (double x : v)
        m.mean += x;
    m.mean /= v.size();
    if (v.size() > 1) {
        double s2 = 0.0;
        for (double x : v)
            s2 += (x - m.mean) * (x - m.mean);
        s2 /= (v.size() - 1);
        m.half_width = 1.96 * std::sqrt(s2 / v.size());
    }
    return m;
}

struct MetricsReport {
    double eae = 0.0;
    double mse = 0.0;
    double region_prob_in = 0.0;
    double beta_hat = 0.0;
    double delta_hat = 0.0;
    double n_bar_slots = 0.0;
    int t_bar = 1;
    std::map<std::string, double> outage;  // "family@K"
    BoundValues bounds;
    bool bounds_valid = false;

    void check() const
    {
        if (!(region_prob_in >= 0.0 && region_prob_in <= 1.0))
            throw std::logic_error("report: region probability outside [0, 1]");
        if (!(eae >= 0.0) || !(delta_hat >= 0.0))
            throw std::logic_error("report: negative error or delta");
        if (mse < eae * eae * (1.0 - 1e-12))
            throw std::logic_error("report: mse below eae^2");
    }

    nlohmann::json to_json() const
    {
        nlohmann::json j;
        j["eae"] = eae;
        j["mse"] = mse;
        j["region_prob_in"] = region_prob_in;
        j["beta_hat"] = beta_hat;
        j["delta_hat"] = delta_hat;
        j["delta_is_estimate"] = true;
        j["n_bar_slots"] = n_bar_slots;
        j["t_bar"] = t_bar;
        j["outage"] = outage;
        if (bounds_valid)
            j["bounds"] = {{"eae", bounds.eae}, {"mse", bounds.mse}, {"region", bounds.region},
                           {"outage", bounds.outage}};
        else
            j["bounds"] = "vacuous (beta_hat >= 1)";
        return j;
    }
};

}  // namespace pdsga
