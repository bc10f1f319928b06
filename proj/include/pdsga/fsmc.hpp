#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pdsga {

// Ring-structured Markov chain for one (link, subband) fading process.
struct LinkChannelChain {
    int num_states = 0;
    double epsilon = 0.0;
    std::vector<double> gain_levels;
    Eigen::MatrixXd transition_matrix;

    double nu() const { return 1.0 - 2.0 * epsilon; }
};

inline LinkChannelChain build_link_chain(int num_states, double epsilon, const std::vector<double>& gain_levels)
{
    if (num_states < 3)
        throw std::invalid_argument("fsmc: num_states must be >= 3");
    if (!(epsilon > 0.0 && epsilon <= 0.5))
        throw std::invalid_argument("fsmc: epsilon must lie in (0, 1/2]");
    if (static_cast<int>(gain_levels.size()) != num_states)
        throw std::invalid_argument("fsmc: gain_levels length must equal num_states");
    for (std::size_t i = 0; i < gain_levels.size(); ++i) {
        if (!(gain_levels[i] > 0.0))
            throw std::invalid_argument("fsmc: gain levels must be positive");
        if (i > 0 && !(gain_levels[i] > gain_levels[i - 1]))
            throw std::invalid_argument("fsmc: gain levels must be strictly increasing");
    }

    LinkChannelChain c;
    c.num_states = num_states;
    c.epsilon = epsilon;
    c.gain_levels = gain_levels;
    c.transition_matrix = Eigen::MatrixXd::Zero(num_states, num_states);
    for (int i = 0; i < num_states; ++i) {
        c.transition_matrix(i, i) += 1.0 - 2.0 * epsilon;
        c.transition_matrix(i, (i + 1) % num_states) += epsilon;
        c.transition_matrix(i, (i + num_states - 1) % num_states) += epsilon;
    }
    return c;
}

// Levels of a unit-mean exponential power split into equiprobable cells,
// each level being the conditional mean of its cell.
inline std::vector<double> rayleigh_gain_levels(int num_states)
{
    if (num_states < 1)
        throw std::invalid_argument("fsmc: need at least one level");
    auto tail = [](double a) { return std::isinf(a) ? 0.0 : (a + 1.0) * std::exp(-a); };
    std::vector<double> levels(num_states);
    double lo = 0.0;
    for (int i = 0; i < num_states; ++i) {
        double hi = (i + 1 == num_states) ? std::numeric_limits<double>::infinity()
                                          : -std::log(1.0 - double(i + 1) / num_states);
        levels[i] = num_states * (tail(lo) - tail(hi));
        lo = hi;
    }
    return levels;
}

// Uniform double in [0,1) from the top 53 bits; identical on every platform.
inline double uniform01(std::mt19937_64& rng)
{
    return double(rng() >> 11) * 0x1.0p-53;
}

struct GlobalChannelState {
    std::vector<int> state_index;  // one entry per chain
    Eigen::MatrixXd gains;         // links x subbands
    std::uint64_t id = 0;          // mixed-radix encoding of state_index
};

class ChannelProcess {
public:
    // Chains are ordered link-major: chain (l, n) has index l * num_subbands + n.
    ChannelProcess(std::vector<LinkChannelChain> chains, int num_links, int num_subbands, std::uint64_t seed)
        : chains_(std::move(chains)), links_(num_links), subbands_(num_subbands), rng_(seed), seed_(seed)
    {
        if (static_cast<int>(chains_.size()) != num_links * num_subbands)
            throw std::invalid_argument("fsmc: need one chain per (link, subband)");
        long double space = 1.0L;
        for (const auto& c : chains_)
            space *= c.num_states;
        if (space > 1.8e19L)
            throw std::invalid_argument("fsmc: aggregate state space does not fit a 64-bit id");
        std::vector<int> idx(chains_.size());
        for (std::size_t i = 0; i < chains_.size(); ++i)
            idx[i] = static_cast<int>(uniform01(rng_) * chains_[i].num_states);
        set_state(idx);
    }

    static ChannelProcess uniform(int num_links, int num_subbands, int num_states, double epsilon,
                                  std::uint64_t seed)
    {
        auto levels = rayleigh_gain_levels(num_states);
        std::vector<LinkChannelChain> chains;
        for (int i = 0; i < num_links * num_subbands; ++i)
            chains.push_back(build_link_chain(num_states, epsilon, levels));
        return ChannelProcess(std::move(chains), num_links, num_subbands, seed);
    }

    const GlobalChannelState& current() const { return state_; }
    const std::vector<LinkChannelChain>& chains() const { return chains_; }
    int num_links() const { return links_; }
    int num_subbands() const { return subbands_; }
    std::uint64_t seed() const { return seed_; }

    void set_state(const std::vector<int>& idx)
    {
        if (idx.size() != chains_.size())
            throw std::invalid_argument("fsmc: state index length mismatch");
        state_ = make_state(idx);
    }

    GlobalChannelState make_state(const std::vector<int>& idx) const
    {
        GlobalChannelState s;
        s.state_index = idx;
        s.gains.resize(links_, subbands_);
        std::uint64_t id = 0, radix = 1;
        for (std::size_t i = 0; i < chains_.size(); ++i) {
            if (idx[i] < 0 || idx[i] >= chains_[i].num_states)
                throw std::invalid_argument("fsmc: state index out of range");
            s.gains(static_cast<int>(i) / subbands_, static_cast<int>(i) % subbands_) = chains_[i].gain_levels[idx[i]];
            id += radix * static_cast<std::uint64_t>(idx[i]);
            radix *= static_cast<std::uint64_t>(chains_[i].num_states);
        }
        s.id = id;
        return s;
    }

    const GlobalChannelState& step()
    {
        std::vector<int> idx = state_.state_index;
        bool changed = false;
        for (std::size_t i = 0; i < chains_.size(); ++i) {
            const double u = uniform01(rng_);
            const double eps = chains_[i].epsilon;
            const int q = chains_[i].num_states;
            if (u < eps) {
                idx[i] = (idx[i] + q - 1) % q;
                changed = true;
            } else if (u < 2.0 * eps) {
                idx[i] = (idx[i] + 1) % q;
                changed = true;
            }
        }
        if (changed)
            state_ = make_state(idx);
        return state_;
    }

private:
    std::vector<LinkChannelChain> chains_;
    int links_;
    int subbands_;
    std::mt19937_64 rng_;
    std::uint64_t seed_;
    GlobalChannelState state_;
};

inline double aggregate_stay_probability(const ChannelProcess& p)
{
    double s = 1.0;
    for (const auto& c : p.chains())
        s *= c.nu();
    return s;
}

inline double mean_sojourn_slots(double p_stay)
{
    if (!(p_stay < 1.0))
        throw std::domain_error("fsmc: frozen channel has infinite sojourn");
    return 1.0 / (1.0 - p_stay);
}

inline double mean_sojourn_slots(const ChannelProcess& p)
{
    return mean_sojourn_slots(aggregate_stay_probability(p));
}

// Dumps slot, chain_id, state_index, gain for every chain over `slots` steps.
inline void write_state_trace(ChannelProcess& p, long slots, std::ostream& out)
{
    out << "slot,chain_id,state_index,gain\n";
    for (long t = 0; t < slots; ++t) {
        const auto& s = p.current();
        for (std::size_t i = 0; i < s.state_index.size(); ++i) {
            const int l = static_cast<int>(i) / p.num_subbands();
            const int n = static_cast<int>(i) % p.num_subbands();
            out << t << ',' << i << ',' << s.state_index[i] << ',' << s.gains(l, n) << '\n';
        }
        p.step();
    }
}

}  // namespace pdsga
