#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "stars/mdp.hpp"
#include "stars/policy.hpp"
#include "stars/rng.hpp"
#include "stars/shield.hpp"

namespace stars {

/// Uniform draw from a sorted state list, a pure function of the seed.
StateId initial_state_from_seed(std::span<const StateId> region, std::uint64_t seed);

/// One decision: the state, the nominal and shielded distributions, the
/// sampled action and successor, and counters as seen by the decision.
struct StepRecord {
    std::uint64_t step = 0;
    StateId state = 0;
    std::vector<double> nominal;
    std::vector<double> shielded;
    ActionIndex action = 0;
    StateId next = 0;
    double reward = 0.0;
};

struct RunStats {
    std::uint64_t steps = 0;
    std::uint64_t tracked_hits = 0; ///< decisions taken in a tracked (Büchi) state
    double reward_sum = 0.0;
    double tv_sum = 0.0;            ///< Σ tv(nominal, shielded)
    std::uint64_t unsafe_samples = 0;
    std::uint64_t max_live_counter = 0;
    std::vector<std::uint64_t> heatmap; ///< visits per state, initial state included

    double tracked_frequency() const;
    double average_reward() const;
    double mean_tv() const;
};

/// Shielded (or plain, when no shield is given) execution of a tabular policy.
/// Step k draws its action from lane 0 and its successor from lane 1 of the
/// seed's counter-based stream, so equal inputs give equal runs bit for bit.
class Simulation {
public:
    Simulation(std::shared_ptr<const Mdp> mdp, std::shared_ptr<const TabularPolicy> policy,
               std::optional<Shield> shield, StateId start, std::uint64_t seed,
               std::shared_ptr<const std::vector<double>> rewards = nullptr);

    const StepRecord& step();
    void run(std::uint64_t n) {
        for (std::uint64_t i = 0; i < n; ++i) step();
    }

    /// Back to `start` with zeroed counters, stats and step index.
    void reset(StateId start);
    /// Same, switching to a fresh stream.
    void reset(StateId start, std::uint64_t seed);

    StateId state() const { return state_; }
    std::uint64_t steps() const { return stats_.steps; }
    std::uint64_t seed() const { return seed_; }
    const RunStats& stats() const { return stats_; }
    const Mdp& mdp() const { return *mdp_; }
    const TabularPolicy& policy() const { return *policy_; }
    Shield* shield() { return shield_ ? &*shield_ : nullptr; }
    const Shield* shield() const { return shield_ ? &*shield_ : nullptr; }
    const StepRecord& last() const { return record_; }

    void set_tracked(std::vector<char> tracked) { tracked_ = std::move(tracked); }
    const std::vector<char>& tracked() const { return tracked_; }

    /// JSON-lines trace sink; nullptr disables tracing.
    void set_trace(std::ostream* out) { trace_ = out; }
    /// Keep every visited state / sampled edge in memory for auditing.
    void set_recording(bool on) { recording_ = on; }
    const std::vector<StateId>& visited_states() const { return visited_; }
    const std::vector<EdgeId>& sampled_edges() const { return edges_; }
    const std::vector<double>& tv_per_step() const { return tv_; }

private:
    void write_trace();

    std::shared_ptr<const Mdp> mdp_;
    std::shared_ptr<const TabularPolicy> policy_;
    std::optional<Shield> shield_;
    std::shared_ptr<const std::vector<double>> rewards_;
    RandomStream rng_;
    std::uint64_t seed_;
    StateId state_;
    RunStats stats_;
    StepRecord record_;
    std::vector<char> tracked_;
    std::ostream* trace_ = nullptr;
    bool recording_ = false;
    std::vector<StateId> visited_;
    std::vector<EdgeId> edges_;
    std::vector<double> tv_;
    std::vector<std::uint64_t> counter_colive_;
    std::vector<std::uint64_t> counter_live_;
};

} // namespace stars
