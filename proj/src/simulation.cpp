#include "stars/simulation.hpp"

#include <algorithm>

#include "stars/distribution.hpp"
#include "stars/errors.hpp"
#include "stars/mdp_io.hpp"

namespace stars {

StateId initial_state_from_seed(std::span<const StateId> region, std::uint64_t seed) {
    if (region.empty()) throw Error(ErrorCode::EmptyWinningRegion, "no state to start from");
    RandomStream rs(seed);
    return region[rs.bits(~std::uint64_t{0}, 3) % region.size()];
}

double RunStats::tracked_frequency() const {
    if (steps == 0) throw Error(ErrorCode::EmptyTrace, "no steps taken");
    return static_cast<double>(tracked_hits) / static_cast<double>(steps);
}

double RunStats::average_reward() const {
    if (steps == 0) throw Error(ErrorCode::EmptyTrace, "no steps taken");
    return reward_sum / static_cast<double>(steps);
}

double RunStats::mean_tv() const {
    if (steps == 0) throw Error(ErrorCode::EmptyTrace, "no steps taken");
    return tv_sum / static_cast<double>(steps);
}

Simulation::Simulation(std::shared_ptr<const Mdp> mdp, std::shared_ptr<const TabularPolicy> policy,
                       std::optional<Shield> shield, StateId start, std::uint64_t seed,
                       std::shared_ptr<const std::vector<double>> rewards)
    : mdp_(std::move(mdp)), policy_(std::move(policy)), shield_(std::move(shield)), rewards_(std::move(rewards)),
      rng_(seed), seed_(seed), state_(start) {
    if (policy_->weights.size() != mdp_->num_states())
        throw Error(ErrorCode::PreconditionViolation, "policy does not match the MDP");
    if (rewards_ && rewards_->size() != mdp_->num_edges())
        throw Error(ErrorCode::PreconditionViolation, "reward table does not match the MDP");
    if (start >= mdp_->num_states()) throw Error(ErrorCode::PreconditionViolation, "start state out of range");
    reset(start);
}

void Simulation::reset(StateId start) {
    state_ = start;
    stats_ = RunStats{};
    stats_.heatmap.assign(mdp_->num_states(), 0);
    stats_.heatmap[start] = 1;
    if (shield_) shield_->reset_counters();
    visited_.clear();
    edges_.clear();
    tv_.clear();
}

void Simulation::reset(StateId start, std::uint64_t seed) {
    rng_ = RandomStream(seed);
    seed_ = seed;
    reset(start);
}

const StepRecord& Simulation::step() {
    const StateId q = state_;
    const std::size_t k = mdp_->num_actions(q);
    auto mu = policy_->at(q);
    record_.step = stats_.steps;
    record_.state = q;
    record_.nominal.assign(mu.begin(), mu.end());
    record_.shielded.resize(k);
    if (shield_) {
        if (trace_) {
            counter_colive_ = shield_->colive_counters();
            counter_live_ = shield_->live_counters();
        }
        shield_->shield_distribution(mu, q, record_.shielded);
    } else {
        std::copy(mu.begin(), mu.end(), record_.shielded.begin());
    }
    const std::uint64_t t = stats_.steps;
    const ActionIndex a = static_cast<ActionIndex>(sample_index(record_.shielded, rng_.uniform(t, 0)));
    const EdgeId e = mdp_->edge_id(q, a);
    auto succ = mdp_->successors(e);
    const double u = rng_.uniform(t, 1);
    double acc = 0.0;
    StateId next = succ.back().target;
    for (const auto& tr : succ) {
        acc += tr.probability;
        if (u < acc) {
            next = tr.target;
            break;
        }
    }
    record_.action = a;
    record_.next = next;
    record_.reward = rewards_ ? (*rewards_)[e] : 0.0;

    const double tv = tv_distance(record_.nominal, record_.shielded);
    stats_.tv_sum += tv;
    stats_.reward_sum += record_.reward;
    if (!tracked_.empty() && tracked_[q]) ++stats_.tracked_hits;
    if (shield_) {
        if (shield_->index().unsafe(e)) ++stats_.unsafe_samples;
        shield_->update_counters(q, a);
        for (std::uint32_t h : shield_->index().groups_of_source(q))
            stats_.max_live_counter = std::max(stats_.max_live_counter, shield_->live_counters()[h]);
    }
    if (recording_) {
        visited_.push_back(q);
        edges_.push_back(e);
        tv_.push_back(tv);
    }
    if (trace_) write_trace();
    ++stats_.steps;
    ++stats_.heatmap[next];
    state_ = next;
    return record_;
}

void Simulation::write_trace() {
    ordered_json j;
    j["step"] = record_.step;
    j["state"] = mdp_->state_name(record_.state);
    j["nominal"] = record_.nominal;
    j["shielded"] = record_.shielded;
    j["action"] = mdp_->action_name(record_.state, record_.action);
    j["next"] = mdp_->state_name(record_.next);
    if (shield_) {
        const auto& colive = shield_->strategy().colive;
        ordered_json c = ordered_json::array();
        for (std::size_t i = 0; i < counter_colive_.size(); ++i)
            if (counter_colive_[i] != 0)
                c.push_back(ordered_json::array({mdp_->state_name(mdp_->edge_source(colive[i])),
                                                 mdp_->action_name(colive[i]), counter_colive_[i]}));
        j["counters"] = {{"colive", std::move(c)}, {"live", counter_live_}};
    }
    *trace_ << j.dump() << '\n';
}

} // namespace stars
