#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace stars {

using StateId = std::uint32_t;
using ActionIndex = std::uint32_t; ///< local to the owning state
using EdgeId = std::uint32_t;      ///< dense index of a (state, action) pair

/// A system edge q -> q^a, named by state and local action index.
struct Edge {
    StateId state = 0;
    ActionIndex action = 0;
    auto operator<=>(const Edge&) const = default;
};

struct Transition {
    StateId target;
    double probability;
    bool operator==(const Transition&) const = default;
};

class MdpBuilder;

/// Immutable finite MDP. Edges are numbered state-major in action order,
/// so the actions of q occupy [edge_begin(q), edge_begin(q+1)).
class Mdp {
public:
    std::size_t num_states() const { return state_names_.size(); }
    std::size_t num_edges() const { return edge_names_.size(); }
    std::size_t num_actions(StateId q) const { return edge_offset_[q + 1] - edge_offset_[q]; }
    std::size_t max_degree() const { return max_degree_; }
    StateId initial() const { return initial_; }

    EdgeId edge_begin(StateId q) const { return edge_offset_[q]; }
    EdgeId edge_id(StateId q, ActionIndex a) const { return edge_offset_[q] + a; }
    EdgeId edge_id(Edge e) const { return edge_id(e.state, e.action); }
    Edge edge(EdgeId e) const { return {edge_state_[e], e - edge_offset_[edge_state_[e]]}; }
    StateId edge_source(EdgeId e) const { return edge_state_[e]; }

    std::span<const Transition> successors(EdgeId e) const {
        return {transitions_.data() + trans_offset_[e], trans_offset_[e + 1] - trans_offset_[e]};
    }
    std::span<const Transition> successors(StateId q, ActionIndex a) const {
        return successors(edge_id(q, a));
    }

    const std::string& state_name(StateId q) const { return state_names_[q]; }
    const std::string& action_name(EdgeId e) const { return edge_names_[e]; }
    const std::string& action_name(StateId q, ActionIndex a) const { return edge_names_[edge_id(q, a)]; }
    std::optional<StateId> find_state(std::string_view name) const;
    std::optional<ActionIndex> find_action(StateId q, std::string_view name) const;

    /// Structural equality including exact probabilities and names.
    bool operator==(const Mdp& other) const;

private:
    friend class MdpBuilder;
    Mdp() = default;

    std::vector<std::string> state_names_;
    std::vector<std::string> edge_names_;
    std::vector<EdgeId> edge_offset_;
    std::vector<StateId> edge_state_;
    std::vector<std::uint32_t> trans_offset_;
    std::vector<Transition> transitions_;
    std::unordered_map<std::string, StateId> state_index_;
    StateId initial_ = 0;
    std::size_t max_degree_ = 0;
};

/// Accumulates states, actions and transitions, then validates in build().
/// Rejects (never renormalizes) bad probability data.
class MdpBuilder {
public:
    StateId add_state(std::string name);
    ActionIndex add_action(StateId q, std::string name);
    void add_transition(StateId q, ActionIndex a, StateId target, double p);
    void set_initial(StateId q) { initial_ = q; }
    std::size_t num_states() const { return states_.size(); }

    /// Throws InvalidMdp on any structural or probabilistic violation.
    Mdp build() const;

private:
    struct ActionDraft {
        std::string name;
        std::vector<Transition> trans;
    };
    struct StateDraft {
        std::string name;
        std::vector<ActionDraft> actions;
    };
    std::vector<StateDraft> states_;
    StateId initial_ = 0;
};

} // namespace stars
