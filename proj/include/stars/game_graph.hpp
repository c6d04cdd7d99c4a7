#pragma once

#include <span>
#include <string>
#include <vector>

#include "stars/mdp.hpp"

namespace stars {

enum class Mode { Sure, AlmostSure };

const char* to_string(Mode m);
/// Accepts "sure" and "almost-sure" (also "almost_sure"); throws ParseError.
Mode parse_mode(const std::string& s);

using NodeId = std::uint32_t;

/// Bipartite graph induced by an MDP: system node q for every state, opponent
/// node q^a for every (q, a). Node ids: states first, then opponent nodes in
/// edge order, so opp_node(e) = num_sys() + e. Probabilities are not stored.
class GameGraph {
public:
    GameGraph(const Mdp& mdp, Mode mode);

    Mode mode() const { return mode_; }
    std::size_t num_sys() const { return num_sys_; }
    std::size_t num_opp() const { return edge_state_.size(); }
    std::size_t num_nodes() const { return num_sys_ + edge_state_.size(); }
    bool is_sys(NodeId v) const { return v < num_sys_; }

    std::size_t num_actions(StateId q) const { return edge_offset_[q + 1] - edge_offset_[q]; }
    EdgeId edge_begin(StateId q) const { return edge_offset_[q]; }
    EdgeId edge_end(StateId q) const { return edge_offset_[q + 1]; }
    StateId edge_source(EdgeId e) const { return edge_state_[e]; }
    NodeId opp_node(EdgeId e) const { return static_cast<NodeId>(num_sys_ + e); }
    EdgeId node_edge(NodeId v) const { return static_cast<EdgeId>(v - num_sys_); }

    std::span<const NodeId> successors(NodeId v) const {
        return {succ_.data() + succ_offset_[v], succ_offset_[v + 1] - succ_offset_[v]};
    }
    std::span<const NodeId> predecessors(NodeId v) const {
        return {pred_.data() + pred_offset_[v], pred_offset_[v + 1] - pred_offset_[v]};
    }

    std::size_t num_edges_total() const { return succ_.size(); }

    bool operator==(const GameGraph&) const = default;

private:
    Mode mode_;
    std::size_t num_sys_;
    std::vector<EdgeId> edge_offset_;
    std::vector<StateId> edge_state_;
    std::vector<std::uint32_t> succ_offset_;
    std::vector<NodeId> succ_;
    std::vector<std::uint32_t> pred_offset_;
    std::vector<NodeId> pred_;
};

inline GameGraph derive_game_graph(const Mdp& mdp, Mode mode) { return GameGraph(mdp, mode); }

/// Debug edge list: "SYS q -> q^a" and "OPP q^a -> q'" lines in node order.
std::string export_edge_list(const GameGraph& g, const Mdp& mdp);

/// Colors per MDP state. Opponent nodes take auxiliary_color(): 1 for Büchi
/// colorings, 0 otherwise, so they never decide the parity of a run.
struct ParityObjective {
    std::vector<int> coloring;

    int max_color() const;
    bool is_buchi() const;
    int auxiliary_color() const { return is_buchi() ? 1 : 0; }
    std::vector<StateId> states_with_color(int c) const;
    bool operator==(const ParityObjective&) const = default;
};

/// c(q) = 2 on the target, 1 elsewhere. Throws EmptyTarget.
ParityObjective make_buchi_objective(const Mdp& mdp, std::span<const StateId> target);
ParityObjective make_buchi_objective(std::size_t num_states, std::span<const StateId> target);

/// Validates non-negative colors covering every state; throws PreconditionViolation.
ParityObjective make_parity_objective(std::size_t num_states, std::vector<int> coloring);

/// Objective won everywhere (all colors 0); composing with it is the identity.
ParityObjective trivial_objective(std::size_t num_states);

} // namespace stars
