#include "stars/game_graph.hpp"

#include <algorithm>

#include "stars/errors.hpp"

namespace stars {

const char* to_string(Mode m) { return m == Mode::Sure ? "sure" : "almost-sure"; }

Mode parse_mode(const std::string& s) {
    if (s == "sure") return Mode::Sure;
    if (s == "almost-sure" || s == "almost_sure") return Mode::AlmostSure;
    throw Error(ErrorCode::ParseError, "unknown mode '" + s + "'");
}

GameGraph::GameGraph(const Mdp& mdp, Mode mode) : mode_(mode), num_sys_(mdp.num_states()) {
    const std::size_t n = mdp.num_states();
    const std::size_t m = mdp.num_edges();
    edge_offset_.resize(n + 1);
    for (StateId q = 0; q <= n; ++q) edge_offset_[q] = q < n ? mdp.edge_begin(q) : static_cast<EdgeId>(m);
    edge_state_.resize(m);
    for (EdgeId e = 0; e < m; ++e) edge_state_[e] = mdp.edge_source(e);

    succ_offset_.reserve(n + m + 1);
    succ_offset_.push_back(0);
    for (StateId q = 0; q < n; ++q) {
        for (EdgeId e = edge_offset_[q]; e < edge_offset_[q + 1]; ++e) succ_.push_back(opp_node(e));
        succ_offset_.push_back(static_cast<std::uint32_t>(succ_.size()));
    }
    for (EdgeId e = 0; e < m; ++e) {
        for (const auto& t : mdp.successors(e)) succ_.push_back(t.target);
        succ_offset_.push_back(static_cast<std::uint32_t>(succ_.size()));
    }

    const std::size_t total = n + m;
    pred_offset_.assign(total + 1, 0);
    for (NodeId w : succ_) ++pred_offset_[w + 1];
    for (std::size_t v = 0; v < total; ++v) pred_offset_[v + 1] += pred_offset_[v];
    pred_.resize(succ_.size());
    std::vector<std::uint32_t> fill(pred_offset_.begin(), pred_offset_.end() - 1);
    for (NodeId v = 0; v < total; ++v)
        for (NodeId w : successors(v)) pred_[fill[w]++] = v;
}

std::string export_edge_list(const GameGraph& g, const Mdp& mdp) {
    std::string out;
    auto opp_name = [&](EdgeId e) {
        return mdp.state_name(mdp.edge_source(e)) + "^" + mdp.action_name(e);
    };
    for (StateId q = 0; q < g.num_sys(); ++q)
        for (EdgeId e = g.edge_begin(q); e < g.edge_end(q); ++e)
            out += "SYS " + mdp.state_name(q) + " -> " + opp_name(e) + "\n";
    for (EdgeId e = 0; e < g.num_opp(); ++e)
        for (NodeId w : g.successors(g.opp_node(e)))
            out += "OPP " + opp_name(e) + " -> " + mdp.state_name(w) + "\n";
    return out;
}

int ParityObjective::max_color() const {
    return coloring.empty() ? 0 : *std::max_element(coloring.begin(), coloring.end());
}

bool ParityObjective::is_buchi() const {
    return !coloring.empty() &&
           std::all_of(coloring.begin(), coloring.end(), [](int c) { return c == 1 || c == 2; });
}

std::vector<StateId> ParityObjective::states_with_color(int c) const {
    std::vector<StateId> out;
    for (StateId q = 0; q < coloring.size(); ++q)
        if (coloring[q] == c) out.push_back(q);
    return out;
}

ParityObjective make_buchi_objective(std::size_t num_states, std::span<const StateId> target) {
    if (target.empty()) throw Error(ErrorCode::EmptyTarget, "Büchi target is empty");
    ParityObjective obj{std::vector<int>(num_states, 1)};
    for (StateId q : target) {
        if (q >= num_states) throw Error(ErrorCode::PreconditionViolation, "target state out of range");
        obj.coloring[q] = 2;
    }
    return obj;
}

ParityObjective make_buchi_objective(const Mdp& mdp, std::span<const StateId> target) {
    return make_buchi_objective(mdp.num_states(), target);
}

ParityObjective make_parity_objective(std::size_t num_states, std::vector<int> coloring) {
    if (coloring.size() != num_states)
        throw Error(ErrorCode::PreconditionViolation, "coloring does not cover every state");
    for (int c : coloring)
        if (c < 0) throw Error(ErrorCode::PreconditionViolation, "negative color");
    return ParityObjective{std::move(coloring)};
}

ParityObjective trivial_objective(std::size_t num_states) {
    return ParityObjective{std::vector<int>(num_states, 0)};
}

} // namespace stars
