#include "stars/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "stars/distribution.hpp"
#include "stars/errors.hpp"

namespace stars {

std::optional<StateId> Mdp::find_state(std::string_view name) const {
    auto it = state_index_.find(std::string(name));
    if (it == state_index_.end()) return std::nullopt;
    return it->second;
}

std::optional<ActionIndex> Mdp::find_action(StateId q, std::string_view name) const {
    for (EdgeId e = edge_offset_[q]; e < edge_offset_[q + 1]; ++e)
        if (edge_names_[e] == name) return e - edge_offset_[q];
    return std::nullopt;
}

bool Mdp::operator==(const Mdp& o) const {
    return state_names_ == o.state_names_ && edge_names_ == o.edge_names_ &&
           edge_offset_ == o.edge_offset_ && trans_offset_ == o.trans_offset_ &&
           transitions_ == o.transitions_ && initial_ == o.initial_;
}

StateId MdpBuilder::add_state(std::string name) {
    states_.push_back({std::move(name), {}});
    return static_cast<StateId>(states_.size() - 1);
}

ActionIndex MdpBuilder::add_action(StateId q, std::string name) {
    if (q >= states_.size()) throw Error(ErrorCode::InvalidMdp, "action on unknown state");
    states_[q].actions.push_back({std::move(name), {}});
    return static_cast<ActionIndex>(states_[q].actions.size() - 1);
}

void MdpBuilder::add_transition(StateId q, ActionIndex a, StateId target, double p) {
    if (q >= states_.size() || a >= states_[q].actions.size())
        throw Error(ErrorCode::InvalidMdp, "transition on unknown state/action");
    states_[q].actions[a].trans.push_back({target, p});
}

Mdp MdpBuilder::build() const {
    if (states_.empty()) throw Error(ErrorCode::InvalidMdp, "MDP has no states");
    if (initial_ >= states_.size()) throw Error(ErrorCode::InvalidMdp, "initial state out of range");
    Mdp m;
    m.initial_ = initial_;
    m.edge_offset_.push_back(0);
    m.trans_offset_.push_back(0);
    for (StateId q = 0; q < states_.size(); ++q) {
        const auto& s = states_[q];
        if (!m.state_index_.emplace(s.name, q).second)
            throw Error(ErrorCode::InvalidMdp, "duplicate state name '" + s.name + "'");
        if (s.actions.empty())
            throw Error(ErrorCode::InvalidMdp, "state '" + s.name + "' has no actions");
        std::unordered_set<std::string> seen;
        for (const auto& a : s.actions) {
            if (!seen.insert(a.name).second)
                throw Error(ErrorCode::InvalidMdp,
                            "duplicate action '" + a.name + "' at state '" + s.name + "'");
            if (a.trans.empty())
                throw Error(ErrorCode::InvalidMdp,
                            "action '" + a.name + "' at '" + s.name + "' has no successors");
            double total = 0.0;
            std::unordered_set<StateId> targets;
            for (const auto& t : a.trans) {
                if (t.target >= states_.size())
                    throw Error(ErrorCode::InvalidMdp, "successor out of range at '" + s.name + "'");
                if (!(t.probability > 0.0) || t.probability > 1.0 || !std::isfinite(t.probability))
                    throw Error(ErrorCode::InvalidMdp,
                                "probability outside (0,1] at '" + s.name + "|" + a.name + "'");
                if (!targets.insert(t.target).second)
                    throw Error(ErrorCode::InvalidMdp,
                                "repeated successor at '" + s.name + "|" + a.name + "'");
                total += t.probability;
                m.transitions_.push_back(t);
            }
            if (std::abs(total - 1.0) > kProbTolerance)
                throw Error(ErrorCode::InvalidMdp,
                            "probabilities at '" + s.name + "|" + a.name + "' do not sum to 1");
            m.edge_names_.push_back(a.name);
            m.edge_state_.push_back(q);
            m.trans_offset_.push_back(static_cast<std::uint32_t>(m.transitions_.size()));
        }
        m.state_names_.push_back(s.name);
        m.edge_offset_.push_back(static_cast<EdgeId>(m.edge_names_.size()));
        m.max_degree_ = std::max(m.max_degree_, s.actions.size());
    }
    return m;
}

} // namespace stars
