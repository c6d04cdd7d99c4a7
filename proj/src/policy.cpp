#include "stars/policy.hpp"

#include <cmath>

#include "stars/distribution.hpp"
#include "stars/errors.hpp"

namespace stars {

void validate_policy(const TabularPolicy& p, const Mdp& mdp) {
    if (p.weights.size() != mdp.num_states()) throw Error(ErrorCode::InvalidMdp, "policy does not cover every state");
    for (StateId q = 0; q < mdp.num_states(); ++q) {
        if (p.weights[q].size() != mdp.num_actions(q))
            throw Error(ErrorCode::InvalidMdp, "policy row size differs at '" + mdp.state_name(q) + "'");
        double total = 0.0;
        for (double w : p.weights[q]) {
            if (w < 0.0 || !std::isfinite(w))
                throw Error(ErrorCode::InvalidMdp, "negative policy weight at '" + mdp.state_name(q) + "'");
            total += w;
        }
        if (std::abs(total - 1.0) > kProbTolerance)
            throw Error(ErrorCode::DegenerateDistribution, "policy row at '" + mdp.state_name(q) + "' does not sum to 1");
    }
}

TabularPolicy uniform_policy(const Mdp& mdp) {
    TabularPolicy p;
    for (StateId q = 0; q < mdp.num_states(); ++q)
        p.weights.emplace_back(mdp.num_actions(q), 1.0 / static_cast<double>(mdp.num_actions(q)));
    return p;
}

ordered_json policy_to_json(const TabularPolicy& p, const Mdp& mdp) {
    ordered_json j = ordered_json::object();
    for (StateId q = 0; q < mdp.num_states(); ++q) {
        ordered_json row = ordered_json::object();
        for (ActionIndex a = 0; a < mdp.num_actions(q); ++a) row[mdp.action_name(q, a)] = p.weights[q][a];
        j[mdp.state_name(q)] = std::move(row);
    }
    return j;
}

TabularPolicy policy_from_json(const json& j, const Mdp& mdp) {
    if (!j.is_object()) throw Error(ErrorCode::ParseError, "policy must be an object");
    TabularPolicy p;
    p.weights.resize(mdp.num_states());
    for (StateId q = 0; q < mdp.num_states(); ++q) p.weights[q].assign(mdp.num_actions(q), 0.0);
    for (const auto& [qname, row] : j.items()) {
        auto q = mdp.find_state(qname);
        if (!q) throw Error(ErrorCode::ParseError, "policy names unknown state '" + qname + "'");
        if (!row.is_object()) throw Error(ErrorCode::ParseError, "policy rows must map actions to weights");
        for (const auto& [aname, w] : row.items()) {
            auto a = mdp.find_action(*q, aname);
            if (!a) throw Error(ErrorCode::ParseError, "policy names unknown action '" + aname + "'");
            p.weights[*q][*a] = w.get<double>();
        }
    }
    validate_policy(p, mdp);
    return p;
}

TabularPolicy load_policy(const std::filesystem::path& path, const Mdp& mdp) {
    return policy_from_json(read_json_file(path), mdp);
}

} // namespace stars
