#include <algorithm>
#include <string>

#include "stars/errors.hpp"
#include "stars/solver.hpp"
#include "stars/template.hpp"

namespace stars {

using namespace solver;

bool StrategyTemplate::in_region(StateId q) const {
    return std::binary_search(winning_region.begin(), winning_region.end(), q);
}
bool StrategyTemplate::is_unsafe(EdgeId e) const { return std::binary_search(unsafe.begin(), unsafe.end(), e); }
bool StrategyTemplate::is_colive(EdgeId e) const { return std::binary_search(colive.begin(), colive.end(), e); }

const char* to_string(FaultKind k) { return k == FaultKind::Persistent ? "persistent" : "occasional"; }

FaultKind parse_fault_kind(const std::string& s) {
    if (s == "persistent") return FaultKind::Persistent;
    if (s == "occasional") return FaultKind::Occasional;
    throw Error(ErrorCode::ParseError, "unknown fault kind '" + s + "'");
}

namespace {

bool random_mode(const GameGraph& g) { return g.mode() == Mode::AlmostSure; }

NodeSet sys_mask(const GameGraph& g, std::span<const StateId> states) {
    NodeSet s(g.num_nodes(), 0);
    for (StateId q : states) {
        if (q >= g.num_sys()) throw Error(ErrorCode::PreconditionViolation, "state out of range");
        s[q] = 1;
    }
    return s;
}

std::vector<StateId> sys_members(const GameGraph& g, const NodeSet& s) {
    std::vector<StateId> out;
    for (StateId q = 0; q < g.num_sys(); ++q)
        if (s[q]) out.push_back(q);
    return out;
}

/// Live groups H_i: edges from layer i into strictly lower layers.
void append_layer_groups(const GameGraph& g, const Attractor& a, std::vector<std::vector<EdgeId>>& groups) {
    std::vector<std::vector<EdgeId>> by_layer;
    for (StateId q = 0; q < g.num_sys(); ++q) {
        if (!a.members[q] || a.rank[q] < 2) continue;
        std::size_t layer = a.rank[q] / 2;
        if (by_layer.size() <= layer) by_layer.resize(layer + 1);
        for (EdgeId e = g.edge_begin(q); e < g.edge_end(q); ++e) {
            NodeId p = g.opp_node(e);
            if (a.members[p] && a.rank[p] < a.rank[q]) by_layer[layer].push_back(e);
        }
    }
    for (auto& h : by_layer)
        if (!h.empty()) groups.push_back(std::move(h));
}

std::vector<EdgeId> edges_leaving(const GameGraph& g, const NodeSet& region, const NodeSet* from) {
    std::vector<EdgeId> out;
    for (StateId q = 0; q < g.num_sys(); ++q) {
        if (!region[q] || (from && !(*from)[q])) continue;
        for (EdgeId e = g.edge_begin(q); e < g.edge_end(q); ++e)
            if (!region[g.opp_node(e)]) out.push_back(e);
    }
    return out;
}

struct Recursion {
    const GameGraph& g;
    const std::vector<int>& colors;
    std::vector<char> colive_mark;
    std::vector<std::vector<EdgeId>> groups;

    NodeSet winning(const NodeSet& alive) const {
        return random_mode(g) ? almost_sure_parity(g, alive, colors) : zielonka(g, alive, colors);
    }

    /// Every system node of `sub` is winning; emits obligations that keep a
    /// play confined to `sub` winning.
    void run(NodeSet sub) {
        const bool rnd = random_mode(g);
        for (;;) {
            int d = -1;
            for (StateId q = 0; q < g.num_sys(); ++q)
                if (sub[q]) d = std::max(d, colors[q]);
            if (d < 0) return;
            NodeSet top(g.num_nodes(), 0);
            for (StateId q = 0; q < g.num_sys(); ++q) top[q] = sub[q] && colors[q] == d;

            if (d % 2 == 0) {
                Attractor a = attract(g, sub, top, Player::System, rnd);
                append_layer_groups(g, a, groups);
                sub = minus(sub, a.members);
                continue;
            }
            Attractor x = attract(g, sub, top, Player::Opponent, false);
            NodeSet inner = winning(minus(sub, x.members));
            NodeSet inner_sys(g.num_nodes(), 0);
            for (StateId q = 0; q < g.num_sys(); ++q) inner_sys[q] = inner[q];
            if (count(inner_sys) == 0)
                throw Error(ErrorCode::Internal, "odd level without a winning core");
            for (StateId q = 0; q < g.num_sys(); ++q) {
                if (!inner[q]) continue;
                for (EdgeId e = g.edge_begin(q); e < g.edge_end(q); ++e) {
                    NodeId p = g.opp_node(e);
                    if (sub[p] && !inner[p]) colive_mark[e] = 1;
                }
            }
            Attractor z = attract(g, sub, inner_sys, Player::System, rnd);
            append_layer_groups(g, z, groups);
            run(inner);
            sub = minus(sub, z.members);
        }
    }
};

StrategyTemplate finish(const GameGraph& g, const NodeSet& w, std::vector<char> colive_mark,
                        std::vector<std::vector<EdgeId>> groups) {
    StrategyTemplate t;
    t.winning_region = sys_members(g, w);
    t.unsafe = edges_leaving(g, w, nullptr);
    for (EdgeId e = 0; e < colive_mark.size(); ++e)
        if (colive_mark[e]) t.colive.push_back(e);
    t.live_groups = std::move(groups);
    return t;
}

StrategyTemplate general_impl(const GameGraph& g, const ParityObjective& obj, std::span<const EdgeId> disabled) {
    std::vector<int> colors = node_colors(g, obj);
    NodeSet arena = playable_arena(g, disabled);
    Recursion r{g, colors, std::vector<char>(g.num_opp(), 0), {}};
    NodeSet w = r.winning(arena);
    r.run(w);
    return finish(g, w, std::move(r.colive_mark), std::move(r.groups));
}

StrategyTemplate buchi_impl(const GameGraph& g, const NodeSet& buchi, std::span<const EdgeId> disabled) {
    NodeSet arena = playable_arena(g, disabled);
    NodeSet w = random_mode(g) ? almost_sure_buchi(g, arena, buchi) : buchi_sure(g, arena, buchi);
    NodeSet tgt(g.num_nodes(), 0);
    for (StateId q = 0; q < g.num_sys(); ++q) tgt[q] = w[q] && buchi[q];
    std::vector<std::vector<EdgeId>> groups;
    append_layer_groups(g, attract(g, w, tgt, Player::System, random_mode(g)), groups);
    return finish(g, w, std::vector<char>(g.num_opp(), 0), std::move(groups));
}

/// Any objective, no emptiness check.
StrategyTemplate synthesize_one(const GameGraph& g, const ParityObjective& obj, std::span<const EdgeId> disabled) {
    if (obj.coloring.size() != g.num_sys())
        throw Error(ErrorCode::PreconditionViolation, "coloring does not match the game graph");
    if (obj.is_buchi()) {
        NodeSet buchi(g.num_nodes(), 0);
        for (StateId q = 0; q < g.num_sys(); ++q) buchi[q] = obj.coloring[q] == 2;
        return buchi_impl(g, buchi, disabled);
    }
    return general_impl(g, obj, disabled);
}

Attractor reach_attractor(const GameGraph& g, std::span<const StateId> target, std::span<const EdgeId> disabled) {
    if (target.empty()) throw Error(ErrorCode::EmptyTarget, "reach target is empty");
    NodeSet arena = playable_arena(g, disabled);
    NodeSet tgt = sys_mask(g, target);
    for (std::size_t v = 0; v < tgt.size(); ++v) tgt[v] = tgt[v] && arena[v];
    if (!random_mode(g)) return attract(g, arena, tgt, Player::System, false);
    NodeSet x = almost_sure_reach(g, arena, tgt);
    for (std::size_t v = 0; v < tgt.size(); ++v) tgt[v] = tgt[v] && x[v];
    return attract(g, x, tgt, Player::System, true);
}

void sort_unique(std::vector<EdgeId>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
}

std::string objective_label(std::size_t i) { return "objective " + std::to_string(i); }

} // namespace

StrategyTemplate empty_template(const GameGraph& g) {
    NodeSet arena = playable_arena(g, {});
    StrategyTemplate t;
    t.winning_region = sys_members(g, arena);
    t.unsafe = edges_leaving(g, arena, nullptr);
    return t;
}

AttractorLayers sys_attractor(const GameGraph& g, std::span<const StateId> target, std::span<const EdgeId> disabled) {
    Attractor a = reach_attractor(g, target, disabled);
    AttractorLayers out;
    for (StateId q = 0; q < g.num_sys(); ++q) {
        if (!a.members[q]) continue;
        std::size_t layer = a.rank[q] / 2;
        if (out.layers.size() <= layer) out.layers.resize(layer + 1);
        out.layers[layer].push_back(q);
    }
    return out;
}

StrategyTemplate reach_template(const GameGraph& g, std::span<const StateId> target, std::span<const EdgeId> disabled) {
    Attractor a = reach_attractor(g, target, disabled);
    NodeSet non_target = a.members;
    for (StateId q : target) non_target[q] = 0;
    StrategyTemplate t;
    t.winning_region = sys_members(g, a.members);
    t.unsafe = edges_leaving(g, a.members, &non_target);
    append_layer_groups(g, a, t.live_groups);
    return t;
}

StrategyTemplate buchi_template(const GameGraph& g, std::span<const StateId> buchi, std::span<const EdgeId> disabled) {
    if (buchi.empty()) throw Error(ErrorCode::EmptyTarget, "Büchi set is empty");
    StrategyTemplate t = buchi_impl(g, sys_mask(g, buchi), disabled);
    if (t.winning_region.empty()) throw Error(ErrorCode::EmptyWinningRegion, "Büchi winning region is empty");
    return t;
}

StrategyTemplate parity_template(const GameGraph& g, const ParityObjective& obj, std::span<const EdgeId> disabled) {
    StrategyTemplate t = synthesize_one(g, obj, disabled);
    if (t.winning_region.empty()) throw Error(ErrorCode::EmptyWinningRegion, "parity winning region is empty");
    return t;
}

StrategyTemplate parity_template_general(const GameGraph& g, const ParityObjective& obj,
                                         std::span<const EdgeId> disabled) {
    if (obj.coloring.size() != g.num_sys())
        throw Error(ErrorCode::PreconditionViolation, "coloring does not match the game graph");
    StrategyTemplate t = general_impl(g, obj, disabled);
    if (t.winning_region.empty()) throw Error(ErrorCode::EmptyWinningRegion, "parity winning region is empty");
    return t;
}

std::vector<StateId> winning_region(const GameGraph& g, const ParityObjective& obj, std::span<const EdgeId> disabled) {
    std::vector<int> colors = node_colors(g, obj);
    NodeSet arena = playable_arena(g, disabled);
    NodeSet w = random_mode(g) ? almost_sure_parity(g, arena, colors) : zielonka(g, arena, colors);
    return sys_members(g, w);
}

Synthesis synthesize(const GameGraph& g, std::vector<ParityObjective> objectives, std::vector<EdgeId> disabled) {
    Synthesis s;
    s.mode = g.mode();
    s.objectives = std::move(objectives);
    sort_unique(disabled);
    for (EdgeId e : disabled)
        if (e >= g.num_opp()) throw Error(ErrorCode::PreconditionViolation, "disabled edge out of range");
    s.disabled = disabled;
    std::vector<ParityObjective> work = s.objectives;
    if (work.empty()) work.push_back(trivial_objective(g.num_sys()));

    // `blocked` grows with edges leaving the common region and with promoted
    // co-live edges; it is re-derivable from (objectives, disabled).
    std::vector<EdgeId> blocked = disabled;
    const std::size_t bound = g.num_opp() + 2;
    for (std::size_t iter = 0; iter < bound; ++iter) {
        std::vector<StrategyTemplate> parts;
        parts.reserve(work.size());
        for (std::size_t i = 0; i < work.size(); ++i) {
            parts.push_back(synthesize_one(g, work[i], blocked));
            if (parts.back().winning_region.empty()) {
                if (work.size() == 1 && iter == 0)
                    throw Error(ErrorCode::EmptyWinningRegion, "winning region is empty");
                throw Error(ErrorCode::ConflictUnresolvable,
                            objective_label(i) + " has no winning state left after conflict resolution");
            }
        }
        NodeSet w(g.num_nodes(), 1);
        for (const auto& t : parts) {
            NodeSet m(g.num_nodes(), 0);
            for (StateId q : t.winning_region) m[q] = 1;
            for (StateId q = 0; q < g.num_sys(); ++q) w[q] = w[q] && m[q];
        }
        std::vector<StateId> region = sys_members(g, w);
        if (region.empty()) {
            for (std::size_t i = 0; i < parts.size(); ++i)
                for (std::size_t j = i + 1; j < parts.size(); ++j) {
                    std::vector<StateId> both;
                    std::set_intersection(parts[i].winning_region.begin(), parts[i].winning_region.end(),
                                          parts[j].winning_region.begin(), parts[j].winning_region.end(),
                                          std::back_inserter(both));
                    if (both.empty())
                        throw Error(ErrorCode::ConflictUnresolvable,
                                    objective_label(i) + " and " + objective_label(j) +
                                        " have disjoint winning regions");
                }
            throw Error(ErrorCode::ConflictUnresolvable, "objectives have no common winning state");
        }
        // q^a stays inside iff it is not blocked and every successor stays.
        for (EdgeId e = 0; e < g.num_opp(); ++e) {
            NodeId p = g.opp_node(e);
            bool inside = !std::binary_search(blocked.begin(), blocked.end(), e);
            for (NodeId v : g.successors(p)) inside = inside && w[v];
            w[p] = inside;
        }
        std::vector<EdgeId> leaving = edges_leaving(g, w, nullptr);
        bool shrunk = std::any_of(parts.begin(), parts.end(),
                                  [&](const StrategyTemplate& t) { return t.winning_region != region; });
        if (shrunk) {
            // Some objective may rely on edges that now leave the common region.
            std::size_t before = blocked.size();
            blocked.insert(blocked.end(), leaving.begin(), leaving.end());
            sort_unique(blocked);
            if (blocked.size() != before) continue;
        }

        StrategyTemplate t;
        t.winning_region = std::move(region);
        t.unsafe = leaving;
        std::vector<char> bad(g.num_opp(), 0);
        for (EdgeId e : t.unsafe) bad[e] = 1;
        for (const auto& part : parts)
            for (EdgeId e : part.colive)
                if (w[g.edge_source(e)] && !bad[e]) t.colive.push_back(e);
        sort_unique(t.colive);
        for (const auto& part : parts)
            for (const auto& h : part.live_groups) {
                std::vector<EdgeId> kept;
                for (EdgeId e : h)
                    if (w[g.edge_source(e)] && !bad[e]) kept.push_back(e);
                if (!kept.empty()) t.live_groups.push_back(std::move(kept));
            }

        std::vector<Violation> conflicts = check_conflict_free(g, t);
        if (conflicts.empty()) {
            s.strategy = std::move(t);
            return s;
        }
        std::vector<EdgeId> promote;
        for (const auto& v : conflicts) {
            if (v.kind == Violation::Kind::StateWithoutAction) {
                for (EdgeId e = g.edge_begin(v.state); e < g.edge_end(v.state); ++e)
                    if (t.is_colive(e)) promote.push_back(e);
            } else {
                for (EdgeId e : t.live_groups[v.group])
                    if (g.edge_source(e) == v.state && t.is_colive(e)) promote.push_back(e);
            }
        }
        if (promote.empty()) throw Error(ErrorCode::Internal, "conflict without a co-live edge to promote");
        blocked.insert(blocked.end(), promote.begin(), promote.end());
        sort_unique(blocked);
    }
    throw Error(ErrorCode::Internal, "conflict resolution exceeded its iteration bound");
}

Synthesis compose_templates(const GameGraph& g, std::span<const Synthesis> parts) {
    std::vector<ParityObjective> objectives;
    std::vector<EdgeId> disabled;
    for (const auto& p : parts) {
        if (p.mode != g.mode()) throw Error(ErrorCode::PreconditionViolation, "template synthesized in another mode");
        if (p.objectives.empty() && !(p.strategy.unsafe.empty() && p.strategy.colive.empty() &&
                                      p.strategy.live_groups.empty()))
            throw Error(ErrorCode::PreconditionViolation,
                        "template carries obligations but no objectives to re-synthesize from");
        objectives.insert(objectives.end(), p.objectives.begin(), p.objectives.end());
        disabled.insert(disabled.end(), p.disabled.begin(), p.disabled.end());
    }
    return synthesize(g, std::move(objectives), std::move(disabled));
}

std::variant<Synthesis, RuntimeMask> apply_fault(const GameGraph& g, const Synthesis& s, EdgeId edge, FaultKind kind) {
    if (edge >= g.num_opp()) throw Error(ErrorCode::PreconditionViolation, "fault on unknown edge");
    if (kind == FaultKind::Occasional) return RuntimeMask{{edge}};
    if (s.strategy.is_unsafe(edge)) return s;
    std::vector<EdgeId> disabled = s.disabled;
    disabled.push_back(edge);
    sort_unique(disabled);
    StateId q = g.edge_source(edge);
    bool any_left = false;
    for (EdgeId e = g.edge_begin(q); e < g.edge_end(q); ++e)
        any_left = any_left || !std::binary_search(disabled.begin(), disabled.end(), e);
    if (!any_left) throw Error(ErrorCode::ConflictUnresolvable, "fault leaves its state without actions");
    try {
        return synthesize(g, s.objectives, std::move(disabled));
    } catch (const Error& e) {
        if (e.code() == ErrorCode::EmptyWinningRegion)
            throw Error(ErrorCode::ConflictUnresolvable, std::string("fault empties the winning region: ") + e.what());
        throw;
    }
}

std::vector<Violation> check_conflict_free(const GameGraph& g, const StrategyTemplate& t) {
    std::vector<char> blocked(g.num_opp(), 0);
    for (EdgeId e : t.unsafe) blocked[e] = 1;
    for (EdgeId e : t.colive) blocked[e] = 1;
    std::vector<Violation> out;
    for (StateId q : t.winning_region) {
        bool ok = false;
        for (EdgeId e = g.edge_begin(q); e < g.edge_end(q) && !ok; ++e) ok = !blocked[e];
        if (!ok) out.push_back({Violation::Kind::StateWithoutAction, q, 0});
    }
    for (std::size_t i = 0; i < t.live_groups.size(); ++i) {
        const auto& h = t.live_groups[i];
        // Groups are sorted, so edges of one source are contiguous.
        for (std::size_t k = 0; k < h.size();) {
            StateId q = g.edge_source(h[k]);
            bool ok = false;
            for (; k < h.size() && g.edge_source(h[k]) == q; ++k) ok = ok || !blocked[h[k]];
            if (!ok) out.push_back({Violation::Kind::GroupWithoutAction, q, i});
        }
    }
    return out;
}

std::vector<EdgeId> overlapping_edges(const StrategyTemplate& t) {
    std::vector<EdgeId> out;
    for (const auto& h : t.live_groups)
        for (EdgeId e : h)
            if (t.is_unsafe(e) || t.is_colive(e)) out.push_back(e);
    sort_unique(out);
    return out;
}

FollowVerdict follows_template(const GameGraph& g, std::span<const EdgeId> run, const StrategyTemplate& t) {
    FollowVerdict v;
    v.colive_counts.assign(t.colive.size(), 0);
    v.live_debts.assign(t.live_groups.size(), 0);
    v.max_live_debts.assign(t.live_groups.size(), 0);
    std::vector<std::vector<std::size_t>> member(g.num_opp()), source(g.num_sys());
    for (std::size_t i = 0; i < t.live_groups.size(); ++i)
        for (EdgeId e : t.live_groups[i]) {
            member[e].push_back(i);
            auto& src = source[g.edge_source(e)];
            if (src.empty() || src.back() != i) src.push_back(i);
        }
    std::vector<char> in_group(t.live_groups.size(), 0);
    for (EdgeId e : run) {
        if (t.is_unsafe(e)) {
            v.safety_ok = false;
            ++v.unsafe_uses;
        }
        auto it = std::lower_bound(t.colive.begin(), t.colive.end(), e);
        if (it != t.colive.end() && *it == e) ++v.colive_counts[static_cast<std::size_t>(it - t.colive.begin())];
        for (std::size_t i : member[e]) in_group[i] = 1;
        for (std::size_t i : source[g.edge_source(e)]) {
            if (in_group[i]) v.live_debts[i] = 0;
            else v.max_live_debts[i] = std::max(v.max_live_debts[i], ++v.live_debts[i]);
        }
        for (std::size_t i : member[e]) in_group[i] = 0;
    }
    return v;
}

} // namespace stars
