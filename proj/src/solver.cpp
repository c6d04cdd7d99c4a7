#include "stars/solver.hpp"

#include <algorithm>

#include "stars/errors.hpp"

namespace stars::solver {

std::size_t count(const NodeSet& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), 1)); }

NodeSet minus(const NodeSet& a, const NodeSet& b) {
    NodeSet out(a.size(), 0);
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] && !b[i];
    return out;
}

bool is_subset(const NodeSet& a, const NodeSet& b) {
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] && !b[i]) return false;
    return true;
}

Attractor attract(const GameGraph& g, const NodeSet& alive, const NodeSet& target, Player player,
                  bool random_opponent, const NodeSet* blocked) {
    const std::size_t n = g.num_nodes();
    Attractor a{NodeSet(n, 0), std::vector<std::uint32_t>(n, kUnranked)};
    // needs_all[v]: v joins only once every alive successor has joined.
    auto needs_all = [&](NodeId v) {
        if (player == Player::System) return !g.is_sys(v) && !random_opponent;
        return g.is_sys(v);
    };
    std::vector<std::uint32_t> pending(n, 0);
    std::vector<NodeId> queue;
    queue.reserve(n);
    for (NodeId v = 0; v < n; ++v) {
        if (!alive[v]) continue;
        if (target[v]) {
            a.members[v] = 1;
            a.rank[v] = 0;
            queue.push_back(v);
            continue;
        }
        if (!needs_all(v)) continue;
        std::uint32_t c = 0;
        for (NodeId w : g.successors(v)) c += alive[w] ? 1 : 0;
        pending[v] = c;
        if (c == 0 && !(blocked && (*blocked)[v])) {
            // A stuck node loses for its owner.
            a.members[v] = 1;
            a.rank[v] = 0;
            queue.push_back(v);
        }
    }
    for (std::size_t head = 0; head < queue.size(); ++head) {
        NodeId v = queue[head];
        for (NodeId p : g.predecessors(v)) {
            if (!alive[p] || a.members[p]) continue;
            if (blocked && (*blocked)[p]) continue;
            if (needs_all(p) && --pending[p] != 0) continue;
            a.members[p] = 1;
            a.rank[p] = a.rank[v] + 1;
            queue.push_back(p);
        }
    }
    return a;
}

std::vector<int> node_colors(const GameGraph& g, const ParityObjective& obj) {
    if (obj.coloring.size() != g.num_sys())
        throw Error(ErrorCode::PreconditionViolation, "coloring does not match the game graph");
    std::vector<int> c(g.num_nodes(), obj.auxiliary_color());
    std::copy(obj.coloring.begin(), obj.coloring.end(), c.begin());
    return c;
}

NodeSet close_within(const GameGraph& g, const NodeSet& parent, const NodeSet& keep) {
    NodeSet dropped = minus(parent, keep);
    // Random/adversarial nodes fall with any successor; system nodes with all.
    Attractor fall = attract(g, parent, dropped, Player::Opponent, false);
    return minus(parent, fall.members);
}

NodeSet playable_arena(const GameGraph& g, std::span<const EdgeId> disabled) {
    NodeSet all(g.num_nodes(), 1);
    NodeSet keep = all;
    for (EdgeId e : disabled) keep[g.opp_node(e)] = 0;
    return close_within(g, all, keep);
}

NodeSet zielonka(const GameGraph& g, const NodeSet& alive, const std::vector<int>& colors) {
    const std::size_t n = g.num_nodes();
    int d = -1;
    for (NodeId v = 0; v < n; ++v)
        if (alive[v]) d = std::max(d, colors[v]);
    if (d < 0) return NodeSet(n, 0);

    NodeSet top(n, 0);
    for (NodeId v = 0; v < n; ++v) top[v] = alive[v] && colors[v] == d;
    const Player p = d % 2 == 0 ? Player::System : Player::Opponent;
    const Player other = p == Player::System ? Player::Opponent : Player::System;

    Attractor a = attract(g, alive, top, p, false);
    NodeSet sub = minus(alive, a.members);
    NodeSet sub_w0 = zielonka(g, sub, colors);
    NodeSet sub_lost_by_p = p == Player::System ? minus(sub, sub_w0) : sub_w0;
    if (count(sub_lost_by_p) == 0) return p == Player::System ? alive : NodeSet(n, 0);

    Attractor b = attract(g, alive, sub_lost_by_p, other, false);
    NodeSet rest = minus(alive, b.members);
    NodeSet rest_w0 = zielonka(g, rest, colors);
    if (p == Player::System) return rest_w0;
    for (NodeId v = 0; v < n; ++v)
        if (b.members[v]) rest_w0[v] = 1;
    return rest_w0;
}

NodeSet buchi_sure(const GameGraph& g, const NodeSet& alive, const NodeSet& buchi) {
    NodeSet x = alive;
    for (;;) {
        NodeSet tgt(x.size(), 0);
        for (std::size_t v = 0; v < x.size(); ++v) tgt[v] = x[v] && buchi[v];
        Attractor a = attract(g, x, tgt, Player::System, false);
        NodeSet lost = minus(x, a.members);
        if (count(lost) == 0) return x;
        Attractor trap = attract(g, x, lost, Player::Opponent, false);
        x = minus(x, trap.members);
    }
}

namespace {

/// Iterative Tarjan over the nodes of `alive`; returns component ids.
std::vector<std::uint32_t> scc_ids(const GameGraph& g, const NodeSet& alive) {
    const std::size_t n = g.num_nodes();
    constexpr std::uint32_t none = kUnranked;
    std::vector<std::uint32_t> index(n, none), low(n, 0), comp(n, none);
    std::vector<char> on_stack(n, 0);
    std::vector<NodeId> stack;
    struct Frame {
        NodeId v;
        std::uint32_t next;
    };
    std::vector<Frame> call;
    std::uint32_t counter = 0, ncomp = 0;
    for (NodeId root = 0; root < n; ++root) {
        if (!alive[root] || index[root] != none) continue;
        call.push_back({root, 0});
        index[root] = low[root] = counter++;
        stack.push_back(root);
        on_stack[root] = 1;
        while (!call.empty()) {
            Frame& f = call.back();
            auto succ = g.successors(f.v);
            if (f.next < succ.size()) {
                NodeId w = succ[f.next++];
                if (!alive[w]) continue;
                if (index[w] == none) {
                    index[w] = low[w] = counter++;
                    stack.push_back(w);
                    on_stack[w] = 1;
                    call.push_back({w, 0});
                } else if (on_stack[w]) {
                    low[f.v] = std::min(low[f.v], index[w]);
                }
                continue;
            }
            NodeId v = f.v;
            call.pop_back();
            if (!call.empty()) low[call.back().v] = std::min(low[call.back().v], low[v]);
            if (low[v] == index[v]) {
                NodeId w;
                do {
                    w = stack.back();
                    stack.pop_back();
                    on_stack[w] = 0;
                    comp[w] = ncomp;
                } while (w != v);
                ++ncomp;
            }
        }
    }
    return comp;
}

} // namespace

std::vector<std::vector<NodeId>> end_components(const GameGraph& g, const NodeSet& closed) {
    const std::size_t n = g.num_nodes();
    NodeSet cur = closed;
    std::vector<std::uint32_t> comp;
    for (;;) {
        comp = scc_ids(g, cur);
        NodeSet keep = cur;
        bool changed = false;
        for (NodeId v = static_cast<NodeId>(g.num_sys()); v < n; ++v) {
            if (!cur[v]) continue;
            bool split = false;
            for (NodeId w : g.successors(v))
                if (comp[w] != comp[v]) split = true;
            if (split) {
                keep[v] = 0;
                changed = true;
            }
        }
        if (!changed) break;
        cur = close_within(g, cur, keep);
    }
    std::vector<std::vector<NodeId>> out;
    std::vector<std::int64_t> slot(n, -1);
    for (NodeId v = 0; v < n; ++v) {
        if (!cur[v]) continue;
        std::uint32_t c = comp[v];
        if (slot[c] < 0) {
            slot[c] = static_cast<std::int64_t>(out.size());
            out.emplace_back();
        }
        out[static_cast<std::size_t>(slot[c])].push_back(v);
    }
    return out;
}

namespace {

NodeSet positive_fixpoint(const GameGraph& g, const NodeSet& alive, const NodeSet& target, bool absorbing) {
    NodeSet x = alive;
    const NodeSet* blocked = absorbing ? &target : nullptr;
    for (;;) {
        NodeSet tgt(x.size(), 0);
        for (std::size_t v = 0; v < x.size(); ++v) tgt[v] = x[v] && target[v];
        Attractor r = attract(g, x, tgt, Player::System, true);
        NodeSet lost = minus(x, r.members);
        if (count(lost) == 0) return x;
        Attractor trap = attract(g, x, lost, Player::Opponent, false, blocked);
        x = minus(x, trap.members);
    }
}

} // namespace

NodeSet almost_sure_reach(const GameGraph& g, const NodeSet& alive, const NodeSet& target) {
    return positive_fixpoint(g, alive, target, true);
}

NodeSet almost_sure_buchi(const GameGraph& g, const NodeSet& alive, const NodeSet& buchi) {
    return positive_fixpoint(g, alive, buchi, false);
}

NodeSet almost_sure_parity(const GameGraph& g, const NodeSet& alive, const std::vector<int>& colors) {
    const std::size_t n = g.num_nodes();
    int d = 0;
    for (NodeId v = 0; v < n; ++v)
        if (alive[v]) d = std::max(d, colors[v]);
    NodeSet good(n, 0);
    for (int p = 0; p <= d; p += 2) {
        NodeSet keep(n, 0);
        for (NodeId v = 0; v < n; ++v) keep[v] = alive[v] && colors[v] <= p;
        NodeSet sub = close_within(g, alive, keep);
        for (const auto& ec : end_components(g, sub)) {
            bool hit = std::any_of(ec.begin(), ec.end(),
                                   [&](NodeId v) { return g.is_sys(v) && colors[v] == p; });
            if (hit)
                for (NodeId v : ec) good[v] = 1;
        }
    }
    return almost_sure_reach(g, alive, good);
}

} // namespace stars::solver
