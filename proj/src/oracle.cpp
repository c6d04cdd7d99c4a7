#include "stars/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "stars/distribution.hpp"
#include "stars/errors.hpp"
#include "stars/rng.hpp"

namespace stars::oracle {

namespace {

/// Mixed-radix odometer over per-state choice counts. Returns false once
/// every combination has been produced.
bool advance(std::vector<std::size_t>& digits, const std::vector<std::size_t>& radix) {
    for (std::size_t i = 0; i < digits.size(); ++i) {
        if (radix[i] == 0) continue;
        if (++digits[i] < radix[i]) return true;
        digits[i] = 0;
    }
    return false;
}

struct Arena {
    std::size_t n = 0;
    std::vector<std::vector<EdgeId>> allowed; ///< per state, admissible edges
    std::vector<int> color;
};

/// Transitive closure over at most kMaxOracleStates nodes.
std::vector<std::vector<char>> reachability(const std::vector<std::vector<StateId>>& succ) {
    const std::size_t n = succ.size();
    std::vector<std::vector<char>> r(n, std::vector<char>(n, 0));
    for (std::size_t i = 0; i < n; ++i) {
        r[i][i] = 1;
        for (StateId j : succ[i]) r[i][j] = 1;
    }
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < n; ++i)
            if (r[i][k])
                for (std::size_t j = 0; j < n; ++j)
                    if (r[k][j]) r[i][j] = 1;
    return r;
}

/// Bottom SCCs of a finite graph, each as a sorted state list.
std::vector<std::vector<StateId>> bottom_sccs(const std::vector<std::vector<StateId>>& succ,
                                              const std::vector<char>& alive) {
    const std::size_t n = succ.size();
    auto r = reachability(succ);
    std::vector<std::vector<StateId>> out;
    std::vector<char> seen(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        if (!alive[i] || seen[i]) continue;
        std::vector<StateId> scc;
        for (std::size_t j = 0; j < n; ++j)
            if (alive[j] && r[i][j] && r[j][i]) scc.push_back(static_cast<StateId>(j));
        for (StateId j : scc) seen[j] = 1;
        bool bottom = true;
        for (StateId j : scc)
            for (StateId k : succ[j])
                if (!(r[k][i] && r[i][k])) bottom = false;
        if (bottom) out.push_back(std::move(scc));
    }
    return out;
}

Arena make_arena(const Mdp& mdp, const ParityObjective& obj, std::span<const EdgeId> disabled) {
    Arena a;
    a.n = mdp.num_states();
    if (a.n > kMaxOracleStates) throw Error(ErrorCode::TooLarge, "brute force is limited to small MDPs");
    if (obj.coloring.size() != a.n) throw Error(ErrorCode::DomainMismatch, "coloring size differs from the state count");
    std::vector<char> off(mdp.num_edges(), 0);
    for (EdgeId e : disabled) off.at(e) = 1;
    a.allowed.resize(a.n);
    for (StateId q = 0; q < a.n; ++q)
        for (ActionIndex i = 0; i < mdp.num_actions(q); ++i)
            if (!off[mdp.edge_id(q, i)]) a.allowed[q].push_back(mdp.edge_id(q, i));
    a.color = obj.coloring;
    double sigmas = 1.0, taus = 1.0;
    for (StateId q = 0; q < a.n; ++q) {
        sigmas *= static_cast<double>(std::max<std::size_t>(a.allowed[q].size(), 1));
        std::size_t widest = 1;
        for (EdgeId e : a.allowed[q]) widest = std::max(widest, mdp.successors(e).size());
        taus *= static_cast<double>(widest);
    }
    if (sigmas > kMaxOracleStrategies || taus > kMaxOracleStrategies)
        throw Error(ErrorCode::TooLarge, "too many memoryless strategies to enumerate");
    return a;
}

/// Calls f(choice) for every pure memoryless system strategy restricted to the
/// states marked in `domain`; states with no admissible edge carry kNone.
inline constexpr EdgeId kNone = ~EdgeId{0};

void for_each_sigma(const Arena& a, const std::vector<char>& domain,
                    const std::function<void(const std::vector<EdgeId>&)>& f) {
    std::vector<std::size_t> radix(a.n, 0), digits(a.n, 0);
    for (std::size_t q = 0; q < a.n; ++q) radix[q] = domain[q] ? a.allowed[q].size() : 0;
    std::vector<EdgeId> choice(a.n, kNone);
    do {
        for (std::size_t q = 0; q < a.n; ++q) choice[q] = radix[q] ? a.allowed[q][digits[q]] : kNone;
        f(choice);
    } while (advance(digits, radix));
}

/// Calls f(next) for every memoryless opponent resolution of `choice`.
void for_each_tau(const Mdp& mdp, const std::vector<EdgeId>& choice,
                  const std::function<void(const std::vector<StateId>&)>& f) {
    const std::size_t n = choice.size();
    std::vector<std::size_t> radix(n, 0), digits(n, 0);
    for (std::size_t q = 0; q < n; ++q) radix[q] = choice[q] == kNone ? 0 : mdp.successors(choice[q]).size();
    std::vector<StateId> next(n, 0);
    do {
        for (std::size_t q = 0; q < n; ++q)
            next[q] = radix[q] ? mdp.successors(choice[q])[digits[q]].target : static_cast<StateId>(q);
        f(next);
    } while (advance(digits, radix));
}

/// Cycle reached from q in the functional graph `next`.
std::vector<StateId> lasso_cycle(const std::vector<StateId>& next, StateId q) {
    std::vector<int> pos(next.size(), -1);
    std::vector<StateId> path;
    StateId v = q;
    while (pos[v] < 0) {
        pos[v] = static_cast<int>(path.size());
        path.push_back(v);
        v = next[v];
    }
    return {path.begin() + pos[v], path.end()};
}

bool even_max(const Arena& a, std::span<const StateId> cycle) {
    int m = -1;
    for (StateId q : cycle) m = std::max(m, a.color[q]);
    return m >= 0 && m % 2 == 0;
}

/// Does the infinite behaviour that repeats exactly the edges choice[s],
/// s in `core`, satisfy the template's co-live and live conditions?
bool core_follows(const GameGraph& g, const StrategyTemplate& t, const std::vector<EdgeId>& choice,
                  std::span<const StateId> core) {
    for (StateId s : core)
        if (t.is_colive(choice[s])) return false;
    for (const auto& group : t.live_groups) {
        bool source_seen = false, used = false;
        for (StateId s : core) {
            for (EdgeId e : group)
                if (g.edge_source(e) == s) source_seen = true;
            if (std::binary_search(group.begin(), group.end(), choice[s])) used = true;
        }
        if (source_seen && !used) return false;
    }
    return true;
}

std::vector<std::vector<StateId>> chain_successors(const Mdp& mdp, const std::vector<EdgeId>& choice) {
    std::vector<std::vector<StateId>> succ(choice.size());
    for (std::size_t q = 0; q < choice.size(); ++q) {
        if (choice[q] == kNone) continue;
        for (const auto& tr : mdp.successors(choice[q])) succ[q].push_back(tr.target);
    }
    return succ;
}

std::string edge_text(const Mdp& mdp, EdgeId e) {
    return mdp.state_name(mdp.edge_source(e)) + "/" + mdp.action_name(e);
}

} // namespace

std::vector<StateId> brute_force_winning(const Mdp& mdp, Mode mode, const ParityObjective& obj,
                                         std::span<const EdgeId> disabled) {
    const Arena a = make_arena(mdp, obj, disabled);
    std::vector<char> win(a.n, 0);
    const std::vector<char> all(a.n, 1);
    for_each_sigma(a, all, [&](const std::vector<EdgeId>& choice) {
        std::vector<char> ok(a.n, 1);
        for (std::size_t q = 0; q < a.n; ++q)
            if (choice[q] == kNone) ok[q] = 0; // stuck: the system loses
        if (mode == Mode::Sure) {
            for_each_tau(mdp, choice, [&](const std::vector<StateId>& next) {
                for (StateId q = 0; q < a.n; ++q) {
                    if (!ok[q]) continue;
                    auto cyc = lasso_cycle(next, q);
                    // Stuck states map to themselves, so a lasso reaching one ends there.
                    bool stuck = false;
                    for (StateId s : cyc)
                        if (choice[s] == kNone) stuck = true;
                    if (stuck || !even_max(a, cyc)) ok[q] = 0;
                }
            });
        } else {
            auto succ = chain_successors(mdp, choice);
            auto reach = reachability(succ);
            auto bottoms = bottom_sccs(succ, all);
            for (const auto& b : bottoms) {
                bool bad = !even_max(a, b);
                for (StateId s : b)
                    if (choice[s] == kNone) bad = true;
                if (!bad) continue;
                for (StateId q = 0; q < a.n; ++q)
                    if (reach[q][b.front()]) ok[q] = 0;
            }
        }
        for (std::size_t q = 0; q < a.n; ++q)
            if (ok[q]) win[q] = 1;
    });
    std::vector<StateId> out;
    for (StateId q = 0; q < a.n; ++q)
        if (win[q]) out.push_back(q);
    return out;
}

TemplateCheck check_template(const Mdp& mdp, Mode mode, const ParityObjective& obj, const StrategyTemplate& t,
                             std::span<const EdgeId> disabled, bool check_realizable) {
    TemplateCheck r;
    r.oracle_region = brute_force_winning(mdp, mode, obj, disabled);
    auto fail = [&](bool& flag, const std::string& why) {
        if (flag && r.detail.empty()) r.detail = why;
        flag = false;
    };
    if (r.oracle_region != t.winning_region) fail(r.region_matches, "winning region differs from enumeration");

    // Admissible edges: inside the template's region, neither unsafe nor disabled.
    Arena a = make_arena(mdp, obj, disabled);
    std::vector<char> domain(a.n, 0);
    for (StateId q : t.winning_region) domain.at(q) = 1;
    for (StateId q = 0; q < a.n; ++q) {
        std::erase_if(a.allowed[q], [&](EdgeId e) { return t.is_unsafe(e); });
        if (!domain[q]) continue;
        if (a.allowed[q].empty()) fail(r.closed, "state " + mdp.state_name(q) + " has no admissible edge");
        for (EdgeId e : a.allowed[q])
            for (const auto& tr : mdp.successors(e))
                if (!domain[tr.target]) fail(r.closed, "admissible edge " + edge_text(mdp, e) + " leaves the region");
    }
    if (!r.closed) return r;

    const GameGraph g(mdp, mode);
    std::vector<char> realized(a.n, 0);
    for_each_sigma(a, domain, [&](const std::vector<EdgeId>& choice) {
        std::vector<char> follows_from(a.n, 1);
        if (mode == Mode::Sure) {
            for_each_tau(mdp, choice, [&](const std::vector<StateId>& next) {
                for (StateId q = 0; q < a.n; ++q) {
                    if (!domain[q]) continue;
                    auto cyc = lasso_cycle(next, q);
                    if (!core_follows(g, t, choice, cyc)) {
                        follows_from[q] = 0;
                        continue;
                    }
                    if (!even_max(a, cyc)) fail(r.sound, "a template-following play from " + mdp.state_name(q) + " loses");
                }
            });
        } else {
            auto succ = chain_successors(mdp, choice);
            auto reach = reachability(succ);
            for (const auto& b : bottom_sccs(succ, domain)) {
                const bool follows = core_follows(g, t, choice, b);
                if (follows && !even_max(a, b))
                    fail(r.sound, "a template-following chain has a losing bottom SCC at " + mdp.state_name(b.front()));
                if (!follows)
                    for (StateId q = 0; q < a.n; ++q)
                        if (reach[q][b.front()]) follows_from[q] = 0;
            }
        }
        for (StateId q = 0; q < a.n; ++q)
            if (domain[q] && follows_from[q]) realized[q] = 1;
    });
    if (check_realizable)
        for (StateId q : t.winning_region)
            if (!realized[q]) fail(r.realizable, "no memoryless strategy follows the template from " + mdp.state_name(q));
    return r;
}

Mdp random_small_mdp(std::mt19937_64& rng, std::size_t max_states) {
    const std::size_t n = 1 + uniform_below(rng, max_states);
    MdpBuilder b;
    for (std::size_t q = 0; q < n; ++q) b.add_state("s" + std::to_string(q));
    for (StateId q = 0; q < n; ++q) {
        const std::size_t k = 1 + uniform_below(rng, 2);
        for (std::size_t i = 0; i < k; ++i) {
            const ActionIndex a = b.add_action(q, "a" + std::to_string(i));
            const StateId t1 = static_cast<StateId>(uniform_below(rng, n));
            if (n > 1 && uniform_below(rng, 2) == 1) {
                StateId t2 = static_cast<StateId>(uniform_below(rng, n - 1));
                if (t2 >= t1) ++t2;
                const double p = 0.1 + 0.8 * uniform01(rng);
                b.add_transition(q, a, t1, p);
                b.add_transition(q, a, t2, 1.0 - p);
            } else {
                b.add_transition(q, a, t1, 1.0);
            }
        }
    }
    return b.build();
}

ParityObjective random_coloring(std::mt19937_64& rng, std::size_t num_states, int max_color) {
    std::vector<int> c(num_states);
    for (auto& x : c) x = static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(max_color) + 1));
    return make_parity_objective(num_states, std::move(c));
}

ParityObjective random_buchi(std::mt19937_64& rng, std::size_t num_states) {
    std::vector<StateId> target;
    for (StateId q = 0; q < num_states; ++q)
        if (uniform01(rng) < 0.4) target.push_back(q);
    if (target.empty()) target.push_back(static_cast<StateId>(uniform_below(rng, num_states)));
    return make_buchi_objective(num_states, target);
}

std::string history_key(const History& h, const Mdp& mdp) {
    std::ostringstream os;
    for (std::size_t i = 0; i < h.states.size(); ++i) {
        if (i) os << ' ';
        os << mdp.state_name(h.states[i]);
        if (i < h.actions.size()) os << ' ' << mdp.action_name(h.states[i], h.actions[i]);
    }
    return os.str();
}

std::map<History, double> history_probabilities(const Mdp& mdp, const TabularPolicy& policy, const Shield* shield,
                                                 StateId start, std::size_t horizon) {
    const double work = std::pow(static_cast<double>(mdp.num_states()) * static_cast<double>(mdp.max_degree()),
                                 static_cast<double>(horizon));
    if (work > 1e7) throw Error(ErrorCode::TooLarge, "history enumeration exceeds 1e7 branches");
    if (start >= mdp.num_states()) throw Error(ErrorCode::PreconditionViolation, "start state out of range");
    validate_policy(policy, mdp);

    std::map<History, double> out;
    History h;
    h.states.push_back(start);
    std::function<void(double, const std::optional<Shield>&)> expand = [&](double p, const std::optional<Shield>& sh) {
        if (h.actions.size() == horizon) {
            out[h] += p;
            return;
        }
        const StateId q = h.states.back();
        auto mu = policy.at(q);
        std::vector<double> dist(mu.begin(), mu.end());
        if (sh) sh->shield_distribution(mu, q, dist);
        for (ActionIndex a = 0; a < dist.size(); ++a) {
            if (dist[a] <= 0.0) continue;
            std::optional<Shield> next_shield = sh;
            if (next_shield) next_shield->update_counters(q, a);
            h.actions.push_back(a);
            for (const auto& tr : mdp.successors(q, a)) {
                h.states.push_back(tr.target);
                expand(p * dist[a] * tr.probability, next_shield);
                h.states.pop_back();
            }
            h.actions.pop_back();
        }
    };
    std::optional<Shield> root;
    if (shield) root = *shield;
    expand(1.0, root);
    return out;
}

double interference_bound(double nominal_probability, double min_action_probability, std::size_t horizon,
                          std::size_t num_live_groups, double gamma) {
    if (horizon == 0) return 0.0;
    if (min_action_probability <= 0.0) return nominal_probability;
    const double l = static_cast<double>(horizon);
    const double base = (1.0 - l * gamma / min_action_probability) /
                        (1.0 + static_cast<double>(num_live_groups) * l * gamma);
    if (base <= 0.0) return nominal_probability;
    return nominal_probability * (1.0 - std::pow(base, l));
}

double min_action_probability(const History& h, const TabularPolicy& policy) {
    double x = 1.0;
    for (std::size_t i = 0; i < h.actions.size(); ++i) x = std::min(x, policy.at(h.states[i])[h.actions[i]]);
    return x;
}

bool in_template_prefix(const History& h, const GameGraph& g, const StrategyTemplate& t) {
    for (StateId q : h.states)
        if (!t.in_region(q)) return false;
    for (std::size_t i = 0; i < h.actions.size(); ++i)
        if (t.is_unsafe(g.edge_begin(h.states[i]) + h.actions[i])) return false;
    return true;
}

} // namespace stars::oracle
