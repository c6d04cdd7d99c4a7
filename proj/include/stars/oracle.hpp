#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "stars/game_graph.hpp"
#include "stars/mdp.hpp"
#include "stars/policy.hpp"
#include "stars/shield.hpp"
#include "stars/template.hpp"

/// Exhaustive reference implementations for small instances. Nothing here
/// uses the attractor/fixed-point solver, so they can check it.
namespace stars::oracle {

/// Enumeration limits: memoryless strategies of both players are listed,
/// so the cost is exponential in the state count.
inline constexpr std::size_t kMaxOracleStates = 12;
inline constexpr double kMaxOracleStrategies = 1e6;

/// Winning states by enumerating pure memoryless system strategies.
/// Sure mode also enumerates the opponent's memoryless choices and judges each
/// lasso by its cycle; almost-sure mode judges the bottom SCCs of the induced
/// chain. Throws TooLarge above kMaxOracleStates or when either player has
/// more than kMaxOracleStrategies memoryless strategies.
std::vector<StateId> brute_force_winning(const Mdp& mdp, Mode mode, const ParityObjective& obj,
                                         std::span<const EdgeId> disabled = {});

struct TemplateCheck {
    bool region_matches = true;
    bool sound = true;      ///< every template-following play from the region wins
    bool closed = true;     ///< no admissible edge lets the opponent leave the region
    bool realizable = true; ///< each region state has a memoryless follower
    std::vector<StateId> oracle_region;
    std::string detail;     ///< first failure, human readable
    bool ok() const { return region_matches && sound && closed && realizable; }
};

/// Cross-checks one template against enumeration. `realizable` is only
/// meaningful for templates of a single objective and can be skipped.
TemplateCheck check_template(const Mdp& mdp, Mode mode, const ParityObjective& obj, const StrategyTemplate& t,
                             std::span<const EdgeId> disabled = {}, bool check_realizable = true);

/// Random MDP with 1..max_states states, 1..2 actions per state and 1..2
/// successors per action, probabilities drawn away from zero.
Mdp random_small_mdp(std::mt19937_64& rng, std::size_t max_states = 6);
/// Colors uniform in [0, max_color].
ParityObjective random_coloring(std::mt19937_64& rng, std::size_t num_states, int max_color = 3);
/// Random nonempty Büchi set.
ParityObjective random_buchi(std::mt19937_64& rng, std::size_t num_states);

/// Finite history q0 a0 q1 ... q_l.
struct History {
    std::vector<StateId> states;
    std::vector<ActionIndex> actions;
    auto operator<=>(const History&) const = default;
};
std::string history_key(const History& h, const Mdp& mdp);

/// Exact probability of every positive-probability history of length `horizon`
/// from `start`, by depth-first expansion. When a shield is given it is copied
/// into each branch so its counters replay the branch's own past.
/// Throws TooLarge when |Q|^l * maxdeg^l exceeds 1e7.
std::map<History, double> history_probabilities(const Mdp& mdp, const TabularPolicy& policy,
                                                 const Shield* shield, StateId start, std::size_t horizon);

/// The deficit Pr_σ(κ) may lose under shielding:
/// Pr_σ(κ) * (1 - ((1 - lγ/x) / (1 + |H| l γ))^l), with x the smallest nominal
/// action probability along κ. A nonpositive base makes the bound trivial.
double interference_bound(double nominal_probability, double min_action_probability, std::size_t horizon,
                          std::size_t num_live_groups, double gamma);

/// Smallest nominal action probability along a history.
double min_action_probability(const History& h, const TabularPolicy& policy);

/// κ stays in the region and avoids unsafe edges.
bool in_template_prefix(const History& h, const GameGraph& g, const StrategyTemplate& t);

} // namespace stars::oracle
