#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "stars/game_graph.hpp"

namespace stars {

/// Γ = (S, D, H_1..H_n) plus the region it is valid on. Edge and state lists
/// are sorted and duplicate-free; each live group is sorted.
struct StrategyTemplate {
    std::vector<EdgeId> unsafe;
    std::vector<EdgeId> colive;
    std::vector<std::vector<EdgeId>> live_groups;
    std::vector<StateId> winning_region;

    bool in_region(StateId q) const;
    bool is_unsafe(EdgeId e) const;
    bool is_colive(EdgeId e) const;
    bool operator==(const StrategyTemplate&) const = default;
};

/// Template on which every run of the playable arena is admissible.
StrategyTemplate empty_template(const GameGraph& g);

/// Layers Q_0 (= target) .. Q_n of the system attractor, ascending state ids.
struct AttractorLayers {
    std::vector<std::vector<StateId>> layers;
};

/// Sure mode: adversarial opponent nodes. Almost-sure mode: positive
/// attractor inside the almost-sure reachability region of the target.
AttractorLayers sys_attractor(const GameGraph& g, std::span<const StateId> target,
                              std::span<const EdgeId> disabled = {});

/// One live group per attractor layer i >= 1. Edges from non-target region
/// states that leave the region are marked unsafe.
StrategyTemplate reach_template(const GameGraph& g, std::span<const StateId> target,
                                std::span<const EdgeId> disabled = {});

/// Throws EmptyTarget / EmptyWinningRegion.
StrategyTemplate buchi_template(const GameGraph& g, std::span<const StateId> buchi,
                                std::span<const EdgeId> disabled = {});

/// Buchi colorings take the dedicated fixed point, anything else the
/// general recursion. Throws EmptyWinningRegion.
StrategyTemplate parity_template(const GameGraph& g, const ParityObjective& obj,
                                 std::span<const EdgeId> disabled = {});

/// Same as parity_template but never dispatches to the Büchi fixed point;
/// exposed so the two constructions can be cross-checked.
StrategyTemplate parity_template_general(const GameGraph& g, const ParityObjective& obj,
                                         std::span<const EdgeId> disabled = {});

/// Winning states only (no template), sure or almost-sure per the graph.
std::vector<StateId> winning_region(const GameGraph& g, const ParityObjective& obj,
                                    std::span<const EdgeId> disabled = {});

/// A template together with what it was synthesized from, so it can be
/// re-synthesized after composition conflicts or persistent faults.
struct Synthesis {
    Mode mode = Mode::Sure;
    std::vector<ParityObjective> objectives;
    std::vector<EdgeId> disabled; ///< persistent faults and promoted conflicts, sorted
    StrategyTemplate strategy;
    bool operator==(const Synthesis&) const = default;
};

/// Conjunction of objectives over one graph: intersect regions, forbid edges
/// leaving the intersection, and promote conflicting co-live edges to disabled
/// until a conflict-free fixed point. Throws EmptyWinningRegion for a single
/// unwinnable objective, ConflictUnresolvable when the conjunction is empty.
Synthesis synthesize(const GameGraph& g, std::vector<ParityObjective> objectives,
                     std::vector<EdgeId> disabled = {});

/// Objectives concatenated, disabled edges united, then synthesize().
/// Inputs without objectives contribute nothing (identity element).
Synthesis compose_templates(const GameGraph& g, std::span<const Synthesis> parts);

enum class FaultKind { Persistent, Occasional };
const char* to_string(FaultKind k);
FaultKind parse_fault_kind(const std::string& s);

/// Edges the shield must zero until the mask is lifted.
struct RuntimeMask {
    std::vector<EdgeId> edges;
};

/// Persistent: the edge is disabled and everything re-synthesized.
/// Occasional: template untouched, a mask holding the edge is returned.
/// Throws ConflictUnresolvable when the source state would lose all actions
/// or the composed region becomes empty.
std::variant<Synthesis, RuntimeMask> apply_fault(const GameGraph& g, const Synthesis& s, EdgeId edge,
                                                 FaultKind kind);

struct Violation {
    enum class Kind { StateWithoutAction, GroupWithoutAction } kind;
    StateId state;
    std::size_t group = 0; ///< meaningful for GroupWithoutAction
    bool operator==(const Violation&) const = default;
};

/// Empty iff every region state has an action outside S ∪ D and every live
/// group source has a group action outside S ∪ D.
std::vector<Violation> check_conflict_free(const GameGraph& g, const StrategyTemplate& t);

/// Edges that sit in a live group and in S or D at the same time.
std::vector<EdgeId> overlapping_edges(const StrategyTemplate& t);

/// Finite-run audit against a template, recounting the counters from scratch.
struct FollowVerdict {
    bool safety_ok = true;
    std::size_t unsafe_uses = 0;
    std::vector<std::uint64_t> colive_counts;  ///< aligned with template.colive
    std::vector<std::uint64_t> live_debts;     ///< counter value after the run, per group
    std::vector<std::uint64_t> max_live_debts; ///< largest counter value before any step
};

FollowVerdict follows_template(const GameGraph& g, std::span<const EdgeId> run, const StrategyTemplate& t);

} // namespace stars
