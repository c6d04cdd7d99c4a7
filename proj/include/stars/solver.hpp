#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "stars/game_graph.hpp"

/// Node-level game solving over subarenas given as membership masks.
/// A mask marks the nodes still in play; successors outside it are ignored.
namespace stars::solver {

using NodeSet = std::vector<char>;

enum class Player { System, Opponent };

inline constexpr std::uint32_t kUnranked = std::numeric_limits<std::uint32_t>::max();

struct Attractor {
    NodeSet members;
    /// BFS distance in node hops from the target; a system node's layer is rank / 2.
    std::vector<std::uint32_t> rank;
};

/// Nodes owned by `player` join when one alive successor is inside; the other
/// side's nodes join when all alive successors are inside. With
/// `random_opponent`, a System attractor treats opponent nodes as random:
/// one successor inside suffices (positive-probability attractor).
/// Nodes in `blocked` (optional) never join unless they are targets.
Attractor attract(const GameGraph& g, const NodeSet& alive, const NodeSet& target, Player player,
                  bool random_opponent, const NodeSet* blocked = nullptr);

std::size_t count(const NodeSet& s);
NodeSet minus(const NodeSet& a, const NodeSet& b);
bool is_subset(const NodeSet& a, const NodeSet& b);

/// Node colors: system nodes from the objective, opponent nodes auxiliary.
std::vector<int> node_colors(const GameGraph& g, const ParityObjective& obj);

/// Arena with the given opponent nodes (edges) removed and dead ends pruned:
/// every remaining system node keeps a successor, and in almost-sure mode every
/// remaining random node keeps all of its successors.
NodeSet playable_arena(const GameGraph& g, std::span<const EdgeId> disabled);

/// Largest subset of `keep` closed inside `parent`: random/opponent nodes keep
/// all successors, system nodes keep at least one.
NodeSet close_within(const GameGraph& g, const NodeSet& parent, const NodeSet& keep);

/// Sure-mode parity: system's winning nodes inside `alive` (Zielonka).
NodeSet zielonka(const GameGraph& g, const NodeSet& alive, const std::vector<int>& colors);

/// Sure-mode Büchi winning nodes inside `alive`.
NodeSet buchi_sure(const GameGraph& g, const NodeSet& alive, const NodeSet& buchi);

/// Maximal end components of a closed node set (random opponent).
std::vector<std::vector<NodeId>> end_components(const GameGraph& g, const NodeSet& closed);

/// Almost-sure reachability of `target` from inside the closed set `alive`.
/// Target nodes are absorbing for the purpose of the objective.
NodeSet almost_sure_reach(const GameGraph& g, const NodeSet& alive, const NodeSet& target);

/// Almost-sure Büchi: largest closed X with X = PosAttr_X(buchi ∩ X).
NodeSet almost_sure_buchi(const GameGraph& g, const NodeSet& alive, const NodeSet& buchi);

/// Almost-sure parity via good end components plus almost-sure reachability.
NodeSet almost_sure_parity(const GameGraph& g, const NodeSet& alive, const std::vector<int>& colors);

} // namespace stars::solver
