#pragma once

#include <compare>
#include <cstdlib>
#include <optional>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "stars/mdp.hpp"
#include "stars/mdp_io.hpp"
#include "stars/policy.hpp"
#include "stars/template.hpp"

namespace stars {

enum class Category { Far, Close };
const char* to_string(Category c);
Category parse_category(const std::string& s);

struct Cell {
    int x = 0;
    int y = 0;
    auto operator<=>(const Cell&) const = default;
};

inline int manhattan(Cell a, Cell b) { return std::abs(a.x - b.x) + std::abs(a.y - b.y); }
/// State name of a grid cell, "x,y".
std::string cell_name(Cell c);

struct RewardCell {
    Cell cell;
    double value = 0.0;
    bool operator==(const RewardCell&) const = default;
};

struct GridInstance {
    int size = 0;
    std::vector<Cell> walls;  ///< sorted
    std::vector<Cell> buchi;  ///< sorted, contiguous
    std::vector<RewardCell> rewards;
    double slip = 0.0;
    Category category = Category::Far;
    std::uint64_t seed = 0;

    bool is_wall(Cell c) const;
    bool inside(Cell c) const { return c.x >= 0 && c.y >= 0 && c.x < size && c.y < size; }
    bool operator==(const GridInstance&) const = default;
};

/// Fraction of cells turned into walls.
inline constexpr double kWallDensity = 0.15;
inline constexpr int kMaxGenerationAttempts = 10000;

/// Integer ℓ1 distance band [ceil(min*size), floor(max*size)] of a category.
std::pair<int, int> distance_band(Category c, int size);

/// Rejection sampler; deterministic in (size, category, seed).
/// Throws PreconditionViolation for size outside [5,13] and
/// GenerationExhausted after kMaxGenerationAttempts.
GridInstance generate_instance(int size, Category category, std::uint64_t seed);

/// Empty string when the instance satisfies every structural rule, else a reason.
std::string check_instance(const GridInstance& inst);

struct GridMdp {
    std::shared_ptr<const Mdp> mdp;
    std::shared_ptr<const std::vector<double>> reward; ///< per edge: value of the intended cell
    std::vector<std::int32_t> state_of_cell;            ///< y*size+x -> state or -1
    std::vector<Cell> cell_of_state;

    std::optional<StateId> state_at(Cell c, int size) const;
};

/// Free cells in row-major order; actions up, down, left, right where legal.
GridMdp grid_to_mdp(const GridInstance& inst);

std::vector<StateId> buchi_states(const GridInstance& inst, const GridMdp& gm);

struct AvgRewardSolution {
    TabularPolicy policy;
    std::vector<ActionIndex> greedy;
    double gain = 0.0;
    std::uint64_t sweeps = 0;
};

/// Relative value iteration on the lazy chain 0.5·P + 0.5·I (same gain,
/// aperiodic), span tolerance 1e-8. The greedy action keeps
/// 1 - eps_p·(|A(q)|-1), every other action eps_p. Throws NoConvergence.
AvgRewardSolution solve_avg_reward_policy(const Mdp& mdp, const std::vector<double>& reward, double eps_p);

double max_avg_reward(const GridInstance& inst);

/// (1-p_mix)·σ(q) + p_mix·uniform over the actions the template does not forbid.
TabularPolicy naive_shield(const TabularPolicy& policy, double p_mix, const StrategyTemplate& t, const Mdp& mdp);

ordered_json instance_to_json(const GridInstance& inst);
GridInstance instance_from_json(const json& j);
GridInstance load_instance(const std::filesystem::path& path);
void save_instance(const GridInstance& inst, const std::filesystem::path& path);

/// Stable identifier, e.g. "far-7-11".
std::string instance_id(const GridInstance& inst);

} // namespace stars
