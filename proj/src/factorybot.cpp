#include "stars/factorybot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "stars/errors.hpp"
#include "stars/rng.hpp"

namespace stars {

const char* to_string(Category c) { return c == Category::Far ? "far" : "close"; }

Category parse_category(const std::string& s) {
    if (s == "far" || s == "Far") return Category::Far;
    if (s == "close" || s == "Close") return Category::Close;
    throw Error(ErrorCode::ParseError, "unknown category '" + s + "'");
}

std::string cell_name(Cell c) { return std::to_string(c.x) + "," + std::to_string(c.y); }

bool GridInstance::is_wall(Cell c) const { return std::binary_search(walls.begin(), walls.end(), c); }

std::pair<int, int> distance_band(Category c, int size) {
    const double lo = c == Category::Far ? 0.7 : 0.1;
    const double hi = c == Category::Far ? 0.9 : 0.2;
    // The epsilon keeps products such as 0.7*10 from rounding past an integer.
    return {static_cast<int>(std::ceil(lo * size - 1e-9)), static_cast<int>(std::floor(hi * size + 1e-9))};
}

namespace {

const Cell kMoves[4] = {{0, -1}, {0, 1}, {-1, 0}, {1, 0}};
const char* kMoveNames[4] = {"up", "down", "left", "right"};

std::vector<Cell> neighbours(Cell c) {
    std::vector<Cell> out;
    for (const Cell& m : kMoves) out.push_back({c.x + m.x, c.y + m.y});
    return out;
}

bool connected(const std::vector<char>& free, int size) {
    int start = -1, total = 0;
    for (int i = 0; i < size * size; ++i)
        if (free[static_cast<std::size_t>(i)]) {
            ++total;
            if (start < 0) start = i;
        }
    if (start < 0) return false;
    std::vector<char> seen(free.size(), 0);
    std::vector<int> stack{start};
    seen[static_cast<std::size_t>(start)] = 1;
    int reached = 0;
    while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        ++reached;
        for (Cell n : neighbours({v % size, v / size})) {
            if (n.x < 0 || n.y < 0 || n.x >= size || n.y >= size) continue;
            auto i = static_cast<std::size_t>(n.y * size + n.x);
            if (free[i] && !seen[i]) {
                seen[i] = 1;
                stack.push_back(static_cast<int>(i));
            }
        }
    }
    return reached == total;
}

/// Grows a contiguous region of `want` cells from a random seed cell drawn
/// from `allowed`; empty on failure.
std::vector<Cell> grow_region(std::mt19937_64& rng, const std::vector<Cell>& allowed, std::size_t want) {
    if (allowed.empty()) return {};
    std::vector<Cell> region{allowed[uniform_below(rng, allowed.size())]};
    while (region.size() < want) {
        std::vector<Cell> frontier;
        for (Cell c : region)
            for (Cell n : neighbours(c))
                if (std::binary_search(allowed.begin(), allowed.end(), n) &&
                    std::find(region.begin(), region.end(), n) == region.end() &&
                    std::find(frontier.begin(), frontier.end(), n) == frontier.end())
                    frontier.push_back(n);
        if (frontier.empty()) return {};
        std::sort(frontier.begin(), frontier.end());
        region.push_back(frontier[uniform_below(rng, frontier.size())]);
    }
    std::sort(region.begin(), region.end());
    return region;
}

} // namespace

GridInstance generate_instance(int size, Category category, std::uint64_t seed) {
    if (size < 5 || size > 13) throw Error(ErrorCode::PreconditionViolation, "grid size must lie in [5, 13]");
    const auto [lo, hi] = distance_band(category, size);
    const int cells = size * size;
    const int nwalls = static_cast<int>(std::lround(kWallDensity * cells));
    std::mt19937_64 rng(seed);
    for (int attempt = 0; attempt < kMaxGenerationAttempts; ++attempt) {
        std::vector<int> order(static_cast<std::size_t>(cells));
        for (int i = 0; i < cells; ++i) order[static_cast<std::size_t>(i)] = i;
        for (int i = 0; i < nwalls; ++i) {
            auto j = static_cast<std::size_t>(i) + uniform_below(rng, static_cast<std::uint64_t>(cells - i));
            std::swap(order[static_cast<std::size_t>(i)], order[j]);
        }
        std::vector<char> free(static_cast<std::size_t>(cells), 1);
        GridInstance inst;
        inst.size = size;
        inst.category = category;
        inst.seed = seed;
        for (int i = 0; i < nwalls; ++i) {
            int v = order[static_cast<std::size_t>(i)];
            free[static_cast<std::size_t>(v)] = 0;
            inst.walls.push_back({v % size, v / size});
        }
        std::sort(inst.walls.begin(), inst.walls.end());
        if (!connected(free, size)) continue;

        std::vector<Cell> open;
        for (int v = 0; v < cells; ++v)
            if (free[static_cast<std::size_t>(v)]) open.push_back({v % size, v / size});
        std::sort(open.begin(), open.end());
        inst.buchi = grow_region(rng, open, 1 + uniform_below(rng, 3));
        if (inst.buchi.empty()) continue;

        std::vector<Cell> candidates;
        for (Cell c : open) {
            if (std::binary_search(inst.buchi.begin(), inst.buchi.end(), c)) continue;
            bool ok = std::all_of(inst.buchi.begin(), inst.buchi.end(), [&](Cell b) {
                int d = manhattan(b, c);
                return d >= lo && d <= hi;
            });
            if (ok) candidates.push_back(c);
        }
        auto reward_cells = grow_region(rng, candidates, 1 + uniform_below(rng, 3));
        if (reward_cells.empty()) continue;
        for (Cell c : reward_cells) inst.rewards.push_back({c, 1.0});
        return inst;
    }
    throw Error(ErrorCode::GenerationExhausted,
                "no valid " + std::string(to_string(category)) + " grid of size " + std::to_string(size) +
                    " for seed " + std::to_string(seed));
}

std::string check_instance(const GridInstance& inst) {
    if (inst.size < 5 || inst.size > 13) return "size outside [5, 13]";
    if (inst.buchi.empty()) return "empty Büchi region";
    if (!(inst.slip >= 0.0 && inst.slip < 1.0)) return "slip outside [0, 1)";
    std::vector<char> free(static_cast<std::size_t>(inst.size * inst.size), 1);
    for (Cell w : inst.walls) {
        if (!inst.inside(w)) return "wall outside the grid";
        free[static_cast<std::size_t>(w.y * inst.size + w.x)] = 0;
    }
    auto is_free = [&](Cell c) { return inst.inside(c) && free[static_cast<std::size_t>(c.y * inst.size + c.x)]; };
    for (Cell b : inst.buchi)
        if (!is_free(b)) return "Büchi cell on a wall or outside";
    const auto [lo, hi] = distance_band(inst.category, inst.size);
    for (const auto& r : inst.rewards) {
        if (!is_free(r.cell)) return "reward cell on a wall or outside";
        if (r.value < 0.0) return "negative reward";
        if (std::binary_search(inst.buchi.begin(), inst.buchi.end(), r.cell)) return "reward cell inside the Büchi region";
        if (r.value > 0.0)
            for (Cell b : inst.buchi) {
                int d = manhattan(b, r.cell);
                if (d < lo || d > hi) return "reward cell " + cell_name(r.cell) + " violates the distance band";
            }
    }
    if (!connected(free, inst.size)) return "free cells are not connected";
    return "";
}

std::optional<StateId> GridMdp::state_at(Cell c, int size) const {
    if (c.x < 0 || c.y < 0 || c.x >= size || c.y >= size) return std::nullopt;
    std::int32_t s = state_of_cell[static_cast<std::size_t>(c.y * size + c.x)];
    if (s < 0) return std::nullopt;
    return static_cast<StateId>(s);
}

GridMdp grid_to_mdp(const GridInstance& inst) {
    const int n = inst.size;
    GridMdp gm;
    gm.state_of_cell.assign(static_cast<std::size_t>(n * n), -1);
    MdpBuilder b;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            Cell c{x, y};
            if (inst.is_wall(c)) continue;
            gm.state_of_cell[static_cast<std::size_t>(y * n + x)] = static_cast<std::int32_t>(b.add_state(cell_name(c)));
            gm.cell_of_state.push_back(c);
        }
    std::vector<double> cell_reward(static_cast<std::size_t>(n * n), 0.0);
    for (const auto& r : inst.rewards) cell_reward[static_cast<std::size_t>(r.cell.y * n + r.cell.x)] = r.value;
    auto legal = [&](Cell c) { return c.x >= 0 && c.y >= 0 && c.x < n && c.y < n && !inst.is_wall(c); };
    auto state_of = [&](Cell c) { return static_cast<StateId>(gm.state_of_cell[static_cast<std::size_t>(c.y * n + c.x)]); };

    std::vector<double> reward;
    for (StateId q = 0; q < gm.cell_of_state.size(); ++q) {
        Cell c = gm.cell_of_state[q];
        for (int m = 0; m < 4; ++m) {
            Cell to{c.x + kMoves[m].x, c.y + kMoves[m].y};
            if (!legal(to)) continue;
            ActionIndex a = b.add_action(q, kMoveNames[m]);
            // Laterals of a vertical move are horizontal and vice versa.
            const int lateral[2] = {m < 2 ? 2 : 0, m < 2 ? 3 : 1};
            std::vector<std::pair<Cell, double>> out{{to, 1.0 - inst.slip}};
            if (inst.slip > 0.0)
                for (int l : lateral) {
                    Cell side{c.x + kMoves[l].x, c.y + kMoves[l].y};
                    if (legal(side)) out.push_back({side, inst.slip / 2.0});
                }
            double total = 0.0;
            for (const auto& o : out) total += o.second;
            for (const auto& o : out) b.add_transition(q, a, state_of(o.first), o.second / total);
            reward.push_back(cell_reward[static_cast<std::size_t>(to.y * n + to.x)]);
        }
    }
    b.set_initial(0);
    gm.mdp = std::make_shared<const Mdp>(b.build());
    gm.reward = std::make_shared<const std::vector<double>>(std::move(reward));
    return gm;
}

std::vector<StateId> buchi_states(const GridInstance& inst, const GridMdp& gm) {
    std::vector<StateId> out;
    for (Cell c : inst.buchi)
        if (auto q = gm.state_at(c, inst.size)) out.push_back(*q);
    std::sort(out.begin(), out.end());
    return out;
}

AvgRewardSolution solve_avg_reward_policy(const Mdp& mdp, const std::vector<double>& reward, double eps_p) {
    const std::size_t n = mdp.num_states();
    if (reward.size() != mdp.num_edges()) throw Error(ErrorCode::PreconditionViolation, "reward table size mismatch");
    if (eps_p < 0.0 || (eps_p > 0.0 && eps_p >= 1.0 / static_cast<double>(mdp.max_degree())))
        throw Error(ErrorCode::PreconditionViolation, "softening must lie in [0, 1/maxdeg)");
    constexpr double tol = 1e-8;
    constexpr std::uint64_t max_sweeps = 1000000;
    std::vector<double> h(n, 0.0), next(n, 0.0);
    auto q_value = [&](StateId q, ActionIndex a, const std::vector<double>& v) {
        EdgeId e = mdp.edge_id(q, a);
        double s = 0.0;
        for (const auto& t : mdp.successors(e)) s += t.probability * v[t.target];
        return reward[e] + 0.5 * s + 0.5 * v[q];
    };
    AvgRewardSolution sol;
    for (std::uint64_t sweep = 1; sweep <= max_sweeps; ++sweep) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (StateId q = 0; q < n; ++q) {
            double best = -std::numeric_limits<double>::infinity();
            for (ActionIndex a = 0; a < mdp.num_actions(q); ++a) best = std::max(best, q_value(q, a, h));
            next[q] = best;
            lo = std::min(lo, best - h[q]);
            hi = std::max(hi, best - h[q]);
        }
        const double ref = next[0];
        for (StateId q = 0; q < n; ++q) h[q] = next[q] - ref;
        if (hi - lo < tol) {
            sol.gain = 0.5 * (hi + lo);
            sol.sweeps = sweep;
            break;
        }
        if (sweep == max_sweeps) throw Error(ErrorCode::NoConvergence, "relative value iteration did not converge");
    }
    sol.greedy.resize(n);
    sol.policy.weights.resize(n);
    for (StateId q = 0; q < n; ++q) {
        const std::size_t k = mdp.num_actions(q);
        double best = -std::numeric_limits<double>::infinity();
        for (ActionIndex a = 0; a < k; ++a) best = std::max(best, q_value(q, a, h));
        ActionIndex pick = 0;
        for (ActionIndex a = 0; a < k; ++a)
            if (q_value(q, a, h) >= best - 1e-9) {
                pick = a;
                break;
            }
        sol.greedy[q] = pick;
        auto& row = sol.policy.weights[q];
        row.assign(k, eps_p);
        row[pick] = 1.0 - eps_p * static_cast<double>(k - 1);
    }
    return sol;
}

double max_avg_reward(const GridInstance& inst) {
    GridMdp gm = grid_to_mdp(inst);
    return solve_avg_reward_policy(*gm.mdp, *gm.reward, 0.0).gain;
}

TabularPolicy naive_shield(const TabularPolicy& policy, double p_mix, const StrategyTemplate& t, const Mdp& mdp) {
    if (!(p_mix >= 0.0 && p_mix <= 1.0)) throw Error(ErrorCode::PreconditionViolation, "p_mix must lie in [0, 1]");
    TabularPolicy out = policy;
    for (StateId q = 0; q < mdp.num_states(); ++q) {
        std::size_t safe = 0;
        for (ActionIndex a = 0; a < mdp.num_actions(q); ++a) safe += t.is_unsafe(mdp.edge_id(q, a)) ? 0 : 1;
        for (ActionIndex a = 0; a < mdp.num_actions(q); ++a) {
            double u = (safe == 0 || t.is_unsafe(mdp.edge_id(q, a))) ? 0.0 : 1.0 / static_cast<double>(safe);
            out.weights[q][a] = (1.0 - p_mix) * policy.weights[q][a] + p_mix * u;
        }
    }
    return out;
}

namespace {

ordered_json cells_to_json(const std::vector<Cell>& cells) {
    ordered_json a = ordered_json::array();
    for (Cell c : cells) a.push_back(ordered_json::array({c.x, c.y}));
    return a;
}

std::vector<Cell> cells_from_json(const json& j) {
    if (!j.is_array()) throw Error(ErrorCode::ParseError, "cell list must be an array");
    std::vector<Cell> out;
    for (const auto& c : j) {
        if (!c.is_array() || c.size() != 2) throw Error(ErrorCode::ParseError, "cells are [x, y]");
        out.push_back({c[0].get<int>(), c[1].get<int>()});
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

} // namespace

ordered_json instance_to_json(const GridInstance& inst) {
    ordered_json j;
    j["size"] = inst.size;
    j["walls"] = cells_to_json(inst.walls);
    j["buchi"] = cells_to_json(inst.buchi);
    ordered_json r = ordered_json::array();
    for (const auto& rc : inst.rewards) r.push_back(ordered_json::array({rc.cell.x, rc.cell.y, rc.value}));
    j["rewards"] = std::move(r);
    j["slip"] = inst.slip;
    j["category"] = to_string(inst.category);
    j["seed"] = inst.seed;
    return j;
}

GridInstance instance_from_json(const json& j) {
    try {
        GridInstance inst;
        inst.size = j.at("size").get<int>();
        inst.walls = cells_from_json(j.at("walls"));
        inst.buchi = cells_from_json(j.at("buchi"));
        for (const auto& r : j.at("rewards")) {
            if (!r.is_array() || r.size() != 3) throw Error(ErrorCode::ParseError, "rewards are [x, y, v]");
            inst.rewards.push_back({{r[0].get<int>(), r[1].get<int>()}, r[2].get<double>()});
        }
        inst.slip = j.value("slip", 0.0);
        inst.category = parse_category(j.value("category", std::string("far")));
        inst.seed = j.value("seed", std::uint64_t{0});
        std::string why = check_instance(inst);
        if (!why.empty()) throw Error(ErrorCode::PreconditionViolation, "invalid instance: " + why);
        return inst;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("instance: ") + e.what());
    }
}

GridInstance load_instance(const std::filesystem::path& path) { return instance_from_json(read_json_file(path)); }

void save_instance(const GridInstance& inst, const std::filesystem::path& path) {
    write_text_file(path, instance_to_json(inst).dump() + "\n");
}

std::string instance_id(const GridInstance& inst) {
    return std::string(to_string(inst.category)) + "-" + std::to_string(inst.size) + "-" + std::to_string(inst.seed);
}

} // namespace stars
