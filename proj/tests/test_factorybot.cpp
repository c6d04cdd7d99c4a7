#include <doctest.h>

#include <Eigen/Dense>

#include <algorithm>
#include <filesystem>
#include <memory>
#include <random>
#include <set>

#include "stars/factorybot.hpp"
#include "stars/rng.hpp"
#include "stars/shield.hpp"
#include "stars/simulation.hpp"
#include "stars/template.hpp"
#include "test_util.hpp"

using namespace stars;
using namespace stars::testing;

namespace {

/// Open size×size grid with one Büchi cell and one reward cell; no placement rule enforced.
GridInstance open_grid(int size, double slip) {
    GridInstance g;
    g.size = size;
    g.buchi = {{0, 0}};
    g.rewards = {{{size - 1, size - 1}, 1.0}};
    g.slip = slip;
    return g;
}

/// Grid whose free cells are exactly `free`; everything else is a wall.
GridInstance carved_grid(int size, const std::set<Cell>& free, double slip) {
    GridInstance g;
    g.size = size;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            if (!free.count({x, y})) g.walls.push_back({x, y});
    std::sort(g.walls.begin(), g.walls.end());
    g.buchi = {*free.begin()};
    g.slip = slip;
    return g;
}

/// Random connected cell set grown from the centre by 4-neighbour steps.
std::set<Cell> random_blob(std::mt19937_64& rng, int size, std::size_t cells) {
    std::set<Cell> blob{{size / 2, size / 2}};
    const Cell moves[4] = {{0, -1}, {0, 1}, {-1, 0}, {1, 0}};
    while (blob.size() < cells) {
        auto it = blob.begin();
        std::advance(it, static_cast<long>(uniform_below(rng, blob.size())));
        const Cell m = moves[uniform_below(rng, 4)];
        const Cell c{it->x + m.x, it->y + m.y};
        if (c.x >= 0 && c.y >= 0 && c.x < size && c.y < size) blob.insert(c);
    }
    return blob;
}

/// Best long-run average over pure memoryless policies: each policy's chain is
/// split into bottom SCCs and each is solved for its stationary law exactly.
double brute_force_gain(const Mdp& mdp, const std::vector<double>& reward) {
    const std::size_t n = mdp.num_states();
    std::vector<ActionIndex> choice(n, 0);
    double best = -1e300;
    for (;;) {
        Eigen::MatrixXd P = Eigen::MatrixXd::Zero(static_cast<long>(n), static_cast<long>(n));
        Eigen::VectorXd r(static_cast<long>(n));
        for (StateId q = 0; q < n; ++q) {
            r[q] = reward[mdp.edge_id(q, choice[q])];
            for (const auto& t : mdp.successors(q, choice[q])) P(q, t.target) += t.probability;
        }
        // reach[i][j]: j reachable from i.
        std::vector<std::vector<char>> reach(n, std::vector<char>(n, 0));
        for (StateId i = 0; i < n; ++i) {
            std::vector<StateId> stack{i};
            reach[i][i] = 1;
            while (!stack.empty()) {
                StateId v = stack.back();
                stack.pop_back();
                for (StateId w = 0; w < n; ++w)
                    if (P(v, w) > 0.0 && !reach[i][w]) {
                        reach[i][w] = 1;
                        stack.push_back(w);
                    }
            }
        }
        std::vector<char> done(n, 0);
        for (StateId i = 0; i < n; ++i) {
            if (done[i]) continue;
            bool bottom = true;
            std::vector<StateId> cls;
            for (StateId j = 0; j < n; ++j) {
                if (reach[i][j] && !reach[j][i]) bottom = false;
                if (reach[i][j] && reach[j][i]) cls.push_back(j);
            }
            for (StateId j : cls) done[j] = 1;
            if (!bottom) continue;
            const long k = static_cast<long>(cls.size());
            Eigen::MatrixXd A(k + 1, k);
            Eigen::VectorXd b = Eigen::VectorXd::Zero(k + 1);
            for (long u = 0; u < k; ++u)
                for (long v = 0; v < k; ++v) A(v, u) = P(cls[u], cls[v]) - (u == v ? 1.0 : 0.0);
            A.row(k).setOnes();
            b[k] = 1.0;
            Eigen::VectorXd pi = A.colPivHouseholderQr().solve(b);
            double g = 0.0;
            for (long u = 0; u < k; ++u) g += pi[u] * r[cls[u]];
            best = std::max(best, g);
        }
        std::size_t q = 0;
        while (q < n && ++choice[q] == mdp.num_actions(q)) choice[q++] = 0;
        if (q == n) break;
    }
    return best;
}

} // namespace

TEST_CASE("generation is deterministic and validated") {
    for (Category c : {Category::Far, Category::Close})
        for (int size : {5, 7, 9}) {
            auto a = generate_instance(size, c, 11);
            CHECK(a == generate_instance(size, c, 11));
            CHECK(check_instance(a) == "");
            CHECK(a.category == c);
            CHECK(!a.buchi.empty());
            CHECK(a.buchi.size() <= 3);
            CHECK(!a.rewards.empty());
        }
    CHECK(generate_instance(7, Category::Far, 1) != generate_instance(7, Category::Far, 2));
    CHECK_THROWS_CODE(generate_instance(4, Category::Far, 1), ErrorCode::PreconditionViolation);
    CHECK_THROWS_CODE(generate_instance(14, Category::Close, 1), ErrorCode::PreconditionViolation);
}

TEST_CASE("distance bands use integer rounding") {
    CHECK(distance_band(Category::Close, 5) == std::pair{1, 1});
    CHECK(distance_band(Category::Far, 5) == std::pair{4, 4});
    CHECK(distance_band(Category::Close, 10) == std::pair{1, 2});
    CHECK(distance_band(Category::Far, 10) == std::pair{7, 9});
}

TEST_CASE("property: placement rule and connectivity hold for emitted instances") {
    for (std::uint64_t seed = 1; seed <= 40; ++seed)
        for (Category c : {Category::Far, Category::Close}) {
            const int size = 5 + static_cast<int>(seed % 9);
            GridInstance inst;
            try {
                inst = generate_instance(size, c, seed);
            } catch (const Error& e) {
                CHECK(e.code() == ErrorCode::GenerationExhausted);
                continue;
            }
            const auto [lo, hi] = distance_band(c, size);
            for (const auto& r : inst.rewards)
                for (Cell b : inst.buchi) {
                    const int d = manhattan(r.cell, b);
                    CHECK(d >= lo);
                    CHECK(d <= hi);
                }
            for (Cell w : inst.walls) {
                CHECK(!std::binary_search(inst.buchi.begin(), inst.buchi.end(), w));
                for (const auto& r : inst.rewards) CHECK(r.cell != w);
            }
            // Connectivity: the sure Büchi region covers every free cell at slip 0.
            auto gm = grid_to_mdp(inst);
            GameGraph g(*gm.mdp, Mode::Sure);
            auto t = buchi_template(g, buchi_states(inst, gm));
            CHECK(t.winning_region.size() == gm.mdp->num_states());
        }
}

TEST_CASE("close instances of size 5 sit at distance exactly one") {
    auto inst = generate_instance(5, Category::Close, 1);
    for (const auto& r : inst.rewards)
        for (Cell b : inst.buchi) CHECK(manhattan(r.cell, b) == 1);
}

TEST_CASE("grid dynamics") {
    SUBCASE("slip 0 is deterministic") {
        auto gm = grid_to_mdp(generate_instance(7, Category::Far, 3));
        for (EdgeId e = 0; e < gm.mdp->num_edges(); ++e) CHECK(gm.mdp->successors(e).size() == 1);
    }
    SUBCASE("corner cells have two actions and blocked moves are absent") {
        auto inst = open_grid(5, 0.0);
        auto gm = grid_to_mdp(inst);
        for (Cell c : {Cell{0, 0}, Cell{4, 0}, Cell{0, 4}, Cell{4, 4}})
            CHECK(gm.mdp->num_actions(*gm.state_at(c, 5)) == 2);
        CHECK(gm.mdp->num_actions(*gm.state_at({2, 2}, 5)) == 4);
        CHECK(gm.mdp->num_actions(*gm.state_at({2, 0}, 5)) == 3);
        CHECK(gm.mdp->num_states() == 25);
    }
    SUBCASE("slip 0.2 splits 0.8 / 0.1 / 0.1 in the interior") {
        auto gm = grid_to_mdp(open_grid(5, 0.2));
        const StateId q = *gm.state_at({2, 2}, 5);
        for (ActionIndex a = 0; a < gm.mdp->num_actions(q); ++a) {
            std::vector<double> ps;
            for (const auto& t : gm.mdp->successors(q, a)) ps.push_back(t.probability);
            std::sort(ps.begin(), ps.end());
            REQUIRE(ps.size() == 3);
            CHECK(ps[0] == doctest::Approx(0.1));
            CHECK(ps[1] == doctest::Approx(0.1));
            CHECK(ps[2] == doctest::Approx(0.8));
        }
        // On the border one lateral is missing and the rest is renormalized.
        const StateId edge = *gm.state_at({2, 0}, 5);
        for (ActionIndex a = 0; a < gm.mdp->num_actions(edge); ++a) {
            double sum = 0.0;
            for (const auto& t : gm.mdp->successors(edge, a)) sum += t.probability;
            CHECK(sum == doctest::Approx(1.0));
        }
    }
    SUBCASE("reward is the value of the intended cell") {
        auto inst = open_grid(5, 0.2);
        auto gm = grid_to_mdp(inst);
        const StateId q = *gm.state_at({3, 4}, 5);
        for (ActionIndex a = 0; a < gm.mdp->num_actions(q); ++a) {
            const double r = (*gm.reward)[gm.mdp->edge_id(q, a)];
            CHECK(r == (gm.mdp->action_name(q, a) == "right" ? 1.0 : 0.0));
        }
    }
}

TEST_CASE("average-reward solver: small examples") {
    {
        Mdp m = build_mdp(1, {{0, "stay", 0, 1.0}});
        auto sol = solve_avg_reward_policy(m, {1.0}, 0.0);
        CHECK(sol.gain == doctest::Approx(1.0).epsilon(1e-7));
    }
    {
        // Corridor with a stay action; rewards are those of the entered cell.
        Mdp m = build_mdp(2, {{0, "stay", 0, 1.0}, {0, "right", 1, 1.0}, {1, "stay", 1, 1.0}, {1, "left", 0, 1.0}});
        auto sol = solve_avg_reward_policy(m, {0.0, 1.0, 1.0, 0.0}, 0.0);
        CHECK(sol.gain == doctest::Approx(1.0).epsilon(1e-7));
        CHECK(sol.greedy == std::vector<ActionIndex>{1, 0});
    }
    {
        // Without stay actions the corridor alternates: gain 1/2.
        Mdp m = build_mdp(2, {{0, "right", 1, 1.0}, {1, "left", 0, 1.0}});
        CHECK(solve_avg_reward_policy(m, {1.0, 0.0}, 0.0).gain == doctest::Approx(0.5).epsilon(1e-7));
    }
    Mdp m = build_mdp(1, {{0, "a", 0, 1.0}, {0, "b", 0, 1.0}});
    CHECK_THROWS_CODE(solve_avg_reward_policy(m, {1.0}, 0.0), ErrorCode::PreconditionViolation);
    CHECK_THROWS_CODE(solve_avg_reward_policy(m, {1.0, 0.0}, 0.5), ErrorCode::PreconditionViolation);
}

TEST_CASE("average-reward solver matches policy enumeration") {
    std::mt19937_64 rng(41);
    for (int it = 0; it < 30; ++it) {
        const std::size_t cells = 3 + uniform_below(rng, 8); // up to 10 states
        const double slip = it % 3 == 0 ? 0.0 : 0.2;
        auto blob = random_blob(rng, 5, cells);
        auto inst = carved_grid(5, blob, slip);
        // Random rewards on a few cells make ties rare.
        for (Cell c : blob)
            if (uniform01(rng) < 0.5) inst.rewards.push_back({c, uniform01(rng)});
        auto gm = grid_to_mdp(inst);
        const double oracle = brute_force_gain(*gm.mdp, *gm.reward);
        auto sol = solve_avg_reward_policy(*gm.mdp, *gm.reward, 0.0);
        CHECK_MESSAGE(sol.gain == doctest::Approx(oracle).epsilon(1e-6), "iteration " << it);
        CHECK(max_avg_reward(inst) == doctest::Approx(oracle).epsilon(1e-6));
    }
}

TEST_CASE("property: softened policy has full support and is eps-close to greedy") {
    for (std::uint64_t seed : {1, 2, 3}) {
        auto inst = generate_instance(7, Category::Far, seed);
        auto gm = grid_to_mdp(inst);
        const double eps = 0.01;
        auto sol = solve_avg_reward_policy(*gm.mdp, *gm.reward, eps);
        validate_policy(sol.policy, *gm.mdp);
        for (StateId q = 0; q < gm.mdp->num_states(); ++q) {
            const auto& w = sol.policy.weights[q];
            std::vector<double> point(w.size(), 0.0);
            point[sol.greedy[q]] = 1.0;
            for (double x : w) CHECK(x > 0.0);
            CHECK(tv_distance(w, point) <= eps * static_cast<double>(gm.mdp->max_degree() - 1) + 1e-12);
        }
        // The softened optimizer is still near-optimal.
        CHECK(sol.gain == doctest::Approx(max_avg_reward(inst)).epsilon(1e-6));
    }
}

TEST_CASE("naive shield mixing") {
    auto inst = generate_instance(6, Category::Close, 5);
    auto gm = grid_to_mdp(inst);
    GameGraph g(*gm.mdp, Mode::Sure);
    auto t = buchi_template(g, buchi_states(inst, gm));
    auto sol = solve_avg_reward_policy(*gm.mdp, *gm.reward, 0.01);
    CHECK(naive_shield(sol.policy, 0.0, t, *gm.mdp) == sol.policy);
    auto uni = naive_shield(sol.policy, 1.0, t, *gm.mdp);
    for (StateId q = 0; q < gm.mdp->num_states(); ++q)
        for (double x : uni.weights[q]) CHECK(x == doctest::Approx(1.0 / static_cast<double>(gm.mdp->num_actions(q))));
    // Unsafe edges only get the nominal share.
    auto small = build_mdp(2, {{0, "a", 0, 1.0}, {0, "b", 1, 1.0}, {1, "stay", 1, 1.0}});
    GameGraph sg(small, Mode::Sure);
    auto st = buchi_template(sg, std::vector<StateId>{0});
    REQUIRE(st.is_unsafe(small.edge_id(0, 1)));
    TabularPolicy half{{{0.5, 0.5}, {1.0}}};
    auto mixed = naive_shield(half, 0.4, st, small);
    CHECK(mixed.weights[0][0] == doctest::Approx(0.7));
    CHECK(mixed.weights[0][1] == doctest::Approx(0.3));
}

TEST_CASE("7x7 instance at gamma 0.2: long traces respect the template bounds") {
    auto inst = generate_instance(7, Category::Far, 7);
    auto gm = grid_to_mdp(inst);
    auto g = std::make_shared<const GameGraph>(*gm.mdp, Mode::Sure);
    auto s = synthesize(*g, {make_buchi_objective(*gm.mdp, buchi_states(inst, gm))});
    CHECK(s.strategy.winning_region.size() == gm.mdp->num_states());
    auto pol = std::make_shared<const TabularPolicy>(solve_avg_reward_policy(*gm.mdp, *gm.reward, 0.01).policy);
    ShieldParams p;
    p.gamma = 0.2;
    p.theta = 0.01;
    for (std::uint64_t seed : {1, 2}) {
        Simulation sim(gm.mdp, pol, Shield(g, s, p), initial_state_from_seed(s.strategy.winning_region, seed), seed);
        sim.set_recording(true);
        sim.run(100000);
        auto v = follows_template(*g, sim.sampled_edges(), s.strategy);
        CHECK(v.safety_ok);
        for (auto c : v.colive_counts) CHECK(c <= colive_sample_bound(p));
        for (auto d : v.max_live_debts) CHECK(static_cast<double>(d) <= live_counter_bound(p));
        CHECK(sim.stats().unsafe_samples == 0);
    }
}

TEST_CASE("instance JSON round trip") {
    auto inst = generate_instance(8, Category::Far, 13);
    CHECK(instance_from_json(instance_to_json(inst)) == inst);
    const auto path = std::filesystem::temp_directory_path() / "stars_instance_roundtrip.json";
    save_instance(inst, path);
    CHECK(load_instance(path) == inst);
    std::filesystem::remove(path);
    CHECK(instance_id(inst) == "far-8-13");
    auto j = instance_to_json(inst);
    CHECK(j.contains("walls"));
    CHECK(j["category"] == "far");
    j.erase("size");
    CHECK_THROWS_CODE(instance_from_json(j), ErrorCode::ParseError);
}
