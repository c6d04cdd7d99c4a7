#include <doctest.h>

#include <cmath>
#include <memory>
#include <random>
#include <sstream>

#include "stars/oracle.hpp"
#include "stars/rng.hpp"
#include "stars/shield.hpp"
#include "stars/simulation.hpp"
#include "test_util.hpp"

using namespace stars;
using namespace stars::testing;

namespace {

/// One state q0 with self loops a and b, plus a second state so that
/// templates can mention a group source other than q0.
Mdp two_action_mdp() {
    return build_mdp(2, {{0, "a", 0, 1.0}, {0, "b", 1, 1.0}, {1, "back", 0, 1.0}});
}

Synthesis opaque(const GameGraph& g, StrategyTemplate t) {
    Synthesis s;
    s.mode = g.mode();
    s.strategy = std::move(t);
    return s;
}

std::vector<double> shield_at(const Shield& sh, std::vector<double> mu, StateId q) {
    std::vector<double> out(mu.size());
    sh.shield_distribution(mu, q, out);
    return out;
}

ShieldParams params(double gamma, double theta) {
    ShieldParams p;
    p.gamma = gamma;
    p.theta = theta;
    return p;
}

TabularPolicy random_full_support(const Mdp& m, std::mt19937_64& rng) {
    TabularPolicy p;
    for (StateId q = 0; q < m.num_states(); ++q) {
        std::vector<double> w(m.num_actions(q));
        for (auto& x : w) x = 0.05 + uniform01(rng);
        p.weights.push_back(normalize(w).weights);
    }
    return p;
}

} // namespace

TEST_CASE("shielded distribution: worked examples") {
    Mdp m = two_action_mdp();
    auto g = std::make_shared<const GameGraph>(m, Mode::Sure);
    const EdgeId a = m.edge_id(0, 0), b = m.edge_id(0, 1);

    SUBCASE("empty template is a no-op") {
        Shield sh(g, opaque(*g, empty_template(*g)), params(0.1, 0.01));
        auto d = shield_at(sh, {0.5, 0.5}, 0);
        CHECK(d[0] == doctest::Approx(0.5));
        CHECK(d[1] == doctest::Approx(0.5));
    }
    SUBCASE("unsafe action is zeroed") {
        auto t = empty_template(*g);
        t.unsafe = {a};
        Shield sh(g, opaque(*g, t), params(0.1, 0.1));
        auto d = shield_at(sh, {0.5, 0.5}, 0);
        CHECK(d[0] == 0.0);
        CHECK(d[1] == 1.0);
    }
    SUBCASE("live group boost: 8/13 and 5/13") {
        auto t = empty_template(*g);
        t.live_groups = {{b}};
        Shield sh(g, opaque(*g, t), params(0.1, 0.05));
        for (int i = 0; i < 3; ++i) sh.update_counters(0, 0);
        CHECK(sh.live_counters()[0] == 3);
        auto d = shield_at(sh, {0.8, 0.2}, 0);
        CHECK(d[0] == doctest::Approx(8.0 / 13.0).epsilon(1e-12));
        CHECK(d[1] == doctest::Approx(5.0 / 13.0).epsilon(1e-12));
    }
    SUBCASE("co-live penalty clamps at zero") {
        auto t = empty_template(*g);
        t.colive = {b};
        Shield sh(g, opaque(*g, t), params(0.25, 0.01));
        sh.update_counters(0, 1);
        sh.update_counters(0, 1);
        CHECK(sh.colive_counter(b) == 2);
        auto d = shield_at(sh, {0.6, 0.4}, 0);
        CHECK(d[0] == 1.0);
        CHECK(d[1] == 0.0);
    }
    SUBCASE("perturbation fallback moves mass off an unsafe point mass") {
        auto t = empty_template(*g);
        t.unsafe = {a};
        Shield sh(g, opaque(*g, t), params(0.1, 0.01));
        auto d = shield_at(sh, {1.0, 0.0}, 0);
        CHECK(d[0] == 0.0);
        CHECK(d[1] == 1.0);
    }
    SUBCASE("no admissible action") {
        auto t = empty_template(*g);
        t.unsafe = {a, b};
        Shield sh(g, opaque(*g, t), params(0.1, 0.01));
        CHECK_THROWS_CODE(shield_at(sh, {0.5, 0.5}, 0), ErrorCode::NoSafeAction);
    }
    SUBCASE("masked actions behave like unsafe ones until lifted") {
        Shield sh(g, opaque(*g, empty_template(*g)), params(0.1, 0.01));
        sh.set_fault(a, FaultKind::Occasional, true, 0);
        CHECK(sh.mask() == std::vector<EdgeId>{a});
        CHECK(shield_at(sh, {0.5, 0.5}, 0)[0] == 0.0);
        sh.set_fault(a, FaultKind::Occasional, false, 0);
        CHECK(shield_at(sh, {0.5, 0.5}, 0)[0] == doctest::Approx(0.5));
    }
    SUBCASE("size mismatch") {
        Shield sh(g, opaque(*g, empty_template(*g)), params(0.1, 0.01));
        std::vector<double> out(2);
        CHECK_THROWS_CODE(sh.shield_distribution(std::vector<double>{1.0}, 0, out), ErrorCode::DomainMismatch);
    }
}

TEST_CASE("counter updates") {
    Mdp m = two_action_mdp();
    auto g = std::make_shared<const GameGraph>(m, Mode::Sure);
    const EdgeId a = m.edge_id(0, 0), b = m.edge_id(0, 1);
    auto t = empty_template(*g);
    t.live_groups = {{b}};
    t.colive = {a};
    Shield sh(g, opaque(*g, t), params(0.5, 0.01));
    for (int i = 0; i < 4; ++i) sh.update_counters(0, 0);
    CHECK(sh.live_counters()[0] == 4);
    sh.update_counters(0, 0);
    CHECK(sh.live_counters()[0] == 5);
    sh.update_counters(0, 1);
    CHECK(sh.live_counters()[0] == 0);
    // Steps from a non-source state leave the group counter alone.
    sh.update_counters(1, 0);
    CHECK(sh.live_counters()[0] == 0);
    CHECK(sh.colive_counter(a) == 5);
    CHECK(sh.colive_counter(b) == 0);
    sh.reset_counters();
    CHECK(sh.colive_counter(a) == 0);
}

TEST_CASE("three uses of a co-live edge at gamma 0.5 block the fourth") {
    Mdp m = two_action_mdp();
    auto g = std::make_shared<const GameGraph>(m, Mode::Sure);
    auto t = empty_template(*g);
    t.colive = {m.edge_id(0, 0)};
    Shield sh(g, opaque(*g, t), params(0.5, 0.01));
    for (int i = 0; i < 3; ++i) sh.update_counters(0, 0);
    for (double mu_a : {1.0, 0.9, 0.5}) {
        auto d = shield_at(sh, {mu_a, 1.0 - mu_a}, 0);
        CHECK(d[0] == 0.0);
    }
}

TEST_CASE("parameters") {
    Mdp m = two_action_mdp();
    auto g = std::make_shared<const GameGraph>(m, Mode::Sure);
    auto t = empty_template(*g);
    t.live_groups = {{m.edge_id(0, 1)}};
    Shield sh(g, opaque(*g, t), params(0.05, 0.01));
    sh.update_counters(0, 0);
    sh.set_params(0.5, std::nullopt);
    CHECK(sh.params().gamma == 0.5);
    CHECK(sh.live_counters()[0] == 1);
    CHECK_THROWS_CODE(sh.set_params(std::nullopt, 0.5), ErrorCode::InvalidParams);
    CHECK_THROWS_CODE(sh.set_params(0.0, std::nullopt), ErrorCode::InvalidParams);
    CHECK(sh.params().gamma == 0.5);
    CHECK(sh.params().theta == 0.01);
    CHECK_THROWS_CODE(Shield(g, opaque(*g, t), params(1.5, 0.01)), ErrorCode::InvalidParams);

    CHECK(live_counter_bound(params(1.0, 0.5)) == 1.0);
    CHECK(live_counter_bound(params(0.1, 0.01)) == doctest::Approx(990.0));
    CHECK(colive_sample_bound(params(0.1, 0.01)) == 11);
    CHECK(colive_sample_bound(params(0.3, 0.01)) == 5);
}

TEST_CASE("shielding cost") {
    std::vector<double> zeros(10, 0.0);
    CHECK(shielding_cost(zeros) == 0.0);
    std::vector<double> half(7, 0.5);
    CHECK(shielding_cost(half) == doctest::Approx(0.5));
    std::vector<double> w{2.0, 0.0};
    std::vector<double> tv{0.5, 1.0};
    CHECK(shielding_cost(tv, w) == doctest::Approx(0.5));
    CHECK_THROWS_CODE(shielding_cost(std::vector<double>{}), ErrorCode::EmptyTrace);
    // A fair coin shielded to a point mass is half a unit of variation.
    CHECK(tv_distance(std::vector<double>{0.5, 0.5}, std::vector<double>{1.0, 0.0}) == doctest::Approx(0.5));
}

TEST_CASE("empty template reproduces the unshielded run") {
    auto mdp = std::make_shared<const Mdp>(cycle_mdp(5));
    auto g = std::make_shared<const GameGraph>(*mdp, Mode::Sure);
    std::mt19937_64 rng(9);
    auto pol = std::make_shared<const TabularPolicy>(random_full_support(*mdp, rng));
    Simulation plain(mdp, pol, std::nullopt, 0, 77);
    Simulation shielded(mdp, pol, Shield(g, opaque(*g, empty_template(*g)), params(0.3, 0.01)), 0, 77);
    plain.set_recording(true);
    shielded.set_recording(true);
    plain.run(500);
    shielded.run(500);
    CHECK(plain.visited_states() == shielded.visited_states());
    CHECK(plain.sampled_edges() == shielded.sampled_edges());
}

TEST_CASE("vanishing gamma barely moves the nominal distribution") {
    std::mt19937_64 rng(13);
    for (int it = 0; it < 40; ++it) {
        auto mdp = std::make_shared<const Mdp>(oracle::random_small_mdp(rng, 6));
        auto g = std::make_shared<const GameGraph>(*mdp, Mode::AlmostSure);
        auto obj = oracle::random_buchi(rng, mdp->num_states());
        if (winning_region(*g, obj).empty()) continue;
        auto s = synthesize(*g, {obj});
        auto pol = std::make_shared<const TabularPolicy>(random_full_support(*mdp, rng));
        const StateId start = s.strategy.winning_region.front();
        Simulation sim(mdp, pol, Shield(g, s, params(1e-12, 1e-12)), start, 3);
        for (int k = 0; k < 300; ++k) {
            const auto& r = sim.step();
            // Only histories that never meet an unsafe edge; the shield keeps it that way.
            double unsafe_mass = 0.0;
            for (ActionIndex a = 0; a < r.nominal.size(); ++a)
                if (s.strategy.is_unsafe(mdp->edge_id(r.state, a))) unsafe_mass += r.nominal[a];
            if (unsafe_mass == 0.0) CHECK(tv_distance(r.nominal, r.shielded) < 1e-6);
        }
    }
}

TEST_CASE("property: safety, co-live and live bounds on random games") {
    std::mt19937_64 rng(17);
    int runs = 0;
    for (int it = 0; it < 200; ++it) {
        auto mdp = std::make_shared<const Mdp>(oracle::random_small_mdp(rng, 6));
        const Mode mode = it % 2 ? Mode::Sure : Mode::AlmostSure;
        auto g = std::make_shared<const GameGraph>(*mdp, mode);
        auto obj = oracle::random_coloring(rng, mdp->num_states(), 3);
        if (winning_region(*g, obj).empty()) continue;
        auto s = synthesize(*g, {obj});
        auto pol = std::make_shared<const TabularPolicy>(random_full_support(*mdp, rng));
        const double gamma = 0.05 + 0.9 * uniform01(rng);
        const double theta = 0.01 + 0.3 * uniform01(rng) / static_cast<double>(mdp->max_degree());
        const auto p = params(gamma, theta);
        const StateId start = initial_state_from_seed(s.strategy.winning_region, it);
        Simulation sim(mdp, pol, Shield(g, s, p), start, it);
        sim.set_recording(true);
        sim.run(3000);
        ++runs;
        CHECK(sim.stats().unsafe_samples == 0);
        for (StateId q : sim.visited_states()) CHECK(s.strategy.in_region(q));
        auto v = follows_template(*g, sim.sampled_edges(), s.strategy);
        CHECK(v.safety_ok);
        for (std::uint64_t c : v.colive_counts) CHECK(c <= colive_sample_bound(p));
        for (std::uint64_t d : v.max_live_debts) CHECK(static_cast<double>(d) <= live_counter_bound(p));
        // The recount agrees with the shield's own counters.
        CHECK(v.colive_counts == sim.shield()->colive_counters());
        CHECK(v.live_debts == sim.shield()->live_counters());
    }
    CHECK(runs > 50);
}

TEST_CASE("property: shielded support stays within nominal support and live edges") {
    std::mt19937_64 rng(19);
    for (int it = 0; it < 300; ++it) {
        Mdp m = oracle::random_small_mdp(rng, 6);
        auto g = std::make_shared<const GameGraph>(m, Mode::AlmostSure);
        auto obj = oracle::random_buchi(rng, m.num_states());
        if (winning_region(*g, obj).empty()) continue;
        auto s = synthesize(*g, {obj});
        Shield sh(g, s, params(0.2, 0.01));
        for (int k = 0; k < 5; ++k) {
            const StateId q = s.strategy.winning_region[uniform_below(rng, s.strategy.winning_region.size())];
            sh.update_counters(q, static_cast<ActionIndex>(uniform_below(rng, m.num_actions(q))));
        }
        for (StateId q : s.strategy.winning_region) {
            std::vector<double> mu(m.num_actions(q), 0.0);
            for (auto& x : mu) x = uniform01(rng) < 0.5 ? 0.0 : uniform01(rng);
            bool admissible_support = false;
            for (ActionIndex a = 0; a < mu.size(); ++a)
                if (mu[a] > 0.0 && !s.strategy.is_unsafe(m.edge_id(q, a))) admissible_support = true;
            // With no co-live edges, an admissible nominal action keeps the
            // first pass nondegenerate, so the fallback never fires.
            if (!admissible_support) continue;
            auto d = shield_at(sh, mu, q);
            for (ActionIndex a = 0; a < mu.size(); ++a) {
                const EdgeId e = m.edge_id(q, a);
                const bool live = !sh.index().groups_of_edge(e).empty();
                if (d[a] > 0.0) CHECK((mu[a] > 0.0 || live));
                if (s.strategy.is_unsafe(e)) CHECK(d[a] == 0.0);
            }
        }
    }
}

TEST_CASE("determinism: equal inputs give byte-identical traces") {
    std::mt19937_64 rng(23);
    auto mdp = std::make_shared<const Mdp>(oracle::random_small_mdp(rng, 6));
    auto g = std::make_shared<const GameGraph>(*mdp, Mode::AlmostSure);
    auto s = synthesize(*g, {trivial_objective(mdp->num_states())});
    auto pol = std::make_shared<const TabularPolicy>(random_full_support(*mdp, rng));
    auto trace = [&](std::uint64_t seed) {
        std::ostringstream os;
        Simulation sim(mdp, pol, Shield(g, s, params(0.2, 0.05)), 0, seed);
        sim.set_trace(&os);
        sim.run(200);
        return os.str();
    };
    CHECK(trace(5) == trace(5));
    CHECK(trace(5) != trace(6));
}

TEST_CASE("online objectives and faults on a ring") {
    // Ring 0..5 with next/stay at every state; both targets reachable everywhere.
    MdpBuilder b;
    for (int i = 0; i < 6; ++i) b.add_state("q" + std::to_string(i));
    for (StateId i = 0; i < 6; ++i) {
        b.add_transition(i, b.add_action(i, "next"), (i + 1) % 6, 1.0);
        b.add_transition(i, b.add_action(i, "stay"), i, 1.0);
    }
    auto mdp = std::make_shared<const Mdp>(b.build());
    auto g = std::make_shared<const GameGraph>(*mdp, Mode::Sure);
    auto s1 = synthesize(*g, {make_buchi_objective(*mdp, std::vector<StateId>{0})});
    // A lazy nominal policy that prefers staying put.
    TabularPolicy lazy;
    for (StateId q = 0; q < 6; ++q) lazy.weights.push_back({0.05, 0.95});
    auto pol = std::make_shared<const TabularPolicy>(lazy);

    SUBCASE("adding the trivial objective changes nothing") {
        Shield sh(g, s1, params(0.2, 0.01));
        sh.update_counters(2, 1);
        auto before_t = sh.strategy();
        auto before_c = sh.live_counters();
        sh.add_objective(synthesize(*g, {trivial_objective(6)}), 2);
        CHECK(sh.strategy() == before_t);
        CHECK(sh.live_counters() == before_c);
    }
    SUBCASE("second target: both visited, counters carried") {
        Simulation sim(mdp, pol, Shield(g, s1, params(0.2, 0.01)), 0, 42);
        sim.set_recording(true);
        sim.run(5000);
        const auto old_groups = sim.shield()->strategy().live_groups;
        const auto old_counts = sim.shield()->live_counters();
        sim.shield()->add_objective(synthesize(*g, {make_buchi_objective(*mdp, std::vector<StateId>{3})}), sim.state());
        const auto& ng = sim.shield()->strategy().live_groups;
        for (std::size_t i = 0; i < ng.size(); ++i) {
            auto it = std::find(old_groups.begin(), old_groups.end(), ng[i]);
            if (it != old_groups.end())
                CHECK(sim.shield()->live_counters()[i] == old_counts[static_cast<std::size_t>(it - old_groups.begin())]);
        }
        const std::size_t from = sim.visited_states().size();
        sim.run(20000);
        std::size_t hit0 = 0, hit3 = 0;
        for (std::size_t i = from; i < sim.visited_states().size(); ++i) {
            hit0 += sim.visited_states()[i] == 0;
            hit3 += sim.visited_states()[i] == 3;
        }
        CHECK(hit0 > 100);
        CHECK(hit3 > 100);
        CHECK(sim.stats().unsafe_samples == 0);
    }
    SUBCASE("objective excluding the current state") {
        // Two disconnected self loops: the trivial objective wins everywhere,
        // Büchi{r1} only at r1, so the combined region misses r0.
        Mdp cm = build_mdp(2, {{0, "stay", 0, 1.0}, {1, "stay", 1, 1.0}});
        auto cg = std::make_shared<const GameGraph>(cm, Mode::Sure);
        Shield sh(cg, synthesize(*cg, {trivial_objective(2)}), params(0.2, 0.01));
        auto before = sh.synthesis();
        CHECK_THROWS_CODE(sh.add_objective(synthesize(*cg, {make_buchi_objective(cm, std::vector<StateId>{1})}), 0),
                          ErrorCode::OutsideCombinedRegion);
        CHECK(sh.synthesis() == before);
        // Objectives with no common winning state are a conflict instead.
        Mdp dm = build_mdp(3, {{0, "go", 1, 1.0}, {0, "stay", 0, 1.0}, {1, "back", 0, 1.0},
                               {1, "go", 2, 1.0}, {2, "stay", 2, 1.0}});
        auto dg = std::make_shared<const GameGraph>(dm, Mode::Sure);
        Shield sd(dg, synthesize(*dg, {make_buchi_objective(dm, std::vector<StateId>{0})}), params(0.2, 0.01));
        CHECK_THROWS_CODE(sd.add_objective(synthesize(*dg, {make_buchi_objective(dm, std::vector<StateId>{2})}), 0),
                          ErrorCode::ConflictUnresolvable);
    }
    SUBCASE("remove an objective") {
        Shield sh(g, s1, params(0.2, 0.01));
        sh.add_objective(synthesize(*g, {make_buchi_objective(*mdp, std::vector<StateId>{3})}), 0);
        CHECK(sh.synthesis().objectives.size() == 2);
        sh.remove_objective(0, 0);
        CHECK(sh.synthesis().objectives.size() == 1);
        CHECK(sh.strategy() == buchi_template(*g, std::vector<StateId>{3}));
        CHECK_THROWS_CODE(sh.remove_objective(4, 0), ErrorCode::PreconditionViolation);
    }
    SUBCASE("persistent fault on a live-group edge re-synthesizes and can be lifted") {
        Shield sh(g, s1, params(0.2, 0.01));
        const EdgeId e = sh.strategy().live_groups.front().front();
        sh.set_fault(e, FaultKind::Persistent, true, 0);
        CHECK(sh.synthesis().disabled == std::vector<EdgeId>{e});
        CHECK(sh.strategy() == synthesize(*g, s1.objectives, {e}).strategy);
        sh.set_fault(e, FaultKind::Persistent, false, 0);
        CHECK(sh.synthesis() == s1);
    }
}
