#include <doctest.h>

#include <random>
#include <set>

#include "stars/oracle.hpp"
#include "stars/rng.hpp"
#include "stars/template.hpp"
#include "stars/template_io.hpp"
#include "test_util.hpp"

using namespace stars;
using namespace stars::testing;

namespace {

std::set<EdgeId> group_union(const StrategyTemplate& t) {
    std::set<EdgeId> s;
    for (const auto& h : t.live_groups) s.insert(h.begin(), h.end());
    return s;
}

/// 3x3 deterministic grid, states row-major, moves up/down/left/right where legal.
Mdp grid3() {
    MdpBuilder b;
    for (int i = 0; i < 9; ++i) b.add_state("c" + std::to_string(i));
    const int dx[] = {0, 0, -1, 1}, dy[] = {-1, 1, 0, 0};
    const char* names[] = {"up", "down", "left", "right"};
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x)
            for (int d = 0; d < 4; ++d) {
                const int nx = x + dx[d], ny = y + dy[d];
                if (nx < 0 || ny < 0 || nx > 2 || ny > 2) continue;
                const StateId q = static_cast<StateId>(y * 3 + x);
                b.add_transition(q, b.add_action(q, names[d]), static_cast<StateId>(ny * 3 + nx), 1.0);
            }
    return b.build();
}

/// Ring of four states with actions "next" (to q+1) and "stay" (self loop).
Mdp ring4() {
    return build_mdp(4, {{0, "next", 1, 1.0}, {0, "stay", 0, 1.0}, {1, "next", 2, 1.0}, {1, "stay", 1, 1.0},
                         {2, "next", 3, 1.0}, {2, "stay", 2, 1.0}, {3, "next", 0, 1.0}, {3, "stay", 3, 1.0}});
}

void expect_ok(const oracle::TemplateCheck& c, const std::string& where) {
    CHECK_MESSAGE(c.region_matches, where << ": " << c.detail);
    CHECK_MESSAGE(c.closed, where << ": " << c.detail);
    CHECK_MESSAGE(c.sound, where << ": " << c.detail);
    CHECK_MESSAGE(c.realizable, where << ": " << c.detail);
}

} // namespace

TEST_CASE("reach template on a forced chain") {
    Mdp m = build_mdp(3, {{0, "stay", 0, 1.0}, {1, "go", 0, 1.0}, {2, "go", 1, 1.0}});
    GameGraph g(m, Mode::Sure);
    auto t = reach_template(g, std::vector<StateId>{0});
    REQUIRE(t.live_groups.size() == 2);
    CHECK(t.live_groups[0] == std::vector<EdgeId>{m.edge_id(1, 0)});
    CHECK(t.live_groups[1] == std::vector<EdgeId>{m.edge_id(2, 0)});
    CHECK(t.unsafe.empty());
    CHECK(t.colive.empty());
    CHECK(t.winning_region == std::vector<StateId>{0, 1, 2});

    auto all = reach_template(g, std::vector<StateId>{0, 1, 2});
    CHECK(all.live_groups.empty());
}

TEST_CASE("reach template on a 3x3 grid: every follower reaches the centre") {
    Mdp m = grid3();
    GameGraph g(m, Mode::Sure);
    auto t = reach_template(g, std::vector<StateId>{4});
    CHECK(t.winning_region.size() == 9);
    CHECK(t.live_groups.size() == 2);
    // A lasso following the template must run through the centre, which is
    // exactly Büchi over {centre} for memoryless plays.
    expect_ok(oracle::check_template(m, Mode::Sure, make_buchi_objective(m, std::vector<StateId>{4}), t), "grid3");
}

TEST_CASE("Büchi template basics") {
    SUBCASE("single self-loop target") {
        Mdp m = build_mdp(1, {{0, "stay", 0, 1.0}});
        GameGraph g(m, Mode::Sure);
        auto t = buchi_template(g, std::vector<StateId>{0});
        CHECK(t.winning_region == std::vector<StateId>{0});
        CHECK(t.live_groups.empty());
        CHECK(t.unsafe.empty());
        CHECK(t.colive.empty());
    }
    SUBCASE("edge into a sink leaves the region and is unsafe") {
        Mdp m = build_mdp(2, {{0, "stay", 0, 1.0}, {0, "drop", 1, 1.0}, {1, "stay", 1, 1.0}});
        GameGraph g(m, Mode::Sure);
        auto t = buchi_template(g, std::vector<StateId>{0});
        CHECK(t.winning_region == std::vector<StateId>{0});
        CHECK(t.unsafe == std::vector<EdgeId>{m.edge_id(0, 1)});
    }
    SUBCASE("errors") {
        Mdp m = build_mdp(2, {{0, "stay", 0, 1.0}, {1, "go", 0, 1.0}});
        GameGraph g(m, Mode::Sure);
        CHECK_THROWS_CODE(buchi_template(g, std::vector<StateId>{}), ErrorCode::EmptyTarget);
        Mdp trap = build_mdp(2, {{0, "go", 1, 1.0}, {1, "stay", 1, 1.0}});
        CHECK_THROWS_CODE(buchi_template(GameGraph(trap, Mode::Sure), std::vector<StateId>{0}),
                          ErrorCode::EmptyWinningRegion);
    }
}

TEST_CASE("oracle: Büchi templates on random graphs up to eight states") {
    std::mt19937_64 rng(41);
    for (int it = 0; it < 150; ++it) {
        Mdp m = oracle::random_small_mdp(rng, 8);
        auto obj = oracle::random_buchi(rng, m.num_states());
        for (Mode mode : {Mode::Sure, Mode::AlmostSure}) {
            GameGraph g(m, mode);
            if (winning_region(g, obj).empty()) {
                CHECK_THROWS_CODE(buchi_template(g, obj.states_with_color(2)), ErrorCode::EmptyWinningRegion);
                continue;
            }
            auto t = buchi_template(g, obj.states_with_color(2));
            CHECK(t.colive.empty());
            expect_ok(oracle::check_template(m, mode, obj, t), "buchi it=" + std::to_string(it));
        }
    }
}

TEST_CASE("oracle: parity templates on random graphs") {
    std::mt19937_64 rng(43);
    for (int it = 0; it < 300; ++it) {
        Mdp m = oracle::random_small_mdp(rng, 6);
        auto obj = oracle::random_coloring(rng, m.num_states(), 1 + static_cast<int>(it % 4));
        for (Mode mode : {Mode::Sure, Mode::AlmostSure}) {
            GameGraph g(m, mode);
            if (winning_region(g, obj).empty()) {
                CHECK_THROWS_CODE(parity_template(g, obj), ErrorCode::EmptyWinningRegion);
                continue;
            }
            auto t = parity_template(g, obj);
            expect_ok(oracle::check_template(m, mode, obj, t),
                      "parity it=" + std::to_string(it) + " mode=" + to_string(mode));
            CHECK(check_conflict_free(g, t).empty());
            CHECK(overlapping_edges(t).empty());
        }
    }
}

TEST_CASE("parity on a Büchi coloring equals the Büchi template") {
    std::mt19937_64 rng(47);
    for (int it = 0; it < 200; ++it) {
        Mdp m = oracle::random_small_mdp(rng, 6);
        auto obj = oracle::random_buchi(rng, m.num_states());
        for (Mode mode : {Mode::Sure, Mode::AlmostSure}) {
            GameGraph g(m, mode);
            if (winning_region(g, obj).empty()) continue;
            auto b = buchi_template(g, obj.states_with_color(2));
            auto p = parity_template_general(g, obj);
            CHECK(b.winning_region == p.winning_region);
            CHECK(b.unsafe == p.unsafe);
            CHECK(b.colive == p.colive);
            CHECK(group_union(b) == group_union(p));
        }
    }
}

TEST_CASE("all colors zero give the empty template") {
    Mdp m = ring4();
    GameGraph g(m, Mode::Sure);
    auto t = parity_template(g, trivial_objective(m.num_states()));
    CHECK(t == empty_template(g));
    CHECK(t.winning_region.size() == 4);
    CHECK(t.unsafe.empty());
    CHECK(t.colive.empty());
    CHECK(t.live_groups.empty());
}

TEST_CASE("odd top color yields co-live edges") {
    // q0 (color 1) chooses between q1 (color 2) and q2 (color 3); both return.
    Mdp m = build_mdp(3, {{0, "even", 1, 1.0}, {0, "odd", 2, 1.0}, {1, "back", 0, 1.0}, {2, "back", 0, 1.0}});
    GameGraph g(m, Mode::Sure);
    auto obj = make_parity_objective(3, {1, 2, 3});
    auto t = parity_template(g, obj);
    CHECK(t.winning_region == std::vector<StateId>{0, 1, 2});
    CHECK(t.colive == std::vector<EdgeId>{m.edge_id(0, 1)});
    CHECK(t.unsafe.empty());
    expect_ok(oracle::check_template(m, Mode::Sure, obj, t), "odd");
}

TEST_CASE("composition") {
    Mdp m = ring4();
    GameGraph g(m, Mode::Sure);
    auto o1 = make_buchi_objective(m, std::vector<StateId>{0});
    auto o2 = make_buchi_objective(m, std::vector<StateId>{2});

    SUBCASE("one objective is the identity") {
        auto s = synthesize(g, {o1});
        CHECK(s.strategy == buchi_template(g, std::vector<StateId>{0}));
        std::vector<Synthesis> parts{s};
        CHECK(compose_templates(g, parts).strategy == s.strategy);
    }
    SUBCASE("composing with the trivial objective keeps the template") {
        auto s = synthesize(g, {o1});
        auto e = synthesize(g, {trivial_objective(4)});
        std::vector<Synthesis> parts{s, e};
        auto c = compose_templates(g, parts);
        CHECK(c.strategy.unsafe == s.strategy.unsafe);
        CHECK(c.strategy.colive == s.strategy.colive);
        CHECK(group_union(c.strategy) == group_union(s.strategy));
        CHECK(c.strategy.winning_region == s.strategy.winning_region);
    }
    SUBCASE("two targets: followers visit both") {
        std::vector<Synthesis> parts{synthesize(g, {o1}), synthesize(g, {o2})};
        auto c = compose_templates(g, parts);
        CHECK(c.objectives.size() == 2);
        CHECK(c.strategy.live_groups.size() ==
              parts[0].strategy.live_groups.size() + parts[1].strategy.live_groups.size());
        for (const auto& o : {o1, o2}) {
            auto chk = oracle::check_template(m, Mode::Sure, o, c.strategy, {}, false);
            CHECK_MESSAGE(chk.sound, chk.detail);
            CHECK(chk.closed);
        }
    }
    SUBCASE("disjoint regions cannot be combined") {
        Mdp two = build_mdp(2, {{0, "stay", 0, 1.0}, {1, "stay", 1, 1.0}});
        GameGraph g2(two, Mode::Sure);
        try {
            synthesize(g2, {make_buchi_objective(two, std::vector<StateId>{0}),
                            make_buchi_objective(two, std::vector<StateId>{1})});
            FAIL("expected a conflict");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::ConflictUnresolvable);
            CHECK(std::string(e.what()).find("objective 0 and objective 1") != std::string::npos);
        }
    }
}

TEST_CASE("property: composed templates are conflict-free and sound per objective") {
    std::mt19937_64 rng(53);
    int composed = 0;
    for (int it = 0; it < 300; ++it) {
        Mdp m = oracle::random_small_mdp(rng, 6);
        std::vector<ParityObjective> objs{oracle::random_buchi(rng, m.num_states()),
                                          oracle::random_coloring(rng, m.num_states(), 2)};
        for (Mode mode : {Mode::Sure, Mode::AlmostSure}) {
            GameGraph g(m, mode);
            Synthesis s;
            try {
                s = synthesize(g, objs);
            } catch (const Error& e) {
                CHECK((e.code() == ErrorCode::ConflictUnresolvable || e.code() == ErrorCode::EmptyWinningRegion));
                continue;
            }
            ++composed;
            CHECK(check_conflict_free(g, s.strategy).empty());
            for (const auto& o : objs) {
                auto chk = oracle::check_template(m, mode, o, s.strategy, {}, false);
                CHECK_MESSAGE(chk.closed, chk.detail);
                CHECK_MESSAGE(chk.sound, "it=" << it << " " << chk.detail);
            }
            // The composed region never exceeds any single objective's region.
            for (const auto& o : objs) {
                auto w = winning_region(g, o);
                CHECK(std::includes(w.begin(), w.end(), s.strategy.winning_region.begin(),
                                    s.strategy.winning_region.end()));
            }
        }
    }
    CHECK(composed > 100);
}

TEST_CASE("faults") {
    Mdp m = ring4();
    GameGraph g(m, Mode::Sure);
    auto s = synthesize(g, {make_buchi_objective(m, std::vector<StateId>{0})});

    SUBCASE("occasional faults leave the template alone") {
        auto r = apply_fault(g, s, m.edge_id(1, 0), FaultKind::Occasional);
        REQUIRE(std::holds_alternative<RuntimeMask>(r));
        CHECK(std::get<RuntimeMask>(r).edges == std::vector<EdgeId>{m.edge_id(1, 0)});
    }
    SUBCASE("persistent fault matches fresh synthesis without the edge") {
        const EdgeId e = m.edge_id(1, 0);
        auto r = apply_fault(g, s, e, FaultKind::Persistent);
        REQUIRE(std::holds_alternative<Synthesis>(r));
        const auto& t = std::get<Synthesis>(r);
        CHECK(t.disabled == std::vector<EdgeId>{e});
        CHECK(t == synthesize(g, s.objectives, {e}));
        // Without q1 -> q2 nobody in {q1} can reach q0 any more.
        CHECK_FALSE(t.strategy.in_region(1));
    }
    SUBCASE("fault on an unsafe edge is idempotent") {
        Mdp d = build_mdp(2, {{0, "stay", 0, 1.0}, {0, "drop", 1, 1.0}, {1, "stay", 1, 1.0}});
        GameGraph gd(d, Mode::Sure);
        auto sd = synthesize(gd, {make_buchi_objective(d, std::vector<StateId>{0})});
        REQUIRE(sd.strategy.is_unsafe(d.edge_id(0, 1)));
        auto r = apply_fault(gd, sd, d.edge_id(0, 1), FaultKind::Persistent);
        CHECK(std::get<Synthesis>(r) == sd);
    }
    SUBCASE("a state losing its only action is a conflict") {
        Mdp c = cycle_mdp(3);
        GameGraph gc(c, Mode::Sure);
        auto sc = synthesize(gc, {make_buchi_objective(c, std::vector<StateId>{0})});
        CHECK_THROWS_CODE(apply_fault(gc, sc, c.edge_id(1, 0), FaultKind::Persistent), ErrorCode::ConflictUnresolvable);
    }
    SUBCASE("persistent fault on a co-live state's only other action re-synthesizes") {
        // q1 may return to q0 or detour through q2 (color 3); q3 is a second
        // even loop for q0.
        Mdp p = build_mdp(4, {{0, "stay", 0, 1.0}, {0, "go", 1, 1.0}, {0, "side", 3, 1.0}, {1, "back", 0, 1.0},
                              {1, "alt", 2, 1.0}, {2, "back", 0, 1.0}, {3, "back", 0, 1.0}});
        GameGraph gp(p, Mode::Sure);
        auto sp = synthesize(gp, {make_parity_objective(4, {1, 2, 3, 2})});
        REQUIRE(sp.strategy.is_colive(p.edge_id(1, 1)));
        auto r = apply_fault(gp, sp, p.edge_id(1, 0), FaultKind::Persistent);
        REQUIRE(std::holds_alternative<Synthesis>(r));
        const auto& t = std::get<Synthesis>(r);
        CHECK(t == synthesize(gp, sp.objectives, {p.edge_id(1, 0)}));
        CHECK(check_conflict_free(gp, t.strategy).empty());
        auto chk = oracle::check_template(p, Mode::Sure, sp.objectives[0], t.strategy, t.disabled);
        CHECK_MESSAGE(chk.ok(), chk.detail);
    }
}

TEST_CASE("conflict-freeness checker") {
    Mdp m = ring4();
    GameGraph g(m, Mode::Sure);
    CHECK(check_conflict_free(g, buchi_template(g, std::vector<StateId>{0})).empty());

    StrategyTemplate t = empty_template(g);
    t.unsafe = {m.edge_id(2, 0), m.edge_id(2, 1)};
    auto v = check_conflict_free(g, t);
    REQUIRE(v.size() == 1);
    CHECK(v[0].kind == Violation::Kind::StateWithoutAction);
    CHECK(v[0].state == 2);

    StrategyTemplate h = empty_template(g);
    h.live_groups = {{m.edge_id(1, 0)}};
    h.colive = {m.edge_id(1, 0)};
    auto w = check_conflict_free(g, h);
    REQUIRE(w.size() == 1);
    CHECK(w[0].kind == Violation::Kind::GroupWithoutAction);
    CHECK(w[0].group == 0);
    CHECK(overlapping_edges(h) == std::vector<EdgeId>{m.edge_id(1, 0)});
}

TEST_CASE("follows_template recount") {
    Mdp m = build_mdp(2, {{0, "stay", 0, 1.0}, {0, "drop", 1, 1.0}, {1, "stay", 1, 1.0}});
    GameGraph g(m, Mode::Sure);
    StrategyTemplate t = empty_template(g);
    t.unsafe = {m.edge_id(0, 1)};
    t.colive = {m.edge_id(0, 0)};
    t.live_groups = {{m.edge_id(1, 0)}};

    std::vector<EdgeId> none;
    auto v0 = follows_template(g, none, t);
    CHECK(v0.safety_ok);
    CHECK(v0.colive_counts == std::vector<std::uint64_t>{0});

    std::vector<EdgeId> run{m.edge_id(0, 0), m.edge_id(0, 0), m.edge_id(0, 1), m.edge_id(1, 0)};
    auto v = follows_template(g, run, t);
    CHECK_FALSE(v.safety_ok);
    CHECK(v.unsafe_uses == 1);
    CHECK(v.colive_counts == std::vector<std::uint64_t>{2});
    CHECK(v.live_debts == std::vector<std::uint64_t>{0});
}

TEST_CASE("template JSON round trip") {
    std::mt19937_64 rng(59);
    for (int it = 0; it < 50; ++it) {
        Mdp m = oracle::random_small_mdp(rng, 6);
        auto obj = oracle::random_coloring(rng, m.num_states(), 3);
        GameGraph g(m, Mode::AlmostSure);
        if (winning_region(g, obj).empty()) continue;
        auto s = synthesize(g, {obj});
        auto back = synthesis_from_json(json::parse(synthesis_to_json(s, m).dump()), m);
        CHECK(back == s);
        CHECK(template_from_json(json::parse(template_to_json(s.strategy, m).dump()), m) == s.strategy);
    }
}

TEST_CASE("oracle sanity: mutated templates are caught") {
    std::mt19937_64 rng(61);
    int dropped_groups = 0, dropped_unsafe = 0, dropped_colive = 0;
    for (int it = 0; it < 300; ++it) {
        Mdp m = oracle::random_small_mdp(rng, 6);
        auto obj = oracle::random_coloring(rng, m.num_states(), 3);
        for (Mode mode : {Mode::Sure, Mode::AlmostSure}) {
            GameGraph g(m, mode);
            if (winning_region(g, obj).empty()) continue;
            auto t = parity_template(g, obj);
            if (!t.live_groups.empty()) {
                auto u = t;
                u.live_groups.clear();
                if (!oracle::check_template(m, mode, obj, u).sound) ++dropped_groups;
            }
            if (!t.unsafe.empty()) {
                auto u = t;
                u.unsafe.clear();
                auto c = oracle::check_template(m, mode, obj, u);
                CHECK_FALSE(c.closed);
                ++dropped_unsafe;
            }
            if (!t.colive.empty()) {
                auto u = t;
                u.colive.clear();
                if (!oracle::check_template(m, mode, obj, u).sound) ++dropped_colive;
            }
        }
    }
    CHECK(dropped_groups > 20);
    CHECK(dropped_unsafe > 20);
    CHECK(dropped_colive > 5);
    MESSAGE("unsound after dropping groups: " << dropped_groups << ", co-live: " << dropped_colive);
}
