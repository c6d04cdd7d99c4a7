#include "stars/template_io.hpp"

#include <algorithm>

#include "stars/errors.hpp"

namespace stars {

namespace {

[[noreturn]] void bad(const std::string& msg) { throw Error(ErrorCode::ParseError, msg); }

StateId state_from_json(const json& j, const Mdp& mdp) {
    std::string name;
    if (j.is_string()) {
        name = j.get<std::string>();
    } else if (j.is_array() && j.size() == 2 && j[0].is_number_integer() && j[1].is_number_integer()) {
        name = std::to_string(j[0].get<long>()) + "," + std::to_string(j[1].get<long>());
    } else {
        bad("state must be a name or an [x, y] cell");
    }
    auto q = mdp.find_state(name);
    if (!q) bad("unknown state '" + name + "'");
    return *q;
}

std::vector<EdgeId> edges_from_json(const json& j, const Mdp& mdp) {
    if (!j.is_array()) bad("edge list must be an array");
    std::vector<EdgeId> out;
    for (const auto& e : j) out.push_back(edge_from_json(e, mdp));
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

ordered_json edges_to_json(const std::vector<EdgeId>& edges, const Mdp& mdp) {
    ordered_json a = ordered_json::array();
    for (EdgeId e : edges) a.push_back(edge_to_json(e, mdp));
    return a;
}

} // namespace

ordered_json edge_to_json(EdgeId e, const Mdp& mdp) {
    return ordered_json::array({mdp.state_name(mdp.edge_source(e)), mdp.action_name(e)});
}

EdgeId edge_from_json(const json& j, const Mdp& mdp) {
    if (!j.is_array() || j.size() != 2 || !j[1].is_string()) bad("edge must be [state, action]");
    StateId q = state_from_json(j[0], mdp);
    auto a = mdp.find_action(q, j[1].get<std::string>());
    if (!a) bad("unknown action '" + j[1].get<std::string>() + "' at '" + mdp.state_name(q) + "'");
    return mdp.edge_id(q, *a);
}

std::vector<StateId> states_from_json(const json& j, const Mdp& mdp) {
    if (!j.is_array()) bad("state list must be an array");
    std::vector<StateId> out;
    for (const auto& s : j) out.push_back(state_from_json(s, mdp));
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

ordered_json template_to_json(const StrategyTemplate& t, const Mdp& mdp) {
    ordered_json j;
    j["unsafe"] = edges_to_json(t.unsafe, mdp);
    j["colive"] = edges_to_json(t.colive, mdp);
    ordered_json groups = ordered_json::array();
    for (const auto& h : t.live_groups) groups.push_back(edges_to_json(h, mdp));
    j["live_groups"] = std::move(groups);
    ordered_json region = ordered_json::array();
    for (StateId q : t.winning_region) region.push_back(mdp.state_name(q));
    j["winning_region"] = std::move(region);
    return j;
}

StrategyTemplate template_from_json(const json& j, const Mdp& mdp) {
    if (!j.is_object()) bad("template must be an object");
    StrategyTemplate t;
    auto get = [&](const char* key) -> const json& {
        auto it = j.find(key);
        if (it == j.end()) bad(std::string("template lacks '") + key + "'");
        return *it;
    };
    t.unsafe = edges_from_json(get("unsafe"), mdp);
    t.colive = edges_from_json(get("colive"), mdp);
    const json& groups = get("live_groups");
    if (!groups.is_array()) bad("live_groups must be an array");
    for (const auto& h : groups) t.live_groups.push_back(edges_from_json(h, mdp));
    t.winning_region = states_from_json(get("winning_region"), mdp);
    return t;
}

ordered_json objective_to_json(const ParityObjective& obj, const Mdp& mdp) {
    ordered_json j;
    if (obj.is_buchi()) {
        ordered_json names = ordered_json::array();
        for (StateId q : obj.states_with_color(2)) names.push_back(mdp.state_name(q));
        j["buchi"] = std::move(names);
        return j;
    }
    ordered_json colors = ordered_json::object();
    for (StateId q = 0; q < obj.coloring.size(); ++q) colors[mdp.state_name(q)] = obj.coloring[q];
    j["coloring"] = std::move(colors);
    return j;
}

ParityObjective objective_from_json(const json& j, const Mdp& mdp) {
    if (j.is_object() && j.contains("buchi")) {
        auto states = states_from_json(j["buchi"], mdp);
        return make_buchi_objective(mdp, states);
    }
    if (j.is_object() && j.contains("coloring")) {
        const json& c = j["coloring"];
        if (!c.is_object()) bad("coloring must map state names to colors");
        std::vector<int> colors(mdp.num_states(), -1);
        for (const auto& [name, v] : c.items()) {
            auto q = mdp.find_state(name);
            if (!q) bad("unknown state '" + name + "' in coloring");
            if (!v.is_number_integer()) bad("colors must be integers");
            colors[*q] = v.get<int>();
        }
        if (std::find(colors.begin(), colors.end(), -1) != colors.end()) bad("coloring misses some state");
        return make_parity_objective(mdp.num_states(), std::move(colors));
    }
    bad("objective must have 'buchi' or 'coloring'");
}

ordered_json synthesis_to_json(const Synthesis& s, const Mdp& mdp) {
    ordered_json j = template_to_json(s.strategy, mdp);
    j["mode"] = to_string(s.mode);
    ordered_json objs = ordered_json::array();
    for (const auto& o : s.objectives) objs.push_back(objective_to_json(o, mdp));
    j["objectives"] = std::move(objs);
    j["disabled"] = edges_to_json(s.disabled, mdp);
    return j;
}

Synthesis synthesis_from_json(const json& j, const Mdp& mdp) {
    Synthesis s;
    s.strategy = template_from_json(j, mdp);
    if (j.contains("mode")) s.mode = parse_mode(j["mode"].get<std::string>());
    if (j.contains("objectives")) {
        if (!j["objectives"].is_array()) bad("objectives must be an array");
        for (const auto& o : j["objectives"]) s.objectives.push_back(objective_from_json(o, mdp));
    }
    if (j.contains("disabled")) s.disabled = edges_from_json(j["disabled"], mdp);
    return s;
}

Synthesis load_synthesis(const std::filesystem::path& path, const Mdp& mdp) {
    return synthesis_from_json(read_json_file(path), mdp);
}

void save_synthesis(const Synthesis& s, const Mdp& mdp, const std::filesystem::path& path) {
    write_text_file(path, synthesis_to_json(s, mdp).dump(1) + "\n");
}

} // namespace stars
