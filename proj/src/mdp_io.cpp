#include "stars/mdp_io.hpp"

#include <fstream>
#include <sstream>

#include "stars/errors.hpp"

namespace stars {

namespace {

[[noreturn]] void bad(const std::string& msg) { throw Error(ErrorCode::InvalidMdp, msg); }

const json& field(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end()) bad(std::string("missing field '") + key + "'");
    return *it;
}

} // namespace

Mdp mdp_from_json(const json& j) {
    if (!j.is_object()) bad("MDP document must be an object");
    const json& states = field(j, "states");
    const json& actions = field(j, "actions");
    const json& trans = field(j, "trans");
    const json& initial = field(j, "initial");
    if (!states.is_array() || !actions.is_object() || !trans.is_object() || !initial.is_string())
        bad("MDP fields have wrong types");

    MdpBuilder b;
    std::unordered_map<std::string, StateId> index;
    for (const auto& s : states) {
        if (!s.is_string()) bad("state names must be strings");
        auto name = s.get<std::string>();
        if (name.find('|') != std::string::npos) bad("state name '" + name + "' contains '|'");
        if (!index.emplace(name, static_cast<StateId>(index.size())).second)
            bad("duplicate state name '" + name + "'");
        b.add_state(name);
    }
    for (const auto& [q, list] : actions.items())
        if (!index.count(q)) bad("actions given for unknown state '" + q + "'");

    std::size_t used_keys = 0;
    for (const auto& s : states) {
        auto qname = s.get<std::string>();
        StateId q = index.at(qname);
        auto it = actions.find(qname);
        if (it == actions.end() || !it->is_array()) bad("no action list for state '" + qname + "'");
        for (const auto& a : *it) {
            if (!a.is_string()) bad("action names must be strings");
            auto aname = a.get<std::string>();
            ActionIndex ai = b.add_action(q, aname);
            auto t = trans.find(qname + "|" + aname);
            if (t == trans.end() || !t->is_array()) bad("no transitions for '" + qname + "|" + aname + "'");
            ++used_keys;
            for (const auto& pair : *t) {
                if (!pair.is_array() || pair.size() != 2 || !pair[0].is_string() || !pair[1].is_number())
                    bad("transition entries must be [\"state\", p]");
                auto target = index.find(pair[0].get<std::string>());
                if (target == index.end()) bad("unknown successor '" + pair[0].get<std::string>() + "'");
                b.add_transition(q, ai, target->second, pair[1].get<double>());
            }
        }
    }
    if (used_keys != trans.size()) bad("transition keys reference unknown state/action pairs");
    auto init = index.find(initial.get<std::string>());
    if (init == index.end()) bad("unknown initial state");
    b.set_initial(init->second);
    return b.build();
}

ordered_json mdp_to_json(const Mdp& m) {
    ordered_json j;
    ordered_json states = ordered_json::array();
    ordered_json actions = ordered_json::object();
    ordered_json trans = ordered_json::object();
    for (StateId q = 0; q < m.num_states(); ++q) {
        states.push_back(m.state_name(q));
        ordered_json names = ordered_json::array();
        for (ActionIndex a = 0; a < m.num_actions(q); ++a) {
            names.push_back(m.action_name(q, a));
            ordered_json succ = ordered_json::array();
            for (const auto& t : m.successors(q, a))
                succ.push_back(ordered_json::array({m.state_name(t.target), t.probability}));
            trans[m.state_name(q) + "|" + m.action_name(q, a)] = std::move(succ);
        }
        actions[m.state_name(q)] = std::move(names);
    }
    j["states"] = std::move(states);
    j["actions"] = std::move(actions);
    j["trans"] = std::move(trans);
    j["initial"] = m.state_name(m.initial());
    return j;
}

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::ParseError, "cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
    }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::ParseError, "cannot write " + path.string());
    out << text;
}

Mdp load_mdp(const std::filesystem::path& path) { return mdp_from_json(read_json_file(path)); }

void save_mdp(const Mdp& m, const std::filesystem::path& path) {
    write_text_file(path, mdp_to_json(m).dump(1) + "\n");
}

} // namespace stars
