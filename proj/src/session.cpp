#include "stars/session.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <sstream>

#include "stars/errors.hpp"

namespace stars {

namespace {

/// Upper limit on one step{n}; keeps a single command from pinning a session for minutes.
constexpr std::uint64_t kMaxStepsPerMessage = 10'000'000;

ordered_json error_reply(ErrorCode code, const std::string& msg) {
    ordered_json j;
    j["type"] = "error";
    j["code"] = std::string(to_string(code));
    j["msg"] = msg;
    return j;
}

const json& field(const json& msg, const char* name) {
    auto it = msg.find(name);
    if (it == msg.end()) throw Error(ErrorCode::ProtocolError, std::string("missing field '") + name + "'");
    return *it;
}

std::vector<char> mask_of(std::size_t n, const std::vector<StateId>& states) {
    std::vector<char> m(n, 0);
    for (StateId q : states) m[q] = 1;
    return m;
}

} // namespace

GridInstance resolve_instance(const json& msg, const std::optional<std::filesystem::path>& instance_dir) {
    if (auto it = msg.find("instance"); it != msg.end()) return instance_from_json(*it);
    if (auto it = msg.find("instance_ref"); it != msg.end()) {
        if (!it->is_string()) throw Error(ErrorCode::ProtocolError, "instance_ref must be a string");
        const std::string ref = it->get<std::string>();
        // Names only: no path separators or parent references.
        if (ref.empty() || ref.find('/') != std::string::npos || ref.find('\\') != std::string::npos ||
            ref.find("..") != std::string::npos)
            throw Error(ErrorCode::ProtocolError, "invalid instance_ref '" + ref + "'");
        if (!instance_dir) throw Error(ErrorCode::ProtocolError, "server has no instance directory");
        auto path = *instance_dir / ref;
        if (path.extension() != ".json") path += ".json";
        if (!std::filesystem::exists(path)) throw Error(ErrorCode::ProtocolError, "unknown instance '" + ref + "'");
        return load_instance(path);
    }
    if (auto it = msg.find("config"); it != msg.end()) {
        const int size = field(*it, "size").get<int>();
        const Category c = parse_category(field(*it, "category").get<std::string>());
        const std::uint64_t seed = it->value("seed", std::uint64_t{1});
        GridInstance inst = generate_instance(size, c, seed);
        inst.slip = it->value("slip", 0.0);
        return inst;
    }
    throw Error(ErrorCode::ProtocolError, "create_session needs instance, instance_ref or config");
}

ShieldedRun::ShieldedRun(const GridInstance& inst, const ShieldParams& params, std::uint64_t seed, double eps_p)
    : prep_(eval::prepare_instance(inst, eps_p)),
      seed_(seed),
      start_(initial_state_from_seed(prep_.synthesis.strategy.winning_region, seed)),
      sim_(prep_.grid.mdp, prep_.policy, Shield(prep_.graph, prep_.synthesis, params), start_, seed, prep_.grid.reward) {
    sim_.set_tracked(mask_of(prep_.grid.mdp->num_states(), prep_.buchi));
    objectives_.push_back({0, prep_.buchi, 0});
}

std::uint64_t ShieldedRun::objective_visits(std::uint64_t id) const {
    for (const auto& o : objectives_)
        if (o.id == id) return o.visits;
    throw Error(ErrorCode::PreconditionViolation, "no objective with id " + std::to_string(id));
}

ordered_json ShieldedRun::handle(const json& msg) {
    try {
        if (!msg.is_object()) throw Error(ErrorCode::ProtocolError, "message must be a JSON object");
        const auto& type = field(msg, "type");
        if (!type.is_string()) throw Error(ErrorCode::ProtocolError, "type must be a string");
        const std::string t = type.get<std::string>();
        if (t == "step") return step(msg);
        if (t == "set_params") return set_params(msg);
        if (t == "add_objective") return add_objective(msg);
        if (t == "remove_objective") return remove_objective(msg);
        if (t == "set_fault") return set_fault(msg);
        if (t == "reset") return reset();
        if (t == "get_snapshot") return snapshot();
        throw Error(ErrorCode::ProtocolError, "unknown message type '" + t + "'");
    } catch (const Error& e) {
        return error_reply(e.code(), e.what());
    } catch (const json::exception& e) {
        return error_reply(ErrorCode::ProtocolError, e.what());
    }
}

ordered_json ShieldedRun::step(const json& msg) {
    const auto& nj = field(msg, "n");
    if (!nj.is_number_unsigned() && !(nj.is_number_integer() && nj.get<std::int64_t>() >= 0))
        throw Error(ErrorCode::ProtocolError, "n must be a nonnegative integer");
    const auto n = nj.get<std::uint64_t>();
    if (n > kMaxStepsPerMessage)
        throw Error(ErrorCode::ProtocolError, "n exceeds " + std::to_string(kMaxStepsPerMessage));
    for (std::uint64_t i = 0; i < n; ++i) {
        const StateId q = sim_.step().state;
        for (auto& o : objectives_)
            if (std::binary_search(o.states.begin(), o.states.end(), q)) ++o.visits;
    }
    return snapshot();
}

ordered_json ShieldedRun::set_params(const json& msg) {
    std::optional<double> g, th;
    if (msg.contains("gamma")) g = msg["gamma"].get<double>();
    if (msg.contains("theta")) th = msg["theta"].get<double>();
    sim_.shield()->set_params(g, th);
    return snapshot();
}

StateId ShieldedRun::state_of(const json& cell) const {
    if (!cell.is_array() || cell.size() != 2)
        throw Error(ErrorCode::ProtocolError, "cells are [x, y] pairs");
    const Cell c{cell[0].get<int>(), cell[1].get<int>()};
    auto q = prep_.grid.state_at(c, prep_.instance.size);
    if (!q) throw Error(ErrorCode::ProtocolError, "cell " + cell_name(c) + " is a wall or off the grid");
    return *q;
}

ordered_json ShieldedRun::add_objective(const json& msg) {
    const auto& cells = field(msg, "buchi");
    if (!cells.is_array() || cells.empty()) throw Error(ErrorCode::ProtocolError, "buchi must be a nonempty cell list");
    std::vector<StateId> states;
    for (const auto& c : cells) states.push_back(state_of(c));
    std::sort(states.begin(), states.end());
    states.erase(std::unique(states.begin(), states.end()), states.end());
    Shield& sh = *sim_.shield();
    const auto& mdp = *prep_.grid.mdp;
    // Synthesized against the current faults so composition sees the same graph.
    Synthesis extra = synthesize(*prep_.graph, {make_buchi_objective(mdp, states)}, sh.synthesis().disabled);
    sh.add_objective(extra, sim_.state());
    objectives_.push_back({next_objective_id_++, std::move(states), 0});
    return snapshot();
}

ordered_json ShieldedRun::remove_objective(const json& msg) {
    const auto id = field(msg, "id").get<std::uint64_t>();
    auto it = std::find_if(objectives_.begin(), objectives_.end(), [&](const Objective& o) { return o.id == id; });
    if (it == objectives_.end()) throw Error(ErrorCode::ProtocolError, "no objective with id " + std::to_string(id));
    if (objectives_.size() == 1) throw Error(ErrorCode::PreconditionViolation, "cannot remove the last objective");
    sim_.shield()->remove_objective(static_cast<std::size_t>(it - objectives_.begin()), sim_.state());
    objectives_.erase(it);
    return snapshot();
}

ordered_json ShieldedRun::set_fault(const json& msg) {
    const StateId q = state_of(field(msg, "state"));
    const std::string action = field(msg, "action").get<std::string>();
    const auto& mdp = *prep_.grid.mdp;
    std::optional<ActionIndex> a;
    for (ActionIndex i = 0; i < mdp.num_actions(q); ++i)
        if (mdp.action_name(q, i) == action) a = i;
    if (!a) throw Error(ErrorCode::ProtocolError, "state " + mdp.state_name(q) + " has no action '" + action + "'");
    const FaultKind kind = parse_fault_kind(field(msg, "kind").get<std::string>());
    const bool active = msg.value("active", true);
    sim_.shield()->set_fault(mdp.edge_id(q, *a), kind, active, sim_.state());
    return snapshot();
}

ordered_json ShieldedRun::reset() {
    start_ = initial_state_from_seed(sim_.shield()->strategy().winning_region, seed_);
    sim_.reset(start_, seed_);
    for (auto& o : objectives_) o.visits = 0;
    return snapshot();
}

ordered_json ShieldedRun::cell_json(StateId q) const {
    const Cell c = prep_.grid.cell_of_state[q];
    return ordered_json::array({c.x, c.y});
}

ordered_json ShieldedRun::edge_json(EdgeId e) const {
    const auto& mdp = *prep_.grid.mdp;
    const Cell c = prep_.grid.cell_of_state[mdp.edge_source(e)];
    return ordered_json::array({c.x, c.y, mdp.action_name(e)});
}

ordered_json ShieldedRun::snapshot() const {
    const auto& inst = prep_.instance;
    const Shield& sh = *sim_.shield();
    const auto& st = sim_.stats();
    ordered_json j;
    j["type"] = "snapshot";
    j["seed"] = seed_;
    j["step"] = st.steps;
    j["agent"] = cell_json(sim_.state());

    ordered_json grid = instance_to_json(inst);
    grid["instance_id"] = prep_.id;
    j["grid"] = std::move(grid);

    // Rows are y, columns x; walls stay at zero.
    ordered_json heat = ordered_json::array();
    for (int y = 0; y < inst.size; ++y) {
        ordered_json row = ordered_json::array();
        for (int x = 0; x < inst.size; ++x) {
            auto q = prep_.grid.state_at({x, y}, inst.size);
            row.push_back(q ? st.heatmap[*q] : 0);
        }
        heat.push_back(std::move(row));
    }
    j["heatmap"] = std::move(heat);

    j["params"] = {{"gamma", sh.params().gamma}, {"theta", sh.params().theta}};

    const auto& t = sh.strategy();
    ordered_json colive = ordered_json::array();
    for (std::size_t i = 0; i < t.colive.size(); ++i)
        if (sh.colive_counters()[i] != 0) {
            auto e = edge_json(t.colive[i]);
            e.push_back(sh.colive_counters()[i]);
            colive.push_back(std::move(e));
        }
    j["counters"] = {{"colive", std::move(colive)}, {"live", sh.live_counters()}};

    ordered_json metrics;
    if (st.steps == 0) {
        metrics["buchi_freq"] = nullptr;
        metrics["avg_reward"] = nullptr;
        metrics["reward_gap"] = nullptr;
    } else {
        metrics["buchi_freq"] = st.tracked_frequency();
        metrics["avg_reward"] = st.average_reward();
        metrics["reward_gap"] = prep_.max_avg_reward - st.average_reward();
    }
    metrics["max_avg_reward"] = prep_.max_avg_reward;
    j["metrics"] = std::move(metrics);

    ordered_json objectives = ordered_json::array();
    for (const auto& o : objectives_) {
        ordered_json cells = ordered_json::array();
        for (StateId q : o.states) cells.push_back(cell_json(q));
        objectives.push_back({{"id", o.id}, {"buchi", std::move(cells)}, {"visits", o.visits}});
    }
    j["objectives"] = std::move(objectives);

    auto edges = [&](const std::vector<EdgeId>& es) {
        ordered_json a = ordered_json::array();
        for (EdgeId e : es) a.push_back(edge_json(e));
        return a;
    };
    ordered_json live = ordered_json::array();
    for (const auto& g : t.live_groups) live.push_back(edges(g));
    j["template"] = {{"region_size", t.winning_region.size()},
                     {"unsafe", edges(t.unsafe)},
                     {"colive", edges(t.colive)},
                     {"live", std::move(live)}};
    j["faults"] = {{"masked", edges(sh.mask())}, {"disabled", edges(sh.synthesis().disabled)}};
    return j;
}

eval::MetricsRecord ShieldedRun::metrics() const {
    eval::MetricsRecord r;
    r.instance_id = prep_.id;
    r.category = to_string(prep_.instance.category);
    r.size = prep_.instance.size;
    r.gamma = sim_.shield()->params().gamma;
    r.theta = sim_.shield()->params().theta;
    const auto& st = sim_.stats();
    r.steps = st.steps;
    r.seed = seed_;
    r.max_avg_reward = prep_.max_avg_reward;
    if (st.steps > 0) {
        r.buchi_freq = st.tracked_frequency();
        r.avg_reward = st.average_reward();
        r.reward_gap = r.max_avg_reward - r.avg_reward;
        r.mean_tv = st.mean_tv();
    }
    r.unsafe_samples = st.unsafe_samples;
    r.max_live_counter = st.max_live_counter;
    return r;
}

std::string session_metrics_row(const std::string& session_id, const eval::MetricsRecord& r) {
    return session_id + ',' + eval::to_csv_row(r);
}

std::vector<SessionMetricsRow> read_session_metrics_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != kSessionMetricsHeader)
        throw Error(ErrorCode::ParseError, "session metrics CSV header missing or wrong");
    std::vector<std::string> ids;
    std::ostringstream rest;
    rest << eval::kMetricsHeader << '\n';
    while (std::getline(in, line)) {
        const auto comma = line.find(',');
        if (comma == std::string::npos || comma == 0) throw Error(ErrorCode::ParseError, "row without session id");
        ids.push_back(line.substr(0, comma));
        rest << line.substr(comma + 1) << '\n';
    }
    std::istringstream body(rest.str());
    auto records = eval::read_metrics_csv(body);
    std::vector<SessionMetricsRow> out;
    for (std::size_t i = 0; i < records.size(); ++i) out.push_back({ids[i], std::move(records[i])});
    return out;
}

ReplayResult replay_script(std::istream& script, const std::optional<GridInstance>& instance,
                           const std::optional<std::filesystem::path>& instance_dir, std::ostream* trace,
                           std::ostream* replies) {
    ReplayResult res;
    std::unique_ptr<ShieldedRun> run;
    std::string line;
    std::size_t lineno = 0;
    auto make_run = [&](const json& create) {
        ShieldParams p;
        p.gamma = create.value("gamma", p.gamma);
        p.theta = create.value("theta", p.theta);
        const auto seed = create.value("seed", std::uint64_t{1});
        GridInstance inst = instance ? *instance : resolve_instance(create, instance_dir);
        run = std::make_unique<ShieldedRun>(inst, p, seed);
        run->set_trace(trace);
        if (replies) {
            ordered_json r{{"type", "session_created"}, {"id", "replay"}, {"seed", seed}};
            *replies << r.dump() << '\n';
        }
    };
    while (std::getline(script, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json msg;
        try {
            msg = json::parse(line);
        } catch (const json::exception& e) {
            throw Error(ErrorCode::ParseError, "script line " + std::to_string(lineno) + ": " + e.what());
        }
        ++res.messages;
        if (msg.is_object() && msg.value("type", "") == "create_session") {
            if (run) throw Error(ErrorCode::ParseError, "script line " + std::to_string(lineno) + ": second create_session");
            make_run(msg);
            continue;
        }
        if (!run) {
            if (!instance)
                throw Error(ErrorCode::ParseError, "script must start with create_session when no instance is given");
            make_run(json::object());
        }
        auto reply = run->handle(msg);
        if (reply["type"] == "error") ++res.errors;
        if (replies) *replies << reply.dump() << '\n';
    }
    return res;
}

} // namespace stars
