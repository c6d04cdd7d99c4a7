#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <pthread.h>
#include <thread>

#include "stars/eval.hpp"
#include "stars/factorybot.hpp"
#include "stars/mdp_io.hpp"
#include "stars/oracle.hpp"
#include "stars/server.hpp"
#include "stars/session.hpp"
#include "stars/simulation.hpp"
#include "stars/template_io.hpp"

using namespace stars;
namespace fs = std::filesystem;

namespace {

Mode parse_mode(const std::string& s) {
    if (s == "sure") return Mode::Sure;
    if (s == "almost-sure" || s == "almost_sure") return Mode::AlmostSure;
    throw Error(ErrorCode::PreconditionViolation, "mode must be sure or almost-sure");
}

/// "buchi:file" (state names or [x, y] cells, bare or under "buchi") or
/// "parity:file" ({"coloring": {...}}).
ParityObjective parse_objective(const std::string& spec, const Mdp& mdp) {
    const auto colon = spec.find(':');
    if (colon == std::string::npos) throw Error(ErrorCode::PreconditionViolation, "objective must be kind:file");
    const std::string kind = spec.substr(0, colon);
    const json j = read_json_file(spec.substr(colon + 1));
    if (kind == "buchi") {
        const json& cells = j.is_object() ? j.at("buchi") : j;
        return make_buchi_objective(mdp, states_from_json(cells, mdp));
    }
    if (kind == "parity") return objective_from_json(j, mdp);
    throw Error(ErrorCode::PreconditionViolation, "objective kind must be buchi or parity");
}

std::pair<int, int> parse_range(const std::string& s) {
    const auto dots = s.find("..");
    if (dots == std::string::npos) {
        const int v = std::stoi(s);
        return {v, v};
    }
    return {std::stoi(s.substr(0, dots)), std::stoi(s.substr(dots + 2))};
}

std::unique_ptr<std::ofstream> open_out(const std::string& path) {
    if (path.empty()) return nullptr;
    auto f = std::make_unique<std::ofstream>(path);
    if (!*f) throw Error(ErrorCode::ParseError, "cannot write " + path);
    return f;
}

int cmd_synth(const std::string& mdp_path, const std::vector<std::string>& objectives, const std::string& mode,
              const std::string& out, const std::string& compose) {
    const Mdp mdp = load_mdp(mdp_path);
    const GameGraph g(mdp, parse_mode(mode));
    std::vector<ParityObjective> objs;
    for (const auto& o : objectives) objs.push_back(parse_objective(o, mdp));
    Synthesis s = synthesize(g, std::move(objs));
    if (!compose.empty()) {
        std::vector<Synthesis> parts{std::move(s), load_synthesis(compose, mdp)};
        s = compose_templates(g, parts);
    }
    const std::string text = synthesis_to_json(s, mdp).dump(2) + "\n";
    if (out.empty())
        std::cout << text;
    else
        write_text_file(out, text);
    std::cerr << "winning region " << s.strategy.winning_region.size() << "/" << mdp.num_states() << ", unsafe "
              << s.strategy.unsafe.size() << ", co-live " << s.strategy.colive.size() << ", live groups "
              << s.strategy.live_groups.size() << "\n";
    return 0;
}

struct SimulateArgs {
    std::string mdp, tmpl, policy, instance, script, trace, start;
    double gamma = 0.1, theta = 0.01;
    std::uint64_t steps = 100000, seed = 1;
};

int cmd_simulate(const SimulateArgs& a) {
    auto trace = open_out(a.trace);
    if (!a.instance.empty()) {
        const GridInstance inst = load_instance(a.instance);
        std::ostringstream script;
        if (!a.script.empty()) {
            std::ifstream in(a.script);
            if (!in) throw Error(ErrorCode::ParseError, "cannot read " + a.script);
            script << in.rdbuf();
        } else {
            script << json{{"type", "create_session"}, {"gamma", a.gamma}, {"theta", a.theta}, {"seed", a.seed}}.dump()
                   << '\n'
                   << json{{"type", "step"}, {"n", a.steps}}.dump() << '\n';
        }
        std::istringstream in(script.str());
        std::ostringstream replies;
        auto res = replay_script(in, inst, std::nullopt, trace.get(), &replies);
        // The last reply carries the final snapshot.
        std::string line, last;
        std::istringstream rs(replies.str());
        while (std::getline(rs, line)) last = line;
        if (!last.empty()) {
            auto j = json::parse(last);
            ordered_json summary{{"messages", res.messages}, {"errors", res.errors}};
            if (j.contains("step")) summary["steps"] = j["step"];
            if (j.contains("metrics")) summary["metrics"] = j["metrics"];
            std::cout << summary.dump() << "\n";
        }
        return res.errors == 0 ? 0 : 3;
    }
    if (a.mdp.empty() || a.tmpl.empty())
        throw Error(ErrorCode::PreconditionViolation, "simulate needs --instance, or --mdp with --template");
    auto mdp = std::make_shared<const Mdp>(load_mdp(a.mdp));
    Synthesis s = load_synthesis(a.tmpl, *mdp);
    auto g = std::make_shared<const GameGraph>(*mdp, s.mode);
    auto pol = std::make_shared<const TabularPolicy>(a.policy.empty() ? uniform_policy(*mdp) : load_policy(a.policy, *mdp));
    ShieldParams p;
    p.gamma = a.gamma;
    p.theta = a.theta;
    StateId start;
    if (!a.start.empty())
        start = states_from_json(json::array({a.start}), *mdp).front();
    else
        start = initial_state_from_seed(s.strategy.winning_region, a.seed);
    Simulation sim(mdp, pol, Shield(g, s, p), start, a.seed);
    sim.set_trace(trace.get());
    sim.run(a.steps);
    const auto& st = sim.stats();
    ordered_json summary{{"steps", st.steps},
                         {"unsafe_samples", st.unsafe_samples},
                         {"max_live_counter", st.max_live_counter},
                         {"mean_tv", st.steps ? st.mean_tv() : 0.0}};
    std::cout << summary.dump() << "\n";
    return 0;
}

int cmd_gen_grids(int count, const std::string& category, const std::string& sizes, std::uint64_t seed, double slip,
                  const std::string& out) {
    const auto [lo, hi] = parse_range(sizes);
    std::vector<Category> cats;
    if (category == "both") cats = {Category::Far, Category::Close};
    else cats = {parse_category(category)};
    fs::create_directories(out);
    int written = 0;
    for (Category c : cats) {
        const auto suite = eval::generate_suite(c == Category::Far ? count : 0, c == Category::Close ? count : 0, lo, hi, seed);
        for (auto inst : suite) {
            inst.slip = slip;
            save_instance(inst, fs::path(out) / (instance_id(inst) + ".json"));
            ++written;
        }
    }
    std::cerr << "wrote " << written << " instances to " << out << "\n";
    return 0;
}

int cmd_sweep(const std::string& config, const std::string& out, const std::string& naive_out, int jobs) {
    const fs::path cfg_path(config);
    auto cfg = eval::sweep_config_from_json(read_json_file(cfg_path), cfg_path.parent_path());
    if (jobs >= 0) cfg.jobs = static_cast<unsigned>(jobs);
    const auto instances = eval::config_instances(cfg);
    std::vector<eval::PreparedInstance> prep;
    for (const auto& i : instances) prep.push_back(eval::prepare_instance(i, cfg.eps_p));
    auto csv = open_out(out);
    std::ostream& sink = csv ? *csv : std::cout;
    auto res = eval::sweep_gamma(prep, cfg.gammas, cfg.theta, cfg.steps, cfg.seeds, &sink, cfg.jobs);
    for (const auto& f : res.failures)
        std::cerr << "failed: " << f.instance_id << " gamma=" << f.gamma << " seed=" << f.seed << ": " << f.error << "\n";
    if (!naive_out.empty()) {
        std::vector<double> pmix;
        for (int i = 0; i <= 10; ++i) pmix.push_back(i / 10.0);
        auto naive = eval::sweep_naive(prep, pmix, cfg.steps, cfg.seeds, cfg.jobs);
        auto f = open_out(naive_out);
        eval::write_metrics_csv(*f, naive.records);
    }
    std::cerr << res.records.size() << " runs, " << res.failures.size() << " failures\n";
    return res.failures.empty() ? 0 : 3;
}

int cmd_oracle_check(const std::string& mdp_path, std::size_t horizon, const std::string& tmpl,
                     const std::string& objective, const std::string& mode, const std::string& policy, double gamma,
                     double theta, const std::string& start_name) {
    const Mdp mdp = load_mdp(mdp_path);
    Synthesis s;
    if (!tmpl.empty()) {
        s = load_synthesis(tmpl, mdp);
    } else {
        if (objective.empty()) throw Error(ErrorCode::PreconditionViolation, "oracle-check needs --template or --objective");
        s = synthesize(GameGraph(mdp, parse_mode(mode)), {parse_objective(objective, mdp)});
    }
    auto g = std::make_shared<const GameGraph>(mdp, s.mode);
    const TabularPolicy pol = policy.empty() ? uniform_policy(mdp) : load_policy(policy, mdp);
    ShieldParams p;
    p.gamma = gamma;
    p.theta = theta;
    const Shield sh(g, s, p);
    const StateId start = start_name.empty() ? mdp.initial() : states_from_json(json::array({start_name}), mdp).front();
    ordered_json report;
    bool ok = true;
    if (s.objectives.size() == 1 && mdp.num_states() <= oracle::kMaxOracleStates) {
        auto c = oracle::check_template(mdp, s.mode, s.objectives.front(), s.strategy, s.disabled);
        report["template"] = {{"region_matches", c.region_matches}, {"sound", c.sound}, {"closed", c.closed},
                              {"realizable", c.realizable}, {"detail", c.detail}};
        ok = ok && c.ok();
    }
    auto nominal = oracle::history_probabilities(mdp, pol, nullptr, start, horizon);
    auto shielded = oracle::history_probabilities(mdp, pol, &sh, start, horizon);
    std::size_t checked = 0, violations = 0;
    double worst = 0.0;
    for (const auto& [h, pn] : nominal) {
        if (!oracle::in_template_prefix(h, *g, s.strategy)) continue;
        const double bound = oracle::interference_bound(pn, oracle::min_action_probability(h, pol), horizon,
                                                        s.strategy.live_groups.size(), gamma);
        const double ps = shielded.count(h) ? shielded.at(h) : 0.0;
        ++checked;
        worst = std::max(worst, pn - ps);
        if (ps < pn - bound - 1e-9) {
            ++violations;
            std::cerr << "bound violated: " << oracle::history_key(h, mdp) << " nominal " << pn << " shielded " << ps
                      << " bound " << bound << "\n";
        }
    }
    report["interference"] = {{"horizon", horizon}, {"histories", checked}, {"violations", violations},
                              {"max_deficit", worst}};
    ok = ok && violations == 0;
    report["ok"] = ok;
    std::cout << report.dump(2) << "\n";
    return ok ? 0 : 3;
}

int cmd_serve(ServerConfig cfg) {
    if (const char* port = std::getenv("STARS_PORT")) cfg.port = static_cast<std::uint16_t>(std::stoul(port));
    if (const char* dir = std::getenv("STARS_INSTANCE_DIR")) cfg.instance_dir = fs::path(dir);
    // Signals go to a dedicated waiter thread; workers never see them.
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGTERM);
    sigaddset(&set, SIGINT);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);
    std::signal(SIGPIPE, SIG_IGN);
    Server server(cfg);
    const auto port = server.start();
    std::cout << "listening on " << cfg.host << ":" << port << std::endl;
    std::thread waiter([&] {
        int sig = 0;
        sigwait(&set, &sig);
        server.stop();
    });
    server.run();
    // The waiter may still be blocked if run() ended some other way.
    pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
    std::cout << "metrics written to " << cfg.metrics_path.string() << std::endl;
    return 0;
}

int cmd_scale(const std::vector<std::size_t>& sizes, std::uint64_t seed) {
    for (const auto& r : eval::scalability_bench(sizes, seed))
        std::cout << ordered_json{{"states", r.states}, {"edges", r.edges}, {"seconds", r.seconds},
                                  {"states_per_second", r.states_per_second}, {"region", r.region_size}}
                         .dump()
                  << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Strategy-template shielding toolkit"};
    app.require_subcommand(1);

    std::string mdp_path, out, compose, mode = "sure";
    std::vector<std::string> objectives;
    auto* synth = app.add_subcommand("synth", "Synthesize a strategy template");
    synth->add_option("--mdp", mdp_path, "MDP JSON")->required();
    synth->add_option("--objective", objectives, "buchi:file or parity:file; repeat for a conjunction")->required();
    synth->add_option("--mode", mode, "sure or almost-sure");
    synth->add_option("--out", out, "template JSON (stdout when omitted)");
    synth->add_option("--compose", compose, "template JSON to compose with");

    SimulateArgs sa;
    auto* sim = app.add_subcommand("simulate", "Run a shielded simulation");
    sim->add_option("--instance", sa.instance, "FactoryBot instance JSON (session mode)");
    sim->add_option("--script", sa.script, "protocol script, one message per line (with --instance)");
    sim->add_option("--mdp", sa.mdp, "MDP JSON");
    sim->add_option("--template", sa.tmpl, "template JSON");
    sim->add_option("--policy", sa.policy, "policy JSON (uniform when omitted)");
    sim->add_option("--start", sa.start, "start state (seeded draw from the region when omitted)");
    sim->add_option("--gamma", sa.gamma);
    sim->add_option("--theta", sa.theta);
    sim->add_option("--steps", sa.steps);
    sim->add_option("--seed", sa.seed);
    sim->add_option("--trace", sa.trace, "JSON-lines trace output");

    int count = 20;
    std::string category = "both", sizes = "5..9", grid_out;
    std::uint64_t gen_seed = 1;
    double slip = 0.0;
    auto* gen = app.add_subcommand("gen-grids", "Generate FactoryBot instances");
    gen->add_option("--count", count, "instances per category");
    gen->add_option("--category", category, "far, close or both");
    gen->add_option("--sizes", sizes, "size range lo..hi");
    gen->add_option("--seed", gen_seed);
    gen->add_option("--slip", slip);
    gen->add_option("--out", grid_out)->required();

    std::string sweep_cfg, sweep_out, naive_out;
    int jobs = -1;
    auto* sweep = app.add_subcommand("sweep", "Gamma sweep over instances");
    sweep->add_option("--config", sweep_cfg)->required();
    sweep->add_option("--out", sweep_out, "CSV output (stdout when omitted)");
    sweep->add_option("--naive-out", naive_out, "also sweep the naive baseline over p_mix 0..1");
    sweep->add_option("--jobs", jobs, "worker threads (0 = hardware)");

    std::string oc_mdp, oc_tmpl, oc_obj, oc_mode = "sure", oc_policy, oc_start;
    std::size_t horizon = 4;
    double oc_gamma = 0.1, oc_theta = 0.01;
    auto* oc = app.add_subcommand("oracle-check", "Check a template and the interference bound by enumeration");
    oc->add_option("--mdp", oc_mdp)->required();
    oc->add_option("--horizon", horizon);
    oc->add_option("--template", oc_tmpl);
    oc->add_option("--objective", oc_obj, "buchi:file or parity:file (when no template is given)");
    oc->add_option("--mode", oc_mode);
    oc->add_option("--policy", oc_policy);
    oc->add_option("--gamma", oc_gamma);
    oc->add_option("--theta", oc_theta);
    oc->add_option("--start", oc_start);

    ServerConfig sc;
    std::string instances, metrics = "session_metrics.csv", trace_dir;
    auto* serve = app.add_subcommand("serve", "Run the session server");
    serve->add_option("--port", sc.port);
    serve->add_option("--host", sc.host);
    serve->add_option("--instances", instances, "instance directory for instance_ref");
    serve->add_option("--metrics", metrics, "session metrics CSV");
    serve->add_option("--trace-dir", trace_dir, "per-session trace directory");
    serve->add_option("--max-sessions", sc.max_sessions);

    std::vector<std::size_t> scale_sizes{1000, 10000, 100000};
    std::uint64_t scale_seed = 1;
    auto* scale = app.add_subcommand("scale", "Time template synthesis on layered graphs");
    scale->add_option("--sizes", scale_sizes)->delimiter(',');
    scale->add_option("--seed", scale_seed);

    CLI11_PARSE(app, argc, argv);
    try {
        if (*synth) return cmd_synth(mdp_path, objectives, mode, out, compose);
        if (*sim) return cmd_simulate(sa);
        if (*gen) return cmd_gen_grids(count, category, sizes, gen_seed, slip, grid_out);
        if (*sweep) return cmd_sweep(sweep_cfg, sweep_out, naive_out, jobs);
        if (*oc) return cmd_oracle_check(oc_mdp, horizon, oc_tmpl, oc_obj, oc_mode, oc_policy, oc_gamma, oc_theta, oc_start);
        if (*serve) {
            if (!instances.empty()) sc.instance_dir = fs::path(instances);
            if (!trace_dir.empty()) sc.trace_dir = fs::path(trace_dir);
            sc.metrics_path = metrics;
            return cmd_serve(sc);
        }
        if (*scale) return cmd_scale(scale_sizes, scale_seed);
    } catch (const Error& e) {
        std::cerr << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
