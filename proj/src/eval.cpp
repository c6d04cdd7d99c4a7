#include "stars/eval.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <istream>
#include <mutex>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include "stars/errors.hpp"
#include "stars/rng.hpp"
#include "stars/simulation.hpp"

namespace stars::eval {

double buchi_frequency(std::span<const StateId> trace, std::span<const StateId> buchi) {
    if (trace.empty()) throw Error(ErrorCode::EmptyTrace, "empty trace");
    std::vector<StateId> b(buchi.begin(), buchi.end());
    std::sort(b.begin(), b.end());
    std::size_t hits = 0;
    for (StateId q : trace)
        if (std::binary_search(b.begin(), b.end(), q)) ++hits;
    return static_cast<double>(hits) / static_cast<double>(trace.size());
}

double average_reward(std::span<const double> rewards) {
    if (rewards.empty()) throw Error(ErrorCode::EmptyTrace, "empty trace");
    double s = 0.0;
    for (double r : rewards) s += r;
    return s / static_cast<double>(rewards.size());
}

double average_reward(std::span<const EdgeId> edges, std::span<const double> reward_table) {
    if (edges.empty()) throw Error(ErrorCode::EmptyTrace, "empty trace");
    double s = 0.0;
    for (EdgeId e : edges) s += reward_table[e];
    return s / static_cast<double>(edges.size());
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(line);
    while (std::getline(is, cur, ',')) out.push_back(cur);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

/// Runs job(i) for i in [0, n) on `jobs` threads and hands each result to
/// `sink` in index order.
template <class T>
void run_ordered(std::size_t n, unsigned jobs, const std::function<T(std::size_t)>& job,
                 const std::function<void(std::size_t, T&)>& sink) {
    if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
    jobs = static_cast<unsigned>(std::min<std::size_t>(jobs, std::max<std::size_t>(n, 1)));
    if (jobs <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            T r = job(i);
            sink(i, r);
        }
        return;
    }
    std::vector<std::optional<T>> done(n);
    std::atomic<std::size_t> next{0};
    std::mutex m;
    std::size_t flushed = 0;
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            T r = job(i);
            std::lock_guard lock(m);
            done[i] = std::move(r);
            while (flushed < n && done[flushed]) {
                sink(flushed, *done[flushed]);
                done[flushed].reset();
                ++flushed;
            }
        }
    };
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
}

MetricsRecord base_record(const PreparedInstance& p, std::uint64_t steps, std::uint64_t seed) {
    MetricsRecord r;
    r.instance_id = p.id;
    r.category = to_string(p.instance.category);
    r.size = p.instance.size;
    r.steps = steps;
    r.seed = seed;
    r.max_avg_reward = p.max_avg_reward;
    return r;
}

void finish_record(MetricsRecord& r, const Simulation& sim) {
    const RunStats& st = sim.stats();
    r.buchi_freq = st.tracked_frequency();
    r.avg_reward = st.average_reward();
    r.reward_gap = r.max_avg_reward - r.avg_reward;
    r.mean_tv = st.mean_tv();
    r.unsafe_samples = st.unsafe_samples;
    r.max_live_counter = st.max_live_counter;
}

std::vector<char> mask_of(std::size_t n, std::span<const StateId> states) {
    std::vector<char> m(n, 0);
    for (StateId q : states) m[q] = 1;
    return m;
}

} // namespace

std::string to_csv_row(const MetricsRecord& r) {
    std::string s = r.instance_id;
    s += ',' + r.category + ',' + std::to_string(r.size) + ',' + fmt(r.gamma) + ',' + fmt(r.theta) + ',' +
         std::to_string(r.steps) + ',' + std::to_string(r.seed) + ',' + fmt(r.buchi_freq) + ',' + fmt(r.avg_reward) +
         ',' + fmt(r.max_avg_reward) + ',' + fmt(r.reward_gap);
    return s;
}

void write_metrics_csv(std::ostream& out, std::span<const MetricsRecord> records, bool header) {
    if (header) out << kMetricsHeader << '\n';
    for (const auto& r : records) out << to_csv_row(r) << '\n';
}

std::vector<MetricsRecord> read_metrics_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != kMetricsHeader)
        throw Error(ErrorCode::ParseError, "metrics CSV header missing or wrong");
    std::vector<MetricsRecord> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        auto f = split_csv(line);
        if (f.size() != 11) throw Error(ErrorCode::ParseError, "line " + std::to_string(lineno) + ": expected 11 fields");
        try {
            MetricsRecord r;
            std::size_t pos = 0;
            auto whole = [&](const std::string& s, auto conv) {
                auto v = conv(s, &pos);
                if (pos != s.size()) throw std::invalid_argument(s);
                return v;
            };
            auto d = [&](const std::string& s) {
                return whole(s, [](const std::string& x, std::size_t* p) { return std::stod(x, p); });
            };
            auto u = [&](const std::string& s) {
                return whole(s, [](const std::string& x, std::size_t* p) { return std::stoull(x, p); });
            };
            r.instance_id = f[0];
            r.category = f[1];
            r.size = static_cast<int>(u(f[2]));
            r.gamma = d(f[3]);
            r.theta = d(f[4]);
            r.steps = u(f[5]);
            r.seed = u(f[6]);
            r.buchi_freq = d(f[7]);
            r.avg_reward = d(f[8]);
            r.max_avg_reward = d(f[9]);
            r.reward_gap = d(f[10]);
            out.push_back(std::move(r));
        } catch (const std::logic_error&) {
            throw Error(ErrorCode::ParseError, "line " + std::to_string(lineno) + ": malformed number");
        }
    }
    return out;
}

PreparedInstance prepare_instance(const GridInstance& inst, double eps_p) {
    PreparedInstance p;
    p.instance = inst;
    p.id = instance_id(inst);
    p.grid = grid_to_mdp(inst);
    const Mode mode = inst.slip > 0.0 ? Mode::AlmostSure : Mode::Sure;
    p.graph = std::make_shared<const GameGraph>(*p.grid.mdp, mode);
    p.buchi = buchi_states(inst, p.grid);
    p.synthesis = synthesize(*p.graph, {make_buchi_objective(*p.grid.mdp, p.buchi)});
    auto sol = solve_avg_reward_policy(*p.grid.mdp, *p.grid.reward, eps_p);
    p.policy = std::make_shared<const TabularPolicy>(std::move(sol.policy));
    p.max_avg_reward = eps_p == 0.0 ? sol.gain : solve_avg_reward_policy(*p.grid.mdp, *p.grid.reward, 0.0).gain;
    return p;
}

std::vector<GridInstance> generate_suite(int far, int close, int min_size, int max_size, std::uint64_t base_seed) {
    std::vector<GridInstance> out;
    const int span = max_size - min_size + 1;
    if (span <= 0) throw Error(ErrorCode::PreconditionViolation, "empty size range");
    auto fill = [&](Category c, int count) {
        std::uint64_t seed = base_seed;
        for (int i = 0; i < count; ++i) {
            const int size = min_size + i % span;
            for (int tries = 0;; ++tries) {
                try {
                    out.push_back(generate_instance(size, c, seed++));
                    break;
                } catch (const Error& e) {
                    if (e.code() != ErrorCode::GenerationExhausted || tries > 100) throw;
                }
            }
        }
    };
    fill(Category::Far, far);
    fill(Category::Close, close);
    return out;
}

MetricsRecord run_stars(const PreparedInstance& p, const ShieldParams& params, std::uint64_t steps,
                        std::uint64_t seed, RunAudit* audit) {
    MetricsRecord r = base_record(p, steps, seed);
    r.gamma = params.gamma;
    r.theta = params.theta;
    const StateId start = initial_state_from_seed(p.synthesis.strategy.winning_region, seed);
    Simulation sim(p.grid.mdp, p.policy, Shield(p.graph, p.synthesis, params), start, seed, p.grid.reward);
    sim.set_tracked(mask_of(p.grid.mdp->num_states(), p.buchi));
    sim.set_recording(audit && audit->record_trace);
    sim.run(steps);
    finish_record(r, sim);
    const auto& uses = sim.shield()->colive_counters();
    const std::uint64_t cap = colive_sample_bound(params);
    for (std::uint64_t u : uses)
        if (u > cap) ++r.colive_violations;
    if (audit) {
        audit->colive_uses = uses;
        audit->max_live_counter = sim.stats().max_live_counter;
        if (audit->record_trace) audit->visited = sim.visited_states();
    }
    return r;
}

MetricsRecord run_naive(const PreparedInstance& p, double p_mix, std::uint64_t steps, std::uint64_t seed) {
    MetricsRecord r = base_record(p, steps, seed);
    r.gamma = p_mix;
    auto mixed = std::make_shared<const TabularPolicy>(naive_shield(*p.policy, p_mix, p.synthesis.strategy, *p.grid.mdp));
    const StateId start = initial_state_from_seed(p.synthesis.strategy.winning_region, seed);
    Simulation sim(p.grid.mdp, mixed, std::nullopt, start, seed, p.grid.reward);
    sim.set_tracked(mask_of(p.grid.mdp->num_states(), p.buchi));
    sim.run(steps);
    finish_record(r, sim);
    return r;
}

MetricsRecord run_nominal(const PreparedInstance& p, std::uint64_t steps, std::uint64_t seed) {
    return run_naive(p, 0.0, steps, seed);
}

namespace {

using Cell3 = std::tuple<std::size_t, std::size_t, std::size_t>;

SweepResult sweep(std::span<const PreparedInstance> instances, std::span<const double> knobs,
                  std::span<const std::uint64_t> seeds, std::ostream* csv, unsigned jobs,
                  const std::function<MetricsRecord(const PreparedInstance&, double, std::uint64_t)>& run) {
    const std::size_t nk = knobs.size(), ns = seeds.size();
    const std::size_t n = instances.size() * nk * ns;
    SweepResult result;
    struct Out {
        std::optional<MetricsRecord> rec;
        SweepFailure fail;
    };
    if (csv) *csv << kMetricsHeader << '\n';
    run_ordered<Out>(
        n, jobs,
        [&](std::size_t i) {
            const auto& inst = instances[i / (nk * ns)];
            const double k = knobs[(i / ns) % nk];
            const std::uint64_t s = seeds[i % ns];
            Out o;
            try {
                o.rec = run(inst, k, s);
            } catch (const std::exception& e) {
                o.fail = {inst.id, k, s, e.what()};
            }
            return o;
        },
        [&](std::size_t, Out& o) {
            if (o.rec) {
                if (csv) *csv << to_csv_row(*o.rec) << '\n' << std::flush;
                result.records.push_back(std::move(*o.rec));
            } else {
                result.failures.push_back(std::move(o.fail));
            }
        });
    return result;
}

} // namespace

SweepResult sweep_gamma(std::span<const PreparedInstance> instances, std::span<const double> gammas, double theta,
                        std::uint64_t steps, std::span<const std::uint64_t> seeds, std::ostream* csv, unsigned jobs) {
    return sweep(instances, gammas, seeds, csv, jobs, [&](const PreparedInstance& p, double g, std::uint64_t s) {
        ShieldParams params;
        params.gamma = g;
        params.theta = theta;
        return run_stars(p, params, steps, s);
    });
}

SweepResult sweep_naive(std::span<const PreparedInstance> instances, std::span<const double> pmix,
                        std::uint64_t steps, std::span<const std::uint64_t> seeds, unsigned jobs) {
    return sweep(instances, pmix, seeds, nullptr, jobs,
                 [&](const PreparedInstance& p, double m, std::uint64_t s) { return run_naive(p, m, steps, s); });
}

std::vector<BucketRow> compare_naive(std::span<const MetricsRecord> stars, std::span<const MetricsRecord> naive,
                                     std::span<const double> eps_grid) {
    std::vector<BucketRow> rows;
    for (double eps : eps_grid) {
        BucketRow b;
        b.eps = eps;
        double ss = 0.0, sn = 0.0;
        for (const auto& r : stars)
            if (r.reward_gap <= eps) {
                ++b.stars_runs;
                ss += r.buchi_freq;
            }
        for (const auto& r : naive)
            if (r.reward_gap <= eps) {
                ++b.naive_runs;
                sn += r.buchi_freq;
            }
        b.empty = b.stars_runs == 0 || b.naive_runs == 0;
        if (b.stars_runs) b.stars_mean = ss / static_cast<double>(b.stars_runs);
        if (b.naive_runs) b.naive_mean = sn / static_cast<double>(b.naive_runs);
        rows.push_back(b);
    }
    return rows;
}

double sign_test_p(std::size_t positives, std::size_t negatives) {
    const std::size_t n = positives + negatives;
    if (n == 0) return 1.0;
    const double log_half_n = static_cast<double>(n) * std::log(0.5);
    double p = 0.0;
    for (std::size_t k = positives; k <= n; ++k) {
        const double log_choose = std::lgamma(static_cast<double>(n) + 1) - std::lgamma(static_cast<double>(k) + 1) -
                                  std::lgamma(static_cast<double>(n - k) + 1);
        p += std::exp(log_choose + log_half_n);
    }
    return std::min(1.0, p);
}

double slope(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size() || xs.size() < 2) throw Error(ErrorCode::PreconditionViolation, "need two or more points");
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    if (sxx == 0.0) throw Error(ErrorCode::PreconditionViolation, "constant abscissa");
    return sxy / sxx;
}

double frequency_bound(std::size_t num_states, std::size_t num_live_groups, const ShieldParams& params) {
    if (num_states == 0) throw Error(ErrorCode::PreconditionViolation, "no states");
    const double ratio = params.gamma / (1.0 / params.theta - 1.0);
    const double exponent = num_live_groups == 0 ? 0.0 : static_cast<double>(num_live_groups - 1);
    return std::min(1.0, std::pow(ratio, exponent)) / static_cast<double>(num_states);
}

FrequencyCheck frequency_bound_check(std::span<const StateId> trace, const Mdp& mdp, const Synthesis& s,
                                     const ShieldParams& params) {
    if (s.mode != Mode::Sure) throw Error(ErrorCode::PreconditionViolation, "frequency bound needs a sure-mode shield");
    if (s.objectives.size() != 1 || !s.objectives[0].is_buchi())
        throw Error(ErrorCode::PreconditionViolation, "frequency bound needs a single Büchi objective");
    for (EdgeId e = 0; e < mdp.num_edges(); ++e)
        if (mdp.successors(e).size() != 1)
            throw Error(ErrorCode::PreconditionViolation, "frequency bound needs a deterministic MDP");
    FrequencyCheck c;
    c.measured = buchi_frequency(trace, s.objectives[0].states_with_color(2));
    c.bound = frequency_bound(mdp.num_states(), s.strategy.live_groups.size(), params);
    c.slack = 2.0 / static_cast<double>(trace.size());
    c.pass = c.measured >= c.bound - c.slack;
    return c;
}

LayeredGraph layered_graph(std::size_t num_states, std::uint64_t seed, std::size_t width) {
    if (num_states < 2 * width + 1) throw Error(ErrorCode::PreconditionViolation, "need at least two layers and a trap");
    const std::size_t layered = num_states - 1;
    const StateId trap = static_cast<StateId>(layered);
    std::mt19937_64 rng(seed);
    MdpBuilder b;
    for (std::size_t q = 0; q < num_states; ++q) b.add_state(std::to_string(q));
    auto next_layer = [&](std::size_t q) {
        std::size_t start = (q / width + 1) * width;
        if (start >= layered) start = 0;
        const std::size_t w = std::min(width, layered - start);
        return static_cast<StateId>(start + uniform_below(rng, w));
    };
    for (std::size_t q = 0; q < layered; ++q) {
        const StateId s = static_cast<StateId>(q);
        const double u = uniform01(rng);
        b.add_transition(s, b.add_action(s, "a"), u < 0.005 ? trap : next_layer(q), 1.0);
        b.add_transition(s, b.add_action(s, "b"), u < 0.03 ? trap : next_layer(q), 1.0);
    }
    b.add_transition(trap, b.add_action(trap, "stay"), trap, 1.0);
    LayeredGraph g;
    g.mdp = std::make_shared<const Mdp>(b.build());
    for (StateId q = 0; q < width; ++q) g.buchi.push_back(q);
    return g;
}

std::vector<TimingRow> scalability_bench(std::span<const std::size_t> sizes, std::uint64_t seed) {
    std::vector<TimingRow> rows;
    for (std::size_t n : sizes) {
        auto lg = layered_graph(n, seed);
        const GameGraph g(*lg.mdp, Mode::Sure);
        const auto t0 = std::chrono::steady_clock::now();
        auto t = buchi_template(g, lg.buchi);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        TimingRow r;
        r.states = n;
        r.edges = lg.mdp->num_edges();
        r.seconds = secs;
        r.states_per_second = secs > 0.0 ? static_cast<double>(n) / secs : 0.0;
        r.region_size = t.winning_region.size();
        rows.push_back(r);
    }
    return rows;
}

SweepConfig sweep_config_from_json(const json& j, const std::filesystem::path& base_dir) {
    SweepConfig c;
    try {
        if (j.contains("instances")) {
            const auto& in = j.at("instances");
            if (in.contains("dir")) {
                std::filesystem::path d = in.at("dir").get<std::string>();
                c.instance_dir = d.is_relative() ? base_dir / d : d;
            } else {
                c.far = in.value("far", c.far);
                c.close = in.value("close", c.close);
                if (in.contains("sizes")) {
                    auto s = in.at("sizes").get<std::vector<int>>();
                    if (s.size() != 2) throw Error(ErrorCode::ParseError, "sizes must be [min, max]");
                    c.min_size = s[0];
                    c.max_size = s[1];
                }
                c.instance_seed = in.value("seed", c.instance_seed);
            }
        }
        if (j.contains("gammas")) c.gammas = j.at("gammas").get<std::vector<double>>();
        c.theta = j.value("theta", c.theta);
        c.steps = j.value("steps", c.steps);
        if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        c.eps_p = j.value("eps_p", c.eps_p);
        c.jobs = j.value("jobs", c.jobs);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("sweep config: ") + e.what());
    }
    if (c.gammas.empty() || c.seeds.empty()) throw Error(ErrorCode::ParseError, "sweep config needs gammas and seeds");
    return c;
}

std::vector<GridInstance> config_instances(const SweepConfig& c) {
    if (!c.instance_dir) return generate_suite(c.far, c.close, c.min_size, c.max_size, c.instance_seed);
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(*c.instance_dir))
        if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<GridInstance> out;
    for (const auto& f : files) out.push_back(load_instance(f));
    return out;
}

} // namespace stars::eval
