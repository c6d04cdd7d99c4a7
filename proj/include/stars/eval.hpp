#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stars/factorybot.hpp"
#include "stars/game_graph.hpp"
#include "stars/mdp_io.hpp"
#include "stars/shield.hpp"
#include "stars/template.hpp"

namespace stars::eval {

/// Share of trace positions inside `buchi`. Throws EmptyTrace.
double buchi_frequency(std::span<const StateId> trace, std::span<const StateId> buchi);
/// Mean of the per-step rewards. Throws EmptyTrace.
double average_reward(std::span<const double> rewards);
/// Mean of reward_table[e] over the sampled edges. Throws EmptyTrace.
double average_reward(std::span<const EdgeId> edges, std::span<const double> reward_table);

struct MetricsRecord {
    std::string instance_id;
    std::string category;
    int size = 0;
    double gamma = 0.0; ///< p_mix for baseline runs
    double theta = 0.0;
    std::uint64_t steps = 0;
    std::uint64_t seed = 0;
    double buchi_freq = 0.0;
    double avg_reward = 0.0;
    double max_avg_reward = 0.0;
    double reward_gap = 0.0;
    std::uint64_t colive_violations = 0; ///< co-live edges sampled beyond 1 + ceil(1/γ)
    std::uint64_t unsafe_samples = 0;
    std::uint64_t max_live_counter = 0;
    double mean_tv = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "instance_id,category,size,gamma,theta,steps,seed,buchi_freq,avg_reward,max_avg_reward,reward_gap";

std::string to_csv_row(const MetricsRecord& r);
void write_metrics_csv(std::ostream& out, std::span<const MetricsRecord> records, bool header = true);
/// Parses what write_metrics_csv wrote; throws ParseError on any malformed line.
std::vector<MetricsRecord> read_metrics_csv(std::istream& in);

/// An instance with everything a run needs solved once and shared read-only.
struct PreparedInstance {
    GridInstance instance;
    std::string id;
    GridMdp grid;
    std::shared_ptr<const GameGraph> graph;
    Synthesis synthesis;
    std::shared_ptr<const TabularPolicy> policy;
    double max_avg_reward = 0.0;
    std::vector<StateId> buchi;
};

/// Grid MDP, Büchi template over B, softened optimal policy and g*.
PreparedInstance prepare_instance(const GridInstance& inst, double eps_p = 0.01);

/// `far` Far and `close` Close instances, sizes cycling through
/// [min_size, max_size]; a seed that exhausts generation is skipped.
std::vector<GridInstance> generate_suite(int far, int close, int min_size, int max_size, std::uint64_t base_seed);

/// Per-run evidence beyond the CSV columns.
struct RunAudit {
    std::vector<std::uint64_t> colive_uses; ///< aligned with template.colive
    std::uint64_t max_live_counter = 0;
    std::vector<StateId> visited;           ///< only when record_trace
    bool record_trace = false;
};

/// Shielded run from a seeded random initial state of the winning region.
MetricsRecord run_stars(const PreparedInstance& p, const ShieldParams& params, std::uint64_t steps,
                        std::uint64_t seed, RunAudit* audit = nullptr);
/// ApplyNaive run: the nominal policy mixed with uniform, no counters.
MetricsRecord run_naive(const PreparedInstance& p, double p_mix, std::uint64_t steps, std::uint64_t seed);
/// The nominal policy without any shield.
MetricsRecord run_nominal(const PreparedInstance& p, std::uint64_t steps, std::uint64_t seed);

struct SweepFailure {
    std::string instance_id;
    double gamma = 0.0;
    std::uint64_t seed = 0;
    std::string error;
};

struct SweepResult {
    std::vector<MetricsRecord> records;
    std::vector<SweepFailure> failures;
};

/// Full (instance, γ, seed) cross product, in that nesting order regardless
/// of how many worker threads ran the cells. A failing cell is reported and
/// skipped. When `csv` is given, rows are written as cells complete in order.
SweepResult sweep_gamma(std::span<const PreparedInstance> instances, std::span<const double> gammas, double theta,
                        std::uint64_t steps, std::span<const std::uint64_t> seeds, std::ostream* csv = nullptr,
                        unsigned jobs = 0);
/// Same cross product for the ApplyNaive baseline over p_mix values.
SweepResult sweep_naive(std::span<const PreparedInstance> instances, std::span<const double> pmix,
                        std::uint64_t steps, std::span<const std::uint64_t> seeds, unsigned jobs = 0);

struct BucketRow {
    double eps = 0.0;
    std::size_t stars_runs = 0;
    std::size_t naive_runs = 0;
    double stars_mean = 0.0;
    double naive_mean = 0.0;
    bool empty = false; ///< one of the methods has no run in the bucket
};

/// Per-bucket layout: mean Büchi frequency over runs with reward_gap <= ε.
std::vector<BucketRow> compare_naive(std::span<const MetricsRecord> stars, std::span<const MetricsRecord> naive,
                                     std::span<const double> eps_grid);

/// One-sided sign test: P(X >= positives) for X ~ Binomial(positives + negatives, 1/2).
/// Ties are dropped by the caller.
double sign_test_p(std::size_t positives, std::size_t negatives);

/// Least-squares slope of ys over xs.
double slope(std::span<const double> xs, std::span<const double> ys);

/// (1/|Q|) * min(1, (γ / (1/θ - 1))^(n-1)).
double frequency_bound(std::size_t num_states, std::size_t num_live_groups, const ShieldParams& params);

struct FrequencyCheck {
    double bound = 0.0;
    double measured = 0.0;
    double slack = 0.0;
    bool pass = false;
};

/// Measured Büchi frequency against frequency_bound with 2/length slack.
/// Throws PreconditionViolation unless the synthesis is sure-mode with a
/// single Büchi objective and the MDP is deterministic; EmptyTrace on an
/// empty trace.
FrequencyCheck frequency_bound_check(std::span<const StateId> trace, const Mdp& mdp, const Synthesis& s,
                                     const ShieldParams& params);

/// Deterministic layered MDP: `width` states per layer, two actions per state
/// into the next layer (the last wraps to the first), plus a losing trap
/// reachable from a few states. Büchi set: the first layer.
struct LayeredGraph {
    std::shared_ptr<const Mdp> mdp;
    std::vector<StateId> buchi;
};
LayeredGraph layered_graph(std::size_t num_states, std::uint64_t seed, std::size_t width = 100);

struct TimingRow {
    std::size_t states = 0;
    std::size_t edges = 0;
    double seconds = 0.0;
    double states_per_second = 0.0;
    std::size_t region_size = 0;
};
/// Times buchi_template on layered graphs of the requested sizes.
std::vector<TimingRow> scalability_bench(std::span<const std::size_t> sizes, std::uint64_t seed = 1);

/// Sweep configuration read from JSON:
/// {"instances": {"far": 20, "close": 20, "sizes": [5, 9], "seed": 1}
///  or {"dir": "path"}, "gammas": [...], "theta": 0.01, "steps": 100000,
///  "seeds": [1, 2, 3, 4, 5], "eps_p": 0.01, "jobs": 0}
struct SweepConfig {
    int far = 20;
    int close = 20;
    int min_size = 5;
    int max_size = 9;
    std::uint64_t instance_seed = 1;
    std::optional<std::filesystem::path> instance_dir;
    std::vector<double> gammas{0.01, 0.05, 0.1, 0.2, 0.5};
    double theta = 0.01;
    std::uint64_t steps = 100000;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    double eps_p = 0.01;
    unsigned jobs = 0;
};
SweepConfig sweep_config_from_json(const json& j, const std::filesystem::path& base_dir = {});
/// Instances named by the config: the directory's *.json files in name order,
/// or a generated suite.
std::vector<GridInstance> config_instances(const SweepConfig& c);

} // namespace stars::eval
