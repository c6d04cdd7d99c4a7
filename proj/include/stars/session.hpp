#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "stars/eval.hpp"
#include "stars/mdp_io.hpp"
#include "stars/simulation.hpp"

namespace stars {

/// Where create_session finds its grid: {"instance": {...}} inline,
/// {"instance_ref": "name"} from the instance directory, or
/// {"config": {"size": 7, "category": "far", "seed": 3}} generated.
GridInstance resolve_instance(const json& msg, const std::optional<std::filesystem::path>& instance_dir);

/// One interactive shielded run over a FactoryBot grid. Holds no socket and
/// no clock, so a server session and a headless replay of the same message
/// sequence produce the same trace. Commands apply between steps only.
class ShieldedRun {
public:
    ShieldedRun(const GridInstance& inst, const ShieldParams& params, std::uint64_t seed, double eps_p = 0.01);

    /// Applies one protocol message other than create_session and returns the
    /// reply. Errors come back as {"type":"error", code, msg} and leave the
    /// run as it was before the message (steps already taken by a failing
    /// step{n} are kept).
    ordered_json handle(const json& msg);

    ordered_json snapshot() const;

    /// JSON-lines trace of every step from now on; nullptr stops it.
    void set_trace(std::ostream* out) { sim_.set_trace(out); }

    const eval::PreparedInstance& prepared() const { return prep_; }
    const Simulation& simulation() const { return sim_; }
    std::uint64_t seed() const { return seed_; }
    /// Visits per objective id since it was added.
    std::uint64_t objective_visits(std::uint64_t id) const;

    /// Metrics row for the CSV written on eviction and shutdown.
    eval::MetricsRecord metrics() const;

private:
    ordered_json step(const json& msg);
    ordered_json set_params(const json& msg);
    ordered_json add_objective(const json& msg);
    ordered_json remove_objective(const json& msg);
    ordered_json set_fault(const json& msg);
    ordered_json reset();

    StateId state_of(const json& cell) const;
    ordered_json cell_json(StateId q) const;
    ordered_json edge_json(EdgeId e) const;

    struct Objective {
        std::uint64_t id = 0;
        std::vector<StateId> states;
        std::uint64_t visits = 0;
    };

    eval::PreparedInstance prep_;
    std::uint64_t seed_;
    StateId start_;
    Simulation sim_;
    std::vector<Objective> objectives_; ///< aligned with the shield's objectives
    std::uint64_t next_objective_id_ = 1;
};

inline constexpr const char* kSessionMetricsHeader =
    "session_id,instance_id,category,size,gamma,theta,steps,seed,buchi_freq,avg_reward,max_avg_reward,reward_gap";

std::string session_metrics_row(const std::string& session_id, const eval::MetricsRecord& r);

struct SessionMetricsRow {
    std::string session_id;
    eval::MetricsRecord record;
};
/// Parses a session metrics CSV; throws ParseError on any malformed line.
std::vector<SessionMetricsRow> read_session_metrics_csv(std::istream& in);

/// Replays a protocol script headlessly. The first message must be
/// create_session unless `instance` is given, in which case a leading
/// create_session only contributes gamma, theta and seed. Replies are
/// written one per line to `replies` when given.
struct ReplayResult {
    std::size_t messages = 0;
    std::size_t errors = 0;
};
ReplayResult replay_script(std::istream& script, const std::optional<GridInstance>& instance,
                           const std::optional<std::filesystem::path>& instance_dir, std::ostream* trace,
                           std::ostream* replies);

} // namespace stars
