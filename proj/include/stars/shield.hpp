#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "stars/distribution.hpp"
#include "stars/errors.hpp"
#include "stars/template.hpp"

namespace stars {

struct ShieldParams {
    double gamma = 0.1;
    double theta = 0.01;
    double eps_perturb = 1e-3;
    bool operator==(const ShieldParams&) const = default;
};

/// gamma in (0,1], theta in (0, 1/max_degree), eps_perturb > 0; throws InvalidParams.
void validate(const ShieldParams& p, std::size_t max_degree);

/// max(1, (1/theta - 1) / gamma): ceiling on live counters of a
/// single-objective template under the shield.
double live_counter_bound(const ShieldParams& p);
/// 1 + ceil(1/gamma): how often a co-live edge can be sampled at most.
std::uint64_t colive_sample_bound(const ShieldParams& p);

/// Per-edge and per-state lookup tables for one template.
class TemplateIndex {
public:
    TemplateIndex(const GameGraph& g, const StrategyTemplate& t);

    bool unsafe(EdgeId e) const { return unsafe_[e] != 0; }
    /// Index into template.colive, or -1.
    std::int32_t colive_slot(EdgeId e) const { return colive_slot_[e]; }
    std::span<const std::uint32_t> groups_of_edge(EdgeId e) const {
        return {edge_groups_.data() + edge_off_[e], edge_off_[e + 1] - edge_off_[e]};
    }
    std::span<const std::uint32_t> groups_of_source(StateId q) const {
        return {src_groups_.data() + src_off_[q], src_off_[q + 1] - src_off_[q]};
    }

private:
    std::vector<char> unsafe_;
    std::vector<std::int32_t> colive_slot_;
    std::vector<std::uint32_t> edge_off_, edge_groups_, src_off_, src_groups_;
};

/// Shield state: counters over history, parameters, the active template and
/// the occasional-fault mask. Counters count completed steps only.
class Shield {
public:
    Shield(std::shared_ptr<const GameGraph> graph, Synthesis synthesis, ShieldParams params);

    const GameGraph& graph() const { return *graph_; }
    const ShieldParams& params() const { return params_; }
    const Synthesis& synthesis() const { return synthesis_; }
    const StrategyTemplate& strategy() const { return synthesis_.strategy; }
    const TemplateIndex& index() const { return *index_; }

    /// Shielded distribution for state q written to `out` (size |A(q)|).
    /// Throws NoSafeAction when no admissible action has mass even after the
    /// perturbation fallback.
    void shield_distribution(std::span<const double> mu, StateId q, std::span<double> out) const;
    Distribution shield_distribution(const Distribution& mu, StateId q) const;

    void update_counters(StateId q, ActionIndex a);
    void reset_counters();

    /// Atomic replacement; throws InvalidParams and leaves the old values.
    void set_params(std::optional<double> gamma, std::optional<double> theta);

    /// Compose with `extra`; counters carried over by edge-set identity.
    /// Throws OutsideCombinedRegion if `current` falls outside the new region.
    void add_objective(const Synthesis& extra, StateId current);
    /// Drop objective `index` and re-synthesize; same carrying rules.
    void remove_objective(std::size_t index, StateId current);
    /// Occasional faults toggle the mask; persistent ones re-synthesize.
    /// Throws ConflictUnresolvable if the current state would be stranded.
    void set_fault(EdgeId e, FaultKind kind, bool active, StateId current);

    bool masked(EdgeId e) const { return mask_[e] != 0; }
    std::vector<EdgeId> mask() const;

    const std::vector<std::uint64_t>& colive_counters() const { return colive_counts_; }
    const std::vector<std::uint64_t>& live_counters() const { return live_counts_; }
    std::uint64_t colive_counter(EdgeId e) const;

private:
    void install(Synthesis next, StateId current, ErrorCode outside_code);

    std::shared_ptr<const GameGraph> graph_;
    Synthesis synthesis_;
    ShieldParams params_;
    std::shared_ptr<const TemplateIndex> index_;
    std::vector<std::uint64_t> colive_counts_;
    std::vector<std::uint64_t> live_counts_;
    std::vector<char> mask_;
};

/// Mean of cost_i * tv(nominal_i, shielded_i) over a run.
double shielding_cost(std::span<const double> tv_per_step, std::span<const double> cost = {});

} // namespace stars
