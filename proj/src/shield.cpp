#include "stars/shield.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "stars/errors.hpp"

namespace stars {

void validate(const ShieldParams& p, std::size_t max_degree) {
    if (!(p.gamma > 0.0 && p.gamma <= 1.0))
        throw Error(ErrorCode::InvalidParams, "gamma must lie in (0, 1]");
    const double cap = 1.0 / static_cast<double>(std::max<std::size_t>(max_degree, 1));
    if (!(p.theta > 0.0 && p.theta < cap))
        throw Error(ErrorCode::InvalidParams, "theta must lie in (0, 1/" + std::to_string(max_degree) + ")");
    if (!(p.eps_perturb > 0.0 && std::isfinite(p.eps_perturb)))
        throw Error(ErrorCode::InvalidParams, "eps_perturb must be positive");
}

double live_counter_bound(const ShieldParams& p) {
    return std::max(1.0, (1.0 / p.theta - 1.0) / p.gamma);
}

std::uint64_t colive_sample_bound(const ShieldParams& p) {
    return 1 + static_cast<std::uint64_t>(std::ceil(1.0 / p.gamma));
}

TemplateIndex::TemplateIndex(const GameGraph& g, const StrategyTemplate& t)
    : unsafe_(g.num_opp(), 0), colive_slot_(g.num_opp(), -1) {
    for (EdgeId e : t.unsafe) unsafe_[e] = 1;
    for (std::size_t i = 0; i < t.colive.size(); ++i) colive_slot_[t.colive[i]] = static_cast<std::int32_t>(i);

    std::vector<std::vector<std::uint32_t>> by_edge(g.num_opp()), by_src(g.num_sys());
    for (std::uint32_t i = 0; i < t.live_groups.size(); ++i)
        for (EdgeId e : t.live_groups[i]) {
            by_edge[e].push_back(i);
            auto& s = by_src[g.edge_source(e)];
            if (s.empty() || s.back() != i) s.push_back(i);
        }
    auto flatten = [](const auto& lists, auto& off, auto& flat) {
        off.assign(1, 0);
        for (const auto& l : lists) {
            flat.insert(flat.end(), l.begin(), l.end());
            off.push_back(static_cast<std::uint32_t>(flat.size()));
        }
    };
    flatten(by_edge, edge_off_, edge_groups_);
    flatten(by_src, src_off_, src_groups_);
}

Shield::Shield(std::shared_ptr<const GameGraph> graph, Synthesis synthesis, ShieldParams params)
    : graph_(std::move(graph)), synthesis_(std::move(synthesis)), params_(params) {
    std::size_t maxdeg = 0;
    for (StateId q = 0; q < graph_->num_sys(); ++q) maxdeg = std::max(maxdeg, graph_->num_actions(q));
    validate(params_, maxdeg);
    index_ = std::make_shared<TemplateIndex>(*graph_, synthesis_.strategy);
    colive_counts_.assign(synthesis_.strategy.colive.size(), 0);
    live_counts_.assign(synthesis_.strategy.live_groups.size(), 0);
    mask_.assign(graph_->num_opp(), 0);
}

namespace {

/// Blends counters into out, then normalize, threshold, normalize.
bool shield_pass(const TemplateIndex& idx, const std::vector<char>& mask, const std::vector<std::uint64_t>& colive,
                 const std::vector<std::uint64_t>& live, const ShieldParams& p, std::span<const double> mu,
                 double bump, EdgeId e0, std::span<double> out) {
    const std::size_t k = mu.size();
    for (std::size_t a = 0; a < k; ++a) {
        const EdgeId e = e0 + static_cast<EdgeId>(a);
        if (idx.unsafe(e) || mask[e]) {
            out[a] = 0.0;
            continue;
        }
        double v = mu[a] + bump;
        if (std::int32_t s = idx.colive_slot(e); s >= 0) v -= p.gamma * static_cast<double>(colive[static_cast<std::size_t>(s)]);
        for (std::uint32_t h : idx.groups_of_edge(e)) v += p.gamma * static_cast<double>(live[h]);
        out[a] = v;
    }
    if (!normalize_into(out, out)) return false;
    for (std::size_t a = 0; a < k; ++a)
        if (out[a] <= p.theta) out[a] = 0.0;
    return normalize_into(out, out);
}

} // namespace

void Shield::shield_distribution(std::span<const double> mu, StateId q, std::span<double> out) const {
    const std::size_t k = graph_->num_actions(q);
    if (mu.size() != k || out.size() != k)
        throw Error(ErrorCode::DomainMismatch, "distribution size differs from the action count");
    const EdgeId e0 = graph_->edge_begin(q);
    if (shield_pass(*index_, mask_, colive_counts_, live_counts_, params_, mu, 0.0, e0, out)) return;
    if (shield_pass(*index_, mask_, colive_counts_, live_counts_, params_, mu, params_.eps_perturb, e0, out)) return;
    throw Error(ErrorCode::NoSafeAction, "no admissible action at state " + std::to_string(q));
}

Distribution Shield::shield_distribution(const Distribution& mu, StateId q) const {
    Distribution d;
    d.weights.resize(mu.size());
    shield_distribution(mu.weights, q, d.weights);
    return d;
}

void Shield::update_counters(StateId q, ActionIndex a) {
    const EdgeId e = graph_->edge_begin(q) + a;
    if (std::int32_t s = index_->colive_slot(e); s >= 0) ++colive_counts_[static_cast<std::size_t>(s)];
    auto used = index_->groups_of_edge(e);
    for (std::uint32_t h : index_->groups_of_source(q)) {
        if (std::find(used.begin(), used.end(), h) != used.end())
            live_counts_[h] = 0;
        else
            ++live_counts_[h];
    }
}

void Shield::reset_counters() {
    std::fill(colive_counts_.begin(), colive_counts_.end(), 0);
    std::fill(live_counts_.begin(), live_counts_.end(), 0);
}

void Shield::set_params(std::optional<double> gamma, std::optional<double> theta) {
    ShieldParams next = params_;
    if (gamma) next.gamma = *gamma;
    if (theta) next.theta = *theta;
    std::size_t maxdeg = 0;
    for (StateId q = 0; q < graph_->num_sys(); ++q) maxdeg = std::max(maxdeg, graph_->num_actions(q));
    validate(next, maxdeg);
    params_ = next;
}

void Shield::install(Synthesis next, StateId current, ErrorCode outside_code) {
    if (!next.strategy.in_region(current))
        throw Error(outside_code, "current state " + std::to_string(current) + " is outside the combined winning region");
    std::vector<std::uint64_t> colive(next.strategy.colive.size(), 0);
    for (std::size_t i = 0; i < next.strategy.colive.size(); ++i) colive[i] = colive_counter(next.strategy.colive[i]);
    std::map<std::vector<EdgeId>, std::uint64_t> old_groups;
    for (std::size_t i = 0; i < synthesis_.strategy.live_groups.size(); ++i)
        old_groups.emplace(synthesis_.strategy.live_groups[i], live_counts_[i]);
    std::vector<std::uint64_t> live(next.strategy.live_groups.size(), 0);
    for (std::size_t i = 0; i < next.strategy.live_groups.size(); ++i) {
        auto it = old_groups.find(next.strategy.live_groups[i]);
        if (it != old_groups.end()) live[i] = it->second;
    }
    auto idx = std::make_shared<TemplateIndex>(*graph_, next.strategy);
    synthesis_ = std::move(next);
    index_ = std::move(idx);
    colive_counts_ = std::move(colive);
    live_counts_ = std::move(live);
}

void Shield::add_objective(const Synthesis& extra, StateId current) {
    const Synthesis parts[] = {synthesis_, extra};
    install(compose_templates(*graph_, parts), current, ErrorCode::OutsideCombinedRegion);
}

void Shield::remove_objective(std::size_t index, StateId current) {
    if (index >= synthesis_.objectives.size())
        throw Error(ErrorCode::PreconditionViolation, "no objective with index " + std::to_string(index));
    auto objectives = synthesis_.objectives;
    objectives.erase(objectives.begin() + static_cast<std::ptrdiff_t>(index));
    install(synthesize(*graph_, std::move(objectives), synthesis_.disabled), current, ErrorCode::OutsideCombinedRegion);
}

void Shield::set_fault(EdgeId e, FaultKind kind, bool active, StateId current) {
    if (e >= graph_->num_opp()) throw Error(ErrorCode::PreconditionViolation, "fault on unknown edge");
    if (kind == FaultKind::Occasional) {
        mask_[e] = active ? 1 : 0;
        return;
    }
    if (active) {
        auto next = apply_fault(*graph_, synthesis_, e, FaultKind::Persistent);
        install(std::get<Synthesis>(std::move(next)), current, ErrorCode::ConflictUnresolvable);
        return;
    }
    auto disabled = synthesis_.disabled;
    auto it = std::find(disabled.begin(), disabled.end(), e);
    if (it == disabled.end()) return;
    disabled.erase(it);
    install(synthesize(*graph_, synthesis_.objectives, std::move(disabled)), current,
            ErrorCode::ConflictUnresolvable);
}

std::vector<EdgeId> Shield::mask() const {
    std::vector<EdgeId> out;
    for (EdgeId e = 0; e < mask_.size(); ++e)
        if (mask_[e]) out.push_back(e);
    return out;
}

std::uint64_t Shield::colive_counter(EdgeId e) const {
    std::int32_t s = index_->colive_slot(e);
    return s < 0 ? 0 : colive_counts_[static_cast<std::size_t>(s)];
}

double shielding_cost(std::span<const double> tv_per_step, std::span<const double> cost) {
    if (tv_per_step.empty()) throw Error(ErrorCode::EmptyTrace, "shielding cost of an empty run");
    if (!cost.empty() && cost.size() != tv_per_step.size())
        throw Error(ErrorCode::DomainMismatch, "cost weights do not match the run length");
    double s = 0.0;
    for (std::size_t i = 0; i < tv_per_step.size(); ++i) s += (cost.empty() ? 1.0 : cost[i]) * tv_per_step[i];
    return s / static_cast<double>(tv_per_step.size());
}

} // namespace stars
