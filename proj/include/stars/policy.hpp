#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "stars/mdp.hpp"
#include "stars/mdp_io.hpp"

namespace stars {

/// Memoryless stochastic policy: one weight vector per state, indexed by the
/// state's local action order.
struct TabularPolicy {
    std::vector<std::vector<double>> weights;

    std::span<const double> at(StateId q) const { return weights[q]; }
    bool operator==(const TabularPolicy&) const = default;
};

/// Each row normalized; throws InvalidMdp on a shape mismatch and
/// DegenerateDistribution on a row without positive weight.
void validate_policy(const TabularPolicy& p, const Mdp& mdp);

TabularPolicy uniform_policy(const Mdp& mdp);

/// {"q": {"a": w, ...}, ...}; missing actions get weight 0.
ordered_json policy_to_json(const TabularPolicy& p, const Mdp& mdp);
TabularPolicy policy_from_json(const json& j, const Mdp& mdp);
TabularPolicy load_policy(const std::filesystem::path& path, const Mdp& mdp);

} // namespace stars
