#pragma once

#include <span>
#include <vector>

namespace stars {

/// Sum tolerance shared by every probability check in the library.
inline constexpr double kProbTolerance = 1e-9;

/// Weights indexed by the owning state's local action index.
struct Distribution {
    std::vector<double> weights;

    std::size_t size() const { return weights.size(); }
    double operator[](std::size_t i) const { return weights[i]; }
    bool operator==(const Distribution&) const = default;
};

/// Clamp negatives to 0 and rescale to sum 1.
/// Throws DegenerateDistribution when nothing positive remains.
Distribution normalize(std::span<const double> raw);

/// Allocation-free variant for hot loops; `out` may alias `raw`.
/// Returns false (leaving `out` unspecified) when the input is degenerate.
bool normalize_into(std::span<const double> raw, std::span<double> out) noexcept;

/// Half the L1 distance. Throws DomainMismatch on size mismatch.
double tv_distance(std::span<const double> p, std::span<const double> q);
double tv_distance(const Distribution& p, const Distribution& q);

/// Inverse-CDF draw over the canonical index order; u in [0,1).
/// Zero-weight entries are never returned.
std::size_t sample_index(std::span<const double> weights, double u) noexcept;

} // namespace stars
