#include "stars/distribution.hpp"

#include <cmath>

#include "stars/errors.hpp"

namespace stars {

bool normalize_into(std::span<const double> raw, std::span<double> out) noexcept {
    double total = 0.0;
    for (double x : raw)
        if (x > 0.0) total += x;
    if (!(total > 0.0) || !std::isfinite(total)) return false;
    for (std::size_t i = 0; i < raw.size(); ++i)
        out[i] = raw[i] > 0.0 ? raw[i] / total : 0.0;
    return true;
}

Distribution normalize(std::span<const double> raw) {
    Distribution d;
    d.weights.resize(raw.size());
    if (!normalize_into(raw, d.weights))
        throw Error(ErrorCode::DegenerateDistribution,
                    "no positive weight left after clamping");
    return d;
}

double tv_distance(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size())
        throw Error(ErrorCode::DomainMismatch, "distributions over different action sets");
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
    return 0.5 * s;
}

double tv_distance(const Distribution& p, const Distribution& q) {
    return tv_distance(std::span<const double>(p.weights), std::span<const double>(q.weights));
}

std::size_t sample_index(std::span<const double> weights, double u) noexcept {
    double acc = 0.0;
    std::size_t last = weights.size();
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (weights[i] <= 0.0) continue;
        acc += weights[i];
        last = i;
        if (u < acc) return i;
    }
    // Rounding left u above the accumulated mass: take the last supported entry.
    return last;
}

} // namespace stars
