#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace frdiff {

/// One differentiable quantity: its live values and the analytic gradient computed for them.
struct GradProbe {
    std::string name;
    std::span<double> values;
    std::vector<double> analytic;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst;  // "<probe>[index]"
    std::size_t checked = 0;
    std::size_t skipped = 0;  // probes straddling a kink
};

/// Error floor, as a fraction of the largest analytic gradient in the check. Central
/// differences carry roundoff proportional to |loss|, which would swamp a purely relative
/// measure on near-zero entries.
inline constexpr double kGradFloorFraction = 1e-3;
inline constexpr double kGradFloorMin = 1e-4;

inline double relative_error(double analytic, double numeric, double floor = kGradFloorMin) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

/// Compares analytic gradients against central differences of `loss`.
/// Checks every entry of probes with at most `max_per_probe` entries; larger probes are
/// subsampled with a fixed stride so the run stays deterministic. Entries whose one-sided
/// slopes disagree sharply straddle an activation kink; they are counted in `skipped`.
inline GradCheckResult grad_check(std::vector<GradProbe>& probes, const std::function<double()>& loss,
                                  double eps, std::size_t max_per_probe = 64) {
    GradCheckResult res;
    double scale = 0.0;
    for (const auto& p : probes) {
        if (p.analytic.size() != p.values.size())
            throw ShapeError(concat("grad_check: probe '", p.name, "' analytic size mismatch"));
        for (double g : p.analytic) scale = std::max(scale, std::abs(g));
    }
    const double floor = std::max(kGradFloorMin, kGradFloorFraction * scale);
    const double base = loss();
    for (auto& p : probes) {
        const std::size_t n = p.values.size();
        const std::size_t stride = n > max_per_probe ? (n + max_per_probe - 1) / max_per_probe : 1;
        for (std::size_t i = 0; i < n; i += stride) {
            const double orig = p.values[i];
            p.values[i] = orig + eps;
            const double up = loss();
            p.values[i] = orig - eps;
            const double down = loss();
            p.values[i] = orig;
            const double fwd = (up - base) / eps, bwd = (base - down) / eps;
            if (std::abs(fwd - bwd) > 0.1 * std::max({std::abs(fwd), std::abs(bwd), floor})) {
                ++res.skipped;
                continue;
            }
            const double numeric = 0.5 * (fwd + bwd);
            const double err = relative_error(p.analytic[i], numeric, floor);
            ++res.checked;
            if (err > res.max_rel_error || !std::isfinite(err)) {
                res.max_rel_error = std::isfinite(err) ? err : INFINITY;
                res.worst = concat(p.name, "[", i, "] analytic=", p.analytic[i], " numeric=", numeric);
            }
        }
    }
    return res;
}

inline GradProbe probe(Param<double>& p) {
    return {p.name, std::span<double>(p.value), p.grad};
}

inline GradProbe probe(const std::string& name, Tensor3<double>& t, const Tensor3<double>& grad) {
    return {name, t.values(), std::vector<double>(grad.values().begin(), grad.values().end())};
}

inline std::vector<GradProbe> probes(const ParamList<double>& params) {
    std::vector<GradProbe> out;
    for (auto* p : params) out.push_back(probe(*p));
    return out;
}

/// Random projection weights so a scalar loss sum(r * y) exercises every output entry.
inline Tensor3<double> random_weights_like(const Tensor3<double>& y, Rng& rng) {
    Tensor3<double> r(y.channels(), y.height(), y.width());
    fill_uniform(r, rng, -1.0, 1.0);
    return r;
}

inline double dot(const Tensor3<double>& a, const Tensor3<double>& b) {
    a.require_same(b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

} // namespace frdiff
