#pragma once

// Brute-force reference computations. None of these share a code path with
// the engine routines they are used to check.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/QR>

#include "scent/error.hpp"
#include "scent/linalg.hpp"
#include "scent/note_bayes.hpp"

namespace scent::oracle {

struct GridSpec {
    std::size_t points = 2001;
    double half_width_sd = 8.0;
    // Explicit bounds override the automatic +-half_width_sd range.
    std::optional<double> lower;
    std::optional<double> upper;
};

struct Moments {
    double mean = 0.0;
    double variance = 0.0;
};

namespace detail {

inline double trapezoid(const std::vector<double>& f, double h, std::size_t stride) {
    double sum = 0.0;
    const std::size_t last = ((f.size() - 1) / stride) * stride;
    for (std::size_t i = 0; i <= last; i += stride) {
        const double w = (i == 0 || i == last) ? 0.5 : 1.0;
        sum += w * f[i];
    }
    return sum * h * static_cast<double>(stride);
}

}  // namespace detail

/// Posterior moments of N(prior) x N(obs | x) by quadrature on a uniform grid.
///
/// The automatic range spans both means padded by half_width_sd times the
/// smaller of the two standard deviations, which bounds the posterior sd.
/// Throws GridTooCoarse when the grid cannot resolve the mass to 1e-8: either
/// the density has not decayed at the edges, or halving the resolution changes
/// the integral.
inline Moments grid_posterior(double prior_mean, double prior_var, double obs_mean, double obs_var,
                              const GridSpec& grid = {}) {
    require(prior_var > 0.0 && obs_var > 0.0, ErrorCode::InvalidArgument, "grid oracle variances must be > 0");
    require(grid.points >= 3, ErrorCode::InvalidArgument, "grid oracle needs at least 3 points");
    const double sd = std::sqrt(std::min(prior_var, obs_var));
    const double lo = grid.lower.value_or(std::min(prior_mean, obs_mean) - grid.half_width_sd * sd);
    const double hi = grid.upper.value_or(std::max(prior_mean, obs_mean) + grid.half_width_sd * sd);
    require(hi > lo, ErrorCode::InvalidArgument, "grid oracle bounds are empty");

    std::size_t points = grid.points;
    if (!grid.lower && !grid.upper) {
        // keep at least ~40 points per posterior sd
        const auto needed = static_cast<std::size_t>(std::ceil((hi - lo) / (sd / 40.0))) + 1;
        points = std::max(points, needed | 1U);
    }
    const double h = (hi - lo) / static_cast<double>(points - 1);

    std::vector<double> xs(points);
    std::vector<double> logf(points);
    for (std::size_t i = 0; i < points; ++i) {
        const double x = lo + h * static_cast<double>(i);
        xs[i] = x;
        logf[i] = -0.5 * (x - prior_mean) * (x - prior_mean) / prior_var -
                  0.5 * (x - obs_mean) * (x - obs_mean) / obs_var;
    }
    const double peak = *std::max_element(logf.begin(), logf.end());
    std::vector<double> f(points);
    for (std::size_t i = 0; i < points; ++i) f[i] = std::exp(logf[i] - peak);

    const double mass = detail::trapezoid(f, h, 1);
    const double coarse = detail::trapezoid(f, h, 2);
    const double edge = std::max(f.front(), f.back()) * (hi - lo) / mass;
    const double mass_error = std::abs(mass - coarse) / mass + edge;
    require(mass_error <= 1e-8, ErrorCode::GridTooCoarse, "grid cannot resolve the posterior mass to 1e-8");

    std::vector<double> xf(points);
    for (std::size_t i = 0; i < points; ++i) xf[i] = xs[i] * f[i];
    const double mean = detail::trapezoid(xf, h, 1) / mass;
    std::vector<double> vf(points);
    for (std::size_t i = 0; i < points; ++i) vf[i] = (xs[i] - mean) * (xs[i] - mean) * f[i];
    return {mean, detail::trapezoid(vf, h, 1) / mass};
}

/// P(H_F | outcomes) by summing the full joint over (H_F, H_T, H_M, H_B).
inline double pleasantness_by_enumeration(const PleasantnessModel& model, const std::array<Outcome, 3>& outcomes) {
    double numer = 0.0;
    double denom = 0.0;
    for (int code = 0; code < 16; ++code) {
        const bool f = (code & 1) != 0;
        const std::array<bool, 3> notes = {(code & 2) != 0, (code & 4) != 0, (code & 8) != 0};
        double joint = f ? model.p_f : 1.0 - model.p_f;
        bool consistent = true;
        for (std::size_t l = 0; l < 3; ++l) {
            const double p_pleasant = f ? model.layers[l].if_pleasant : model.layers[l].if_unpleasant;
            joint *= notes[l] ? p_pleasant : 1.0 - p_pleasant;
            consistent = consistent && (notes[l] == (outcomes[l] == Outcome::Pleasant));
        }
        if (!consistent) continue;
        denom += joint;
        if (f) numer += joint;
    }
    require(denom > 0.0, ErrorCode::ZeroEvidence, "outcomes are impossible under the model");
    return numer / denom;
}

/// Ridge solution of min |y - Phi w|^2 / noise + alpha |w|^2 through a
/// column-pivoted QR of the stacked least-squares system.
inline Vector ridge_solve(const Matrix& phi, const Vector& y, double alpha, double noise) {
    const auto n = phi.rows();
    const auto m = phi.cols();
    const double root = std::sqrt(alpha * noise);
    Matrix stacked(n + m, m);
    stacked << phi, Matrix::Identity(m, m) * root;
    Vector rhs = Vector::Zero(n + m);
    rhs.head(n) = y;
    return stacked.colPivHouseholderQr().solve(rhs);
}

}  // namespace scent::oracle
