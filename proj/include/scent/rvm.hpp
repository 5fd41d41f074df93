#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "scent/error.hpp"
#include "scent/linalg.hpp"

namespace scent {

// --- basis functions ------------------------------------------------------

enum class BasisKind { Rbf, Linear, Composite };

/// Maps an input vector x onto basis responses phi(x).
///
/// Rbf:       exp(-|x - c_j|^2 / (2 w^2)) for every center c_j.
/// Linear:    the input coordinates themselves.
/// Composite: products x_i * x_j for every i < split <= j, i.e. every
///            interaction between the leading block (archetype intensities)
///            and the trailing block (note descriptors), row-major over i.
/// A constant bias column is appended last when include_bias is set.
struct BasisConfig {
    BasisKind kind = BasisKind::Composite;
    double rbf_width = 1.0;
    std::vector<Vector> centers;
    bool include_bias = true;
    std::size_t composite_split = 10;

    void validate() const {
        if (kind == BasisKind::Rbf) {
            require(std::isfinite(rbf_width) && rbf_width > 0.0, ErrorCode::InvalidArgument, "rbf_width must be > 0");
            require(!centers.empty(), ErrorCode::InvalidArgument, "RBF basis needs at least one center");
            for (const auto& c : centers) {
                require(c.size() == centers.front().size(), ErrorCode::DimensionMismatch,
                        "RBF centers differ in dimension");
                require(c.allFinite(), ErrorCode::NonFiniteFeature, "RBF center is not finite");
            }
        }
        if (kind == BasisKind::Composite) {
            require(composite_split > 0, ErrorCode::InvalidArgument, "composite_split must be > 0");
        }
    }

    [[nodiscard]] std::size_t basis_count(std::size_t input_dim) const {
        std::size_t m = 0;
        switch (kind) {
        case BasisKind::Rbf: m = centers.size(); break;
        case BasisKind::Linear: m = input_dim; break;
        case BasisKind::Composite:
            m = input_dim > composite_split ? composite_split * (input_dim - composite_split) : 0;
            break;
        }
        return m + (include_bias ? 1 : 0);
    }
};

inline std::vector<std::string> basis_names(const BasisConfig& cfg, std::span<const std::string> input_names) {
    std::vector<std::string> names;
    switch (cfg.kind) {
    case BasisKind::Rbf:
        for (std::size_t j = 0; j < cfg.centers.size(); ++j) names.push_back("rbf" + std::to_string(j));
        break;
    case BasisKind::Linear:
        names.assign(input_names.begin(), input_names.end());
        break;
    case BasisKind::Composite:
        for (std::size_t i = 0; i < cfg.composite_split && i < input_names.size(); ++i) {
            for (std::size_t j = cfg.composite_split; j < input_names.size(); ++j) {
                names.push_back(input_names[i] + "*" + input_names[j]);
            }
        }
        break;
    }
    if (cfg.include_bias) names.emplace_back("bias");
    return names;
}

inline Vector basis_row(const Vector& x, const BasisConfig& cfg) {
    require(x.allFinite(), ErrorCode::NonFiniteFeature, "input feature vector is not finite");
    const auto dim = static_cast<std::size_t>(x.size());
    Vector row(static_cast<Eigen::Index>(cfg.basis_count(dim)));
    Eigen::Index col = 0;
    switch (cfg.kind) {
    case BasisKind::Rbf: {
        const double denom = 2.0 * cfg.rbf_width * cfg.rbf_width;
        for (const auto& c : cfg.centers) {
            require(c.size() == x.size(), ErrorCode::DimensionMismatch, "input and RBF center differ in dimension");
            row[col++] = std::exp(-(x - c).squaredNorm() / denom);
        }
        break;
    }
    case BasisKind::Linear:
        row.head(x.size()) = x;
        col = x.size();
        break;
    case BasisKind::Composite: {
        require(dim > cfg.composite_split, ErrorCode::DimensionMismatch,
                "composite basis input must be longer than composite_split");
        const auto split = static_cast<Eigen::Index>(cfg.composite_split);
        for (Eigen::Index i = 0; i < split; ++i) {
            for (Eigen::Index j = split; j < x.size(); ++j) {
                row[col++] = x[i] * x[j];
            }
        }
        break;
    }
    }
    if (cfg.include_bias) row[col] = 1.0;
    return row;
}

struct DesignMatrix {
    Matrix values;                      // n x m, values(i, j) = phi_j(x_i)
    std::vector<std::string> row_ids;
    std::vector<std::string> column_names;

    [[nodiscard]] Eigen::Index rows() const { return values.rows(); }
    [[nodiscard]] Eigen::Index cols() const { return values.cols(); }
};

inline DesignMatrix build_design(std::span<const Vector> inputs, const BasisConfig& cfg,
                                 std::span<const std::string> input_names = {}) {
    cfg.validate();
    DesignMatrix out;
    if (inputs.empty()) {
        return out;
    }
    const auto dim = inputs.front().size();
    out.values.resize(static_cast<Eigen::Index>(inputs.size()),
                      static_cast<Eigen::Index>(cfg.basis_count(static_cast<std::size_t>(dim))));
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        require(inputs[i].size() == dim, ErrorCode::DimensionMismatch, "design inputs differ in dimension");
        out.values.row(static_cast<Eigen::Index>(i)) = basis_row(inputs[i], cfg).transpose();
    }
    if (!input_names.empty()) {
        out.column_names = basis_names(cfg, input_names);
    }
    return out;
}

// --- Gaussian weight posterior --------------------------------------------

struct GaussianPosterior {
    Vector mean;
    Matrix covariance;
};

/// Sigma = (Phi^T Phi / noise + diag(alpha))^-1, mean = Sigma Phi^T y / noise, via Cholesky.
inline GaussianPosterior posterior(const Matrix& phi, const Vector& y, const Vector& alpha, double noise) {
    require(phi.rows() == y.size(), ErrorCode::DimensionMismatch, "posterior: Phi rows and y length differ");
    require(phi.cols() == alpha.size(), ErrorCode::DimensionMismatch, "posterior: Phi columns and alpha differ");
    require(std::isfinite(noise) && noise > 0.0, ErrorCode::InvalidArgument, "posterior: noise must be > 0");
    require((alpha.array() > 0.0).all() && alpha.allFinite(), ErrorCode::InvalidArgument,
            "posterior: alpha must be positive and finite");
    Matrix precision = phi.transpose() * phi / noise;
    precision.diagonal() += alpha;
    const auto chol = linalg::cholesky(precision);
    GaussianPosterior out;
    out.covariance = chol.inverse();
    out.mean = chol.llt.solve(phi.transpose() * y) / noise;
    return out;
}

/// Rank-one conjugate update with one observation y = w^T row + eps, eps ~ N(0, noise).
inline GaussianPosterior absorb_observation(const GaussianPosterior& prior, const Vector& row, double target,
                                            double noise) {
    require(row.size() == prior.mean.size(), ErrorCode::DimensionMismatch, "observation row has wrong length");
    const Vector s_row = prior.covariance * row;
    const double innovation_var = noise + row.dot(s_row);
    GaussianPosterior out;
    out.mean = prior.mean + s_row * ((target - row.dot(prior.mean)) / innovation_var);
    out.covariance = linalg::symmetrize(prior.covariance - s_row * s_row.transpose() / innovation_var);
    return out;
}

/// One-shot posterior of a Gaussian prior and all rows at once, in information form.
inline GaussianPosterior batch_posterior(const GaussianPosterior& prior, const Matrix& rows, const Vector& targets,
                                         double noise) {
    require(rows.rows() == targets.size(), ErrorCode::DimensionMismatch, "batch rows and targets differ");
    if (rows.rows() == 0) {
        return prior;
    }
    const auto prior_chol = linalg::cholesky(prior.covariance);
    Matrix precision = prior_chol.inverse() + rows.transpose() * rows / noise;
    Vector info = prior_chol.llt.solve(prior.mean) + rows.transpose() * targets / noise;
    const auto chol = linalg::cholesky(linalg::symmetrize(precision));
    return {chol.llt.solve(info), chol.inverse()};
}

// --- evidence maximization ------------------------------------------------

struct RvmConfig {
    // (a - 1) / b must sit well above prune_threshold, otherwise the MAP update
    // caps irrelevant precisions below it and nothing is ever pruned.
    double gamma_shape = 1.5;
    double gamma_rate = 1e-10;
    double prune_threshold = 1e8;
    int max_iters = 1000;
    double tol = 1e-4;
    double init_alpha = 1.0;
    double init_noise = 0.0;  // <= 0 selects 0.1 * var(y)

    void validate() const {
        require(gamma_shape > 0.0 && gamma_rate > 0.0, ErrorCode::InvalidArgument, "Gamma hyperprior must be positive");
        require(prune_threshold > 0.0 && tol > 0.0 && init_alpha > 0.0, ErrorCode::InvalidArgument,
                "prune_threshold, tol and init_alpha must be positive");
        require(max_iters >= 1, ErrorCode::InvalidArgument, "max_iters must be >= 1");
    }
};

struct FitInfo {
    bool converged = false;
    int iterations = 0;
    int em_fallbacks = 0;
    /// Hyperprior-augmented log evidence after every accepted iteration (index 0 = initial state).
    std::vector<double> objective_trace;
};

/// Posterior over the active basis functions. `alpha` and `active` span all m
/// basis functions; `mean` and `covariance` are restricted to the active ones.
struct WeightPosterior {
    Vector mean;
    Matrix covariance;
    Vector alpha;
    double noise_variance = 1.0;
    std::vector<bool> active;
    FitInfo fit;

    [[nodiscard]] std::size_t basis_count() const { return active.size(); }

    [[nodiscard]] std::vector<std::size_t> active_indices() const {
        std::vector<std::size_t> idx;
        for (std::size_t j = 0; j < active.size(); ++j) {
            if (active[j]) idx.push_back(j);
        }
        return idx;
    }

    /// Picks the active entries out of a full-length basis row.
    [[nodiscard]] Vector restrict(const Vector& full_row) const {
        require(static_cast<std::size_t>(full_row.size()) == active.size(), ErrorCode::DimensionMismatch,
                "basis row length does not match the model's basis count");
        const auto idx = active_indices();
        Vector out(static_cast<Eigen::Index>(idx.size()));
        for (std::size_t k = 0; k < idx.size(); ++k) {
            out[static_cast<Eigen::Index>(k)] = full_row[static_cast<Eigen::Index>(idx[k])];
        }
        return out;
    }

    [[nodiscard]] Matrix restrict_columns(const Matrix& phi) const {
        const auto idx = active_indices();
        Matrix out(phi.rows(), static_cast<Eigen::Index>(idx.size()));
        for (std::size_t k = 0; k < idx.size(); ++k) {
            out.col(static_cast<Eigen::Index>(k)) = phi.col(static_cast<Eigen::Index>(idx[k]));
        }
        return out;
    }

    [[nodiscard]] Vector active_alpha() const { return restrict(alpha); }

    /// Full-length mean with zeros at pruned basis functions.
    [[nodiscard]] Vector full_mean() const {
        Vector out = Vector::Zero(static_cast<Eigen::Index>(active.size()));
        const auto idx = active_indices();
        for (std::size_t k = 0; k < idx.size(); ++k) {
            out[static_cast<Eigen::Index>(idx[k])] = mean[static_cast<Eigen::Index>(k)];
        }
        return out;
    }
};

namespace detail {

inline double log_gamma_density(double x, double shape, double rate) {
    return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

struct EvidenceState {
    GaussianPosterior post;
    double log_det_precision = 0.0;
    double residual_sq = 0.0;
    double objective = 0.0;
};

inline EvidenceState evaluate(const Matrix& phi, const Vector& y, const Vector& alpha, double noise,
                              const RvmConfig& cfg) {
    const auto n = static_cast<double>(y.size());
    Matrix precision = phi.transpose() * phi / noise;
    precision.diagonal() += alpha;
    const auto chol = linalg::cholesky(precision);
    EvidenceState s;
    s.post.covariance = chol.inverse();
    s.post.mean = chol.llt.solve(phi.transpose() * y) / noise;
    s.log_det_precision = chol.log_det();
    s.residual_sq = (y - phi * s.post.mean).squaredNorm();
    // log N(y | 0, noise I + Phi A^-1 Phi^T), expanded through the m x m posterior.
    const double log_det_c = s.log_det_precision + n * std::log(noise) - alpha.array().log().sum();
    const double quad = s.residual_sq / noise + s.post.mean.dot(alpha.cwiseProduct(s.post.mean));
    double obj = -0.5 * (n * std::log(2.0 * std::numbers::pi) + log_det_c + quad);
    for (Eigen::Index j = 0; j < alpha.size(); ++j) {
        obj += log_gamma_density(alpha[j], cfg.gamma_shape, cfg.gamma_rate);
    }
    s.objective = obj;
    return s;
}

}  // namespace detail

/// Hyperprior-augmented log marginal likelihood of the active set:
/// log p(y | alpha, noise) + sum_j log Gamma(alpha_j | a, b).
inline double augmented_log_evidence(const Matrix& phi_active, const Vector& y, const Vector& alpha_active,
                                     double noise, const RvmConfig& cfg) {
    return detail::evaluate(phi_active, y, alpha_active, noise, cfg).objective;
}

/// Type-II maximum likelihood with MAP Gamma hyperpriors on alpha.
///
/// Each iteration proposes the MacKay fixed-point update
///   gamma_j = 1 - alpha_j Sigma_jj
///   alpha_j <- (gamma_j + 2(a - 1)) / (mu_j^2 + 2b)
///   noise   <- |y - Phi mu|^2 / (n - sum gamma)
/// and prunes basis j once alpha_j exceeds prune_threshold. A proposal that
/// would lower the augmented evidence is replaced by the EM update
/// alpha_j <- (2a - 1) / (mu_j^2 + Sigma_jj + 2b), which cannot.
inline WeightPosterior fit_evidence(const Matrix& phi, const Vector& y, const RvmConfig& cfg = {}) {
    cfg.validate();
    require(phi.rows() >= 1, ErrorCode::InsufficientData, "fit_evidence needs at least one observation");
    require(phi.rows() == y.size(), ErrorCode::DimensionMismatch, "fit_evidence: Phi rows and y length differ");
    require(phi.allFinite() && y.allFinite(), ErrorCode::NonFiniteFeature, "fit_evidence: non-finite input");

    const auto n = static_cast<double>(y.size());
    const auto m = static_cast<std::size_t>(phi.cols());

    double noise = cfg.init_noise;
    if (!(noise > 0.0)) {
        const double var_y = n > 1 ? (y.array() - y.mean()).square().sum() / (n - 1.0) : 0.0;
        noise = var_y > 0.0 ? 0.1 * var_y : std::max(1e-6, 0.1 * y.squaredNorm() / n);
    }

    WeightPosterior out;
    out.alpha = Vector::Constant(static_cast<Eigen::Index>(m), cfg.init_alpha);
    out.active.assign(m, true);

    auto columns = [&](const std::vector<bool>& mask) {
        WeightPosterior tmp;
        tmp.active = mask;
        return tmp.restrict_columns(phi);
    };
    auto alphas = [&](const Vector& alpha, const std::vector<bool>& mask) {
        WeightPosterior tmp;
        tmp.active = mask;
        return tmp.restrict(alpha);
    };

    std::vector<bool> active = out.active;
    Vector alpha = out.alpha;
    Matrix phi_a = columns(active);
    auto state = detail::evaluate(phi_a, y, alphas(alpha, active), noise, cfg);
    out.fit.objective_trace.push_back(state.objective);

    const double a_term = 2.0 * (cfg.gamma_shape - 1.0);
    const double b_term = 2.0 * cfg.gamma_rate;

    for (int iter = 1; iter <= cfg.max_iters; ++iter) {
        const auto idx = [&] {
            WeightPosterior tmp;
            tmp.active = active;
            return tmp.active_indices();
        }();
        const Vector& mu = state.post.mean;
        const Vector sigma_diag = state.post.covariance.diagonal();

        auto propose = [&](bool em) {
            Vector next_alpha = alpha;
            double gamma_sum = 0.0;
            for (std::size_t k = 0; k < idx.size(); ++k) {
                const auto kk = static_cast<Eigen::Index>(k);
                const auto j = static_cast<Eigen::Index>(idx[k]);
                const double g = std::clamp(1.0 - alpha[j] * sigma_diag[kk], 0.0, 1.0);
                gamma_sum += g;
                const double mu2 = mu[kk] * mu[kk];
                double proposal = em ? (1.0 + a_term) / (mu2 + sigma_diag[kk] + b_term)
                                     : (g + a_term) / (mu2 + b_term);
                if (!std::isfinite(proposal) || proposal <= 0.0) {
                    proposal = std::numeric_limits<double>::max();  // pruned below; kept finite for JSON
                }
                next_alpha[j] = proposal;
            }
            double next_noise = noise;
            if (em) {
                const double trace_term = (phi_a * state.post.covariance).cwiseProduct(phi_a).sum();
                next_noise = (state.residual_sq + trace_term) / n;
            } else {
                const double dof = n - gamma_sum;
                next_noise = dof > 1e-12 ? state.residual_sq / dof : noise;
            }
            // One point cannot separate noise from weight variance; keep the initial level.
            if (n < 2.0) next_noise = noise;
            next_noise = std::max(next_noise, 1e-12);
            return std::pair{next_alpha, next_noise};
        };

        bool accepted = false;
        bool used_em = false;
        std::vector<bool> next_active;
        Vector next_alpha;
        double next_noise = noise;
        decltype(state) next_state;
        for (bool em : {false, true}) {
            auto [cand_alpha, cand_noise] = propose(em);
            std::vector<bool> cand_active = active;
            for (std::size_t j : idx) {
                if (cand_alpha[static_cast<Eigen::Index>(j)] > cfg.prune_threshold) {
                    cand_active[j] = false;
                }
            }
            if (std::none_of(cand_active.begin(), cand_active.end(), [](bool b) { return b; })) {
                if (!em) continue;  // the EM step is smoother; try it before giving up
                fail(ErrorCode::AllPruned, "every basis function was pruned");
            }
            auto cand_state =
                detail::evaluate(columns(cand_active), y, alphas(cand_alpha, cand_active), cand_noise, cfg);
            if (cand_state.objective >= state.objective - 1e-10 || em) {
                if (em && cand_state.objective < state.objective - 1e-10) {
                    break;  // EM cannot improve either: numerically stationary.
                }
                next_active = std::move(cand_active);
                next_alpha = std::move(cand_alpha);
                next_noise = cand_noise;
                next_state = std::move(cand_state);
                accepted = true;
                used_em = em;
                break;
            }
        }
        out.fit.iterations = iter;
        if (!accepted) {
            out.fit.converged = true;
            break;
        }
        if (used_em) ++out.fit.em_fallbacks;

        double max_change = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            if (active[j] && next_active[j]) {
                const auto jj = static_cast<Eigen::Index>(j);
                max_change = std::max(max_change, std::abs(std::log(next_alpha[jj]) - std::log(alpha[jj])));
            }
        }
        const bool pruned_now = next_active != active;
        active = std::move(next_active);
        alpha = std::move(next_alpha);
        noise = next_noise;
        phi_a = columns(active);
        state = std::move(next_state);
        out.fit.objective_trace.push_back(state.objective);
        if (!pruned_now && max_change < cfg.tol) {
            out.fit.converged = true;
            break;
        }
    }

    out.alpha = alpha;
    out.active = active;
    out.noise_variance = noise;
    out.mean = state.post.mean;
    out.covariance = state.post.covariance;
    return out;
}

// --- prediction -----------------------------------------------------------

inline constexpr double kDefaultPleasantThreshold = 0.5;

struct Prediction {
    double mean = 0.0;
    double variance = 1.0;
    double pleasant_probability = 0.5;
};

/// Predictive distribution for a basis row restricted to the active set.
inline Prediction predict(const Vector& mean, const Matrix& covariance, double noise, const Vector& phi_row,
                          double threshold = kDefaultPleasantThreshold) {
    require(phi_row.size() == mean.size(), ErrorCode::DimensionMismatch, "predict: basis row has wrong length");
    Prediction p;
    p.mean = mean.dot(phi_row);
    p.variance = noise + std::max(0.0, phi_row.dot(covariance * phi_row));
    p.pleasant_probability = linalg::normal_cdf((p.mean - threshold) / std::sqrt(p.variance));
    return p;
}

inline Prediction predict(const WeightPosterior& post, const Vector& phi_row,
                          double threshold = kDefaultPleasantThreshold) {
    return predict(post.mean, post.covariance, post.noise_variance, phi_row, threshold);
}

}  // namespace scent
