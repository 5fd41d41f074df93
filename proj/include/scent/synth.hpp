#pragma once

// Synthetic populations with known ground truth.
//
// Randomness comes only from std::mt19937_64, whose output sequence is fixed
// by the C++ standard. Uniform doubles take the top 53 bits of each draw and
// normals use the Marsaglia polar method. std::*_distribution is never used
// because its output is implementation-defined. The draws are therefore
// portable; derived values go through libm (log, sqrt, exp), so last-bit
// agreement across platforms is likely but not guaranteed.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "scent/archetype.hpp"
#include "scent/engine.hpp"
#include "scent/error.hpp"
#include "scent/linalg.hpp"
#include "scent/oracles.hpp"
#include "scent/records.hpp"
#include "scent/rvm.hpp"

namespace scent::synth {

inline constexpr std::string_view kPrngName = "mt19937_64";
inline constexpr std::string_view kNormalMethod = "marsaglia_polar";

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u = 0.0;
        double v = 0.0;
        double s = 0.0;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double factor = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * factor;
        has_spare_ = true;
        return u * factor;
    }

    /// Student-t with `dof` degrees of freedom (integer dof via chi-square sum).
    double student_t(int dof) {
        double chi2 = 0.0;
        for (int i = 0; i < dof; ++i) {
            const double z = normal();
            chi2 += z * z;
        }
        return normal() / std::sqrt(chi2 / dof);
    }

    std::size_t categorical(std::span<const double> probs) {
        double total = 0.0;
        for (double p : probs) total += p;
        double u = uniform() * total;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            if (u < probs[i]) return i;
            u -= probs[i];
        }
        return probs.size() - 1;
    }

    std::size_t index(std::size_t n) { return std::min(n - 1, static_cast<std::size_t>(uniform() * n)); }

    bool bernoulli(double p) { return uniform() < p; }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

struct CategoricalMix {
    std::string name;
    std::vector<std::string> levels;
    std::vector<double> probabilities;
};

struct DemographicMix {
    std::string age_name = "age";
    double age_mean = 38.0;
    double age_sd = 12.0;
    std::vector<CategoricalMix> categorical = {
        {"gender", {"female", "male", "nonbinary"}, {0.48, 0.46, 0.06}},
        {"culture", {"east_asian", "european", "latin", "south_asian"}, {0.25, 0.35, 0.2, 0.2}},
    };
};

struct GeneratorConfig {
    std::uint64_t seed = 42;
    std::size_t n_users = 100;
    std::size_t tastings_per_user = 1;
    std::size_t n_fragrances = 30;
    std::vector<std::string> descriptor_names = {"citrus", "floral", "woody", "spicy", "musky"};
    /// Sparse weights over the archetype x descriptor interaction basis,
    /// keyed by basis index (archetype * n_descriptors + descriptor).
    std::map<std::size_t, double> true_mapping = {{3, 0.6}, {17, -0.5}, {42, 0.55}};
    double intercept = 0.35;
    double noise_sd = 0.05;
    bool heavy_tailed_noise = false;  // Student-t(3) scaled to noise_sd; misspecified regime
    DemographicMix demographic_mix;
    double archetype_sd = 0.2;
    double questionnaire_noise_sd = 0.03;
    double scale_min = 1.0;
    double scale_max = 5.0;
    std::size_t behaviors_per_user = 2;
    double behavior_noise_sd = 0.05;

    void validate() const {
        require(n_users >= 1, ErrorCode::InvalidArgument, "n_users must be >= 1");
        require(tastings_per_user >= 1 && n_fragrances >= 1, ErrorCode::InvalidArgument,
                "tastings_per_user and n_fragrances must be >= 1");
        require(noise_sd > 0.0 && std::isfinite(noise_sd), ErrorCode::InvalidArgument, "noise_sd must be > 0");
        require(!descriptor_names.empty(), ErrorCode::InvalidArgument, "need at least one descriptor");
        require(scale_min < scale_max, ErrorCode::InvalidArgument, "questionnaire scale is empty");
        const auto m = kArchetypeCount * descriptor_names.size();
        for (const auto& [j, w] : true_mapping) {
            require(j < m, ErrorCode::InvalidArgument, "true_mapping index outside the interaction basis");
            require(std::isfinite(w), ErrorCode::InvalidArgument, "true_mapping weight is not finite");
        }
        require(std::isfinite(intercept), ErrorCode::InvalidArgument, "intercept is not finite");
    }

    [[nodiscard]] std::size_t basis_count() const { return kArchetypeCount * descriptor_names.size() + 1; }

    /// Full-length true weights over the composite basis with trailing bias.
    [[nodiscard]] Vector true_weights() const {
        Vector w = Vector::Zero(static_cast<Eigen::Index>(basis_count()));
        for (const auto& [j, v] : true_mapping) w[static_cast<Eigen::Index>(j)] = v;
        w[w.size() - 1] = intercept;
        return w;
    }
};

struct GroundTruth {
    Vector weights;                            // composite basis + bias
    std::vector<std::size_t> active;           // true_mapping indices
    Vector mu_a;
    Matrix beta;
    Matrix sigma_a;
    std::map<std::string, Vector> archetypes;  // true a_i per user
    std::vector<double> true_preference;       // clamped noiseless rating per ratings row
    double noise_sd = 0.0;
    double questionnaire_noise_sd = 0.0;
    std::uint64_t seed = 0;
    std::size_t n_users = 0;
};

struct Corpus {
    std::vector<UserRecord> users;
    std::vector<RatingRow> ratings;
    Catalog catalog;
    GroundTruth truth;
    DemographicEncoding encoding;
};

inline double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

inline BasisConfig truth_basis() {
    BasisConfig b;
    b.kind = BasisKind::Composite;
    b.composite_split = kArchetypeCount;
    b.include_bias = true;
    return b;
}

/// Noiseless preference of archetype vector `a` for one layer descriptor.
inline double true_preference(const GroundTruth& truth, const Vector& a, const Vector& descriptor) {
    return clamp01(truth.weights.dot(basis_row(session_input(a, descriptor), truth_basis())));
}

inline DemographicEncoding generator_encoding(const DemographicMix& mix) {
    std::vector<DemographicFeature> features;
    features.push_back({mix.age_name, FeatureEncoding::Numeric, mix.age_mean, mix.age_sd, {}, {}});
    for (const auto& c : mix.categorical) {
        features.push_back({c.name, FeatureEncoding::Categorical, 0.0, 1.0, c.levels, c.levels.front()});
    }
    return DemographicEncoding(std::move(features));
}

inline Corpus generate_population(const GeneratorConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    Corpus out;
    out.encoding = generator_encoding(cfg.demographic_mix);
    const auto d = static_cast<Eigen::Index>(out.encoding.dimension());
    const auto k = static_cast<Eigen::Index>(kArchetypeCount);
    const auto n_desc = static_cast<Eigen::Index>(cfg.descriptor_names.size());

    auto& truth = out.truth;
    truth.weights = cfg.true_weights();
    for (const auto& [j, w] : cfg.true_mapping) {
        if (w != 0.0) truth.active.push_back(j);
    }
    truth.noise_sd = cfg.noise_sd;
    truth.questionnaire_noise_sd = cfg.questionnaire_noise_sd;
    truth.seed = cfg.seed;
    truth.n_users = cfg.n_users;

    // Generator-chosen archetype hyperparameters.
    truth.mu_a.resize(k);
    for (Eigen::Index j = 0; j < k; ++j) truth.mu_a[j] = rng.uniform(0.4, 0.6);
    truth.beta = Matrix::Zero(d, k);
    for (Eigen::Index r = 0; r < d; ++r) {
        for (Eigen::Index c = 0; c < k; ++c) truth.beta(r, c) = 0.04 * rng.normal();
    }
    Matrix chol = Matrix::Zero(k, k);
    for (Eigen::Index r = 0; r < k; ++r) {
        chol(r, r) = cfg.archetype_sd * rng.uniform(0.8, 1.0);
        for (Eigen::Index c = 0; c < r; ++c) chol(r, c) = 0.15 * cfg.archetype_sd * rng.normal();
    }
    truth.sigma_a = chol * chol.transpose();

    // Catalog.
    out.catalog.descriptor_names = cfg.descriptor_names;
    for (std::size_t f = 0; f < cfg.n_fragrances; ++f) {
        Fragrance frag;
        frag.id = "f" + std::to_string(1000 + f);
        frag.name = "Synthetic " + std::to_string(f + 1);
        for (auto& desc : frag.descriptors) {
            desc.resize(n_desc);
            for (Eigen::Index j = 0; j < n_desc; ++j) desc[j] = rng.uniform();
        }
        out.catalog.fragrances.push_back(std::move(frag));
    }

    const double width = cfg.scale_max - cfg.scale_min;
    for (std::size_t u = 0; u < cfg.n_users; ++u) {
        UserRecord user;
        user.user_id = "u" + std::to_string(u + 1);

        const auto& mix = cfg.demographic_mix;
        user.demographics[mix.age_name] = std::round(std::clamp(mix.age_mean + mix.age_sd * rng.normal(), 18.0, 90.0));
        for (const auto& c : mix.categorical) {
            user.demographics[c.name] = c.levels[rng.categorical(c.probabilities)];
        }
        const Vector demo = out.encoding.encode(user.user_id, user.demographics).features;

        Vector z(k);
        for (Eigen::Index j = 0; j < k; ++j) z[j] = rng.normal();
        const Vector a = truth.mu_a + truth.beta.transpose() * demo + chol * z;
        truth.archetypes[user.user_id] = a;

        QuestionnaireResponse q;
        q.user_id = user.user_id;
        q.scale_min = cfg.scale_min;
        q.scale_max = cfg.scale_max;
        for (Archetype arch : kAllArchetypes) {
            const double noisy = clamp01(a[static_cast<Eigen::Index>(index_of(arch))] +
                                         cfg.questionnaire_noise_sd * rng.normal());
            q.scores[arch] = cfg.scale_min + width * noisy;
        }
        user.questionnaire = q;

        for (std::size_t b = 0; b < cfg.behaviors_per_user; ++b) {
            BehavioralObservation obs;
            obs.user_id = user.user_id;
            obs.archetype = archetype_at(rng.index(kArchetypeCount));
            const double aj = a[static_cast<Eigen::Index>(index_of(obs.archetype))];
            if (b % 2 == 0) {
                obs.kind = BehaviorKind::Continuous;
                obs.noise_variance = cfg.behavior_noise_sd * cfg.behavior_noise_sd;
                obs.value = aj + cfg.behavior_noise_sd * rng.normal();
            } else {
                obs.kind = BehaviorKind::Binary;
                obs.bernoulli_prob_scale = 1.0;
                obs.value = rng.bernoulli(clamp01(aj)) ? 1.0 : 0.0;
            }
            user.behaviors.push_back(obs);
        }

        for (std::size_t t = 0; t < cfg.tastings_per_user; ++t) {
            const auto& frag = out.catalog.fragrances[rng.index(out.catalog.fragrances.size())];
            const std::string session_id = user.user_id + "-s" + std::to_string(t + 1);
            for (Layer l : kAllLayers) {
                const auto& desc = frag.descriptors[index_of(l)];
                const double clean = truth.weights.dot(basis_row(session_input(a, desc), truth_basis()));
                const double eps = cfg.heavy_tailed_noise ? cfg.noise_sd * rng.student_t(3) / std::sqrt(3.0)
                                                          : cfg.noise_sd * rng.normal();
                out.ratings.push_back({user.user_id, session_id, l, desc, clamp01(clean + eps)});
                truth.true_preference.push_back(clamp01(clean));
            }
        }
        out.users.push_back(std::move(user));
    }
    return out;
}

/// Reference posterior for 1-D conjugate updates; see oracle::grid_posterior.
inline oracle::Moments grid_oracle_posterior(double prior_mean, double prior_var, double obs_mean, double obs_var,
                                             const oracle::GridSpec& grid = {}) {
    return oracle::grid_posterior(prior_mean, prior_var, obs_mean, obs_var, grid);
}

// --- evaluation -----------------------------------------------------------

struct RankingCase {
    std::vector<double> true_scores;          // per candidate
    std::vector<std::size_t> recommended;     // candidate indices, best first
};

struct EvalData {
    std::vector<double> predicted;    // predicted mean rating per row
    std::vector<double> truth;        // true preference per row
    std::vector<double> probability;  // predicted pleasant probability per row
    std::vector<bool> outcome;        // observed pleasant event per row
    std::vector<std::size_t> true_active;
    std::vector<std::size_t> recovered_active;
    std::vector<RankingCase> rankings;
    std::size_t k = 5;
    std::size_t bins = 10;
};

struct EvalReport {
    double nmse = 0.0;
    double expected_calibration_error = 0.0;
    bool sparsity_recovered = false;
    double top_k_regret = 0.0;
    double runtime_ms = 0.0;
};

inline double normalized_mse(std::span<const double> predicted, std::span<const double> truth) {
    require(predicted.size() == truth.size(), ErrorCode::LengthMismatch, "predictions and truths differ in length");
    require(!truth.empty(), ErrorCode::LengthMismatch, "no predictions to evaluate");
    double mean = 0.0;
    for (double t : truth) mean += t;
    mean /= static_cast<double>(truth.size());
    double err = 0.0;
    double spread = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        err += (predicted[i] - truth[i]) * (predicted[i] - truth[i]);
        spread += (truth[i] - mean) * (truth[i] - mean);
    }
    if (spread == 0.0) return err == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return err / spread;
}

/// Expected calibration error over equal-width probability bins.
inline double expected_calibration_error(std::span<const double> probability, const std::vector<bool>& outcome,
                                         std::size_t bins = 10) {
    require(probability.size() == outcome.size(), ErrorCode::LengthMismatch,
            "probabilities and outcomes differ in length");
    require(bins >= 10, ErrorCode::InvalidArgument, "calibration needs at least 10 bins");
    if (probability.empty()) return 0.0;
    std::vector<double> conf(bins, 0.0);
    std::vector<double> hits(bins, 0.0);
    std::vector<std::size_t> count(bins, 0);
    for (std::size_t i = 0; i < probability.size(); ++i) {
        const double p = std::clamp(probability[i], 0.0, 1.0);
        const auto b = std::min(bins - 1, static_cast<std::size_t>(p * static_cast<double>(bins)));
        conf[b] += p;
        hits[b] += outcome[i] ? 1.0 : 0.0;
        ++count[b];
    }
    double ece = 0.0;
    for (std::size_t b = 0; b < bins; ++b) {
        if (count[b] == 0) continue;
        const auto n = static_cast<double>(count[b]);
        ece += n * std::abs(hits[b] / n - conf[b] / n);
    }
    return ece / static_cast<double>(probability.size());
}

inline double top_k_regret(std::span<const RankingCase> cases, std::size_t k) {
    if (cases.empty() || k == 0) return 0.0;
    double total = 0.0;
    for (const auto& c : cases) {
        std::vector<double> sorted = c.true_scores;
        std::sort(sorted.begin(), sorted.end(), std::greater<>());
        const std::size_t kk = std::min({k, sorted.size(), c.recommended.size()});
        if (kk == 0) continue;
        double best = 0.0;
        double got = 0.0;
        for (std::size_t i = 0; i < kk; ++i) {
            best += sorted[i];
            require(c.recommended[i] < c.true_scores.size(), ErrorCode::LengthMismatch,
                    "recommended index outside the candidate list");
            got += c.true_scores[c.recommended[i]];
        }
        total += (best - got) / static_cast<double>(kk);
    }
    return total / static_cast<double>(cases.size());
}

inline EvalReport evaluate(const EvalData& data) {
    EvalReport r;
    r.nmse = normalized_mse(data.predicted, data.truth);
    r.expected_calibration_error = expected_calibration_error(data.probability, data.outcome, data.bins);
    const std::set<std::size_t> recovered(data.recovered_active.begin(), data.recovered_active.end());
    r.sparsity_recovered =
        std::all_of(data.true_active.begin(), data.true_active.end(),
                    [&](std::size_t j) { return recovered.contains(j); }) &&
        recovered.size() <= 3 * data.true_active.size();
    r.top_k_regret = top_k_regret(data.rankings, data.k);
    return r;
}

}  // namespace scent::synth
