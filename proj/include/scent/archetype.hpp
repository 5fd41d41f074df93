#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "scent/error.hpp"
#include "scent/linalg.hpp"

namespace scent {

enum class Archetype : std::uint8_t {
    Hero,
    Caregiver,
    Explorer,
    Lover,
    Sage,
    Jester,
    Ruler,
    Innocent,
    Rebel,
    Magician,
};

inline constexpr std::size_t kArchetypeCount = 10;

inline constexpr std::array<Archetype, kArchetypeCount> kAllArchetypes = {
    Archetype::Hero,  Archetype::Caregiver, Archetype::Explorer, Archetype::Lover,
    Archetype::Sage,  Archetype::Jester,    Archetype::Ruler,    Archetype::Innocent,
    Archetype::Rebel, Archetype::Magician,
};

inline constexpr std::array<std::string_view, kArchetypeCount> kArchetypeNames = {
    "Hero", "Caregiver", "Explorer", "Lover", "Sage", "Jester", "Ruler", "Innocent", "Rebel", "Magician",
};

constexpr std::size_t index_of(Archetype a) noexcept { return static_cast<std::size_t>(a); }

constexpr std::string_view name_of(Archetype a) noexcept { return kArchetypeNames[index_of(a)]; }

inline std::optional<Archetype> parse_archetype(std::string_view name) {
    for (std::size_t i = 0; i < kArchetypeCount; ++i) {
        if (kArchetypeNames[i] == name) {
            return kAllArchetypes[i];
        }
    }
    return std::nullopt;
}

inline Archetype archetype_at(std::size_t index) {
    require(index < kArchetypeCount, ErrorCode::InvalidArgument, "archetype index out of range");
    return kAllArchetypes[index];
}

struct QuestionnaireResponse {
    std::string user_id;
    std::map<Archetype, double> scores;
    double scale_min = 0.0;
    double scale_max = 1.0;
};

/// Affine map of raw scores onto [0,1], in canonical archetype order.
inline Vector normalize_questionnaire(const QuestionnaireResponse& resp) {
    require(resp.scale_min != resp.scale_max, ErrorCode::ScaleDegenerate,
            "questionnaire scale_min equals scale_max");
    require(resp.scale_min < resp.scale_max, ErrorCode::InvalidArgument,
            "questionnaire scale_min exceeds scale_max");
    Vector out(kArchetypeCount);
    const double width = resp.scale_max - resp.scale_min;
    for (Archetype a : kAllArchetypes) {
        const auto it = resp.scores.find(a);
        require(it != resp.scores.end(), ErrorCode::MissingArchetype,
                "questionnaire is missing a score for " + std::string(name_of(a)));
        const double q = it->second;
        require(std::isfinite(q) && q >= resp.scale_min && q <= resp.scale_max, ErrorCode::InvalidArgument,
                "questionnaire score for " + std::string(name_of(a)) + " is outside the instrument scale");
        out[static_cast<Eigen::Index>(index_of(a))] = (q - resp.scale_min) / width;
    }
    return out;
}

enum class BehaviorKind { Binary, Continuous };

struct BehavioralObservation {
    std::string user_id;
    Archetype archetype = Archetype::Hero;
    BehaviorKind kind = BehaviorKind::Continuous;
    double value = 0.0;
    double noise_variance = 1.0;
    double bernoulli_prob_scale = 1.0;

    void validate() const {
        require(std::isfinite(value), ErrorCode::InvalidArgument, "behavior value is not finite");
        if (kind == BehaviorKind::Binary) {
            require(value == 0.0 || value == 1.0, ErrorCode::InvalidArgument, "binary behavior value must be 0 or 1");
            require(bernoulli_prob_scale > 0.0 && bernoulli_prob_scale <= 1.0, ErrorCode::InvalidArgument,
                    "bernoulli_prob_scale must lie in (0, 1]");
        } else {
            require(std::isfinite(noise_variance) && noise_variance > 0.0, ErrorCode::InvalidArgument,
                    "continuous behavior noise_variance must be > 0");
        }
    }

    /// Variance of the Gaussian observation this behavior is absorbed as.
    /// Binary outcomes are moment-matched: 0.25 is the largest Bernoulli variance.
    [[nodiscard]] double observation_variance() const {
        return kind == BehaviorKind::Binary ? 0.25 / bernoulli_prob_scale : noise_variance;
    }
};

// --- demographics ---------------------------------------------------------

enum class FeatureEncoding { Numeric, Categorical };

/// One raw demographic field and how it maps onto columns of D_i.
/// Numeric: (x - center) / scale, one column. Categorical: one-hot over every
/// level except `reference`, in `levels` order.
struct DemographicFeature {
    std::string name;
    FeatureEncoding encoding = FeatureEncoding::Numeric;
    double center = 0.0;
    double scale = 1.0;
    std::vector<std::string> levels;
    std::string reference;
};

using RawDemographicValue = std::variant<double, std::string>;
using RawDemographics = std::map<std::string, RawDemographicValue>;

struct DemographicVector {
    std::string user_id;
    Vector features;
    std::vector<std::string> manifest;
};

class DemographicEncoding {
public:
    DemographicEncoding() = default;
    explicit DemographicEncoding(std::vector<DemographicFeature> features) : features_(std::move(features)) {
        for (const auto& f : features_) {
            if (f.encoding == FeatureEncoding::Numeric) {
                require(std::isfinite(f.center) && std::isfinite(f.scale) && f.scale > 0.0,
                        ErrorCode::InvalidArgument, "numeric demographic feature needs a positive scale");
            } else {
                require(std::find(f.levels.begin(), f.levels.end(), f.reference) != f.levels.end(),
                        ErrorCode::InvalidArgument, "categorical demographic reference must be one of its levels");
            }
        }
    }

    [[nodiscard]] const std::vector<DemographicFeature>& features() const noexcept { return features_; }

    /// Column names of the encoded vector, e.g. "age", "gender=male".
    [[nodiscard]] std::vector<std::string> manifest() const {
        std::vector<std::string> names;
        for (const auto& f : features_) {
            if (f.encoding == FeatureEncoding::Numeric) {
                names.push_back(f.name);
            } else {
                for (const auto& level : f.levels) {
                    if (level != f.reference) {
                        names.push_back(f.name + "=" + level);
                    }
                }
            }
        }
        return names;
    }

    [[nodiscard]] std::size_t dimension() const { return manifest().size(); }

    /// Absent fields encode as the reference state (numeric center, categorical reference).
    [[nodiscard]] DemographicVector encode(const std::string& user_id, const RawDemographics& raw) const {
        DemographicVector out{user_id, Vector::Zero(static_cast<Eigen::Index>(dimension())), manifest()};
        Eigen::Index col = 0;
        for (const auto& f : features_) {
            const auto it = raw.find(f.name);
            if (f.encoding == FeatureEncoding::Numeric) {
                if (it != raw.end()) {
                    const auto* x = std::get_if<double>(&it->second);
                    require(x != nullptr && std::isfinite(*x), ErrorCode::InvalidArgument,
                            "demographic field '" + f.name + "' must be a finite number");
                    out.features[col] = (*x - f.center) / f.scale;
                }
                ++col;
                continue;
            }
            std::string level = f.reference;
            if (it != raw.end()) {
                const auto* s = std::get_if<std::string>(&it->second);
                require(s != nullptr, ErrorCode::InvalidArgument,
                        "demographic field '" + f.name + "' must be a string level");
                require(std::find(f.levels.begin(), f.levels.end(), *s) != f.levels.end(),
                        ErrorCode::InvalidArgument, "unknown level '" + *s + "' for demographic field '" + f.name + "'");
                level = *s;
            }
            for (const auto& l : f.levels) {
                if (l == f.reference) {
                    continue;
                }
                out.features[col++] = (l == level) ? 1.0 : 0.0;
            }
        }
        return out;
    }

    /// Builds an encoding from observed records: numeric fields are standardized
    /// by sample mean/sd, categorical levels sorted with the first as reference.
    static DemographicEncoding infer(std::span<const RawDemographics> records) {
        std::map<std::string, std::vector<double>> numeric;
        std::map<std::string, std::set<std::string>> categorical;
        for (const auto& rec : records) {
            for (const auto& [name, value] : rec) {
                if (const auto* x = std::get_if<double>(&value)) {
                    numeric[name].push_back(*x);
                } else {
                    categorical[name].insert(std::get<std::string>(value));
                }
            }
        }
        std::vector<DemographicFeature> features;
        for (const auto& [name, xs] : numeric) {
            require(!categorical.contains(name), ErrorCode::InvalidArgument,
                    "demographic field '" + name + "' mixes numbers and strings");
            double mean = 0.0;
            for (double x : xs) mean += x;
            mean /= static_cast<double>(xs.size());
            double ss = 0.0;
            for (double x : xs) ss += (x - mean) * (x - mean);
            const double sd = xs.size() > 1 ? std::sqrt(ss / static_cast<double>(xs.size() - 1)) : 0.0;
            features.push_back({name, FeatureEncoding::Numeric, mean, sd > 0.0 ? sd : 1.0, {}, {}});
        }
        for (const auto& [name, levels] : categorical) {
            std::vector<std::string> sorted(levels.begin(), levels.end());
            features.push_back({name, FeatureEncoding::Categorical, 0.0, 1.0, sorted, sorted.front()});
        }
        return DemographicEncoding(std::move(features));
    }

private:
    std::vector<DemographicFeature> features_;
};

// --- prior and posterior --------------------------------------------------

struct ArchetypePrior {
    Vector mean = Vector::Zero(kArchetypeCount);
    Matrix covariance = Matrix::Identity(kArchetypeCount, kArchetypeCount);

    void validate() const {
        require(mean.size() == static_cast<Eigen::Index>(kArchetypeCount) && mean.allFinite(),
                ErrorCode::DimensionMismatch, "archetype prior mean must be a finite 10-vector");
        require(covariance.rows() == static_cast<Eigen::Index>(kArchetypeCount) &&
                    covariance.cols() == static_cast<Eigen::Index>(kArchetypeCount),
                ErrorCode::DimensionMismatch, "archetype prior covariance must be 10x10");
        require(linalg::is_spd(covariance), ErrorCode::SingularCovariance,
                "archetype prior covariance is not symmetric positive-definite");
    }
};

/// Population-level archetype hyperparameters: a_i ~ N(mu_a + beta^T D_i, sigma_a).
struct ArchetypePopulation {
    Vector mu_a = Vector::Constant(kArchetypeCount, 0.5);
    Matrix beta = Matrix::Zero(0, kArchetypeCount);  // d x 10
    Matrix sigma_a = Matrix::Identity(kArchetypeCount, kArchetypeCount);
    DemographicEncoding encoding;
};

inline ArchetypePrior archetype_prior(const DemographicVector& demo, const ArchetypePopulation& pop) {
    require(demo.features.size() == pop.beta.rows(), ErrorCode::DimensionMismatch,
            "demographic vector has " + std::to_string(demo.features.size()) + " features, beta expects " +
                std::to_string(pop.beta.rows()));
    require(pop.mu_a.size() == static_cast<Eigen::Index>(kArchetypeCount), ErrorCode::DimensionMismatch,
            "mu_a must have 10 components");
    ArchetypePrior prior;
    prior.mean = pop.beta.rows() == 0 ? pop.mu_a : Vector(pop.mu_a + pop.beta.transpose() * demo.features);
    prior.covariance = pop.sigma_a;
    return prior;
}

struct EvidenceSources {
    bool questionnaire = false;
    bool behavioral = false;
    bool demographic_prior = true;

    friend bool operator==(const EvidenceSources&, const EvidenceSources&) = default;
};

struct ArchetypeProfile {
    std::string user_id;
    Vector mean = Vector::Zero(kArchetypeCount);
    Matrix covariance = Matrix::Identity(kArchetypeCount, kArchetypeCount);
    EvidenceSources sources;
};

inline constexpr double kDefaultQuestionnaireNoise = 0.1;

/// Gaussian conditioning of the archetype prior on questionnaire and behavior
/// evidence. Evidence is accumulated in information form so the result does not
/// depend on the order of `behaviors`.
inline ArchetypeProfile infer_profile(const ArchetypePrior& prior, const std::optional<Vector>& questionnaire,
                                      std::span<const BehavioralObservation> behaviors,
                                      double q_noise = kDefaultQuestionnaireNoise, std::string user_id = {}) {
    prior.validate();
    require(std::isfinite(q_noise) && q_noise > 0.0, ErrorCode::InvalidArgument, "q_noise must be > 0");

    ArchetypeProfile profile;
    profile.user_id = std::move(user_id);
    if (!questionnaire && behaviors.empty()) {
        profile.mean = prior.mean;
        profile.covariance = prior.covariance;
        return profile;
    }

    const auto k = static_cast<Eigen::Index>(kArchetypeCount);
    const auto prior_chol = linalg::cholesky(prior.covariance, ErrorCode::SingularCovariance);
    Matrix precision = prior_chol.inverse();
    Vector info = prior_chol.llt.solve(prior.mean);

    if (questionnaire) {
        require(questionnaire->size() == k && questionnaire->allFinite(), ErrorCode::DimensionMismatch,
                "normalized questionnaire must be a finite 10-vector");
        precision.diagonal().array() += 1.0 / q_noise;
        info += *questionnaire / q_noise;
        profile.sources.questionnaire = true;
    }
    for (const auto& b : behaviors) {
        b.validate();
        const auto j = static_cast<Eigen::Index>(index_of(b.archetype));
        const double var = b.observation_variance();
        precision(j, j) += 1.0 / var;
        info[j] += b.value / var;
        profile.sources.behavioral = true;
    }

    const auto post_chol = linalg::cholesky(linalg::symmetrize(precision), ErrorCode::SingularCovariance);
    profile.covariance = post_chol.inverse();
    profile.mean = post_chol.llt.solve(info);
    require(profile.mean.allFinite() && linalg::is_spd(profile.covariance), ErrorCode::SingularCovariance,
            "archetype posterior is not symmetric positive-definite");
    return profile;
}

}  // namespace scent
