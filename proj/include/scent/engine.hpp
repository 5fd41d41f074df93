#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/QR>

#include "scent/archetype.hpp"
#include "scent/error.hpp"
#include "scent/linalg.hpp"
#include "scent/note_bayes.hpp"
#include "scent/records.hpp"
#include "scent/rvm.hpp"

namespace scent {

inline constexpr double kLayerSigmaFloor = 1e-3;
inline constexpr double kArchetypeEigenFloor = 1e-6;

/// The fitted sparse regression shared by every session of a population model.
struct RvmModel {
    BasisConfig basis;
    RvmConfig config;
    WeightPosterior posterior;
    std::vector<std::string> input_names;  // archetypes then descriptors
    std::vector<std::string> basis_names;
};

struct FitMetadata {
    std::size_t n_users = 0;
    std::size_t n_ratings = 0;
    std::size_t n_questionnaires = 0;
    double q_noise = kDefaultQuestionnaireNoise;
};

struct PopulationModel {
    std::string model_version = "1";
    Vector mu = Vector::Constant(3, 0.5);     // per-layer mean preference
    Vector sigma = Vector::Constant(3, 0.25);  // per-layer between-user sd
    ArchetypePopulation archetypes;
    std::vector<std::string> descriptor_names;
    RvmModel rvm;
    FitMetadata fit_metadata;

    void validate() const {
        require(mu.size() == 3 && sigma.size() == 3 && mu.allFinite(), ErrorCode::DimensionMismatch,
                "population mu and sigma must be 3-vectors");
        require((sigma.array() > 0.0).all(), ErrorCode::InvalidArgument, "population sigma must be > 0");
        require(linalg::is_spd(archetypes.sigma_a), ErrorCode::SingularCovariance, "sigma_a is not SPD");
        require(static_cast<std::size_t>(archetypes.beta.rows()) == archetypes.encoding.dimension(),
                ErrorCode::DimensionMismatch, "beta rows do not match the demographic manifest");
    }
};

/// Archetype profile of a user under a population's demographic prior.
inline ArchetypeProfile profile_for(const UserRecord& user, const ArchetypePopulation& pop, double q_noise) {
    const auto demo = pop.encoding.encode(user.user_id, user.demographics);
    const auto prior = archetype_prior(demo, pop);
    std::optional<Vector> q;
    if (user.questionnaire) q = normalize_questionnaire(*user.questionnaire);
    return infer_profile(prior, q, user.behaviors, q_noise, user.user_id);
}

inline Vector session_input(const Vector& archetype_mean, const Vector& descriptor) {
    Vector x(archetype_mean.size() + descriptor.size());
    x << archetype_mean, descriptor;
    return x;
}

struct PopulationFitOptions {
    RvmConfig rvm;
    BasisConfig basis;
    double q_noise = kDefaultQuestionnaireNoise;
    std::optional<DemographicEncoding> encoding;  // inferred from the users when absent
    std::vector<std::string> descriptor_names;
    std::string model_version = "1";
};

namespace detail {

inline ArchetypePopulation fit_archetype_population(std::span<const UserRecord> users,
                                                    const DemographicEncoding& encoding) {
    std::vector<Vector> rows_a;
    std::vector<Vector> rows_d;
    for (const auto& u : users) {
        if (!u.questionnaire) continue;
        rows_a.push_back(normalize_questionnaire(*u.questionnaire));
        rows_d.push_back(encoding.encode(u.user_id, u.demographics).features);
    }
    require(rows_a.size() >= 2, ErrorCode::InsufficientData,
            "archetype population fit needs at least two questionnaires");

    const auto n = static_cast<Eigen::Index>(rows_a.size());
    const auto d = static_cast<Eigen::Index>(encoding.dimension());
    const auto k = static_cast<Eigen::Index>(kArchetypeCount);
    Matrix a(n, k);
    Matrix dm(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        a.row(i) = rows_a[static_cast<std::size_t>(i)].transpose();
        dm.row(i) = rows_d[static_cast<std::size_t>(i)].transpose();
    }
    const Vector mean_a = a.colwise().mean().transpose();
    const Vector mean_d = d > 0 ? Vector(dm.colwise().mean().transpose()) : Vector();

    ArchetypePopulation pop;
    pop.encoding = encoding;
    pop.beta = Matrix::Zero(d, k);

    // Regress on centered demographics; zero-variance columns keep beta = 0.
    std::vector<Eigen::Index> varying;
    for (Eigen::Index j = 0; j < d; ++j) {
        const double var = (dm.col(j).array() - mean_d[j]).square().sum() / static_cast<double>(n);
        if (var > 1e-12) varying.push_back(j);
    }
    if (!varying.empty()) {
        Matrix x(n, static_cast<Eigen::Index>(varying.size()));
        for (std::size_t c = 0; c < varying.size(); ++c) {
            x.col(static_cast<Eigen::Index>(c)) = dm.col(varying[c]).array() - mean_d[varying[c]];
        }
        const Matrix centered_a = a.rowwise() - mean_a.transpose();
        const Matrix coef = x.completeOrthogonalDecomposition().solve(centered_a);
        for (std::size_t c = 0; c < varying.size(); ++c) {
            pop.beta.row(varying[c]) = coef.row(static_cast<Eigen::Index>(c));
        }
    }
    pop.mu_a = d > 0 ? Vector(mean_a - pop.beta.transpose() * mean_d) : mean_a;

    Matrix fitted = dm * pop.beta;
    fitted.rowwise() += pop.mu_a.transpose();
    const Matrix resid = a - fitted;
    const auto params = static_cast<Eigen::Index>(varying.size()) + 1;
    const double dof = n > params ? static_cast<double>(n - params) : static_cast<double>(n);
    pop.sigma_a = linalg::clip_to_spd(resid.transpose() * resid / dof, kArchetypeEigenFloor);
    return pop;
}

}  // namespace detail

/// Empirical-Bayes population fit: per-layer preference hyperparameters, the
/// demographic archetype prior, and the sparse weight model over all ratings.
inline PopulationModel fit_population(std::span<const UserRecord> users, std::span<const RatingRow> ratings,
                                      const PopulationFitOptions& options = {}) {
    std::map<std::string, const UserRecord*> by_id;
    for (const auto& u : users) by_id[u.user_id] = &u;

    std::set<std::string> raters;
    for (const auto& r : ratings) {
        require(by_id.contains(r.user_id), ErrorCode::InvalidArgument, "rating references unknown user " + r.user_id);
        require(std::isfinite(r.rating), ErrorCode::NonFiniteRating, "historical rating is not finite");
        require(r.rating >= 0.0 && r.rating <= 1.0, ErrorCode::RatingOutOfRange, "historical rating outside [0, 1]");
        raters.insert(r.user_id);
    }
    require(raters.size() >= 2, ErrorCode::InsufficientData, "population fit needs at least two rated users");

    PopulationModel pop;
    pop.model_version = options.model_version;
    pop.descriptor_names = options.descriptor_names;

    // Layer hyperparameters from per-user mean ratings.
    std::array<std::map<std::string, std::pair<double, int>>, 3> per_user;
    double overall = 0.0;
    for (const auto& r : ratings) {
        auto& slot = per_user[index_of(r.layer)][r.user_id];
        slot.first += r.rating;
        slot.second += 1;
        overall += r.rating;
    }
    overall /= static_cast<double>(ratings.size());
    for (Layer l : kAllLayers) {
        const auto& users_in_layer = per_user[index_of(l)];
        const auto li = static_cast<Eigen::Index>(index_of(l));
        std::vector<double> means;
        for (const auto& [id, acc] : users_in_layer) means.push_back(acc.first / acc.second);
        if (means.empty()) {
            pop.mu[li] = overall;
            pop.sigma[li] = kLayerSigmaFloor;
            continue;
        }
        const double mu = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(means.size());
        double ss = 0.0;
        for (double m : means) ss += (m - mu) * (m - mu);
        const double sd = means.size() > 1 ? std::sqrt(ss / static_cast<double>(means.size() - 1)) : 0.0;
        pop.mu[li] = mu;
        pop.sigma[li] = std::max(sd, kLayerSigmaFloor);
    }

    // Archetype prior.
    DemographicEncoding encoding;
    if (options.encoding) {
        encoding = *options.encoding;
    } else {
        std::vector<RawDemographics> raw;
        for (const auto& u : users) raw.push_back(u.demographics);
        encoding = DemographicEncoding::infer(raw);
    }
    pop.archetypes = detail::fit_archetype_population(users, encoding);

    // Sparse weight model over [archetype profile mean, note descriptor].
    std::map<std::string, Vector> profile_means;
    for (const auto& id : raters) {
        profile_means[id] = profile_for(*by_id[id], pop.archetypes, options.q_noise).mean;
    }
    std::vector<Vector> inputs;
    Vector y(static_cast<Eigen::Index>(ratings.size()));
    for (std::size_t i = 0; i < ratings.size(); ++i) {
        inputs.push_back(session_input(profile_means[ratings[i].user_id], ratings[i].descriptor));
        y[static_cast<Eigen::Index>(i)] = ratings[i].rating;
    }
    const auto descriptor_dim = ratings.front().descriptor.size();
    for (const auto& r : ratings) {
        require(r.descriptor.size() == descriptor_dim, ErrorCode::DimensionMismatch,
                "rating descriptors differ in dimension");
    }
    if (pop.descriptor_names.empty()) {
        for (Eigen::Index j = 0; j < descriptor_dim; ++j) pop.descriptor_names.push_back("d" + std::to_string(j));
    }
    require(static_cast<Eigen::Index>(pop.descriptor_names.size()) == descriptor_dim, ErrorCode::DimensionMismatch,
            "descriptor names do not match descriptor length");

    pop.rvm.basis = options.basis;
    if (pop.rvm.basis.kind == BasisKind::Rbf && pop.rvm.basis.centers.empty()) {
        pop.rvm.basis.centers = inputs;
    }
    if (pop.rvm.basis.kind == BasisKind::Composite) {
        pop.rvm.basis.composite_split = kArchetypeCount;
    }
    pop.rvm.config = options.rvm;
    for (auto name : kArchetypeNames) pop.rvm.input_names.emplace_back(name);
    pop.rvm.input_names.insert(pop.rvm.input_names.end(), pop.descriptor_names.begin(), pop.descriptor_names.end());
    const auto design = build_design(inputs, pop.rvm.basis, pop.rvm.input_names);
    pop.rvm.basis_names = design.column_names;
    pop.rvm.posterior = fit_evidence(design.values, y, options.rvm);

    pop.fit_metadata.n_users = raters.size();
    pop.fit_metadata.n_ratings = ratings.size();
    pop.fit_metadata.n_questionnaires =
        static_cast<std::size_t>(std::count_if(users.begin(), users.end(), [](const UserRecord& u) {
            return u.questionnaire.has_value();
        }));
    pop.fit_metadata.q_noise = options.q_noise;
    return pop;
}

// --- tasting sessions -----------------------------------------------------

enum class Stage : std::uint8_t { AwaitTop, AwaitMiddle, AwaitBase, Complete };

constexpr std::string_view stage_name(Stage s) noexcept {
    switch (s) {
    case Stage::AwaitTop: return "await_top";
    case Stage::AwaitMiddle: return "await_middle";
    case Stage::AwaitBase: return "await_base";
    case Stage::Complete: return "complete";
    }
    return "unknown";
}

inline std::optional<Stage> parse_stage(std::string_view s) {
    for (Stage st : {Stage::AwaitTop, Stage::AwaitMiddle, Stage::AwaitBase, Stage::Complete}) {
        if (stage_name(st) == s) return st;
    }
    return std::nullopt;
}

/// Session-level weight prior: zero mean with the fitted precisions (the
/// sparsity prior P(w | alpha)), or the population weight posterior itself.
enum class WeightPriorMode : std::uint8_t { Hyperprior, Population };

struct UserPreference {
    std::string user_id;
    Vector theta = Vector::Zero(3);
    Vector theta_var = Vector::Ones(3);
};

struct NoteObservation {
    Layer layer = Layer::Top;
    Vector descriptor;
    double rating = 0.0;
    std::int64_t timestamp = 0;
};

struct SessionOptions {
    WeightPriorMode prior_mode = WeightPriorMode::Hyperprior;
    double threshold = kDefaultPleasantThreshold;
    std::array<double, 3> layer_weights = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};

    void validate() const {
        require(std::isfinite(threshold), ErrorCode::InvalidArgument, "threshold must be finite");
        double sum = 0.0;
        for (double w : layer_weights) {
            require(std::isfinite(w) && w >= 0.0, ErrorCode::InvalidArgument, "layer weights must be >= 0");
            sum += w;
        }
        require(sum > 0.0, ErrorCode::InvalidArgument, "layer weights must not all be zero");
    }
};

/// A session carries everything it needs from its population model so that it
/// can be persisted and replayed without the model at hand.
struct TastingSession {
    std::string session_id;
    std::string user_id;
    std::string model_version;
    ArchetypeProfile profile;
    Stage stage = Stage::AwaitTop;
    SessionOptions options;
    BasisConfig basis;
    Vector population_mu = Vector::Constant(3, 0.5);
    Vector population_sigma = Vector::Constant(3, 0.25);
    GaussianPosterior initial_weights;
    WeightPosterior weights;
    std::vector<NoteObservation> observations;
    UserPreference preference;

    [[nodiscard]] Vector basis_row_for(const Vector& descriptor) const {
        return weights.restrict(basis_row(session_input(profile.mean, descriptor), basis));
    }
};

inline TastingSession start_session(std::string session_id, const std::optional<ArchetypeProfile>& profile,
                                    const PopulationModel& pop, const SessionOptions& options = {}) {
    require(profile.has_value(), ErrorCode::MissingProfile, "user has no archetype profile");
    options.validate();

    TastingSession s;
    s.session_id = std::move(session_id);
    s.user_id = profile->user_id;
    s.model_version = pop.model_version;
    s.profile = *profile;
    s.options = options;
    s.basis = pop.rvm.basis;
    s.population_mu = pop.mu;
    s.population_sigma = pop.sigma;

    const auto& fitted = pop.rvm.posterior;
    s.weights = fitted;
    s.weights.fit = {};
    if (options.prior_mode == WeightPriorMode::Hyperprior) {
        const Vector alpha = fitted.active_alpha();
        s.weights.mean = Vector::Zero(alpha.size());
        s.weights.covariance = alpha.cwiseInverse().asDiagonal();
    }
    s.initial_weights = {s.weights.mean, s.weights.covariance};

    s.preference.user_id = s.user_id;
    s.preference.theta = pop.mu;
    s.preference.theta_var = pop.sigma.cwiseProduct(pop.sigma);
    return s;
}

inline TastingSession start_session(std::string session_id, const UserRecord& user, const PopulationModel& pop,
                                    const SessionOptions& options = {}) {
    return start_session(std::move(session_id), profile_for(user, pop.archetypes, pop.fit_metadata.q_noise), pop,
                         options);
}

inline constexpr std::optional<Layer> expected_layer(Stage stage) noexcept {
    switch (stage) {
    case Stage::AwaitTop: return Layer::Top;
    case Stage::AwaitMiddle: return Layer::Middle;
    case Stage::AwaitBase: return Layer::Base;
    case Stage::Complete: return std::nullopt;
    }
    return std::nullopt;
}

/// Scalar conjugate update of N(mean, var) by one observation N(rating, noise).
inline std::pair<double, double> update_theta(double mean, double var, double rating, double noise) {
    return {(noise * mean + var * rating) / (noise + var), noise * var / (noise + var)};
}

inline TastingSession observe_note(const TastingSession& session, const NoteObservation& obs) {
    for (const auto& o : session.observations) {
        require(o.layer != obs.layer, ErrorCode::LayerAlreadyObserved,
                "layer " + std::string(short_name(obs.layer)) + " already observed");
    }
    const auto expected = expected_layer(session.stage);
    require(expected.has_value() && *expected == obs.layer, ErrorCode::WrongStage,
            "session is in stage " + std::string(stage_name(session.stage)) + ", cannot observe layer " +
                std::string(short_name(obs.layer)));
    require(std::isfinite(obs.rating), ErrorCode::NonFiniteRating, "rating is not finite");
    require(obs.rating >= 0.0 && obs.rating <= 1.0, ErrorCode::RatingOutOfRange, "rating must lie in [0, 1]");
    require(obs.descriptor.allFinite(), ErrorCode::NonFiniteFeature, "descriptor is not finite");

    TastingSession next = session;
    const Vector row = session.basis_row_for(obs.descriptor);
    const double noise = session.weights.noise_variance;
    const auto updated = absorb_observation({session.weights.mean, session.weights.covariance}, row, obs.rating, noise);
    next.weights.mean = updated.mean;
    next.weights.covariance = updated.covariance;

    const auto li = static_cast<Eigen::Index>(index_of(obs.layer));
    const auto [m, v] = update_theta(session.preference.theta[li], session.preference.theta_var[li], obs.rating, noise);
    next.preference.theta[li] = m;
    next.preference.theta_var[li] = v;

    next.observations.push_back(obs);
    next.stage = static_cast<Stage>(static_cast<int>(session.stage) + 1);
    return next;
}

struct LayeredPrediction {
    Prediction overall;
    std::array<Prediction, 3> layers;
};

/// Per-layer predictions and the combined score of a fragrance. The combined
/// score predicts one overall rating of the layer-weighted basis row, so its
/// mean is the weighted mean of the layer means.
inline LayeredPrediction predict_fragrance(const TastingSession& session, const Fragrance& fragrance) {
    const auto& w = session.options.layer_weights;
    const double total = w[0] + w[1] + w[2];
    LayeredPrediction out;
    Vector combined = Vector::Zero(session.weights.mean.size());
    for (Layer l : kAllLayers) {
        const auto li = index_of(l);
        const Vector row = session.basis_row_for(fragrance.descriptors[li]);
        out.layers[li] = predict(session.weights, row, session.options.threshold);
        combined += (w[li] / total) * row;
    }
    out.overall = predict(session.weights, combined, session.options.threshold);
    return out;
}

struct Recommendation {
    std::string fragrance_id;
    Prediction prediction;
    std::array<Prediction, 3> layers;
};

/// Top-k candidates by pleasant_probability, ties broken by id ascending.
inline std::vector<Recommendation> recommend(const TastingSession& session, std::span<const Fragrance> candidates,
                                             std::size_t k) {
    require(!candidates.empty(), ErrorCode::EmptyCandidates, "no candidate fragrances");
    std::vector<Recommendation> all;
    all.reserve(candidates.size());
    for (const auto& f : candidates) {
        const auto p = predict_fragrance(session, f);
        all.push_back({f.id, p.overall, p.layers});
    }
    std::sort(all.begin(), all.end(), [](const Recommendation& a, const Recommendation& b) {
        if (a.prediction.pleasant_probability != b.prediction.pleasant_probability) {
            return a.prediction.pleasant_probability > b.prediction.pleasant_probability;
        }
        return a.fragrance_id < b.fragrance_id;
    });
    all.resize(std::min(k, all.size()));
    return all;
}

struct ConsistencyReport {
    std::size_t observations = 0;
    double mean_deviation = 0.0;
    double covariance_deviation = 0.0;
    double deviation = 0.0;  // max of the two
};

/// Recomputes the weight posterior from the session's initial prior and all
/// observations in one information-form solve and compares it with the
/// sequentially updated posterior.
inline ConsistencyReport batch_vs_sequential_check(const TastingSession& session) {
    ConsistencyReport report;
    report.observations = session.observations.size();
    if (session.observations.empty()) {
        report.mean_deviation = linalg::sup_norm(session.weights.mean - session.initial_weights.mean);
        report.covariance_deviation =
            linalg::sup_norm(session.weights.covariance - session.initial_weights.covariance);
        report.deviation = std::max(report.mean_deviation, report.covariance_deviation);
        return report;
    }
    const auto n = static_cast<Eigen::Index>(session.observations.size());
    Matrix rows(n, session.weights.mean.size());
    Vector targets(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& o = session.observations[static_cast<std::size_t>(i)];
        rows.row(i) = session.basis_row_for(o.descriptor).transpose();
        targets[i] = o.rating;
    }
    const auto batch = batch_posterior(session.initial_weights, rows, targets, session.weights.noise_variance);
    report.mean_deviation = linalg::sup_norm(batch.mean - session.weights.mean);
    report.covariance_deviation = linalg::sup_norm(batch.covariance - session.weights.covariance);
    report.deviation = std::max(report.mean_deviation, report.covariance_deviation);
    return report;
}

}  // namespace scent
