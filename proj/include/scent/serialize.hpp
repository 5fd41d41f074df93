#pragma once

// JSON encodings of the engine's value types. Matrices are written as
// {"rows": r, "cols": c, "layout": "row-major", "data": [...]}; doubles use
// shortest round-trip formatting, so write -> read is bit-exact.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "scent/archetype.hpp"
#include "scent/engine.hpp"
#include "scent/error.hpp"
#include "scent/linalg.hpp"
#include "scent/note_bayes.hpp"
#include "scent/records.hpp"
#include "scent/rvm.hpp"

namespace scent::io {

using nlohmann::json;

inline constexpr std::string_view kModelSchema = "scent.model.v1";
inline constexpr std::string_view kCatalogSchema = "scent.catalog.v1";
inline constexpr std::string_view kSessionSchema = "scent.session.v1";

// --- primitives -----------------------------------------------------------

inline json to_json(const Vector& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
    return out;
}

inline Vector vector_from_json(const json& j) {
    require(j.is_array(), ErrorCode::SchemaViolation, "expected an array of numbers");
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        require(j[i].is_number(), ErrorCode::SchemaViolation, "expected a number");
        v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    }
    return v;
}

inline json matrix_to_json(const Matrix& m) {
    json data = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    }
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"layout", "row-major"}, {"data", std::move(data)}};
}

inline Matrix matrix_from_json(const json& j) {
    require(j.is_object() && j.contains("rows") && j.contains("cols") && j.contains("data"),
            ErrorCode::SchemaViolation, "matrix needs rows, cols and data");
    require(j.value("layout", std::string("row-major")) == "row-major", ErrorCode::SchemaViolation,
            "only row-major matrices are supported");
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto& data = j.at("data");
    require(rows >= 0 && cols >= 0 && data.is_array() && static_cast<Eigen::Index>(data.size()) == rows * cols,
            ErrorCode::SchemaViolation, "matrix data length does not match rows x cols");
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)].get<double>();
    }
    return m;
}

template <class F>
auto guarded(F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const json::exception& e) {
        fail(ErrorCode::SchemaViolation, e.what());
    }
}

// --- enums ----------------------------------------------------------------

inline std::string layer_name(Layer l) { return std::string(short_name(l)); }

inline Layer layer_from(const json& j) {
    const auto l = parse_layer(j.get<std::string>());
    require(l.has_value(), ErrorCode::SchemaViolation, "layer must be one of T, M, B");
    return *l;
}

inline std::string_view basis_kind_name(BasisKind k) {
    switch (k) {
    case BasisKind::Rbf: return "rbf";
    case BasisKind::Linear: return "linear";
    case BasisKind::Composite: return "composite";
    }
    return "composite";
}

inline BasisKind basis_kind_from(const std::string& s) {
    if (s == "rbf") return BasisKind::Rbf;
    if (s == "linear") return BasisKind::Linear;
    if (s == "composite") return BasisKind::Composite;
    fail(ErrorCode::SchemaViolation, "unknown basis kind '" + s + "'");
}

inline std::string_view prior_mode_name(WeightPriorMode m) {
    return m == WeightPriorMode::Population ? "population" : "hyperprior";
}

inline WeightPriorMode prior_mode_from(const std::string& s) {
    if (s == "population") return WeightPriorMode::Population;
    if (s == "hyperprior") return WeightPriorMode::Hyperprior;
    fail(ErrorCode::SchemaViolation, "prior mode must be 'hyperprior' or 'population'");
}

// --- archetypes and users -------------------------------------------------

inline json to_json(const DemographicEncoding& enc) {
    json out = json::array();
    for (const auto& f : enc.features()) {
        if (f.encoding == FeatureEncoding::Numeric) {
            out.push_back({{"name", f.name}, {"encoding", "numeric"}, {"center", f.center}, {"scale", f.scale}});
        } else {
            out.push_back(
                {{"name", f.name}, {"encoding", "one_hot"}, {"levels", f.levels}, {"reference", f.reference}});
        }
    }
    return out;
}

inline DemographicEncoding encoding_from_json(const json& j) {
    return guarded([&] {
        std::vector<DemographicFeature> features;
        for (const auto& f : j) {
            DemographicFeature feat;
            feat.name = f.at("name").get<std::string>();
            const auto enc = f.at("encoding").get<std::string>();
            if (enc == "numeric") {
                feat.encoding = FeatureEncoding::Numeric;
                feat.center = f.at("center").get<double>();
                feat.scale = f.at("scale").get<double>();
            } else {
                require(enc == "one_hot", ErrorCode::SchemaViolation, "unknown demographic encoding '" + enc + "'");
                feat.encoding = FeatureEncoding::Categorical;
                feat.levels = f.at("levels").get<std::vector<std::string>>();
                feat.reference = f.at("reference").get<std::string>();
            }
            features.push_back(std::move(feat));
        }
        return DemographicEncoding(std::move(features));
    });
}

inline json to_json(const ArchetypeProfile& p) {
    return {{"user_id", p.user_id},
            {"mean", to_json(p.mean)},
            {"covariance", matrix_to_json(p.covariance)},
            {"archetypes", std::vector<std::string>(kArchetypeNames.begin(), kArchetypeNames.end())},
            {"sources",
             {{"questionnaire", p.sources.questionnaire},
              {"behavioral", p.sources.behavioral},
              {"demographic_prior", p.sources.demographic_prior}}}};
}

inline ArchetypeProfile profile_from_json(const json& j) {
    return guarded([&] {
        ArchetypeProfile p;
        p.user_id = j.at("user_id").get<std::string>();
        p.mean = vector_from_json(j.at("mean"));
        p.covariance = matrix_from_json(j.at("covariance"));
        const auto& s = j.at("sources");
        p.sources = {s.at("questionnaire").get<bool>(), s.at("behavioral").get<bool>(),
                     s.at("demographic_prior").get<bool>()};
        return p;
    });
}

inline json to_json(const UserRecord& u) {
    json out = {{"user_id", u.user_id}};
    if (u.questionnaire) {
        json q = json::object();
        for (const auto& [a, score] : u.questionnaire->scores) q[std::string(name_of(a))] = score;
        q["scale"] = {{"min", u.questionnaire->scale_min}, {"max", u.questionnaire->scale_max}};
        out["questionnaire"] = std::move(q);
    }
    json behaviors = json::array();
    for (const auto& b : u.behaviors) {
        json jb = {{"archetype", std::string(name_of(b.archetype))}, {"value", b.value}};
        if (b.kind == BehaviorKind::Binary) {
            jb["kind"] = "binary";
            jb["bernoulli_prob_scale"] = b.bernoulli_prob_scale;
        } else {
            jb["kind"] = "continuous";
            jb["noise_variance"] = b.noise_variance;
        }
        behaviors.push_back(std::move(jb));
    }
    out["behaviors"] = std::move(behaviors);
    json demo = json::object();
    for (const auto& [name, value] : u.demographics) {
        if (const auto* x = std::get_if<double>(&value)) {
            demo[name] = *x;
        } else {
            demo[name] = std::get<std::string>(value);
        }
    }
    out["demographics"] = std::move(demo);
    return out;
}

inline UserRecord user_from_json(const json& j) {
    return guarded([&] {
        require(j.is_object(), ErrorCode::SchemaViolation, "user record must be an object");
        UserRecord u;
        u.user_id = j.at("user_id").get<std::string>();
        require(!u.user_id.empty(), ErrorCode::SchemaViolation, "user_id must not be empty");
        if (j.contains("questionnaire") && !j.at("questionnaire").is_null()) {
            const auto& q = j.at("questionnaire");
            QuestionnaireResponse resp;
            resp.user_id = u.user_id;
            resp.scale_min = q.at("scale").at("min").get<double>();
            resp.scale_max = q.at("scale").at("max").get<double>();
            for (const auto& [key, value] : q.items()) {
                if (key == "scale") continue;
                const auto a = parse_archetype(key);
                require(a.has_value(), ErrorCode::SchemaViolation, "unknown archetype '" + key + "'");
                resp.scores[*a] = value.get<double>();
            }
            u.questionnaire = std::move(resp);
        }
        if (j.contains("behaviors")) {
            for (const auto& jb : j.at("behaviors")) {
                BehavioralObservation b;
                b.user_id = u.user_id;
                const auto a = parse_archetype(jb.at("archetype").get<std::string>());
                require(a.has_value(), ErrorCode::SchemaViolation, "unknown behavior archetype");
                b.archetype = *a;
                const auto kind = jb.at("kind").get<std::string>();
                b.value = jb.at("value").get<double>();
                if (kind == "binary") {
                    b.kind = BehaviorKind::Binary;
                    b.bernoulli_prob_scale = jb.value("bernoulli_prob_scale", 1.0);
                } else {
                    require(kind == "continuous", ErrorCode::SchemaViolation, "behavior kind must be binary or continuous");
                    b.kind = BehaviorKind::Continuous;
                    b.noise_variance = jb.at("noise_variance").get<double>();
                }
                b.validate();
                u.behaviors.push_back(b);
            }
        }
        if (j.contains("demographics")) {
            for (const auto& [name, value] : j.at("demographics").items()) {
                if (value.is_number()) {
                    u.demographics[name] = value.get<double>();
                } else if (value.is_string()) {
                    u.demographics[name] = value.get<std::string>();
                } else {
                    fail(ErrorCode::SchemaViolation, "demographic '" + name + "' must be a number or a string");
                }
            }
        }
        return u;
    });
}

// --- rvm ------------------------------------------------------------------

inline json to_json(const BasisConfig& b) {
    json centers = json::array();
    for (const auto& c : b.centers) centers.push_back(to_json(c));
    return {{"kind", basis_kind_name(b.kind)},
            {"rbf_width", b.rbf_width},
            {"centers", std::move(centers)},
            {"include_bias", b.include_bias},
            {"composite_split", b.composite_split}};
}

inline BasisConfig basis_from_json(const json& j) {
    return guarded([&] {
        BasisConfig b;
        b.kind = basis_kind_from(j.at("kind").get<std::string>());
        b.rbf_width = j.value("rbf_width", 1.0);
        if (j.contains("centers")) {
            for (const auto& c : j.at("centers")) b.centers.push_back(vector_from_json(c));
        }
        b.include_bias = j.value("include_bias", true);
        b.composite_split = j.value("composite_split", kArchetypeCount);
        b.validate();
        return b;
    });
}

inline json to_json(const RvmConfig& c) {
    return {{"gamma_shape", c.gamma_shape}, {"gamma_rate", c.gamma_rate}, {"prune_threshold", c.prune_threshold},
            {"max_iters", c.max_iters},     {"tol", c.tol},               {"init_alpha", c.init_alpha},
            {"init_noise", c.init_noise}};
}

inline RvmConfig rvm_config_from_json(const json& j) {
    return guarded([&] {
        RvmConfig c;
        c.gamma_shape = j.value("gamma_shape", c.gamma_shape);
        c.gamma_rate = j.value("gamma_rate", c.gamma_rate);
        c.prune_threshold = j.value("prune_threshold", c.prune_threshold);
        c.max_iters = j.value("max_iters", c.max_iters);
        c.tol = j.value("tol", c.tol);
        c.init_alpha = j.value("init_alpha", c.init_alpha);
        c.init_noise = j.value("init_noise", c.init_noise);
        c.validate();
        return c;
    });
}

inline json to_json(const WeightPosterior& w) {
    return {{"mean", to_json(w.mean)},
            {"covariance", matrix_to_json(w.covariance)},
            {"alpha", to_json(w.alpha)},
            {"noise_variance", w.noise_variance},
            {"active", w.active},
            {"converged", w.fit.converged},
            {"iterations", w.fit.iterations},
            {"em_fallbacks", w.fit.em_fallbacks}};
}

inline WeightPosterior weights_from_json(const json& j) {
    return guarded([&] {
        WeightPosterior w;
        w.mean = vector_from_json(j.at("mean"));
        w.covariance = matrix_from_json(j.at("covariance"));
        w.alpha = vector_from_json(j.at("alpha"));
        w.noise_variance = j.at("noise_variance").get<double>();
        w.active = j.at("active").get<std::vector<bool>>();
        w.fit.converged = j.value("converged", false);
        w.fit.iterations = j.value("iterations", 0);
        w.fit.em_fallbacks = j.value("em_fallbacks", 0);
        const auto n_active = std::count(w.active.begin(), w.active.end(), true);
        require(w.alpha.size() == static_cast<Eigen::Index>(w.active.size()) && w.mean.size() == n_active &&
                    w.covariance.rows() == n_active && w.covariance.cols() == n_active,
                ErrorCode::SchemaViolation, "weight posterior dimensions are inconsistent");
        require(w.noise_variance > 0.0, ErrorCode::SchemaViolation, "noise_variance must be > 0");
        return w;
    });
}

inline json to_json(const Prediction& p) {
    return {{"mean", p.mean}, {"variance", p.variance}, {"pleasant_probability", p.pleasant_probability}};
}

// --- population model -----------------------------------------------------

inline json to_json(const PopulationModel& m) {
    return {
        {"schema", kModelSchema},
        {"model_version", m.model_version},
        {"population",
         {{"mu", to_json(m.mu)},
          {"sigma", to_json(m.sigma)},
          {"layers", {"T", "M", "B"}},
          {"mu_a", to_json(m.archetypes.mu_a)},
          {"beta", matrix_to_json(m.archetypes.beta)},
          {"sigma_a", matrix_to_json(m.archetypes.sigma_a)},
          {"demographic_manifest", to_json(m.archetypes.encoding)},
          {"descriptor_names", m.descriptor_names}}},
        {"rvm",
         {{"basis", to_json(m.rvm.basis)},
          {"config", to_json(m.rvm.config)},
          {"input_names", m.rvm.input_names},
          {"basis_names", m.rvm.basis_names},
          {"posterior", to_json(m.rvm.posterior)}}},
        {"fit_metadata",
         {{"n_users", m.fit_metadata.n_users},
          {"n_ratings", m.fit_metadata.n_ratings},
          {"n_questionnaires", m.fit_metadata.n_questionnaires},
          {"q_noise", m.fit_metadata.q_noise}}},
    };
}

inline PopulationModel model_from_json(const json& j) {
    return guarded([&] {
        require(j.value("schema", std::string()) == kModelSchema, ErrorCode::SchemaViolation,
                "not a scent.model.v1 document");
        PopulationModel m;
        m.model_version = j.at("model_version").get<std::string>();
        const auto& p = j.at("population");
        m.mu = vector_from_json(p.at("mu"));
        m.sigma = vector_from_json(p.at("sigma"));
        m.archetypes.mu_a = vector_from_json(p.at("mu_a"));
        m.archetypes.beta = matrix_from_json(p.at("beta"));
        m.archetypes.sigma_a = matrix_from_json(p.at("sigma_a"));
        m.archetypes.encoding = encoding_from_json(p.at("demographic_manifest"));
        m.descriptor_names = p.at("descriptor_names").get<std::vector<std::string>>();
        const auto& r = j.at("rvm");
        m.rvm.basis = basis_from_json(r.at("basis"));
        m.rvm.config = rvm_config_from_json(r.at("config"));
        m.rvm.input_names = r.at("input_names").get<std::vector<std::string>>();
        m.rvm.basis_names = r.at("basis_names").get<std::vector<std::string>>();
        m.rvm.posterior = weights_from_json(r.at("posterior"));
        const auto& f = j.at("fit_metadata");
        m.fit_metadata.n_users = f.value("n_users", std::size_t{0});
        m.fit_metadata.n_ratings = f.value("n_ratings", std::size_t{0});
        m.fit_metadata.n_questionnaires = f.value("n_questionnaires", std::size_t{0});
        m.fit_metadata.q_noise = f.value("q_noise", kDefaultQuestionnaireNoise);
        m.validate();
        return m;
    });
}

// --- catalog --------------------------------------------------------------

inline json to_json(const Catalog& c) {
    json frags = json::array();
    for (const auto& f : c.fragrances) {
        frags.push_back({{"id", f.id},
                         {"name", f.name},
                         {"top", to_json(f.descriptors[0])},
                         {"middle", to_json(f.descriptors[1])},
                         {"base", to_json(f.descriptors[2])}});
    }
    return {{"schema", kCatalogSchema}, {"descriptor_names", c.descriptor_names}, {"fragrances", std::move(frags)}};
}

inline Catalog catalog_from_json(const json& j) {
    return guarded([&] {
        Catalog c;
        c.descriptor_names = j.at("descriptor_names").get<std::vector<std::string>>();
        const auto dim = static_cast<Eigen::Index>(c.descriptor_names.size());
        for (const auto& jf : j.at("fragrances")) {
            Fragrance f;
            f.id = jf.at("id").get<std::string>();
            f.name = jf.value("name", f.id);
            f.descriptors = {vector_from_json(jf.at("top")), vector_from_json(jf.at("middle")),
                             vector_from_json(jf.at("base"))};
            for (const auto& d : f.descriptors) {
                require(d.size() == dim, ErrorCode::SchemaViolation,
                        "fragrance " + f.id + " descriptor does not match the descriptor manifest");
            }
            c.fragrances.push_back(std::move(f));
        }
        return c;
    });
}

// --- note-bayes -----------------------------------------------------------

inline json to_json(const PleasantnessModel& m) {
    json layers = json::object();
    for (Layer l : kAllLayers) {
        const auto& t = m.layers[index_of(l)];
        layers[layer_name(l)] = {t.if_pleasant, t.if_unpleasant};
    }
    return {{"p_f", m.p_f}, {"layers", std::move(layers)}};
}

inline PleasantnessModel pleasantness_from_json(const json& j) {
    return guarded([&] {
        PleasantnessModel m;
        m.p_f = j.at("p_f").get<double>();
        const auto& layers = j.at("layers");
        for (Layer l : kAllLayers) {
            const auto& pair = layers.at(layer_name(l));
            require(pair.is_array() && pair.size() == 2, ErrorCode::SchemaViolation,
                    "each layer needs [P(pleasant | H_F), P(pleasant | not H_F)]");
            m.layers[index_of(l)] = {pair[0].get<double>(), pair[1].get<double>()};
        }
        m.validate();
        return m;
    });
}

// --- sessions -------------------------------------------------------------

inline json to_json(const UserPreference& p) {
    return {{"user_id", p.user_id}, {"theta", to_json(p.theta)}, {"theta_var", to_json(p.theta_var)}};
}

inline json to_json(const ConsistencyReport& r) {
    return {{"observations", r.observations},
            {"mean_deviation", r.mean_deviation},
            {"covariance_deviation", r.covariance_deviation},
            {"deviation", r.deviation}};
}

inline json to_json(const TastingSession& s) {
    json obs = json::array();
    for (const auto& o : s.observations) {
        obs.push_back({{"layer", layer_name(o.layer)},
                       {"descriptor", to_json(o.descriptor)},
                       {"rating", o.rating},
                       {"timestamp", o.timestamp}});
    }
    return {
        {"schema", kSessionSchema},
        {"session_id", s.session_id},
        {"user_id", s.user_id},
        {"model_version", s.model_version},
        {"stage", stage_name(s.stage)},
        {"options",
         {{"prior_mode", prior_mode_name(s.options.prior_mode)},
          {"threshold", s.options.threshold},
          {"layer_weights", s.options.layer_weights}}},
        {"basis", to_json(s.basis)},
        {"population_mu", to_json(s.population_mu)},
        {"population_sigma", to_json(s.population_sigma)},
        {"profile", to_json(s.profile)},
        {"initial_weights", {{"mean", to_json(s.initial_weights.mean)},
                             {"covariance", matrix_to_json(s.initial_weights.covariance)}}},
        {"weights", to_json(s.weights)},
        {"observations", std::move(obs)},
        {"preference", to_json(s.preference)},
    };
}

inline TastingSession session_from_json(const json& j) {
    return guarded([&] {
        TastingSession s;
        s.session_id = j.at("session_id").get<std::string>();
        s.user_id = j.at("user_id").get<std::string>();
        s.model_version = j.at("model_version").get<std::string>();
        const auto stage = parse_stage(j.at("stage").get<std::string>());
        require(stage.has_value(), ErrorCode::SchemaViolation, "unknown session stage");
        s.stage = *stage;
        const auto& o = j.at("options");
        s.options.prior_mode = prior_mode_from(o.at("prior_mode").get<std::string>());
        s.options.threshold = o.at("threshold").get<double>();
        s.options.layer_weights = o.at("layer_weights").get<std::array<double, 3>>();
        s.basis = basis_from_json(j.at("basis"));
        s.population_mu = vector_from_json(j.at("population_mu"));
        s.population_sigma = vector_from_json(j.at("population_sigma"));
        s.profile = profile_from_json(j.at("profile"));
        s.initial_weights.mean = vector_from_json(j.at("initial_weights").at("mean"));
        s.initial_weights.covariance = matrix_from_json(j.at("initial_weights").at("covariance"));
        s.weights = weights_from_json(j.at("weights"));
        for (const auto& jo : j.at("observations")) {
            s.observations.push_back({layer_from(jo.at("layer")), vector_from_json(jo.at("descriptor")),
                                      jo.at("rating").get<double>(), jo.value("timestamp", std::int64_t{0})});
        }
        const auto& p = j.at("preference");
        s.preference.user_id = p.at("user_id").get<std::string>();
        s.preference.theta = vector_from_json(p.at("theta"));
        s.preference.theta_var = vector_from_json(p.at("theta_var"));
        require(s.observations.size() == static_cast<std::size_t>(s.stage), ErrorCode::SchemaViolation,
                "session observations are inconsistent with its stage");
        return s;
    });
}

inline json to_json(const Recommendation& r) {
    json layers = json::object();
    for (Layer l : kAllLayers) layers[layer_name(l)] = to_json(r.layers[index_of(l)]);
    json out = to_json(r.prediction);
    out["fragrance_id"] = r.fragrance_id;
    out["layers"] = std::move(layers);
    return out;
}

}  // namespace scent::io
