#pragma once

// End-to-end flows shared by the CLI and the tests. Each returns the JSON
// document the CLI prints, so the CLI itself only parses flags and formats.

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scent/engine.hpp"
#include "scent/files.hpp"
#include "scent/note_bayes.hpp"
#include "scent/serialize.hpp"
#include "scent/synth.hpp"

namespace scent::pipeline {

namespace fs = std::filesystem;
using io::json;

inline constexpr const char* kUsersFile = "users.v1.jsonl";
inline constexpr const char* kRatingsFile = "ratings.v1.csv";
inline constexpr const char* kTruthFile = "truth.v1.json";
inline constexpr const char* kCatalogFile = "catalog.v1.json";

// --- simulate -------------------------------------------------------------

inline std::vector<std::string> generator_header(const synth::GeneratorConfig& cfg) {
    return {"scent synthetic ratings v1",
            "prng=" + std::string(synth::kPrngName) + " normal=" + std::string(synth::kNormalMethod) +
                " seed=" + std::to_string(cfg.seed),
            "users=" + std::to_string(cfg.n_users) + " noise_sd=" + io::format_double(cfg.noise_sd) +
                " heavy_tailed=" + (cfg.heavy_tailed_noise ? "1" : "0")};
}

struct CorpusFiles {
    std::string users;
    std::string ratings;
    std::string truth;
    std::string catalog;
};

/// The four corpus documents, byte-for-byte as written to disk.
inline CorpusFiles render_corpus(const synth::Corpus& corpus, const synth::GeneratorConfig& cfg) {
    return {io::users_to_jsonl(corpus.users),
            io::ratings_to_csv(corpus.ratings, corpus.catalog.descriptor_names, generator_header(cfg)),
            io::to_json(corpus.truth).dump(2) + "\n", io::to_json(corpus.catalog).dump(2) + "\n"};
}

inline json simulate_to_directory(const synth::GeneratorConfig& cfg, const fs::path& dir) {
    const auto corpus = synth::generate_population(cfg);
    const auto files = render_corpus(corpus, cfg);
    fs::create_directories(dir);
    io::write_text_atomic(dir / kUsersFile, files.users);
    io::write_text_atomic(dir / kRatingsFile, files.ratings);
    io::write_text_atomic(dir / kTruthFile, files.truth);
    io::write_text_atomic(dir / kCatalogFile, files.catalog);
    return {{"out", dir.string()},
            {"seed", cfg.seed},
            {"users", corpus.users.size()},
            {"ratings", corpus.ratings.size()},
            {"fragrances", corpus.catalog.fragrances.size()},
            {"prng", synth::kPrngName},
            {"files", {kUsersFile, kRatingsFile, kTruthFile, kCatalogFile}}};
}

// --- fit ------------------------------------------------------------------

struct FitRequest {
    fs::path users;
    fs::path ratings;
    std::optional<std::size_t> max_ratings;  // use only the first N rows
    PopulationFitOptions options;
};

inline PopulationModel fit_from_files(const FitRequest& req) {
    const auto users = io::users_from_jsonl(io::read_text(req.users));
    auto table = io::ratings_from_csv(io::read_text(req.ratings));
    if (req.max_ratings && *req.max_ratings < table.rows.size()) table.rows.resize(*req.max_ratings);
    auto options = req.options;
    if (options.descriptor_names.empty()) options.descriptor_names = table.descriptor_names;
    return fit_population(users, table.rows, options);
}

inline json fit_summary(const PopulationModel& model) {
    const auto& post = model.rvm.posterior;
    json active = json::array();
    for (auto j : post.active_indices()) active.push_back(model.rvm.basis_names[j]);
    return {{"model_version", model.model_version},
            {"n_users", model.fit_metadata.n_users},
            {"n_ratings", model.fit_metadata.n_ratings},
            {"basis_count", post.active.size()},
            {"active_count", post.mean.size()},
            {"active", std::move(active)},
            {"noise_variance", post.noise_variance},
            {"converged", post.fit.converged},
            {"iterations", post.fit.iterations},
            {"em_fallbacks", post.fit.em_fallbacks},
            {"mu", io::to_json(model.mu)},
            {"sigma", io::to_json(model.sigma)}};
}

// --- session --------------------------------------------------------------

inline const UserRecord& find_user(const std::vector<UserRecord>& users, const std::string& id) {
    for (const auto& u : users) {
        if (u.user_id == id) return u;
    }
    fail(ErrorCode::NotFound, "unknown user " + id);
}

inline const Fragrance& find_fragrance(const Catalog& catalog, const std::string& id) {
    for (const auto& f : catalog.fragrances) {
        if (f.id == id) return f;
    }
    fail(ErrorCode::NotFound, "unknown fragrance " + id);
}

inline json stage_snapshot(const TastingSession& s, const Fragrance& tasted) {
    const auto p = predict_fragrance(s, tasted);
    return {{"stage", stage_name(s.stage)},
            {"observations", s.observations.size()},
            {"theta", io::to_json(s.preference.theta)},
            {"theta_var", io::to_json(s.preference.theta_var)},
            {"weight_mean", io::to_json(s.weights.mean)},
            {"weight_variance", io::to_json(Vector(s.weights.covariance.diagonal()))},
            {"tasted", io::to_json(p.overall)}};
}

struct SessionRequest {
    std::string user_id;
    std::array<double, 3> ratings{};
    std::string fragrance_id;  // the fragrance being tasted; first in the catalog when empty
    std::size_t k = 5;
    SessionOptions options;
};

/// Runs a full three-note session and returns the posterior after each stage,
/// the top-k list and the consistency check.
inline json run_session(const PopulationModel& model, const std::vector<UserRecord>& users, const Catalog& catalog,
                        const SessionRequest& req) {
    require(!catalog.fragrances.empty(), ErrorCode::EmptyCandidates, "catalog has no fragrances");
    const auto& user = find_user(users, req.user_id);
    const auto& tasted =
        req.fragrance_id.empty() ? catalog.fragrances.front() : find_fragrance(catalog, req.fragrance_id);
    auto session = start_session(user.user_id + "-cli", user, model, req.options);

    json trajectory = json::array();
    trajectory.push_back(stage_snapshot(session, tasted));
    for (Layer l : kAllLayers) {
        session = observe_note(session, {l, tasted.descriptors[index_of(l)], req.ratings[index_of(l)], 0});
        trajectory.push_back(stage_snapshot(session, tasted));
    }
    json top = json::array();
    for (const auto& r : recommend(session, catalog.fragrances, req.k)) top.push_back(io::to_json(r));
    return {{"user_id", user.user_id},
            {"model_version", model.model_version},
            {"fragrance_id", tasted.id},
            {"trajectory", std::move(trajectory)},
            {"recommendations", std::move(top)},
            {"diagnostics", io::to_json(batch_vs_sequential_check(session))}};
}

// --- chain ----------------------------------------------------------------

inline json run_chain(const PleasantnessModel& model, const std::array<Outcome, 3>& outcomes) {
    auto state = PleasantnessState::initial(model);
    json steps = json::array();
    steps.push_back({{"layer", nullptr}, {"posterior", state.posterior}, {"complement", state.complement}});
    for (Layer l : kAllLayers) {
        const auto outcome = outcomes[index_of(l)];
        state = observe_layer(state, model, l, outcome);
        steps.push_back({{"layer", io::layer_name(l)},
                         {"outcome", outcome == Outcome::Pleasant ? "p" : "u"},
                         {"posterior", state.posterior},
                         {"complement", state.complement}});
    }
    return {{"prior", model.p_f}, {"posterior", state.posterior}, {"steps", std::move(steps)}};
}

// --- eval -----------------------------------------------------------------

/// Scores a population model against ground truth. Row predictions use the
/// fitted population posterior (no per-user session updates); rankings rank
/// the whole catalog per user against the true mean layer preference.
inline synth::EvalReport evaluate_corpus(const PopulationModel& model, const std::vector<UserRecord>& users,
                                         std::span<const RatingRow> ratings, std::span<const double> true_preference,
                                         const Catalog& catalog, const synth::GroundTruth& truth, std::size_t k = 5) {
    require(ratings.size() == true_preference.size(), ErrorCode::LengthMismatch,
            "ratings and true preferences differ in length");
    const auto start = std::chrono::steady_clock::now();

    std::map<std::string, const UserRecord*> by_id;
    for (const auto& u : users) by_id[u.user_id] = &u;
    std::map<std::string, ArchetypeProfile> profiles;
    auto profile = [&](const std::string& id) -> const ArchetypeProfile& {
        auto it = profiles.find(id);
        if (it == profiles.end()) {
            require(by_id.contains(id), ErrorCode::NotFound, "rating references unknown user " + id);
            it = profiles.emplace(id, profile_for(*by_id[id], model.archetypes, model.fit_metadata.q_noise)).first;
        }
        return it->second;
    };

    synth::EvalData data;
    data.k = k;
    const auto& post = model.rvm.posterior;
    for (std::size_t i = 0; i < ratings.size(); ++i) {
        const auto& r = ratings[i];
        const Vector row = post.restrict(basis_row(session_input(profile(r.user_id).mean, r.descriptor), model.rvm.basis));
        const auto p = predict(post, row);
        data.predicted.push_back(p.mean);
        data.truth.push_back(true_preference[i]);
        data.probability.push_back(p.pleasant_probability);
        data.outcome.push_back(r.rating > kDefaultPleasantThreshold);
    }

    data.true_active = truth.active;
    if (model.rvm.basis.kind == BasisKind::Composite &&
        post.active.size() == static_cast<std::size_t>(truth.weights.size())) {
        data.recovered_active = post.active_indices();
    }

    SessionOptions options;
    options.prior_mode = WeightPriorMode::Population;
    if (!catalog.fragrances.empty()) {
        std::set<std::string> seen;
        for (const auto& r : ratings) {
            if (!seen.insert(r.user_id).second || !truth.archetypes.contains(r.user_id)) continue;
            const auto session = start_session(r.user_id + "-eval", profile(r.user_id), model, options);
            const auto& a = truth.archetypes.at(r.user_id);
            synth::RankingCase c;
            std::map<std::string, std::size_t> index;
            for (std::size_t f = 0; f < catalog.fragrances.size(); ++f) {
                const auto& frag = catalog.fragrances[f];
                index[frag.id] = f;
                double score = 0.0;
                for (const auto& d : frag.descriptors) score += synth::true_preference(truth, a, d);
                c.true_scores.push_back(score / 3.0);
            }
            for (const auto& rec : recommend(session, catalog.fragrances, k)) c.recommended.push_back(index[rec.fragrance_id]);
            data.rankings.push_back(std::move(c));
        }
    }

    auto report = synth::evaluate(data);
    report.runtime_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return report;
}

struct EvalRequest {
    fs::path model;
    fs::path truth;
    fs::path users;    // defaults to the truth file's directory
    fs::path ratings;
    fs::path catalog;
    std::optional<std::size_t> max_ratings;
    std::size_t k = 5;
};

inline synth::EvalReport evaluate_files(const EvalRequest& req) {
    const auto dir = req.truth.parent_path();
    const auto model = io::model_from_json(io::read_json(req.model));
    const auto truth = io::truth_from_json(io::read_json(req.truth));
    const auto users = io::users_from_jsonl(io::read_text(req.users.empty() ? dir / kUsersFile : req.users));
    auto table = io::ratings_from_csv(io::read_text(req.ratings.empty() ? dir / kRatingsFile : req.ratings));
    const auto catalog_path = req.catalog.empty() ? dir / kCatalogFile : req.catalog;
    const Catalog catalog = fs::exists(catalog_path) ? io::catalog_from_json(io::read_json(catalog_path)) : Catalog{};
    require(table.rows.size() == truth.true_preference.size(), ErrorCode::LengthMismatch,
            "ratings file and truth file describe different corpora");
    std::size_t n = table.rows.size();
    if (req.max_ratings) n = std::min(n, *req.max_ratings);
    return evaluate_corpus(model, users, std::span(table.rows).first(n),
                           std::span(truth.true_preference).first(n), catalog, truth, req.k);
}

}  // namespace scent::pipeline
