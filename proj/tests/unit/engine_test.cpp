#include <algorithm>
#include <functional>
#include <vector>

#include <gtest/gtest.h>

#include "scent/engine.hpp"
#include "test_util.hpp"

namespace scent {
namespace {

using testing::random_spd;
using testing::random_vector;

UserRecord user_with_scores(const std::string& id, double score, RawDemographics demo = {}) {
    UserRecord u;
    u.user_id = id;
    QuestionnaireResponse q;
    q.user_id = id;
    for (Archetype a : kAllArchetypes) q.scores[a] = score;
    u.questionnaire = q;
    u.demographics = std::move(demo);
    return u;
}

std::vector<RatingRow> flat_ratings(const std::string& id, double rating, const Vector& descriptor) {
    std::vector<RatingRow> rows;
    for (Layer l : kAllLayers) rows.push_back({id, id + "-s1", l, descriptor, rating});
    return rows;
}

TEST(FitPopulation, TwoUsersLayerHyperparameters) {
    const std::vector users = {user_with_scores("a", 0.2), user_with_scores("b", 0.8)};
    auto ratings = flat_ratings("a", 0.2, Vector::Constant(2, 0.5));
    const auto more = flat_ratings("b", 0.8, Vector::Constant(2, 0.5));
    ratings.insert(ratings.end(), more.begin(), more.end());
    PopulationFitOptions opt;
    opt.basis.kind = BasisKind::Linear;
    const auto pop = fit_population(users, ratings, opt);
    for (Eigen::Index l = 0; l < 3; ++l) {
        EXPECT_NEAR(pop.mu[l], 0.5, 1e-12);
        EXPECT_NEAR(pop.sigma[l], 0.4243, 1e-4);
    }
    EXPECT_EQ(pop.fit_metadata.n_users, 2U);
    EXPECT_EQ(pop.fit_metadata.n_ratings, 6U);
    pop.validate();
}

TEST(FitPopulation, IdenticalRatingsHitTheSigmaFloor) {
    const std::vector users = {user_with_scores("a", 0.3), user_with_scores("b", 0.6), user_with_scores("c", 0.9)};
    std::vector<RatingRow> ratings;
    for (const auto& u : users) {
        const auto r = flat_ratings(u.user_id, 0.6, Vector::Constant(2, 0.5));
        ratings.insert(ratings.end(), r.begin(), r.end());
    }
    PopulationFitOptions opt;
    opt.basis.kind = BasisKind::Linear;
    const auto pop = fit_population(users, ratings, opt);
    EXPECT_EQ(pop.sigma, Vector::Constant(3, kLayerSigmaFloor));
    EXPECT_NEAR(pop.mu[0], 0.6, 1e-12);
}

TEST(FitPopulation, ConstantDemographicsGiveZeroBeta) {
    std::vector<UserRecord> users;
    std::vector<RatingRow> ratings;
    synth::Rng rng(3);
    for (int i = 0; i < 12; ++i) {
        const std::string id = "u" + std::to_string(i);
        users.push_back(user_with_scores(id, rng.uniform(0.0, 1.0), {{"age", 30.0}, {"culture", std::string("x")}}));
        const auto r = flat_ratings(id, rng.uniform(0.2, 0.8), Vector::Constant(2, rng.uniform()));
        ratings.insert(ratings.end(), r.begin(), r.end());
    }
    PopulationFitOptions opt;
    opt.basis.kind = BasisKind::Linear;
    const auto pop = fit_population(users, ratings, opt);
    EXPECT_EQ(linalg::sup_norm(pop.archetypes.beta), 0.0);
    EXPECT_TRUE(linalg::is_spd(pop.archetypes.sigma_a));
}

TEST(FitPopulation, RejectsBadHistory) {
    const std::vector users = {user_with_scores("a", 0.2), user_with_scores("b", 0.8)};
    auto ratings = flat_ratings("a", 0.2, Vector::Constant(2, 0.5));
    EXPECT_THROW_CODE(fit_population(users, ratings), ErrorCode::InsufficientData);
    auto unknown = ratings;
    unknown.push_back({"zzz", "s", Layer::Top, Vector::Constant(2, 0.5), 0.5});
    EXPECT_THROW_CODE(fit_population(users, unknown), ErrorCode::InvalidArgument);
    auto out_of_range = flat_ratings("b", 1.5, Vector::Constant(2, 0.5));
    out_of_range.insert(out_of_range.end(), ratings.begin(), ratings.end());
    EXPECT_THROW_CODE(fit_population(users, out_of_range), ErrorCode::RatingOutOfRange);
}

TEST(FitPopulation, SyntheticCorpusYieldsUsableModel) {
    synth::GeneratorConfig cfg;
    cfg.n_users = 60;
    const auto corpus = synth::generate_population(cfg);
    PopulationFitOptions opt;
    opt.descriptor_names = cfg.descriptor_names;
    opt.encoding = corpus.encoding;
    const auto pop = fit_population(corpus.users, corpus.ratings, opt);
    pop.validate();
    EXPECT_EQ(pop.rvm.posterior.basis_count(), cfg.basis_count());
    EXPECT_EQ(pop.rvm.basis_names.size(), cfg.basis_count());
    EXPECT_EQ(pop.rvm.basis_names[3], "Hero*spicy");
    EXPECT_EQ(pop.fit_metadata.n_questionnaires, 60U);
}

// --- sessions on a hand-built linear model --------------------------------

// Linear basis over [archetype mean (10), descriptor (2)] plus bias: 13 weights.
PopulationModel linear_model(double noise = 0.25) {
    PopulationModel pop;
    pop.mu = Vector::Constant(3, 0.5);
    pop.sigma = Vector::Constant(3, 0.5);
    pop.rvm.basis.kind = BasisKind::Linear;
    pop.rvm.basis.include_bias = true;
    auto& w = pop.rvm.posterior;
    w.mean = Vector::Zero(13);
    w.covariance = Matrix::Identity(13, 13);
    w.alpha = Vector::Constant(13, 2.0);
    w.noise_variance = noise;
    w.active.assign(13, true);
    pop.model_version = "m1";
    return pop;
}

ArchetypeProfile profile(synth::Rng& rng) {
    ArchetypeProfile p;
    p.user_id = "u1";
    p.mean = random_vector(rng, 10, 0.3).array() + 0.5;
    p.covariance = random_spd(rng, 10);
    return p;
}

Fragrance fragrance(std::string id, std::array<Vector, 3> d) {
    return {id, id, std::move(d)};
}

NoteObservation note(Layer l, double rating, Vector descriptor = Vector::Constant(2, 0.5)) {
    return {l, std::move(descriptor), rating, 0};
}

TEST(Session, StartsAtPopulationPreference) {
    synth::Rng rng(1);
    const auto pop = linear_model();
    const auto s = start_session("s1", profile(rng), pop);
    EXPECT_EQ(s.stage, Stage::AwaitTop);
    EXPECT_EQ(s.preference.theta, pop.mu);
    EXPECT_EQ(s.preference.theta_var, Vector::Constant(3, 0.25));
    EXPECT_EQ(s.model_version, "m1");
    EXPECT_EQ(s.weights.mean, Vector::Zero(13));
    EXPECT_EQ(s.weights.covariance, Matrix(Vector::Constant(13, 0.5).asDiagonal()));
}

TEST(Session, PopulationPriorModeCopiesFittedPosterior) {
    synth::Rng rng(2);
    auto pop = linear_model();
    pop.rvm.posterior.mean = random_vector(rng, 13);
    pop.rvm.posterior.covariance = random_spd(rng, 13);
    SessionOptions opt;
    opt.prior_mode = WeightPriorMode::Population;
    const auto s = start_session("s1", profile(rng), pop, opt);
    EXPECT_EQ(s.weights.mean, pop.rvm.posterior.mean);
    EXPECT_EQ(s.weights.covariance, pop.rvm.posterior.covariance);
}

TEST(Session, StartIsDeterministic) {
    const auto pop = linear_model();
    synth::Rng a(5);
    synth::Rng b(5);
    const auto s1 = start_session("s", profile(a), pop);
    const auto s2 = start_session("s", profile(b), pop);
    EXPECT_EQ(s1.profile.mean, s2.profile.mean);
    EXPECT_EQ(s1.weights.covariance, s2.weights.covariance);
    EXPECT_EQ(s1.preference.theta, s2.preference.theta);
}

TEST(Session, MissingProfile) {
    EXPECT_THROW_CODE(start_session("s", std::optional<ArchetypeProfile>{}, linear_model()), ErrorCode::MissingProfile);
}

TEST(Session, TopNoteUpdateExample) {
    synth::Rng rng(3);
    const auto s = start_session("s", profile(rng), linear_model(0.25));
    const auto t = observe_note(s, note(Layer::Top, 0.7));
    // prior N(0.5, 0.25), observation noise 0.25
    EXPECT_NEAR(t.preference.theta[0], 0.6, 1e-15);
    EXPECT_NEAR(t.preference.theta_var[0], 0.125, 1e-15);
    EXPECT_EQ(t.preference.theta[1], 0.5);
    EXPECT_EQ(t.stage, Stage::AwaitMiddle);
    ASSERT_EQ(t.observations.size(), 1U);
}

TEST(Session, ThetaUpdateIsSymmetricInPriorAndObservation) {
    synth::Rng rng(4);
    for (int trial = 0; trial < 1000; ++trial) {
        const double m = rng.uniform();
        const double y = rng.uniform();
        const double v = rng.uniform(0.01, 1.0);
        const double n = rng.uniform(0.01, 1.0);
        const auto [m1, v1] = update_theta(m, v, y, n);
        const auto [m2, v2] = update_theta(y, n, m, v);
        EXPECT_NEAR(m1, m2, 1e-14);
        EXPECT_NEAR(v1, v2, 1e-14);
        EXPECT_LT(v1, std::min(v, n));
    }
}

TEST(Session, SequentialMatchesBatchAfterEachStep) {
    synth::Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        auto pop = linear_model(rng.uniform(0.01, 0.5));
        pop.rvm.posterior.alpha = (random_vector(rng, 13).array().abs() + 0.1).matrix();
        auto s = start_session("s", profile(rng), pop);
        EXPECT_EQ(batch_vs_sequential_check(s).deviation, 0.0);
        for (Layer l : kAllLayers) {
            s = observe_note(s, note(l, rng.uniform(), Vector(random_vector(rng, 2).array().abs())));
            const auto report = batch_vs_sequential_check(s);
            EXPECT_EQ(report.observations, index_of(l) + 1);
            EXPECT_LT(report.deviation, 1e-10);
        }
        EXPECT_EQ(s.stage, Stage::Complete);
    }
}

TEST(Session, ObservationErrors) {
    synth::Rng rng(6);
    const auto s = start_session("s", profile(rng), linear_model());
    EXPECT_THROW_CODE(observe_note(s, note(Layer::Middle, 0.5)), ErrorCode::WrongStage);
    EXPECT_THROW_CODE(observe_note(s, note(Layer::Top, 1.2)), ErrorCode::RatingOutOfRange);
    EXPECT_THROW_CODE(observe_note(s, note(Layer::Top, -0.1)), ErrorCode::RatingOutOfRange);
    EXPECT_THROW_CODE(observe_note(s, note(Layer::Top, std::nan(""))), ErrorCode::NonFiniteRating);
    const auto t = observe_note(s, note(Layer::Top, 0.5));
    EXPECT_THROW_CODE(observe_note(t, note(Layer::Top, 0.5)), ErrorCode::LayerAlreadyObserved);
    EXPECT_THROW_CODE(observe_note(t, note(Layer::Middle, 0.5, Vector::Zero(3))), ErrorCode::DimensionMismatch);
    auto done = observe_note(observe_note(t, note(Layer::Middle, 0.5)), note(Layer::Base, 0.5));
    EXPECT_THROW_CODE(observe_note(done, note(Layer::Base, 0.5)), ErrorCode::LayerAlreadyObserved);
}

// Every layer sequence of length <= 5: accepted exactly when it is the next
// expected layer; a rejected observation leaves the session untouched.
TEST(Session, ExhaustiveStageMachine) {
    synth::Rng rng(7);
    const auto start = start_session("s", profile(rng), linear_model());
    std::vector<Layer> seq;
    std::function<void(std::size_t)> walk = [&](std::size_t depth) {
        auto s = start;
        std::size_t next = 0;
        for (Layer l : seq) {
            const bool seen = index_of(l) < next;
            if (index_of(l) == next) {
                s = observe_note(s, note(l, 0.4));
                ++next;
            } else {
                const auto before = s.observations.size();
                EXPECT_THROW_CODE(observe_note(s, note(l, 0.4)),
                                  seen ? ErrorCode::LayerAlreadyObserved : ErrorCode::WrongStage);
                EXPECT_EQ(s.observations.size(), before);
            }
        }
        EXPECT_EQ(static_cast<std::size_t>(s.stage), next);
        if (depth == 5) return;
        for (Layer l : kAllLayers) {
            seq.push_back(l);
            walk(depth + 1);
            seq.pop_back();
        }
    };
    walk(0);
}

TEST(Session, ObservationsShrinkUncertainty) {
    synth::Rng rng(8);
    auto s = start_session("s", profile(rng), linear_model());
    for (Layer l : kAllLayers) {
        const auto next = observe_note(s, note(l, rng.uniform()));
        EXPECT_LE(next.weights.covariance.trace(), s.weights.covariance.trace());
        EXPECT_LT(next.preference.theta_var[static_cast<Eigen::Index>(index_of(l))],
                  s.preference.theta_var[static_cast<Eigen::Index>(index_of(l))]);
        s = next;
    }
}

// --- recommendations ------------------------------------------------------

// Population mode with all weight on descriptor 0: the predicted rating of a
// layer is its first descriptor entry.
TastingSession descriptor_session() {
    auto pop = linear_model(0.01);
    pop.rvm.posterior.mean = Vector::Zero(13);
    pop.rvm.posterior.mean[10] = 1.0;
    pop.rvm.posterior.covariance = 1e-8 * Matrix::Identity(13, 13);
    SessionOptions opt;
    opt.prior_mode = WeightPriorMode::Population;
    synth::Rng rng(9);
    return start_session("s", profile(rng), pop, opt);
}

Fragrance scored(std::string id, double top, double middle, double base) {
    auto d = [](double x) { return Vector((Vector(2) << x, 0.0).finished()); };
    return fragrance(std::move(id), {d(top), d(middle), d(base)});
}

TEST(Recommend, RanksByPleasantProbability) {
    const auto s = descriptor_session();
    const std::vector cands = {scored("low", 0.1, 0.1, 0.1), scored("high", 0.9, 0.9, 0.9),
                               scored("mid", 0.5, 0.6, 0.7)};
    const auto recs = recommend(s, cands, 3);
    ASSERT_EQ(recs.size(), 3U);
    EXPECT_EQ(recs[0].fragrance_id, "high");
    EXPECT_EQ(recs[1].fragrance_id, "mid");
    EXPECT_EQ(recs[2].fragrance_id, "low");
    EXPECT_NEAR(recs[1].prediction.mean, 0.6, 1e-12);
    EXPECT_NEAR(recs[1].layers[2].mean, 0.7, 1e-12);
    EXPECT_GT(recs[0].prediction.pleasant_probability, 0.99);
}

TEST(Recommend, TiesBreakByIdAndKIsClamped) {
    const auto s = descriptor_session();
    const std::vector cands = {scored("b", 0.5, 0.5, 0.5), scored("a", 0.5, 0.5, 0.5)};
    const auto recs = recommend(s, cands, 10);
    ASSERT_EQ(recs.size(), 2U);
    EXPECT_EQ(recs[0].fragrance_id, "a");
    EXPECT_TRUE(recommend(s, cands, 0).empty());
    EXPECT_THROW_CODE(recommend(s, std::vector<Fragrance>{}, 3), ErrorCode::EmptyCandidates);
}

TEST(Recommend, RankingIgnoresCandidateOrder) {
    synth::Rng rng(10);
    const auto s = descriptor_session();
    std::vector<Fragrance> cands;
    for (int i = 0; i < 20; ++i) {
        cands.push_back(scored("f" + std::to_string(i), rng.uniform(), rng.uniform(), rng.uniform()));
    }
    const auto base = recommend(s, cands, 20);
    for (int trial = 0; trial < 10; ++trial) {
        std::reverse(cands.begin(), cands.end());
        std::swap(cands[rng.index(20)], cands[rng.index(20)]);
        const auto again = recommend(s, cands, 20);
        for (std::size_t i = 0; i < base.size(); ++i) EXPECT_EQ(again[i].fragrance_id, base[i].fragrance_id);
    }
}

TEST(Recommend, CombinedScoreIsLayerWeightedMean) {
    auto s = descriptor_session();
    s.options.layer_weights = {1.0, 0.0, 3.0};
    const auto p = predict_fragrance(s, scored("x", 0.2, 0.9, 0.6));
    EXPECT_NEAR(p.overall.mean, 0.25 * 0.2 + 0.75 * 0.6, 1e-12);
}

TEST(Stage, NamesRoundTrip) {
    for (Stage st : {Stage::AwaitTop, Stage::AwaitMiddle, Stage::AwaitBase, Stage::Complete}) {
        EXPECT_EQ(parse_stage(stage_name(st)).value(), st);
    }
    EXPECT_FALSE(parse_stage("done").has_value());
}

}  // namespace
}  // namespace scent
