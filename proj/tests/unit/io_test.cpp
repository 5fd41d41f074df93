#include <filesystem>
#include <string>

#include <unistd.h>

#include <gtest/gtest.h>

#include "scent/files.hpp"
#include "scent/pipeline.hpp"
#include "scent/schema.hpp"
#include "scent/schemas_embedded.hpp"
#include "scent/serialize.hpp"
#include "test_util.hpp"

namespace scent::io {
namespace {

namespace fs = std::filesystem;

schema::Registry registry() {
    schema::Registry reg;
    for (const auto& [name, text] : schema::embedded_documents()) reg.add_text(std::string(name), text);
    return reg;
}

const schema::Registry& schemas() {
    static const auto reg = registry();
    return reg;
}

void expect_valid(const std::string& name, const json& doc) {
    const auto v = schemas().check(name, doc);
    EXPECT_FALSE(v.has_value()) << name << " " << v->path << ": " << v->message;
}

struct Fixture {
    synth::Corpus corpus;
    PopulationModel model;
};

const Fixture& fixture() {
    static const Fixture f = [] {
        synth::GeneratorConfig cfg;
        cfg.n_users = 40;
        Fixture out;
        out.corpus = synth::generate_population(cfg);
        PopulationFitOptions opt;
        opt.descriptor_names = cfg.descriptor_names;
        out.model = fit_population(out.corpus.users, out.corpus.ratings, opt);
        return out;
    }();
    return f;
}

TEST(Json, MatrixLayoutIsRowMajor) {
    const Matrix m = (Matrix(2, 3) << 1, 2, 3, 4, 5, 6).finished();
    const json j = matrix_to_json(m);
    EXPECT_EQ(j.at("data"), json({1.0, 2.0, 3.0, 4.0, 5.0, 6.0}));
    EXPECT_EQ(matrix_from_json(j), m);
    json bad = j;
    bad["data"].erase(0);
    EXPECT_THROW_CODE(matrix_from_json(bad), ErrorCode::SchemaViolation);
}

TEST(Json, DoublesRoundTripBitExact) {
    synth::Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        const double x = rng.normal() * std::pow(10.0, rng.uniform(-200.0, 200.0));
        EXPECT_EQ(json::parse(json(x).dump()).get<double>(), x);
        EXPECT_EQ(std::stod(format_double(x)), x);
    }
}

TEST(Json, ModelRoundTripIsBitExact) {
    const auto& m = fixture().model;
    const json first = to_json(m);
    const auto back = model_from_json(json::parse(first.dump()));
    EXPECT_EQ(to_json(back), first);
    EXPECT_EQ(back.rvm.posterior.mean, m.rvm.posterior.mean);
    EXPECT_EQ(back.rvm.posterior.covariance, m.rvm.posterior.covariance);
    EXPECT_EQ(back.rvm.posterior.alpha, m.rvm.posterior.alpha);
    EXPECT_EQ(back.archetypes.sigma_a, m.archetypes.sigma_a);
    EXPECT_EQ(back.archetypes.beta, m.archetypes.beta);
    expect_valid("model.v1.json", first);
}

TEST(Json, SessionRoundTripIsBitExact) {
    const auto& f = fixture();
    auto s = start_session("s1", f.corpus.users[0], f.model);
    s = observe_note(s, {Layer::Top, f.corpus.catalog.fragrances[0].descriptors[0], 0.61, 17});
    const json first = to_json(s);
    const auto back = session_from_json(json::parse(first.dump()));
    EXPECT_EQ(to_json(back), first);
    EXPECT_EQ(back.weights.covariance, s.weights.covariance);
    EXPECT_EQ(back.stage, Stage::AwaitMiddle);
    EXPECT_EQ(back.observations[0].timestamp, 17);
    expect_valid("session.v1.json", first);

    json inconsistent = first;
    inconsistent["stage"] = "complete";
    EXPECT_THROW_CODE(session_from_json(inconsistent), ErrorCode::SchemaViolation);
}

TEST(Json, UserRoundTrip) {
    for (const auto& u : fixture().corpus.users) {
        const json j = to_json(u);
        expect_valid("user.v1.json", j);
        EXPECT_EQ(to_json(user_from_json(j)), j);
    }
    EXPECT_THROW_CODE(user_from_json(json::parse(R"({"user_id": 3})")), ErrorCode::SchemaViolation);
    EXPECT_THROW_CODE(user_from_json(json::parse(R"({"user_id": "x", "questionnaire": {"Nope": 1, "scale": {"min": 0, "max": 1}}})")),
                      ErrorCode::SchemaViolation);
}

TEST(Json, CatalogRoundTrip) {
    const auto& c = fixture().corpus.catalog;
    const json j = to_json(c);
    expect_valid("catalog.v1.json", j);
    const auto back = catalog_from_json(j);
    ASSERT_EQ(back.fragrances.size(), c.fragrances.size());
    EXPECT_EQ(back.fragrances[3].descriptors[2], c.fragrances[3].descriptors[2]);
    json bad = j;
    bad["fragrances"][0]["top"].push_back(0.5);
    EXPECT_THROW_CODE(catalog_from_json(bad), ErrorCode::SchemaViolation);
}

TEST(Json, PleasantnessModelRoundTrip) {
    PleasantnessModel m;
    m.p_f = 0.5;
    m.layers = {{{0.9, 0.3}, {0.8, 0.4}, {0.7, 0.2}}};
    const json j = to_json(m);
    expect_valid("pleasantness.v1.json", j);
    EXPECT_EQ(to_json(pleasantness_from_json(j)), j);
    json bad = j;
    bad["p_f"] = 1.0;
    EXPECT_THROW_CODE(pleasantness_from_json(bad), ErrorCode::InvalidArgument);
}

TEST(Json, TruthRoundTrip) {
    const json j = to_json(fixture().corpus.truth);
    expect_valid("truth.v1.json", j);
    const auto back = truth_from_json(j);
    EXPECT_EQ(to_json(back), j);
}

TEST(Csv, RatingsRoundTripWithComments) {
    const auto& c = fixture().corpus;
    const auto text = ratings_to_csv(c.ratings, c.catalog.descriptor_names, {"generated for a test", "seed=42"});
    EXPECT_EQ(text.rfind("# generated for a test\n# seed=42\nuser_id,session_id,layer,citrus", 0), 0U);
    const auto table = ratings_from_csv(text);
    EXPECT_EQ(table.descriptor_names, c.catalog.descriptor_names);
    ASSERT_EQ(table.rows.size(), c.ratings.size());
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        EXPECT_EQ(table.rows[i].rating, c.ratings[i].rating);
        EXPECT_EQ(table.rows[i].descriptor, c.ratings[i].descriptor);
        EXPECT_EQ(table.rows[i].layer, c.ratings[i].layer);
    }
}

TEST(Csv, MalformedInputNamesTheLine) {
    const std::string header = "user_id,session_id,layer,a,rating\n";
    try {
        ratings_from_csv(header + "u,s,T,0.5,0.5\nu,s,X,0.5,0.5\n");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::SchemaViolation);
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
    }
    EXPECT_THROW_CODE(ratings_from_csv(header + "u,s,T,abc,0.5\n"), ErrorCode::SchemaViolation);
    EXPECT_THROW_CODE(ratings_from_csv(header + "u,s,T,0.5\n"), ErrorCode::SchemaViolation);
    EXPECT_THROW_CODE(ratings_from_csv("id,layer\n"), ErrorCode::SchemaViolation);
    EXPECT_THROW_CODE(ratings_from_csv(""), ErrorCode::SchemaViolation);
}

TEST(Jsonl, UsersRoundTripAndLineErrors) {
    const auto& users = fixture().corpus.users;
    const auto text = users_to_jsonl(users);
    EXPECT_EQ(users_to_jsonl(users_from_jsonl(text)), text);
    try {
        users_from_jsonl(R"({"user_id":"a"})" "\n" "{not json}\n");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::SchemaViolation);
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    }
}

TEST(Files, AtomicWriteLeavesNoTemporaries) {
    const auto dir = fs::temp_directory_path() / ("scent-io-" + std::to_string(::getpid()));
    fs::create_directories(dir);
    write_json(dir / "x.json", {{"a", 1}});
    write_json(dir / "x.json", {{"a", 2}});
    EXPECT_EQ(read_json(dir / "x.json").at("a"), 2);
    std::size_t files = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++files;
    EXPECT_EQ(files, 1U);
    write_text_atomic(dir / "bad.json", "{");
    EXPECT_THROW_CODE(read_json(dir / "bad.json"), ErrorCode::SchemaViolation);
    EXPECT_THROW_CODE(read_text(dir / "missing.json"), ErrorCode::Io);
    fs::remove_all(dir);
}

// --- schema validator -----------------------------------------------------

TEST(SchemaValidator, Keywords) {
    schema::Registry reg;
    reg.add_text("t.json", R"({
      "type": "object",
      "required": ["n", "s"],
      "additionalProperties": false,
      "properties": {
        "n": {"type": "integer", "minimum": 1, "maximum": 5},
        "x": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "s": {"type": "string", "minLength": 2},
        "e": {"enum": ["a", "b"]},
        "c": {"const": 7},
        "v": {"type": "array", "items": {"type": "number"}, "minItems": 1, "maxItems": 2},
        "u": {"anyOf": [{"type": "null"}, {"$ref": "#/$defs/pos"}]},
        "m": {"type": "object", "additionalProperties": {"type": "boolean"}}
      },
      "$defs": {"pos": {"type": "number", "minimum": 0}}
    })");
    auto ok = json::parse(R"({"n": 3, "s": "ab"})");
    EXPECT_FALSE(reg.check("t.json", ok).has_value());
    const std::vector<std::pair<std::string, std::string>> bad = {
        {R"({"s": "ab"})", ""},
        {R"({"n": 3.5, "s": "ab"})", "/n"},
        {R"({"n": 0, "s": "ab"})", "/n"},
        {R"({"n": 6, "s": "ab"})", "/n"},
        {R"({"n": 3, "s": "a"})", "/s"},
        {R"({"n": 3, "s": "ab", "x": 0})", "/x"},
        {R"({"n": 3, "s": "ab", "x": 1})", "/x"},
        {R"({"n": 3, "s": "ab", "e": "c"})", "/e"},
        {R"({"n": 3, "s": "ab", "c": 8})", "/c"},
        {R"({"n": 3, "s": "ab", "v": []})", "/v"},
        {R"({"n": 3, "s": "ab", "v": [1, 2, 3]})", "/v"},
        {R"({"n": 3, "s": "ab", "v": ["1"]})", "/v/0"},
        {R"({"n": 3, "s": "ab", "u": -1})", "/u"},
        {R"({"n": 3, "s": "ab", "m": {"k": 1}})", "/m/k"},
        {R"({"n": 3, "s": "ab", "zzz": 1})", "/zzz"},
    };
    for (const auto& [text, path] : bad) {
        const auto v = reg.check("t.json", json::parse(text));
        ASSERT_TRUE(v.has_value()) << text;
        EXPECT_EQ(v->path, path) << text;
    }
    EXPECT_FALSE(reg.check("t.json", json::parse(R"({"n": 3, "s": "ab", "u": null, "m": {"k": true}})")).has_value());
    EXPECT_THROW_CODE(reg.enforce("t.json", json::object()), ErrorCode::SchemaViolation);
    EXPECT_THROW_CODE(reg.enforce("missing.json", json::object()), ErrorCode::NotFound);
}

TEST(SchemaValidator, CrossFileRefs) {
    expect_valid("observe_request.v1.json", json::parse(R"({"layer": "T", "descriptor": [0.1, 0.2], "rating": 0.5})"));
    EXPECT_TRUE(schemas().check("observe_request.v1.json", json::parse(R"({"layer": "X", "descriptor": [], "rating": 0.5})"))
                    .has_value());
    EXPECT_TRUE(schemas().check("user.v1.json", json::parse(R"({"user_id": "a", "behaviors": [{"archetype": "Hero", "kind": "binary", "value": 1, "bernoulli_prob_scale": 2}]})"))
                    .has_value());
}

TEST(SchemaValidator, EveryEmbeddedDocumentParses) {
    EXPECT_GE(schema::embedded_documents().size(), 15U);
    for (const auto& [name, text] : schema::embedded_documents()) {
        const auto doc = json::parse(text);
        EXPECT_EQ(doc.at("$id").get<std::string>(), std::string(name));
    }
}

TEST(Reports, EvalReportMatchesSchema) {
    const auto& f = fixture();
    const auto report = pipeline::evaluate_corpus(f.model, f.corpus.users, f.corpus.ratings,
                                                  f.corpus.truth.true_preference, f.corpus.catalog, f.corpus.truth);
    expect_valid("eval_report.v1.json", to_json(report));
    expect_valid("fit_response.v1.json", {{"model_version", "m1"}, {"status", "ready"}, {"summary", pipeline::fit_summary(f.model)}});
}

}  // namespace
}  // namespace scent::io
