#pragma once

// HTTP/1.1 + JSON service over a single-node store in a data directory:
//
//   <data>/users.v1.jsonl     seed users (optional, read-only)
//   <data>/ratings.v1.csv     historical ratings (optional, read-only)
//   <data>/catalog.v1.json    candidate fragrances (also PUT /v1/catalog)
//   <data>/users/<id>.json    users ingested over HTTP
//   <data>/models/<v>.json    fitted population models; CURRENT names the latest
//   <data>/sessions/<id>.json session state plus stored idempotent responses
//
// Every entity is written with write-then-rename, so a crash leaves either the
// old or the new file. One mutex per session serializes observe calls.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "scent/engine.hpp"
#include "scent/error.hpp"
#include "scent/files.hpp"
#include "scent/pipeline.hpp"
#include "scent/schema.hpp"
#include "scent/schemas_embedded.hpp"
#include "scent/serialize.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose `_res` macro breaks Eigen's
// product kernels if it is defined first.
#include "httplib.h"

namespace scent::service {

namespace fs = std::filesystem;
using nlohmann::json;

inline schema::Registry embedded_registry() {
    schema::Registry reg;
    for (const auto& [name, text] : schema::embedded_documents()) reg.add_text(std::string(name), text);
    return reg;
}

struct Config {
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 binds an ephemeral port
    fs::path data_dir = "scent-data";
    std::optional<std::string> token;  // static bearer token; none disables auth
    PopulationFitOptions fit_defaults;
    std::size_t default_k = 5;
};

/// HTTP status for a domain error raised while serving a request.
inline int status_for(ErrorCode code) {
    switch (code) {
    case ErrorCode::SchemaViolation: return 400;
    case ErrorCode::NotFound: return 404;
    case ErrorCode::WrongStage:
    case ErrorCode::LayerAlreadyObserved:
    case ErrorCode::OutOfOrderLayer:
    case ErrorCode::Conflict:
    case ErrorCode::MissingProfile:
    case ErrorCode::EmptyCandidates: return 409;
    case ErrorCode::Io: return 500;
    default: return 422;
    }
}

inline json error_body(std::string_view code, const std::string& message) {
    return {{"error", {{"code", code}, {"message", message}}}};
}

struct Response {
    int status = 200;
    json body;
};

/// Identifiers become file names, so they are restricted to a safe alphabet.
inline void require_safe_id(const std::string& id, std::string_view what) {
    const bool ok = !id.empty() && id.size() <= 128 && id.find_first_not_of(
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789._-") == std::string::npos && id[0] != '.';
    require(ok, ErrorCode::SchemaViolation, std::string(what) + " must match [A-Za-z0-9._-]{1,128}");
}

class Store {
public:
    struct StoredResponse {
        json request;
        Response response;
    };

    struct SessionEntry {
        std::mutex mutex;
        TastingSession session;
        std::map<std::string, StoredResponse> idempotent;
    };

    explicit Store(fs::path dir) : dir_(std::move(dir)) {
        fs::create_directories(dir_ / "users");
        fs::create_directories(dir_ / "models");
        fs::create_directories(dir_ / "sessions");
        load();
    }

    [[nodiscard]] const fs::path& dir() const noexcept { return dir_; }

    // --- users ---

    void put_user(const UserRecord& user) {
        require_safe_id(user.user_id, "user_id");
        io::write_json(dir_ / "users" / (user.user_id + ".json"), io::to_json(user));
        std::unique_lock lock(mutex_);
        users_[user.user_id] = user;
    }

    [[nodiscard]] std::optional<UserRecord> user(const std::string& id) const {
        std::shared_lock lock(mutex_);
        const auto it = users_.find(id);
        if (it == users_.end()) return std::nullopt;
        return it->second;
    }

    [[nodiscard]] std::vector<UserRecord> users() const {
        std::shared_lock lock(mutex_);
        std::vector<UserRecord> out;
        for (const auto& [id, u] : users_) out.push_back(u);
        return out;
    }

    // --- catalog ---

    void put_catalog(const Catalog& catalog) {
        io::write_json(dir_ / pipeline::kCatalogFile, io::to_json(catalog));
        std::unique_lock lock(mutex_);
        catalog_ = std::make_shared<const Catalog>(catalog);
    }

    [[nodiscard]] std::shared_ptr<const Catalog> catalog() const {
        std::shared_lock lock(mutex_);
        return catalog_;
    }

    // --- models ---

    /// Stores `model` under the next version and makes it current.
    std::shared_ptr<const PopulationModel> add_model(PopulationModel model) {
        std::unique_lock lock(mutex_);
        model.model_version = "m" + std::to_string(models_.size() + 1);
        auto shared = std::make_shared<const PopulationModel>(std::move(model));
        io::write_json(dir_ / "models" / (shared->model_version + ".json"), io::to_json(*shared));
        io::write_text_atomic(dir_ / "models" / "CURRENT", shared->model_version + "\n");
        models_[shared->model_version] = shared;
        current_ = shared->model_version;
        return shared;
    }

    [[nodiscard]] std::shared_ptr<const PopulationModel> model(const std::optional<std::string>& version) const {
        std::shared_lock lock(mutex_);
        if (!version) {
            if (current_.empty()) return nullptr;
            return models_.at(current_);
        }
        const auto it = models_.find(*version);
        require(it != models_.end(), ErrorCode::NotFound, "unknown model version " + *version);
        return it->second;
    }

    // --- sessions ---

    std::string add_session(TastingSession session) {
        auto entry = std::make_shared<SessionEntry>();
        {
            std::unique_lock lock(mutex_);
            do {
                session.session_id = next_session_id();
            } while (sessions_.contains(session.session_id));
            entry->session = std::move(session);
            sessions_[entry->session.session_id] = entry;
        }
        std::lock_guard guard(entry->mutex);
        persist(*entry);
        return entry->session.session_id;
    }

    [[nodiscard]] std::shared_ptr<SessionEntry> session(const std::string& id) const {
        std::shared_lock lock(mutex_);
        const auto it = sessions_.find(id);
        require(it != sessions_.end(), ErrorCode::NotFound, "unknown session " + id);
        return it->second;
    }

    /// Snapshot of a session taken under its lock.
    [[nodiscard]] TastingSession session_copy(const std::string& id) const {
        const auto entry = session(id);
        std::lock_guard guard(entry->mutex);
        return entry->session;
    }

    /// Ratings available for a population fit: the seed file plus every
    /// observation recorded in a session.
    [[nodiscard]] std::vector<RatingRow> ratings() const {
        std::vector<RatingRow> rows = seed_ratings_;
        std::vector<std::shared_ptr<SessionEntry>> entries;
        {
            std::shared_lock lock(mutex_);
            for (const auto& [id, e] : sessions_) entries.push_back(e);
        }
        for (const auto& e : entries) {
            std::lock_guard guard(e->mutex);
            for (const auto& o : e->session.observations) {
                rows.push_back({e->session.user_id, e->session.session_id, o.layer, o.descriptor, o.rating});
            }
        }
        return rows;
    }

    [[nodiscard]] const std::vector<std::string>& seed_descriptor_names() const noexcept { return seed_descriptors_; }

    /// Caller holds entry.mutex.
    void persist(const SessionEntry& entry) const {
        json stored = json::object();
        for (const auto& [key, r] : entry.idempotent) {
            stored[key] = {{"request", r.request}, {"status", r.response.status}, {"body", r.response.body}};
        }
        io::write_json(dir_ / "sessions" / (entry.session.session_id + ".json"),
                       {{"session", io::to_json(entry.session)}, {"idempotency", std::move(stored)}});
    }

private:
    std::string next_session_id() {
        char buf[24];
        std::snprintf(buf, sizeof buf, "s%016llx", static_cast<unsigned long long>(rng_()));
        return buf;
    }

    void load() {
        if (fs::exists(dir_ / pipeline::kUsersFile)) {
            for (auto& u : io::users_from_jsonl(io::read_text(dir_ / pipeline::kUsersFile))) {
                users_[u.user_id] = std::move(u);
            }
        }
        if (fs::exists(dir_ / pipeline::kRatingsFile)) {
            auto table = io::ratings_from_csv(io::read_text(dir_ / pipeline::kRatingsFile));
            seed_ratings_ = std::move(table.rows);
            seed_descriptors_ = std::move(table.descriptor_names);
        }
        if (fs::exists(dir_ / pipeline::kCatalogFile)) {
            catalog_ = std::make_shared<const Catalog>(io::catalog_from_json(io::read_json(dir_ / pipeline::kCatalogFile)));
        }
        for (const auto& f : fs::directory_iterator(dir_ / "users")) {
            if (f.path().extension() != ".json") continue;
            auto u = io::user_from_json(io::read_json(f.path()));
            users_[u.user_id] = std::move(u);
        }
        for (const auto& f : fs::directory_iterator(dir_ / "models")) {
            if (f.path().extension() != ".json") continue;
            auto m = std::make_shared<const PopulationModel>(io::model_from_json(io::read_json(f.path())));
            models_[m->model_version] = m;
        }
        if (fs::exists(dir_ / "models" / "CURRENT")) {
            auto v = io::read_text(dir_ / "models" / "CURRENT");
            while (!v.empty() && (v.back() == '\n' || v.back() == '\r')) v.pop_back();
            if (models_.contains(v)) current_ = v;
        }
        for (const auto& f : fs::directory_iterator(dir_ / "sessions")) {
            if (f.path().extension() != ".json") continue;
            const auto doc = io::read_json(f.path());
            auto entry = std::make_shared<SessionEntry>();
            entry->session = io::session_from_json(doc.at("session"));
            const json stored = doc.value("idempotency", json::object());
            for (const auto& [key, r] : stored.items()) {
                entry->idempotent[key] = {r.at("request"), {r.at("status").get<int>(), r.at("body")}};
            }
            sessions_[entry->session.session_id] = entry;
        }
    }

    fs::path dir_;
    mutable std::shared_mutex mutex_;
    std::map<std::string, UserRecord> users_;
    std::vector<RatingRow> seed_ratings_;
    std::vector<std::string> seed_descriptors_;
    std::shared_ptr<const Catalog> catalog_;
    std::map<std::string, std::shared_ptr<const PopulationModel>> models_;
    std::string current_;
    std::map<std::string, std::shared_ptr<SessionEntry>> sessions_;
    std::mt19937_64 rng_{std::random_device{}()};
};

/// Request handlers, independent of the HTTP transport.
class Api {
public:
    explicit Api(Config cfg) : cfg_(std::move(cfg)), store_(cfg_.data_dir), schemas_(embedded_registry()) {}

    [[nodiscard]] Store& store() noexcept { return store_; }
    [[nodiscard]] const schema::Registry& schemas() const noexcept { return schemas_; }
    [[nodiscard]] const Config& config() const noexcept { return cfg_; }

    Response post_user(const json& body) {
        schemas_.enforce("user.v1.json", body);
        const auto user = io::user_from_json(body);
        require_safe_id(user.user_id, "user_id");
        const auto model = store_.model(std::nullopt);
        json profile = nullptr;
        // validate before storing so a bad record is never persisted
        if (user.questionnaire) (void)normalize_questionnaire(*user.questionnaire);
        if (model) profile = io::to_json(profile_for(user, model->archetypes, model->fit_metadata.q_noise));
        store_.put_user(user);
        return {201, user_view(user.user_id, model, std::move(profile))};
    }

    Response get_user(const std::string& id) {
        const auto user = store_.user(id);
        require(user.has_value(), ErrorCode::NotFound, "unknown user " + id);
        const auto model = store_.model(std::nullopt);
        json profile = nullptr;
        if (model) profile = io::to_json(profile_for(*user, model->archetypes, model->fit_metadata.q_noise));
        return {200, user_view(id, model, std::move(profile))};
    }

    Response fit(const json& body) {
        schemas_.enforce("fit_request.v1.json", body);
        std::lock_guard guard(fit_mutex_);
        auto options = cfg_.fit_defaults;
        if (body.contains("q_noise")) options.q_noise = body.at("q_noise").get<double>();
        if (body.contains("rvm")) {
            auto merged = io::to_json(options.rvm);
            merged.update(body.at("rvm"));
            options.rvm = io::rvm_config_from_json(merged);
        }
        if (body.contains("basis")) options.basis = io::basis_from_json(body.at("basis"));
        if (options.descriptor_names.empty()) options.descriptor_names = store_.seed_descriptor_names();
        if (options.descriptor_names.empty()) {
            if (const auto cat = store_.catalog()) options.descriptor_names = cat->descriptor_names;
        }
        const auto users = store_.users();
        auto ratings = store_.ratings();
        if (body.contains("max_ratings")) {
            ratings.resize(std::min(ratings.size(), body.at("max_ratings").get<std::size_t>()));
        }
        require(!ratings.empty(), ErrorCode::InsufficientData, "no stored ratings to fit");
        const auto model = store_.add_model(fit_population(users, ratings, options));
        return {202, {{"model_version", model->model_version},
                      {"status", "ready"},
                      {"summary", pipeline::fit_summary(*model)}}};
    }

    Response put_catalog(const json& body) {
        schemas_.enforce("catalog.v1.json", body);
        const auto catalog = io::catalog_from_json(body);
        store_.put_catalog(catalog);
        return {200, io::to_json(catalog)};
    }

    Response post_session(const json& body) {
        schemas_.enforce("session_request.v1.json", body);
        const auto user_id = body.at("user_id").get<std::string>();
        const auto user = store_.user(user_id);
        require(user.has_value(), ErrorCode::NotFound, "unknown user " + user_id);
        std::optional<std::string> version;
        if (body.contains("model_version")) version = body.at("model_version").get<std::string>();
        const auto model = store_.model(version);
        if (!model) return {409, error_body("no_model", "no population model has been fitted yet")};
        SessionOptions options;
        if (body.contains("prior_mode")) options.prior_mode = io::prior_mode_from(body.at("prior_mode").get<std::string>());
        if (body.contains("threshold")) options.threshold = body.at("threshold").get<double>();
        if (body.contains("layer_weights")) options.layer_weights = body.at("layer_weights").get<std::array<double, 3>>();
        auto session = start_session("pending", *user, *model, options);
        const auto id = store_.add_session(std::move(session));
        return {201, io::to_json(store_.session_copy(id))};
    }

    Response get_session(const std::string& id) { return {200, io::to_json(store_.session_copy(id))}; }

    /// Replaying a key returns the stored response; reusing it with a different
    /// body is a conflict.
    Response observe(const std::string& id, const json& body, const std::optional<std::string>& key) {
        const auto entry = store_.session(id);
        std::lock_guard guard(entry->mutex);
        if (key) {
            const auto it = entry->idempotent.find(*key);
            if (it != entry->idempotent.end()) {
                if (it->second.request != body) {
                    return {409, error_body("idempotency_key_reused", "idempotency key was used with a different body")};
                }
                return it->second.response;
            }
        }
        schemas_.enforce("observe_request.v1.json", body);

        Response resp;
        try {
            NoteObservation obs;
            obs.layer = io::layer_from(body.at("layer"));
            obs.descriptor = io::vector_from_json(body.at("descriptor"));
            obs.rating = body.at("rating").get<double>();
            obs.timestamp = body.value("timestamp", std::int64_t{0});
            auto next = observe_note(entry->session, obs);
            entry->session = std::move(next);
            resp = {200, io::to_json(entry->session)};
        } catch (const Error& e) {
            resp = {status_for(e.code()), error_body(e.name(), e.what())};
        }
        if (key) entry->idempotent[*key] = {body, resp};
        if (resp.status == 200 || key) store_.persist(*entry);
        return resp;
    }

    Response recommendations(const std::string& id, const std::optional<std::string>& k_param) {
        std::size_t k = cfg_.default_k;
        if (k_param) {
            std::size_t used = 0;
            long long parsed = -1;
            try {
                parsed = std::stoll(*k_param, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            require(used == k_param->size() && parsed >= 0, ErrorCode::SchemaViolation,
                    "k must be a non-negative integer");
            k = static_cast<std::size_t>(parsed);
        }
        const auto session = store_.session_copy(id);
        const auto catalog = store_.catalog();
        require(catalog && !catalog->fragrances.empty(), ErrorCode::EmptyCandidates, "the catalog is empty");
        json list = json::array();
        for (const auto& r : recommend(session, catalog->fragrances, k)) list.push_back(io::to_json(r));
        return {200, {{"session_id", id}, {"stage", stage_name(session.stage)}, {"k", k}, {"recommendations", list}}};
    }

    Response diagnostics(const std::string& id) {
        const auto session = store_.session_copy(id);
        auto body = io::to_json(batch_vs_sequential_check(session));
        body["session_id"] = id;
        body["stage"] = stage_name(session.stage);
        return {200, body};
    }

private:
    static json user_view(const std::string& id, const std::shared_ptr<const PopulationModel>& model, json profile) {
        return {{"user_id", id},
                {"model_version", model ? json(model->model_version) : json(nullptr)},
                {"profile", std::move(profile)}};
    }

    Config cfg_;
    Store store_;
    schema::Registry schemas_;
    std::mutex fit_mutex_;
};

class Server {
public:
    explicit Server(Config cfg) : api_(std::move(cfg)) { routes(); }

    [[nodiscard]] Api& api() noexcept { return api_; }

    /// Binds the configured address; returns the bound port.
    int bind() {
        const auto& cfg = api_.config();
        if (cfg.port == 0) {
            port_ = http_.bind_to_any_port(cfg.host);
        } else {
            port_ = http_.bind_to_port(cfg.host, cfg.port) ? cfg.port : -1;
        }
        require(port_ > 0, ErrorCode::Io, "cannot bind " + cfg.host + ":" + std::to_string(cfg.port));
        return port_;
    }

    /// Blocks until stop().
    bool run() { return http_.listen_after_bind(); }

    void stop() { http_.stop(); }

    [[nodiscard]] int port() const noexcept { return port_; }

private:
    using Handler = std::function<Response(const httplib::Request&)>;

    static json parse_body(const httplib::Request& req) {
        if (req.body.empty()) return json::object();
        try {
            return json::parse(req.body);
        } catch (const json::parse_error& e) {
            fail(ErrorCode::SchemaViolation, std::string("request body is not JSON: ") + e.what());
        }
    }

    void send(httplib::Response& res, const Response& r) {
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    }

    [[nodiscard]] bool authorized(const httplib::Request& req) const {
        const auto& token = api_.config().token;
        if (!token) return true;
        return req.get_header_value("Authorization") == "Bearer " + *token;
    }

    auto wrap(Handler h) {
        return [this, h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
            if (!authorized(req)) {
                send(res, {401, error_body("unauthorized", "missing or invalid bearer token")});
                return;
            }
            try {
                send(res, h(req));
            } catch (const Error& e) {
                send(res, {status_for(e.code()), error_body(e.name(), e.what())});
            } catch (const json::exception& e) {
                send(res, {400, error_body("schema_violation", e.what())});
            } catch (const std::exception& e) {
                send(res, {500, error_body("internal", e.what())});
            }
        };
    }

    void routes() {
        http_.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(R"({"status":"ok"})", "application/json");
        });
        http_.Post("/v1/users", wrap([this](const auto& req) { return api_.post_user(parse_body(req)); }));
        http_.Get(R"(/v1/users/([A-Za-z0-9._-]+))",
                  wrap([this](const auto& req) { return api_.get_user(req.matches[1]); }));
        http_.Post("/v1/models/fit", wrap([this](const auto& req) { return api_.fit(parse_body(req)); }));
        http_.Put("/v1/catalog", wrap([this](const auto& req) { return api_.put_catalog(parse_body(req)); }));
        http_.Post("/v1/sessions", wrap([this](const auto& req) { return api_.post_session(parse_body(req)); }));
        http_.Get(R"(/v1/sessions/([A-Za-z0-9._-]+))",
                  wrap([this](const auto& req) { return api_.get_session(req.matches[1]); }));
        http_.Post(R"(/v1/sessions/([A-Za-z0-9._-]+)/observe)", wrap([this](const auto& req) {
                       std::optional<std::string> key;
                       if (req.has_header("Idempotency-Key")) key = req.get_header_value("Idempotency-Key");
                       return api_.observe(req.matches[1], parse_body(req), key);
                   }));
        http_.Get(R"(/v1/sessions/([A-Za-z0-9._-]+)/recommendations)", wrap([this](const auto& req) {
                      std::optional<std::string> k;
                      if (req.has_param("k")) k = req.get_param_value("k");
                      return api_.recommendations(req.matches[1], k);
                  }));
        http_.Get(R"(/v1/sessions/([A-Za-z0-9._-]+)/diagnostics)",
                  wrap([this](const auto& req) { return api_.diagnostics(req.matches[1]); }));
    }

    Api api_;
    httplib::Server http_;
    int port_ = -1;
};

}  // namespace scent::service
