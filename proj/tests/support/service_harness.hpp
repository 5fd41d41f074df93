#pragma once

// In-process service on an ephemeral port over a throwaway data directory,
// seeded with a small synthetic corpus. Shared by the unit and acceptance tests.

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>

#include "scent/pipeline.hpp"
#include "scent/service.hpp"

namespace scent::testing {

namespace fs = std::filesystem;
using nlohmann::json;

inline fs::path fresh_temp_dir(const std::string& tag) {
    std::random_device rd;
    const auto dir = fs::temp_directory_path() / ("scent-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(dir);
    return dir;
}

/// Writes seed users, ratings and catalog (no truth) into `dir`.
inline void seed_corpus(const fs::path& dir, std::size_t n_users = 60, std::uint64_t seed = 42) {
    synth::GeneratorConfig cfg;
    cfg.seed = seed;
    cfg.n_users = n_users;
    pipeline::simulate_to_directory(cfg, dir);
    fs::remove(dir / pipeline::kTruthFile);
}

struct HttpResult {
    int status = 0;
    json body;
};

class ServiceHarness {
public:
    explicit ServiceHarness(fs::path dir, std::optional<std::string> token = std::nullopt) : dir_(std::move(dir)) {
        service::Config cfg;
        cfg.port = 0;
        cfg.data_dir = dir_;
        cfg.token = std::move(token);
        server_ = std::make_unique<service::Server>(cfg);
        port_ = server_->bind();
        thread_ = std::thread([this] { server_->run(); });
        auto c = client();
        for (int i = 0; i < 200 && !c.Get("/healthz"); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }

    ServiceHarness(const ServiceHarness&) = delete;
    ServiceHarness& operator=(const ServiceHarness&) = delete;

    ~ServiceHarness() {
        server_->stop();
        if (thread_.joinable()) thread_.join();
    }

    [[nodiscard]] int port() const { return port_; }
    [[nodiscard]] const fs::path& dir() const { return dir_; }
    [[nodiscard]] service::Server& server() { return *server_; }

    [[nodiscard]] httplib::Client client() const {
        httplib::Client c("127.0.0.1", port_);
        c.set_read_timeout(60, 0);
        return c;
    }

    HttpResult call(const std::string& method, const std::string& path, const std::optional<json>& body = std::nullopt,
                    httplib::Headers headers = {}) const {
        auto c = client();
        const std::string payload = body ? body->dump() : std::string();
        httplib::Result r;
        if (method == "GET") {
            r = c.Get(path, headers);
        } else if (method == "POST") {
            r = c.Post(path, headers, payload, "application/json");
        } else if (method == "PUT") {
            r = c.Put(path, headers, payload, "application/json");
        }
        if (!r) return {0, json()};
        HttpResult out{r->status, json()};
        if (!r->body.empty()) out.body = json::parse(r->body, nullptr, false);
        return out;
    }

    HttpResult observe(const std::string& session, const json& body, const std::optional<std::string>& key = {}) const {
        httplib::Headers h;
        if (key) h.emplace("Idempotency-Key", *key);
        return call("POST", "/v1/sessions/" + session + "/observe", body, h);
    }

private:
    fs::path dir_;
    std::unique_ptr<service::Server> server_;
    int port_ = -1;
    std::thread thread_;
};

inline json observe_body(const Catalog& catalog, Layer layer, double rating, std::size_t fragrance = 0) {
    return {{"layer", io::layer_name(layer)},
            {"descriptor", io::to_json(catalog.fragrances[fragrance].descriptors[index_of(layer)])},
            {"rating", rating}};
}

}  // namespace scent::testing
