// scent: simulate, fit, session, chain, eval and serve from the command line.
// Every subcommand is a thin wrapper over scent::pipeline / scent::service.

#include <cstdio>
#include <cstdlib>
#include <csignal>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "scent/files.hpp"
#include "scent/pipeline.hpp"
#include "scent/serialize.hpp"
#include "scent/service.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace scent;

fs::path data_dir() {
    const char* env = std::getenv("SCENT_DATA_DIR");
    return env != nullptr && *env != '\0' ? fs::path(env) : fs::path(".");
}

fs::path or_default(const std::string& flag, const char* file) {
    return flag.empty() ? data_dir() / file : fs::path(flag);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(s);
    while (std::getline(in, cell, sep)) out.push_back(cell);
    return out;
}

void print(const json& j, bool as_json, const std::string& text) {
    if (as_json) {
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << text;
    }
}

std::string fmt(double x, int precision = 6) {
    std::ostringstream out;
    out.precision(precision);
    out << x;
    return out.str();
}

std::string vec_text(const json& v, int precision = 4) {
    std::string out = "[";
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + fmt(v[i].get<double>(), precision);
    return out + "]";
}

scent::service::Server* g_server = nullptr;

void on_signal(int) {
    if (g_server != nullptr) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fragrance preference engine: archetype inference, sparse Bayesian fits, tasting sessions"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "scent 1.0.0");

    // simulate
    auto* sim = app.add_subcommand("simulate", "Write a synthetic corpus with known ground truth");
    synth::GeneratorConfig gen;
    std::string sim_out;
    bool sim_json = false;
    sim->add_option("--seed", gen.seed, "PRNG seed")->capture_default_str();
    sim->add_option("--users", gen.n_users, "Number of users")->capture_default_str()->check(CLI::PositiveNumber);
    sim->add_option("--tastings", gen.tastings_per_user, "Tastings per user")->capture_default_str();
    sim->add_option("--fragrances", gen.n_fragrances, "Catalog size")->capture_default_str();
    sim->add_option("--noise-sd", gen.noise_sd, "Rating noise sd")->capture_default_str();
    sim->add_flag("--heavy-tailed", gen.heavy_tailed_noise, "Student-t(3) rating noise (misspecified regime)");
    sim->add_option("--out", sim_out, "Output directory (default $SCENT_DATA_DIR or .)");
    sim->add_flag("--json", sim_json, "Machine-readable output");

    // fit
    auto* fit = app.add_subcommand("fit", "Fit a population model from users and ratings");
    std::string fit_users;
    std::string fit_ratings;
    std::string fit_out;
    std::optional<std::size_t> fit_max;
    double fit_q_noise = kDefaultQuestionnaireNoise;
    RvmConfig rvm_cfg;
    bool fit_json = false;
    fit->add_option("--users", fit_users, "users.v1.jsonl");
    fit->add_option("--ratings", fit_ratings, "ratings.v1.csv");
    fit->add_option("--out", fit_out, "Model file to write (default model.v1.json)");
    fit->add_option("--max-ratings", fit_max, "Use only the first N rating rows");
    fit->add_option("--q-noise", fit_q_noise, "Questionnaire noise variance")->capture_default_str();
    fit->add_option("--gamma-shape", rvm_cfg.gamma_shape, "Gamma hyperprior shape a")->capture_default_str();
    fit->add_option("--gamma-rate", rvm_cfg.gamma_rate, "Gamma hyperprior rate b")->capture_default_str();
    fit->add_option("--prune-threshold", rvm_cfg.prune_threshold, "Prune when alpha exceeds this")
        ->capture_default_str();
    fit->add_option("--max-iters", rvm_cfg.max_iters, "Re-estimation iteration cap")->capture_default_str();
    fit->add_option("--tol", rvm_cfg.tol, "Convergence tolerance on log alpha")->capture_default_str();
    fit->add_flag("--json", fit_json, "Machine-readable output");

    // session
    auto* ses = app.add_subcommand("session", "Run one three-note tasting session headlessly");
    std::string ses_model;
    std::string ses_users;
    std::string ses_catalog;
    std::string ses_ratings;
    std::string ses_prior = "hyperprior";
    pipeline::SessionRequest ses_req;
    bool ses_json = false;
    ses->add_option("--model", ses_model, "model.v1.json");
    ses->add_option("--user", ses_req.user_id, "User id")->required();
    ses->add_option("--ratings", ses_ratings, "Ratings for T,M,B, e.g. 0.8,0.6,0.7")->required();
    ses->add_option("--users", ses_users, "users.v1.jsonl");
    ses->add_option("--catalog", ses_catalog, "catalog.v1.json");
    ses->add_option("--fragrance", ses_req.fragrance_id, "Fragrance being tasted (default: first in catalog)");
    ses->add_option("-k,--top", ses_req.k, "Number of recommendations")->capture_default_str();
    ses->add_option("--prior", ses_prior, "Session weight prior")
        ->check(CLI::IsMember({"hyperprior", "population"}))
        ->capture_default_str();
    ses->add_option("--threshold", ses_req.options.threshold, "Pleasantness threshold")->capture_default_str();
    ses->add_flag("--json", ses_json, "Machine-readable output");

    // chain
    auto* chn = app.add_subcommand("chain", "Pleasantness chain over top, middle and base outcomes");
    std::string chn_model;
    std::string chn_outcomes;
    bool chn_json = false;
    chn->add_option("--model", chn_model, "Pleasantness model JSON")->required();
    chn->add_option("--outcomes", chn_outcomes, "Outcomes for T,M,B: p (pleasant) or u (unpleasant), e.g. p,p,u")
        ->required();
    chn->add_flag("--json", chn_json, "Machine-readable output");

    // eval
    auto* evl = app.add_subcommand("eval", "Score a model against synthetic ground truth");
    pipeline::EvalRequest eval_req;
    std::string evl_model;
    std::string evl_truth;
    std::string evl_report;
    std::string evl_users;
    std::string evl_ratings;
    std::string evl_catalog;
    bool evl_json = false;
    evl->add_option("--model", evl_model, "model.v1.json");
    evl->add_option("--truth", evl_truth, "truth.v1.json");
    evl->add_option("--report", evl_report, "Report file to write");
    evl->add_option("--users", evl_users, "users.v1.jsonl (default: next to the truth file)");
    evl->add_option("--ratings", evl_ratings, "ratings.v1.csv (default: next to the truth file)");
    evl->add_option("--catalog", evl_catalog, "catalog.v1.json (default: next to the truth file)");
    evl->add_option("--max-ratings", eval_req.max_ratings, "Evaluate only the first N rating rows");
    evl->add_option("-k,--top", eval_req.k, "k for top-k regret")->capture_default_str();
    evl->add_flag("--json", evl_json, "Machine-readable output");

    // serve
    auto* srv = app.add_subcommand("serve", "Run the HTTP service");
    std::string srv_addr;
    std::string srv_data;
    std::string srv_token;
    double srv_q_noise = kDefaultQuestionnaireNoise;
    bool srv_json = false;
    srv->add_option("--addr", srv_addr, "HOST:PORT (default $SCENT_ADDR or 127.0.0.1:8080)");
    srv->add_option("--data", srv_data, "Data directory (default $SCENT_DATA_DIR or ./scent-data)");
    srv->add_option("--token", srv_token, "Static bearer token (default $SCENT_TOKEN; empty disables auth)");
    srv->add_option("--q-noise", srv_q_noise, "Questionnaire noise variance for fits")->capture_default_str();
    srv->add_flag("--json", srv_json, "Machine-readable startup line");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*sim) {
            const fs::path out = sim_out.empty() ? data_dir() : fs::path(sim_out);
            const auto summary = pipeline::simulate_to_directory(gen, out);
            print(summary, sim_json,
                  "wrote " + std::to_string(summary["users"].get<std::size_t>()) + " users, " +
                      std::to_string(summary["ratings"].get<std::size_t>()) + " ratings, " +
                      std::to_string(summary["fragrances"].get<std::size_t>()) + " fragrances to " + out.string() +
                      "\n");
        } else if (*fit) {
            pipeline::FitRequest req;
            req.users = or_default(fit_users, pipeline::kUsersFile);
            req.ratings = or_default(fit_ratings, pipeline::kRatingsFile);
            req.max_ratings = fit_max;
            req.options.q_noise = fit_q_noise;
            req.options.rvm = rvm_cfg;
            const auto model = pipeline::fit_from_files(req);
            const fs::path out = or_default(fit_out, "model.v1.json");
            io::write_json(out, io::to_json(model));
            auto summary = pipeline::fit_summary(model);
            summary["out"] = out.string();
            std::string text = "model " + model.model_version + " -> " + out.string() + "\n";
            text += "  active " + std::to_string(model.rvm.posterior.mean.size()) + " of " +
                    std::to_string(model.rvm.posterior.active.size()) + " basis functions:";
            for (const auto& n : summary["active"]) text += " " + n.get<std::string>();
            text += "\n  noise variance " + fmt(model.rvm.posterior.noise_variance) + ", " +
                    std::to_string(model.rvm.posterior.fit.iterations) + " iterations" +
                    (model.rvm.posterior.fit.converged ? "" : " (not converged)") + "\n";
            text += "  layer mu " + vec_text(summary["mu"]) + " sigma " + vec_text(summary["sigma"]) + "\n";
            print(summary, fit_json, text);
        } else if (*ses) {
            const auto parts = split(ses_ratings, ',');
            require(parts.size() == 3, ErrorCode::InvalidArgument, "--ratings needs three values: T,M,B");
            for (std::size_t i = 0; i < 3; ++i) {
                std::size_t used = 0;
                double x = 0.0;
                try {
                    x = std::stod(parts[i], &used);
                } catch (const std::exception&) {
                    used = 0;
                }
                require(used == parts[i].size() && used > 0, ErrorCode::InvalidArgument,
                        "rating '" + parts[i] + "' is not a number");
                ses_req.ratings[i] = x;
            }
            ses_req.options.prior_mode = io::prior_mode_from(ses_prior);
            const auto model = io::model_from_json(io::read_json(or_default(ses_model, "model.v1.json")));
            const auto users = io::users_from_jsonl(io::read_text(or_default(ses_users, pipeline::kUsersFile)));
            const auto catalog = io::catalog_from_json(io::read_json(or_default(ses_catalog, pipeline::kCatalogFile)));
            const auto result = pipeline::run_session(model, users, catalog, ses_req);
            std::string text = "user " + ses_req.user_id + ", tasting " + result["fragrance_id"].get<std::string>() +
                               " (model " + model.model_version + ")\n";
            for (const auto& step : result["trajectory"]) {
                text += "  " + step["stage"].get<std::string>() + ": theta " + vec_text(step["theta"]) + " var " +
                        vec_text(step["theta_var"]) + "  P(pleasant) " +
                        fmt(step["tasted"]["pleasant_probability"].get<double>(), 4) + "\n";
            }
            text += "top " + std::to_string(result["recommendations"].size()) + ":\n";
            for (const auto& r : result["recommendations"]) {
                text += "  " + r["fragrance_id"].get<std::string>() + "  mean " + fmt(r["mean"].get<double>(), 4) +
                        "  var " + fmt(r["variance"].get<double>(), 4) + "  P(pleasant) " +
                        fmt(r["pleasant_probability"].get<double>(), 4) + "\n";
            }
            text += "batch vs sequential deviation " + fmt(result["diagnostics"]["deviation"].get<double>(), 3) + "\n";
            print(result, ses_json, text);
        } else if (*chn) {
            const auto parts = split(chn_outcomes, ',');
            require(parts.size() == 3, ErrorCode::InvalidArgument, "--outcomes needs three values: T,M,B");
            std::array<Outcome, 3> outcomes{};
            for (std::size_t i = 0; i < 3; ++i) {
                const auto o = parse_outcome(parts[i]);
                require(o.has_value(), ErrorCode::InvalidArgument, "outcome '" + parts[i] + "' must be p or u");
                outcomes[i] = *o;
            }
            const auto model = io::pleasantness_from_json(io::read_json(chn_model));
            const auto result = pipeline::run_chain(model, outcomes);
            std::string text = "prior " + fmt(model.p_f, 10) + "\n";
            for (std::size_t i = 1; i < result["steps"].size(); ++i) {
                const auto& s = result["steps"][i];
                text += "  " + s["layer"].get<std::string>() + "=" + s["outcome"].get<std::string>() + " -> " +
                        fmt(s["posterior"].get<double>(), 10) + "\n";
            }
            text += "posterior " + fmt(result["posterior"].get<double>(), 10) + "\n";
            print(result, chn_json, text);
        } else if (*evl) {
            eval_req.model = or_default(evl_model, "model.v1.json");
            eval_req.truth = or_default(evl_truth, pipeline::kTruthFile);
            eval_req.users = evl_users;
            eval_req.ratings = evl_ratings;
            eval_req.catalog = evl_catalog;
            const auto report = io::to_json(pipeline::evaluate_files(eval_req));
            if (!evl_report.empty()) io::write_json(evl_report, report);
            std::string text;
            for (const auto& [k, v] : report.items()) text += k + " " + v.dump() + "\n";
            print(report, evl_json, text);
        } else if (*srv) {
            service::Config cfg;
            std::string addr = srv_addr;
            if (addr.empty()) {
                const char* env = std::getenv("SCENT_ADDR");
                addr = env != nullptr && *env != '\0' ? env : "127.0.0.1:8080";
            }
            const auto colon = addr.rfind(':');
            require(colon != std::string::npos, ErrorCode::InvalidArgument, "--addr must be HOST:PORT");
            cfg.host = addr.substr(0, colon);
            try {
                cfg.port = std::stoi(addr.substr(colon + 1));
            } catch (const std::exception&) {
                fail(ErrorCode::InvalidArgument, "--addr port is not a number");
            }
            if (!srv_data.empty()) {
                cfg.data_dir = srv_data;
            } else if (const char* env = std::getenv("SCENT_DATA_DIR"); env != nullptr && *env != '\0') {
                cfg.data_dir = env;
            }
            std::string token = srv_token;
            if (token.empty()) {
                if (const char* env = std::getenv("SCENT_TOKEN")) token = env;
            }
            if (!token.empty()) cfg.token = token;
            cfg.fit_defaults.q_noise = srv_q_noise;

            service::Server server(cfg);
            const int port = server.bind();
            g_server = &server;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            print({{"listening", cfg.host + ":" + std::to_string(port)}, {"data", cfg.data_dir.string()}}, srv_json,
                  "listening on " + cfg.host + ":" + std::to_string(port) + ", data in " + cfg.data_dir.string() +
                      "\n");
            std::cout.flush();
            server.run();
            g_server = nullptr;
        }
    } catch (const Error& e) {
        std::cerr << json{{"error", {{"code", e.name()}, {"message", e.what()}}}}.dump() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << json{{"error", {{"code", "internal"}, {"message", e.what()}}}}.dump() << "\n";
        return 1;
    }
    return 0;
}
