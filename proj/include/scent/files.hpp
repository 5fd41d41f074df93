#pragma once

// On-disk corpus formats: users.v1.jsonl, ratings.v1.csv, truth.v1.json and
// the JSON documents from serialize.hpp. Writes go through a temp file and a
// rename so readers never see a partial file.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "scent/error.hpp"
#include "scent/records.hpp"
#include "scent/serialize.hpp"
#include "scent/synth.hpp"

namespace scent::io {

namespace fs = std::filesystem;

inline std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::Io, "cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline void write_text_atomic(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        require(out.good(), ErrorCode::Io, "cannot write " + tmp.string());
        out << text;
        out.flush();
        require(out.good(), ErrorCode::Io, "write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    require(!ec, ErrorCode::Io, "cannot rename " + tmp.string() + ": " + ec.message());
}

inline json read_json(const fs::path& path) {
    const auto text = read_text(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        fail(ErrorCode::SchemaViolation, path.string() + ": " + e.what());
    }
}

inline void write_json(const fs::path& path, const json& j) { write_text_atomic(path, j.dump(2) + "\n"); }

// --- users.v1.jsonl -------------------------------------------------------

inline std::string users_to_jsonl(std::span<const UserRecord> users) {
    std::string out;
    for (const auto& u : users) out += to_json(u).dump() + "\n";
    return out;
}

inline std::vector<UserRecord> users_from_jsonl(const std::string& text) {
    std::vector<UserRecord> users;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            users.push_back(user_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            fail(ErrorCode::SchemaViolation, "users line " + std::to_string(lineno) + ": " + e.what());
        } catch (const Error& e) {
            fail(e.code(), "users line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return users;
}

// --- ratings.v1.csv -------------------------------------------------------

inline std::string format_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

/// `comments` become leading '#' lines (the generator records its PRNG there).
inline std::string ratings_to_csv(std::span<const RatingRow> rows, const std::vector<std::string>& descriptor_names,
                                  const std::vector<std::string>& comments = {}) {
    std::string out;
    for (const auto& c : comments) out += "# " + c + "\n";
    out += "user_id,session_id,layer";
    for (const auto& n : descriptor_names) out += "," + n;
    out += ",rating\n";
    for (const auto& r : rows) {
        require(static_cast<std::size_t>(r.descriptor.size()) == descriptor_names.size(), ErrorCode::DimensionMismatch,
                "rating descriptor does not match the descriptor header");
        out += r.user_id + "," + r.session_id + "," + layer_name(r.layer);
        for (Eigen::Index j = 0; j < r.descriptor.size(); ++j) out += "," + format_double(r.descriptor[j]);
        out += "," + format_double(r.rating) + "\n";
    }
    return out;
}

struct RatingsTable {
    std::vector<std::string> descriptor_names;
    std::vector<RatingRow> rows;
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) {
        if (!cell.empty() && cell.back() == '\r') cell.pop_back();
        cells.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

inline double parse_number(const std::string& s, std::size_t lineno) {
    std::size_t used = 0;
    double x = 0.0;
    try {
        x = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    require(used == s.size() && !s.empty(), ErrorCode::SchemaViolation,
            "ratings line " + std::to_string(lineno) + ": '" + s + "' is not a number");
    return x;
}

}  // namespace detail

inline RatingsTable ratings_from_csv(const std::string& text) {
    RatingsTable table;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    bool header = false;
    std::size_t width = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#' || line == "\r") continue;
        const auto cells = detail::split_csv(line);
        if (!header) {
            require(cells.size() >= 4 && cells[0] == "user_id" && cells[1] == "session_id" && cells[2] == "layer" &&
                        cells.back() == "rating",
                    ErrorCode::SchemaViolation, "ratings header must be user_id,session_id,layer,<descriptors>,rating");
            table.descriptor_names.assign(cells.begin() + 3, cells.end() - 1);
            width = cells.size();
            header = true;
            continue;
        }
        require(cells.size() == width, ErrorCode::SchemaViolation,
                "ratings line " + std::to_string(lineno) + " has " + std::to_string(cells.size()) + " fields, expected " +
                    std::to_string(width));
        RatingRow row;
        row.user_id = cells[0];
        row.session_id = cells[1];
        const auto layer = parse_layer(cells[2]);
        require(layer.has_value(), ErrorCode::SchemaViolation,
                "ratings line " + std::to_string(lineno) + ": layer must be T, M or B");
        row.layer = *layer;
        row.descriptor.resize(static_cast<Eigen::Index>(width - 4));
        for (std::size_t j = 3; j + 1 < width; ++j) {
            row.descriptor[static_cast<Eigen::Index>(j - 3)] = detail::parse_number(cells[j], lineno);
        }
        row.rating = detail::parse_number(cells.back(), lineno);
        table.rows.push_back(std::move(row));
    }
    require(header, ErrorCode::SchemaViolation, "ratings file has no header");
    return table;
}

// --- truth.v1.json and reports --------------------------------------------

inline constexpr std::string_view kTruthSchema = "scent.truth.v1";

inline json to_json(const synth::GroundTruth& t) {
    json archetypes = json::object();
    for (const auto& [id, a] : t.archetypes) archetypes[id] = to_json(a);
    return {{"schema", kTruthSchema},
            {"prng", synth::kPrngName},
            {"normal_method", synth::kNormalMethod},
            {"seed", t.seed},
            {"n_users", t.n_users},
            {"noise_sd", t.noise_sd},
            {"questionnaire_noise_sd", t.questionnaire_noise_sd},
            {"weights", to_json(t.weights)},
            {"active", t.active},
            {"mu_a", to_json(t.mu_a)},
            {"beta", matrix_to_json(t.beta)},
            {"sigma_a", matrix_to_json(t.sigma_a)},
            {"archetypes", std::move(archetypes)},
            {"true_preference", t.true_preference}};
}

inline synth::GroundTruth truth_from_json(const json& j) {
    return guarded([&] {
        require(j.value("schema", std::string()) == kTruthSchema, ErrorCode::SchemaViolation,
                "not a scent.truth.v1 document");
        synth::GroundTruth t;
        t.seed = j.at("seed").get<std::uint64_t>();
        t.n_users = j.at("n_users").get<std::size_t>();
        t.noise_sd = j.at("noise_sd").get<double>();
        t.questionnaire_noise_sd = j.value("questionnaire_noise_sd", 0.0);
        t.weights = vector_from_json(j.at("weights"));
        t.active = j.at("active").get<std::vector<std::size_t>>();
        t.mu_a = vector_from_json(j.at("mu_a"));
        t.beta = matrix_from_json(j.at("beta"));
        t.sigma_a = matrix_from_json(j.at("sigma_a"));
        for (const auto& [id, a] : j.at("archetypes").items()) t.archetypes[id] = vector_from_json(a);
        t.true_preference = j.at("true_preference").get<std::vector<double>>();
        return t;
    });
}

inline json to_json(const synth::EvalReport& r) {
    return {{"nmse", r.nmse},
            {"expected_calibration_error", r.expected_calibration_error},
            {"sparsity_recovered", r.sparsity_recovered},
            {"top_k_regret", r.top_k_regret},
            {"runtime_ms", r.runtime_ms}};
}

}  // namespace scent::io
