#pragma once

// Validator for the JSON Schema subset used under schemas/: type, enum, const,
// required, properties, additionalProperties, items, min/maxItems, minLength,
// (exclusive) minimum/maximum, anyOf and $ref ("file.json#/pointer" or local
// "#/pointer"). Unknown keywords are ignored.

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "scent/error.hpp"

namespace scent::schema {

using nlohmann::json;

struct Violation {
    std::string path;  // JSON pointer into the instance
    std::string message;
};

class Registry {
public:
    void add(const std::string& name, json doc) { docs_[name] = std::move(doc); }

    void add_text(const std::string& name, std::string_view text) { add(name, json::parse(text)); }

    [[nodiscard]] bool contains(const std::string& name) const { return docs_.contains(name); }

    /// First violation of `instance` against the schema document `name`, or none.
    [[nodiscard]] std::optional<Violation> check(const std::string& name, const json& instance) const {
        std::vector<Violation> out;
        validate(doc(name), name, instance, "", out);
        if (out.empty()) return std::nullopt;
        return out.front();
    }

    /// Throws SchemaViolation naming the offending path.
    void enforce(const std::string& name, const json& instance) const {
        if (auto v = check(name, instance)) {
            fail(ErrorCode::SchemaViolation, (v->path.empty() ? std::string("/") : v->path) + ": " + v->message);
        }
    }

private:
    [[nodiscard]] const json& doc(const std::string& name) const {
        const auto it = docs_.find(name);
        require(it != docs_.end(), ErrorCode::NotFound, "unknown schema " + name);
        return it->second;
    }

    [[nodiscard]] std::pair<const json*, std::string> resolve(const std::string& ref, const std::string& base) const {
        const auto hash = ref.find('#');
        const std::string file = hash == std::string::npos ? ref : ref.substr(0, hash);
        const std::string pointer = hash == std::string::npos ? "" : ref.substr(hash + 1);
        const std::string target = file.empty() ? base : file;
        const json& root = doc(target);
        if (pointer.empty()) return {&root, target};
        return {&root.at(json::json_pointer(pointer)), target};
    }

    static bool type_matches(const std::string& type, const json& v) {
        if (type == "object") return v.is_object();
        if (type == "array") return v.is_array();
        if (type == "string") return v.is_string();
        if (type == "boolean") return v.is_boolean();
        if (type == "null") return v.is_null();
        if (type == "number") return v.is_number();
        if (type == "integer") {
            if (v.is_number_integer()) return true;
            if (!v.is_number_float()) return false;
            const double x = v.get<double>();
            return std::isfinite(x) && x == std::floor(x);
        }
        return false;
    }

    void validate(const json& s, const std::string& base, const json& v, const std::string& path,
                  std::vector<Violation>& out) const {
        if (s.is_boolean()) {
            if (!s.get<bool>()) out.push_back({path, "no value is allowed here"});
            return;
        }
        if (s.contains("$ref")) {
            const auto [target, file] = resolve(s.at("$ref").get<std::string>(), base);
            validate(*target, file, v, path, out);
            if (!out.empty()) return;
        }
        if (s.contains("type")) {
            const auto& t = s.at("type");
            bool ok = false;
            if (t.is_string()) {
                ok = type_matches(t.get<std::string>(), v);
            } else {
                for (const auto& alt : t) ok = ok || type_matches(alt.get<std::string>(), v);
            }
            if (!ok) {
                out.push_back({path, "expected type " + t.dump() + ", got " + std::string(v.type_name())});
                return;
            }
        }
        if (s.contains("const") && s.at("const") != v) {
            out.push_back({path, "must equal " + s.at("const").dump()});
            return;
        }
        if (s.contains("enum")) {
            bool found = false;
            for (const auto& e : s.at("enum")) found = found || e == v;
            if (!found) {
                out.push_back({path, "must be one of " + s.at("enum").dump()});
                return;
            }
        }
        if (s.contains("anyOf")) {
            bool any = false;
            for (const auto& alt : s.at("anyOf")) {
                std::vector<Violation> sub;
                validate(alt, base, v, path, sub);
                any = any || sub.empty();
            }
            if (!any) {
                out.push_back({path, "matches none of the allowed shapes"});
                return;
            }
        }
        if (v.is_number()) {
            const double x = v.get<double>();
            if (s.contains("minimum") && x < s.at("minimum").get<double>()) {
                out.push_back({path, "must be >= " + s.at("minimum").dump()});
            } else if (s.contains("maximum") && x > s.at("maximum").get<double>()) {
                out.push_back({path, "must be <= " + s.at("maximum").dump()});
            } else if (s.contains("exclusiveMinimum") && !(x > s.at("exclusiveMinimum").get<double>())) {
                out.push_back({path, "must be > " + s.at("exclusiveMinimum").dump()});
            } else if (s.contains("exclusiveMaximum") && !(x < s.at("exclusiveMaximum").get<double>())) {
                out.push_back({path, "must be < " + s.at("exclusiveMaximum").dump()});
            }
        }
        if (v.is_string() && s.contains("minLength") &&
            v.get_ref<const std::string&>().size() < s.at("minLength").get<std::size_t>()) {
            out.push_back({path, "must have at least " + s.at("minLength").dump() + " characters"});
        }
        if (v.is_array()) {
            if (s.contains("minItems") && v.size() < s.at("minItems").get<std::size_t>()) {
                out.push_back({path, "must have at least " + s.at("minItems").dump() + " items"});
            }
            if (s.contains("maxItems") && v.size() > s.at("maxItems").get<std::size_t>()) {
                out.push_back({path, "must have at most " + s.at("maxItems").dump() + " items"});
            }
            if (s.contains("items")) {
                for (std::size_t i = 0; i < v.size() && out.empty(); ++i) {
                    validate(s.at("items"), base, v[i], path + "/" + std::to_string(i), out);
                }
            }
        }
        if (v.is_object()) {
            if (s.contains("required")) {
                for (const auto& key : s.at("required")) {
                    if (!v.contains(key.get<std::string>())) {
                        out.push_back({path, "missing required property '" + key.get<std::string>() + "'"});
                        return;
                    }
                }
            }
            const json* props = s.contains("properties") ? &s.at("properties") : nullptr;
            for (const auto& [key, child] : v.items()) {
                if (!out.empty()) return;
                const auto child_path = path + "/" + key;
                if (props != nullptr && props->contains(key)) {
                    validate(props->at(key), base, child, child_path, out);
                } else if (s.contains("additionalProperties")) {
                    validate(s.at("additionalProperties"), base, child, child_path, out);
                    if (!out.empty() && s.at("additionalProperties").is_boolean()) {
                        out.back().message = "unexpected property '" + key + "'";
                    }
                }
            }
        }
    }

    std::map<std::string, json> docs_;
};

}  // namespace scent::schema
