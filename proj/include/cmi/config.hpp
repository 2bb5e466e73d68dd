#pragma once

// AttackConfig <-> JSON. Unspecified keys keep their defaults; unknown keys
// and invariant violations are config errors naming the field.

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "cmi/canonical_json.hpp"
#include "cmi/cmi_engine.hpp"
#include "cmi/errors.hpp"

namespace cmi {

inline const std::set<std::string>& config_keys() {
    static const std::set<std::string> keys{
        "eps_image", "alpha",      "steps_image", "steps_interact", "lambda_",       "eps_text",
        "tau",       "k_substitutes", "scales",  "seed",           "eg_enabled",    "ie_enabled",
        "text_strategy", "image_set_loss", "carry_interaction_image"};
    return keys;
}

inline json to_json(const AttackConfig& cfg) {
    return json{{"eps_image", cfg.eps_image},
                {"alpha", cfg.alpha},
                {"steps_image", cfg.steps_image},
                {"steps_interact", cfg.steps_interact},
                {"lambda_", cfg.lambda_},
                {"eps_text", cfg.eps_text},
                {"tau", cfg.tau},
                {"k_substitutes", cfg.k_substitutes},
                {"scales", cfg.scales},
                {"seed", cfg.seed},
                {"eg_enabled", cfg.eg_enabled},
                {"ie_enabled", cfg.ie_enabled},
                {"text_strategy", to_string(cfg.text_strategy)},
                {"image_set_loss", {{"kind", to_string(cfg.image_set_loss.kind)}, {"weight", cfg.image_set_loss.weight}}},
                {"carry_interaction_image", cfg.carry_interaction_image}};
}

namespace detail {

inline double config_real(const json& j, const std::string& key) {
    if (!j.is_number()) throw ConfigError(key + ": expected a number");
    return j.get<double>();
}

inline std::uint64_t config_count(const json& j, const std::string& key) {
    if (j.is_number_unsigned()) return j.get<std::uint64_t>();
    if (j.is_number_integer()) throw ConfigError(key + ": must be >= 0");
    throw ConfigError(key + ": expected a non-negative integer");
}

inline bool config_bool(const json& j, const std::string& key) {
    if (!j.is_boolean()) throw ConfigError(key + ": expected true or false");
    return j.get<bool>();
}

} // namespace detail

inline AttackConfig config_from_json(const json& j, bool strict = true) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    AttackConfig cfg;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& key = it.key();
        const json& v = it.value();
        if (key == "eps_image") cfg.eps_image = detail::config_real(v, key);
        else if (key == "alpha") cfg.alpha = detail::config_real(v, key);
        else if (key == "steps_image") cfg.steps_image = detail::config_count(v, key);
        else if (key == "steps_interact") cfg.steps_interact = detail::config_count(v, key);
        else if (key == "lambda_") cfg.lambda_ = detail::config_real(v, key);
        else if (key == "eps_text") cfg.eps_text = detail::config_count(v, key);
        else if (key == "tau") cfg.tau = detail::config_real(v, key);
        else if (key == "k_substitutes") cfg.k_substitutes = detail::config_count(v, key);
        else if (key == "seed") cfg.seed = detail::config_count(v, key);
        else if (key == "eg_enabled") cfg.eg_enabled = detail::config_bool(v, key);
        else if (key == "ie_enabled") cfg.ie_enabled = detail::config_bool(v, key);
        else if (key == "carry_interaction_image") cfg.carry_interaction_image = detail::config_bool(v, key);
        else if (key == "scales") {
            if (!v.is_array()) throw ConfigError("scales: expected an array of numbers");
            cfg.scales.clear();
            for (const auto& s : v) cfg.scales.push_back(detail::config_real(s, key));
        } else if (key == "text_strategy") {
            if (!v.is_string()) throw ConfigError("text_strategy: expected a string");
            cfg.text_strategy = text_strategy_from_string(v.get<std::string>());
        } else if (key == "image_set_loss") {
            if (v.is_string()) {
                cfg.image_set_loss = SetLossSpec{set_loss_kind_from_string(v.get<std::string>()), 1.0};
            } else if (v.is_object()) {
                for (auto f = v.begin(); f != v.end(); ++f) {
                    if (f.key() == "kind") {
                        if (!f.value().is_string()) throw ConfigError("image_set_loss.kind: expected a string");
                        cfg.image_set_loss.kind = set_loss_kind_from_string(f.value().get<std::string>());
                    } else if (f.key() == "weight") {
                        cfg.image_set_loss.weight = detail::config_real(f.value(), "image_set_loss.weight");
                    } else if (strict) {
                        throw ConfigError("image_set_loss: unknown key '" + f.key() + "'");
                    }
                }
            } else {
                throw ConfigError("image_set_loss: expected a string or an object");
            }
        } else if (strict) {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }
    validate(cfg);
    return cfg;
}

inline AttackConfig load_config(const std::string& path, bool strict = true) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    return config_from_json(j, strict);
}

inline std::string config_digest(const AttackConfig& cfg) { return digest_hex(canonical_dump(to_json(cfg))); }

} // namespace cmi
