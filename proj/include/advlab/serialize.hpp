#pragma once

// JSON encoding of the library's value types, with strict field checking on the way in.

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attacks.hpp"
#include "errors.hpp"
#include "format.hpp"
#include "models.hpp"
#include "objectives.hpp"
#include "optim.hpp"

namespace advlab {

using Json = nlohmann::ordered_json;

/// Reads one JSON object, remembering which keys were consumed so that leftovers can be
/// rejected. Every error names the full dotted field path.
class JsonReader {
public:
    JsonReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + " must be a JSON object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    JsonReader child(const std::string& key) {
        used_.insert(key);
        if (!j_.contains(key)) return JsonReader(empty_object(), field(key));
        return JsonReader(j_.at(key), field(key));
    }

    const Json& raw(const std::string& key) {
        used_.insert(key);
        return j_.at(key);
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    double number(const std::string& key, double fallback) {
        used_.insert(key);
        if (!j_.contains(key)) return fallback;
        return to_number(j_.at(key), field(key));
    }

    std::uint64_t unsigned_int(const std::string& key, std::uint64_t fallback) {
        used_.insert(key);
        if (!j_.contains(key)) return fallback;
        const Json& v = j_.at(key);
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
            throw ConfigError("config field '" + field(key) + "' must be a non-negative integer");
        return v.get<std::uint64_t>();
    }

    bool boolean(const std::string& key, bool fallback) {
        used_.insert(key);
        if (!j_.contains(key)) return fallback;
        if (!j_.at(key).is_boolean()) throw ConfigError("config field '" + field(key) + "' must be true or false");
        return j_.at(key).get<bool>();
    }

    std::string string(const std::string& key, const std::string& fallback) {
        used_.insert(key);
        if (!j_.contains(key)) return fallback;
        if (!j_.at(key).is_string()) throw ConfigError("config field '" + field(key) + "' must be a string");
        return j_.at(key).get<std::string>();
    }

    std::vector<double> numbers(const std::string& key, std::vector<double> fallback) {
        used_.insert(key);
        if (!j_.contains(key)) return fallback;
        const Json& v = j_.at(key);
        if (!v.is_array()) throw ConfigError("config field '" + field(key) + "' must be an array of numbers");
        std::vector<double> out;
        for (std::size_t i = 0; i < v.size(); ++i) out.push_back(to_number(v[i], field(key) + "[" + std::to_string(i) + "]"));
        return out;
    }

    std::vector<std::size_t> sizes(const std::string& key, std::vector<std::size_t> fallback) {
        used_.insert(key);
        if (!j_.contains(key)) return fallback;
        const Json& v = j_.at(key);
        if (!v.is_array()) throw ConfigError("config field '" + field(key) + "' must be an array of integers");
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_number_unsigned())
                throw ConfigError("config field '" + field(key) + "[" + std::to_string(i) +
                                  "]' must be a non-negative integer");
            out.push_back(v[i].get<std::size_t>());
        }
        return out;
    }

    /// Rejects any key that was never asked for.
    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!used_.count(k)) throw ConfigError("unknown config key '" + field(k) + "'");
    }

private:
    static const Json& empty_object() {
        static const Json e = Json::object();
        return e;
    }

    std::string where() const { return path_.empty() ? "config document" : "config field '" + path_ + "'"; }

    /// Accepts plain numbers and "a/b" fraction strings such as "8/255".
    static double to_number(const Json& v, const std::string& name) {
        if (v.is_number()) return v.get<double>();
        if (v.is_string()) {
            const std::string s = v.get<std::string>();
            const auto slash = s.find('/');
            try {
                if (slash == std::string::npos) return parse_double(s);
                const double den = parse_double(s.substr(slash + 1));
                if (den == 0.0) throw InputError("zero denominator");
                return parse_double(s.substr(0, slash)) / den;
            } catch (const Error&) {
            }
        }
        throw ConfigError("config field '" + name + "' must be a number (or a fraction string like \"8/255\")");
    }

    const Json& j_;
    std::string path_;
    std::set<std::string> used_;
};

// ---- model spec ------------------------------------------------------------------------------

inline Json to_json(const ModelSpec& s) {
    Json j;
    j["arch"] = s.arch == Architecture::mlp ? "mlp" : "conv";
    if (s.arch == Architecture::mlp) {
        j["sizes"] = s.sizes;
    } else {
        j["in_channels"] = s.in_channels;
        j["height"] = s.height;
        j["width"] = s.width;
        j["channels"] = s.channels;
        j["classes"] = s.classes;
    }
    j["activation"] = to_string(s.activation);
    j["seed"] = s.seed;
    return j;
}

inline ModelSpec model_spec_from_json(JsonReader r) {
    ModelSpec s;
    const std::string arch = r.string("arch", "mlp");
    if (arch == "mlp")
        s.arch = Architecture::mlp;
    else if (arch == "conv")
        s.arch = Architecture::conv;
    else
        throw ConfigError("config field '" + r.field("arch") + "' must be \"mlp\" or \"conv\"");
    if (s.arch == Architecture::mlp) {
        s.sizes = r.sizes("sizes", {784, 128, 10});
    } else {
        s.in_channels = r.unsigned_int("in_channels", 1);
        s.height = r.unsigned_int("height", 28);
        s.width = r.unsigned_int("width", 28);
        s.channels = r.sizes("channels", {8, 16});
        s.classes = r.unsigned_int("classes", 10);
    }
    try {
        s.activation = parse_activation(r.string("activation", "relu"));
    } catch (const InvalidArgument& e) {
        throw ConfigError("config field '" + r.field("activation") + "': " + e.what());
    }
    s.seed = r.unsigned_int("seed", 0);
    r.finish();
    return s;
}

// ---- attack spec -----------------------------------------------------------------------------

inline Json to_json(const AttackSpec& a) {
    Json j;
    j["kind"] = to_string(a.kind);
    j["epsilon"] = a.epsilon;
    j["steps"] = a.steps;
    j["step_size"] = a.step_size;
    j["init"] = a.init == InitMode::none ? "none" : "uniform";
    j["seed"] = a.seed;
    return j;
}

/// Missing fields follow the attack's conventional defaults: one step of size epsilon for the
/// FGSM family (random start for fgsm_r / fgsm_n), and step epsilon / 4 for PGD.
inline AttackSpec attack_spec_from_json(JsonReader r, const AttackSpec& fallback) {
    AttackSpec a = fallback;
    try {
        a.kind = parse_attack_kind(r.string("kind", to_string(fallback.kind)));
    } catch (const InvalidArgument& e) {
        throw ConfigError("config field '" + r.field("kind") + "': " + e.what());
    }
    a.epsilon = r.number("epsilon", fallback.epsilon);
    const bool single = a.kind != AttackKind::pgd;
    a.steps = r.unsigned_int("steps", single ? 1 : fallback.steps);
    const double default_step = single ? a.epsilon : a.epsilon / 4.0;
    a.step_size = r.number("step_size", default_step);
    const bool random_start = a.kind == AttackKind::fgsm_r || a.kind == AttackKind::fgsm_n ||
                              (a.kind == AttackKind::pgd && fallback.init == InitMode::uniform_random);
    const std::string init = r.string("init", random_start ? "uniform" : "none");
    if (init == "none")
        a.init = InitMode::none;
    else if (init == "uniform")
        a.init = InitMode::uniform_random;
    else
        throw ConfigError("config field '" + r.field("init") + "' must be \"none\" or \"uniform\"");
    a.seed = r.unsigned_int("seed", fallback.seed);
    r.finish();
    if (single && a.steps != 1) throw ConfigError("config field '" + r.field("steps") + "' must be 1 for " + to_string(a.kind));
    try {
        a.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("config attack: ") + e.what());
    }
    return a;
}

// ---- weight scheme ---------------------------------------------------------------------------

inline Json to_json(const WeightScheme& w) {
    Json j;
    j["kind"] = to_string(w.kind);
    if (w.kind == WeightKind::top_n) {
        if (w.count > 0)
            j["count"] = w.count;
        else
            j["fraction"] = w.fraction;
    }
    return j;
}

inline WeightScheme weight_scheme_from_json(JsonReader r) {
    WeightScheme w;
    try {
        w.kind = parse_weight_kind(r.string("kind", "topn"));
    } catch (const InvalidArgument& e) {
        throw ConfigError("config field '" + r.field("kind") + "': " + e.what());
    }
    if (w.kind == WeightKind::top_n) {
        w.count = r.unsigned_int("count", 0);
        w.fraction = r.number("fraction", 0.1);
        if (w.count == 0 && !(w.fraction > 0.0 && w.fraction <= 1.0))
            throw ConfigError("config field '" + r.field("fraction") + "' must lie in (0, 1]");
        if (w.count > 0) w.fraction = 0.0;
    } else {
        w.fraction = 0.1;
    }
    r.finish();
    return w;
}

// ---- tensors ---------------------------------------------------------------------------------

inline Json shape_json(const Shape& s) { return Json(s); }

}  // namespace advlab
