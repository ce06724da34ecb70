#pragma once

// Experiment configuration: one JSON document whose top-level sections are `datasets`,
// `models`, `trainer`, `attacks`, `landscape` and `runner`, plus a top-level `seed`.
// Missing keys take defaults; unknown keys are rejected with their dotted path.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "datasets.hpp"
#include "errors.hpp"
#include "serialize.hpp"
#include "trainer.hpp"

namespace advlab {

struct DatasetConfig {
    std::string kind = "idx";  // idx | synthetic
    std::string train_images, train_labels, test_images, test_labels;
    std::size_t train_limit = 0;  // 0: all samples
    std::size_t test_limit = 0;
    // synthetic
    std::size_t dim = 16, classes = 4, train_size = 512, test_size = 512;
    double separation = 2.0, spread = 0.1;

    friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct ExperimentConfig {
    DatasetConfig data;
    ModelSpec model;
    TrainPlan plan;
    std::string out_dir = "runs/default";
    std::size_t checkpoint_every = 0;
    std::uint64_t seed = 0;
};

namespace detail {

inline std::string resolve_path(const std::string& p, const std::filesystem::path& base) {
    if (p.empty()) return p;
    std::filesystem::path path(p);
    if (path.is_absolute() || base.empty()) return path.lexically_normal().string();
    return (base / path).lexically_normal().string();
}

inline Json attacks_to_json(const std::vector<NamedAttack>& v) {
    Json a = Json::array();
    for (const auto& n : v) {
        Json j = to_json(n.spec);
        j["name"] = n.name;
        a.push_back(j);
    }
    return a;
}

inline bool same_plan(const TrainPlan& a, const TrainPlan& b) {
    auto same_named = [](const std::vector<NamedAttack>& x, const std::vector<NamedAttack>& y) {
        if (x.size() != y.size()) return false;
        for (std::size_t i = 0; i < x.size(); ++i)
            if (x[i].name != y[i].name || !(x[i].spec == y[i].spec)) return false;
        return true;
    };
    const auto& la = a.landscape;
    const auto& lb = b.landscape;
    return a.scheme == b.scheme && a.epochs == b.epochs && a.batch_size == b.batch_size && a.lr == b.lr &&
           a.momentum == b.momentum && a.weight_decay == b.weight_decay && a.swa == b.swa &&
           a.swa_start == b.swa_start && a.seed == b.seed && a.eval_attack == b.eval_attack &&
           a.eval_batch == b.eval_batch && a.manipulation == b.manipulation && a.metrics_every == b.metrics_every &&
           la.subset_size == lb.subset_size && la.chunk == lb.chunk && la.spectrum.k == lb.spectrum.k &&
           la.spectrum.max_iters == lb.spectrum.max_iters && la.spectrum.tol == lb.spectrum.tol &&
           la.spectrum.mode == lb.spectrum.mode && la.compute_hs == lb.compute_hs &&
           la.softplus_twin == lb.softplus_twin && la.alignment_eps == lb.alignment_eps &&
           la.av_attack == lb.av_attack && la.reference == lb.reference &&
           same_named(la.effectiveness_attacks, lb.effectiveness_attacks);
}

}  // namespace detail

inline bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
    return a.data == b.data && a.model == b.model && detail::same_plan(a.plan, b.plan) && a.out_dir == b.out_dir &&
           a.checkpoint_every == b.checkpoint_every && a.seed == b.seed;
}

/// Parses a config document. Relative paths are resolved against `base_dir`.
inline ExperimentConfig parse_config(const Json& doc, const std::filesystem::path& base_dir = {}) {
    ExperimentConfig c;
    JsonReader root(doc, "");
    c.seed = root.unsigned_int("seed", 0);

    {
        JsonReader d = root.child("datasets");
        c.data.kind = d.string("kind", "idx");
        if (c.data.kind == "idx") {
            c.data.train_images = detail::resolve_path(d.string("train_images", ""), base_dir);
            c.data.train_labels = detail::resolve_path(d.string("train_labels", ""), base_dir);
            c.data.test_images = detail::resolve_path(d.string("test_images", ""), base_dir);
            c.data.test_labels = detail::resolve_path(d.string("test_labels", ""), base_dir);
            for (const auto* p : {&c.data.train_images, &c.data.train_labels, &c.data.test_images, &c.data.test_labels})
                if (p->empty()) throw ConfigError("config section 'datasets' with kind \"idx\" needs all four file paths");
        } else if (c.data.kind == "synthetic") {
            c.data.dim = d.unsigned_int("dim", 16);
            c.data.classes = d.unsigned_int("classes", 4);
            c.data.train_size = d.unsigned_int("train_size", 512);
            c.data.test_size = d.unsigned_int("test_size", 512);
            c.data.separation = d.number("separation", 2.0);
            c.data.spread = d.number("spread", 0.1);
            if (c.data.dim == 0 || c.data.classes < 2 || c.data.train_size == 0 || c.data.test_size == 0)
                throw ConfigError("config section 'datasets': synthetic sizes must be positive with at least 2 classes");
        } else {
            throw ConfigError("config field 'datasets.kind' must be \"idx\" or \"synthetic\"");
        }
        c.data.train_limit = d.unsigned_int("train_limit", 0);
        c.data.test_limit = d.unsigned_int("test_limit", 0);
        d.finish();
    }

    {
        JsonReader m = root.child("models");
        c.model = model_spec_from_json(m);
        if (!root.has("models") || !doc.at("models").contains("seed")) c.model.seed = c.seed;
    }

    const double eps_default = 8.0 / 255.0;
    AttackSpec train_attack = AttackSpec::fgsm_r(eps_default, 0);
    {
        JsonReader a = root.child("attacks");
        train_attack = attack_spec_from_json(a.child("train"), train_attack);
        c.plan.eval_attack = attack_spec_from_json(a.child("eval"), AttackSpec::pgd(eps_default, 5));
        c.plan.landscape.av_attack = attack_spec_from_json(a.child("av"), AttackSpec::pgd(eps_default, 20));
        c.plan.landscape.reference = attack_spec_from_json(a.child("reference"), AttackSpec::pgd(eps_default, 50));
        if (a.has("effectiveness")) {
            const Json& list = a.raw("effectiveness");
            if (!list.is_array()) throw ConfigError("config field 'attacks.effectiveness' must be an array");
            c.plan.landscape.effectiveness_attacks.clear();
            for (std::size_t i = 0; i < list.size(); ++i) {
                const std::string path = "attacks.effectiveness[" + std::to_string(i) + "]";
                if (!list[i].is_object() || !list[i].contains("name") || !list[i]["name"].is_string())
                    throw ConfigError("config field '" + path + ".name' is required");
                const std::string name = list[i]["name"].get<std::string>();
                Json rest = list[i];
                rest.erase("name");
                c.plan.landscape.effectiveness_attacks.push_back(
                    {name, attack_spec_from_json(JsonReader(rest, path), AttackSpec::fgsm(eps_default))});
            }
        }
        a.finish();
    }

    {
        JsonReader t = root.child("trainer");
        TrainPlan& p = c.plan;
        p.epochs = t.unsigned_int("epochs", 40);
        p.batch_size = t.unsigned_int("batch_size", 128);
        p.eval_batch = t.unsigned_int("eval_batch", 500);
        p.lr.stages = t.numbers("lr", {0.1, 0.01, 0.001});
        p.lr.decay_epochs = t.sizes("decay_epochs", {20, 30});
        p.momentum = t.number("momentum", 0.9);
        p.weight_decay = t.number("weight_decay", 1e-4);
        p.seed = c.seed;
        const std::string scheme = t.string("scheme", "at");
        if (scheme == "standard") {
            p.scheme = StandardScheme{};
        } else if (scheme == "at") {
            p.scheme = AtScheme{train_attack};
        } else if (scheme == "at_minus_clean") {
            p.scheme = AtMinusCleanScheme{train_attack, t.number("alpha", 0.5)};
        } else if (scheme == "igr") {
            p.scheme = IgrScheme{t.number("beta", 1.0)};
        } else if (scheme == "advlc") {
            const double lambda = t.number("lambda", 0.4);
            p.scheme = AdvlcScheme{train_attack, lambda, weight_scheme_from_json(t.child("weights"))};
        } else {
            throw ConfigError("config field 'trainer.scheme' must be one of standard, at, at_minus_clean, igr, advlc");
        }
        {
            JsonReader s = t.child("swa");
            p.swa = s.boolean("enabled", false);
            p.swa_start = s.unsigned_int("start_epoch", p.epochs / 2);
            s.finish();
        }
        {
            JsonReader m = t.child("manipulation");
            const std::string kind = m.string("kind", "none");
            if (kind == "none")
                p.manipulation = {};
            else if (kind == "scale")
                p.manipulation = {Manipulation::Kind::scale, m.number("value", 1.0)};
            else if (kind == "flip")
                p.manipulation = {Manipulation::Kind::flip, m.number("value", 0.0)};
            else
                throw ConfigError("config field 'trainer.manipulation.kind' must be none, scale or flip");
            if (kind == "none") m.number("value", 1.0);
            m.finish();
        }
        t.finish();
    }

    {
        JsonReader l = root.child("landscape");
        auto& o = c.plan.landscape;
        o.subset_size = l.unsigned_int("subset_size", 200);
        o.chunk = l.unsigned_int("chunk", 100);
        o.spectrum.k = l.unsigned_int("hs_k", 20);
        o.spectrum.max_iters = l.unsigned_int("power_iters", 100);
        o.spectrum.tol = l.number("power_tol", 1e-3);
        const std::string mode = l.string("hvp_mode", "exact");
        if (mode == "exact")
            o.spectrum.mode = HvpMode::exact;
        else if (mode == "finite_diff")
            o.spectrum.mode = HvpMode::finite_diff;
        else
            throw ConfigError("config field 'landscape.hvp_mode' must be \"exact\" or \"finite_diff\"");
        o.compute_hs = l.boolean("hs", true);
        o.softplus_twin = l.boolean("softplus_twin", false);
        o.alignment_eps = l.number("alignment_epsilon", eps_default);
        c.plan.metrics_every = l.unsigned_int("every", 1);
        l.finish();
        if (o.subset_size == 0 || o.chunk == 0 || o.spectrum.k == 0 || o.spectrum.max_iters == 0)
            throw ConfigError("config section 'landscape': sizes and iteration counts must be positive");
    }

    {
        JsonReader r = root.child("runner");
        c.out_dir = detail::resolve_path(r.string("out_dir", "runs/default"), base_dir);
        c.checkpoint_every = r.unsigned_int("checkpoint_every", 0);
        r.finish();
    }
    root.finish();

    try {
        c.plan.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
    Json doc;
    try {
        doc = Json::parse(in);
    } catch (const Json::exception& e) {
        throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return parse_config(doc, path.parent_path());
}

/// The fully resolved document: every field explicit, paths absolute as given.
inline Json to_json(const ExperimentConfig& c) {
    Json j;
    j["seed"] = c.seed;
    Json d;
    d["kind"] = c.data.kind;
    if (c.data.kind == "idx") {
        d["train_images"] = c.data.train_images;
        d["train_labels"] = c.data.train_labels;
        d["test_images"] = c.data.test_images;
        d["test_labels"] = c.data.test_labels;
    } else {
        d["dim"] = c.data.dim;
        d["classes"] = c.data.classes;
        d["train_size"] = c.data.train_size;
        d["test_size"] = c.data.test_size;
        d["separation"] = c.data.separation;
        d["spread"] = c.data.spread;
    }
    d["train_limit"] = c.data.train_limit;
    d["test_limit"] = c.data.test_limit;
    j["datasets"] = d;
    j["models"] = to_json(c.model);

    const TrainPlan& p = c.plan;
    Json a;
    const AttackSpec* ta = scheme_attack(p.scheme);
    a["train"] = to_json(ta ? *ta : AttackSpec::fgsm_r(8.0 / 255.0, 0));
    a["eval"] = to_json(p.eval_attack);
    a["av"] = to_json(p.landscape.av_attack);
    a["reference"] = to_json(p.landscape.reference);
    a["effectiveness"] = detail::attacks_to_json(p.landscape.effectiveness_attacks);
    j["attacks"] = a;

    Json t;
    t["scheme"] = scheme_name(p.scheme);
    t["epochs"] = p.epochs;
    t["batch_size"] = p.batch_size;
    t["eval_batch"] = p.eval_batch;
    t["lr"] = p.lr.stages;
    t["decay_epochs"] = p.lr.decay_epochs;
    t["momentum"] = p.momentum;
    t["weight_decay"] = p.weight_decay;
    std::visit(overloaded{[&](const AtMinusCleanScheme& s) { t["alpha"] = s.alpha; },
                          [&](const IgrScheme& s) { t["beta"] = s.beta; },
                          [&](const AdvlcScheme& s) {
                              t["lambda"] = s.lambda;
                              t["weights"] = to_json(s.weights);
                          },
                          [](const auto&) {}},
               p.scheme);
    t["swa"] = {{"enabled", p.swa}, {"start_epoch", p.swa_start}};
    switch (p.manipulation.kind) {
        case Manipulation::Kind::none: t["manipulation"] = {{"kind", "none"}}; break;
        case Manipulation::Kind::scale: t["manipulation"] = {{"kind", "scale"}, {"value", p.manipulation.value}}; break;
        case Manipulation::Kind::flip: t["manipulation"] = {{"kind", "flip"}, {"value", p.manipulation.value}}; break;
    }
    j["trainer"] = t;

    const auto& o = p.landscape;
    j["landscape"] = {{"subset_size", o.subset_size},
                      {"chunk", o.chunk},
                      {"hs_k", o.spectrum.k},
                      {"power_iters", o.spectrum.max_iters},
                      {"power_tol", o.spectrum.tol},
                      {"hvp_mode", o.spectrum.mode == HvpMode::exact ? "exact" : "finite_diff"},
                      {"hs", o.compute_hs},
                      {"softplus_twin", o.softplus_twin},
                      {"alignment_epsilon", o.alignment_eps},
                      {"every", p.metrics_every}};
    j["runner"] = {{"out_dir", c.out_dir}, {"checkpoint_every", c.checkpoint_every}};
    return j;
}

/// Digest of everything that affects results (the runner section is excluded).
inline std::string config_digest(const ExperimentConfig& c) {
    Json j = to_json(c);
    j.erase("runner");
    return fnv1a_hex(j.dump());
}

/// Applies a seed override everywhere the top-level seed flows.
inline void override_seed(ExperimentConfig& c, std::uint64_t seed) {
    const bool model_follows = c.model.seed == c.seed;
    c.seed = seed;
    c.plan.seed = seed;
    if (model_follows) c.model.seed = seed;
}

inline std::pair<Dataset, Dataset> load_datasets(const DatasetConfig& d, std::uint64_t seed) {
    Dataset train, test;
    if (d.kind == "idx") {
        for (const auto* p : {&d.train_images, &d.train_labels, &d.test_images, &d.test_labels})
            if (!std::filesystem::exists(*p)) throw InputError("dataset file not found: " + *p);
        train = load_idx(d.train_images, d.train_labels);
        test = load_idx(d.test_images, d.test_labels, train.classes);
        train.split = Split::train;
        test.split = Split::test;
    } else {
        train = synth_gaussians(d.dim, d.classes, d.train_size, d.separation, derive_seed(seed, {0xDA7A, 0}), d.spread);
        test = synth_gaussians(d.dim, d.classes, d.test_size, d.separation, derive_seed(seed, {0xDA7A, 1}), d.spread);
        test.split = Split::test;
    }
    if (d.train_limit > 0) train = head(train, std::min(d.train_limit, train.size()));
    if (d.test_limit > 0) test = head(test, std::min(d.test_limit, test.size()));
    train.validate();
    test.validate();
    return {std::move(train), std::move(test)};
}

}  // namespace advlab
