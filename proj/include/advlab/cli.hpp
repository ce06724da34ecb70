#pragma once

// The four `advlab` commands as plain functions, so they can run in-process.

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "config.hpp"
#include "errors.hpp"
#include "format.hpp"
#include "landscape.hpp"
#include "plot.hpp"
#include "trainer.hpp"

namespace advlab {

enum ExitCode : int { exit_ok = 0, exit_input = 2, exit_numerical = 3, exit_io = 4 };

/// Runs a command body and maps failures onto exit codes, printing the message to `err`.
inline int guarded(const std::function<void()>& body, std::ostream& err = std::cerr) {
    try {
        body();
        return exit_ok;
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return exit_io;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << "\n";
        return exit_numerical;
    } catch (const EmptyMetricError& e) {
        err << "numerical error: " << e.what() << "\n";
        return exit_numerical;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_input;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return exit_io;
    }
}

/// ADVLAB_THREADS must be a positive integer when set. Execution is single-threaded, so any
/// accepted value behaves like 1.
inline std::size_t thread_cap() {
    const char* v = std::getenv("ADVLAB_THREADS");
    if (!v || !*v) return 1;
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (*end != '\0' || n < 1) throw ConfigError(std::string("ADVLAB_THREADS must be a positive integer, got '") + v + "'");
    return static_cast<std::size_t>(n);
}

// ---- train -----------------------------------------------------------------------------------

struct TrainArgs {
    std::string config;
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> resume;
    std::size_t stop_after = 0;
};

inline void cmd_train(const TrainArgs& a, std::ostream& log = std::cout) {
    thread_cap();
    ExperimentConfig cfg = load_config(a.config);
    if (a.seed) override_seed(cfg, *a.seed);
    if (a.out) cfg.out_dir = std::filesystem::absolute(*a.out).lexically_normal().string();
    auto [train, test] = load_datasets(cfg.data, cfg.seed);
    const std::filesystem::path out(cfg.out_dir);
    std::filesystem::create_directories(out);
    write_text((out / "config.resolved.json").string(), to_json(cfg).dump(2) + "\n");

    RunOptions opt;
    opt.out_dir = out;
    opt.checkpoint_every = cfg.checkpoint_every;
    opt.config_digest = config_digest(cfg);
    opt.stop_after = a.stop_after;
    if (a.resume) opt.resume = *a.resume;
    CsvFileSink sink(out / "metrics.csv");
    const ExperimentResult r = run_experiment(cfg.model, cfg.plan, train, test, sink, opt);
    log << "trained " << r.rows.size() << " epoch(s); best test robust accuracy " << format_double(r.best_robust)
        << " at epoch " << r.best_epoch << "; outputs in " << out.string() << "\n";
}

// ---- shared loading for attack / probe -------------------------------------------------------

struct Loaded {
    ExperimentConfig cfg;
    Checkpoint ck;
    Dataset data;
};

inline Loaded load_for_eval(const std::string& checkpoint, const std::string& config, const std::string& split,
                            std::optional<std::uint64_t> seed) {
    thread_cap();
    Loaded l;
    l.cfg = load_config(config);
    if (seed) override_seed(l.cfg, *seed);
    l.ck = load_checkpoint(checkpoint, config_digest(l.cfg));
    auto [train, test] = load_datasets(l.cfg.data, l.cfg.seed);
    if (split == "train")
        l.data = std::move(train);
    else if (split == "test")
        l.data = std::move(test);
    else
        throw ConfigError("--split must be train or test");
    if (l.data.dim() != l.ck.model.input_dim()) throw InputError("checkpoint model does not match the dataset width");
    return l;
}

/// The fixed metric subset of a split, matching the one used during training.
inline Dataset split_subset(const Loaded& l, std::size_t n) {
    const std::uint64_t tag = l.data.split == Split::train ? 0x5B : 0x5C;
    return metric_subset(l.data, n, derive_seed(l.cfg.plan.seed, {tag}));
}

// ---- attack ----------------------------------------------------------------------------------

struct AttackArgs {
    std::string checkpoint, config, split = "test", out;
    std::optional<std::string> kind;
    std::optional<double> epsilon;
    std::optional<std::size_t> steps;
    std::size_t subset = 0;  // 0: whole split; otherwise the metric subset of that size
    std::optional<std::uint64_t> seed;
};

/// Per-sample CSV: index, clean_loss, adv_loss, av, effectiveness, fooled. Effectiveness is
/// relative to the configured reference attack at the same budget ("excluded" below 1e-6 gain).
/// `--attack av` selects the attack the landscape probe uses for its av column.
inline void cmd_attack(const AttackArgs& a) {
    Loaded l = load_for_eval(a.checkpoint, a.config, a.split, a.seed);
    const Dataset ds = a.subset > 0 ? split_subset(l, a.subset) : l.data;
    AttackSpec spec = l.cfg.plan.eval_attack;
    const bool probe_attack = a.kind && *a.kind == "av";
    if (probe_attack) {
        spec = l.cfg.plan.landscape.av_attack;
    } else if (a.kind) {
        const AttackKind k = parse_attack_kind(*a.kind);
        if (k != spec.kind) {
            const double eps = spec.epsilon;
            switch (k) {
                case AttackKind::fgsm: spec = AttackSpec::fgsm(eps); break;
                case AttackKind::fgsm_r: spec = AttackSpec::fgsm_r(eps, spec.seed); break;
                case AttackKind::fgsm_n: spec = AttackSpec::fgsm_n(eps, spec.seed); break;
                case AttackKind::pgd: spec = AttackSpec::pgd(eps, 10, InitMode::none, spec.seed); break;
            }
        }
    }
    if (a.epsilon) {
        const double ratio = spec.epsilon > 0.0 ? spec.step_size / spec.epsilon : 0.25;
        spec.epsilon = *a.epsilon;
        spec.step_size = spec.kind == AttackKind::pgd ? ratio * spec.epsilon : spec.epsilon;
    }
    if (a.steps) {
        if (spec.kind != AttackKind::pgd && *a.steps != 1) throw ConfigError("--steps applies to pgd only");
        spec.steps = *a.steps;
    }
    spec.validate();
    AttackSpec ref = l.cfg.plan.landscape.reference;
    ref.epsilon = spec.epsilon;
    ref.step_size = spec.epsilon / 4.0;

    CsvTable t;
    t.header = {"index", "clean_loss", "adv_loss", "av", "effectiveness", "fooled"};
    std::size_t chunk_index = 0;
    for (const auto& b : sequential_batches(ds, l.cfg.plan.landscape.chunk)) {
        const Model& model = l.ck.model;
        const LossFn loss = model_loss(model, b.y);
        AttackSpec s = spec;
        if (!probe_attack) s.seed = derive_seed(spec.seed, {chunk_index});
        ++chunk_index;
        const Tensor delta = run_attack(loss, b.x, s).delta;
        const Tensor clean = per_sample_loss(model, b.x, b.y);
        const Tensor xadv = detail::add(b.x, delta);
        const Tensor adv = per_sample_loss(model, xadv, b.y);
        const Tensor adv_logits = forward_logits(model, xadv);
        const PerSample eff = spec.epsilon > 0.0 ? effectiveness(loss, b.x, delta, ref) : PerSample{};
        for (std::size_t i = 0; i < b.y.size(); ++i) {
            const auto r = adv_logits.row(i);
            const bool fooled = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin()) != b.y[i];
            const std::string e =
                (spec.epsilon > 0.0 && eff.included[i]) ? format_double(eff.values[i]) : std::string("excluded");
            t.rows.push_back({std::to_string(b.indices[i]), format_double(clean[i]), format_double(adv[i]),
                              format_double(adv[i] - clean[i]), e, fooled ? "1" : "0"});
        }
    }
    write_text(a.out, to_csv_string(t));
}

// ---- probe -----------------------------------------------------------------------------------

struct ProbeArgs {
    std::string checkpoint, config, split = "train", out;
    std::vector<std::size_t> pgd_sweep;
    std::vector<std::size_t> sample_sweep;
    bool softplus_twin = false;
    std::optional<std::string> degenerate;  // scale:m[,m...] | flip:p[,p...] | weight-noise:s
    std::size_t noise_seeds = 10;
    std::optional<std::uint64_t> seed;
};

namespace detail {

inline std::vector<double> parse_number_list(const std::string& s, const std::string& what) {
    std::vector<double> out;
    for (const auto& f : split_csv_line(s)) {
        try {
            out.push_back(parse_double(f));
        } catch (const InputError&) {
            throw ConfigError(what + ": '" + f + "' is not a number");
        }
    }
    return out;
}

inline std::string opt_cell(double v) { return std::isfinite(v) ? format_double(v) : std::string("excluded"); }

}  // namespace detail

inline void cmd_probe(const ProbeArgs& a, std::ostream& log = std::cout) {
    Loaded l = load_for_eval(a.checkpoint, a.config, a.split, a.seed);
    const Model& model = l.ck.model;
    const TrainPlan& plan = l.cfg.plan;
    const double eps = plan.eval_attack.epsilon;
    const Dataset subset = split_subset(l, plan.landscape.subset_size);
    CsvTable t;

    if (!a.pgd_sweep.empty()) {
        t.header = {"steps", "robust_acc", "adv_loss"};
        for (std::size_t k : a.pgd_sweep) {
            const EvalResult r = evaluate(model, subset, AttackSpec::pgd(eps, k), plan.landscape.chunk);
            t.rows.push_back({std::to_string(k), format_double(r.robust_acc), format_double(r.adv_loss)});
        }
    } else if (!a.sample_sweep.empty()) {
        t.header = {"n", "ig", "hs", "av"};
        for (std::size_t n : a.sample_sweep) {
            LandscapeOptions o = plan.landscape;
            o.effectiveness_attacks.clear();
            o.seed = derive_seed(plan.seed, {0x5A3});
            const LandscapeReport r = landscape_report(model, split_subset(l, n), o);
            t.rows.push_back({std::to_string(std::min(n, l.data.size())), format_double(r.ig), detail::opt_cell(r.hs),
                              format_double(r.av)});
        }
    } else if (a.degenerate) {
        const std::string& d = *a.degenerate;
        const auto colon = d.find(':');
        if (colon == std::string::npos) throw ConfigError("--degenerate expects scale:m, flip:p or weight-noise:s");
        const std::string kind = d.substr(0, colon);
        const auto values = detail::parse_number_list(d.substr(colon + 1), "--degenerate");
        t.header = {"variant", "param", "seed", "effectiveness", "hs", "excluded"};
        if (kind == "scale" || kind == "flip") {
            TrainPlan p = plan;
            const double lr = l.ck.optimizer ? l.ck.optimizer->lr : plan.lr.at(0);
            p.lr = LrSchedule{{lr}, {}};
            p.epochs = 1;
            p.swa = false;
            for (double v : values) {
                const Manipulation m{kind == "scale" ? Manipulation::Kind::scale : Manipulation::Kind::flip, v};
                const DegenerationPoint pt =
                    degenerate_training(model, l.data, subset, p, m, eps, plan.landscape.compute_hs);
                t.rows.push_back({kind, format_double(v), std::to_string(plan.seed), detail::opt_cell(pt.effectiveness),
                                  detail::opt_cell(pt.hs), std::to_string(pt.excluded)});
            }
        } else if (kind == "weight-noise") {
            if (values.size() != 1) throw ConfigError("--degenerate weight-noise takes one maximum scale");
            std::vector<double> hs, eff;
            for (std::size_t s = 0; s < a.noise_seeds; ++s) {
                const std::uint64_t seed = derive_seed(plan.seed, {0x0415E, s});
                const DegenerationPoint pt = weight_noise_probe(model, subset, values[0], seed, AttackSpec::fgsm(eps),
                                                                plan.landscape.spectrum, plan.landscape.chunk);
                t.rows.push_back({kind, format_double(pt.param), std::to_string(s), detail::opt_cell(pt.effectiveness),
                                  detail::opt_cell(pt.hs), std::to_string(pt.excluded)});
                if (std::isfinite(pt.hs) && std::isfinite(pt.effectiveness)) {
                    hs.push_back(pt.hs);
                    eff.push_back(pt.effectiveness);
                }
            }
            if (hs.size() >= 2) log << "spearman(hs, effectiveness) = " << format_double(spearman(hs, eff)) << "\n";
        } else {
            throw ConfigError("--degenerate kind must be scale, flip or weight-noise");
        }
    } else {
        LandscapeOptions o = plan.landscape;
        o.softplus_twin = a.softplus_twin;
        o.seed = derive_seed(plan.seed, {0x9B0});
        const LandscapeReport r = landscape_report(model, subset, o);
        t.header = {"split", "n", "ig", a.softplus_twin ? "hs_relu" : "hs", "av"};
        if (a.softplus_twin) t.header.push_back("hs_softplus");
        for (const auto& [name, v] : r.effectiveness) t.header.push_back("eff_" + name);
        t.header.push_back("grad_align");
        std::vector<std::string> row{to_string(l.data.split), std::to_string(r.sample_count), format_double(r.ig),
                                     detail::opt_cell(r.hs), format_double(r.av)};
        if (a.softplus_twin) row.push_back(detail::opt_cell(r.hs_softplus));
        for (const auto& [name, v] : r.effectiveness) row.push_back(detail::opt_cell(v));
        row.push_back(detail::opt_cell(r.grad_align));
        t.rows.push_back(std::move(row));
    }
    write_text(a.out, to_csv_string(t));
}

// ---- plot ------------------------------------------------------------------------------------

struct PlotArgs {
    std::string metrics, figure, out;
};

inline void cmd_plot(const PlotArgs& a) { emit_plot_data(a.metrics, a.figure, a.out); }

}  // namespace advlab
