#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "attacks.hpp"
#include "checkpoint.hpp"
#include "datasets.hpp"
#include "errors.hpp"
#include "format.hpp"
#include "landscape.hpp"
#include "models.hpp"
#include "objectives.hpp"
#include "optim.hpp"

namespace advlab {

// ---- training schemes ------------------------------------------------------------------------

struct StandardScheme {
    friend bool operator==(const StandardScheme&, const StandardScheme&) = default;
};
struct AtScheme {
    AttackSpec attack;
    friend bool operator==(const AtScheme&, const AtScheme&) = default;
};
struct AtMinusCleanScheme {
    AttackSpec attack;
    double alpha = 0.5;
    friend bool operator==(const AtMinusCleanScheme&, const AtMinusCleanScheme&) = default;
};
struct IgrScheme {
    double beta = 1.0;
    friend bool operator==(const IgrScheme&, const IgrScheme&) = default;
};
struct AdvlcScheme {
    AttackSpec attack;
    double lambda = 0.4;
    WeightScheme weights = WeightScheme::top_fraction(0.1);
    friend bool operator==(const AdvlcScheme&, const AdvlcScheme&) = default;
};

using Scheme = std::variant<StandardScheme, AtScheme, AtMinusCleanScheme, IgrScheme, AdvlcScheme>;

template <class... F>
struct overloaded : F... {
    using F::operator()...;
};
template <class... F>
overloaded(F...) -> overloaded<F...>;

inline const char* scheme_name(const Scheme& s) {
    return std::visit(overloaded{[](const StandardScheme&) { return "standard"; }, [](const AtScheme&) { return "at"; },
                                 [](const AtMinusCleanScheme&) { return "at_minus_clean"; },
                                 [](const IgrScheme&) { return "igr"; }, [](const AdvlcScheme&) { return "advlc"; }},
                      s);
}

/// The training attack of a scheme, or nullptr for schemes that never attack.
inline const AttackSpec* scheme_attack(const Scheme& s) {
    return std::visit(overloaded{[](const StandardScheme&) -> const AttackSpec* { return nullptr; },
                                 [](const AtScheme& a) -> const AttackSpec* { return &a.attack; },
                                 [](const AtMinusCleanScheme& a) -> const AttackSpec* { return &a.attack; },
                                 [](const IgrScheme&) -> const AttackSpec* { return nullptr; },
                                 [](const AdvlcScheme& a) -> const AttackSpec* { return &a.attack; }},
                      s);
}

/// Optional rewrite of the training perturbations: scale by m, or flip a fraction p of signs.
struct Manipulation {
    enum class Kind { none, scale, flip } kind = Kind::none;
    double value = 1.0;
    friend bool operator==(const Manipulation&, const Manipulation&) = default;
};

struct TrainPlan {
    Scheme scheme = StandardScheme{};
    std::size_t epochs = 40;
    std::size_t batch_size = 128;
    LrSchedule lr{};
    double momentum = 0.9;
    double weight_decay = 1e-4;
    bool swa = false;
    std::size_t swa_start = 20;
    std::uint64_t seed = 0;
    AttackSpec eval_attack = AttackSpec::pgd(8.0 / 255.0, 5);
    std::size_t eval_batch = 500;
    Manipulation manipulation{};
    std::size_t metrics_every = 1;  // landscape metrics cadence in epochs; 0 disables them
    LandscapeOptions landscape{};

    void validate() const {
        if (epochs == 0) throw InvalidArgument("plan: epochs must be positive");
        if (batch_size == 0) throw InvalidArgument("plan: batch size must be positive");
        if (eval_batch == 0) throw InvalidArgument("plan: evaluation batch size must be positive");
        lr.validate(epochs);
        if (momentum < 0.0 || momentum >= 1.0) throw InvalidArgument("plan: momentum must be in [0, 1)");
        if (weight_decay < 0.0) throw InvalidArgument("plan: weight decay must be non-negative");
        if (swa && swa_start >= epochs) throw InvalidArgument("plan: SWA start epoch must precede the last epoch");
        eval_attack.validate();
        if (const AttackSpec* a = scheme_attack(scheme)) a->validate();
        std::visit(overloaded{[](const AtMinusCleanScheme& s) {
                                  if (!(s.alpha >= 0.0 && s.alpha <= 1.0))
                                      throw InvalidArgument("plan: alpha must be in [0,1]");
                              },
                              [](const IgrScheme& s) {
                                  if (s.beta < 0.0) throw InvalidArgument("plan: beta must be non-negative");
                              },
                              [](const AdvlcScheme& s) {
                                  if (s.lambda < 0.0) throw InvalidArgument("plan: lambda must be non-negative");
                              },
                              [](const auto&) {}},
                   scheme);
        if (manipulation.kind != Manipulation::Kind::none && !scheme_attack(scheme))
            throw InvalidArgument("plan: perturbation manipulation needs an attacking scheme");
        if (manipulation.kind == Manipulation::Kind::scale && !(manipulation.value >= 0.0 && manipulation.value <= 1.0))
            throw InvalidArgument("plan: scale multiplier must be in [0,1]");
        if (manipulation.kind == Manipulation::Kind::flip && !(manipulation.value >= 0.0 && manipulation.value <= 0.5))
            throw InvalidArgument("plan: flip fraction must be in [0,0.5]");
    }
};

inline double lr_at(std::size_t epoch, const TrainPlan& plan) { return plan.lr.at(epoch); }

// ---- one epoch -------------------------------------------------------------------------------

struct EpochStats {
    double objective = 0.0;  // sample-weighted mean of the batch objectives
    double reg = 0.0;        // sample-weighted mean regularizer value
    double accuracy = 0.0;   // accuracy on the inputs the loss was computed on
    std::size_t batches = 0;
};

inline std::uint64_t batch_attack_seed(std::uint64_t plan_seed, std::size_t epoch, std::size_t batch) {
    return derive_seed(plan_seed, {0xA77AC4, epoch, batch});
}

inline Tensor manipulate(const Tensor& x, const Tensor& delta, const Manipulation& m, std::uint64_t seed) {
    switch (m.kind) {
        case Manipulation::Kind::none: return delta;
        case Manipulation::Kind::scale: return scale_perturbation(delta, m.value);
        case Manipulation::Kind::flip: return flip_signs(x, delta, m.value, seed);
    }
    return delta;
}

/// Objective for one batch under the plan's scheme; attacks run against the current model.
inline ObjectiveValue scheme_objective(const Model& model, std::span<const Var> params, const Batch& b,
                                       const TrainPlan& plan, std::size_t epoch, std::size_t batch_index) {
    auto delta_for = [&](const AttackSpec& spec) {
        AttackSpec a = spec;
        a.seed = batch_attack_seed(plan.seed ^ spec.seed, epoch, batch_index);
        const Tensor d = run_attack(model_loss(model, b.y), b.x, a).delta;
        return manipulate(b.x, d, plan.manipulation, derive_seed(a.seed, {0xF119}));
    };
    return std::visit(
        overloaded{[&](const StandardScheme&) { return standard_objective(model, params, b.x, b.y); },
                   [&](const AtScheme& s) { return adversarial_objective(model, params, b.x, b.y, delta_for(s.attack)); },
                   [&](const AtMinusCleanScheme& s) {
                       return at_minus_clean_loss(model, params, b.x, b.y, delta_for(s.attack), s.alpha);
                   },
                   [&](const IgrScheme& s) { return igr_loss(model, params, b.x, b.y, s.beta); },
                   [&](const AdvlcScheme& s) {
                       return advlc_objective(model, params, b.x, b.y, delta_for(s.attack), s.lambda, s.weights);
                   }},
        plan.scheme);
}

inline double batch_accuracy(const Tensor& logits, std::span<const int> y) {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const auto r = logits.row(i);
        const auto best = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
        hit += best == y[i];
    }
    return static_cast<double>(hit);
}

/// One pass over the shuffled training set: attack, objective, one backward, one SGD step per batch.
inline EpochStats train_epoch(Model& model, const Dataset& train, const TrainPlan& plan, std::size_t epoch,
                              OptimizerState& st) {
    st.lr = lr_at(epoch, plan);
    EpochStats out;
    double n = 0.0;
    const auto bs = batches(train, std::min(plan.batch_size, train.size()), plan.seed, epoch);
    for (std::size_t bi = 0; bi < bs.size(); ++bi) {
        const Batch& b = bs[bi];
        const auto params = tracked_params(model);
        const ObjectiveValue ov = scheme_objective(model, params, b, plan, epoch, bi);
        const auto grads = grad(ov.objective, params);
        sgd_step(model, grads, st, {epoch, bi});
        const double m = static_cast<double>(b.y.size());
        out.objective += ov.objective.value().item() * m;
        out.reg += ov.reg * m;
        out.accuracy += batch_accuracy(ov.adv_logits, b.y);
        n += m;
        ++out.batches;
    }
    out.objective /= n;
    out.reg /= n;
    out.accuracy /= n;
    return out;
}

// ---- evaluation ------------------------------------------------------------------------------

struct EvalResult {
    double clean_acc = 0.0;
    double robust_acc = 0.0;
    double clean_loss = 0.0;
    double adv_loss = 0.0;
};

/// Accuracy and mean loss on clean and attacked inputs; the attack's seed is refined per batch.
inline EvalResult evaluate(const Model& model, const Dataset& ds, const AttackSpec& attack, std::size_t batch = 500) {
    if (ds.size() == 0) throw EmptyMetricError("evaluate: empty dataset");
    EvalResult r;
    std::size_t bi = 0;
    for (const auto& b : sequential_batches(ds, batch)) {
        const Tensor clean_logits = forward_logits(model, b.x);
        AttackSpec a = attack;
        a.seed = derive_seed(attack.seed, {bi++});
        const LossFn loss = model_loss(model, b.y);
        const Tensor delta = run_attack(loss, b.x, a).delta;
        const Tensor adv_logits = forward_logits(model, detail::add(b.x, delta));
        NoGradGuard ng;
        r.clean_loss += kernels::sum(cross_entropy(Var::constant(clean_logits), b.y).value());
        r.adv_loss += kernels::sum(cross_entropy(Var::constant(adv_logits), b.y).value());
        r.clean_acc += batch_accuracy(clean_logits, b.y);
        r.robust_acc += batch_accuracy(adv_logits, b.y);
    }
    const double n = static_cast<double>(ds.size());
    r.clean_acc /= n;
    r.robust_acc /= n;
    r.clean_loss /= n;
    r.adv_loss /= n;
    return r;
}

// ---- metrics rows ----------------------------------------------------------------------------

/// One epoch of metrics; missing values are written as "excluded".
struct MetricsRow {
    std::size_t epoch = 0;  // 1-based
    std::vector<std::pair<std::string, std::optional<double>>> cells;

    void set(const std::string& column, std::optional<double> v) {
        if (v && !std::isfinite(*v)) v.reset();
        for (auto& [k, val] : cells)
            if (k == column) {
                val = v;
                return;
            }
        throw InvalidArgument("metrics row: unknown column '" + column + "'");
    }

    std::optional<double> get(const std::string& column) const {
        for (const auto& [k, val] : cells)
            if (k == column) return val;
        throw InvalidArgument("metrics row: unknown column '" + column + "'");
    }
};

inline std::vector<std::string> metrics_columns(const TrainPlan& plan) {
    std::vector<std::string> cols{"lr",
                                  "train_clean_loss",
                                  "test_clean_loss",
                                  "train_adv_loss",
                                  "test_adv_loss",
                                  "train_clean_acc",
                                  "test_clean_acc",
                                  "train_robust_acc",
                                  "test_robust_acc",
                                  "ig_train",
                                  "ig_test",
                                  "hs_train",
                                  "hs_test",
                                  "av_train",
                                  "av_test"};
    for (const auto& a : plan.landscape.effectiveness_attacks) cols.push_back("eff_" + a.name);
    cols.insert(cols.end(), {"grad_align", "reg_loss", "train_objective", "train_fit_acc"});
    if (plan.landscape.softplus_twin) cols.insert(cols.end(), {"hs_softplus_train", "hs_softplus_test"});
    if (plan.swa) cols.insert(cols.end(), {"swa_test_clean_loss", "swa_test_adv_loss", "swa_test_clean_acc", "swa_test_robust_acc"});
    return cols;
}

inline MetricsRow empty_row(const TrainPlan& plan, std::size_t epoch) {
    MetricsRow r;
    r.epoch = epoch;
    for (auto& c : metrics_columns(plan)) r.cells.emplace_back(std::move(c), std::nullopt);
    return r;
}

inline std::string csv_header(const std::vector<std::string>& columns) {
    std::string s = "epoch";
    for (const auto& c : columns) s += "," + c;
    return s + "\n";
}

inline std::string csv_line(const MetricsRow& row) {
    std::string s = std::to_string(row.epoch);
    for (const auto& [k, v] : row.cells) s += "," + (v ? format_double(*v) : std::string("excluded"));
    return s + "\n";
}

class MetricsSink {
public:
    virtual ~MetricsSink() = default;
    /// Called once before any row. `resume_after` > 0 means rows for epochs <= resume_after exist.
    virtual void begin(const std::vector<std::string>& columns, std::size_t resume_after) = 0;
    virtual void write(const MetricsRow& row) = 0;
};

class MemorySink : public MetricsSink {
public:
    void begin(const std::vector<std::string>& columns, std::size_t) override { columns_ = columns; }
    void write(const MetricsRow& row) override { rows.push_back(row); }
    std::vector<MetricsRow> rows;
    const std::vector<std::string>& columns() const { return columns_; }

private:
    std::vector<std::string> columns_;
};

/// metrics.csv writer; every row is flushed. On resume the file is cut back to its header plus
/// the rows of already-completed epochs.
class CsvFileSink : public MetricsSink {
public:
    explicit CsvFileSink(std::filesystem::path path) : path_(std::move(path)) {}

    void begin(const std::vector<std::string>& columns, std::size_t resume_after) override {
        std::string kept = csv_header(columns);
        if (resume_after > 0) {
            std::ifstream in(path_);
            if (!in) throw IoError("cannot reopen metrics file '" + path_.string() + "' for resume");
            std::string line;
            std::getline(in, line);
            if (line + "\n" != kept)
                throw InputError("metrics file '" + path_.string() + "' has a different header; cannot resume");
            for (std::size_t e = 0; e < resume_after && std::getline(in, line); ++e) kept += line + "\n";
        }
        out_.open(path_, std::ios::binary | std::ios::trunc);
        if (!out_) throw IoError("cannot write metrics file '" + path_.string() + "'");
        out_ << kept;
        out_.flush();
        if (!out_) throw IoError("write failed for '" + path_.string() + "'");
    }

    void write(const MetricsRow& row) override {
        out_ << csv_line(row);
        out_.flush();
        if (!out_)
            throw IoError("write failed for '" + path_.string() + "' at epoch " + std::to_string(row.epoch) +
                          "; rows before this epoch are complete");
    }

private:
    std::filesystem::path path_;
    std::ofstream out_;
};

// ---- experiment loop -------------------------------------------------------------------------

struct RunOptions {
    std::filesystem::path out_dir;  // empty: no files are written
    std::size_t checkpoint_every = 0;
    std::optional<std::filesystem::path> resume;
    std::string config_digest;
    std::size_t stop_after = 0;  // stop once this many epochs are complete (0: run the plan)
};

struct ExperimentResult {
    Model final_model;
    Model best_model;
    std::size_t best_epoch = 0;  // 1-based
    double best_robust = -1.0;
    std::optional<Model> swa_model;
    std::vector<MetricsRow> rows;
};

inline std::string epoch_checkpoint_name(std::size_t epoch, bool best = false) {
    char buf[32];
    std::snprintf(buf, sizeof buf, best ? "epoch-%04zu-best.ckpt" : "epoch-%04zu.ckpt", epoch);
    return buf;
}

/// Fills the landscape columns of a row from reports on the two metric subsets.
inline void landscape_metrics(MetricsRow& row, const Model& model, const Dataset& train_subset,
                              const Dataset& test_subset, const TrainPlan& plan, std::size_t epoch) {
    LandscapeOptions tr = plan.landscape;
    tr.seed = derive_seed(plan.seed, {0x1A4D, epoch, 0});
    const LandscapeReport rt = landscape_report(model, train_subset, tr);
    LandscapeOptions te = plan.landscape;
    te.seed = derive_seed(plan.seed, {0x1A4D, epoch, 1});
    te.effectiveness_attacks.clear();
    const LandscapeReport rs = landscape_report(model, test_subset, te);
    row.set("ig_train", rt.ig);
    row.set("ig_test", rs.ig);
    if (plan.landscape.compute_hs) {
        row.set("hs_train", rt.hs);
        row.set("hs_test", rs.hs);
    }
    row.set("av_train", rt.av);
    row.set("av_test", rs.av);
    for (const auto& [name, v] : rt.effectiveness) row.set("eff_" + name, v);
    row.set("grad_align", rt.grad_align);
    if (plan.landscape.softplus_twin && plan.landscape.compute_hs) {
        row.set("hs_softplus_train", rt.hs_softplus);
        row.set("hs_softplus_test", rs.hs_softplus);
    }
}

inline Checkpoint make_checkpoint(const Model& model, std::size_t epoch, const TrainPlan& plan, const RunOptions& opt,
                                  const OptimizerState* st, const SwaState* swa) {
    Checkpoint ck;
    ck.model = model;
    ck.epoch = epoch;
    ck.seed = plan.seed;
    ck.config_digest = opt.config_digest;
    if (st) ck.optimizer = *st;
    if (swa && swa->count > 0) ck.swa = *swa;
    return ck;
}

/// Trains under `plan`, evaluating every epoch on both splits, computing landscape metrics on
/// fixed subsets, and tracking the best epoch by test robust accuracy (earliest wins ties).
inline ExperimentResult run_experiment(const ModelSpec& spec, const TrainPlan& plan, const Dataset& train,
                                       const Dataset& test, MetricsSink& sink, const RunOptions& opt = {}) {
    plan.validate();
    if (train.dim() != test.dim()) throw InputError("train and test inputs differ in width");
    const bool files = !opt.out_dir.empty();
    if (files) std::filesystem::create_directories(opt.out_dir);

    ExperimentResult res;
    Model model = init_model(spec);
    if (model.input_dim() != train.dim())
        throw ConfigError("model input width " + std::to_string(model.input_dim()) + " does not match dataset width " +
                          std::to_string(train.dim()));
    OptimizerState st = OptimizerState::for_model(model, plan.momentum, plan.weight_decay, lr_at(0, plan));
    SwaState swa;
    swa.start_epoch = plan.swa_start;
    std::size_t first_epoch = 0;
    res.best_model = model;

    if (opt.resume) {
        Checkpoint ck = load_checkpoint(*opt.resume, opt.config_digest);
        if (!(ck.model.spec() == spec)) throw InputError("resume checkpoint was written for a different model");
        if (ck.epoch >= plan.epochs) throw InputError("resume checkpoint is already at the final epoch");
        if (!ck.optimizer) throw InputError("resume checkpoint carries no optimizer state");
        model = ck.model;
        st = *ck.optimizer;
        if (ck.swa) swa = *ck.swa;
        first_epoch = ck.epoch;
        res.best_epoch = ck.extra.value("best_epoch", std::size_t{0});
        res.best_robust = ck.extra.value("best_robust", -1.0);
        const auto best_path = opt.resume->parent_path() / epoch_checkpoint_name(ck.epoch, true);
        res.best_model = res.best_epoch > 0 ? load_checkpoint(best_path).model : model;
    }

    const Dataset train_subset = metric_subset(train, plan.landscape.subset_size, derive_seed(plan.seed, {0x5B}));
    const Dataset test_subset = metric_subset(test, plan.landscape.subset_size, derive_seed(plan.seed, {0x5C}));
    sink.begin(metrics_columns(plan), first_epoch);

    const std::size_t last = opt.stop_after ? std::min(opt.stop_after, plan.epochs) : plan.epochs;
    for (std::size_t epoch = first_epoch; epoch < last; ++epoch) {
        const EpochStats es = train_epoch(model, train, plan, epoch, st);
        MetricsRow row = empty_row(plan, epoch + 1);
        row.set("lr", st.lr);
        row.set("train_objective", es.objective);
        row.set("train_fit_acc", es.accuracy);
        if (!std::holds_alternative<StandardScheme>(plan.scheme) && !std::holds_alternative<AtScheme>(plan.scheme))
            row.set("reg_loss", es.reg);

        AttackSpec eval = plan.eval_attack;
        eval.seed = derive_seed(plan.seed ^ eval.seed, {0xE7A1, epoch});
        const EvalResult tr = evaluate(model, train, eval, plan.eval_batch);
        const EvalResult te = evaluate(model, test, eval, plan.eval_batch);
        row.set("train_clean_loss", tr.clean_loss);
        row.set("test_clean_loss", te.clean_loss);
        row.set("train_adv_loss", tr.adv_loss);
        row.set("test_adv_loss", te.adv_loss);
        row.set("train_clean_acc", tr.clean_acc);
        row.set("test_clean_acc", te.clean_acc);
        row.set("train_robust_acc", tr.robust_acc);
        row.set("test_robust_acc", te.robust_acc);

        const bool metrics_due =
            plan.metrics_every > 0 && ((epoch + 1) % plan.metrics_every == 0 || epoch + 1 == plan.epochs);
        if (metrics_due) landscape_metrics(row, model, train_subset, test_subset, plan, epoch);

        if (plan.swa && epoch >= plan.swa_start) {
            swa_update(swa, model, epoch);
            const Model avg = swa_model(swa, model);
            const EvalResult sw = evaluate(avg, test, eval, plan.eval_batch);
            row.set("swa_test_clean_loss", sw.clean_loss);
            row.set("swa_test_adv_loss", sw.adv_loss);
            row.set("swa_test_clean_acc", sw.clean_acc);
            row.set("swa_test_robust_acc", sw.robust_acc);
        }

        if (te.robust_acc > res.best_robust) {
            res.best_robust = te.robust_acc;
            res.best_epoch = epoch + 1;
            res.best_model = model;
            if (files) save_checkpoint(opt.out_dir / "best.ckpt", make_checkpoint(model, epoch + 1, plan, opt, nullptr, nullptr));
        }

        sink.write(row);
        res.rows.push_back(row);

        if (files && opt.checkpoint_every > 0 && (epoch + 1) % opt.checkpoint_every == 0) {
            Checkpoint ck = make_checkpoint(model, epoch + 1, plan, opt, &st, &swa);
            ck.extra = {{"best_epoch", res.best_epoch}, {"best_robust", res.best_robust}};
            save_checkpoint(opt.out_dir / epoch_checkpoint_name(epoch + 1), ck);
            save_checkpoint(opt.out_dir / epoch_checkpoint_name(epoch + 1, true),
                            make_checkpoint(res.best_model, res.best_epoch, plan, opt, nullptr, nullptr));
        }
    }

    res.final_model = model;
    if (plan.swa && swa.count > 0) res.swa_model = swa_model(swa, model);
    if (files) {
        Checkpoint fin = make_checkpoint(model, last, plan, opt, &st, &swa);
        fin.extra = {{"best_epoch", res.best_epoch}, {"best_robust", res.best_robust}};
        save_checkpoint(opt.out_dir / "final.ckpt", fin);
        if (res.swa_model)
            save_checkpoint(opt.out_dir / "swa.ckpt", make_checkpoint(*res.swa_model, last, plan, opt, nullptr, nullptr));
    }
    return res;
}

// ---- degeneration probes ---------------------------------------------------------------------

struct DegenerationPoint {
    double param = 0.0;  // multiplier, flip fraction, or drawn weight-noise scale
    double effectiveness = std::numeric_limits<double>::quiet_NaN();
    double hs = std::numeric_limits<double>::quiet_NaN();
    std::size_t excluded = 0;
};

/// Trains `model` for one epoch of adversarial training on manipulated PGD20 examples, then
/// measures the effectiveness of the same manipulated attack (and HS) on `subset`.
inline DegenerationPoint degenerate_training(Model model, const Dataset& train, const Dataset& subset,
                                             TrainPlan plan, const Manipulation& manip, double epsilon,
                                             bool with_hs = true) {
    plan.scheme = AtScheme{AttackSpec::pgd(epsilon, 20)};
    plan.manipulation = manip;
    plan.validate();
    OptimizerState st = OptimizerState::for_model(model, plan.momentum, plan.weight_decay, lr_at(0, plan));
    train_epoch(model, train, plan, 0, st);

    DegenerationPoint pt;
    pt.param = manip.value;
    std::vector<double> eff, hs;
    std::size_t chunk_index = 0;
    for (const auto& b : sequential_batches(subset, plan.landscape.chunk)) {
        const LossFn loss = model_loss(model, b.y);
        AttackSpec a = AttackSpec::pgd(epsilon, 20);
        const Tensor d = run_attack(loss, b.x, a).delta;
        const Tensor m = manipulate(b.x, d, manip, derive_seed(plan.seed, {0xDE6, chunk_index}));
        const PerSample e = effectiveness(loss, b.x, m, AttackSpec::pgd(epsilon, 50));
        for (std::size_t i = 0; i < e.values.size(); ++i) {
            if (e.included[i])
                eff.push_back(e.values[i]);
            else
                ++pt.excluded;
        }
        if (with_hs) {
            SpectrumOptions so = plan.landscape.spectrum;
            so.seed = derive_seed(plan.seed, {0xDE7, chunk_index});
            for (const auto& s : hessian_spectrum(loss, b.x, so)) hs.push_back(s.hs);
        }
        ++chunk_index;
    }
    if (!eff.empty()) pt.effectiveness = mean_of(eff);
    if (!hs.empty()) pt.hs = mean_of(hs);
    return pt;
}

/// Perturbs the weights with noise of a randomly drawn scale and reports HS and the mean
/// effectiveness of `attack` (relative to PGD50) on `subset`.
inline DegenerationPoint weight_noise_probe(const Model& model, const Dataset& subset, double s_max, std::uint64_t seed,
                                            const AttackSpec& attack, const SpectrumOptions& spectrum,
                                            std::size_t chunk = 100) {
    DegenerationPoint pt;
    const Model noisy = perturb_weights(model, s_max, seed, &pt.param);
    std::vector<double> eff, hs;
    std::size_t chunk_index = 0;
    for (const auto& b : sequential_batches(subset, chunk)) {
        const LossFn loss = model_loss(noisy, b.y);
        AttackSpec a = attack;
        a.seed = derive_seed(seed, {0xA7, chunk_index});
        const Tensor d = run_attack(loss, b.x, a).delta;
        const PerSample e = effectiveness(loss, b.x, d, AttackSpec::pgd(attack.epsilon, 50));
        for (std::size_t i = 0; i < e.values.size(); ++i) {
            if (e.included[i])
                eff.push_back(e.values[i]);
            else
                ++pt.excluded;
        }
        SpectrumOptions so = spectrum;
        so.seed = derive_seed(seed, {0x55, chunk_index});
        for (const auto& s : hessian_spectrum(loss, b.x, so)) hs.push_back(s.hs);
        ++chunk_index;
    }
    if (!eff.empty()) pt.effectiveness = mean_of(eff);
    if (!hs.empty()) pt.hs = mean_of(hs);
    return pt;
}

}  // namespace advlab
