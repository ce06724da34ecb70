#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "advlab/advlab.hpp"

int main(int argc, char** argv) {
    CLI::App app{"advlab: adversarial training and input loss-landscape diagnostics"};
    app.require_subcommand(1);

    advlab::TrainArgs train;
    std::uint64_t train_seed = 0;
    std::string train_out, train_resume;
    auto* t = app.add_subcommand("train", "train a model from a JSON config");
    t->add_option("--config", train.config, "experiment config (JSON)")->required();
    t->add_option("--out", train_out, "output directory (overrides runner.out_dir)");
    auto* t_seed = t->add_option("--seed", train_seed, "seed override");
    t->add_option("--resume", train_resume, "periodic checkpoint to resume from");
    t->add_option("--stop-after", train.stop_after, "stop once this many epochs are complete");

    advlab::AttackArgs attack;
    std::string attack_kind;
    double attack_eps = 0.0;
    std::size_t attack_steps = 0;
    std::uint64_t attack_seed = 0;
    auto* a = app.add_subcommand("attack", "attack a checkpoint and write per-sample results");
    a->add_option("--checkpoint", attack.checkpoint)->required();
    a->add_option("--config", attack.config)->required();
    a->add_option("--split", attack.split, "train or test")->check(CLI::IsMember({"train", "test"}));
    a->add_option("--out", attack.out, "per-sample CSV")->required();
    auto* a_kind = a->add_option("--attack", attack_kind, "fgsm, fgsm_r, fgsm_n, pgd, or av (the configured probe attack)");
    auto* a_eps = a->add_option("--epsilon", attack_eps, "l_inf budget");
    auto* a_steps = a->add_option("--steps", attack_steps, "PGD steps");
    a->add_option("--subset", attack.subset, "use the metric subset of this size");
    auto* a_seed = a->add_option("--seed", attack_seed, "seed override");

    advlab::ProbeArgs probe;
    std::string degenerate;
    std::uint64_t probe_seed = 0;
    auto* p = app.add_subcommand("probe", "landscape metrics and sweeps on a checkpoint");
    p->add_option("--checkpoint", probe.checkpoint)->required();
    p->add_option("--config", probe.config)->required();
    p->add_option("--split", probe.split, "train or test")->check(CLI::IsMember({"train", "test"}));
    p->add_option("--out", probe.out, "CSV output")->required();
    auto* sweeps = p->add_option("--pgd-sweep", probe.pgd_sweep, "PGD step counts")->delimiter(',');
    auto* samples = p->add_option("--sample-sweep", probe.sample_sweep, "subset sizes")->delimiter(',');
    auto* twin = p->add_flag("--softplus-twin", probe.softplus_twin, "also measure HS of the softplus twin");
    auto* degen = p->add_option("--degenerate", degenerate, "scale:m[,m..] | flip:p[,p..] | weight-noise:s");
    p->add_option("--noise-seeds", probe.noise_seeds, "weight-noise variants");
    auto* p_seed = p->add_option("--seed", probe_seed, "seed override");
    sweeps->excludes(samples)->excludes(twin)->excludes(degen);
    samples->excludes(twin)->excludes(degen);
    twin->excludes(degen);

    advlab::PlotArgs plot;
    auto* g = app.add_subcommand("plot", "emit long-format plot data");
    g->add_option("--metrics", plot.metrics, "metrics or probe CSV")->required();
    g->add_option("--figure", plot.figure)->required()->check(CLI::IsMember(advlab::figure_names()));
    g->add_option("--out", plot.out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : advlab::exit_input;
    }

    if (t->parsed()) {
        if (!train_out.empty()) train.out = train_out;
        if (!train_resume.empty()) train.resume = train_resume;
        if (*t_seed) train.seed = train_seed;
        return advlab::guarded([&] { advlab::cmd_train(train); });
    }
    if (a->parsed()) {
        if (*a_kind) attack.kind = attack_kind;
        if (*a_eps) attack.epsilon = attack_eps;
        if (*a_steps) attack.steps = attack_steps;
        if (*a_seed) attack.seed = attack_seed;
        return advlab::guarded([&] { advlab::cmd_attack(attack); });
    }
    if (p->parsed()) {
        if (!degenerate.empty()) probe.degenerate = degenerate;
        if (*p_seed) probe.seed = probe_seed;
        return advlab::guarded([&] { advlab::cmd_probe(probe); });
    }
    return advlab::guarded([&] { advlab::cmd_plot(plot); });
}
