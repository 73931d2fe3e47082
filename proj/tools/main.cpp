// SPDX-License-Identifier: Apache-2.0
//
// unfoldmimo: dataset generation, training, evaluation and figures.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "unfold/experiment.hpp"
#include "unfold/io.hpp"
#include "unfold/svg_plot.hpp"

namespace fs = std::filesystem;
using namespace unfold;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct Common {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::string data;
};

void add_common(CLI::App* app, Common& c, bool need_out = true)
{
    app->add_option("--config", c.config, "experiment configuration (JSON)");
    auto* o = app->add_option("--out", c.out, "output directory");
    if (need_out) {
        o->required();
    }
    app->add_option("--seed", c.seed, "base seed (overrides the configuration)");
}

ExperimentConfig resolve(const Common& c)
{
    ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
    if (c.seed) {
        cfg.seed = *c.seed;
    }
    if (!c.data.empty()) {
        cfg.data.dir = c.data;
    }
    return cfg;
}

struct CellFlags {
    std::optional<double> snr;
    std::optional<int> frames;
};

void add_cell(CLI::App* app, CellFlags& f)
{
    app->add_option("--snr", f.snr, "uplink SNR in dB (default: precoding cell)");
    app->add_option("--frames", f.frames, "sounding frames T (default: precoding cell)")->check(CLI::PositiveNumber);
}

std::pair<double, int> cell_of(const ExperimentConfig& cfg, const CellFlags& f)
{
    const PrecodingConfig pc = cfg.precoding.value_or(PrecodingConfig{});
    return {f.snr.value_or(pc.snr_db), f.frames.value_or(pc.frames)};
}

Strategy parse_strategy(const std::string& s)
{
    try {
        return strategy_from_string(s);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

int cmd_gen_data(const Common& c, bool paper_scale)
{
    ExperimentConfig cfg = resolve(c);
    if (paper_scale) {
        cfg.data.paper_scale = true;
        cfg.data.train = 30000;
        cfg.data.validation = 1000;
        cfg.data.test = 1000;
    }
    const DataBundle data = generate_data(cfg);
    save_data(data, c.out);
    std::printf("wrote %s: train %ld, validation %ld, test %ld channels\n", c.out.c_str(),
                static_cast<long>(data.train.count()), static_cast<long>(data.validation.count()),
                static_cast<long>(data.test.count()));
    return 0;
}

int cmd_train(const Common& c, const CellFlags& f, const std::string& strategy, const std::string& warm)
{
    const ExperimentConfig cfg = resolve(c);
    const Strategy s = parse_strategy(strategy);
    const DataBundle data = obtain_data(cfg);
    const auto [snr, frames] = cell_of(cfg, f);
    const Cell cell = make_cell(cfg, data, snr, frames);
    std::optional<StrategyModels> warm_from;
    if (s == Strategy::E2eWarm && !warm.empty()) {
        warm_from = load_models(warm, Strategy::LblSupervised);
    }
    const StrategyModels m = train_strategy(cfg, data, cell, s, nullptr, warm_from ? &*warm_from : nullptr);
    save_models(m, c.out);
    for (const auto& [name, rep] : m.reports) {
        const TrainRecord& last = rep.epochs.empty() ? rep.initial : rep.epochs.back();
        std::printf("%s/%s: %zu epochs, held-out loss %.6g, trainable %zu\n", to_string(s), name.c_str(),
                    rep.epochs.size(), last.holdout_loss, rep.trainable_count);
    }
    return 0;
}

int cmd_eval(const Common& c, const CellFlags& f, const std::string& strategy, const std::string& checkpoints)
{
    const ExperimentConfig cfg = resolve(c);
    const Strategy s = parse_strategy(strategy);
    const DataBundle data = obtain_data(cfg);
    const auto [snr, frames] = cell_of(cfg, f);
    const Cell cell = make_cell(cfg, data, snr, frames);
    const StrategyModels m = load_models(checkpoints, s);
    RunResult r;
    if (m.mp) {
        add_estimator_metrics(cfg, data, cell, to_string(s), *m.mp, nullptr, r);
    }
    if (m.mp && m.pga) {
        add_strategy_rates(cfg, data, cell, make_precoding_groups(cfg, data), m, r);
    }
    r.metrics.write_csv(fs::path(c.out) / "metrics.csv");
    std::fputs(r.metrics.to_csv().c_str(), stdout);
    return 0;
}

int cmd_baseline(const Common& c)
{
    const ExperimentConfig cfg = resolve(c);
    const DataBundle data = obtain_data(cfg);
    RunResult r;
    for (double snr : cfg.snr_db) {
        for (int t : cfg.frames) {
            add_nmse_baselines(cfg, data, make_cell(cfg, data, snr, t), r);
        }
    }
    if (cfg.precoding) {
        const Cell cell = make_cell(cfg, data, cfg.precoding->snr_db, cfg.precoding->frames);
        add_precoding_baselines(cfg, data, cell, make_precoding_groups(cfg, data), r);
    }
    r.metrics.write_csv(fs::path(c.out) / "metrics.csv");
    std::fputs(r.metrics.to_csv().c_str(), stdout);
    return 0;
}

int cmd_plot(const std::string& metrics, const std::string& kind, const std::string& out, const CellFlags& f)
{
    PlotKind k;
    try {
        k = plot_kind_from_string(kind);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    const MetricsTable table = MetricsTable::read_csv(metrics);
    PlotFilter filter;
    filter.snr_db = f.snr;
    filter.frames = f.frames;
    write_plot(table, k, out, filter);
    return 0;
}

int cmd_run(const Common& c)
{
    const ExperimentConfig cfg = resolve(c);
    const DataBundle data = obtain_data(cfg);
    const RunResult r = run_experiment(cfg, data, c.out);
    for (const auto& [method, rates] : r.rates) {
        std::printf("%-22s final sum-rate %.4f bits/s/Hz\n", method.c_str(), rates.mean_final);
    }
    for (const auto& [cell, methods] : r.nmse_median) {
        for (const auto& [m, v] : methods) {
            std::printf("%-12s %-22s median NMSE %.3f dB\n", cell.c_str(), m.c_str(), v);
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Unfolded channel estimation and hybrid precoding"};
    app.require_subcommand(1);

    Common gen_c;
    bool paper_scale = false;
    auto* gen = app.add_subcommand("gen-data", "generate train/validation/test channel datasets");
    add_common(gen, gen_c);
    gen->add_flag("--paper-scale", paper_scale, "30000 training and 1000 test channels");

    Common train_c;
    CellFlags train_f;
    std::string train_strategy_name;
    std::string warm;
    auto* train = app.add_subcommand("train", "train one strategy at one (SNR, T) cell");
    add_common(train, train_c);
    add_cell(train, train_f);
    train->add_option("--data", train_c.data, "dataset directory from gen-data");
    train->add_option("--strategy", train_strategy_name, "lbl-supervised | lbl-unsupervised | e2e-cold | e2e-warm")
        ->required();
    train->add_option("--warm", warm, "lbl-supervised checkpoint directory for e2e-warm");

    Common eval_c;
    CellFlags eval_f;
    std::string eval_strategy;
    std::string checkpoints;
    auto* eval = app.add_subcommand("eval", "evaluate trained checkpoints on the test split");
    add_common(eval, eval_c);
    add_cell(eval, eval_f);
    eval->add_option("--data", eval_c.data, "dataset directory from gen-data");
    eval->add_option("--strategy", eval_strategy, "strategy the checkpoints belong to")->required();
    eval->add_option("--checkpoints", checkpoints, "directory written by train")->required();

    Common base_c;
    auto* base = app.add_subcommand("baseline", "evaluate the configured baselines");
    add_common(base, base_c);
    base->add_option("--data", base_c.data, "dataset directory from gen-data");

    std::string metrics;
    std::string kind;
    std::string plot_out;
    CellFlags plot_f;
    auto* plot = app.add_subcommand("plot", "render an SVG figure from a metrics CSV");
    plot->add_option("--metrics", metrics, "metrics.csv")->required();
    plot->add_option("--kind", kind, "nmse-curve | sumrate-per-iteration")->required();
    plot->add_option("--out", plot_out, "output SVG path")->required();
    add_cell(plot, plot_f);

    Common run_c;
    auto* run = app.add_subcommand("run", "full experiment: data, training, baselines, metrics, figures");
    add_common(run, run_c);
    run->add_option("--data", run_c.data, "dataset directory from gen-data");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (*gen) {
            return cmd_gen_data(gen_c, paper_scale);
        }
        if (*train) {
            return cmd_train(train_c, train_f, train_strategy_name, warm);
        }
        if (*eval) {
            return cmd_eval(eval_c, eval_f, eval_strategy, checkpoints);
        }
        if (*base) {
            return cmd_baseline(base_c);
        }
        if (*plot) {
            return cmd_plot(metrics, kind, plot_out, plot_f);
        }
        if (*run) {
            return cmd_run(run_c);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
