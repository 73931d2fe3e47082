// SPDX-License-Identifier: Apache-2.0
//
// Experiment orchestration: configuration, data bundles, the metrics table,
// and full runs over an (SNR, T) grid plus one precoding cell.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "unfold/array_channel.hpp"
#include "unfold/baselines.hpp"
#include "unfold/training.hpp"

namespace unfold {

/// Invalid or unknown configuration content.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct SystemConfig {
    Eigen::Index antennas = 64;
    int rf_chains = 16;
    int users = 4;
    Eigen::Index grid_size = 1200;
    int pga_iterations = 10;
    double carrier_hz = kDefaultCarrierHz;
    int paths_max = 5;
    double position_std_wavelengths = 0.1;
    double p_total = 4.0;
};

struct DataConfig {
    Eigen::Index train = 3000;
    Eigen::Index validation = 300;
    Eigen::Index test = 300;
    bool paper_scale = false;  // 30000 / 1000 / 1000
    std::string dir;           // load instead of generating when set
};

struct PrecodingConfig {
    double snr_db = 15.0;
    int frames = 2;
    int test_episodes = 4;
    std::vector<double> fixed_steps{1e-1, 1e-2, 1e-3};
};

struct TrainingConfig {
    int mpnet_epochs = 8;
    int upga_epochs = 5;
    int e2e_epochs = 5;
    int batch_size = 64;
    bool streaming = false;
    int eval_every = 250;
    double lr_atoms = 1e-3;
    double lr_positions = 1e-4;
    double lr_log_steps = 5e-2;
    int patience = 10;
    bool loss_all_iterations = false;
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::string output;
    SystemConfig system;
    DataConfig data;
    std::vector<double> snr_db{5.0, 15.0};
    std::vector<int> frames{1, 2, 3};
    std::optional<PrecodingConfig> precoding = PrecodingConfig{};
    std::vector<Strategy> strategies{Strategy::LblSupervised, Strategy::LblUnsupervised, Strategy::E2eCold,
                                     Strategy::E2eWarm};
    std::vector<std::string> baselines{"mp-real", "mp-nominal", "lmmse", "fully-digital", "fixed-pga", "upga-true"};
    TrainingConfig training;
    StopRule stop;
    NoiseModel lmmse_noise = NoiseModel::Structured;
    std::string warm_mpnet;  // checkpoint stems for e2e-warm without lbl-supervised in the run
    std::string warm_upga;
};

/// Parses and validates a JSON document; every key is optional, unknown keys
/// are rejected. Throws ConfigError.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Fully resolved configuration (all defaults written out).
std::string config_to_json(const ExperimentConfig& cfg);
/// Names accepted in "baselines".
const std::vector<std::string>& known_baselines();

bool has_strategy(const ExperimentConfig& cfg, Strategy s);
bool has_baseline(const ExperimentConfig& cfg, const std::string& name);

// ---- data -----------------------------------------------------------------------

struct DataBundle {
    ChannelDataset train;
    ChannelDataset validation;
    ChannelDataset test;
};

DataBundle generate_data(const ExperimentConfig& cfg);
/// train/, validation/ and test/ subdirectories.
void save_data(const DataBundle& data, const std::filesystem::path& dir);
DataBundle load_data(const std::filesystem::path& dir);
/// Loads cfg.data.dir when set, otherwise generates.
DataBundle obtain_data(const ExperimentConfig& cfg);

// ---- metrics --------------------------------------------------------------------

struct MetricRow {
    std::string method;
    double snr_db = 0.0;
    int frames = 0;
    int rf_chains = 0;
    std::string axis;  // seen_channels | pga_iteration | none
    double x = 0.0;
    std::string metric;
    double value = 0.0;
};

class MetricsTable {
public:
    void add(MetricRow row) { rows_.push_back(std::move(row)); }
    const std::vector<MetricRow>& rows() const { return rows_; }
    std::string to_csv() const;
    void write_csv(const std::filesystem::path& path) const;
    /// Throws IoError on malformed input.
    static MetricsTable parse_csv(const std::string& text);
    static MetricsTable read_csv(const std::filesystem::path& path);

    std::optional<double> find(const std::string& method, const std::string& metric, double snr_db, int frames,
                               const std::string& axis = "none", double x = 0.0) const;

private:
    std::vector<MetricRow> rows_;
};

inline constexpr const char* kMetricsHeader = "method,snr_db,T,L,axis,x,metric,value";

// ---- cells ----------------------------------------------------------------------

/// Everything shared by the methods evaluated at one (SNR, T) point.
struct Cell {
    double snr_db = 0.0;
    int frames = 0;
    double zeta2 = 0.0;
    MeasurementMatrix meas;
    Observation train;
    Observation validation;
    Observation test;
};

Cell make_cell(const ExperimentConfig& cfg, const DataBundle& data, double snr_db, int frames);

TrainConfig train_config(const ExperimentConfig& cfg, Strategy strategy, double sigma2, int epochs);

struct EstimatorRun {
    MpNetParams params;
    TrainReport report;
};

/// Unconstrained supervised (lbl-supervised) or constrained unsupervised (lbl-unsupervised) estimator.
EstimatorRun train_estimator(const ExperimentConfig& cfg, const DataBundle& data, const Cell& cell, Strategy s);

struct PrecoderRun {
    PgaParams params;
    TrainReport report;
};

/// Trained parameters of one strategy at one cell.
struct StrategyModels {
    Strategy strategy = Strategy::LblSupervised;
    std::optional<MpNetParams> mp;
    std::optional<PgaParams> pga;
    std::vector<std::pair<std::string, TrainReport>> reports;  // "mpnet" | "upga" | "e2e"
};

/// lbl-*: estimator (reused from `estimator` when given) then step sizes on its
/// estimates; e2e-cold: nominal unconstrained dictionary and constant steps
/// trained jointly; e2e-warm: joint training from `warm_from`.
StrategyModels train_strategy(const ExperimentConfig& cfg, const DataBundle& data, const Cell& cell, Strategy s,
                              const EstimatorRun* estimator = nullptr, const StrategyModels* warm_from = nullptr);

/// mpnet.json/.bin, upga.json and report-<name>.csv inside `dir`.
void save_models(const StrategyModels& models, const std::filesystem::path& dir);
/// Loads whichever checkpoints exist; throws IoError when neither does.
StrategyModels load_models(const std::filesystem::path& dir, Strategy s);

/// LMMSE channel estimates for an observation, with the model fitted on the training split.
CMat lmmse_for(const ExperimentConfig& cfg, const DataBundle& data, const Observation& obs);

// ---- full runs ------------------------------------------------------------------

struct MethodRates {
    std::vector<double> per_iteration;  // mean over test groups, K + 1 entries
    std::vector<double> final_per_group;
    double mean_final = 0.0;
};

struct RunResult {
    MetricsTable metrics;
    /// cell key "snr/T" -> method -> median test NMSE (dB)
    std::map<std::string, std::map<std::string, double>> nmse_median;
    /// precoding methods at the precoding cell
    std::map<std::string, MethodRates> rates;
    std::map<std::string, std::size_t> trainable;
};

std::string cell_key(double snr_db, int frames);

/// Test groups (paired across methods) and validation groups of a precoding cell.
struct PrecodingGroups {
    Grouping test;
    Grouping validation;
};

PrecodingGroups make_precoding_groups(const ExperimentConfig& cfg, const DataBundle& data);

/// Median/mean test NMSE rows for the fixed estimators named in cfg.baselines.
void add_nmse_baselines(const ExperimentConfig& cfg, const DataBundle& data, const Cell& cell, RunResult& out);
/// Test NMSE rows (and the training curve when `report` is given) of a trained estimator.
void add_estimator_metrics(const ExperimentConfig& cfg, const DataBundle& data, const Cell& cell,
                           const std::string& method, const MpNetParams& params, const TrainReport* report,
                           RunResult& out);
/// Fully digital bound, fixed-step PGA, and trained step sizes on true and LMMSE channels.
void add_precoding_baselines(const ExperimentConfig& cfg, const DataBundle& data, const Cell& cell,
                             const PrecodingGroups& groups, RunResult& out);
/// Rate traces of a strategy's estimator + precoder on the test groups.
void add_strategy_rates(const ExperimentConfig& cfg, const DataBundle& data, const Cell& cell,
                        const PrecodingGroups& groups, const StrategyModels& models, RunResult& out);

/// Runs every configured method. When `out` is non-empty, writes config.json,
/// metrics.csv, group_rates.csv, summary.json, reports/, checkpoints/ and
/// figures/ into it.
RunResult run_experiment(const ExperimentConfig& cfg, const DataBundle& data, const std::filesystem::path& out);

}  // namespace unfold
