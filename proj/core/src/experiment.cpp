// SPDX-License-Identifier: Apache-2.0

#include "unfold/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include <json.hpp>

#include "unfold/io.hpp"
#include "unfold/rng.hpp"
#include "unfold/svg_plot.hpp"

namespace unfold {

using nlohmann::json;

// ---- configuration ----------------------------------------------------------------

const std::vector<std::string>& known_baselines()
{
    static const std::vector<std::string> names{"mp-real", "mp-nominal", "lmmse", "fully-digital", "fixed-pga",
                                                "upga-true"};
    return names;
}

bool has_strategy(const ExperimentConfig& cfg, Strategy s)
{
    return std::find(cfg.strategies.begin(), cfg.strategies.end(), s) != cfg.strategies.end();
}

bool has_baseline(const ExperimentConfig& cfg, const std::string& name)
{
    return std::find(cfg.baselines.begin(), cfg.baselines.end(), name) != cfg.baselines.end();
}

namespace {

class Reader {
public:
    Reader(const json& j, std::string where, std::initializer_list<const char*> allowed) : j_(j), where_(std::move(where))
    {
        if (!j.is_object()) {
            fail("expected an object");
        }
        std::set<std::string> ok(allowed.begin(), allowed.end());
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (ok.count(it.key()) == 0) {
                fail("unknown key '" + it.key() + "'");
            }
        }
    }

    bool has(const char* key) const { return j_.contains(key); }
    const json& raw(const char* key) const { return j_.at(key); }

    template <typename T>
    void integer(const char* key, T& out, long long min) const
    {
        if (!has(key)) {
            return;
        }
        const json& v = j_.at(key);
        if (!v.is_number_integer()) {
            fail(std::string(key) + " must be an integer");
        }
        const long long x = v.get<long long>();
        if (x < min) {
            fail(std::string(key) + " must be >= " + std::to_string(min));
        }
        out = static_cast<T>(x);
    }

    void seed(const char* key, std::uint64_t& out) const
    {
        if (!has(key)) {
            return;
        }
        const json& v = j_.at(key);
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
            fail(std::string(key) + " must be a non-negative integer");
        }
        out = v.get<std::uint64_t>();
    }

    void number(const char* key, double& out, bool positive = false, bool nonnegative = false) const
    {
        if (!has(key)) {
            return;
        }
        const json& v = j_.at(key);
        if (!v.is_number()) {
            fail(std::string(key) + " must be a number");
        }
        const double x = v.get<double>();
        if (!std::isfinite(x) || (positive && !(x > 0.0)) || (nonnegative && x < 0.0)) {
            fail(std::string(key) + " is out of range");
        }
        out = x;
    }

    void boolean(const char* key, bool& out) const
    {
        if (!has(key)) {
            return;
        }
        if (!j_.at(key).is_boolean()) {
            fail(std::string(key) + " must be a boolean");
        }
        out = j_.at(key).get<bool>();
    }

    void string(const char* key, std::string& out) const
    {
        if (!has(key)) {
            return;
        }
        if (!j_.at(key).is_string()) {
            fail(std::string(key) + " must be a string");
        }
        out = j_.at(key).get<std::string>();
    }

    const json& array(const char* key, bool allow_empty) const
    {
        const json& v = j_.at(key);
        if (!v.is_array()) {
            fail(std::string(key) + " must be an array");
        }
        if (!allow_empty && v.empty()) {
            fail(std::string(key) + " must not be empty");
        }
        return v;
    }

    [[noreturn]] void fail(const std::string& msg) const { throw ConfigError("config " + where_ + ": " + msg); }

private:
    const json& j_;
    std::string where_;
};

SystemConfig parse_system(const json& j)
{
    SystemConfig s;
    Reader r(j, "system", {"antennas", "rf_chains", "users", "grid_size", "pga_iterations", "carrier_hz",
                           "paths_max", "position_std_wavelengths", "p_total"});
    r.integer("antennas", s.antennas, 2);
    r.integer("rf_chains", s.rf_chains, 1);
    r.integer("users", s.users, 1);
    r.integer("grid_size", s.grid_size, 1);
    r.integer("pga_iterations", s.pga_iterations, 1);
    r.number("carrier_hz", s.carrier_hz, true);
    r.integer("paths_max", s.paths_max, 1);
    r.number("position_std_wavelengths", s.position_std_wavelengths, false, true);
    s.p_total = static_cast<double>(s.users);
    r.number("p_total", s.p_total, true);
    if (s.rf_chains > s.antennas) {
        r.fail("rf_chains must not exceed antennas");
    }
    if (s.grid_size < s.antennas) {
        r.fail("grid_size must be >= antennas");
    }
    return s;
}

DataConfig parse_data(const json& j)
{
    DataConfig d;
    Reader r(j, "data", {"train", "validation", "test", "paper_scale", "dir"});
    r.boolean("paper_scale", d.paper_scale);
    if (d.paper_scale) {
        d.train = 30000;
        d.validation = 1000;
        d.test = 1000;
    }
    r.integer("train", d.train, 1);
    r.integer("validation", d.validation, 1);
    r.integer("test", d.test, 1);
    r.string("dir", d.dir);
    return d;
}

PrecodingConfig parse_precoding(const json& j)
{
    PrecodingConfig p;
    Reader r(j, "precoding", {"snr_db", "frames", "test_episodes", "fixed_steps"});
    r.number("snr_db", p.snr_db);
    r.integer("frames", p.frames, 1);
    r.integer("test_episodes", p.test_episodes, 1);
    if (r.has("fixed_steps")) {
        p.fixed_steps.clear();
        for (const json& v : r.array("fixed_steps", true)) {
            if (!v.is_number() || !(v.get<double>() > 0.0)) {
                r.fail("fixed_steps entries must be positive numbers");
            }
            p.fixed_steps.push_back(v.get<double>());
        }
    }
    return p;
}

TrainingConfig parse_training(const json& j)
{
    TrainingConfig t;
    Reader r(j, "training", {"mpnet_epochs", "upga_epochs", "e2e_epochs", "batch_size", "streaming", "eval_every",
                             "lr_atoms", "lr_positions", "lr_log_steps", "patience", "loss_all_iterations"});
    r.integer("mpnet_epochs", t.mpnet_epochs, 1);
    r.integer("upga_epochs", t.upga_epochs, 1);
    r.integer("e2e_epochs", t.e2e_epochs, 1);
    r.integer("batch_size", t.batch_size, 1);
    r.boolean("streaming", t.streaming);
    r.integer("eval_every", t.eval_every, 1);
    r.number("lr_atoms", t.lr_atoms, false, true);
    r.number("lr_positions", t.lr_positions, false, true);
    r.number("lr_log_steps", t.lr_log_steps, false, true);
    r.integer("patience", t.patience, 1);
    r.boolean("loss_all_iterations", t.loss_all_iterations);
    return t;
}

StopRule parse_estimator(const json& j)
{
    StopRule s;
    Reader r(j, "estimator", {"stop", "max_atoms", "threshold_factor"});
    std::string mode = "residual-threshold";
    r.string("stop", mode);
    if (mode == "residual-threshold") {
        s.mode = StopMode::ResidualThreshold;
    } else if (mode == "fixed-depth") {
        s.mode = StopMode::FixedDepth;
    } else {
        r.fail("stop must be residual-threshold or fixed-depth");
    }
    r.integer("max_atoms", s.max_atoms, 1);
    r.number("threshold_factor", s.threshold_factor, true);
    return s;
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text)
{
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    ExperimentConfig c;
    Reader r(j, "root", {"seed", "output", "system", "data", "snr_db", "frames", "precoding", "strategies",
                         "baselines", "training", "estimator", "lmmse_noise", "warm_start"});
    try {
        r.seed("seed", c.seed);
        r.string("output", c.output);
        if (r.has("system")) {
            c.system = parse_system(r.raw("system"));
        }
        if (r.has("data")) {
            c.data = parse_data(r.raw("data"));
        }
        if (r.has("snr_db")) {
            c.snr_db.clear();
            for (const json& v : r.array("snr_db", true)) {
                if (!v.is_number()) {
                    r.fail("snr_db entries must be numbers");
                }
                c.snr_db.push_back(v.get<double>());
            }
        }
        if (r.has("frames")) {
            c.frames.clear();
            for (const json& v : r.array("frames", true)) {
                if (!v.is_number_integer() || v.get<long long>() < 1) {
                    r.fail("frames entries must be positive integers");
                }
                c.frames.push_back(v.get<int>());
            }
        }
        if (r.has("precoding")) {
            if (r.raw("precoding").is_null()) {
                c.precoding.reset();
            } else {
                c.precoding = parse_precoding(r.raw("precoding"));
            }
        }
        if (r.has("strategies")) {
            c.strategies.clear();
            for (const json& v : r.array("strategies", true)) {
                if (!v.is_string()) {
                    r.fail("strategies entries must be strings");
                }
                try {
                    const Strategy s = strategy_from_string(v.get<std::string>());
                    if (!has_strategy(c, s)) {
                        c.strategies.push_back(s);
                    }
                } catch (const std::invalid_argument& e) {
                    r.fail(e.what());
                }
            }
        }
        if (r.has("baselines")) {
            c.baselines.clear();
            for (const json& v : r.array("baselines", true)) {
                if (!v.is_string()) {
                    r.fail("baselines entries must be strings");
                }
                const std::string name = v.get<std::string>();
                const auto& known = known_baselines();
                if (std::find(known.begin(), known.end(), name) == known.end()) {
                    r.fail("unknown baseline '" + name + "'");
                }
                if (!has_baseline(c, name)) {
                    c.baselines.push_back(name);
                }
            }
        }
        if (r.has("training")) {
            c.training = parse_training(r.raw("training"));
        }
        if (r.has("estimator")) {
            c.stop = parse_estimator(r.raw("estimator"));
        }
        if (r.has("lmmse_noise")) {
            std::string n;
            r.string("lmmse_noise", n);
            if (n == "structured") {
                c.lmmse_noise = NoiseModel::Structured;
            } else if (n == "white") {
                c.lmmse_noise = NoiseModel::White;
            } else {
                r.fail("lmmse_noise must be structured or white");
            }
        }
        if (r.has("warm_start")) {
            Reader w(r.raw("warm_start"), "warm_start", {"mpnet", "upga"});
            w.string("mpnet", c.warm_mpnet);
            w.string("upga", c.warm_upga);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }

    const bool e2e = has_strategy(c, Strategy::E2eCold) || has_strategy(c, Strategy::E2eWarm);
    if (e2e && !c.precoding) {
        throw ConfigError("config: e2e strategies need a precoding section");
    }
    if (has_strategy(c, Strategy::E2eWarm) && !has_strategy(c, Strategy::LblSupervised) &&
        (c.warm_mpnet.empty() || c.warm_upga.empty())) {
        throw ConfigError("config: e2e-warm needs lbl-supervised in the run or warm_start checkpoints");
    }
    if (c.system.users > c.data.test || c.system.users > c.data.validation) {
        throw ConfigError("config: fewer test or validation channels than users");
    }
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path)
{
    std::string text;
    try {
        text = read_text(path);
    } catch (const IoError& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return parse_config(text);
}

std::string config_to_json(const ExperimentConfig& c)
{
    json j;
    j["seed"] = c.seed;
    j["output"] = c.output;
    j["system"] = {{"antennas", c.system.antennas},
                   {"rf_chains", c.system.rf_chains},
                   {"users", c.system.users},
                   {"grid_size", c.system.grid_size},
                   {"pga_iterations", c.system.pga_iterations},
                   {"carrier_hz", c.system.carrier_hz},
                   {"paths_max", c.system.paths_max},
                   {"position_std_wavelengths", c.system.position_std_wavelengths},
                   {"p_total", c.system.p_total}};
    j["data"] = {{"train", c.data.train},
                 {"validation", c.data.validation},
                 {"test", c.data.test},
                 {"paper_scale", c.data.paper_scale},
                 {"dir", c.data.dir}};
    j["snr_db"] = c.snr_db;
    j["frames"] = c.frames;
    if (c.precoding) {
        j["precoding"] = {{"snr_db", c.precoding->snr_db},
                          {"frames", c.precoding->frames},
                          {"test_episodes", c.precoding->test_episodes},
                          {"fixed_steps", c.precoding->fixed_steps}};
    } else {
        j["precoding"] = nullptr;
    }
    json strategies = json::array();
    for (Strategy s : c.strategies) {
        strategies.push_back(to_string(s));
    }
    j["strategies"] = strategies;
    j["baselines"] = c.baselines;
    const TrainingConfig& t = c.training;
    j["training"] = {{"mpnet_epochs", t.mpnet_epochs}, {"upga_epochs", t.upga_epochs},
                     {"e2e_epochs", t.e2e_epochs},     {"batch_size", t.batch_size},
                     {"streaming", t.streaming},       {"eval_every", t.eval_every},
                     {"lr_atoms", t.lr_atoms},         {"lr_positions", t.lr_positions},
                     {"lr_log_steps", t.lr_log_steps}, {"patience", t.patience},
                     {"loss_all_iterations", t.loss_all_iterations}};
    j["estimator"] = {{"stop", c.stop.mode == StopMode::ResidualThreshold ? "residual-threshold" : "fixed-depth"},
                      {"max_atoms", c.stop.max_atoms},
                      {"threshold_factor", c.stop.threshold_factor}};
    j["lmmse_noise"] = c.lmmse_noise == NoiseModel::Structured ? "structured" : "white";
    j["warm_start"] = {{"mpnet", c.warm_mpnet}, {"upga", c.warm_upga}};
    return j.dump(2) + "\n";
}

// ---- data -----------------------------------------------------------------------

namespace {

constexpr std::uint64_t kTagPerturb = 0x5045'5254ULL;
constexpr std::uint64_t kTagData = 0x4441'5441ULL;
constexpr std::uint64_t kTagMeas = 0x4D45'4153ULL;
constexpr std::uint64_t kTagNoise = 0x4E4F'4953ULL;
constexpr std::uint64_t kTagGroups = 0x4752'5053ULL;
constexpr std::uint64_t kTagTrain = 0x5452'4E53ULL;

std::uint64_t snr_tag(double snr_db) { return static_cast<std::uint64_t>(std::llround(snr_db * 1000.0) + (1LL << 40)); }

}  // namespace

DataBundle generate_data(const ExperimentConfig& cfg)
{
    const double lambda = wavelength_for(cfg.system.carrier_hz);
    const AntennaArray nominal = make_nominal_ula(cfg.system.antennas, lambda);
    const AntennaArray real =
        perturb_array(nominal, cfg.system.position_std_wavelengths, derive_seed(cfg.seed, {kTagPerturb}));
    auto make = [&](Eigen::Index n, std::uint64_t tag, const char* split) {
        return generate_channels(real, nominal, n, cfg.system.paths_max, GainProfile{},
                                 derive_seed(cfg.seed, {kTagData, tag}), split);
    };
    return DataBundle{make(cfg.data.train, 0, "train"), make(cfg.data.validation, 1, "validation"),
                      make(cfg.data.test, 2, "test")};
}

void save_data(const DataBundle& data, const std::filesystem::path& dir)
{
    save_dataset(data.train, dir / "train");
    save_dataset(data.validation, dir / "validation");
    save_dataset(data.test, dir / "test");
}

DataBundle load_data(const std::filesystem::path& dir)
{
    return DataBundle{load_dataset(dir / "train"), load_dataset(dir / "validation"), load_dataset(dir / "test")};
}

DataBundle obtain_data(const ExperimentConfig& cfg)
{
    if (!cfg.data.dir.empty()) {
        DataBundle d = load_data(cfg.data.dir);
        if (d.train.antennas() != cfg.system.antennas) {
            throw ConfigError("config: dataset antenna count differs from system.antennas");
        }
        return d;
    }
    return generate_data(cfg);
}

// ---- metrics --------------------------------------------------------------------

namespace {

std::string fmt(double v, const char* spec = "%.17g")
{
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

std::vector<std::string> split_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s, std::size_t line)
{
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) {
            throw std::invalid_argument(s);
        }
        return v;
    } catch (const std::exception&) {
        throw IoError("metrics CSV line " + std::to_string(line) + ": bad number '" + s + "'");
    }
}

}  // namespace

std::string MetricsTable::to_csv() const
{
    std::string out = std::string(kMetricsHeader) + "\n";
    for (const MetricRow& r : rows_) {
        if (r.method.find(',') != std::string::npos || r.metric.find(',') != std::string::npos) {
            throw IoError("metrics: names must not contain commas");
        }
        out += r.method + "," + fmt(r.snr_db) + "," + std::to_string(r.frames) + "," + std::to_string(r.rf_chains) +
               "," + r.axis + "," + fmt(r.x) + "," + r.metric + "," + fmt(r.value) + "\n";
    }
    return out;
}

void MetricsTable::write_csv(const std::filesystem::path& path) const
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    write_text(path, to_csv());
}

MetricsTable MetricsTable::parse_csv(const std::string& text)
{
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kMetricsHeader) {
        throw IoError("metrics CSV: missing or unexpected header");
    }
    MetricsTable t;
    std::size_t n = 1;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) {
            continue;
        }
        const auto f = split_line(line);
        if (f.size() != 8) {
            throw IoError("metrics CSV line " + std::to_string(n) + ": expected 8 fields");
        }
        MetricRow r;
        r.method = f[0];
        r.snr_db = parse_double(f[1], n);
        r.frames = static_cast<int>(parse_double(f[2], n));
        r.rf_chains = static_cast<int>(parse_double(f[3], n));
        r.axis = f[4];
        r.x = parse_double(f[5], n);
        r.metric = f[6];
        r.value = parse_double(f[7], n);
        t.add(std::move(r));
    }
    return t;
}

MetricsTable MetricsTable::read_csv(const std::filesystem::path& path) { return parse_csv(read_text(path)); }

std::optional<double> MetricsTable::find(const std::string& method, const std::string& metric, double snr_db,
                                         int frames, const std::string& axis, double x) const
{
    for (const MetricRow& r : rows_) {
        if (r.method == method && r.metric == metric && r.snr_db == snr_db && r.frames == frames && r.axis == axis &&
            r.x == x) {
            return r.value;
        }
    }
    return std::nullopt;
}

// ---- cells ----------------------------------------------------------------------

std::string cell_key(double snr_db, int frames) { return fmt(snr_db) + "dB-T" + std::to_string(frames); }

Cell make_cell(const ExperimentConfig& cfg, const DataBundle& data, double snr_db, int frames)
{
    Cell c;
    c.snr_db = snr_db;
    c.frames = frames;
    c.zeta2 = calibrate_zeta2(data.train, snr_db);
    c.meas = draw_measurement_matrix(cfg.system.antennas, cfg.system.rf_chains, frames,
                                     derive_seed(cfg.seed, {kTagMeas, static_cast<std::uint64_t>(frames)}));
    auto noise = [&](std::uint64_t split) {
        return derive_seed(cfg.seed, {kTagNoise, split, snr_tag(snr_db), static_cast<std::uint64_t>(frames)});
    };
    c.train = observe_uplink(data.train.channels, c.meas, c.zeta2, noise(0));
    c.validation = observe_uplink(data.validation.channels, c.meas, c.zeta2, noise(1));
    c.test = observe_uplink(data.test.channels, c.meas, c.zeta2, noise(2));
    return c;
}

TrainConfig train_config(const ExperimentConfig& cfg, Strategy strategy, double sigma2, int epochs)
{
    TrainConfig t;
    t.strategy = strategy;
    t.epochs = epochs;
    t.batch_size = cfg.training.batch_size;
    t.streaming = cfg.training.streaming;
    t.eval_every = cfg.training.eval_every;
    t.lr_atoms = cfg.training.lr_atoms;
    t.lr_positions = cfg.training.lr_positions;
    t.lr_log_steps = cfg.training.lr_log_steps;
    t.patience = cfg.training.patience;
    t.stop = cfg.stop;
    t.users = cfg.system.users;
    t.rf_chains = cfg.system.rf_chains;
    t.p_total = cfg.system.p_total;
    t.sigma2 = sigma2;
    t.loss_all_iterations = cfg.training.loss_all_iterations;
    t.seed = derive_seed(cfg.seed, {kTagTrain, static_cast<std::uint64_t>(strategy)});
    return t;
}

EstimatorRun train_estimator(const ExperimentConfig& cfg, const DataBundle& data, const Cell& cell, Strategy s)
{
    const TrainConfig tc = train_config(cfg, s, cell.zeta2, cfg.training.mpnet_epochs);
    const MpHoldout holdout{cell.validation, data.validation.channels};
    EstimatorRun run;
    if (s == Strategy::LblSupervised) {
        run.params = make_unconstrained_params(data.train.nominal_array, cfg.system.grid_size);
        run.report = train_mpnet_supervised(tc, run.params, data.train.channels, cell.train, &holdout);
    } else if (s == Strategy::LblUnsupervised) {
        run.params = make_constrained_params(data.train.nominal_array, cfg.system.grid_size);
        run.report = train_mpnet_unsupervised(tc, run.params, cell.train, &holdout);
    } else {
        throw std::invalid_argument("train_estimator: only layer-by-layer strategies train a standalone estimator");
    }
    return run;
}

CMat lmmse_for(const ExperimentConfig& cfg, const DataBundle& data, const Observation& obs)
{
    return lmmse_estimate(obs, make_lmmse_model(data.train.channels, obs.meas, obs.zeta2, cfg.lmmse_noise));
}

PrecodingGroups make_precoding_groups(const ExperimentConfig& cfg, const DataBundle& data)
{
    if (!cfg.precoding) {
        throw ConfigError("config: no precoding section");
    }
    return PrecodingGroups{
        make_groups(data.test.count(), cfg.system.users, cfg.precoding->test_episodes,
                    derive_seed(cfg.seed, {kTagGroups, 2})),
        make_groups(data.validation.count(), cfg.system.users, 1, derive_seed(cfg.seed, {kTagGroups, 1}))};
}

namespace {

PgaParams train_steps(const ExperimentConfig& cfg, const Cell& cell, const Grouping& val_groups, Strategy s,
                      const PgaData& train, PgaData validation, TrainReport& report)
{
    const TrainConfig tc = train_config(cfg, s, cell.zeta2, cfg.training.upga_epochs);
    PgaParams p = constant_step_params(cfg.system.pga_iterations);
    const PgaHoldout holdout{std::move(validation), val_groups};
    report = train_upga(tc, p, train, &holdout);
    return p;
}

}  // namespace

StrategyModels train_strategy(const ExperimentConfig& cfg, const DataBundle& data, const Cell& cell, Strategy s,
                              const EstimatorRun* estimator, const StrategyModels* warm_from)
{
    StrategyModels m;
    m.strategy = s;
    const PrecodingGroups groups = make_precoding_groups(cfg, data);
    if (s == Strategy::LblSupervised || s == Strategy::LblUnsupervised) {
        EstimatorRun est = estimator != nullptr ? *estimator : train_estimator(cfg, data, cell, s);
        m.mp = est.params;
        m.reports.emplace_back("mpnet", est.report);
        const CMat h_train = estimate_channels(cell.train, *m.mp, cfg.stop);
        const CMat h_val = estimate_channels(cell.validation, *m.mp, cfg.stop);
        TrainReport rep;
        if (s == Strategy::LblSupervised) {
            m.pga = train_steps(cfg, cell, groups.validation, s, PgaData{h_train, data.train.channels, CMat()},
                                PgaData{h_val, data.validation.channels, data.validation.channels}, rep);
        } else {
            m.pga = train_steps(cfg, cell, groups.validation, s, PgaData{h_train, h_train, CMat()},
                                PgaData{h_val, h_val, data.validation.channels}, rep);
        }
        m.reports.emplace_back("upga", rep);
        return m;
    }

    MpNetParams mp;
    PgaParams pga;
    if (s == Strategy::E2eCold) {
        mp = make_unconstrained_params(data.train.nominal_array, cfg.system.grid_size);
        pga = constant_step_params(cfg.system.pga_iterations);
    } else {
        if (warm_from != nullptr) {
            if (!warm_from->mp || !warm_from->pga) {
                throw std::invalid_argument("train_strategy: warm start needs both checkpoints");
            }
            mp = *warm_from->mp;
            pga = *warm_from->pga;
        } else {
            if (cfg.warm_mpnet.empty() || cfg.warm_upga.empty()) {
                throw ConfigError("e2e-warm: missing checkpoints");
            }
            mp = load_mpnet_checkpoint(cfg.warm_mpnet);
            pga = load_pga_checkpoint(cfg.warm_upga);
        }
        if (pga.iterations() != cfg.system.pga_iterations || mp.antennas() != cfg.system.antennas) {
            throw ConfigError("e2e-warm: checkpoint shapes differ from the system configuration");
        }
    }
    const TrainConfig tc = train_config(cfg, s, cell.zeta2, cfg.training.e2e_epochs);
    const E2eHoldout holdout{E2eData{cell.validation, data.validation.channels}, groups.validation};
    const TrainReport rep = train_e2e(tc, mp, pga, E2eData{cell.train, data.train.channels}, &holdout);
    m.mp = std::move(mp);
    m.pga = std::move(pga);
    m.reports.emplace_back("e2e", rep);
    return m;
}

void save_models(const StrategyModels& models, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    if (models.mp) {
        save_mpnet_checkpoint(*models.mp, dir / "mpnet");
    }
    if (models.pga) {
        save_pga_checkpoint(*models.pga, dir / "upga.json");
    }
    for (const auto& [name, rep] : models.reports) {
        write_report_csv(rep, dir / ("report-" + name + ".csv"));
    }
}

StrategyModels load_models(const std::filesystem::path& dir, Strategy s)
{
    StrategyModels m;
    m.strategy = s;
    if (std::filesystem::exists(dir / "mpnet.json")) {
        m.mp = load_mpnet_checkpoint(dir / "mpnet");
    }
    if (std::filesystem::exists(dir / "upga.json")) {
        m.pga = load_pga_checkpoint(dir / "upga.json");
    }
    if (!m.mp && !m.pga) {
        throw IoError("no checkpoints in " + dir.string());
    }
    return m;
}

// ---- evaluation -------------------------------------------------------------------

namespace {

struct NmseStats {
    double median = 0.0;
    double mean_db = 0.0;  // dB of the mean linear NMSE
};

NmseStats nmse_stats(const CMat& h_hat, const CMat& h)
{
    std::vector<double> db;
    double lin = 0.0;
    for (Eigen::Index i = 0; i < h.cols(); ++i) {
        db.push_back(nmse_db(h_hat.col(i), h.col(i)));
        lin += loss_supervised(h_hat.col(i), h.col(i));
    }
    std::sort(db.begin(), db.end());
    const std::size_t n = db.size();
    NmseStats s;
    s.median = n % 2 == 1 ? db[n / 2] : 0.5 * (db[n / 2 - 1] + db[n / 2]);
    s.mean_db = 10.0 * std::log10(std::max(lin / static_cast<double>(n), 1e-12));
    return s;
}

void add_nmse_rows(const ExperimentConfig& cfg, const Cell& cell, const std::string& method, const CMat& h_hat,
                   const CMat& h, RunResult& out)
{
    const NmseStats s = nmse_stats(h_hat, h);
    const int l = cfg.system.rf_chains;
    out.metrics.add({method, cell.snr_db, cell.frames, l, "none", 0.0, "nmse_db_median", s.median});
    out.metrics.add({method, cell.snr_db, cell.frames, l, "none", 0.0, "nmse_db_mean", s.mean_db});
    out.nmse_median[cell_key(cell.snr_db, cell.frames)][method] = s.median;
}

void add_rate_rows(const ExperimentConfig& cfg, const Cell& cell, const std::string& method, MethodRates rates,
                   RunResult& out)
{
    const int l = cfg.system.rf_chains;
    for (std::size_t k = 0; k < rates.per_iteration.size(); ++k) {
        out.metrics.add({method, cell.snr_db, cell.frames, l, "pga_iteration", static_cast<double>(k),
                         "sumrate_bits", rates.per_iteration[k]});
    }
    out.metrics.add({method, cell.snr_db, cell.frames, l, "none", 0.0, "sumrate_final_bits", rates.mean_final});
    out.rates[method] = std::move(rates);
}

// PGA from `input` on every test group, rates measured on the true channels.
MethodRates pga_rates(const ExperimentConfig& cfg, const Cell& cell, const PgaParams& params, const CMat& input,
                      const CMat& truth, const Grouping& groups)
{
    MethodRates r;
    r.per_iteration.assign(static_cast<std::size_t>(params.iterations()) + 1, 0.0);
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const CMat hi = gather(input, groups.groups[g]);
        const CMat ht = gather(truth, groups.groups[g]);
        const PgaTrace t = pga_forward(hi, params, cfg.system.rf_chains, cfg.system.p_total, cell.zeta2,
                                       groups.seeds[g], &ht);
        for (std::size_t k = 0; k < t.rates.size(); ++k) {
            r.per_iteration[k] += t.rates[k];
        }
        r.final_per_group.push_back(t.rates.back());
    }
    for (double& v : r.per_iteration) {
        v /= static_cast<double>(groups.size());
    }
    r.mean_final = r.per_iteration.back();
    return r;
}

}  // namespace

void add_nmse_baselines(const ExperimentConfig& cfg, const DataBundle& data, const Cell& cell, RunResult& out)
{
    const CMat& h = data.test.channels;
    if (has_baseline(cfg, "mp-real")) {
        add_nmse_rows(cfg, cell, "mp-real",
                      mp_baseline(cell.test, build_dictionary(data.test.real_array, cfg.system.grid_size).atoms, cfg.stop),
                      h, out);
    }
    if (has_baseline(cfg, "mp-nominal")) {
        add_nmse_rows(
            cfg, cell, "mp-nominal",
            mp_baseline(cell.test, build_dictionary(data.test.nominal_array, cfg.system.grid_size).atoms, cfg.stop), h,
            out);
    }
    if (has_baseline(cfg, "lmmse")) {
        add_nmse_rows(cfg, cell, "lmmse", lmmse_for(cfg, data, cell.test), h, out);
    }
}

void add_estimator_metrics(const ExperimentConfig& cfg, const DataBundle& data, const Cell& cell,
                           const std::string& method, const MpNetParams& params, const TrainReport* report,
                           RunResult& out)
{
    add_nmse_rows(cfg, cell, method, estimate_channels(cell.test, params, cfg.stop), data.test.channels, out);
    if (report != nullptr) {
        const int l = cfg.system.rf_chains;
        auto row = [&](const TrainRecord& r) {
            if (!std::isnan(r.nmse_db)) {
                out.metrics.add({method, cell.snr_db, cell.frames, l, "seen_channels", static_cast<double>(r.seen),
                                 "holdout_nmse_db", r.nmse_db});
            }
        };
        row(report->initial);
        for (const TrainRecord& r : report->epochs) {
            row(r);
        }
    }
}

void add_precoding_baselines(const ExperimentConfig& cfg, const DataBundle& data, const Cell& cell,
                             const PrecodingGroups& groups, RunResult& out)
{
    const CMat& h = data.test.channels;
    const int k = cfg.system.pga_iterations;
    if (has_baseline(cfg, "fully-digital")) {
        MethodRates r;
        double sum = 0.0;
        for (const auto& g : groups.test.groups) {
            const double v = fully_digital_bound(gather(h, g), cfg.system.p_total, cell.zeta2);
            r.final_per_group.push_back(v);
            sum += v;
        }
        r.mean_final = sum / static_cast<double>(groups.test.size());
        r.per_iteration.assign(static_cast<std::size_t>(k) + 1, r.mean_final);
        add_rate_rows(cfg, cell, "fully-digital", std::move(r), out);
    }
    if (has_baseline(cfg, "fixed-pga") && cfg.precoding) {
        for (double step : cfg.precoding->fixed_steps) {
            add_rate_rows(cfg, cell, "fixed-pga-" + fmt(step, "%g"),
                          pga_rates(cfg, cell, constant_step_params(k, step), h, h, groups.test), out);
        }
    }
    if (has_baseline(cfg, "upga-true")) {
        TrainReport rep;
        const PgaParams p =
            train_steps(cfg, cell, groups.validation, Strategy::LblSupervised,
                        PgaData{data.train.channels, data.train.channels, CMat()},
                        PgaData{data.validation.channels, data.validation.channels, data.validation.channels}, rep);
        add_rate_rows(cfg, cell, "upga-true", pga_rates(cfg, cell, p, h, h, groups.test), out);
        out.trainable["upga-true"] = static_cast<std::size_t>(p.mu.size());
    }
    if (has_baseline(cfg, "lmmse")) {
        TrainReport rep;
        const CMat ltrain = lmmse_for(cfg, data, cell.train);
        const CMat lval = lmmse_for(cfg, data, cell.validation);
        const PgaParams p =
            train_steps(cfg, cell, groups.validation, Strategy::LblSupervised,
                        PgaData{ltrain, data.train.channels, CMat()},
                        PgaData{lval, data.validation.channels, data.validation.channels}, rep);
        add_rate_rows(cfg, cell, "upga-lmmse", pga_rates(cfg, cell, p, lmmse_for(cfg, data, cell.test), h, groups.test),
                      out);
    }
}

void add_strategy_rates(const ExperimentConfig& cfg, const DataBundle& data, const Cell& cell,
                        const PrecodingGroups& groups, const StrategyModels& models, RunResult& out)
{
    if (!models.mp || !models.pga) {
        throw std::invalid_argument("add_strategy_rates: strategy needs an estimator and step sizes");
    }
    const CMat h_hat = estimate_channels(cell.test, *models.mp, cfg.stop);
    add_rate_rows(cfg, cell, to_string(models.strategy),
                  pga_rates(cfg, cell, *models.pga, h_hat, data.test.channels, groups.test), out);
    out.trainable[to_string(models.strategy)] = pipeline_trainable_count(*models.mp, *models.pga);
    out.metrics.add({to_string(models.strategy), cell.snr_db, cell.frames, cfg.system.rf_chains, "none", 0.0,
                     "trainable_params", static_cast<double>(pipeline_trainable_count(*models.mp, *models.pga))});
}

// ---- full run -----------------------------------------------------------------------

namespace {

void write_group_rates(const RunResult& r, const std::filesystem::path& path)
{
    std::string out = "method,group,rate_bits\n";
    for (const auto& [method, rates] : r.rates) {
        for (std::size_t g = 0; g < rates.final_per_group.size(); ++g) {
            out += method + "," + std::to_string(g) + "," + fmt(rates.final_per_group[g]) + "\n";
        }
    }
    write_text(path, out);
}

void write_summary(const RunResult& r, const std::filesystem::path& path)
{
    json j;
    j["nmse_db_median"] = json::object();
    for (const auto& [cell, methods] : r.nmse_median) {
        for (const auto& [m, v] : methods) {
            j["nmse_db_median"][cell][m] = v;
        }
    }
    j["sumrate_final_bits"] = json::object();
    for (const auto& [m, rates] : r.rates) {
        j["sumrate_final_bits"][m] = rates.mean_final;
    }
    j["trainable_params"] = json::object();
    for (const auto& [m, n] : r.trainable) {
        j["trainable_params"][m] = n;
    }
    write_text(path, j.dump(2) + "\n");
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg, const DataBundle& data, const std::filesystem::path& out)
{
    RunResult result;
    const bool write = !out.empty();
    if (write) {
        std::filesystem::create_directories(out);
        ExperimentConfig resolved = cfg;
        resolved.output = out.string();
        write_text(out / "config.json", config_to_json(resolved));
    }
    auto save = [&](const std::string& cell, const StrategyModels& m) {
        if (write) {
            save_models(m, out / "checkpoints" / cell / to_string(m.strategy));
        }
    };

    std::map<std::string, std::map<Strategy, EstimatorRun>> estimators;
    for (double snr : cfg.snr_db) {
        for (int t : cfg.frames) {
            const Cell cell = make_cell(cfg, data, snr, t);
            add_nmse_baselines(cfg, data, cell, result);
            for (Strategy s : {Strategy::LblSupervised, Strategy::LblUnsupervised}) {
                if (!has_strategy(cfg, s)) {
                    continue;
                }
                EstimatorRun run = train_estimator(cfg, data, cell, s);
                add_estimator_metrics(cfg, data, cell, to_string(s), run.params, &run.report, result);
                result.trainable[std::string(to_string(s)) + "-mpnet"] = run.params.trainable_count();
                if (write) {
                    const auto dir = out / "checkpoints" / cell_key(snr, t) / to_string(s);
                    save_mpnet_checkpoint(run.params, dir / "mpnet");
                    write_report_csv(run.report, dir / "report-mpnet.csv");
                }
                estimators[cell_key(snr, t)].emplace(s, std::move(run));
            }
        }
    }

    if (cfg.precoding) {
        const PrecodingConfig& pc = *cfg.precoding;
        const std::string key = cell_key(pc.snr_db, pc.frames);
        const Cell cell = make_cell(cfg, data, pc.snr_db, pc.frames);
        const PrecodingGroups groups = make_precoding_groups(cfg, data);
        add_precoding_baselines(cfg, data, cell, groups, result);

        std::optional<StrategyModels> lbl_sup;
        for (Strategy s : {Strategy::LblSupervised, Strategy::LblUnsupervised, Strategy::E2eCold, Strategy::E2eWarm}) {
            if (!has_strategy(cfg, s)) {
                continue;
            }
            const EstimatorRun* est = nullptr;
            if (auto it = estimators.find(key); it != estimators.end()) {
                if (auto e = it->second.find(s); e != it->second.end()) {
                    est = &e->second;
                }
            }
            StrategyModels m = train_strategy(cfg, data, cell, s, est, lbl_sup ? &*lbl_sup : nullptr);
            if (s == Strategy::E2eCold || s == Strategy::E2eWarm) {
                add_estimator_metrics(cfg, data, cell, to_string(s), *m.mp, nullptr, result);
            }
            add_strategy_rates(cfg, data, cell, groups, m, result);
            save(key, m);
            if (s == Strategy::LblSupervised) {
                lbl_sup = std::move(m);
            }
        }
    }

    if (write) {
        result.metrics.write_csv(out / "metrics.csv");
        write_group_rates(result, out / "group_rates.csv");
        write_summary(result, out / "summary.json");
        for (PlotKind k : {PlotKind::NmseCurve, PlotKind::SumratePerIteration}) {
            try {
                write_plot(result.metrics, k, out / "figures" / (std::string(to_string(k)) + ".svg"));
            } catch (const std::invalid_argument&) {
                // nothing of this family was run
            }
        }
    }
    return result;
}

}  // namespace unfold
