// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "unfold/experiment.hpp"
#include "unfold/io.hpp"

using namespace unfold;
using namespace testing_support;

namespace {

const char* kTiny = R"({
  "seed": 5,
  "system": {"antennas": 16, "rf_chains": 4, "users": 2, "grid_size": 64, "pga_iterations": 4},
  "data": {"train": 120, "validation": 20, "test": 40},
  "snr_db": [15], "frames": [2],
  "precoding": {"snr_db": 15, "frames": 2, "test_episodes": 1, "fixed_steps": [0.01]},
  "strategies": [],
  "training": {"mpnet_epochs": 1, "upga_epochs": 1, "e2e_epochs": 1, "batch_size": 16}
})";

}  // namespace

TEST(Experiment, EmptyConfigGivesTheDefaults)
{
    const ExperimentConfig c = parse_config("{}");
    EXPECT_EQ(c.system.antennas, 64);
    EXPECT_EQ(c.system.rf_chains, 16);
    EXPECT_EQ(c.system.users, 4);
    EXPECT_EQ(c.system.grid_size, 1200);
    EXPECT_EQ(c.system.pga_iterations, 10);
    EXPECT_EQ(c.system.p_total, 4.0);
    EXPECT_EQ(c.data.train, 3000);
    EXPECT_EQ(c.data.test, 300);
    EXPECT_EQ(c.snr_db, (std::vector<double>{5.0, 15.0}));
    EXPECT_EQ(c.frames, (std::vector<int>{1, 2, 3}));
    EXPECT_EQ(c.strategies.size(), 4u);
    EXPECT_TRUE(c.precoding.has_value());
}

TEST(Experiment, PowerFollowsTheUserCountUnlessSet)
{
    EXPECT_EQ(parse_config(R"({"system": {"users": 3, "rf_chains": 8}})").system.p_total, 3.0);
    EXPECT_EQ(parse_config(R"({"system": {"users": 3, "p_total": 2.5}})").system.p_total, 2.5);
}

TEST(Experiment, PaperScaleCounts)
{
    const ExperimentConfig c = parse_config(R"({"data": {"paper_scale": true}})");
    EXPECT_EQ(c.data.train, 30000);
    EXPECT_EQ(c.data.validation, 1000);
    EXPECT_EQ(c.data.test, 1000);
}

TEST(Experiment, InvalidConfigsAreRejected)
{
    for (const char* bad : {
             R"({"sed": 1})",
             R"({"system": {"antenas": 64}})",
             R"({"system": {"antennas": "64"}})",
             R"({"system": {"antennas": 8, "rf_chains": 16}})",
             R"({"data": {"train": 0}})",
             R"({"snr_db": 15})",
             R"({"frames": [0]})",
             R"({"strategies": ["e2e"]})",
             R"({"baselines": ["omp"]})",
             R"({"precoding": null})",
             R"({"strategies": ["e2e-warm"]})",
             R"({"estimator": {"stop": "sometimes"}})",
             R"([1, 2])",
             R"({"seed": )",
         }) {
        EXPECT_THROW(parse_config(bad), ConfigError) << bad;
    }
    EXPECT_NO_THROW(parse_config(R"({"precoding": null, "strategies": ["lbl-supervised"]})"));
    EXPECT_THROW(load_config(temp_dir("cfg") / "absent.json"), std::exception);
}

TEST(Experiment, ResolvedConfigRoundTrips)
{
    const ExperimentConfig c = parse_config(kTiny);
    const std::string once = config_to_json(c);
    EXPECT_EQ(config_to_json(parse_config(once)), once);
    EXPECT_EQ(config_to_json(parse_config(config_to_json(ExperimentConfig{}))), config_to_json(ExperimentConfig{}));
}

TEST(Experiment, MetricsCsvRoundTripIsExact)
{
    MetricsTable t;
    t.add({"mp-real", 15.0, 2, 16, "none", 0.0, "nmse_db_median", -16.123456789012345});
    t.add({"lbl-supervised", 5.0, 1, 16, "pga_iteration", 3.0, "sumrate_bits", 1.0 / 3.0});
    const std::string csv = t.to_csv();
    EXPECT_EQ(csv.substr(0, csv.find('\n')), kMetricsHeader);
    const MetricsTable back = MetricsTable::parse_csv(csv);
    EXPECT_EQ(back.to_csv(), csv);
    EXPECT_EQ(*back.find("lbl-supervised", "sumrate_bits", 5.0, 1, "pga_iteration", 3.0), 1.0 / 3.0);
    EXPECT_FALSE(back.find("lbl-supervised", "sumrate_bits", 5.0, 2, "pga_iteration", 3.0).has_value());
    EXPECT_THROW(MetricsTable::parse_csv("a,b\n"), IoError);
    EXPECT_THROW(MetricsTable::parse_csv(std::string(kMetricsHeader) + "\nx,1,2\n"), IoError);
}

TEST(Experiment, DataGenerationIsSeededAndSaved)
{
    const ExperimentConfig c = parse_config(kTiny);
    const DataBundle a = generate_data(c);
    EXPECT_EQ(a.train.channels.cols(), 120);
    EXPECT_EQ(a.validation.channels.cols(), 20);
    EXPECT_EQ(a.test.channels.cols(), 40);
    EXPECT_GT(max_abs_diff(a.train.channels.leftCols(20), a.validation.channels), 0.0);
    // every split sees the same physical array
    EXPECT_EQ((a.train.real_array.positions() - a.test.real_array.positions()).norm(), 0.0);

    const auto dir = temp_dir("bundle");
    save_data(a, dir);
    const DataBundle b = load_data(dir);
    EXPECT_EQ(max_abs_diff(a.test.channels, b.test.channels), 0.0);
    EXPECT_EQ(max_abs_diff(generate_data(c).train.channels, a.train.channels), 0.0);
}

TEST(Experiment, PrecodingGroupsCoverEveryEpisode)
{
    ExperimentConfig c = parse_config(kTiny);
    c.precoding->test_episodes = 3;
    const PrecodingGroups g = make_precoding_groups(c, generate_data(c));
    EXPECT_EQ(g.test.size(), 3u * 20u);
    EXPECT_EQ(g.validation.size(), 10u);
}

TEST(Experiment, BaselinesOnlyRunWritesConsistentOutputs)
{
    const ExperimentConfig c = parse_config(kTiny);
    const auto out = temp_dir("run");
    const RunResult r = run_experiment(c, generate_data(c), out);
    for (const char* f : {"config.json", "metrics.csv", "summary.json", "group_rates.csv"}) {
        EXPECT_TRUE(std::filesystem::exists(out / f)) << f;
    }
    EXPECT_TRUE(std::filesystem::exists(out / "figures" / "sumrate-per-iteration.svg"));

    const MetricsTable t = MetricsTable::read_csv(out / "metrics.csv");
    const double real = *t.find("mp-real", "nmse_db_median", 15.0, 2);
    const double nominal = *t.find("mp-nominal", "nmse_db_median", 15.0, 2);
    EXPECT_LT(real, nominal);
    EXPECT_TRUE(t.find("lmmse", "nmse_db_median", 15.0, 2).has_value());

    const double fd = r.rates.at("fully-digital").mean_final;
    const double upga = r.rates.at("upga-true").mean_final;
    EXPECT_GE(fd, upga);
    for (std::size_t g = 0; g < r.rates.at("upga-true").final_per_group.size(); ++g) {
        EXPECT_GE(r.rates.at("fully-digital").final_per_group[g] + 1e-9, r.rates.at("upga-true").final_per_group[g]);
    }
    ExperimentConfig recorded = c;
    recorded.output = out.string();
    EXPECT_EQ(config_to_json(load_config(out / "config.json")), config_to_json(recorded));
}

TEST(Experiment, SameSeedSameBytes)
{
    ExperimentConfig c = parse_config(kTiny);
    c.strategies = {Strategy::LblUnsupervised};
    c.baselines = {"mp-nominal"};
    const auto a = temp_dir("same-a"), b = temp_dir("same-b");
    run_experiment(c, generate_data(c), a);
    run_experiment(c, generate_data(c), b);
    const std::string x = read_text(a / "metrics.csv"), y = read_text(b / "metrics.csv");
    EXPECT_EQ(sha256_hex(x.data(), x.size()), sha256_hex(y.data(), y.size()));
    c.seed = 6;
    const auto d = temp_dir("same-c");
    run_experiment(c, generate_data(c), d);
    EXPECT_NE(read_text(a / "metrics.csv"), read_text(d / "metrics.csv"));
}
