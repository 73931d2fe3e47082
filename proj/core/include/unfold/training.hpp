// SPDX-License-Identifier: Apache-2.0
//
// Seeded Adam training of the estimator dictionary, the PGA step sizes, and
// the composed pipeline.

#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "unfold/mpnet.hpp"
#include "unfold/numerics.hpp"
#include "unfold/sounding.hpp"
#include "unfold/upga.hpp"

namespace unfold {

enum class Strategy { LblSupervised, LblUnsupervised, E2eCold, E2eWarm };

const char* to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

/// Thrown when the monitored loss stays above the divergence limit.
class DivergenceError : public NumericError {
public:
    using NumericError::NumericError;
};

class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    /// `grad` follows the tape convention: dL/dx for real parameters,
    /// dL/d conj(z) for complex ones (real and imaginary parts move along 2G).
    void step(CMat& value, const CMat& grad, bool real);
    int steps() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    int t_ = 0;
    RMat m_re_, m_im_, v_re_, v_im_;
};

struct TrainConfig {
    Strategy strategy = Strategy::LblSupervised;
    int epochs = 20;
    int batch_size = 64;        // channels per step; groups of `users` for precoding
    bool streaming = false;     // one step per incoming channel
    int eval_every = 250;       // streaming: channels between held-out evaluations
    std::size_t max_seen = 0;   // stop after this many training channels (0 = no limit)
    double lr_atoms = 1e-3;
    double lr_positions = 1e-4;
    double lr_log_steps = 5e-2;
    int patience = 10;
    double divergence_factor = 10.0;
    int divergence_epochs = 3;
    StopRule stop;
    int users = 4;
    int rf_chains = 16;
    double p_total = 4.0;
    double sigma2 = 0.0;         // downlink noise; set equal to zeta^2
    bool loss_all_iterations = false;
    std::uint64_t seed = 0;
};

void validate(const TrainConfig& cfg);

inline constexpr double kNotAvailable = std::numeric_limits<double>::quiet_NaN();

struct TrainRecord {
    int epoch = 0;
    std::size_t seen = 0;
    double train_loss = kNotAvailable;
    double holdout_loss = kNotAvailable;
    double nmse_db = kNotAvailable;       // median over held-out channels
    double sumrate_bits = kNotAvailable;  // mean over held-out groups
    double seconds = 0.0;
};

struct TrainReport {
    TrainRecord initial;               // before the first step
    std::vector<TrainRecord> epochs;   // one per epoch (or evaluation interval when streaming)
    int best_epoch = 0;                // 0 = initial parameters kept
    bool early_stopped = false;
    std::size_t trainable_count = 0;
};

/// CSV with header epoch,seen,loss,holdout_loss,nmse_db,sumrate_bits,seconds.
void write_report_csv(const TrainReport& report, const std::filesystem::path& path);

/// Users grouped by random draws without replacement: each episode is a fresh
/// permutation cut into floor(count / users) groups. Seeds feed init_precoders.
struct Grouping {
    std::vector<std::vector<Eigen::Index>> groups;
    std::vector<std::uint64_t> seeds;

    std::size_t size() const { return groups.size(); }
};

Grouping make_groups(Eigen::Index count, int users, int episodes, std::uint64_t seed);

/// Gathers columns of `m`.
CMat gather(const CMat& m, const std::vector<Eigen::Index>& cols);

// ---- estimator ------------------------------------------------------------------

/// Held-out data for the estimator. `channels` may be empty; it only feeds the
/// NMSE metric, never the loss of the unsupervised path.
struct MpHoldout {
    Observation obs;
    CMat channels;
};

TrainReport train_mpnet_supervised(const TrainConfig& cfg, MpNetParams& params, const CMat& channels,
                                   const Observation& obs, const MpHoldout* holdout = nullptr);

/// Receives only the observations and M.
TrainReport train_mpnet_unsupervised(const TrainConfig& cfg, MpNetParams& params, const Observation& obs,
                                     const MpHoldout* holdout = nullptr);

// ---- step sizes -----------------------------------------------------------------

/// Column-aligned precoding data: PGA runs on `input`, the loss is the rate on
/// `target`, and held-out metrics use `truth` when not empty.
struct PgaData {
    CMat input;
    CMat target;
    CMat truth;
};

struct PgaHoldout {
    PgaData data;
    Grouping groups;
};

/// Optimizes log mu; mu stays positive.
TrainReport train_upga(const TrainConfig& cfg, PgaParams& params, const PgaData& train,
                       const PgaHoldout* holdout = nullptr);

/// Mean final rate (bits) over `groups`, measured on `eval` (PGA runs on `input`).
double mean_group_rate(const PgaParams& params, const CMat& input, const CMat& eval, const Grouping& groups,
                       const TrainConfig& cfg);

// ---- end to end -----------------------------------------------------------------

struct E2eData {
    Observation obs;  // column i observes channels.col(i)
    CMat channels;
};

struct E2eHoldout {
    E2eData data;
    Grouping groups;
};

/// Joint minimization of -R(H) through estimation and precoding. Cold and warm
/// starts differ only in the parameters passed in.
TrainReport train_e2e(const TrainConfig& cfg, MpNetParams& mp, PgaParams& pga, const E2eData& train,
                      const E2eHoldout* holdout = nullptr);

/// Trainable reals of the composed pipeline: estimator + 2K.
std::size_t pipeline_trainable_count(const MpNetParams& mp, const PgaParams& pga);

}  // namespace unfold
