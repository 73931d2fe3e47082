// SPDX-License-Identifier: Apache-2.0

#include "unfold/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <stdexcept>

#include "unfold/io.hpp"
#include "unfold/rng.hpp"

namespace unfold {

const char* to_string(Strategy s)
{
    switch (s) {
    case Strategy::LblSupervised:
        return "lbl-supervised";
    case Strategy::LblUnsupervised:
        return "lbl-unsupervised";
    case Strategy::E2eCold:
        return "e2e-cold";
    case Strategy::E2eWarm:
        return "e2e-warm";
    }
    return "?";
}

Strategy strategy_from_string(const std::string& s)
{
    for (Strategy v : {Strategy::LblSupervised, Strategy::LblUnsupervised, Strategy::E2eCold, Strategy::E2eWarm}) {
        if (s == to_string(v)) {
            return v;
        }
    }
    throw std::invalid_argument("unknown training strategy '" + s + "'");
}

// ---- Adam -------------------------------------------------------------------------

Adam::Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps)
{
    if (!(lr >= 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(eps > 0.0)) {
        throw std::invalid_argument("Adam: invalid hyperparameters");
    }
}

namespace {

void adam_moments(RMat& m, RMat& v, const RMat& g, double b1, double b2)
{
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseAbs2();
}

RMat adam_update(const RMat& m, const RMat& v, double lr, double c1, double c2, double eps)
{
    return (lr * (m / c1).array() / ((v / c2).array().sqrt() + eps)).matrix();
}

}  // namespace

void Adam::step(CMat& value, const CMat& grad, bool real)
{
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
        throw DimensionError("Adam::step: gradient shape mismatch");
    }
    if (t_ == 0) {
        m_re_ = v_re_ = RMat::Zero(value.rows(), value.cols());
        if (!real) {
            m_im_ = v_im_ = RMat::Zero(value.rows(), value.cols());
        }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    if (real) {
        adam_moments(m_re_, v_re_, grad.real(), beta1_, beta2_);
        value.real() -= adam_update(m_re_, v_re_, lr_, c1, c2, eps_);
        return;
    }
    adam_moments(m_re_, v_re_, 2.0 * grad.real(), beta1_, beta2_);
    adam_moments(m_im_, v_im_, 2.0 * grad.imag(), beta1_, beta2_);
    value.real() -= adam_update(m_re_, v_re_, lr_, c1, c2, eps_);
    value.imag() -= adam_update(m_im_, v_im_, lr_, c1, c2, eps_);
}

// ---- config, reports, grouping ---------------------------------------------------------

void validate(const TrainConfig& cfg)
{
    if (cfg.epochs < 1 || cfg.batch_size < 1 || cfg.eval_every < 1 || cfg.patience < 1) {
        throw std::invalid_argument("TrainConfig: epochs, batch_size, eval_every and patience must be >= 1");
    }
    for (double lr : {cfg.lr_atoms, cfg.lr_positions, cfg.lr_log_steps}) {
        if (!(lr >= 0.0) || !std::isfinite(lr)) {
            throw std::invalid_argument("TrainConfig: learning rates must be finite and >= 0");
        }
    }
    if (!(cfg.divergence_factor > 1.0) || cfg.divergence_epochs < 1) {
        throw std::invalid_argument("TrainConfig: invalid divergence detection settings");
    }
    if (cfg.users < 1 || cfg.rf_chains < 1 || !(cfg.p_total > 0.0)) {
        throw std::invalid_argument("TrainConfig: users, rf_chains and p_total must be positive");
    }
    validate(cfg.stop);
}

void write_report_csv(const TrainReport& report, const std::filesystem::path& path)
{
    std::string out = "epoch,seen,loss,holdout_loss,nmse_db,sumrate_bits,seconds\n";
    auto num = [](double v) {
        if (std::isnan(v)) {
            return std::string();
        }
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    auto row = [&](const TrainRecord& r) {
        out += std::to_string(r.epoch) + "," + std::to_string(r.seen) + "," + num(r.train_loss) + "," +
               num(r.holdout_loss) + "," + num(r.nmse_db) + "," + num(r.sumrate_bits) + "," + num(r.seconds) + "\n";
    };
    row(report.initial);
    for (const TrainRecord& r : report.epochs) {
        row(r);
    }
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    write_text(path, out);
}

Grouping make_groups(Eigen::Index count, int users, int episodes, std::uint64_t seed)
{
    if (users < 1 || episodes < 1 || count < users) {
        throw std::invalid_argument("make_groups: need 1 <= users <= count and episodes >= 1");
    }
    Grouping g;
    for (int e = 0; e < episodes; ++e) {
        std::vector<Eigen::Index> perm(static_cast<std::size_t>(count));
        std::iota(perm.begin(), perm.end(), Eigen::Index{0});
        Rng rng(derive_seed(seed, {0x4752'5550ULL, static_cast<std::uint64_t>(e)}));
        std::shuffle(perm.begin(), perm.end(), rng);
        for (Eigen::Index k = 0; k + users <= count; k += users) {
            g.groups.emplace_back(perm.begin() + k, perm.begin() + k + users);
            g.seeds.push_back(derive_seed(seed, {0x494E'4954ULL, static_cast<std::uint64_t>(e),
                                                 static_cast<std::uint64_t>(k / users)}));
        }
    }
    return g;
}

CMat gather(const CMat& m, const std::vector<Eigen::Index>& cols)
{
    CMat out(m.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) {
        if (cols[k] < 0 || cols[k] >= m.cols()) {
            throw DimensionError("gather: column index out of range");
        }
        out.col(static_cast<Eigen::Index>(k)) = m.col(cols[k]);
    }
    return out;
}

std::size_t pipeline_trainable_count(const MpNetParams& mp, const PgaParams& pga)
{
    return mp.trainable_count() + static_cast<std::size_t>(pga.mu.size());
}

namespace {

using Clock = std::chrono::steady_clock;

std::vector<Eigen::Index> permutation(Eigen::Index count, std::uint64_t seed, int epoch)
{
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(count));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    Rng rng(derive_seed(seed, {0x5045'524DULL, static_cast<std::uint64_t>(epoch)}));
    std::shuffle(perm.begin(), perm.end(), rng);
    return perm;
}

double median(std::vector<double> v)
{
    if (v.empty()) {
        return kNotAvailable;
    }
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double median_nmse_db(const CMat& h_hat, const CMat& h)
{
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(h.cols()));
    for (Eigen::Index i = 0; i < h.cols(); ++i) {
        v.push_back(nmse_db(h_hat.col(i), h.col(i)));
    }
    return median(std::move(v));
}

// Early stopping and divergence bookkeeping shared by the three trainers.
template <typename Snapshot>
class Monitor {
public:
    Monitor(const TrainConfig& cfg, double initial, Snapshot snapshot)
        : cfg_(cfg), initial_(initial), best_(initial), best_snapshot_(std::move(snapshot))
    {
        if (!std::isfinite(initial)) {
            throw NumericError("training: non-finite initial loss");
        }
    }

    // Returns true when training should stop.
    bool update(int epoch, double loss, const Snapshot& snapshot)
    {
        if (!std::isfinite(loss)) {
            throw NumericError("training: non-finite loss at epoch " + std::to_string(epoch));
        }
        const double limit = initial_ + (cfg_.divergence_factor - 1.0) * std::abs(initial_);
        above_ = loss > limit ? above_ + 1 : 0;
        if (above_ >= cfg_.divergence_epochs) {
            throw DivergenceError("training diverged: loss above " + std::to_string(cfg_.divergence_factor) +
                                  "x its initial value for " + std::to_string(above_) + " consecutive epochs");
        }
        if (loss < best_) {
            best_ = loss;
            best_epoch_ = epoch;
            best_snapshot_ = snapshot;
            stale_ = 0;
            return false;
        }
        return ++stale_ >= cfg_.patience;
    }

    int best_epoch() const { return best_epoch_; }
    const Snapshot& best() const { return best_snapshot_; }

private:
    const TrainConfig& cfg_;
    double initial_;
    double best_;
    int best_epoch_ = 0;
    int above_ = 0;
    int stale_ = 0;
    Snapshot best_snapshot_;
};

// Batches of column indices for one epoch; streaming uses single channels.
std::vector<std::vector<Eigen::Index>> epoch_batches(const std::vector<Eigen::Index>& order, std::size_t batch)
{
    std::vector<std::vector<Eigen::Index>> out;
    for (std::size_t k = 0; k < order.size(); k += batch) {
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(k),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), k + batch)));
    }
    return out;
}

// Drives epochs or streaming intervals: `step` consumes a batch and returns its
// (loss sum, weight); `evaluate` fills the held-out fields of a record and
// returns the monitored loss.
template <typename Snapshot, typename Step, typename Evaluate, typename Take, typename Restore>
TrainReport drive(const TrainConfig& cfg, Eigen::Index units, std::size_t unit_channels, std::size_t batch_units,
                  Step step, Evaluate evaluate, Take take, Restore restore)
{
    const auto t0 = Clock::now();
    TrainReport report;
    report.initial.epoch = 0;
    const double initial = evaluate(report.initial);
    report.initial.seconds = 0.0;
    Monitor<Snapshot> monitor(cfg, initial, take());

    std::size_t seen = 0;
    double loss_sum = 0.0;
    double loss_weight = 0.0;
    std::size_t since_eval = 0;
    bool stop = false;
    int record_index = 0;

    auto close_record = [&]() {
        TrainRecord rec;
        rec.epoch = ++record_index;
        rec.seen = seen;
        rec.train_loss = loss_weight > 0.0 ? loss_sum / loss_weight : kNotAvailable;
        const double monitored = evaluate(rec);
        rec.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
        report.epochs.push_back(rec);
        loss_sum = loss_weight = 0.0;
        since_eval = 0;
        return monitor.update(rec.epoch, monitored, take());
    };

    const std::size_t batch = cfg.streaming ? 1 : batch_units;
    for (int epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
        const auto order = permutation(units, cfg.seed, epoch);
        for (const auto& b : epoch_batches(order, batch)) {
            if (cfg.max_seen > 0 && seen >= cfg.max_seen) {
                stop = true;
                break;
            }
            const auto [ls, w] = step(b, epoch);
            if (!std::isfinite(ls)) {
                throw NumericError("training: non-finite batch loss");
            }
            loss_sum += ls;
            loss_weight += w;
            seen += b.size() * unit_channels;
            since_eval += b.size() * unit_channels;
            if (cfg.streaming && since_eval >= static_cast<std::size_t>(cfg.eval_every)) {
                if (close_record()) {
                    report.early_stopped = true;
                    stop = true;
                    break;
                }
            }
        }
        if (!cfg.streaming && !stop) {
            if (close_record()) {
                report.early_stopped = true;
                stop = true;
            }
        }
    }
    if (since_eval > 0) {
        close_record();
    }
    report.best_epoch = monitor.best_epoch();
    restore(monitor.best());
    return report;
}

void require_obs(const Observation& obs, Eigen::Index antennas)
{
    if (obs.meas.antennas() != antennas || obs.y.rows() != obs.meas.measurements()) {
        throw DimensionError("training: observation and parameter shapes disagree");
    }
}

double lr_for(const ad::ParamEntry& e, const TrainConfig& cfg)
{
    return e.name == "positions_x" ? cfg.lr_positions : cfg.lr_atoms;
}

TrainReport train_mpnet_impl(const TrainConfig& cfg, MpNetParams& params, const CMat* channels,
                             const Observation& obs, const MpHoldout* holdout)
{
    validate(cfg);
    require_obs(obs, params.antennas());
    if (channels != nullptr && (channels->cols() != obs.y.cols() || channels->rows() != params.antennas())) {
        throw DimensionError("train_mpnet: channels and observations disagree");
    }
    if (holdout != nullptr) {
        require_obs(holdout->obs, params.antennas());
    }
    const bool supervised = channels != nullptr;
    ad::ParamSet set = mpnet_param_set(params);
    std::vector<Adam> opt;
    for (const auto& e : set.entries()) {
        opt.emplace_back(lr_for(e, cfg));
    }
    const double noise = expected_noise_energy(obs.meas, obs.zeta2);

    auto step = [&](const std::vector<Eigen::Index>& cols, int) -> std::pair<double, double> {
        const CMat d = materialize_dictionary(params).atoms;
        const CMat g = obs.meas.m * d;
        const RVec g2 = g.colwise().squaredNorm().transpose();
        const CMat y = gather(obs.y, cols);
        std::vector<std::vector<Eigen::Index>> supports;
        for (Eigen::Index u = 0; u < y.cols(); ++u) {
            supports.push_back(matching_pursuit(d, g, g2, y.col(u), cfg.stop, noise).support);
        }
        const CMat h = supervised ? gather(*channels, cols) : CMat();
        const ad::LossFn fn = [&](ad::Tape& tape, const std::vector<ad::Var>& leaves) {
            const ad::Var dict = dictionary_node(tape, params, leaves[0]);
            const ad::Var h_hat = estimate_replay(tape, dict, y, obs.meas, supports);
            return supervised ? loss_supervised(h_hat, h) : loss_unsupervised(h_hat, y, obs.meas.m);
        };
        const ad::GradResult r = ad::backprop(fn, set);
        for (std::size_t i = 0; i < set.size(); ++i) {
            opt[i].step(set.entries()[i].value, r.grads[i], set.entries()[i].real);
        }
        assign_param_set(params, set);
        return {r.value * static_cast<double>(cols.size()), static_cast<double>(cols.size())};
    };

    auto evaluate = [&](TrainRecord& rec) {
        if (holdout == nullptr) {
            const CMat h_hat = estimate_channels(obs, params, cfg.stop);
            const double l = supervised ? loss_supervised(h_hat, *channels) : loss_unsupervised(h_hat, obs.y, obs.meas.m);
            rec.holdout_loss = kNotAvailable;
            return l;
        }
        const CMat h_hat = estimate_channels(holdout->obs, params, cfg.stop);
        const bool have_truth = holdout->channels.size() > 0;
        if (supervised && !have_truth) {
            throw std::invalid_argument("train_mpnet_supervised: held-out set needs channels");
        }
        rec.holdout_loss = supervised ? loss_supervised(h_hat, holdout->channels)
                                      : loss_unsupervised(h_hat, holdout->obs.y, holdout->obs.meas.m);
        if (have_truth) {
            rec.nmse_db = median_nmse_db(h_hat, holdout->channels);
        }
        return rec.holdout_loss;
    };

    TrainReport report = drive<ad::ParamSet>(
        cfg, obs.y.cols(), 1, static_cast<std::size_t>(cfg.batch_size), step, evaluate, [&] { return set; },
        [&](const ad::ParamSet& best) {
            set = best;
            assign_param_set(params, set);
        });
    report.trainable_count = params.trainable_count();
    return report;
}

}  // namespace

TrainReport train_mpnet_supervised(const TrainConfig& cfg, MpNetParams& params, const CMat& channels,
                                   const Observation& obs, const MpHoldout* holdout)
{
    return train_mpnet_impl(cfg, params, &channels, obs, holdout);
}

TrainReport train_mpnet_unsupervised(const TrainConfig& cfg, MpNetParams& params, const Observation& obs,
                                     const MpHoldout* holdout)
{
    return train_mpnet_impl(cfg, params, nullptr, obs, holdout);
}

// ---- step sizes -----------------------------------------------------------------

double mean_group_rate(const PgaParams& params, const CMat& input, const CMat& eval, const Grouping& groups,
                       const TrainConfig& cfg)
{
    if (groups.size() == 0) {
        throw std::invalid_argument("mean_group_rate: no groups");
    }
    double sum = 0.0;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const CMat hi = gather(input, groups.groups[g]);
        const CMat he = gather(eval, groups.groups[g]);
        sum += pga_forward(hi, params, cfg.rf_chains, cfg.p_total, cfg.sigma2, groups.seeds[g], &he).rates.back();
    }
    return sum / static_cast<double>(groups.size());
}

namespace {

void require_sigma(const TrainConfig& cfg)
{
    if (!(cfg.sigma2 > 0.0)) {
        throw std::invalid_argument("TrainConfig: sigma2 must be positive for precoding");
    }
}

// mu <- mu * exp(new - old): a zero step leaves mu bit-identical.
void apply_log_delta(RMat& mu, const RMat& before, const RMat& after)
{
    mu = (mu.array() * (after - before).array().exp()).matrix();
}

RMat log_mu(const PgaParams& p)
{
    validate(p);
    return p.mu.array().log().matrix();
}

// Cuts a batch of unit indices (one unit = one user group) into groups of columns.
std::vector<std::vector<Eigen::Index>> unit_groups(const std::vector<Eigen::Index>& units,
                                                   const std::vector<Eigen::Index>& perm, int users)
{
    std::vector<std::vector<Eigen::Index>> out;
    for (Eigen::Index u : units) {
        std::vector<Eigen::Index> g;
        for (int k = 0; k < users; ++k) {
            g.push_back(perm[static_cast<std::size_t>(u * users + k)]);
        }
        out.push_back(std::move(g));
    }
    return out;
}

}  // namespace

TrainReport train_upga(const TrainConfig& cfg, PgaParams& params, const PgaData& train, const PgaHoldout* holdout)
{
    validate(cfg);
    require_sigma(cfg);
    if (train.target.rows() != train.input.rows() || train.target.cols() != train.input.cols()) {
        throw DimensionError("train_upga: input and target disagree");
    }
    const Eigen::Index units = train.input.cols() / cfg.users;
    if (units < 1) {
        throw std::invalid_argument("train_upga: fewer channels than users");
    }
    ad::ParamSet set;
    set.add("log_mu", log_mu(params).cast<cplx>(), true);
    Adam opt(cfg.lr_log_steps);
    const std::size_t batch_units = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.batch_size / cfg.users));

    std::vector<Eigen::Index> perm;
    int perm_epoch = -1;
    auto step = [&](const std::vector<Eigen::Index>& units_batch, int epoch) -> std::pair<double, double> {
        if (epoch != perm_epoch) {
            perm = permutation(train.input.cols(), derive_seed(cfg.seed, {0x5553'4552ULL}), epoch);
            perm_epoch = epoch;
        }
        const auto groups = unit_groups(units_batch, perm, cfg.users);
        const ad::LossFn fn = [&](ad::Tape& tape, const std::vector<ad::Var>& leaves) {
            const ad::Var mu = ad::rexp(leaves[0]);
            std::vector<ad::Var> losses;
            for (std::size_t g = 0; g < groups.size(); ++g) {
                const CMat hi = gather(train.input, groups[g]);
                const std::uint64_t s = derive_seed(cfg.seed, {0x5452'4149ULL, static_cast<std::uint64_t>(epoch),
                                                                static_cast<std::uint64_t>(units_batch[g])});
                const HybridPrecoder init = init_precoders(hi, cfg.rf_chains, cfg.p_total, s);
                const PgaUnroll un = pga_unroll(tape, tape.constant(hi), mu, init, cfg.sigma2);
                losses.push_back(pga_rate_loss(un, tape.constant(gather(train.target, groups[g])), cfg.sigma2,
                                               cfg.loss_all_iterations));
            }
            return ad::scale(ad::sum(losses), 1.0 / static_cast<double>(losses.size()));
        };
        const ad::GradResult r = ad::backprop(fn, set);
        const RMat before = set.entries()[0].value.real();
        opt.step(set.entries()[0].value, r.grads[0], true);
        apply_log_delta(params.mu, before, set.entries()[0].value.real());
        return {r.value * static_cast<double>(groups.size()), static_cast<double>(groups.size())};
    };

    auto evaluate = [&](TrainRecord& rec) {
        if (holdout == nullptr) {
            const Grouping g = make_groups(train.input.cols(), cfg.users, 1, derive_seed(cfg.seed, {0x4556'414CULL}));
            return -mean_group_rate(params, train.input, train.target, g, cfg) * std::log(2.0);
        }
        const PgaData& d = holdout->data;
        const double target_rate = mean_group_rate(params, d.input, d.target, holdout->groups, cfg);
        rec.holdout_loss = -target_rate * std::log(2.0);
        rec.sumrate_bits =
            d.truth.size() > 0 ? mean_group_rate(params, d.input, d.truth, holdout->groups, cfg) : target_rate;
        return rec.holdout_loss;
    };

    TrainReport report = drive<PgaParams>(
        cfg, units, static_cast<std::size_t>(cfg.users), batch_units, step, evaluate, [&] { return params; },
        [&](const PgaParams& best) { params = best; });
    report.trainable_count = static_cast<std::size_t>(params.mu.size());
    return report;
}

// ---- end to end -----------------------------------------------------------------

namespace {

struct E2eSnapshot {
    MpNetParams mp;
    PgaParams pga;
};

double e2e_holdout_rate(const MpNetParams& mp, const PgaParams& pga, const E2eHoldout& h, const TrainConfig& cfg,
                        double* nmse)
{
    const CMat h_hat = estimate_channels(h.data.obs, mp, cfg.stop);
    if (nmse != nullptr) {
        *nmse = median_nmse_db(h_hat, h.data.channels);
    }
    return mean_group_rate(pga, h_hat, h.data.channels, h.groups, cfg);
}

}  // namespace

TrainReport train_e2e(const TrainConfig& cfg, MpNetParams& mp, PgaParams& pga, const E2eData& train,
                      const E2eHoldout* holdout)
{
    validate(cfg);
    require_sigma(cfg);
    require_obs(train.obs, mp.antennas());
    if (train.channels.cols() != train.obs.y.cols() || train.channels.rows() != mp.antennas()) {
        throw DimensionError("train_e2e: channels and observations disagree");
    }
    const Eigen::Index units = train.channels.cols() / cfg.users;
    if (units < 1) {
        throw std::invalid_argument("train_e2e: fewer channels than users");
    }
    ad::ParamSet set = mpnet_param_set(mp);
    set.add("log_mu", log_mu(pga).cast<cplx>(), true);
    std::vector<Adam> opt;
    for (const auto& e : set.entries()) {
        opt.emplace_back(e.name == "log_mu" ? cfg.lr_log_steps : lr_for(e, cfg));
    }
    const std::size_t mu_index = set.size() - 1;
    const double noise = expected_noise_energy(train.obs.meas, train.obs.zeta2);
    const std::size_t batch_units = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.batch_size / cfg.users));

    std::vector<Eigen::Index> perm;
    int perm_epoch = -1;
    auto step = [&](const std::vector<Eigen::Index>& units_batch, int epoch) -> std::pair<double, double> {
        if (epoch != perm_epoch) {
            perm = permutation(train.channels.cols(), derive_seed(cfg.seed, {0x5553'4552ULL}), epoch);
            perm_epoch = epoch;
        }
        const auto groups = unit_groups(units_batch, perm, cfg.users);
        const CMat d = materialize_dictionary(mp).atoms;
        const CMat g = train.obs.meas.m * d;
        const RVec g2 = g.colwise().squaredNorm().transpose();
        std::vector<CMat> ys;
        std::vector<std::vector<std::vector<Eigen::Index>>> supports;
        for (const auto& grp : groups) {
            ys.push_back(gather(train.obs.y, grp));
            std::vector<std::vector<Eigen::Index>> s;
            for (Eigen::Index u = 0; u < ys.back().cols(); ++u) {
                s.push_back(matching_pursuit(d, g, g2, ys.back().col(u), cfg.stop, noise).support);
            }
            supports.push_back(std::move(s));
        }
        const ad::LossFn fn = [&](ad::Tape& tape, const std::vector<ad::Var>& leaves) {
            const ad::Var dict = dictionary_node(tape, mp, leaves[0]);
            const ad::Var mu = ad::rexp(leaves[mu_index]);
            std::vector<ad::Var> losses;
            for (std::size_t k = 0; k < groups.size(); ++k) {
                const ad::Var h_hat = estimate_replay(tape, dict, ys[k], train.obs.meas, supports[k]);
                const std::uint64_t s = derive_seed(cfg.seed, {0x5452'4149ULL, static_cast<std::uint64_t>(epoch),
                                                                static_cast<std::uint64_t>(units_batch[k])});
                const HybridPrecoder init = init_precoders(h_hat.value(), cfg.rf_chains, cfg.p_total, s);
                const PgaUnroll un = pga_unroll(tape, h_hat, mu, init, cfg.sigma2);
                losses.push_back(pga_rate_loss(un, tape.constant(gather(train.channels, groups[k])), cfg.sigma2,
                                               cfg.loss_all_iterations));
            }
            return ad::scale(ad::sum(losses), 1.0 / static_cast<double>(losses.size()));
        };
        const ad::GradResult r = ad::backprop(fn, set);
        const RMat before = set.entries()[mu_index].value.real();
        for (std::size_t i = 0; i < set.size(); ++i) {
            opt[i].step(set.entries()[i].value, r.grads[i], set.entries()[i].real);
        }
        assign_param_set(mp, set);
        apply_log_delta(pga.mu, before, set.entries()[mu_index].value.real());
        return {r.value * static_cast<double>(groups.size()), static_cast<double>(groups.size())};
    };

    auto evaluate = [&](TrainRecord& rec) {
        if (holdout == nullptr) {
            const E2eHoldout self{train, make_groups(train.channels.cols(), cfg.users, 1,
                                                     derive_seed(cfg.seed, {0x4556'414CULL}))};
            return -e2e_holdout_rate(mp, pga, self, cfg, nullptr) * std::log(2.0);
        }
        double nmse = 0.0;
        rec.sumrate_bits = e2e_holdout_rate(mp, pga, *holdout, cfg, &nmse);
        rec.nmse_db = nmse;
        rec.holdout_loss = -rec.sumrate_bits * std::log(2.0);
        return rec.holdout_loss;
    };

    TrainReport report = drive<E2eSnapshot>(
        cfg, units, static_cast<std::size_t>(cfg.users), batch_units, step, evaluate,
        [&] { return E2eSnapshot{mp, pga}; },
        [&](const E2eSnapshot& best) {
            mp = best.mp;
            pga = best.pga;
        });
    report.trainable_count = pipeline_trainable_count(mp, pga);
    return report;
}

}  // namespace unfold
