// SPDX-License-Identifier: Apache-2.0

#include "unfold/mpnet.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "unfold/io.hpp"

namespace unfold {

const char* to_string(MpVariant v) { return v == MpVariant::Constrained ? "constrained" : "unconstrained"; }

MpVariant mp_variant_from_string(const std::string& s)
{
    if (s == "constrained") {
        return MpVariant::Constrained;
    }
    if (s == "unconstrained") {
        return MpVariant::Unconstrained;
    }
    throw std::invalid_argument("unknown mpNet variant '" + s + "'");
}

Eigen::Index MpNetParams::antennas() const
{
    return variant == MpVariant::Constrained ? positions_x.size() : atoms.rows();
}

std::size_t MpNetParams::trainable_count() const
{
    if (variant == MpVariant::Constrained) {
        return static_cast<std::size_t>(positions_x.size());
    }
    return 2u * static_cast<std::size_t>(atoms.size());
}

MpNetParams make_constrained_params(const AntennaArray& array, Eigen::Index grid_size)
{
    if (grid_size < array.size()) {
        throw std::invalid_argument("make_constrained_params: need N >= A");
    }
    MpNetParams p;
    p.variant = MpVariant::Constrained;
    p.positions_x = array.positions().col(0);
    p.fixed_yz = array.positions().rightCols(2);
    p.grid_sines = sine_grid(grid_size);
    p.wavelength = array.wavelength();
    return p;
}

MpNetParams make_unconstrained_params(const AntennaArray& array, Eigen::Index grid_size)
{
    MpNetParams p;
    p.variant = MpVariant::Unconstrained;
    p.atoms = build_dictionary(array, grid_size).atoms;
    p.grid_sines = sine_grid(grid_size);
    p.wavelength = array.wavelength();
    return p;
}

namespace {

std::vector<Vec3> grid_directions(const RVec& sines)
{
    std::vector<Vec3> dirs;
    dirs.reserve(static_cast<std::size_t>(sines.size()));
    for (Eigen::Index n = 0; n < sines.size(); ++n) {
        dirs.push_back(direction_from_sine(sines(n)));
    }
    return dirs;
}

CMat constrained_atoms(const RVec& x, const RMat& yz, const std::vector<Vec3>& dirs, double wavelength)
{
    const Eigen::Index a = x.size();
    const auto n = static_cast<Eigen::Index>(dirs.size());
    const double amp = 1.0 / std::sqrt(static_cast<double>(a));
    const double k = wavenumber(wavelength);
    CMat d(a, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = 0; i < a; ++i) {
            d(i, j) = steering_entry(amp, steering_phase(k, x(i), yz(i, 0), yz(i, 1), dirs[static_cast<std::size_t>(j)]));
        }
    }
    return d;
}

}  // namespace

SteeringDictionary materialize_dictionary(const MpNetParams& params)
{
    SteeringDictionary d;
    d.directions = grid_directions(params.grid_sines);
    if (params.variant == MpVariant::Constrained) {
        d.atoms = constrained_atoms(params.positions_x, params.fixed_yz, d.directions, params.wavelength);
        d.parameterization = DictParam::Positions;
    } else {
        d.atoms = params.atoms;
        d.parameterization = DictParam::FreeEntries;
    }
    return d;
}

void validate(const StopRule& stop)
{
    if (stop.max_atoms < 1) {
        throw std::invalid_argument("StopRule: max_atoms must be >= 1");
    }
    if (!(stop.threshold_factor > 0.0)) {
        throw std::invalid_argument("StopRule: threshold_factor must be > 0");
    }
}

EstimateResult matching_pursuit(const CMat& dictionary, const CMat& effective, const RVec& effective_norm2,
                                const CVec& y, const StopRule& stop, double noise_energy, bool ls_refit)
{
    validate(stop);
    if (effective.rows() != y.size() || effective.cols() != dictionary.cols()) {
        throw DimensionError("matching_pursuit: shape mismatch");
    }
    EstimateResult out;
    out.h_hat = CVec::Zero(dictionary.rows());

    CVec r = y;
    double energy = r.squaredNorm();
    out.residual_trace.push_back(energy);
    const double floor = 1e-20 * energy;
    const double threshold = stop.mode == StopMode::ResidualThreshold ? stop.threshold_factor * noise_energy : 0.0;

    for (int step = 0; step < stop.max_atoms; ++step) {
        if (energy <= floor || energy == 0.0 || energy <= threshold) {
            break;
        }
        const CVec corr = effective.adjoint() * r;
        Eigen::Index best = -1;
        double best_score = -1.0;
        for (Eigen::Index n = 0; n < corr.size(); ++n) {
            const double g2 = effective_norm2(n);
            if (!(g2 > 0.0)) {
                throw NumericError("matching_pursuit: zero-norm effective atom " + std::to_string(n));
            }
            const double score = std::abs(corr(n)) / std::sqrt(g2);
            if (score > best_score) {
                best_score = score;
                best = n;
            }
        }
        const cplx c = corr(best) / effective_norm2(best);
        r -= c * effective.col(best);
        energy = r.squaredNorm();
        out.support.push_back(best);
        out.coefficients.push_back(c);
        out.h_hat += c * dictionary.col(best);
        out.residual_trace.push_back(energy);
    }

    if (ls_refit && !out.support.empty()) {
        CMat g(effective.rows(), static_cast<Eigen::Index>(out.support.size()));
        for (std::size_t k = 0; k < out.support.size(); ++k) {
            g.col(static_cast<Eigen::Index>(k)) = effective.col(out.support[k]);
        }
        const CVec c = g.completeOrthogonalDecomposition().solve(y);
        out.h_hat.setZero();
        for (std::size_t k = 0; k < out.support.size(); ++k) {
            out.coefficients[k] = c(static_cast<Eigen::Index>(k));
            out.h_hat += out.coefficients[k] * dictionary.col(out.support[k]);
        }
        energy = (y - g * c).squaredNorm();
    }
    out.residual_energy = energy;
    return out;
}

EstimateResult mp_forward(const CVec& y, const MeasurementMatrix& meas, const MpNetParams& params,
                          const StopRule& stop, double zeta2)
{
    const SteeringDictionary d = materialize_dictionary(params);
    if (meas.antennas() != d.antennas() || meas.measurements() != y.size()) {
        throw DimensionError("mp_forward: shape mismatch");
    }
    const CMat g = meas.m * d.atoms;
    const RVec g2 = g.colwise().squaredNorm().transpose();
    return matching_pursuit(d.atoms, g, g2, y, stop, expected_noise_energy(meas, zeta2));
}

ChannelEstimates estimate_with_dictionary(const Observation& obs, const CMat& dictionary, const StopRule& stop,
                                          bool ls_refit)
{
    if (obs.meas.antennas() != dictionary.rows() || obs.meas.measurements() != obs.y.rows()) {
        throw DimensionError("estimate_with_dictionary: shape mismatch");
    }
    const CMat g = obs.meas.m * dictionary;
    const RVec g2 = g.colwise().squaredNorm().transpose();
    const double noise = expected_noise_energy(obs.meas, obs.zeta2);
    ChannelEstimates out;
    out.h_hat.resize(dictionary.rows(), obs.y.cols());
    out.supports.reserve(static_cast<std::size_t>(obs.y.cols()));
    for (Eigen::Index u = 0; u < obs.y.cols(); ++u) {
        EstimateResult r = matching_pursuit(dictionary, g, g2, obs.y.col(u), stop, noise, ls_refit);
        out.h_hat.col(u) = r.h_hat;
        out.supports.push_back(std::move(r.support));
    }
    return out;
}

ChannelEstimates estimate_channels_detailed(const Observation& obs, const MpNetParams& params, const StopRule& stop)
{
    return estimate_with_dictionary(obs, materialize_dictionary(params).atoms, stop);
}

CMat estimate_channels(const Observation& obs, const MpNetParams& params, const StopRule& stop)
{
    return estimate_channels_detailed(obs, params, stop).h_hat;
}

double loss_supervised(const CMat& h_hat, const CMat& h)
{
    if (h_hat.rows() != h.rows() || h_hat.cols() != h.cols()) {
        throw DimensionError("loss_supervised: shape mismatch");
    }
    const double ref = h.squaredNorm();
    if (ref == 0.0) {
        throw std::invalid_argument("loss_supervised: zero reference channel");
    }
    return (h_hat - h).squaredNorm() / ref;
}

double loss_unsupervised(const CMat& h_hat, const CMat& y, const CMat& m)
{
    if (m.cols() != h_hat.rows() || m.rows() != y.rows() || h_hat.cols() != y.cols()) {
        throw DimensionError("loss_unsupervised: shape mismatch");
    }
    const double ref = y.squaredNorm();
    if (ref == 0.0) {
        throw std::invalid_argument("loss_unsupervised: zero observation");
    }
    return (m * h_hat - y).squaredNorm() / ref;
}

double nmse_db(const CMat& h_hat, const CMat& h)
{
    const double l = loss_supervised(h_hat, h);
    if (!(l > 0.0)) {
        return kNmseFloorDb;
    }
    return std::max(kNmseFloorDb, 10.0 * std::log10(l));
}

// ---- differentiable forms ---------------------------------------------------

ad::ParamSet mpnet_param_set(const MpNetParams& params)
{
    ad::ParamSet set;
    if (params.variant == MpVariant::Constrained) {
        set.add("positions_x", params.positions_x.cast<cplx>(), true);
    } else {
        set.add("atoms", params.atoms, false);
    }
    return set;
}

void assign_param_set(MpNetParams& params, const ad::ParamSet& set)
{
    if (params.variant == MpVariant::Constrained) {
        params.positions_x = set.at("positions_x").value.real();
    } else {
        params.atoms = set.at("atoms").value;
    }
}

ad::Var dictionary_node(ad::Tape& tape, const MpNetParams& params, ad::Var theta)
{
    if (params.variant == MpVariant::Unconstrained) {
        return theta;
    }
    const std::vector<Vec3> dirs = grid_directions(params.grid_sines);
    const RVec x = theta.value().real();
    CMat atoms = constrained_atoms(x, params.fixed_yz, dirs, params.wavelength);
    const double k = wavenumber(params.wavelength);
    const RVec sines = params.grid_sines;
    const std::size_t ix = theta.id();
    return tape.record("steering_atoms", std::move(atoms), false, {theta},
                       [ix, k, sines](ad::Tape& t, std::size_t self) {
                           // d atom_in / d x_i = -j k u_x(n) atom_in  =>  G_x = -k sum_n u_x(n) Im(conj(D) G)
                           const CMat& d = t.value(self);
                           const CMat& g = t.grad(self);
                           const RMat im = (d.conjugate().array() * g.array()).imag().matrix();
                           const RVec gx = -k * (im * sines);
                           t.accumulate(ix, gx.cast<cplx>());
                       });
}

ad::Var estimate_replay(ad::Tape& tape, ad::Var dictionary, const CMat& y, const MeasurementMatrix& meas,
                        const std::vector<std::vector<Eigen::Index>>& supports)
{
    if (static_cast<Eigen::Index>(supports.size()) != y.cols()) {
        throw DimensionError("estimate_replay: one support per column required");
    }
    const ad::Var m = tape.constant(meas.m);
    std::vector<ad::Var> columns;
    columns.reserve(supports.size());
    for (Eigen::Index u = 0; u < y.cols(); ++u) {
        const auto& support = supports[static_cast<std::size_t>(u)];
        if (support.empty()) {
            columns.push_back(tape.constant(CMat::Zero(dictionary.rows(), 1)));
            continue;
        }
        const ad::Var dsub = ad::gather_cols(dictionary, support);
        const ad::Var gsub = ad::mul(m, dsub);
        ad::Var r = tape.constant(y.col(u));
        ad::Var h;
        for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(support.size()); ++k) {
            const ad::Var g = ad::col(gsub, k);
            const ad::Var c = ad::smul(ad::rrecip(ad::sqnorm(g)), ad::mul(ad::adjoint(g), r));
            r = ad::sub(r, ad::smul(c, g));
            const ad::Var term = ad::smul(c, ad::col(dsub, k));
            h = h.valid() ? ad::add(h, term) : term;
        }
        columns.push_back(h);
    }
    return ad::hcat(columns);
}

ad::Var loss_supervised(ad::Var h_hat, const CMat& h)
{
    const double ref = h.squaredNorm();
    if (ref == 0.0) {
        throw std::invalid_argument("loss_supervised: zero reference channel");
    }
    return ad::scale(ad::sqnorm(ad::add_const(h_hat, -h)), 1.0 / ref);
}

ad::Var loss_unsupervised(ad::Var h_hat, const CMat& y, const CMat& m)
{
    const double ref = y.squaredNorm();
    if (ref == 0.0) {
        throw std::invalid_argument("loss_unsupervised: zero observation");
    }
    ad::Tape& tape = *h_hat.tape();
    return ad::scale(ad::sqnorm(ad::add_const(ad::mul(tape.constant(m), h_hat), -y)), 1.0 / ref);
}

// ---- checkpoints --------------------------------------------------------------

namespace {

std::filesystem::path with_ext(const std::filesystem::path& stem, const char* ext)
{
    std::filesystem::path p = stem;
    p += ext;
    return p;
}

}  // namespace

void save_mpnet_checkpoint(const MpNetParams& params, const std::filesystem::path& stem)
{
    if (stem.has_parent_path()) {
        std::filesystem::create_directories(stem.parent_path());
    }
    const CMat payload = params.variant == MpVariant::Constrained ? CMat(params.positions_x.cast<cplx>()) : params.atoms;
    const auto bytes = encode_payload(payload);
    write_bytes(with_ext(stem, ".bin"), bytes);

    nlohmann::ordered_json h;
    h["variant"] = to_string(params.variant);
    h["A"] = params.antennas();
    h["N"] = params.grid_size();
    h["wavelength_m"] = params.wavelength;
    h["grid"] = {{"kind", "sine-uniform"}, {"N", params.grid_size()}};
    if (params.variant == MpVariant::Constrained) {
        nlohmann::json yz = nlohmann::json::array();
        for (Eigen::Index i = 0; i < params.fixed_yz.rows(); ++i) {
            yz.push_back({params.fixed_yz(i, 0), params.fixed_yz(i, 1)});
        }
        h["fixed_yz"] = yz;
    }
    h["payload"] = with_ext(stem, ".bin").filename().string();
    h["payload_rows"] = payload.rows();
    h["payload_cols"] = payload.cols();
    h["payload_sha256"] = sha256_hex(bytes.data(), bytes.size());
    write_text(with_ext(stem, ".json"), h.dump(2) + "\n");
}

MpNetParams load_mpnet_checkpoint(const std::filesystem::path& stem)
{
    try {
        const auto h = nlohmann::json::parse(read_text(with_ext(stem, ".json")));
        const auto bytes = read_bytes(with_ext(stem, ".bin"));
        if (sha256_hex(bytes.data(), bytes.size()) != h.at("payload_sha256").get<std::string>()) {
            throw IoError("mpNet checkpoint: checksum mismatch");
        }
        const CMat payload = decode_payload(bytes, h.at("payload_rows").get<Eigen::Index>(),
                                            h.at("payload_cols").get<Eigen::Index>());
        MpNetParams p;
        p.variant = mp_variant_from_string(h.at("variant").get<std::string>());
        p.wavelength = h.at("wavelength_m").get<double>();
        p.grid_sines = sine_grid(h.at("N").get<Eigen::Index>());
        const auto a = h.at("A").get<Eigen::Index>();
        if (p.variant == MpVariant::Constrained) {
            if (payload.rows() != a || payload.cols() != 1) {
                throw IoError("mpNet checkpoint: payload shape disagrees with header");
            }
            p.positions_x = payload.real();
            const auto& yz = h.at("fixed_yz");
            p.fixed_yz.resize(a, 2);
            for (Eigen::Index i = 0; i < a; ++i) {
                p.fixed_yz(i, 0) = yz.at(static_cast<std::size_t>(i)).at(0).get<double>();
                p.fixed_yz(i, 1) = yz.at(static_cast<std::size_t>(i)).at(1).get<double>();
            }
        } else {
            if (payload.rows() != a || payload.cols() != p.grid_size()) {
                throw IoError("mpNet checkpoint: payload shape disagrees with header");
            }
            p.atoms = payload;
        }
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("mpNet checkpoint: ") + e.what());
    }
}

}  // namespace unfold
