// SPDX-License-Identifier: Apache-2.0
//
// Unfolded matching pursuit over a learnable steering dictionary.
//
// Two parameterizations:
//   constrained    - the x coordinate of every antenna (A reals); atoms are
//                    rebuilt from the steering formula, so every entry keeps
//                    modulus 1/sqrt(A);
//   unconstrained  - every dictionary entry is free (2AN reals).
//
// Atom selection is taken from the forward values and treated as a constant
// when differentiating (the argmax has zero derivative almost everywhere).

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "unfold/array_channel.hpp"
#include "unfold/grad.hpp"
#include "unfold/numerics.hpp"
#include "unfold/sounding.hpp"

namespace unfold {

enum class MpVariant { Constrained, Unconstrained };

const char* to_string(MpVariant v);
MpVariant mp_variant_from_string(const std::string& s);

struct MpNetParams {
    MpVariant variant = MpVariant::Constrained;
    RVec positions_x;  // constrained: antenna x coordinates in meters
    RMat fixed_yz;     // constrained: A x 2, y and z coordinates (not learned)
    CMat atoms;        // unconstrained: A x N
    RVec grid_sines;   // N spatial frequencies of the angle grid
    double wavelength = 0.0;

    Eigen::Index antennas() const;
    Eigen::Index grid_size() const { return grid_sines.size(); }
    /// Real trainable scalars: A (constrained) or 2AN (unconstrained).
    std::size_t trainable_count() const;
};

/// Constrained parameters initialised at `array`'s positions.
MpNetParams make_constrained_params(const AntennaArray& array, Eigen::Index grid_size);
/// Unconstrained parameters initialised with the dictionary of `array`.
MpNetParams make_unconstrained_params(const AntennaArray& array, Eigen::Index grid_size);

SteeringDictionary materialize_dictionary(const MpNetParams& params);

enum class StopMode { FixedDepth, ResidualThreshold };

struct StopRule {
    StopMode mode = StopMode::ResidualThreshold;
    int max_atoms = 12;
    double threshold_factor = 1.0;  // multiplies the expected noise energy
};

void validate(const StopRule& stop);

struct EstimateResult {
    CVec h_hat;
    std::vector<Eigen::Index> support;
    std::vector<cplx> coefficients;
    double residual_energy = 0.0;
    std::vector<double> residual_trace;  // ||r||^2 before the first and after every step
};

/// Matching pursuit in the measurement domain on precomputed effective atoms
/// g_n = M d_n. Selection maximizes |<g_n, r>| / ||g_n||, ties to the lowest
/// index; c = <g_n, r> / ||g_n||^2. With `ls_refit`, coefficients are re-fitted
/// by least squares on the final support (no effect on selection).
EstimateResult matching_pursuit(const CMat& dictionary, const CMat& effective, const RVec& effective_norm2,
                                const CVec& y, const StopRule& stop, double noise_energy, bool ls_refit = false);

EstimateResult mp_forward(const CVec& y, const MeasurementMatrix& meas, const MpNetParams& params,
                          const StopRule& stop, double zeta2);

struct ChannelEstimates {
    CMat h_hat;  // A x U
    std::vector<std::vector<Eigen::Index>> supports;
};

/// MP on every column of Y with a fixed dictionary.
ChannelEstimates estimate_with_dictionary(const Observation& obs, const CMat& dictionary, const StopRule& stop,
                                          bool ls_refit = false);

CMat estimate_channels(const Observation& obs, const MpNetParams& params, const StopRule& stop);
ChannelEstimates estimate_channels_detailed(const Observation& obs, const MpNetParams& params,
                                            const StopRule& stop);

double loss_supervised(const CMat& h_hat, const CMat& h);
double loss_unsupervised(const CMat& h_hat, const CMat& y, const CMat& m);

inline constexpr double kNmseFloorDb = -120.0;
double nmse_db(const CMat& h_hat, const CMat& h);

// ---- differentiable forms ---------------------------------------------------

/// Leaf parameter tensor of the model: positions_x (real A x 1) or atoms (A x N).
ad::ParamSet mpnet_param_set(const MpNetParams& params);
/// Writes trained values back from a ParamSet produced by mpnet_param_set().
void assign_param_set(MpNetParams& params, const ad::ParamSet& set);

/// Dictionary node built from the leaf `theta`.
ad::Var dictionary_node(ad::Tape& tape, const MpNetParams& params, ad::Var theta);

/// Replays matching pursuit on `support` for every column of Y and returns Ĥ (A x U).
ad::Var estimate_replay(ad::Tape& tape, ad::Var dictionary, const CMat& y, const MeasurementMatrix& meas,
                        const std::vector<std::vector<Eigen::Index>>& supports);

ad::Var loss_supervised(ad::Var h_hat, const CMat& h);
ad::Var loss_unsupervised(ad::Var h_hat, const CMat& y, const CMat& m);

// ---- checkpoints --------------------------------------------------------------

/// Writes `<stem>.json` (header) and `<stem>.bin` (payload) next to each other.
void save_mpnet_checkpoint(const MpNetParams& params, const std::filesystem::path& stem);
MpNetParams load_mpnet_checkpoint(const std::filesystem::path& stem);

}  // namespace unfold
