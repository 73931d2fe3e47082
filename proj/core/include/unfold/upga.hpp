// SPDX-License-Identifier: Apache-2.0
//
// Unfolded projected gradient ascent for hybrid precoders.
//
// Rate model: R = log det(I_U + c G G^H), G = H^T Wa Wd, c = 1 / (U sigma^2).
// Rates are reported in bits; gradients and training losses use nats.

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "unfold/grad.hpp"
#include "unfold/numerics.hpp"

namespace unfold {

/// Step sizes: row k holds (mu_a, mu_d) of iteration k. All entries > 0.
struct PgaParams {
    RMat mu;  // K x 2

    int iterations() const { return static_cast<int>(mu.rows()); }
};

inline constexpr double kDefaultStep = 1e-2;

PgaParams constant_step_params(int iterations, double step = kDefaultStep);
void validate(const PgaParams& p);

struct HybridPrecoder {
    CMat wa;  // A x L, unit modulus
    CMat wd;  // L x U
    double p_total = 0.0;

    CMat w() const { return wa * wd; }
};

struct PgaTrace {
    std::vector<double> rates;  // bits; K + 1 entries, initialization first
    HybridPrecoder final;
};

/// Natural-log rate of an arbitrary (fully digital) precoder W (A x U).
double sum_rate_nats(const CMat& h, const CMat& w, double sigma2);
/// Rate in bits.
double sum_rate(const CMat& h, const HybridPrecoder& prec, double sigma2);

struct PrecoderGrad {
    CMat wa;
    CMat wd;
};

/// dR/d conj(W) = c A^H S^{-1} A W with A = H^T, S = I + c A W W^H A^H.
CMat sum_rate_grad_w(const CMat& h, const CMat& w, double sigma2);
/// Conjugate-Wirtinger gradients of the nat-log rate; (+grad) is the ascent direction.
PrecoderGrad sum_rate_grad(const CMat& h, const HybridPrecoder& prec, double sigma2);

/// Entrywise w / |w|; exact zeros map to 1.
CMat project_unit_modulus(const CMat& wa);
/// wd * min(1, sqrt(p_total) / ||wa wd||_F).
CMat project_power(const CMat& wa, const CMat& wd, double p_total);

/// Wa from the phases of the top antenna-side singular vectors of H_hat (rank-
/// deficient directions padded with random phases); Wd complex Gaussian,
/// power-projected. Deterministic per seed.
HybridPrecoder init_precoders(const CMat& h_hat, int rf_chains, double p_total, std::uint64_t seed);

/// One projected ascent step with step sizes (mu_a, mu_d).
HybridPrecoder pga_step(const CMat& h, const HybridPrecoder& prec, double mu_a, double mu_d, double sigma2);

/// Runs K steps from init_precoders(h_input). Trace rates are computed on
/// `h_eval` when given, otherwise on h_input.
PgaTrace pga_forward(const CMat& h_input, const PgaParams& params, int rf_chains, double p_total, double sigma2,
                     std::uint64_t seed, const CMat* h_eval = nullptr);

/// Same as pga_forward but from an explicit starting point.
PgaTrace pga_run(const CMat& h_input, const PgaParams& params, const HybridPrecoder& init, double sigma2,
                 const CMat* h_eval = nullptr);

/// -R (nats) of the final precoder on the true channel.
double loss_sumrate_supervised(const CMat& h_true, const PgaTrace& trace, double sigma2);
/// -R (nats) of the final precoder on the estimated channel.
double loss_sumrate_unsupervised(const CMat& h_hat, const PgaTrace& trace, double sigma2);

// ---- differentiable forms ---------------------------------------------------

ad::Var sum_rate_nats(ad::Var h, ad::Var wa, ad::Var wd, double sigma2);

struct PgaUnroll {
    std::vector<ad::Var> wa;  // K + 1 iterates, index 0 = initialization
    std::vector<ad::Var> wd;
};

/// Records K projected ascent steps on the tape. `mu` is a real K x 2 node,
/// `h_input` an A x U node. The initial point enters as a constant.
PgaUnroll pga_unroll(ad::Tape& tape, ad::Var h_input, ad::Var mu, const HybridPrecoder& init, double sigma2);

/// Loss -R (nats) of the final iterate evaluated on `h_eval`, or the mean over
/// all iterates when `all_iterations` is set.
ad::Var pga_rate_loss(const PgaUnroll& unroll, ad::Var h_eval, double sigma2, bool all_iterations = false);

// ---- checkpoints --------------------------------------------------------------

/// JSON array of K [mu_a, mu_d] pairs.
void save_pga_checkpoint(const PgaParams& params, const std::filesystem::path& path);
PgaParams load_pga_checkpoint(const std::filesystem::path& path);

}  // namespace unfold
