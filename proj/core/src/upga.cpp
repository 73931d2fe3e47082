// SPDX-License-Identifier: Apache-2.0

#include "unfold/upga.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "unfold/io.hpp"
#include "unfold/rng.hpp"

namespace unfold {

PgaParams constant_step_params(int iterations, double step)
{
    if (iterations < 1) {
        throw std::invalid_argument("constant_step_params: need K >= 1");
    }
    return PgaParams{RMat::Constant(iterations, 2, step)};
}

void validate(const PgaParams& p)
{
    if (p.mu.cols() != 2 || p.mu.rows() < 1) {
        throw std::invalid_argument("PgaParams: mu must be K x 2 with K >= 1");
    }
    if (!(p.mu.array() > 0.0).all() || !p.mu.allFinite()) {
        throw std::invalid_argument("PgaParams: step sizes must be finite and positive");
    }
}

namespace {

double rate_scale(const CMat& h, double sigma2)
{
    if (!(sigma2 > 0.0)) {
        throw std::invalid_argument("sum_rate: sigma2 must be positive");
    }
    return 1.0 / (static_cast<double>(h.cols()) * sigma2);
}

}  // namespace

double sum_rate_nats(const CMat& h, const CMat& w, double sigma2)
{
    if (h.rows() != w.rows()) {
        throw DimensionError("sum_rate: H and W disagree on the antenna count");
    }
    const double c = rate_scale(h, sigma2);
    const CMat g = h.transpose() * w;
    const CMat s = CMat::Identity(h.cols(), h.cols()) + c * (g * g.adjoint());
    return logdet_psd(s);
}

double sum_rate(const CMat& h, const HybridPrecoder& prec, double sigma2)
{
    return sum_rate_nats(h, prec.w(), sigma2) / std::log(2.0);
}

CMat sum_rate_grad_w(const CMat& h, const CMat& w, double sigma2)
{
    const double c = rate_scale(h, sigma2);
    const CMat a = h.transpose();
    const CMat aw = a * w;
    const CMat s = CMat::Identity(h.cols(), h.cols()) + c * (aw * aw.adjoint());
    return c * (a.adjoint() * unfold::solve_hpd(s, aw));
}

PrecoderGrad sum_rate_grad(const CMat& h, const HybridPrecoder& prec, double sigma2)
{
    const CMat gw = sum_rate_grad_w(h, prec.w(), sigma2);
    return {gw * prec.wd.adjoint(), prec.wa.adjoint() * gw};
}

CMat project_unit_modulus(const CMat& wa)
{
    CMat out(wa.rows(), wa.cols());
    for (Eigen::Index j = 0; j < wa.cols(); ++j) {
        for (Eigen::Index i = 0; i < wa.rows(); ++i) {
            const double m = std::abs(wa(i, j));
            out(i, j) = m > 0.0 ? wa(i, j) / m : cplx(1.0, 0.0);
        }
    }
    return out;
}

CMat project_power(const CMat& wa, const CMat& wd, double p_total)
{
    if (!(p_total > 0.0)) {
        throw std::invalid_argument("project_power: p_total must be positive");
    }
    const double n = (wa * wd).norm();
    if (n * n > p_total) {
        return (std::sqrt(p_total) / n) * wd;
    }
    return wd;
}

HybridPrecoder init_precoders(const CMat& h_hat, int rf_chains, double p_total, std::uint64_t seed)
{
    const Eigen::Index a = h_hat.rows();
    if (rf_chains < 1 || rf_chains > a) {
        throw std::invalid_argument("init_precoders: need 1 <= L <= A");
    }
    Rng rng(derive_seed(seed, {0x494E'4954ULL}));

    CMat wa(a, rf_chains);
    Eigen::Index filled = 0;
    if (h_hat.norm() > 0.0) {
        const SvdResult f = svd(h_hat);
        const double tol = 1e-10 * f.s(0);
        for (Eigen::Index k = 0; k < f.s.size() && filled < rf_chains; ++k) {
            if (!(f.s(k) > tol)) {
                break;
            }
            CVec u = f.u.col(k);
            // fix the arbitrary phase of the singular vector: first nonzero entry real positive
            for (Eigen::Index i = 0; i < a; ++i) {
                if (std::abs(u(i)) > 0.0) {
                    u *= std::conj(u(i)) / std::abs(u(i));
                    break;
                }
            }
            wa.col(filled++) = u;
        }
    }
    std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi);
    for (Eigen::Index j = filled; j < rf_chains; ++j) {
        for (Eigen::Index i = 0; i < a; ++i) {
            const double phi = phase(rng);
            wa(i, j) = cplx(std::cos(phi), std::sin(phi));
        }
    }
    HybridPrecoder p;
    p.p_total = p_total;
    p.wa = project_unit_modulus(wa);
    p.wd = project_power(p.wa, complex_normal_matrix(rng, rf_chains, h_hat.cols(), 1.0), p_total);
    return p;
}

HybridPrecoder pga_step(const CMat& h, const HybridPrecoder& prec, double mu_a, double mu_d, double sigma2)
{
    const PrecoderGrad g = sum_rate_grad(h, prec, sigma2);
    HybridPrecoder next;
    next.p_total = prec.p_total;
    next.wa = project_unit_modulus(prec.wa + mu_a * g.wa);
    next.wd = project_power(next.wa, prec.wd + mu_d * g.wd, prec.p_total);
    return next;
}

PgaTrace pga_run(const CMat& h_input, const PgaParams& params, const HybridPrecoder& init, double sigma2,
                 const CMat* h_eval)
{
    const CMat& he = h_eval != nullptr ? *h_eval : h_input;
    PgaTrace trace;
    trace.final = init;
    trace.rates.reserve(static_cast<std::size_t>(params.iterations()) + 1);
    trace.rates.push_back(sum_rate(he, trace.final, sigma2));
    for (int k = 0; k < params.iterations(); ++k) {
        trace.final = pga_step(h_input, trace.final, params.mu(k, 0), params.mu(k, 1), sigma2);
        trace.rates.push_back(sum_rate(he, trace.final, sigma2));
    }
    return trace;
}

PgaTrace pga_forward(const CMat& h_input, const PgaParams& params, int rf_chains, double p_total, double sigma2,
                     std::uint64_t seed, const CMat* h_eval)
{
    if (params.mu.cols() != 2) {
        throw std::invalid_argument("pga_forward: mu must have two columns");
    }
    return pga_run(h_input, params, init_precoders(h_input, rf_chains, p_total, seed), sigma2, h_eval);
}

double loss_sumrate_supervised(const CMat& h_true, const PgaTrace& trace, double sigma2)
{
    return -sum_rate_nats(h_true, trace.final.w(), sigma2);
}

double loss_sumrate_unsupervised(const CMat& h_hat, const PgaTrace& trace, double sigma2)
{
    return -sum_rate_nats(h_hat, trace.final.w(), sigma2);
}

// ---- differentiable forms ---------------------------------------------------

ad::Var sum_rate_nats(ad::Var h, ad::Var wa, ad::Var wd, double sigma2)
{
    const double c = rate_scale(h.value(), sigma2);
    const Eigen::Index u = h.cols();
    const ad::Var aw = ad::mul(ad::transpose(h), ad::mul(wa, wd));
    const ad::Var s = ad::add_const(ad::scale(ad::mul(aw, ad::adjoint(aw)), c), CMat::Identity(u, u));
    return ad::logdet(s);
}

PgaUnroll pga_unroll(ad::Tape& tape, ad::Var h_input, ad::Var mu, const HybridPrecoder& init, double sigma2)
{
    if (mu.cols() != 2) {
        throw DimensionError("pga_unroll: mu must be K x 2");
    }
    const double c = rate_scale(h_input.value(), sigma2);
    const Eigen::Index u = h_input.cols();
    const CMat eye = CMat::Identity(u, u);

    PgaUnroll out;
    out.wa.push_back(tape.constant(init.wa));
    out.wd.push_back(tape.constant(init.wd));
    const ad::Var a = ad::transpose(h_input);
    const ad::Var ah = ad::adjoint(a);
    for (Eigen::Index k = 0; k < mu.rows(); ++k) {
        const ad::Var wa = out.wa.back();
        const ad::Var wd = out.wd.back();
        const ad::Var aw = ad::mul(a, ad::mul(wa, wd));
        const ad::Var s = ad::add_const(ad::scale(ad::mul(aw, ad::adjoint(aw)), c), eye);
        const ad::Var gw = ad::scale(ad::mul(ah, ad::solve_hpd(s, aw)), c);
        const ad::Var gwa = ad::mul(gw, ad::adjoint(wd));
        const ad::Var gwd = ad::mul(ad::adjoint(wa), gw);

        const ad::Var wa_next = ad::unit_modulus(ad::add(wa, ad::smul(ad::entry(mu, k, 0), gwa)));
        ad::Var wd_next = ad::add(wd, ad::smul(ad::entry(mu, k, 1), gwd));
        const ad::Var n2 = ad::sqnorm(ad::mul(wa_next, wd_next));
        if (n2.scalar() > init.p_total) {
            wd_next = ad::smul(ad::rsqrt(ad::scale(ad::rrecip(n2), init.p_total)), wd_next);
        }
        out.wa.push_back(wa_next);
        out.wd.push_back(wd_next);
    }
    return out;
}

ad::Var pga_rate_loss(const PgaUnroll& unroll, ad::Var h_eval, double sigma2, bool all_iterations)
{
    if (!all_iterations) {
        return ad::scale(sum_rate_nats(h_eval, unroll.wa.back(), unroll.wd.back(), sigma2), -1.0);
    }
    std::vector<ad::Var> rates;
    for (std::size_t k = 0; k < unroll.wa.size(); ++k) {
        rates.push_back(sum_rate_nats(h_eval, unroll.wa[k], unroll.wd[k], sigma2));
    }
    return ad::scale(ad::sum(rates), -1.0 / static_cast<double>(rates.size()));
}

// ---- checkpoints --------------------------------------------------------------

void save_pga_checkpoint(const PgaParams& params, const std::filesystem::path& path)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    nlohmann::json arr = nlohmann::json::array();
    for (Eigen::Index k = 0; k < params.mu.rows(); ++k) {
        arr.push_back({params.mu(k, 0), params.mu(k, 1)});
    }
    write_text(path, arr.dump() + "\n");
}

PgaParams load_pga_checkpoint(const std::filesystem::path& path)
{
    try {
        const auto arr = nlohmann::json::parse(read_text(path));
        if (!arr.is_array() || arr.empty()) {
            throw IoError("PGA checkpoint: expected a non-empty array");
        }
        PgaParams p{RMat(static_cast<Eigen::Index>(arr.size()), 2)};
        for (std::size_t k = 0; k < arr.size(); ++k) {
            if (!arr[k].is_array() || arr[k].size() != 2) {
                throw IoError("PGA checkpoint: entries must be [mu_a, mu_d] pairs");
            }
            p.mu(static_cast<Eigen::Index>(k), 0) = arr[k][0].get<double>();
            p.mu(static_cast<Eigen::Index>(k), 1) = arr[k][1].get<double>();
        }
        validate(p);
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("PGA checkpoint: ") + e.what());
    }
}

}  // namespace unfold
