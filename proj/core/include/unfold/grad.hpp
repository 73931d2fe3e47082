// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation of real scalar losses over complex matrices.
//
// Gradient convention: for a complex node z the tape accumulates
// G = dL/d(conj z), so that dL = 2 Re <G, dz> with <A, B> = tr(A^H B).
// Descent for complex parameters is along -G. Nodes flagged real keep only
// Re(G); the reported derivative for a real parameter x is dL/dx = 2 Re(G).

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "unfold/numerics.hpp"

namespace unfold::ad {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;

    const CMat& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    bool is_real() const;
    bool needs_grad() const;
    std::size_t id() const { return id_; }
    Tape* tape() const { return tape_; }
    bool valid() const { return tape_ != nullptr; }

    /// Real part of a 1x1 node.
    double scalar() const { return value()(0, 0).real(); }

private:
    friend class Tape;
    Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Thrown when backward() reaches a node without an adjoint rule.
class UnregisteredPrimitive : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(CMat value, bool real = false);
    Var variable(CMat value, bool real = false);

    /// Records an op node. `parents` drive needs_grad propagation; the node is
    /// differentiable only if `backward` is set (otherwise backward() throws
    /// when it has to flow gradient through it).
    Var record(std::string op, CMat value, bool real, const std::vector<Var>& parents, Backward backward);

    /// Runs reverse accumulation from a real 1x1 loss node.
    void backward(Var loss);

    /// Raw accumulator dL/d(conj v); zero matrix if nothing reached v.
    CMat raw_grad(Var v) const;

    /// Gradient under the reporting convention (dL/dx for real, dL/d conj z for complex).
    CMat gradient(Var v) const;

    const CMat& value(std::size_t id) const { return nodes_[id].value; }
    const CMat& grad(std::size_t id) const { return nodes_[id].grad; }
    bool is_real(std::size_t id) const { return nodes_[id].real; }
    bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
    const std::string& op(std::size_t id) const { return nodes_[id].op; }
    std::size_t size() const { return nodes_.size(); }

    /// Adds g into the accumulator of node `id` (no-op if it does not need grad).
    void accumulate(std::size_t id, const CMat& g);
    /// Adds g into the sub-block of node `id` starting at (row, col).
    void accumulate_block(std::size_t id, Eigen::Index row, Eigen::Index col, const CMat& g);
    /// Adds column k of g into column cols[k] of node `id`.
    void accumulate_cols(std::size_t id, const std::vector<Eigen::Index>& cols, const CMat& g);

    Var handle(std::size_t id) { return Var(this, id); }

private:
    struct Node {
        std::string op;
        CMat value;
        CMat grad;
        bool real = false;
        bool needs_grad = false;
        bool has_grad = false;
        Backward backward;
    };
    std::vector<Node> nodes_;
};

// ---- primitive ops --------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // matrix product
Var adjoint(Var a);
Var transpose(Var a);
Var conj(Var a);
Var scale(Var a, double k);
Var scale(Var a, cplx k);
/// s * a where s is a 1x1 node (real or complex).
Var smul(Var s, Var a);
/// Adds a constant matrix (no gradient to the constant).
Var add_const(Var a, const CMat& c);
/// ||a||_F^2 as a real 1x1 node.
Var sqnorm(Var a);
/// Entrywise exp(j x) of a real node.
Var exp_j(Var x);
/// Entrywise w / |w|; zero entries map to 1 with zero gradient.
Var unit_modulus(Var a);
/// x = s^{-1} b for Hermitian positive definite s.
Var solve_hpd(Var s, Var b);
/// log det s (natural log) for Hermitian positive definite s, real 1x1.
Var logdet(Var s);
Var block(Var a, Eigen::Index row, Eigen::Index col, Eigen::Index rows, Eigen::Index cols);
Var col(Var a, Eigen::Index j);
/// Columns a[:, idx[k]] in order; repeated indices are allowed.
Var gather_cols(Var a, const std::vector<Eigen::Index>& idx);
Var entry(Var a, Eigen::Index i, Eigen::Index j);
/// Horizontal concatenation of equally tall nodes.
Var hcat(const std::vector<Var>& parts);
/// Value copied as a constant: blocks gradient flow.
Var stop_gradient(Var a);

/// Entrywise exp of a real node (any shape).
Var rexp(Var s);

// real scalar (1x1) helpers
Var rsqrt(Var s);
Var rrecip(Var s);
Var sum(const std::vector<Var>& scalars);

// ---- parameter sets and gradient checking ----------------------------------

struct ParamEntry {
    std::string name;
    CMat value;
    bool real = false;
};

class ParamSet {
public:
    /// Throws std::invalid_argument on duplicate names.
    void add(std::string name, CMat value, bool real);
    const std::vector<ParamEntry>& entries() const { return entries_; }
    std::vector<ParamEntry>& entries() { return entries_; }
    const ParamEntry& at(const std::string& name) const;
    ParamEntry& at(const std::string& name);
    std::size_t size() const { return entries_.size(); }
    /// Number of trainable real scalars (complex entries count twice).
    std::size_t real_dof() const;

private:
    std::vector<ParamEntry> entries_;
};

/// Builds the loss on `tape` from leaf variables, one per ParamSet entry in order.
using LossFn = std::function<Var(Tape& tape, const std::vector<Var>& params)>;

struct GradResult {
    double value = 0.0;
    std::vector<CMat> grads;
};

GradResult backprop(const LossFn& loss_fn, const ParamSet& params);

struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
    double grad_scale = 0.0;
    std::size_t checked = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

struct GradCheckOptions {
    double step = 1e-6;        // relative: h = step * max(1, |x|)
    double tolerance = 1e-6;
    std::size_t max_entries = 0;  // per parameter; 0 checks every entry
    std::uint64_t seed = 0;       // entry sampling when max_entries > 0
};

/// Compares backprop against central finite differences on every real degree of
/// freedom. The per-parameter error is max_i |bp_i - fd_i| / max_i |fd_i|.
GradCheckReport grad_check(const LossFn& loss_fn, const ParamSet& params, const GradCheckOptions& opts = {});

}  // namespace unfold::ad
