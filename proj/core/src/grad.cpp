// SPDX-License-Identifier: Apache-2.0

#include "unfold/grad.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace unfold::ad {

const CMat& Var::value() const { return tape_->value(id_); }
bool Var::is_real() const { return tape_->is_real(id_); }
bool Var::needs_grad() const { return tape_->needs_grad(id_); }

Var Tape::constant(CMat value, bool real)
{
    Node n;
    n.op = "constant";
    n.value = std::move(value);
    n.real = real;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::variable(CMat value, bool real)
{
    Node n;
    n.op = "variable";
    n.value = std::move(value);
    n.real = real;
    n.needs_grad = true;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string op, CMat value, bool real, const std::vector<Var>& parents, Backward backward)
{
    Node n;
    n.op = std::move(op);
    n.value = std::move(value);
    n.real = real;
    for (const Var& p : parents) {
        if (p.tape() != this) {
            throw std::invalid_argument("ad: operand recorded on a different tape");
        }
        n.needs_grad = n.needs_grad || nodes_[p.id()].needs_grad;
    }
    if (n.needs_grad) {
        n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(std::size_t id, const CMat& g)
{
    Node& n = nodes_[id];
    if (!n.needs_grad) {
        return;
    }
    if (!n.has_grad) {
        n.grad = g;
        n.has_grad = true;
    } else {
        n.grad += g;
    }
}

void Tape::accumulate_block(std::size_t id, Eigen::Index row, Eigen::Index col, const CMat& g)
{
    Node& n = nodes_[id];
    if (!n.needs_grad) {
        return;
    }
    if (!n.has_grad) {
        n.grad = CMat::Zero(n.value.rows(), n.value.cols());
        n.has_grad = true;
    }
    n.grad.block(row, col, g.rows(), g.cols()) += g;
}

void Tape::accumulate_cols(std::size_t id, const std::vector<Eigen::Index>& cols, const CMat& g)
{
    Node& n = nodes_[id];
    if (!n.needs_grad) {
        return;
    }
    if (!n.has_grad) {
        n.grad = CMat::Zero(n.value.rows(), n.value.cols());
        n.has_grad = true;
    }
    for (std::size_t k = 0; k < cols.size(); ++k) {
        n.grad.col(cols[k]) += g.col(static_cast<Eigen::Index>(k));
    }
}

void Tape::backward(Var loss)
{
    if (loss.tape() != this) {
        throw std::invalid_argument("ad: loss belongs to another tape");
    }
    const Node& ln = nodes_[loss.id()];
    if (ln.value.rows() != 1 || ln.value.cols() != 1 || !ln.real) {
        throw std::invalid_argument("ad: loss must be a real 1x1 node");
    }
    for (Node& n : nodes_) {
        n.has_grad = false;
        n.grad.resize(0, 0);
    }
    // dL = 2 Re(conj(G) dL) for real L gives G = 1/2.
    accumulate(loss.id(), CMat::Constant(1, 1, cplx(0.5, 0.0)));

    for (std::size_t k = loss.id() + 1; k-- > 0;) {
        Node& n = nodes_[k];
        if (!n.has_grad || !n.needs_grad) {
            continue;
        }
        if (n.real) {
            n.grad = n.grad.real().cast<cplx>();
        }
        if (n.op == "variable") {
            continue;
        }
        if (!n.backward) {
            throw UnregisteredPrimitive("ad: no adjoint registered for op '" + n.op + "'");
        }
        n.backward(*this, k);
    }
}

CMat Tape::raw_grad(Var v) const
{
    const Node& n = nodes_[v.id()];
    if (!n.has_grad) {
        return CMat::Zero(n.value.rows(), n.value.cols());
    }
    return n.grad;
}

CMat Tape::gradient(Var v) const
{
    CMat g = raw_grad(v);
    if (nodes_[v.id()].real) {
        return (2.0 * g.real()).cast<cplx>();
    }
    return g;
}

// ---- primitives ------------------------------------------------------------

namespace {

void require_same_shape(Var a, Var b, const char* op)
{
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError(std::string("ad::") + op + ": shape mismatch");
    }
}

void require_scalar(Var s, const char* op)
{
    if (s.rows() != 1 || s.cols() != 1) {
        throw DimensionError(std::string("ad::") + op + ": expected a 1x1 operand");
    }
}

}  // namespace

Var add(Var a, Var b)
{
    require_same_shape(a, b, "add");
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape()->record("add", a.value() + b.value(), a.is_real() && b.is_real(), {a, b},
                            [ia, ib](Tape& t, std::size_t self) {
                                t.accumulate(ia, t.grad(self));
                                t.accumulate(ib, t.grad(self));
                            });
}

Var sub(Var a, Var b)
{
    require_same_shape(a, b, "sub");
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape()->record("sub", a.value() - b.value(), a.is_real() && b.is_real(), {a, b},
                            [ia, ib](Tape& t, std::size_t self) {
                                t.accumulate(ia, t.grad(self));
                                t.accumulate(ib, -t.grad(self));
                            });
}

Var mul(Var a, Var b)
{
    if (a.cols() != b.rows()) {
        throw DimensionError("ad::mul: inner dimensions differ");
    }
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape()->record("mul", a.value() * b.value(), a.is_real() && b.is_real(), {a, b},
                            [ia, ib](Tape& t, std::size_t self) {
                                const CMat& g = t.grad(self);
                                if (t.needs_grad(ia)) {
                                    t.accumulate(ia, g * t.value(ib).adjoint());
                                }
                                if (t.needs_grad(ib)) {
                                    t.accumulate(ib, t.value(ia).adjoint() * g);
                                }
                            });
}

Var adjoint(Var a)
{
    const std::size_t ia = a.id();
    return a.tape()->record("adjoint", a.value().adjoint(), a.is_real(), {a},
                            [ia](Tape& t, std::size_t self) { t.accumulate(ia, t.grad(self).adjoint()); });
}

Var transpose(Var a)
{
    const std::size_t ia = a.id();
    return a.tape()->record("transpose", a.value().transpose(), a.is_real(), {a},
                            [ia](Tape& t, std::size_t self) { t.accumulate(ia, t.grad(self).transpose()); });
}

Var conj(Var a)
{
    const std::size_t ia = a.id();
    return a.tape()->record("conj", a.value().conjugate(), a.is_real(), {a},
                            [ia](Tape& t, std::size_t self) { t.accumulate(ia, t.grad(self).conjugate()); });
}

Var scale(Var a, double k)
{
    const std::size_t ia = a.id();
    return a.tape()->record("scale", k * a.value(), a.is_real(), {a},
                            [ia, k](Tape& t, std::size_t self) { t.accumulate(ia, k * t.grad(self)); });
}

Var scale(Var a, cplx k)
{
    const std::size_t ia = a.id();
    return a.tape()->record("scale", k * a.value(), a.is_real() && k.imag() == 0.0, {a},
                            [ia, k](Tape& t, std::size_t self) { t.accumulate(ia, std::conj(k) * t.grad(self)); });
}

Var smul(Var s, Var a)
{
    require_scalar(s, "smul");
    const std::size_t is = s.id(), ia = a.id();
    const cplx sv = s.value()(0, 0);
    return a.tape()->record("smul", sv * a.value(), s.is_real() && a.is_real(), {s, a},
                            [is, ia](Tape& t, std::size_t self) {
                                const CMat& g = t.grad(self);
                                if (t.needs_grad(is)) {
                                    // <a, G> = sum conj(a) .* G
                                    const cplx acc = (t.value(ia).conjugate().array() * g.array()).sum();
                                    t.accumulate(is, CMat::Constant(1, 1, acc));
                                }
                                if (t.needs_grad(ia)) {
                                    t.accumulate(ia, std::conj(t.value(is)(0, 0)) * g);
                                }
                            });
}

Var add_const(Var a, const CMat& c)
{
    if (a.rows() != c.rows() || a.cols() != c.cols()) {
        throw DimensionError("ad::add_const: shape mismatch");
    }
    const std::size_t ia = a.id();
    const bool real = a.is_real() && c.imag().isZero(0.0);
    return a.tape()->record("add_const", a.value() + c, real, {a},
                            [ia](Tape& t, std::size_t self) { t.accumulate(ia, t.grad(self)); });
}

Var sqnorm(Var a)
{
    const std::size_t ia = a.id();
    CMat v(1, 1);
    v(0, 0) = a.value().squaredNorm();
    return a.tape()->record("sqnorm", std::move(v), true, {a}, [ia](Tape& t, std::size_t self) {
        const double g = t.grad(self)(0, 0).real();
        t.accumulate(ia, (2.0 * g) * t.value(ia));
    });
}

Var exp_j(Var x)
{
    if (!x.is_real()) {
        throw std::invalid_argument("ad::exp_j: operand must be a real node");
    }
    const std::size_t ix = x.id();
    CMat v = (kJ * x.value().real().cast<cplx>()).array().exp().matrix();
    return x.tape()->record("exp_j", std::move(v), false, {x}, [ix](Tape& t, std::size_t self) {
        // y = exp(jx): G_x = Im(conj(y) G)
        const CMat& y = t.value(self);
        const CMat& g = t.grad(self);
        t.accumulate(ix, (y.conjugate().array() * g.array()).imag().cast<cplx>().matrix());
    });
}

Var unit_modulus(Var a)
{
    const std::size_t ia = a.id();
    const CMat& w = a.value();
    CMat y(w.rows(), w.cols());
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            const double m = std::abs(w(i, j));
            y(i, j) = m > 0.0 ? w(i, j) / m : cplx(1.0, 0.0);
        }
    }
    return a.tape()->record("unit_modulus", std::move(y), false, {a}, [ia](Tape& t, std::size_t self) {
        // G_w = j y Im(conj(y) G) / |w|
        const CMat& w = t.value(ia);
        const CMat& y = t.value(self);
        const CMat& g = t.grad(self);
        CMat gw(w.rows(), w.cols());
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
            for (Eigen::Index i = 0; i < w.rows(); ++i) {
                const double m = std::abs(w(i, j));
                gw(i, j) = m > 0.0 ? kJ * y(i, j) * (std::conj(y(i, j)) * g(i, j)).imag() / m : cplx(0.0, 0.0);
            }
        }
        t.accumulate(ia, gw);
    });
}

Var solve_hpd(Var s, Var b)
{
    const std::size_t is = s.id(), ib = b.id();
    CMat x = unfold::solve_hpd(s.value(), b.value());
    return s.tape()->record("solve_hpd", std::move(x), false, {s, b}, [is, ib](Tape& t, std::size_t self) {
        const CMat gb = unfold::solve_hpd(t.value(is), t.grad(self));
        if (t.needs_grad(is)) {
            t.accumulate(is, -gb * t.value(self).adjoint());
        }
        t.accumulate(ib, gb);
    });
}

Var logdet(Var s)
{
    const std::size_t is = s.id();
    CMat v(1, 1);
    v(0, 0) = logdet_psd(s.value());
    return s.tape()->record("logdet", std::move(v), true, {s}, [is](Tape& t, std::size_t self) {
        const double g = t.grad(self)(0, 0).real();
        const CMat& sv = t.value(is);
        const CMat inv = unfold::solve_hpd(sv, CMat::Identity(sv.rows(), sv.cols()));
        t.accumulate(is, g * inv.adjoint());
    });
}

Var block(Var a, Eigen::Index row, Eigen::Index col, Eigen::Index rows, Eigen::Index cols)
{
    if (row < 0 || col < 0 || row + rows > a.rows() || col + cols > a.cols()) {
        throw DimensionError("ad::block: out of range");
    }
    const std::size_t ia = a.id();
    return a.tape()->record("block", a.value().block(row, col, rows, cols), a.is_real(), {a},
                            [ia, row, col](Tape& t, std::size_t self) {
                                t.accumulate_block(ia, row, col, t.grad(self));
                            });
}

Var col(Var a, Eigen::Index j) { return block(a, 0, j, a.rows(), 1); }

Var entry(Var a, Eigen::Index i, Eigen::Index j) { return block(a, i, j, 1, 1); }

Var gather_cols(Var a, const std::vector<Eigen::Index>& idx)
{
    CMat v(a.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
        if (idx[k] < 0 || idx[k] >= a.cols()) {
            throw DimensionError("ad::gather_cols: index out of range");
        }
        v.col(static_cast<Eigen::Index>(k)) = a.value().col(idx[k]);
    }
    const std::size_t ia = a.id();
    return a.tape()->record("gather_cols", std::move(v), a.is_real(), {a},
                            [ia, idx](Tape& t, std::size_t self) { t.accumulate_cols(ia, idx, t.grad(self)); });
}

Var hcat(const std::vector<Var>& parts)
{
    if (parts.empty()) {
        throw std::invalid_argument("ad::hcat: no operands");
    }
    const Eigen::Index rows = parts.front().rows();
    Eigen::Index cols = 0;
    bool real = true;
    for (const Var& p : parts) {
        if (p.rows() != rows) {
            throw DimensionError("ad::hcat: row counts differ");
        }
        cols += p.cols();
        real = real && p.is_real();
    }
    CMat v(rows, cols);
    std::vector<std::size_t> ids;
    std::vector<Eigen::Index> widths;
    Eigen::Index c = 0;
    for (const Var& p : parts) {
        v.middleCols(c, p.cols()) = p.value();
        c += p.cols();
        ids.push_back(p.id());
        widths.push_back(p.cols());
    }
    return parts.front().tape()->record("hcat", std::move(v), real, parts,
                                        [ids, widths](Tape& t, std::size_t self) {
                                            Eigen::Index c0 = 0;
                                            for (std::size_t k = 0; k < ids.size(); ++k) {
                                                t.accumulate(ids[k], t.grad(self).middleCols(c0, widths[k]));
                                                c0 += widths[k];
                                            }
                                        });
}

Var stop_gradient(Var a) { return a.tape()->constant(a.value(), a.is_real()); }

Var rexp(Var s)
{
    const std::size_t is = s.id();
    CMat v = s.value().real().array().exp().matrix().cast<cplx>();
    return s.tape()->record("rexp", std::move(v), true, {s}, [is](Tape& t, std::size_t self) {
        t.accumulate(is, t.value(self).cwiseProduct(t.grad(self)));
    });
}

Var rsqrt(Var s)
{
    require_scalar(s, "rsqrt");
    const std::size_t is = s.id();
    const double x = s.value()(0, 0).real();
    if (!(x > 0.0)) {
        throw NumericError("ad::rsqrt: non-positive operand");
    }
    CMat v(1, 1);
    v(0, 0) = std::sqrt(x);
    return s.tape()->record("rsqrt", std::move(v), true, {s}, [is](Tape& t, std::size_t self) {
        t.accumulate(is, t.grad(self) / (2.0 * t.value(self)(0, 0).real()));
    });
}

Var rrecip(Var s)
{
    require_scalar(s, "rrecip");
    const std::size_t is = s.id();
    const double x = s.value()(0, 0).real();
    if (x == 0.0) {
        throw NumericError("ad::rrecip: division by zero");
    }
    CMat v(1, 1);
    v(0, 0) = 1.0 / x;
    return s.tape()->record("rrecip", std::move(v), true, {s}, [is](Tape& t, std::size_t self) {
        const double y = t.value(self)(0, 0).real();
        t.accumulate(is, -(y * y) * t.grad(self));
    });
}

Var sum(const std::vector<Var>& scalars)
{
    if (scalars.empty()) {
        throw std::invalid_argument("ad::sum: no operands");
    }
    cplx acc = 0.0;
    bool real = true;
    std::vector<std::size_t> ids;
    for (const Var& s : scalars) {
        require_scalar(s, "sum");
        acc += s.value()(0, 0);
        real = real && s.is_real();
        ids.push_back(s.id());
    }
    CMat v(1, 1);
    v(0, 0) = acc;
    return scalars.front().tape()->record("sum", std::move(v), real, scalars, [ids](Tape& t, std::size_t self) {
        for (std::size_t id : ids) {
            t.accumulate(id, t.grad(self));
        }
    });
}

// ---- ParamSet ---------------------------------------------------------------

void ParamSet::add(std::string name, CMat value, bool real)
{
    for (const ParamEntry& e : entries_) {
        if (e.name == name) {
            throw std::invalid_argument("ParamSet: duplicate parameter '" + name + "'");
        }
    }
    if (real) {
        value = value.real().cast<cplx>();
    }
    entries_.push_back({std::move(name), std::move(value), real});
}

const ParamEntry& ParamSet::at(const std::string& name) const
{
    for (const ParamEntry& e : entries_) {
        if (e.name == name) {
            return e;
        }
    }
    throw std::out_of_range("ParamSet: no parameter '" + name + "'");
}

ParamEntry& ParamSet::at(const std::string& name)
{
    return const_cast<ParamEntry&>(static_cast<const ParamSet&>(*this).at(name));
}

std::size_t ParamSet::real_dof() const
{
    std::size_t n = 0;
    for (const ParamEntry& e : entries_) {
        n += static_cast<std::size_t>(e.value.size()) * (e.real ? 1u : 2u);
    }
    return n;
}

// ---- backprop / grad_check --------------------------------------------------

GradResult backprop(const LossFn& loss_fn, const ParamSet& params)
{
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(params.size());
    for (const ParamEntry& e : params.entries()) {
        leaves.push_back(tape.variable(e.value, e.real));
    }
    Var loss = loss_fn(tape, leaves);
    tape.backward(loss);

    GradResult out;
    out.value = loss.scalar();
    for (const Var& v : leaves) {
        out.grads.push_back(tape.gradient(v));
    }
    return out;
}

namespace {

double eval_loss(const LossFn& loss_fn, const ParamSet& params)
{
    Tape tape;
    std::vector<Var> leaves;
    for (const ParamEntry& e : params.entries()) {
        leaves.push_back(tape.constant(e.value, e.real));
    }
    return loss_fn(tape, leaves).scalar();
}

}  // namespace

GradCheckReport grad_check(const LossFn& loss_fn, const ParamSet& params, const GradCheckOptions& opts)
{
    const GradResult bp = backprop(loss_fn, params);
    ParamSet work = params;

    GradCheckReport report;
    report.tolerance = opts.tolerance;
    std::mt19937_64 rng(opts.seed);

    for (std::size_t p = 0; p < params.size(); ++p) {
        ParamEntry& entry = work.entries()[p];
        const Eigen::Index n = entry.value.size();

        std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
        std::iota(idx.begin(), idx.end(), Eigen::Index{0});
        if (opts.max_entries > 0 && idx.size() > opts.max_entries) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(opts.max_entries);
            std::sort(idx.begin(), idx.end());
        }

        std::vector<cplx> fd_vals;
        std::vector<cplx> bp_vals;
        for (Eigen::Index k : idx) {
            cplx& x = entry.value.data()[k];
            const cplx x0 = x;
            const double h = opts.step * std::max(1.0, std::abs(x0));

            x = x0 + h;
            const double fp = eval_loss(loss_fn, work);
            x = x0 - h;
            const double fm = eval_loss(loss_fn, work);
            const double d_re = (fp - fm) / (2.0 * h);

            double d_im = 0.0;
            if (!entry.real) {
                x = x0 + cplx(0.0, h);
                const double gp = eval_loss(loss_fn, work);
                x = x0 - cplx(0.0, h);
                const double gm = eval_loss(loss_fn, work);
                d_im = (gp - gm) / (2.0 * h);
            }
            x = x0;

            // complex: dL/d(conj z) = (dL/da + j dL/db) / 2
            fd_vals.push_back(entry.real ? cplx(d_re, 0.0) : cplx(0.5 * d_re, 0.5 * d_im));
            bp_vals.push_back(bp.grads[p].data()[k]);
        }

        GradCheckEntry ge;
        ge.name = entry.name;
        ge.checked = idx.size();
        double diff = 0.0;
        for (std::size_t i = 0; i < fd_vals.size(); ++i) {
            ge.grad_scale = std::max(ge.grad_scale, std::abs(fd_vals[i]));
            diff = std::max(diff, std::abs(fd_vals[i] - bp_vals[i]));
        }
        ge.max_rel_error = ge.grad_scale > 0.0 ? diff / ge.grad_scale : diff;
        report.max_rel_error = std::max(report.max_rel_error, ge.max_rel_error);
        report.entries.push_back(ge);
    }
    report.passed = report.max_rel_error < opts.tolerance;
    return report;
}

}  // namespace unfold::ad
