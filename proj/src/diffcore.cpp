#include "oneseg/diffcore.hpp"

#include <cmath>
#include <memory>
#include <random>

#include "oneseg/kernels.hpp"

namespace oneseg::ad {

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

template <std::floating_point Real>
Var<Real> Tape<Real>::constant(Tensor<Real> value) {
    nodes_.push_back(Node{"constant", std::move(value), {}, {}, false});
    return Var<Real>(this, nodes_.size() - 1);
}

template <std::floating_point Real>
Var<Real> Tape<Real>::parameter(Tensor<Real> value) {
    nodes_.push_back(Node{"parameter", std::move(value), {}, {}, true});
    return Var<Real>(this, nodes_.size() - 1);
}

template <std::floating_point Real>
Var<Real> Tape<Real>::record(std::string op, Tensor<Real> value, std::vector<std::size_t> inputs,
                             Backward backward) {
    bool needs = false;
    for (auto id : inputs) {
        if (id >= nodes_.size()) throw std::logic_error("tape input refers to a future node");
        needs = needs || nodes_[id].requires_grad;
    }
    if (!needs) backward = nullptr;
    nodes_.push_back(Node{std::move(op), std::move(value), std::move(inputs), std::move(backward), needs});
    return Var<Real>(this, nodes_.size() - 1);
}

template <std::floating_point Real>
void Tape<Real>::backward(Var<Real> loss) {
    if (&loss.tape() != this) throw std::logic_error("loss belongs to another tape");
    const auto& lv = value(loss.id());
    if (lv.size() != 1) throw ValidationError("backward() needs a scalar loss, got " + shape_string(lv.shape()));
    grads_.assign(nodes_.size(), Tensor<Real>());
    grads_[loss.id()] = Tensor<Real>(lv.shape(), Real{1});
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
        const Node& n = nodes_[id];
        if (!n.requires_grad || n.inputs.empty() || grads_[id].empty()) continue;
        if (!n.backward) throw UnsupportedPrimitive(n.op);
        n.backward(*this, id);
    }
}

template <std::floating_point Real>
Tensor<Real> Tape<Real>::grad(std::size_t id) const {
    if (id < grads_.size() && !grads_[id].empty()) return grads_[id];
    return Tensor<Real>(value(id).shape(), Real{0});
}

template <std::floating_point Real>
Tensor<Real>& Tape<Real>::grad_accumulator(std::size_t id) {
    auto& g = grads_.at(id);
    if (g.empty()) g = Tensor<Real>(value(id).shape(), Real{0});
    return g;
}

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

namespace {

template <std::floating_point Real>
void require_same_tape(Var<Real> a, Var<Real> b, const char* op) {
    if (!a.valid() || !b.valid() || &a.tape() != &b.tape()) {
        throw std::logic_error(std::string(op) + ": operands must live on the same tape");
    }
}

template <std::floating_point Real>
void require_same_shape(Var<Real> a, Var<Real> b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ValidationError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                              shape_string(b.shape()));
    }
}

template <std::floating_point Real>
void require_rank(Var<Real> a, std::size_t rank, const char* op) {
    if (a.shape().size() != rank) {
        throw ValidationError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                              shape_string(a.shape()));
    }
}

// Gradient sink for an input: the accumulator when it needs a gradient, otherwise empty.
template <std::floating_point Real>
std::span<Real> sink(Tape<Real>& t, std::size_t id) {
    if (!t.requires_grad(id)) return {};
    return t.grad_accumulator(id).data();
}

kernels::WindowGeometry window_of(const Shape& s) {
    return kernels::WindowGeometry{s[0], s[1], s[2]};
}

template <std::floating_point Real>
void require_window(Var<Real> w, const char* op) {
    require_rank(w, 4, op);
    if (w.shape()[2] != w.shape()[3] || w.shape()[2] % 2 == 0) {
        throw ValidationError(std::string(op) + ": window tensor must be [H,W,P,P] with odd P");
    }
}

}  // namespace

template <std::floating_point Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
    require_same_tape(a, b, "add");
    require_same_shape(a, b, "add");
    Tensor<Real> out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return a.tape().record("add", std::move(out), {a.id(), b.id()}, [](Tape<Real>& t, std::size_t n) {
        const auto& g = t.upstream(n);
        for (auto in : t.inputs(n)) {
            auto s = sink(t, in);
            for (std::size_t i = 0; i < s.size(); ++i) s[i] += g[i];
        }
    });
}

template <std::floating_point Real>
Var<Real> sub(Var<Real> a, Var<Real> b) {
    require_same_tape(a, b, "sub");
    require_same_shape(a, b, "sub");
    Tensor<Real> out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return a.tape().record("sub", std::move(out), {a.id(), b.id()}, [](Tape<Real>& t, std::size_t n) {
        const auto& g = t.upstream(n);
        auto sa = sink(t, t.inputs(n)[0]);
        for (std::size_t i = 0; i < sa.size(); ++i) sa[i] += g[i];
        auto sb = sink(t, t.inputs(n)[1]);
        for (std::size_t i = 0; i < sb.size(); ++i) sb[i] -= g[i];
    });
}

template <std::floating_point Real>
Var<Real> mul(Var<Real> a, Var<Real> b) {
    require_same_tape(a, b, "mul");
    require_same_shape(a, b, "mul");
    Tensor<Real> out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return a.tape().record("mul", std::move(out), {a.id(), b.id()}, [](Tape<Real>& t, std::size_t n) {
        const auto& g = t.upstream(n);
        const auto ia = t.inputs(n)[0];
        const auto ib = t.inputs(n)[1];
        auto sa = sink(t, ia);
        for (std::size_t i = 0; i < sa.size(); ++i) sa[i] += g[i] * t.value(ib)[i];
        auto sb = sink(t, ib);
        for (std::size_t i = 0; i < sb.size(); ++i) sb[i] += g[i] * t.value(ia)[i];
    });
}

template <std::floating_point Real>
Var<Real> scale(Var<Real> a, Real c) {
    Tensor<Real> out = a.value();
    for (auto& v : out.data()) v *= c;
    return a.tape().record("scale", std::move(out), {a.id()}, [c](Tape<Real>& t, std::size_t n) {
        const auto& g = t.upstream(n);
        auto s = sink(t, t.inputs(n)[0]);
        for (std::size_t i = 0; i < s.size(); ++i) s[i] += c * g[i];
    });
}

template <std::floating_point Real>
Var<Real> sum(Var<Real> a) {
    Real total = 0;
    for (Real v : a.value().data()) total += v;
    return a.tape().record("sum", Tensor<Real>({1}, total), {a.id()}, [](Tape<Real>& t, std::size_t n) {
        const Real g = t.upstream(n)[0];
        for (auto& v : sink(t, t.inputs(n)[0])) v += g;
    });
}

template <std::floating_point Real>
Var<Real> relu(Var<Real> a) {
    Tensor<Real> out = a.value();
    for (auto& v : out.data()) v = v > Real{0} ? v : Real{0};
    return a.tape().record("relu", std::move(out), {a.id()}, [](Tape<Real>& t, std::size_t n) {
        const auto& g = t.upstream(n);
        const auto in = t.inputs(n)[0];
        const auto& x = t.value(in);
        auto s = sink(t, in);
        for (std::size_t i = 0; i < s.size(); ++i)
            if (x[i] > Real{0}) s[i] += g[i];
    });
}

template <std::floating_point Real>
Var<Real> conv2d(Var<Real> x, Var<Real> w, Var<Real> b, std::size_t stride) {
    require_same_tape(x, w, "conv2d");
    require_same_tape(x, b, "conv2d");
    require_rank(x, 3, "conv2d");
    require_rank(w, 4, "conv2d");
    require_rank(b, 1, "conv2d");
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    const std::size_t K = ws[0];
    if (ws[1] != K || K % 2 == 0) throw ValidationError("conv2d: kernel must be square with odd size");
    if (ws[2] != xs[2]) {
        throw ValidationError("conv2d: input has " + std::to_string(xs[2]) + " channels, kernel expects " +
                              std::to_string(ws[2]));
    }
    if (b.shape()[0] != ws[3]) throw ValidationError("conv2d: bias length does not match output channels");
    if (stride < 1) throw ValidationError("conv2d: stride must be >= 1");
    const std::size_t H = xs[0], W = xs[1], cin = xs[2], cout = ws[3];
    Tensor<Real> out({kernels::conv_output_size(H, K, stride), kernels::conv_output_size(W, K, stride), cout});
    kernels::conv2d_forward<Real>(x.value().data(), H, W, cin, w.value().data(), b.value().data(), cout, K, stride,
                                  out.data());
    return x.tape().record(
        "conv2d", std::move(out), {x.id(), w.id(), b.id()},
        [H, W, cin, cout, K, stride](Tape<Real>& t, std::size_t n) {
            const auto ix = t.inputs(n)[0], iw = t.inputs(n)[1], ib = t.inputs(n)[2];
            std::vector<Real> scratch_w, scratch_b;
            std::span<Real> gw = sink(t, iw);
            std::span<Real> gb = sink(t, ib);
            if (gw.empty()) {
                scratch_w.assign(t.value(iw).size(), Real{0});
                gw = scratch_w;
            }
            if (gb.empty()) {
                scratch_b.assign(t.value(ib).size(), Real{0});
                gb = scratch_b;
            }
            kernels::conv2d_backward<Real>(t.value(ix).data(), H, W, cin, t.value(iw).data(), cout, K, stride,
                                           t.upstream(n).data(), sink(t, ix), gw, gb);
        });
}

template <std::floating_point Real>
Var<Real> filter_bank(Var<Real> x, const Tensor<double>& kernels) {
    require_rank(x, 3, "filter_bank");
    if (x.shape()[2] != 1) throw ValidationError("filter_bank: input must have one channel");
    if (kernels.rank() != 3 || kernels.dim(1) != kernels.dim(2) || kernels.dim(1) % 2 == 0) {
        throw ValidationError("filter_bank: kernels must be [N,K,K] with odd K");
    }
    const std::size_t H = x.shape()[0], W = x.shape()[1], N = kernels.dim(0), K = kernels.dim(1);
    auto bank = std::make_shared<const Tensor<double>>(kernels);
    Tensor<Real> out({H, W, N});
    kernels::filter_bank_forward<Real>(x.value().data(), H, W, bank->data(), N, K, out.data());
    return x.tape().record("filter_bank", std::move(out), {x.id()}, [bank, H, W, N, K](Tape<Real>& t, std::size_t n) {
        kernels::filter_bank_backward<Real>(t.upstream(n).data(), H, W, bank->data(), N, K, sink(t, t.inputs(n)[0]));
    });
}

template <std::floating_point Real>
Var<Real> pair_magnitude(Var<Real> x) {
    require_rank(x, 3, "pair_magnitude");
    const std::size_t H = x.shape()[0], W = x.shape()[1], C2 = x.shape()[2];
    if (C2 % 2 != 0) throw ValidationError("pair_magnitude: channel count must be even");
    const std::size_t N = C2 / 2;
    Tensor<Real> out({H, W, N});
    const auto& xv = x.value();
    for (std::size_t p = 0; p < H * W; ++p)
        for (std::size_t c = 0; c < N; ++c) {
            const Real re = xv[p * C2 + c], im = xv[p * C2 + N + c];
            out[p * N + c] = std::sqrt(re * re + im * im);
        }
    return x.tape().record("pair_magnitude", std::move(out), {x.id()}, [H, W, N](Tape<Real>& t, std::size_t n) {
        const auto in = t.inputs(n)[0];
        const auto& xv = t.value(in);
        const auto& m = t.value(n);
        const auto& g = t.upstream(n);
        auto s = sink(t, in);
        for (std::size_t p = 0; p < H * W; ++p)
            for (std::size_t c = 0; c < N; ++c) {
                const Real mag = m[p * N + c];
                if (mag == Real{0}) continue;
                const Real gg = g[p * N + c] / mag;
                s[p * 2 * N + c] += gg * xv[p * 2 * N + c];
                s[p * 2 * N + N + c] += gg * xv[p * 2 * N + N + c];
            }
    });
}

template <std::floating_point Real>
Var<Real> resize(Var<Real> x, std::size_t height, std::size_t width) {
    require_rank(x, 3, "resize");
    if (height < 1 || width < 1) throw ValidationError("resize: target must be at least 1x1");
    const std::size_t H = x.shape()[0], W = x.shape()[1], C = x.shape()[2];
    Tensor<Real> out({height, width, C});
    kernels::resize_forward<Real>(x.value().data(), H, W, C, height, width, out.data());
    return x.tape().record("resize", std::move(out), {x.id()}, [H, W, C, height, width](Tape<Real>& t, std::size_t n) {
        kernels::resize_backward<Real>(t.upstream(n).data(), H, W, C, height, width, sink(t, t.inputs(n)[0]));
    });
}

template <std::floating_point Real>
Var<Real> window_logits(Var<Real> q, Var<Real> k, std::size_t patch) {
    require_same_tape(q, k, "window_logits");
    require_rank(q, 3, "window_logits");
    require_same_shape(q, k, "window_logits");
    if (patch % 2 == 0) throw ValidationError("window_logits: patch size must be odd");
    const kernels::WindowGeometry g{q.shape()[0], q.shape()[1], patch};
    const std::size_t C = q.shape()[2];
    Tensor<Real> out({g.height, g.width, patch, patch});
    kernels::window_logits_forward<Real>(q.value().data(), k.value().data(), g, C, out.data());
    return q.tape().record("window_logits", std::move(out), {q.id(), k.id()}, [g, C](Tape<Real>& t, std::size_t n) {
        const auto iq = t.inputs(n)[0], ik = t.inputs(n)[1];
        auto gq = sink(t, iq);
        auto gk = sink(t, ik);
        kernels::window_logits_backward<Real>(t.value(iq).data(), t.value(ik).data(), g, C, t.upstream(n).data(), gq,
                                              gk);
    });
}

template <std::floating_point Real>
Var<Real> window_softmax(Var<Real> logits) {
    require_window(logits, "window_softmax");
    const auto g = window_of(logits.shape());
    Tensor<Real> out(logits.shape());
    kernels::window_softmax_forward<Real>(logits.value().data(), g, out.data());
    return logits.tape().record("window_softmax", std::move(out), {logits.id()}, [g](Tape<Real>& t, std::size_t n) {
        kernels::window_softmax_backward<Real>(t.value(n).data(), g, t.upstream(n).data(), sink(t, t.inputs(n)[0]));
    });
}

template <std::floating_point Real>
Var<Real> soft_copy(Var<Real> factors, Var<Real> values) {
    require_same_tape(factors, values, "soft_copy");
    require_window(factors, "soft_copy");
    require_rank(values, 3, "soft_copy");
    const auto g = window_of(factors.shape());
    if (values.shape()[0] != g.height || values.shape()[1] != g.width) {
        throw ValidationError("soft_copy: value grid " + shape_string(values.shape()) + " does not match factors " +
                              shape_string(factors.shape()));
    }
    const std::size_t C = values.shape()[2];
    Tensor<Real> out({g.height, g.width, C});
    kernels::soft_copy_forward<Real>(factors.value().data(), values.value().data(), g, C, out.data());
    return factors.tape().record("soft_copy", std::move(out), {factors.id(), values.id()},
                                 [g, C](Tape<Real>& t, std::size_t n) {
                                     const auto i_f = t.inputs(n)[0], i_v = t.inputs(n)[1];
                                     auto gf = sink(t, i_f);
                                     auto gv = sink(t, i_v);
                                     kernels::soft_copy_backward<Real>(t.value(i_f).data(), t.value(i_v).data(), g, C,
                                                                       t.upstream(n).data(), gf, gv);
                                 });
}

template <std::floating_point Real>
Var<Real> smooth_l1_mean(Var<Real> a, Var<Real> b, Real delta) {
    require_same_tape(a, b, "smooth_l1_mean");
    require_same_shape(a, b, "smooth_l1_mean");
    if (!(delta > Real{0})) throw ValidationError("smooth_l1_mean: delta must be positive");
    const auto& av = a.value();
    const auto& bv = b.value();
    const std::size_t N = av.size();
    Real total = 0;
    for (std::size_t i = 0; i < N; ++i) {
        const Real r = std::abs(av[i] - bv[i]);
        total += r < delta ? r * r / (Real{2} * delta) : r - delta / Real{2};
    }
    return a.tape().record("smooth_l1_mean", Tensor<Real>({1}, total / static_cast<Real>(N)), {a.id(), b.id()},
                           [delta, N](Tape<Real>& t, std::size_t n) {
                               const auto ia = t.inputs(n)[0], ib = t.inputs(n)[1];
                               const auto& av = t.value(ia);
                               const auto& bv = t.value(ib);
                               const Real g = t.upstream(n)[0] / static_cast<Real>(N);
                               auto sa = sink(t, ia);
                               auto sb = sink(t, ib);
                               for (std::size_t i = 0; i < N; ++i) {
                                   const Real r = av[i] - bv[i];
                                   Real d;
                                   if (std::abs(r) < delta) d = r / delta;
                                   else d = r > Real{0} ? Real{1} : Real{-1};
                                   if (!sa.empty()) sa[i] += g * d;
                                   if (!sb.empty()) sb[i] -= g * d;
                               }
                           });
}

template <std::floating_point Real>
Var<Real> threshold(Var<Real> x, Real level) {
    Tensor<Real> out = x.value();
    for (auto& v : out.data()) v = v >= level ? Real{1} : Real{0};
    return x.tape().record("threshold", std::move(out), {x.id()}, nullptr);
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

template <std::floating_point Real>
Real evaluate(const LossFn<Real>& fn, std::span<const Tensor<Real>> params) {
    Tape<Real> tape;
    std::vector<Var<Real>> vars;
    vars.reserve(params.size());
    for (const auto& p : params) vars.push_back(tape.parameter(p));
    const Var<Real> loss = fn(tape, vars);
    if (loss.value().size() != 1) throw ValidationError("loss function must return a scalar");
    return loss.value()[0];
}

template <std::floating_point Real>
ValueAndGrad<Real> value_and_grad(const LossFn<Real>& fn, std::span<const Tensor<Real>> params) {
    Tape<Real> tape;
    std::vector<Var<Real>> vars;
    vars.reserve(params.size());
    for (const auto& p : params) vars.push_back(tape.parameter(p));
    const Var<Real> loss = fn(tape, vars);
    tape.backward(loss);
    ValueAndGrad<Real> out;
    out.loss = loss.value()[0];
    for (const auto& v : vars) out.grads.push_back(tape.grad(v));
    return out;
}

template <std::floating_point Real>
double finite_diff_check(const LossFn<Real>& fn, std::span<const Tensor<Real>> params,
                         const FiniteDiffOptions& options) {
    if (!(options.eps > 0.0)) throw ValidationError("finite_diff_check: eps must be positive");
    const auto analytic = value_and_grad(fn, params);
    if (!std::isfinite(static_cast<double>(analytic.loss))) {
        throw ValidationError("finite_diff_check: loss is not finite");
    }
    std::vector<Tensor<Real>> work(params.begin(), params.end());
    const Real eps = static_cast<Real>(options.eps);

    auto eval = [&]() {
        const double f = static_cast<double>(evaluate(fn, std::span<const Tensor<Real>>(work)));
        if (!std::isfinite(f)) throw ValidationError("finite_diff_check: perturbed loss is not finite");
        return f;
    };
    auto rel_error = [](double a, double b) {
        return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
    };

    std::size_t total = 0;
    for (const auto& p : params) total += p.size();

    double worst = 0.0;
    if (total <= options.max_coordinates) {
        for (std::size_t p = 0; p < work.size(); ++p) {
            for (std::size_t i = 0; i < work[p].size(); ++i) {
                const Real orig = work[p][i];
                auto central = [&](Real h) {
                    work[p][i] = orig + h;
                    const double fp = eval();
                    work[p][i] = orig - h;
                    const double fm = eval();
                    work[p][i] = orig;
                    return (fp - fm) / (2.0 * static_cast<double>(h));
                };
                const double a = static_cast<double>(analytic.grads[p][i]);
                double err = rel_error(a, central(eps));
                if (options.retry_eps > 0.0) err = std::min(err, rel_error(a, central(static_cast<Real>(options.retry_eps))));
                worst = std::max(worst, err);
            }
        }
        return worst;
    }

    std::mt19937_64 rng(options.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t probe = 0; probe < options.probes; ++probe) {
        std::vector<std::vector<double>> dir(work.size());
        double norm2 = 0.0;
        for (std::size_t p = 0; p < work.size(); ++p) {
            dir[p].resize(work[p].size());
            for (auto& d : dir[p]) {
                d = normal(rng);
                norm2 += d * d;
            }
        }
        const double inv = 1.0 / std::sqrt(norm2);
        double directional = 0.0;
        for (std::size_t p = 0; p < work.size(); ++p)
            for (std::size_t i = 0; i < dir[p].size(); ++i) {
                dir[p][i] *= inv;
                directional += static_cast<double>(analytic.grads[p][i]) * dir[p][i];
            }
        auto shift = [&](double sgn) {
            for (std::size_t p = 0; p < work.size(); ++p)
                for (std::size_t i = 0; i < dir[p].size(); ++i)
                    work[p][i] = static_cast<Real>(static_cast<double>(params[p][i]) +
                                                   sgn * static_cast<double>(eps) * dir[p][i]);
        };
        shift(1.0);
        const double fp = eval();
        shift(-1.0);
        const double fm = eval();
        for (std::size_t p = 0; p < work.size(); ++p) work[p] = params[p];
        const double numeric = (fp - fm) / (2.0 * static_cast<double>(eps));
        worst = std::max(worst, rel_error(directional, numeric));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Instantiations
// ---------------------------------------------------------------------------

#define ONESEG_INSTANTIATE(R)                                                                                 \
    template class Tape<R>;                                                                                   \
    template Var<R> add(Var<R>, Var<R>);                                                                      \
    template Var<R> sub(Var<R>, Var<R>);                                                                      \
    template Var<R> mul(Var<R>, Var<R>);                                                                      \
    template Var<R> scale(Var<R>, R);                                                                         \
    template Var<R> sum(Var<R>);                                                                              \
    template Var<R> relu(Var<R>);                                                                             \
    template Var<R> conv2d(Var<R>, Var<R>, Var<R>, std::size_t);                                              \
    template Var<R> filter_bank(Var<R>, const Tensor<double>&);                                               \
    template Var<R> pair_magnitude(Var<R>);                                                                   \
    template Var<R> resize(Var<R>, std::size_t, std::size_t);                                                 \
    template Var<R> window_logits(Var<R>, Var<R>, std::size_t);                                               \
    template Var<R> window_softmax(Var<R>);                                                                   \
    template Var<R> soft_copy(Var<R>, Var<R>);                                                                \
    template Var<R> smooth_l1_mean(Var<R>, Var<R>, R);                                                        \
    template Var<R> threshold(Var<R>, R);                                                                     \
    template R evaluate(const LossFn<R>&, std::span<const Tensor<R>>);                                        \
    template ValueAndGrad<R> value_and_grad(const LossFn<R>&, std::span<const Tensor<R>>);                    \
    template double finite_diff_check(const LossFn<R>&, std::span<const Tensor<R>>, const FiniteDiffOptions&);

ONESEG_INSTANTIATE(float)
ONESEG_INSTANTIATE(double)

#undef ONESEG_INSTANTIATE

}  // namespace oneseg::ad
