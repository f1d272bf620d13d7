#pragma once

// Tape-based reverse-mode differentiation over the handful of tensor
// primitives the reconstruction network needs. Instantiated for float
// (training) and double (gradient checking).

#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "oneseg/tensor.hpp"

namespace oneseg::ad {

template <std::floating_point Real>
class Tape;

template <std::floating_point Real>
class Var {
public:
    Var() = default;
    Var(Tape<Real>* tape, std::size_t id) : tape_(tape), id_(id) {}

    bool valid() const { return tape_ != nullptr; }
    std::size_t id() const { return id_; }
    Tape<Real>& tape() const { return *tape_; }
    const Tensor<Real>& value() const { return tape_->value(id_); }
    const Shape& shape() const { return value().shape(); }

private:
    Tape<Real>* tape_ = nullptr;
    std::size_t id_ = 0;
};

template <std::floating_point Real>
class Tape {
public:
    // Reads grad(node) and accumulates into grad_accumulator(input) for inputs that require grad.
    using Backward = std::function<void(Tape&, std::size_t node)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<Real> constant(Tensor<Real> value);
    Var<Real> parameter(Tensor<Real> value);

    // An empty `backward` marks a primitive without a derivative; reaching it
    // during backward() raises UnsupportedPrimitive.
    Var<Real> record(std::string op, Tensor<Real> value, std::vector<std::size_t> inputs, Backward backward);

    std::size_t size() const { return nodes_.size(); }
    const Tensor<Real>& value(std::size_t id) const { return nodes_.at(id).value; }
    const std::string& op(std::size_t id) const { return nodes_.at(id).op; }
    const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

    // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Gradients from
    // a previous call are discarded first.
    void backward(Var<Real> loss);

    // Gradient of the last backward() pass; zeros for nodes it never reached.
    Tensor<Real> grad(std::size_t id) const;
    Tensor<Real> grad(Var<Real> v) const { return grad(v.id()); }

    // Upstream gradient of a node while its backward rule runs.
    const Tensor<Real>& upstream(std::size_t id) const { return grads_.at(id); }
    Tensor<Real>& grad_accumulator(std::size_t id);

private:
    struct Node {
        std::string op;
        Tensor<Real> value;
        std::vector<std::size_t> inputs;
        Backward backward;
        bool requires_grad = false;
    };

    std::vector<Node> nodes_;
    std::vector<Tensor<Real>> grads_;
};

// --- primitives ------------------------------------------------------------

template <std::floating_point Real> Var<Real> add(Var<Real> a, Var<Real> b);
template <std::floating_point Real> Var<Real> sub(Var<Real> a, Var<Real> b);
template <std::floating_point Real> Var<Real> mul(Var<Real> a, Var<Real> b);
template <std::floating_point Real> Var<Real> scale(Var<Real> a, Real c);
template <std::floating_point Real> Var<Real> sum(Var<Real> a);
template <std::floating_point Real> Var<Real> relu(Var<Real> a);

// x [H,W,Cin], w [K,K,Cin,Cout], b [Cout] -> [ceil(H/s), ceil(W/s), Cout]; zero padding K/2.
template <std::floating_point Real>
Var<Real> conv2d(Var<Real> x, Var<Real> w, Var<Real> b, std::size_t stride);

// x [H,W,1], constant kernels [N,K,K] -> [H,W,N]; reflect padding, no gradient to the kernels.
template <std::floating_point Real>
Var<Real> filter_bank(Var<Real> x, const Tensor<double>& kernels);

// x [H,W,2N] holding (real, imaginary) halves -> sqrt(re^2 + im^2) [H,W,N].
template <std::floating_point Real>
Var<Real> pair_magnitude(Var<Real> x);

// Bilinear resize of [H,W,C] to [h,w,C].
template <std::floating_point Real>
Var<Real> resize(Var<Real> x, std::size_t height, std::size_t width);

// q, k [H,W,C] -> dot products [H,W,P,P] over the window centred on each query pixel.
template <std::floating_point Real>
Var<Real> window_logits(Var<Real> q, Var<Real> k, std::size_t patch);

// Softmax over each pixel's in-bounds taps of an [H,W,P,P] tensor.
template <std::floating_point Real>
Var<Real> window_softmax(Var<Real> logits);

// factors [H,W,P,P], values [H,W,C] -> [H,W,C].
template <std::floating_point Real>
Var<Real> soft_copy(Var<Real> factors, Var<Real> values);

// Mean Huber-smoothed absolute difference; quadratic for |a-b| < delta.
template <std::floating_point Real>
Var<Real> smooth_l1_mean(Var<Real> a, Var<Real> b, Real delta);

// Elementwise step at `level`. Has no derivative.
template <std::floating_point Real>
Var<Real> threshold(Var<Real> x, Real level);

// --- evaluation helpers ----------------------------------------------------

template <std::floating_point Real>
using LossFn = std::function<Var<Real>(Tape<Real>&, std::span<const Var<Real>>)>;

template <std::floating_point Real>
struct ValueAndGrad {
    Real loss = 0;
    std::vector<Tensor<Real>> grads;
};

template <std::floating_point Real>
Real evaluate(const LossFn<Real>& fn, std::span<const Tensor<Real>> params);

template <std::floating_point Real>
ValueAndGrad<Real> value_and_grad(const LossFn<Real>& fn, std::span<const Tensor<Real>> params);

struct FiniteDiffOptions {
    double eps = 1e-6;
    // Above this many coordinates, compare directional derivatives along random probes.
    std::size_t max_coordinates = 512;
    std::size_t probes = 16;
    std::uint64_t seed = 0;
    // When > 0, a coordinate is also differenced with this step and the better
    // agreement counts. A ReLU kink inside +-eps spoils one step, a wrong
    // backward rule spoils both.
    double retry_eps = 0.0;
};

// Largest |analytic - numeric| / max(|analytic|, |numeric|, 1e-12) over all
// coordinates (or probe directions). Central differences.
template <std::floating_point Real>
double finite_diff_check(const LossFn<Real>& fn, std::span<const Tensor<Real>> params,
                         const FiniteDiffOptions& options = {});

}  // namespace oneseg::ad
