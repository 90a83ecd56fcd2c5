#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tts/rng.hpp"

namespace tts::ad {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

/// Dense row-major tensor of doubles. Doubles as a node in the reverse-mode
/// trace: `parents` + `backward_fn` form the recorded operation, and a
/// reverse-topological walk from a scalar loss propagates gradients.
class Tensor {
public:
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad; // empty until first accumulation
    bool requires_grad = false;
    std::string name; // non-empty for named parameters

    // trace; populated only while gradients are enabled
    std::vector<TensorPtr> parents;
    std::function<void(Tensor&)> backward_fn;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> v, bool rg = false);

    std::int64_t size() const { return static_cast<std::int64_t>(value.size()); }
    std::int64_t rank() const { return static_cast<std::int64_t>(shape.size()); }
    bool is_scalar() const { return value.size() == 1; }
    double scalar() const;

    std::int64_t rows() const;
    std::int64_t cols() const;

    void ensure_grad();
    void zero_grad() { grad.assign(grad.size(), 0.0); }
    void accumulate_grad(const double* g, std::int64_t n);
};

TensorPtr make_tensor(Shape shape, std::vector<double> value, bool requires_grad = false);
TensorPtr zeros(Shape shape, bool requires_grad = false);
TensorPtr full(Shape shape, double v, bool requires_grad = false);
TensorPtr scalar_tensor(double v);
TensorPtr randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);
/// Uniform Xavier/Glorot init with explicit fan counts.
TensorPtr xavier_uniform(Shape shape, std::int64_t fan_in, std::int64_t fan_out, Rng& rng,
                         bool requires_grad = true);

/// Thread-local switch: while disabled, ops compute values only and record
/// no trace (used for inference and for finite-difference re-evaluations).
bool grad_enabled();

class NoGrad {
public:
    NoGrad();
    ~NoGrad();
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;

private:
    bool prev_;
};

/// Topologically ordered trace reachable from `root` (parents before users).
/// Each node appears exactly once.
std::vector<Tensor*> topo_order(const TensorPtr& root);

/// Reverse pass from a scalar loss. Populates `grad` on every reachable
/// tensor with requires_grad. When `release_trace` is set (default), parent
/// links and closures are dropped afterwards so the graph frees iteratively.
void backward(const TensorPtr& loss, bool release_trace = true);

/// Max relative error between analytic gradient of f at x and central finite
/// differences, over all components of x. f must return a scalar tensor and
/// must re-read x->value on each call.
double grad_check(const std::function<TensorPtr()>& f, const TensorPtr& x, double eps = 1e-5);

/// Same check restricted to `samples` randomly chosen components of each
/// tensor in `xs`; used for whole-model checks where exhaustive differencing
/// is too slow.
double grad_check_sampled(const std::function<TensorPtr()>& f, const std::vector<TensorPtr>& xs,
                          std::int64_t samples, Rng& rng, double eps = 1e-5);

} // namespace tts::ad
