#include "tts/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace tts::ad {

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto e : shape) {
        n *= e;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) {
            s += "x";
        }
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(Shape s, std::vector<double> v, bool rg)
    : shape(std::move(s)), value(std::move(v)), requires_grad(rg) {
    for (auto e : shape) {
        if (e <= 0) {
            throw std::invalid_argument("tensor extents must be positive, got " + shape_str(shape));
        }
    }
    if (numel(shape) != static_cast<std::int64_t>(value.size())) {
        throw std::invalid_argument("tensor data length " + std::to_string(value.size()) +
                                    " does not match shape " + shape_str(shape));
    }
}

double Tensor::scalar() const {
    if (!is_scalar()) {
        throw std::invalid_argument("expected scalar tensor, got shape " + shape_str(shape));
    }
    return value[0];
}

std::int64_t Tensor::rows() const {
    if (shape.size() != 2) {
        throw std::invalid_argument("rows(): tensor is not 2-D, shape " + shape_str(shape));
    }
    return shape[0];
}

std::int64_t Tensor::cols() const {
    if (shape.size() != 2) {
        throw std::invalid_argument("cols(): tensor is not 2-D, shape " + shape_str(shape));
    }
    return shape[1];
}

void Tensor::ensure_grad() {
    if (grad.size() != value.size()) {
        grad.assign(value.size(), 0.0);
    }
}

void Tensor::accumulate_grad(const double* g, std::int64_t n) {
    if (n != size()) {
        throw std::invalid_argument("gradient length " + std::to_string(n) +
                                    " does not match tensor of shape " + shape_str(shape));
    }
    ensure_grad();
    for (std::int64_t i = 0; i < n; ++i) {
        grad[static_cast<std::size_t>(i)] += g[i];
    }
}

TensorPtr make_tensor(Shape shape, std::vector<double> value, bool requires_grad) {
    return std::make_shared<Tensor>(std::move(shape), std::move(value), requires_grad);
}

TensorPtr zeros(Shape shape, bool requires_grad) {
    auto n = numel(shape);
    return make_tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0),
                       requires_grad);
}

TensorPtr full(Shape shape, double v, bool requires_grad) {
    auto n = numel(shape);
    return make_tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), v),
                       requires_grad);
}

TensorPtr scalar_tensor(double v) {
    return make_tensor({1}, {v}, false);
}

TensorPtr randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
    auto n = numel(shape);
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) {
        x = stddev * rng.normal();
    }
    return make_tensor(std::move(shape), std::move(v), requires_grad);
}

TensorPtr xavier_uniform(Shape shape, std::int64_t fan_in, std::int64_t fan_out, Rng& rng,
                         bool requires_grad) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    auto n = numel(shape);
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) {
        x = rng.uniform(-limit, limit);
    }
    return make_tensor(std::move(shape), std::move(v), requires_grad);
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() {
    return g_grad_enabled;
}

NoGrad::NoGrad() : prev_(g_grad_enabled) {
    g_grad_enabled = false;
}

NoGrad::~NoGrad() {
    g_grad_enabled = prev_;
}

std::vector<Tensor*> topo_order(const TensorPtr& root) {
    std::vector<Tensor*> order;
    std::unordered_set<Tensor*> visited;
    // iterative DFS; traces can be tens of thousands of nodes deep
    struct Frame {
        Tensor* node;
        std::size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({root.get(), 0});
    visited.insert(root.get());
    while (!stack.empty()) {
        Tensor* node = stack.back().node;
        const std::size_t next = stack.back().next_parent;
        if (next < node->parents.size()) {
            stack.back().next_parent = next + 1;
            Tensor* p = node->parents[next].get(); // push may reallocate the stack
            if (visited.insert(p).second) {
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order; // parents before users
}

void backward(const TensorPtr& loss, bool release_trace) {
    if (!loss->is_scalar()) {
        throw std::invalid_argument("backward() requires a scalar loss, got shape " +
                                    shape_str(loss->shape));
    }
    auto order = topo_order(loss);
    loss->ensure_grad();
    loss->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Tensor* node = *it;
        if (node->backward_fn && !node->grad.empty()) {
            node->backward_fn(*node);
        }
    }
    if (release_trace) {
        for (Tensor* node : order) {
            node->parents.clear();
            node->backward_fn = nullptr;
            if (!node->requires_grad) {
                node->grad.clear();
            }
        }
    }
}

namespace {

double rel_err(double analytic, double numeric) {
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-12});
    return std::fabs(analytic - numeric) / denom;
}

double central_difference(const std::function<TensorPtr()>& f, Tensor& x, std::size_t i,
                          double eps) {
    const double saved = x.value[i];
    NoGrad ng;
    x.value[i] = saved + eps;
    const double up = f()->scalar();
    x.value[i] = saved - eps;
    const double down = f()->scalar();
    x.value[i] = saved;
    return (up - down) / (2.0 * eps);
}

} // namespace

double grad_check(const std::function<TensorPtr()>& f, const TensorPtr& x, double eps) {
    if (eps <= 0) {
        throw std::invalid_argument("grad_check: eps must be positive");
    }
    const bool saved_rg = x->requires_grad;
    x->requires_grad = true;
    x->grad.clear();
    auto y = f();
    if (!y->is_scalar()) {
        x->requires_grad = saved_rg;
        throw std::invalid_argument("grad_check: function output must be scalar, got shape " +
                                    shape_str(y->shape));
    }
    backward(y);
    std::vector<double> analytic = x->grad.empty()
                                       ? std::vector<double>(x->value.size(), 0.0)
                                       : x->grad;
    double worst = 0.0;
    for (std::size_t i = 0; i < x->value.size(); ++i) {
        const double numeric = central_difference(f, *x, i, eps);
        worst = std::max(worst, rel_err(analytic[i], numeric));
    }
    x->requires_grad = saved_rg;
    x->grad.clear();
    return worst;
}

double grad_check_sampled(const std::function<TensorPtr()>& f, const std::vector<TensorPtr>& xs,
                          std::int64_t samples, Rng& rng, double eps) {
    if (eps <= 0) {
        throw std::invalid_argument("grad_check_sampled: eps must be positive");
    }
    for (auto& x : xs) {
        x->grad.clear();
    }
    auto y = f();
    if (!y->is_scalar()) {
        throw std::invalid_argument("grad_check_sampled: function output must be scalar");
    }
    backward(y);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(xs.size());
    for (auto& x : xs) {
        analytic.push_back(x->grad.empty() ? std::vector<double>(x->value.size(), 0.0) : x->grad);
    }
    std::int64_t total = 0;
    for (auto& x : xs) {
        total += x->size();
    }
    const double center = y->scalar();
    double worst = 0.0;
    std::int64_t skipped = 0;
    for (std::int64_t s = 0; s < samples; ++s) {
        std::int64_t flat = static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(total)));
        std::size_t which = 0;
        while (flat >= xs[which]->size()) {
            flat -= xs[which]->size();
            ++which;
        }
        Tensor& x = *xs[which];
        const auto i = static_cast<std::size_t>(flat);
        const double saved = x.value[i];
        double up, down;
        {
            NoGrad ng;
            x.value[i] = saved + eps;
            up = f()->scalar();
            x.value[i] = saved - eps;
            down = f()->scalar();
            x.value[i] = saved;
        }
        // central differencing assumes smoothness across [x-eps, x+eps];
        // a relu kink inside the window makes the one-sided slopes disagree,
        // in which case the sample is not a valid probe
        const double slope_r = (up - center) / eps;
        const double slope_l = (center - down) / eps;
        const double scale = std::max({std::fabs(slope_l), std::fabs(slope_r), 1.0});
        if (std::fabs(slope_r - slope_l) > 0.05 * scale) {
            ++skipped;
            if (skipped > samples / 10) {
                throw std::runtime_error(
                    "grad_check_sampled: too many non-smooth sample points");
            }
            continue;
        }
        const double numeric = (up - down) / (2.0 * eps);
        // differences below the finite-difference noise floor carry no
        // signal about the backward pass
        const double atol = 1e-7 * std::max(1.0, std::fabs(center));
        if (std::fabs(analytic[which][i] - numeric) <= atol) {
            continue;
        }
        worst = std::max(worst, rel_err(analytic[which][i], numeric));
    }
    for (auto& x : xs) {
        x->grad.clear();
    }
    return worst;
}

} // namespace tts::ad
