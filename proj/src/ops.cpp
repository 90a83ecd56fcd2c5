#include "tts/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tts/linalg.hpp"

namespace tts::ad {

namespace {

using std::int64_t;

void check_same_shape(const char* op, const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch: " + shape_str(a->shape) +
                                    " vs " + shape_str(b->shape));
    }
}

TensorPtr node(Shape shape, std::vector<double> value, std::vector<TensorPtr> parents,
               std::function<void(Tensor&)> bw) {
    bool need = false;
    if (grad_enabled()) {
        for (const auto& p : parents) {
            if (p && p->requires_grad) {
                need = true;
                break;
            }
        }
    }
    auto t = make_tensor(std::move(shape), std::move(value), need);
    if (need) {
        parents.erase(std::remove_if(parents.begin(), parents.end(),
                                     [](const TensorPtr& p) { return p == nullptr; }),
                      parents.end());
        t->parents = std::move(parents);
        t->backward_fn = std::move(bw);
    }
    return t;
}

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) {
                continue;
            }
            const double* brow = b + p * n;
            double* crow = c + i * n;
            for (int64_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        for (int64_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double s = 0.0;
            for (int64_t p = 0; p < k; ++p) {
                s += arow[p] * brow[p];
            }
            c[i * n + j] += s;
        }
    }
}

// C[m x n] += A[k x m]^T * B[k x n]
void gemm_tn(const double* a, const double* b, double* c, int64_t k, int64_t m, int64_t n) {
    for (int64_t p = 0; p < k; ++p) {
        const double* arow = a + p * m;
        const double* brow = b + p * n;
        for (int64_t i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) {
                continue;
            }
            double* crow = c + i * n;
            for (int64_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

double stable_sigmoid(double x) {
    if (x >= 0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double stable_softplus(double x) {
    return std::log1p(std::exp(-std::fabs(x))) + std::max(x, 0.0);
}

TensorPtr unary(const TensorPtr& a, double (*fwd)(double),
                const std::function<void(const Tensor&, const Tensor&, Tensor&)>& bw) {
    std::vector<double> v(a->value.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = fwd(a->value[i]);
    }
    auto pa = a;
    return node(a->shape, std::move(v), {a}, [pa, bw](Tensor& out) {
        if (pa->requires_grad) {
            bw(*pa, out, *pa);
        }
    });
}

} // namespace

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape("add", a, b);
    std::vector<double> v(a->value.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = a->value[i] + b->value[i];
    }
    auto pa = a, pb = b;
    return node(a->shape, std::move(v), {a, b}, [pa, pb](Tensor& out) {
        if (pa->requires_grad) {
            pa->accumulate_grad(out.grad.data(), out.size());
        }
        if (pb->requires_grad) {
            pb->accumulate_grad(out.grad.data(), out.size());
        }
    });
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape("sub", a, b);
    std::vector<double> v(a->value.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = a->value[i] - b->value[i];
    }
    auto pa = a, pb = b;
    return node(a->shape, std::move(v), {a, b}, [pa, pb](Tensor& out) {
        if (pa->requires_grad) {
            pa->accumulate_grad(out.grad.data(), out.size());
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < out.grad.size(); ++i) {
                pb->grad[i] -= out.grad[i];
            }
        }
    });
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape("mul", a, b);
    std::vector<double> v(a->value.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = a->value[i] * b->value[i];
    }
    auto pa = a, pb = b;
    return node(a->shape, std::move(v), {a, b}, [pa, pb](Tensor& out) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < out.grad.size(); ++i) {
                pa->grad[i] += out.grad[i] * pb->value[i];
            }
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < out.grad.size(); ++i) {
                pb->grad[i] += out.grad[i] * pa->value[i];
            }
        }
    });
}

TensorPtr scale(const TensorPtr& a, double k) {
    std::vector<double> v(a->value.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = a->value[i] * k;
    }
    auto pa = a;
    return node(a->shape, std::move(v), {a}, [pa, k](Tensor& out) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < out.grad.size(); ++i) {
                pa->grad[i] += out.grad[i] * k;
            }
        }
    });
}

TensorPtr add_scalar(const TensorPtr& a, double k) {
    std::vector<double> v(a->value.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = a->value[i] + k;
    }
    auto pa = a;
    return node(a->shape, std::move(v), {a}, [pa](Tensor& out) {
        if (pa->requires_grad) {
            pa->accumulate_grad(out.grad.data(), out.size());
        }
    });
}

TensorPtr tanh_op(const TensorPtr& a) {
    return unary(a, [](double x) { return std::tanh(x); },
                 [](const Tensor&, const Tensor& out, Tensor& pa) {
                     pa.ensure_grad();
                     for (std::size_t i = 0; i < out.grad.size(); ++i) {
                         const double y = out.value[i];
                         pa.grad[i] += out.grad[i] * (1.0 - y * y);
                     }
                 });
}

TensorPtr sigmoid(const TensorPtr& a) {
    return unary(a, &stable_sigmoid, [](const Tensor&, const Tensor& out, Tensor& pa) {
        pa.ensure_grad();
        for (std::size_t i = 0; i < out.grad.size(); ++i) {
            const double y = out.value[i];
            pa.grad[i] += out.grad[i] * y * (1.0 - y);
        }
    });
}

TensorPtr relu(const TensorPtr& a) {
    return unary(a, [](double x) { return x > 0 ? x : 0.0; },
                 [](const Tensor& in, const Tensor& out, Tensor& pa) {
                     pa.ensure_grad();
                     for (std::size_t i = 0; i < out.grad.size(); ++i) {
                         if (in.value[i] > 0) {
                             pa.grad[i] += out.grad[i];
                         }
                     }
                 });
}

TensorPtr exp_op(const TensorPtr& a) {
    return unary(a, [](double x) { return std::exp(x); },
                 [](const Tensor&, const Tensor& out, Tensor& pa) {
                     pa.ensure_grad();
                     for (std::size_t i = 0; i < out.grad.size(); ++i) {
                         pa.grad[i] += out.grad[i] * out.value[i];
                     }
                 });
}

TensorPtr softplus(const TensorPtr& a) {
    return unary(a, &stable_softplus, [](const Tensor& in, const Tensor& out, Tensor& pa) {
        pa.ensure_grad();
        for (std::size_t i = 0; i < out.grad.size(); ++i) {
            pa.grad[i] += out.grad[i] * stable_sigmoid(in.value[i]);
        }
    });
}

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    if (a->rank() != 2 || b->rank() != 2 || a->cols() != b->rows()) {
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a->shape) + " vs " +
                                    shape_str(b->shape));
    }
    const int64_t m = a->rows(), k = a->cols(), n = b->cols();
    std::vector<double> v(static_cast<std::size_t>(m * n), 0.0);
    gemm_nn(a->value.data(), b->value.data(), v.data(), m, k, n);
    auto pa = a, pb = b;
    return node({m, n}, std::move(v), {a, b}, [pa, pb, m, k, n](Tensor& out) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            gemm_nt(out.grad.data(), pb->value.data(), pa->grad.data(), m, n, k);
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            gemm_tn(pa->value.data(), out.grad.data(), pb->grad.data(), m, k, n);
        }
    });
}

TensorPtr linear(const TensorPtr& x, const TensorPtr& w, const TensorPtr& bias) {
    if (x->rank() != 2 || w->rank() != 2 || x->cols() != w->cols()) {
        throw std::invalid_argument("linear: incompatible shapes x=" + shape_str(x->shape) +
                                    " w=" + shape_str(w->shape));
    }
    const int64_t m = x->rows(), k = x->cols(), n = w->rows();
    if (bias && (bias->rank() != 1 || bias->size() != n)) {
        throw std::invalid_argument("linear: bias shape " + shape_str(bias->shape) +
                                    " does not match output width " + std::to_string(n));
    }
    std::vector<double> v(static_cast<std::size_t>(m * n), 0.0);
    gemm_nt(x->value.data(), w->value.data(), v.data(), m, k, n);
    if (bias) {
        for (int64_t i = 0; i < m; ++i) {
            for (int64_t j = 0; j < n; ++j) {
                v[static_cast<std::size_t>(i * n + j)] += bias->value[static_cast<std::size_t>(j)];
            }
        }
    }
    auto px = x, pw = w, pb = bias;
    return node({m, n}, std::move(v), {x, w, bias}, [px, pw, pb, m, k, n](Tensor& out) {
        if (px->requires_grad) {
            px->ensure_grad();
            gemm_nn(out.grad.data(), pw->value.data(), px->grad.data(), m, n, k);
        }
        if (pw->requires_grad) {
            pw->ensure_grad();
            gemm_tn(out.grad.data(), px->value.data(), pw->grad.data(), m, n, k);
        }
        if (pb && pb->requires_grad) {
            pb->ensure_grad();
            for (int64_t i = 0; i < m; ++i) {
                for (int64_t j = 0; j < n; ++j) {
                    pb->grad[static_cast<std::size_t>(j)] +=
                        out.grad[static_cast<std::size_t>(i * n + j)];
                }
            }
        }
    });
}

TensorPtr matvec(const TensorPtr& m, const TensorPtr& v) {
    if (m->rank() != 2 || v->rank() != 1 || m->cols() != v->size()) {
        throw std::invalid_argument("matvec: incompatible shapes " + shape_str(m->shape) + " vs " +
                                    shape_str(v->shape));
    }
    const int64_t r = m->rows(), c = m->cols();
    std::vector<double> y(static_cast<std::size_t>(r), 0.0);
    for (int64_t i = 0; i < r; ++i) {
        const double* row = m->value.data() + i * c;
        double s = 0.0;
        for (int64_t j = 0; j < c; ++j) {
            s += row[j] * v->value[static_cast<std::size_t>(j)];
        }
        y[static_cast<std::size_t>(i)] = s;
    }
    auto pm = m, pv = v;
    return node({r}, std::move(y), {m, v}, [pm, pv, r, c](Tensor& out) {
        if (pm->requires_grad) {
            pm->ensure_grad();
            for (int64_t i = 0; i < r; ++i) {
                const double g = out.grad[static_cast<std::size_t>(i)];
                if (g == 0.0) {
                    continue;
                }
                double* grow = pm->grad.data() + i * c;
                for (int64_t j = 0; j < c; ++j) {
                    grow[j] += g * pv->value[static_cast<std::size_t>(j)];
                }
            }
        }
        if (pv->requires_grad) {
            pv->ensure_grad();
            for (int64_t i = 0; i < r; ++i) {
                const double g = out.grad[static_cast<std::size_t>(i)];
                if (g == 0.0) {
                    continue;
                }
                const double* row = pm->value.data() + i * c;
                for (int64_t j = 0; j < c; ++j) {
                    pv->grad[static_cast<std::size_t>(j)] += g * row[j];
                }
            }
        }
    });
}

TensorPtr vecmat(const TensorPtr& v, const TensorPtr& m) {
    if (m->rank() != 2 || v->rank() != 1 || m->rows() != v->size()) {
        throw std::invalid_argument("vecmat: incompatible shapes " + shape_str(v->shape) + " vs " +
                                    shape_str(m->shape));
    }
    const int64_t r = m->rows(), c = m->cols();
    std::vector<double> y(static_cast<std::size_t>(c), 0.0);
    for (int64_t i = 0; i < r; ++i) {
        const double w = v->value[static_cast<std::size_t>(i)];
        if (w == 0.0) {
            continue;
        }
        const double* row = m->value.data() + i * c;
        for (int64_t j = 0; j < c; ++j) {
            y[static_cast<std::size_t>(j)] += w * row[j];
        }
    }
    auto pm = m, pv = v;
    return node({c}, std::move(y), {v, m}, [pm, pv, r, c](Tensor& out) {
        if (pv->requires_grad) {
            pv->ensure_grad();
            for (int64_t i = 0; i < r; ++i) {
                const double* row = pm->value.data() + i * c;
                double s = 0.0;
                for (int64_t j = 0; j < c; ++j) {
                    s += out.grad[static_cast<std::size_t>(j)] * row[j];
                }
                pv->grad[static_cast<std::size_t>(i)] += s;
            }
        }
        if (pm->requires_grad) {
            pm->ensure_grad();
            for (int64_t i = 0; i < r; ++i) {
                const double w = pv->value[static_cast<std::size_t>(i)];
                if (w == 0.0) {
                    continue;
                }
                double* grow = pm->grad.data() + i * c;
                for (int64_t j = 0; j < c; ++j) {
                    grow[j] += w * out.grad[static_cast<std::size_t>(j)];
                }
            }
        }
    });
}

TensorPtr add_rows(const TensorPtr& x, const TensorPtr& rowvec) {
    if (x->rank() != 2 || rowvec->rank() != 1 || x->cols() != rowvec->size()) {
        throw std::invalid_argument("add_rows: incompatible shapes " + shape_str(x->shape) +
                                    " vs " + shape_str(rowvec->shape));
    }
    const int64_t m = x->rows(), n = x->cols();
    std::vector<double> v(x->value);
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            v[static_cast<std::size_t>(i * n + j)] += rowvec->value[static_cast<std::size_t>(j)];
        }
    }
    auto px = x, pr = rowvec;
    return node(x->shape, std::move(v), {x, rowvec}, [px, pr, m, n](Tensor& out) {
        if (px->requires_grad) {
            px->accumulate_grad(out.grad.data(), out.size());
        }
        if (pr->requires_grad) {
            pr->ensure_grad();
            for (int64_t i = 0; i < m; ++i) {
                for (int64_t j = 0; j < n; ++j) {
                    pr->grad[static_cast<std::size_t>(j)] +=
                        out.grad[static_cast<std::size_t>(i * n + j)];
                }
            }
        }
    });
}

TensorPtr log_abs_det(const TensorPtr& w) {
    if (w->rank() != 2 || w->rows() != w->cols()) {
        throw std::invalid_argument("log_abs_det: matrix must be square, got " +
                                    shape_str(w->shape));
    }
    const int64_t n = w->rows();
    double ld, sign;
    if (!la::log_abs_det(w->value, n, ld, sign)) {
        throw std::runtime_error("log_abs_det: singular matrix");
    }
    std::vector<double> inv;
    if (grad_enabled() && w->requires_grad) {
        if (!la::invert(w->value, n, inv)) {
            throw std::runtime_error("log_abs_det: singular matrix");
        }
    }
    auto pw = w;
    return node({1}, {ld}, {w}, [pw, n, inv = std::move(inv)](Tensor& out) {
        if (pw->requires_grad) {
            pw->ensure_grad();
            const double g = out.grad[0];
            for (int64_t i = 0; i < n; ++i) {
                for (int64_t j = 0; j < n; ++j) {
                    // d log|det W| / dW = W^{-T}
                    pw->grad[static_cast<std::size_t>(i * n + j)] +=
                        g * inv[static_cast<std::size_t>(j * n + i)];
                }
            }
        }
    });
}

TensorPtr concat(const std::vector<TensorPtr>& parts, int axis) {
    if (parts.empty()) {
        throw std::invalid_argument("concat: no inputs");
    }
    const auto rank = parts[0]->rank();
    if (rank == 1) {
        if (axis != 0) {
            throw std::invalid_argument("concat: axis out of range for 1-D input");
        }
        int64_t total = 0;
        for (const auto& p : parts) {
            if (p->rank() != 1) {
                throw std::invalid_argument("concat: mixed ranks");
            }
            total += p->size();
        }
        std::vector<double> v;
        v.reserve(static_cast<std::size_t>(total));
        for (const auto& p : parts) {
            v.insert(v.end(), p->value.begin(), p->value.end());
        }
        auto ps = parts;
        return node({total}, std::move(v), parts, [ps](Tensor& out) {
            std::size_t off = 0;
            for (const auto& p : ps) {
                if (p->requires_grad) {
                    p->accumulate_grad(out.grad.data() + off, p->size());
                }
                off += p->value.size();
            }
        });
    }
    if (rank != 2 || (axis != 0 && axis != 1)) {
        throw std::invalid_argument("concat: only 1-D and 2-D supported");
    }
    if (axis == 0) {
        const int64_t n = parts[0]->cols();
        int64_t m = 0;
        for (const auto& p : parts) {
            if (p->rank() != 2 || p->cols() != n) {
                throw std::invalid_argument("concat axis 0: column mismatch: " +
                                            shape_str(parts[0]->shape) + " vs " +
                                            shape_str(p->shape));
            }
            m += p->rows();
        }
        std::vector<double> v;
        v.reserve(static_cast<std::size_t>(m * n));
        for (const auto& p : parts) {
            v.insert(v.end(), p->value.begin(), p->value.end());
        }
        auto ps = parts;
        return node({m, n}, std::move(v), parts, [ps](Tensor& out) {
            std::size_t off = 0;
            for (const auto& p : ps) {
                if (p->requires_grad) {
                    p->accumulate_grad(out.grad.data() + off, p->size());
                }
                off += p->value.size();
            }
        });
    }
    // axis == 1
    const int64_t m = parts[0]->rows();
    int64_t n = 0;
    for (const auto& p : parts) {
        if (p->rank() != 2 || p->rows() != m) {
            throw std::invalid_argument("concat axis 1: row mismatch: " +
                                        shape_str(parts[0]->shape) + " vs " + shape_str(p->shape));
        }
        n += p->cols();
    }
    std::vector<double> v(static_cast<std::size_t>(m * n));
    int64_t coff = 0;
    for (const auto& p : parts) {
        const int64_t pc = p->cols();
        for (int64_t i = 0; i < m; ++i) {
            std::copy_n(p->value.data() + i * pc, pc, v.data() + i * n + coff);
        }
        coff += pc;
    }
    auto ps = parts;
    return node({m, n}, std::move(v), parts, [ps, m, n](Tensor& out) {
        int64_t off = 0;
        for (const auto& p : ps) {
            const int64_t pc = p->cols();
            if (p->requires_grad) {
                p->ensure_grad();
                for (int64_t i = 0; i < m; ++i) {
                    for (int64_t j = 0; j < pc; ++j) {
                        p->grad[static_cast<std::size_t>(i * pc + j)] +=
                            out.grad[static_cast<std::size_t>(i * n + off + j)];
                    }
                }
            }
            off += pc;
        }
    });
}

TensorPtr slice(const TensorPtr& x, int axis, std::int64_t start, std::int64_t len) {
    if (len <= 0 || start < 0) {
        throw std::invalid_argument("slice: bad range");
    }
    if (x->rank() == 1) {
        if (axis != 0 || start + len > x->size()) {
            throw std::invalid_argument("slice: out of range on " + shape_str(x->shape));
        }
        std::vector<double> v(x->value.begin() + start, x->value.begin() + start + len);
        auto px = x;
        return node({len}, std::move(v), {x}, [px, start, len](Tensor& out) {
            if (px->requires_grad) {
                px->ensure_grad();
                for (int64_t i = 0; i < len; ++i) {
                    px->grad[static_cast<std::size_t>(start + i)] +=
                        out.grad[static_cast<std::size_t>(i)];
                }
            }
        });
    }
    if (x->rank() != 2 || (axis != 0 && axis != 1)) {
        throw std::invalid_argument("slice: only 1-D and 2-D supported");
    }
    const int64_t m = x->rows(), n = x->cols();
    if (axis == 0) {
        if (start + len > m) {
            throw std::invalid_argument("slice: row range out of bounds on " + shape_str(x->shape));
        }
        std::vector<double> v(x->value.begin() + start * n, x->value.begin() + (start + len) * n);
        auto px = x;
        return node({len, n}, std::move(v), {x}, [px, start, len, n](Tensor& out) {
            if (px->requires_grad) {
                px->ensure_grad();
                for (int64_t i = 0; i < len * n; ++i) {
                    px->grad[static_cast<std::size_t>(start * n + i)] +=
                        out.grad[static_cast<std::size_t>(i)];
                }
            }
        });
    }
    if (start + len > n) {
        throw std::invalid_argument("slice: column range out of bounds on " + shape_str(x->shape));
    }
    std::vector<double> v(static_cast<std::size_t>(m * len));
    for (int64_t i = 0; i < m; ++i) {
        std::copy_n(x->value.data() + i * n + start, len, v.data() + i * len);
    }
    auto px = x;
    return node({m, len}, std::move(v), {x}, [px, start, len, m, n](Tensor& out) {
        if (px->requires_grad) {
            px->ensure_grad();
            for (int64_t i = 0; i < m; ++i) {
                for (int64_t j = 0; j < len; ++j) {
                    px->grad[static_cast<std::size_t>(i * n + start + j)] +=
                        out.grad[static_cast<std::size_t>(i * len + j)];
                }
            }
        }
    });
}

TensorPtr row(const TensorPtr& x, std::int64_t r) {
    if (x->rank() != 2 || r < 0 || r >= x->rows()) {
        throw std::invalid_argument("row: index " + std::to_string(r) + " out of range on " +
                                    shape_str(x->shape));
    }
    const int64_t n = x->cols();
    std::vector<double> v(x->value.begin() + r * n, x->value.begin() + (r + 1) * n);
    auto px = x;
    return node({n}, std::move(v), {x}, [px, r, n](Tensor& out) {
        if (px->requires_grad) {
            px->ensure_grad();
            for (int64_t j = 0; j < n; ++j) {
                px->grad[static_cast<std::size_t>(r * n + j)] +=
                    out.grad[static_cast<std::size_t>(j)];
            }
        }
    });
}

TensorPtr stack_rows(const std::vector<TensorPtr>& rows) {
    if (rows.empty()) {
        throw std::invalid_argument("stack_rows: no inputs");
    }
    const int64_t n = rows[0]->size();
    const int64_t m = static_cast<int64_t>(rows.size());
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(m * n));
    for (const auto& r : rows) {
        if (r->rank() != 1 || r->size() != n) {
            throw std::invalid_argument("stack_rows: row shape mismatch: " +
                                        shape_str(rows[0]->shape) + " vs " + shape_str(r->shape));
        }
        v.insert(v.end(), r->value.begin(), r->value.end());
    }
    auto ps = rows;
    return node({m, n}, std::move(v), rows, [ps, n](Tensor& out) {
        std::size_t off = 0;
        for (const auto& r : ps) {
            if (r->requires_grad) {
                r->accumulate_grad(out.grad.data() + off, n);
            }
            off += static_cast<std::size_t>(n);
        }
    });
}

TensorPtr stack_cols(const std::vector<TensorPtr>& cols) {
    if (cols.empty()) {
        throw std::invalid_argument("stack_cols: no inputs");
    }
    const int64_t m = cols[0]->size();
    const int64_t k = static_cast<int64_t>(cols.size());
    std::vector<double> v(static_cast<std::size_t>(m * k));
    for (int64_t j = 0; j < k; ++j) {
        if (cols[static_cast<std::size_t>(j)]->rank() != 1 ||
            cols[static_cast<std::size_t>(j)]->size() != m) {
            throw std::invalid_argument("stack_cols: column shape mismatch");
        }
        for (int64_t i = 0; i < m; ++i) {
            v[static_cast<std::size_t>(i * k + j)] =
                cols[static_cast<std::size_t>(j)]->value[static_cast<std::size_t>(i)];
        }
    }
    auto ps = cols;
    return node({m, k}, std::move(v), cols, [ps, m, k](Tensor& out) {
        for (int64_t j = 0; j < k; ++j) {
            const auto& c = ps[static_cast<std::size_t>(j)];
            if (!c->requires_grad) {
                continue;
            }
            c->ensure_grad();
            for (int64_t i = 0; i < m; ++i) {
                c->grad[static_cast<std::size_t>(i)] +=
                    out.grad[static_cast<std::size_t>(i * k + j)];
            }
        }
    });
}

TensorPtr flatten(const TensorPtr& x) {
    return reshape(x, {x->size()});
}

TensorPtr reshape(const TensorPtr& x, Shape shape) {
    if (numel(shape) != x->size()) {
        throw std::invalid_argument("reshape: element count mismatch: " + shape_str(x->shape) +
                                    " -> " + shape_str(shape));
    }
    std::vector<double> v(x->value);
    auto px = x;
    return node(std::move(shape), std::move(v), {x}, [px](Tensor& out) {
        if (px->requires_grad) {
            px->accumulate_grad(out.grad.data(), out.size());
        }
    });
}

TensorPtr sum(const TensorPtr& x) {
    double s = 0.0;
    for (double v : x->value) {
        s += v;
    }
    auto px = x;
    return node({1}, {s}, {x}, [px](Tensor& out) {
        if (px->requires_grad) {
            px->ensure_grad();
            const double g = out.grad[0];
            for (auto& gv : px->grad) {
                gv += g;
            }
        }
    });
}

TensorPtr mean(const TensorPtr& x) {
    const double n = static_cast<double>(x->size());
    double s = 0.0;
    for (double v : x->value) {
        s += v;
    }
    auto px = x;
    return node({1}, {s / n}, {x}, [px, n](Tensor& out) {
        if (px->requires_grad) {
            px->ensure_grad();
            const double g = out.grad[0] / n;
            for (auto& gv : px->grad) {
                gv += g;
            }
        }
    });
}

TensorPtr cumsum(const TensorPtr& x) {
    if (x->rank() != 1) {
        throw std::invalid_argument("cumsum: expected 1-D input, got " + shape_str(x->shape));
    }
    std::vector<double> v(x->value.size());
    double run = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        run += x->value[i];
        v[i] = run;
    }
    auto px = x;
    return node(x->shape, std::move(v), {x}, [px](Tensor& out) {
        if (px->requires_grad) {
            px->ensure_grad();
            double suffix = 0.0;
            for (std::size_t i = out.grad.size(); i-- > 0;) {
                suffix += out.grad[i];
                px->grad[i] += suffix;
            }
        }
    });
}

TensorPtr mse(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape("mse", a, b);
    const double n = static_cast<double>(a->size());
    double s = 0.0;
    for (std::size_t i = 0; i < a->value.size(); ++i) {
        const double d = a->value[i] - b->value[i];
        s += d * d;
    }
    auto pa = a, pb = b;
    return node({1}, {s / n}, {a, b}, [pa, pb, n](Tensor& out) {
        const double g = out.grad[0] * 2.0 / n;
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < pa->value.size(); ++i) {
                pa->grad[i] += g * (pa->value[i] - pb->value[i]);
            }
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < pb->value.size(); ++i) {
                pb->grad[i] -= g * (pa->value[i] - pb->value[i]);
            }
        }
    });
}

TensorPtr sum_sq_err(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape("sum_sq_err", a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < a->value.size(); ++i) {
        const double d = a->value[i] - b->value[i];
        s += d * d;
    }
    auto pa = a, pb = b;
    return node({1}, {s}, {a, b}, [pa, pb](Tensor& out) {
        const double g = out.grad[0] * 2.0;
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < pa->value.size(); ++i) {
                pa->grad[i] += g * (pa->value[i] - pb->value[i]);
            }
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < pb->value.size(); ++i) {
                pb->grad[i] -= g * (pa->value[i] - pb->value[i]);
            }
        }
    });
}

namespace {

TensorPtr bce_impl(const TensorPtr& logits, const std::vector<double>& targets, double pos_weight,
                   bool average) {
    if (targets.size() != logits->value.size()) {
        throw std::invalid_argument("bce_with_logits: target count " +
                                    std::to_string(targets.size()) + " != logit count " +
                                    std::to_string(logits->value.size()));
    }
    const double norm = average ? static_cast<double>(logits->size()) : 1.0;
    double s = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const double z = logits->value[i];
        const double y = targets[i];
        s += pos_weight * y * stable_softplus(-z) + (1.0 - y) * stable_softplus(z);
    }
    auto pz = logits;
    auto ts = targets;
    return node({1}, {s / norm}, {logits}, [pz, ts, pos_weight, norm](Tensor& out) {
        if (pz->requires_grad) {
            pz->ensure_grad();
            const double g = out.grad[0] / norm;
            for (std::size_t i = 0; i < ts.size(); ++i) {
                const double z = pz->value[i];
                const double y = ts[i];
                pz->grad[i] += g * (-pos_weight * y * stable_sigmoid(-z) +
                                    (1.0 - y) * stable_sigmoid(z));
            }
        }
    });
}

} // namespace

TensorPtr bce_with_logits(const TensorPtr& logits, const std::vector<double>& targets,
                          double pos_weight) {
    return bce_impl(logits, targets, pos_weight, true);
}

TensorPtr bce_with_logits_sum(const TensorPtr& logits, const std::vector<double>& targets,
                              double pos_weight) {
    return bce_impl(logits, targets, pos_weight, false);
}

TensorPtr softmax(const TensorPtr& x, int axis) {
    for (double v : x->value) {
        if (std::isnan(v)) {
            throw std::invalid_argument("softmax: NaN input");
        }
    }
    int64_t lines, len, stride, line_stride;
    if (x->rank() == 1) {
        if (axis != 0) {
            throw std::invalid_argument("softmax: axis out of range for 1-D input");
        }
        lines = 1;
        len = x->size();
        stride = 1;
        line_stride = 0;
    } else if (x->rank() == 2) {
        if (axis == 1) {
            lines = x->rows();
            len = x->cols();
            stride = 1;
            line_stride = x->cols();
        } else if (axis == 0) {
            lines = x->cols();
            len = x->rows();
            stride = x->cols();
            line_stride = 1;
        } else {
            throw std::invalid_argument("softmax: axis out of range for 2-D input");
        }
    } else {
        throw std::invalid_argument("softmax: only 1-D and 2-D supported");
    }
    std::vector<double> v(x->value.size());
    for (int64_t l = 0; l < lines; ++l) {
        const int64_t base = l * line_stride;
        double mx = -1e300;
        for (int64_t i = 0; i < len; ++i) {
            mx = std::max(mx, x->value[static_cast<std::size_t>(base + i * stride)]);
        }
        double z = 0.0;
        for (int64_t i = 0; i < len; ++i) {
            const double e = std::exp(x->value[static_cast<std::size_t>(base + i * stride)] - mx);
            v[static_cast<std::size_t>(base + i * stride)] = e;
            z += e;
        }
        for (int64_t i = 0; i < len; ++i) {
            v[static_cast<std::size_t>(base + i * stride)] /= z;
        }
    }
    auto px = x;
    return node(x->shape, std::move(v), {x}, [px, lines, len, stride, line_stride](Tensor& out) {
        if (!px->requires_grad) {
            return;
        }
        px->ensure_grad();
        for (int64_t l = 0; l < lines; ++l) {
            const int64_t base = l * line_stride;
            double dot = 0.0;
            for (int64_t i = 0; i < len; ++i) {
                const auto idx = static_cast<std::size_t>(base + i * stride);
                dot += out.grad[idx] * out.value[idx];
            }
            for (int64_t i = 0; i < len; ++i) {
                const auto idx = static_cast<std::size_t>(base + i * stride);
                px->grad[idx] += out.value[idx] * (out.grad[idx] - dot);
            }
        }
    });
}

TensorPtr dropout(const TensorPtr& x, double p, bool training, Rng& rng) {
    if (p < 0.0 || p >= 1.0) {
        throw std::invalid_argument("dropout: p must be in [0, 1), got " + std::to_string(p));
    }
    if (!training || p == 0.0) {
        return x;
    }
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mask(x->value.size());
    for (auto& m : mask) {
        m = (rng.uniform01() >= p) ? keep_scale : 0.0;
    }
    std::vector<double> v(x->value.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = x->value[i] * mask[i];
    }
    auto px = x;
    return node(x->shape, std::move(v), {x}, [px, mask = std::move(mask)](Tensor& out) {
        if (px->requires_grad) {
            px->ensure_grad();
            for (std::size_t i = 0; i < out.grad.size(); ++i) {
                px->grad[i] += out.grad[i] * mask[i];
            }
        }
    });
}

TensorPtr conv1d(const TensorPtr& x, const TensorPtr& kernels, std::int64_t pad,
                 std::int64_t dilation) {
    if (x->rank() != 2 || kernels->rank() != 3) {
        throw std::invalid_argument("conv1d: expected x [T x C_in], kernels [C_out x C_in x K]");
    }
    const int64_t t_in = x->shape[0], c_in = x->shape[1];
    const int64_t c_out = kernels->shape[0], kc_in = kernels->shape[1], k = kernels->shape[2];
    if (kc_in != c_in) {
        throw std::invalid_argument("conv1d: channel mismatch: input " + shape_str(x->shape) +
                                    " vs kernels " + shape_str(kernels->shape));
    }
    if (pad < 0 || dilation < 1) {
        throw std::invalid_argument("conv1d: bad pad/dilation");
    }
    const int64_t t_out = t_in + 2 * pad - dilation * (k - 1);
    if (t_out < 1) {
        throw std::invalid_argument("conv1d: output would be empty for input " +
                                    shape_str(x->shape) + " with kernel size " + std::to_string(k));
    }
    std::vector<double> v(static_cast<std::size_t>(t_out * c_out), 0.0);
    const double* xv = x->value.data();
    const double* wv = kernels->value.data();
    for (int64_t t = 0; t < t_out; ++t) {
        double* yrow = v.data() + t * c_out;
        for (int64_t kk = 0; kk < k; ++kk) {
            const int64_t s = t + dilation * kk - pad;
            if (s < 0 || s >= t_in) {
                continue;
            }
            const double* xs = xv + s * c_in;
            for (int64_t co = 0; co < c_out; ++co) {
                const double* wrow = wv + (co * c_in) * k + kk;
                double acc = 0.0;
                for (int64_t ci = 0; ci < c_in; ++ci) {
                    acc += xs[ci] * wrow[ci * k];
                }
                yrow[co] += acc;
            }
        }
    }
    auto px = x, pw = kernels;
    return node({t_out, c_out}, std::move(v), {x, kernels},
                [px, pw, t_in, c_in, c_out, k, pad, dilation, t_out](Tensor& out) {
                    const double* gv = out.grad.data();
                    if (px->requires_grad) {
                        px->ensure_grad();
                        for (int64_t t = 0; t < t_out; ++t) {
                            const double* grow = gv + t * c_out;
                            for (int64_t kk = 0; kk < k; ++kk) {
                                const int64_t s = t + dilation * kk - pad;
                                if (s < 0 || s >= t_in) {
                                    continue;
                                }
                                double* gx = px->grad.data() + s * c_in;
                                for (int64_t co = 0; co < c_out; ++co) {
                                    const double g = grow[co];
                                    if (g == 0.0) {
                                        continue;
                                    }
                                    const double* wrow = pw->value.data() + (co * c_in) * k + kk;
                                    for (int64_t ci = 0; ci < c_in; ++ci) {
                                        gx[ci] += g * wrow[ci * k];
                                    }
                                }
                            }
                        }
                    }
                    if (pw->requires_grad) {
                        pw->ensure_grad();
                        for (int64_t t = 0; t < t_out; ++t) {
                            const double* grow = gv + t * c_out;
                            for (int64_t kk = 0; kk < k; ++kk) {
                                const int64_t s = t + dilation * kk - pad;
                                if (s < 0 || s >= t_in) {
                                    continue;
                                }
                                const double* xs = px->value.data() + s * c_in;
                                for (int64_t co = 0; co < c_out; ++co) {
                                    const double g = grow[co];
                                    if (g == 0.0) {
                                        continue;
                                    }
                                    double* gw = pw->grad.data() + (co * c_in) * k + kk;
                                    for (int64_t ci = 0; ci < c_in; ++ci) {
                                        gw[ci * k] += g * xs[ci];
                                    }
                                }
                            }
                        }
                    }
                });
}

TensorPtr batchnorm1d(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                      const TensorPtr& running_mean, const TensorPtr& running_var,
                      const TensorPtr& running_count, bool training, double momentum, double eps) {
    if (x->rank() != 2) {
        throw std::invalid_argument("batchnorm1d: expected [T x C] input, got " +
                                    shape_str(x->shape));
    }
    const int64_t t = x->shape[0], c = x->shape[1];
    if (gamma->size() != c || beta->size() != c || running_mean->size() != c ||
        running_var->size() != c || running_count->size() != 1) {
        throw std::invalid_argument("batchnorm1d: parameter shapes do not match " +
                                    std::to_string(c) + " channels");
    }
    std::vector<double> xhat(static_cast<std::size_t>(t * c));
    std::vector<double> inv_std(static_cast<std::size_t>(c));
    std::vector<double> v(static_cast<std::size_t>(t * c));
    if (training) {
        for (int64_t j = 0; j < c; ++j) {
            double mu = 0.0;
            for (int64_t i = 0; i < t; ++i) {
                mu += x->value[static_cast<std::size_t>(i * c + j)];
            }
            mu /= static_cast<double>(t);
            double var = 0.0;
            for (int64_t i = 0; i < t; ++i) {
                const double d = x->value[static_cast<std::size_t>(i * c + j)] - mu;
                var += d * d;
            }
            var /= static_cast<double>(t);
            const double is = 1.0 / std::sqrt(var + eps);
            inv_std[static_cast<std::size_t>(j)] = is;
            for (int64_t i = 0; i < t; ++i) {
                const auto idx = static_cast<std::size_t>(i * c + j);
                xhat[idx] = (x->value[idx] - mu) * is;
                v[idx] = gamma->value[static_cast<std::size_t>(j)] * xhat[idx] +
                         beta->value[static_cast<std::size_t>(j)];
            }
            running_mean->value[static_cast<std::size_t>(j)] =
                (1.0 - momentum) * running_mean->value[static_cast<std::size_t>(j)] + momentum * mu;
            running_var->value[static_cast<std::size_t>(j)] =
                (1.0 - momentum) * running_var->value[static_cast<std::size_t>(j)] + momentum * var;
        }
        running_count->value[0] += 1.0;
    } else {
        if (running_count->value[0] < 1.0) {
            throw std::runtime_error("batchnorm1d: eval mode before any statistics were recorded");
        }
        for (int64_t j = 0; j < c; ++j) {
            const double is =
                1.0 / std::sqrt(running_var->value[static_cast<std::size_t>(j)] + eps);
            inv_std[static_cast<std::size_t>(j)] = is;
            for (int64_t i = 0; i < t; ++i) {
                const auto idx = static_cast<std::size_t>(i * c + j);
                xhat[idx] = (x->value[idx] - running_mean->value[static_cast<std::size_t>(j)]) * is;
                v[idx] = gamma->value[static_cast<std::size_t>(j)] * xhat[idx] +
                         beta->value[static_cast<std::size_t>(j)];
            }
        }
    }
    auto px = x, pg = gamma, pb = beta;
    return node(x->shape, std::move(v), {x, gamma, beta},
                [px, pg, pb, t, c, training, xhat = std::move(xhat),
                 inv_std = std::move(inv_std)](Tensor& out) {
                    if (pg->requires_grad) {
                        pg->ensure_grad();
                        for (int64_t j = 0; j < c; ++j) {
                            double s = 0.0;
                            for (int64_t i = 0; i < t; ++i) {
                                const auto idx = static_cast<std::size_t>(i * c + j);
                                s += out.grad[idx] * xhat[idx];
                            }
                            pg->grad[static_cast<std::size_t>(j)] += s;
                        }
                    }
                    if (pb->requires_grad) {
                        pb->ensure_grad();
                        for (int64_t j = 0; j < c; ++j) {
                            double s = 0.0;
                            for (int64_t i = 0; i < t; ++i) {
                                s += out.grad[static_cast<std::size_t>(i * c + j)];
                            }
                            pb->grad[static_cast<std::size_t>(j)] += s;
                        }
                    }
                    if (!px->requires_grad) {
                        return;
                    }
                    px->ensure_grad();
                    if (!training) {
                        for (int64_t j = 0; j < c; ++j) {
                            const double gi =
                                pg->value[static_cast<std::size_t>(j)] * inv_std[static_cast<std::size_t>(j)];
                            for (int64_t i = 0; i < t; ++i) {
                                const auto idx = static_cast<std::size_t>(i * c + j);
                                px->grad[idx] += out.grad[idx] * gi;
                            }
                        }
                        return;
                    }
                    const double tn = static_cast<double>(t);
                    for (int64_t j = 0; j < c; ++j) {
                        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                        const double g = pg->value[static_cast<std::size_t>(j)];
                        for (int64_t i = 0; i < t; ++i) {
                            const auto idx = static_cast<std::size_t>(i * c + j);
                            const double dxh = out.grad[idx] * g;
                            mean_dxhat += dxh;
                            mean_dxhat_xhat += dxh * xhat[idx];
                        }
                        mean_dxhat /= tn;
                        mean_dxhat_xhat /= tn;
                        const double is = inv_std[static_cast<std::size_t>(j)];
                        for (int64_t i = 0; i < t; ++i) {
                            const auto idx = static_cast<std::size_t>(i * c + j);
                            const double dxh = out.grad[idx] * g;
                            px->grad[idx] += is * (dxh - mean_dxhat - xhat[idx] * mean_dxhat_xhat);
                        }
                    }
                });
}

TensorPtr embedding(const std::vector<std::int64_t>& ids, const TensorPtr& table) {
    if (table->rank() != 2) {
        throw std::invalid_argument("embedding: table must be 2-D, got " + shape_str(table->shape));
    }
    const int64_t vocab = table->shape[0], dim = table->shape[1];
    const int64_t t = static_cast<int64_t>(ids.size());
    if (t == 0) {
        throw std::invalid_argument("embedding: empty id sequence");
    }
    std::vector<double> v(static_cast<std::size_t>(t * dim));
    for (int64_t i = 0; i < t; ++i) {
        const int64_t id = ids[static_cast<std::size_t>(i)];
        if (id < 0 || id >= vocab) {
            throw std::invalid_argument("embedding: id " + std::to_string(id) +
                                        " out of range [0, " + std::to_string(vocab) + ")");
        }
        std::copy_n(table->value.data() + id * dim, dim, v.data() + i * dim);
    }
    auto pt = table;
    auto ids_copy = ids;
    return node({t, dim}, std::move(v), {table}, [pt, ids_copy, dim](Tensor& out) {
        if (pt->requires_grad) {
            pt->ensure_grad();
            for (std::size_t i = 0; i < ids_copy.size(); ++i) {
                const int64_t id = ids_copy[i];
                for (int64_t j = 0; j < dim; ++j) {
                    pt->grad[static_cast<std::size_t>(id * dim + j)] +=
                        out.grad[i * static_cast<std::size_t>(dim) + static_cast<std::size_t>(j)];
                }
            }
        }
    });
}

std::pair<TensorPtr, TensorPtr> lstm_cell(const TensorPtr& x, const TensorPtr& h_prev,
                                          const TensorPtr& c_prev, const TensorPtr& w_x,
                                          const TensorPtr& w_h, const TensorPtr& bias) {
    if (x->rank() != 1 || h_prev->rank() != 1 || c_prev->rank() != 1) {
        throw std::invalid_argument("lstm_cell: x, h_prev, c_prev must be 1-D");
    }
    const int64_t in_dim = x->size();
    const int64_t h_dim = h_prev->size();
    if (c_prev->size() != h_dim || w_x->rank() != 2 || w_h->rank() != 2 || bias->rank() != 1 ||
        w_x->shape[0] != 4 * h_dim || w_x->shape[1] != in_dim || w_h->shape[0] != 4 * h_dim ||
        w_h->shape[1] != h_dim || bias->size() != 4 * h_dim) {
        throw std::invalid_argument(
            "lstm_cell: inconsistent dimensions: x=" + shape_str(x->shape) +
            " h=" + shape_str(h_prev->shape) + " w_x=" + shape_str(w_x->shape) +
            " w_h=" + shape_str(w_h->shape) + " bias=" + shape_str(bias->shape));
    }
    std::vector<double> gates(static_cast<std::size_t>(4 * h_dim));
    for (int64_t r = 0; r < 4 * h_dim; ++r) {
        double s = bias->value[static_cast<std::size_t>(r)];
        const double* wxr = w_x->value.data() + r * in_dim;
        for (int64_t j = 0; j < in_dim; ++j) {
            s += wxr[j] * x->value[static_cast<std::size_t>(j)];
        }
        const double* whr = w_h->value.data() + r * h_dim;
        for (int64_t j = 0; j < h_dim; ++j) {
            s += whr[j] * h_prev->value[static_cast<std::size_t>(j)];
        }
        gates[static_cast<std::size_t>(r)] = s;
    }
    std::vector<double> ig(static_cast<std::size_t>(h_dim)), fg(static_cast<std::size_t>(h_dim)),
        gg(static_cast<std::size_t>(h_dim)), og(static_cast<std::size_t>(h_dim)),
        cv(static_cast<std::size_t>(h_dim)), tv(static_cast<std::size_t>(h_dim));
    std::vector<double> packed(static_cast<std::size_t>(2 * h_dim));
    for (int64_t j = 0; j < h_dim; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        ig[ju] = stable_sigmoid(gates[ju]);
        fg[ju] = stable_sigmoid(gates[static_cast<std::size_t>(h_dim + j)]);
        gg[ju] = std::tanh(gates[static_cast<std::size_t>(2 * h_dim + j)]);
        og[ju] = stable_sigmoid(gates[static_cast<std::size_t>(3 * h_dim + j)]);
        cv[ju] = fg[ju] * c_prev->value[ju] + ig[ju] * gg[ju];
        tv[ju] = std::tanh(cv[ju]);
        packed[ju] = og[ju] * tv[ju];                         // h
        packed[static_cast<std::size_t>(h_dim + j)] = cv[ju]; // c
    }
    auto px = x, ph = h_prev, pc = c_prev, pwx = w_x, pwh = w_h, pb = bias;
    auto hc = node(
        {2 * h_dim}, std::move(packed), {x, h_prev, c_prev, w_x, w_h, bias},
        [px, ph, pc, pwx, pwh, pb, in_dim, h_dim, ig = std::move(ig), fg = std::move(fg),
         gg = std::move(gg), og = std::move(og), tv = std::move(tv)](Tensor& out) {
            std::vector<double> da(static_cast<std::size_t>(4 * h_dim));
            std::vector<double> dc_prev_local(static_cast<std::size_t>(h_dim));
            for (int64_t j = 0; j < h_dim; ++j) {
                const auto ju = static_cast<std::size_t>(j);
                const double dh = out.grad[ju];
                const double dc_out = out.grad[static_cast<std::size_t>(h_dim + j)];
                const double t = tv[ju];
                const double dc = dc_out + dh * og[ju] * (1.0 - t * t);
                const double d_o = dh * t;
                const double d_f = dc * pc->value[ju];
                const double d_i = dc * gg[ju];
                const double d_g = dc * ig[ju];
                dc_prev_local[ju] = dc * fg[ju];
                da[ju] = d_i * ig[ju] * (1.0 - ig[ju]);
                da[static_cast<std::size_t>(h_dim + j)] = d_f * fg[ju] * (1.0 - fg[ju]);
                da[static_cast<std::size_t>(2 * h_dim + j)] = d_g * (1.0 - gg[ju] * gg[ju]);
                da[static_cast<std::size_t>(3 * h_dim + j)] = d_o * og[ju] * (1.0 - og[ju]);
            }
            if (pc->requires_grad) {
                pc->accumulate_grad(dc_prev_local.data(), h_dim);
            }
            if (pb->requires_grad) {
                pb->accumulate_grad(da.data(), 4 * h_dim);
            }
            if (px->requires_grad) {
                px->ensure_grad();
                gemm_tn(pwx->value.data(), da.data(), px->grad.data(), 4 * h_dim, in_dim, 1);
            }
            if (ph->requires_grad) {
                ph->ensure_grad();
                gemm_tn(pwh->value.data(), da.data(), ph->grad.data(), 4 * h_dim, h_dim, 1);
            }
            if (pwx->requires_grad) {
                pwx->ensure_grad();
                for (int64_t r = 0; r < 4 * h_dim; ++r) {
                    const double d = da[static_cast<std::size_t>(r)];
                    if (d == 0.0) {
                        continue;
                    }
                    double* grow = pwx->grad.data() + r * in_dim;
                    for (int64_t j = 0; j < in_dim; ++j) {
                        grow[j] += d * px->value[static_cast<std::size_t>(j)];
                    }
                }
            }
            if (pwh->requires_grad) {
                pwh->ensure_grad();
                for (int64_t r = 0; r < 4 * h_dim; ++r) {
                    const double d = da[static_cast<std::size_t>(r)];
                    if (d == 0.0) {
                        continue;
                    }
                    double* grow = pwh->grad.data() + r * h_dim;
                    for (int64_t j = 0; j < h_dim; ++j) {
                        grow[j] += d * ph->value[static_cast<std::size_t>(j)];
                    }
                }
            }
        });
    return {slice(hc, 0, 0, h_dim), slice(hc, 0, h_dim, h_dim)};
}

} // namespace tts::ad
