#include "tts/linalg.hpp"

#include <cmath>
#include <cstdlib>

namespace tts::la {

bool lu_factor(std::vector<double>& a, std::int64_t n, std::vector<std::int64_t>& piv,
               double& det_sign) {
    piv.resize(static_cast<std::size_t>(n));
    det_sign = 1.0;
    for (std::int64_t k = 0; k < n; ++k) {
        std::int64_t p = k;
        double best = std::fabs(a[static_cast<std::size_t>(k * n + k)]);
        for (std::int64_t i = k + 1; i < n; ++i) {
            const double v = std::fabs(a[static_cast<std::size_t>(i * n + k)]);
            if (v > best) {
                best = v;
                p = i;
            }
        }
        if (best < 1e-300) {
            return false;
        }
        piv[static_cast<std::size_t>(k)] = p;
        if (p != k) {
            det_sign = -det_sign;
            for (std::int64_t j = 0; j < n; ++j) {
                std::swap(a[static_cast<std::size_t>(k * n + j)],
                          a[static_cast<std::size_t>(p * n + j)]);
            }
        }
        const double pivot = a[static_cast<std::size_t>(k * n + k)];
        for (std::int64_t i = k + 1; i < n; ++i) {
            const double m = a[static_cast<std::size_t>(i * n + k)] / pivot;
            a[static_cast<std::size_t>(i * n + k)] = m;
            for (std::int64_t j = k + 1; j < n; ++j) {
                a[static_cast<std::size_t>(i * n + j)] -= m * a[static_cast<std::size_t>(k * n + j)];
            }
        }
    }
    return true;
}

void lu_solve(const std::vector<double>& lu, std::int64_t n, const std::vector<std::int64_t>& piv,
              std::vector<double>& b) {
    // apply the row permutation first, then solve L y = Pb and U x = y
    for (std::int64_t k = 0; k < n; ++k) {
        const std::int64_t p = piv[static_cast<std::size_t>(k)];
        if (p != k) {
            std::swap(b[static_cast<std::size_t>(k)], b[static_cast<std::size_t>(p)]);
        }
    }
    for (std::int64_t k = 0; k < n; ++k) {
        for (std::int64_t i = k + 1; i < n; ++i) {
            b[static_cast<std::size_t>(i)] -=
                lu[static_cast<std::size_t>(i * n + k)] * b[static_cast<std::size_t>(k)];
        }
    }
    for (std::int64_t i = n - 1; i >= 0; --i) {
        double s = b[static_cast<std::size_t>(i)];
        for (std::int64_t j = i + 1; j < n; ++j) {
            s -= lu[static_cast<std::size_t>(i * n + j)] * b[static_cast<std::size_t>(j)];
        }
        b[static_cast<std::size_t>(i)] = s / lu[static_cast<std::size_t>(i * n + i)];
    }
}

bool log_abs_det(const std::vector<double>& a, std::int64_t n, double& logdet, double& sign) {
    std::vector<double> lu = a;
    std::vector<std::int64_t> piv;
    if (!lu_factor(lu, n, piv, sign)) {
        return false;
    }
    logdet = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = lu[static_cast<std::size_t>(i * n + i)];
        logdet += std::log(std::fabs(d));
        if (d < 0) {
            sign = -sign;
        }
    }
    return true;
}

bool invert(const std::vector<double>& a, std::int64_t n, std::vector<double>& inv) {
    std::vector<double> lu = a;
    std::vector<std::int64_t> piv;
    double sign;
    if (!lu_factor(lu, n, piv, sign)) {
        return false;
    }
    inv.assign(static_cast<std::size_t>(n * n), 0.0);
    std::vector<double> col(static_cast<std::size_t>(n));
    for (std::int64_t j = 0; j < n; ++j) {
        for (std::int64_t i = 0; i < n; ++i) {
            col[static_cast<std::size_t>(i)] = (i == j) ? 1.0 : 0.0;
        }
        lu_solve(lu, n, piv, col);
        for (std::int64_t i = 0; i < n; ++i) {
            inv[static_cast<std::size_t>(i * n + j)] = col[static_cast<std::size_t>(i)];
        }
    }
    return true;
}

std::vector<double> random_orthonormal(std::int64_t n, Rng& rng) {
    // modified Gram-Schmidt on a Gaussian matrix (columns)
    std::vector<double> a(static_cast<std::size_t>(n * n));
    for (auto& x : a) {
        x = rng.normal();
    }
    std::vector<double> q(static_cast<std::size_t>(n * n));
    for (std::int64_t j = 0; j < n; ++j) {
        std::vector<double> v(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) {
            v[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i * n + j)];
        }
        for (std::int64_t k = 0; k < j; ++k) {
            double dot = 0.0;
            for (std::int64_t i = 0; i < n; ++i) {
                dot += q[static_cast<std::size_t>(i * n + k)] * v[static_cast<std::size_t>(i)];
            }
            for (std::int64_t i = 0; i < n; ++i) {
                v[static_cast<std::size_t>(i)] -= dot * q[static_cast<std::size_t>(i * n + k)];
            }
        }
        double norm = 0.0;
        for (auto x : v) {
            norm += x * x;
        }
        norm = std::sqrt(norm);
        if (norm < 1e-12) {
            // astronomically unlikely for a Gaussian draw; re-seed the column
            for (std::int64_t i = 0; i < n; ++i) {
                v[static_cast<std::size_t>(i)] = (i == j) ? 1.0 : 0.0;
            }
            norm = 1.0;
        }
        const double inv_norm = 1.0 / norm;
        for (std::int64_t i = 0; i < n; ++i) {
            q[static_cast<std::size_t>(i * n + j)] = v[static_cast<std::size_t>(i)] * inv_norm;
        }
    }
    return q;
}

} // namespace tts::la
