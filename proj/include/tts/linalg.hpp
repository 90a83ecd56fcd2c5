#pragma once

#include <cstdint>
#include <vector>

#include "tts/rng.hpp"

namespace tts::la {

/// LU factorization with partial pivoting, in place. Returns false if the
/// matrix is numerically singular. `piv` receives the row permutation and
/// `det_sign` the permutation sign.
bool lu_factor(std::vector<double>& a, std::int64_t n, std::vector<std::int64_t>& piv,
               double& det_sign);

/// Solve A x = b given the factorization from lu_factor. b is overwritten.
void lu_solve(const std::vector<double>& lu, std::int64_t n, const std::vector<std::int64_t>& piv,
              std::vector<double>& b);

/// log|det A| and sign via LU. Returns false when singular.
bool log_abs_det(const std::vector<double>& a, std::int64_t n, double& logdet, double& sign);

/// Dense inverse via LU; returns false when singular.
bool invert(const std::vector<double>& a, std::int64_t n, std::vector<double>& inv);

/// Random orthonormal matrix from the QR of a Gaussian sample (Q sign-fixed
/// so the diagonal of R is positive, making the draw deterministic).
std::vector<double> random_orthonormal(std::int64_t n, Rng& rng);

} // namespace tts::la
