#pragma once

#include <utility>
#include <vector>

#include "tts/tensor.hpp"

namespace tts::ad {

// elementwise
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(const TensorPtr& a, double k);
TensorPtr add_scalar(const TensorPtr& a, double k);
TensorPtr tanh_op(const TensorPtr& a);
TensorPtr sigmoid(const TensorPtr& a);
TensorPtr relu(const TensorPtr& a);
TensorPtr exp_op(const TensorPtr& a);
TensorPtr softplus(const TensorPtr& a);

// linear algebra
TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
/// y = x W^T (+ bias per row). W is [out x in]; bias may be null.
TensorPtr linear(const TensorPtr& x, const TensorPtr& w, const TensorPtr& bias = nullptr);
TensorPtr matvec(const TensorPtr& m, const TensorPtr& v);
TensorPtr vecmat(const TensorPtr& v, const TensorPtr& m);
TensorPtr add_rows(const TensorPtr& x, const TensorPtr& rowvec);
/// log|det W| for square W; derivative is W^{-T}.
TensorPtr log_abs_det(const TensorPtr& w);

// shape
TensorPtr concat(const std::vector<TensorPtr>& parts, int axis);
TensorPtr slice(const TensorPtr& x, int axis, std::int64_t start, std::int64_t len);
TensorPtr row(const TensorPtr& x, std::int64_t r);     // [m x n] -> [n]
TensorPtr stack_rows(const std::vector<TensorPtr>& rows); // m x [n] -> [m x n]
TensorPtr stack_cols(const std::vector<TensorPtr>& cols); // k x [m] -> [m x k]
TensorPtr flatten(const TensorPtr& x);
TensorPtr reshape(const TensorPtr& x, Shape shape);

// reductions and losses
TensorPtr sum(const TensorPtr& x);
TensorPtr mean(const TensorPtr& x);
TensorPtr cumsum(const TensorPtr& x); // 1-D running sum
TensorPtr mse(const TensorPtr& a, const TensorPtr& b);
TensorPtr sum_sq_err(const TensorPtr& a, const TensorPtr& b);
/// Mean binary cross-entropy on logits, numerically stable, with a weight
/// applied to positive targets. Targets are constants in {0,1} (any [0,1]).
TensorPtr bce_with_logits(const TensorPtr& logits, const std::vector<double>& targets,
                          double pos_weight = 1.0);
/// Same but summed instead of averaged (for masked batch totals).
TensorPtr bce_with_logits_sum(const TensorPtr& logits, const std::vector<double>& targets,
                              double pos_weight = 1.0);

TensorPtr softmax(const TensorPtr& x, int axis);

/// Inverted dropout; identity when not training or p == 0. Mask draws come
/// from `rng` in a fixed order, one per element.
TensorPtr dropout(const TensorPtr& x, double p, bool training, Rng& rng);

/// x: [T x C_in], kernels: [C_out x C_in x K]; cross-correlation with zero
/// padding. Output is [T' x C_out] with T' = T + 2*pad - dilation*(K-1).
TensorPtr conv1d(const TensorPtr& x, const TensorPtr& kernels, std::int64_t pad,
                 std::int64_t dilation = 1);

/// Batch normalization over the row (time/batch) axis of x: [T x C].
/// Training mode normalizes with current batch statistics and folds them
/// into running_mean / running_var / running_count in place; eval mode uses
/// the running statistics and requires running_count > 0.
TensorPtr batchnorm1d(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                      const TensorPtr& running_mean, const TensorPtr& running_var,
                      const TensorPtr& running_count, bool training, double momentum = 0.1,
                      double eps = 1e-5);

/// Row gather: ids index into table [V x D]; output [len(ids) x D].
TensorPtr embedding(const std::vector<std::int64_t>& ids, const TensorPtr& table);

/// One LSTM step. x: [I], h_prev/c_prev: [H], w_x: [4H x I], w_h: [4H x H],
/// bias: [4H], gate order (input, forget, cell, output). Returns (h, c).
std::pair<TensorPtr, TensorPtr> lstm_cell(const TensorPtr& x, const TensorPtr& h_prev,
                                          const TensorPtr& c_prev, const TensorPtr& w_x,
                                          const TensorPtr& w_h, const TensorPtr& bias);

} // namespace tts::ad
