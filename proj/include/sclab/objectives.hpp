#pragma once

#include <vector>

#include "sclab/tensor.hpp"
#include "sclab/text.hpp"

namespace sclab::obj {

// Scaled Gram matrix S_ij = u_i . v_j / tau as a live graph node; tau is the
// value used, recorded for reporting.
struct BatchSimilarity {
  Tensor S;  // (N, N)
  double tau = 0.0;
  std::size_t N = 0;
};

// log_inv_tau is the learnable scalar storing ln(1/tau); the fixed-tau
// overload wraps a constant.
BatchSimilarity similarity_matrix(const Tensor& u, const Tensor& v,
                                  const Tensor& log_inv_tau);
BatchSimilarity similarity_matrix(const Tensor& u, const Tensor& v, double tau);

// Symmetric InfoNCE over rows and columns; scalar graph node.
Tensor clip_loss(const BatchSimilarity& sim);

// Pairwise sigmoid loss, normalized by N; bias is a learnable scalar.
Tensor sigmoid_loss(const BatchSimilarity& sim, const Tensor& bias);

// Mean over batch of cross-entropy between softmax(logits) and the weighted
// label distribution of each sample.
Tensor class_loss(const Tensor& logits,
                  const std::vector<text::LabelDistribution>& targets);

Tensor total_loss(const Tensor& l_clip, const Tensor& l_class, double lambda);

struct LossBreakdown {
  double l_clip = 0.0;
  double l_class = 0.0;
  double lambda = 1.0;
  double l_total = 0.0;
};

LossBreakdown breakdown(double l_clip, double l_class, double lambda);

}  // namespace sclab::obj
