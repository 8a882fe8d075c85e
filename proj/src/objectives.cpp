#include "sclab/objectives.hpp"

#include <cmath>

namespace sclab::obj {

using namespace sclab::op;

namespace {

void require_unit_rows(const Tensor& x, const char* which) {
  check(x.rank() == 2, std::string("similarity_matrix: ") + which + " must be (N, D)");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += x.data()[i * d + j] * x.data()[i * d + j];
    if (std::fabs(std::sqrt(s) - 1.0) > 1e-6)
      throw DomainError(std::string("similarity_matrix: ") + which + " row " +
                        std::to_string(i) + " is not unit-norm");
  }
}

BatchSimilarity build(const Tensor& u, const Tensor& v, const Tensor& log_inv_tau,
                      double tau) {
  require_unit_rows(u, "u");
  require_unit_rows(v, "v");
  check(u.shape() == v.shape(), "similarity_matrix: u and v shapes differ");
  if (!(tau > 0.0) || !std::isfinite(tau))
    throw DomainError("similarity_matrix: tau must be positive and finite");
  BatchSimilarity sim;
  sim.N = u.shape()[0];
  sim.tau = tau;
  sim.S = scale_by(matmul(u, transpose(v)), exp(log_inv_tau));
  return sim;
}

}  // namespace

BatchSimilarity similarity_matrix(const Tensor& u, const Tensor& v,
                                  const Tensor& log_inv_tau) {
  check(log_inv_tau.size() == 1, "similarity_matrix: log_inv_tau must be scalar");
  return build(u, v, log_inv_tau, std::exp(-log_inv_tau.item()));
}

BatchSimilarity similarity_matrix(const Tensor& u, const Tensor& v, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau))
    throw DomainError("similarity_matrix: tau must be positive and finite");
  return build(u, v, Tensor::scalar(std::log(1.0 / tau)), tau);
}

Tensor clip_loss(const BatchSimilarity& sim) {
  check(sim.N >= 1 && sim.S.defined(), "clip_loss: empty similarity");
  Tensor row_lse = logsumexp_rows(sim.S);
  Tensor col_lse = logsumexp_rows(transpose(sim.S));
  Tensor d = diag(sim.S);
  // -(1/2N) sum_i [ (S_ii - lse_row_i) + (S_ii - lse_col_i) ]
  return mean_all(scale(sub(add(row_lse, col_lse), scale(d, 2.0)), 0.5));
}

Tensor sigmoid_loss(const BatchSimilarity& sim, const Tensor& bias) {
  check(sim.N >= 1 && sim.S.defined(), "sigmoid_loss: empty similarity");
  check(bias.size() == 1, "sigmoid_loss: bias must be scalar");
  const std::size_t N = sim.N;
  // -z_ij with z_ii = +1, else -1
  std::vector<double> neg_z(N * N, 1.0);
  for (std::size_t i = 0; i < N; ++i) neg_z[i * N + i] = -1.0;
  Tensor logits = mul(add_scalar(sim.S, bias), Tensor::from({N, N}, std::move(neg_z)));
  return scale(sum_all(softplus(logits)), 1.0 / static_cast<double>(N));
}

Tensor class_loss(const Tensor& logits,
                  const std::vector<text::LabelDistribution>& targets) {
  check(logits.rank() == 2, "class_loss: logits must be (B, V)");
  const std::size_t B = logits.shape()[0], V = logits.shape()[1];
  check(targets.size() == B, "class_loss: target count does not match batch");

  std::vector<double> y(B * V, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& t = targets[b];
    check(t.support.size() == t.probs.size(), "class_loss: malformed target");
    check(!t.support.empty(), "class_loss: empty target support");
    double total = 0.0;
    for (std::size_t k = 0; k < t.support.size(); ++k) {
      check(t.support[k] < V, "class_loss: target id out of vocab range");
      y[b * V + t.support[k]] = t.probs[k];
      total += t.probs[k];
    }
    check(std::fabs(total - 1.0) < 1e-9, "class_loss: target not normalized");
  }
  Tensor targets_dense = Tensor::from({B, V}, std::move(y));
  // per-sample CE: lse(x) - sum_c y_c x_c, exact when y is normalized
  return mean_all(sub(logsumexp_rows(logits), sum_axis(mul(logits, targets_dense), 1)));
}

Tensor total_loss(const Tensor& l_clip, const Tensor& l_class, double lambda) {
  if (lambda < 0.0 || !std::isfinite(lambda))
    throw DomainError("total_loss: lambda must be finite and >= 0");
  check(l_clip.size() == 1 && l_class.size() == 1, "total_loss: losses must be scalar");
  return add(l_clip, scale(l_class, lambda));
}

LossBreakdown breakdown(double l_clip, double l_class, double lambda) {
  if (lambda < 0.0 || !std::isfinite(lambda))
    throw DomainError("breakdown: lambda must be finite and >= 0");
  LossBreakdown b;
  b.l_clip = l_clip;
  b.l_class = l_class;
  b.lambda = lambda;
  b.l_total = l_clip + lambda * l_class;
  return b;
}

}  // namespace sclab::obj
