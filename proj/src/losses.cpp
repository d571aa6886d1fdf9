#include "amal/losses.hpp"

#include <cmath>

namespace amal {

namespace {

double log_sum_exp(const RowVector& v) {
  double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace

RowVector log_softmax_t(const RowVector& logits, double temperature) {
  if (temperature <= 0.0) throw ConfigError("softmax temperature must be positive");
  RowVector z = logits / temperature;
  double lse = log_sum_exp(z);
  return z.array() - lse;
}

RowVector softmax_t(const RowVector& logits, double temperature) {
  return log_softmax_t(logits, temperature).array().exp();
}

double ce_loss(const RowVector& logits, int label) {
  if (label < 0 || label >= logits.size())
    throw ConfigError("ce_loss: label " + std::to_string(label) + " out of range");
  return -log_softmax_t(logits, 1.0)(label);
}

RowVector ce_grad(const RowVector& logits, int label) {
  if (label < 0 || label >= logits.size())
    throw ConfigError("ce_grad: label " + std::to_string(label) + " out of range");
  RowVector g = softmax_t(logits, 1.0);
  g(label) -= 1.0;
  return g;
}

double kl_divergence(const RowVector& p, const RowVector& q) {
  if (p.size() != q.size()) throw ShapeError("kl_divergence: length mismatch");
  double s = 0.0;
  for (Index i = 0; i < p.size(); ++i) {
    if (p(i) > 0.0) s += p(i) * (std::log(p(i)) - std::log(q(i)));
  }
  return s;
}

double kd_loss(const RowVector& student_logits, const RowVector& teacher_logits,
               double temperature, KlDirection direction) {
  if (student_logits.size() != teacher_logits.size())
    throw ShapeError("kd_loss: student/teacher length mismatch");
  RowVector log_ps = log_softmax_t(student_logits, temperature);
  RowVector log_pt = log_softmax_t(teacher_logits, temperature);
  double t2 = temperature * temperature;
  double kl = 0.0;
  if (direction == KlDirection::teacher_ref) {
    // KL(p_T || p_S) = sum p_T (log p_T - log p_S)
    for (Index i = 0; i < log_pt.size(); ++i)
      kl += std::exp(log_pt(i)) * (log_pt(i) - log_ps(i));
  } else {
    for (Index i = 0; i < log_ps.size(); ++i)
      kl += std::exp(log_ps(i)) * (log_ps(i) - log_pt(i));
  }
  return t2 * kl;
}

RowVector kd_grad(const RowVector& student_logits, const RowVector& teacher_logits,
                  double temperature, KlDirection direction) {
  if (student_logits.size() != teacher_logits.size())
    throw ShapeError("kd_grad: student/teacher length mismatch");
  RowVector ps = softmax_t(student_logits, temperature);
  RowVector pt = softmax_t(teacher_logits, temperature);
  if (direction == KlDirection::teacher_ref) {
    // d/dz tau^2 KL(p_T || p_S) = tau (p_S - p_T)
    return temperature * (ps - pt);
  }
  // d/dz tau^2 KL(p_S || p_T) = tau p_S .* (r - sum p_S r), r = log p_S - log p_T
  RowVector r = log_softmax_t(student_logits, temperature) -
                log_softmax_t(teacher_logits, temperature);
  double mean_r = (ps.array() * r.array()).sum();
  return temperature * (ps.array() * (r.array() - mean_r)).matrix();
}

double mixed_loss(const RowVector& lambda_row, double primary_val, const RowVector& aux_vals) {
  if (lambda_row.size() != aux_vals.size() + 1)
    throw ShapeError("mixed_loss: lambda row must have K+1 entries");
  double s = lambda_row(0) * primary_val;
  for (Index k = 0; k < aux_vals.size(); ++k) s += lambda_row(k + 1) * aux_vals(k);
  return s;
}

}  // namespace amal
