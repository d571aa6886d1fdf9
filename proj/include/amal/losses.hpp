#pragma once

#include <optional>
#include <vector>

#include "amal/types.hpp"

namespace amal {

enum class PrimaryKind { cross_entropy };
enum class AuxKind { kd_kl, rule_kl };

// Argument order of the distillation KL. teacher_ref is the standard Hinton
// direction KL(teacher || student); student_ref is the literal KL(student || teacher).
enum class KlDirection { teacher_ref, student_ref };

struct AuxSpec {
  AuxKind kind = AuxKind::kd_kl;
  double temperature = 1.0;
  std::optional<int> teacher_id;
};

struct LossSpec {
  PrimaryKind primary = PrimaryKind::cross_entropy;
  std::vector<AuxSpec> auxiliaries;
  KlDirection kl_direction = KlDirection::teacher_ref;

  std::size_t aux_count() const { return auxiliaries.size(); }
};

// Temperature-softened softmax, max-stabilized. Entries positive, sum 1.
RowVector softmax_t(const RowVector& logits, double temperature);
RowVector log_softmax_t(const RowVector& logits, double temperature);

// -log softmax(logits)[label]
double ce_loss(const RowVector& logits, int label);
// d ce / d logits = softmax(logits) - onehot(label)
RowVector ce_grad(const RowVector& logits, int label);

// tau^2 * KL between the tau-softened distributions; the teacher side is a
// constant (no gradient flows to it).
double kd_loss(const RowVector& student_logits, const RowVector& teacher_logits,
               double temperature, KlDirection direction = KlDirection::teacher_ref);
RowVector kd_grad(const RowVector& student_logits, const RowVector& teacher_logits,
                  double temperature, KlDirection direction = KlDirection::teacher_ref);

// lambda_row = (lambda_p, lambda_a_1, ..., lambda_a_K); losses likewise.
double mixed_loss(const RowVector& lambda_row, double primary_val, const RowVector& aux_vals);

// KL(p || q) over explicit probability vectors (natural log).
double kl_divergence(const RowVector& p, const RowVector& q);

}  // namespace amal
