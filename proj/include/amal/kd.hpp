#pragma once

#include <string>
#include <vector>

#include "amal/data.hpp"
#include "amal/losses.hpp"
#include "amal/metaopt.hpp"

namespace amal {

struct TeacherEntry {
  std::string tag;       // checkpoint-epoch tag, e.g. "e15" or "final"
  int epoch = 0;
  MlpParams params;
  Matrix cached_logits;  // rows aligned with the student's training set
};

struct TeacherBundle {
  std::vector<TeacherEntry> teachers;
  double temperature = 4.0;

  Index teacher_count() const { return static_cast<Index>(teachers.size()); }
  void validate() const;
};

// Plain CE training with snapshots after each requested epoch count plus the
// final model; logits cached on the given training features.
TeacherBundle train_teacher(const Dataset& train, const std::vector<Index>& dims,
                            Activation activation, const SgdState& sgd,
                            const TrainSchedule& schedule, const std::vector<int>& checkpoint_epochs,
                            std::uint64_t seed);

enum class KdMode { none, fixed, amal };

// CE + one temperature-softened KL component per teacher, read from the cache
// (or, when live_teacher_forward is set, recomputed from the teacher params).
class KdComponentLoss final : public ComponentLoss {
 public:
  KdComponentLoss(const std::vector<int>& labels, const TeacherBundle& bundle, double tau,
                  KlDirection direction, bool live_teacher_forward = false,
                  const Matrix* train_features = nullptr);
  Index components() const override;
  LossEval eval_component(Index component, Index pos, Index id,
                          const RowVector& logits) const override;

 private:
  const std::vector<int>& labels_;
  const TeacherBundle& bundle_;
  double tau_;
  KlDirection direction_;
  bool live_;
  const Matrix* train_features_;
};

struct KdConfig {
  std::vector<Index> student_dims;  // full dims including input/output
  Activation activation = Activation::relu;
  double tau = 4.0;
  double lambda_a = 0.9;            // fixed mode weight on the KD side
  KlDirection kl_direction = KlDirection::teacher_ref;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<int> milestones;
  double gamma = 0.1;
  bool reset_momentum_at_milestones = false;
  TrainSchedule schedule;
};

RunResult run_kd(const KdConfig& cfg, const TeacherBundle& bundle, KdMode mode,
                 const MetaConfig& meta, const Dataset& train, const Dataset& val,
                 const Dataset& test, std::uint64_t seed);

// Teacher shares the student's architecture; the student then distills from it.
RunResult run_self_distillation(const KdConfig& cfg, const MetaConfig& meta, const Dataset& train,
                                const Dataset& val, const Dataset& test, std::uint64_t seed,
                                KdMode mode = KdMode::amal, int teacher_epochs = 0);

// Bundle persistence: per teacher a checkpoint and a logits-cache CSV whose
// header carries the teacher tag and epoch, plus a bundle.json manifest.
void save_teacher_bundle(const TeacherBundle& bundle, const std::string& dir);
TeacherBundle load_teacher_bundle(const std::string& dir);

}  // namespace amal
