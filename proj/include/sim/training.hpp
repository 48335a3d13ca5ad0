#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sim/inference.hpp"
#include "sim/types.hpp"

namespace sim {

using Dataset = std::vector<FrameInstance>;

enum class Phase { joint, predictors_only, gates_only };

std::string_view to_string(Phase phase);
Phase parse_phase(std::string_view text);

template <typename Scalar>
struct BasicLossBreakdown {
  Scalar total = 0;
  Scalar ce_scene = 0;   // summed over steps
  Scalar ce_person = 0;  // summed over steps, averaged over persons
  Scalar gate_l1 = 0;    // lambda * sum of edge gates over steps and edges

  BasicLossBreakdown& operator+=(const BasicLossBreakdown& o) {
    total += o.total;
    ce_scene += o.ce_scene;
    ce_person += o.ce_person;
    gate_l1 += o.gate_l1;
    return *this;
  }
};

using LossBreakdown = BasicLossBreakdown<double>;

/// True when the forward pass for this phase imposes learned gates.
inline bool gates_active(const ModelParams& params, Phase phase) {
  return params.gated && phase != Phase::predictors_only;
}

/// Classification loss at every step plus the L1 gate penalty. The penalty is
/// zero when `gates_used` is false since no gate is imposed then.
template <typename Scalar>
BasicLossBreakdown<Scalar> loss(const BasicInferenceTrace<Scalar>& trace, double lambda, bool gates_used);

/// Loss restricted to a single step t (1-based); the gate term covers that step only.
LossBreakdown step_loss(const InferenceTrace& trace, int t, double lambda, bool gates_used);

struct TrainConfig {
  int steps = 3;
  WeightSharing sharing = WeightSharing::tied;
  bool gated = true;
  double lambda = 0.01;
  double learning_rate = 0.01;
  double momentum = 0.9;
  int epochs = 20;
  int batch_size = 16;
  std::uint64_t seed = 1;
  Phase phase = Phase::joint;
  // Run predictors-only for `epochs`, then gates-only for `gate_epochs`.
  bool two_phase = false;
  int gate_epochs = 20;
  bool freeze_biases = false;
  int threads = 1;

  void validate() const;
};

struct BackwardResult {
  LossBreakdown loss;
  Gradients grads;
};

/// Exact gradient of loss(forward(params, inst)) by reverse traversal of the
/// unrolled computation. Gradients of blocks frozen by `phase` are zero.
BackwardResult backward(const ModelParams& params, const FrameInstance& inst, int steps,
                        double lambda, Phase phase);
BackwardResult backward(const ModelParams& params, const FrameInstance& inst, const TrainConfig& config);

struct GradCheckReport {
  double max_rel_error = 0;
  std::size_t entries_checked = 0;
  std::string worst_entry;  // "set/field[index]"
  double worst_analytic = 0;
  double worst_numeric = 0;
};

/// Central differences of the loss evaluated in long double, compared entry by
/// entry with backward(). Blocks frozen by the phase are skipped.
GradCheckReport finite_diff_oracle(const ModelParams& params, const FrameInstance& inst, int steps,
                                   double lambda, Phase phase, double epsilon = 1e-5);

struct UpdateMask {
  bool message = true;
  bool prediction = true;
  bool gate = true;
  bool biases = true;

  static UpdateMask for_phase(Phase phase, bool freeze_biases = false);
  bool allows(const ParamInfo& info) const;
};

/// velocity <- momentum * velocity - lr * grad; params <- params + velocity,
/// skipping blocks the mask freezes.
void sgd_step(ModelParams& params, const Gradients& grads, ModelParams& velocity,
              double learning_rate, double momentum, const UpdateMask& mask = {});

/// y += alpha * x, block for block.
void accumulate(Gradients& y, const Gradients& x, double alpha = 1.0);

struct StepMetrics {
  int step = 0;
  double scene_accuracy = 0;
  double person_accuracy = 0;
  LossBreakdown loss;  // mean per instance, this step only
  double mean_gate_pp = 1;
  double mean_gate_ps = 1;
};

struct EvalReport {
  std::vector<StepMetrics> steps;
  double unary_scene_accuracy = 0;
  double unary_person_accuracy = 0;
  std::size_t instances = 0;
};

EvalReport evaluate(const ModelParams& params, const Dataset& data, int steps, double lambda = 0.0,
                    int threads = 1);

struct EpochRecord {
  Phase phase = Phase::joint;
  int epoch = 0;
  EvalReport report;
};

struct TrainResult {
  ModelParams params;
  ModelParams velocity;
  std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains from init_params(seed) or from `start` when given. Metrics are taken
/// on `validation` when non-empty, otherwise on the training data.
TrainResult train(const Dataset& data, const TrainConfig& config, const Dataset& validation = {},
                  const ModelParams* start = nullptr, const EpochCallback& on_epoch = {});

/// One phase of training from the given parameters.
TrainResult train_phase(const ModelParams& start, const Dataset& data, const TrainConfig& config,
                        Phase phase, int epochs, const Dataset& validation = {},
                        const EpochCallback& on_epoch = {});

/// "tied", "untied", "gated-tied" or "gated-untied".
std::string variant_name(const ModelParams& params);

struct AblationRow {
  std::string variant;
  TrainResult result;
  EvalReport report;  // on the evaluation set after training
};

/// Trains tied, untied, gated-tied and gated-untied models from the same seed
/// and evaluates each at steps 1..T. Ungated variants train for `epochs` with
/// the joint phase (two-phase training without gates is just its first phase);
/// gated variants follow `base` as given.
std::vector<AblationRow> ablate(const Dataset& data, const Dataset& eval, const TrainConfig& base,
                                const EpochCallback& on_epoch = {});

/// Checks every instance against dims and labels; throws ValidationError.
void validate_dataset(const Dataset& data, const Dims& dims, bool require_labels);

}  // namespace sim
