#pragma once

#include <vector>

#include "sim/math.hpp"
#include "sim/types.hpp"

namespace sim {

/// Directed messages, gates and gated messages at one step. Person-to-person
/// entries are indexed row-major as (i * M + j) for the message i -> j; the
/// diagonal is left empty.
template <typename Scalar>
struct BasicMessageState {
  int persons = 0;
  std::vector<Vec<Scalar>> m_pp;
  std::vector<Vec<Scalar>> m_ps;  // person i -> scene
  std::vector<Vec<Scalar>> m_sp;  // scene -> person i

  std::vector<Scalar> gate_dir_pp;  // g_{i->j}, same indexing as m_pp
  std::vector<Scalar> gate_dir_ps;  // g_{i->s}
  std::vector<Scalar> gate_dir_sp;  // g_{s->i}
  std::vector<Scalar> gate_pp;      // edge gate g_<i,j>, symmetric
  std::vector<Scalar> gate_ps;      // edge gate g_<i,s>

  std::vector<Vec<Scalar>> gm_pp;
  std::vector<Vec<Scalar>> gm_ps;
  std::vector<Vec<Scalar>> gm_sp;

  std::size_t pp(int i, int j) const { return static_cast<std::size_t>(i * persons + j); }

  friend bool operator==(const BasicMessageState&, const BasicMessageState&) = default;
};

template <typename Scalar>
struct BasicPredictions {
  Vec<Scalar> scene;
  std::vector<Vec<Scalar>> persons;

  friend bool operator==(const BasicPredictions&, const BasicPredictions&) = default;
};

/// Unrolled record of one forward pass.
template <typename Scalar>
struct BasicInferenceTrace {
  FrameInstance instance;
  int steps = 0;
  BasicMessageState<Scalar> initial_state;
  BasicPredictions<Scalar> initial_preds;
  std::vector<BasicMessageState<Scalar>> states;  // step t at index t - 1
  std::vector<BasicPredictions<Scalar>> preds;

  const BasicMessageState<Scalar>& state_before(int t) const {
    return t == 1 ? initial_state : states[static_cast<std::size_t>(t - 2)];
  }
  const BasicPredictions<Scalar>& preds_before(int t) const {
    return t == 1 ? initial_preds : preds[static_cast<std::size_t>(t - 2)];
  }

  friend bool operator==(const BasicInferenceTrace& a, const BasicInferenceTrace& b) {
    return a.steps == b.steps && a.initial_state == b.initial_state &&
           a.initial_preds == b.initial_preds && a.states == b.states && a.preds == b.preds;
  }
};

using MessageState = BasicMessageState<double>;
using Predictions = BasicPredictions<double>;
using InferenceTrace = BasicInferenceTrace<double>;

inline constexpr double kIrrelevantBelow = 0.2;
inline constexpr double kUsefulAbove = 0.7;

/// "irrelevant" below 0.2, "useful" above 0.7, "ambiguous" in between.
inline const char* gate_category(double g) {
  if (g < kIrrelevantBelow) return "irrelevant";
  if (g > kUsefulAbove) return "useful";
  return "ambiguous";
}

enum class GateKind { person_to_person, scene_to_person, person_to_scene };

/// Step-0 state: messages copied from unaries, unit gates, and c^(0) = unaries.
template <typename Scalar>
std::pair<BasicMessageState<Scalar>, BasicPredictions<Scalar>> init_messages(const FrameInstance& inst);

/// Mean of the gated person messages arriving at `target`, skipping `excluded`
/// (pass -1 to skip nothing besides the target itself). Empty sets give zero.
template <typename Scalar>
Vec<Scalar> incoming_person_average(const std::vector<Vec<Scalar>>& pp, int persons, int target,
                                    int excluded, int length);

template <typename Scalar>
Vec<Scalar> person_to_person_message(const BasicBlockSet<Scalar>& p,
                                     const BasicMessageState<Scalar>& prev,
                                     const BasicPredictions<Scalar>& prev_preds,
                                     const FrameInstance& inst, int i, int j);

template <typename Scalar>
Vec<Scalar> person_to_scene_message(const BasicBlockSet<Scalar>& p,
                                    const BasicMessageState<Scalar>& prev,
                                    const BasicPredictions<Scalar>& prev_preds,
                                    const FrameInstance& inst, int i);

template <typename Scalar>
Vec<Scalar> scene_to_person_message(const BasicBlockSet<Scalar>& p,
                                    const BasicMessageState<Scalar>& prev,
                                    const BasicPredictions<Scalar>& prev_preds,
                                    const FrameInstance& inst, int j);

/// sigmoid(w . [a; b; c; d] + bias) for the gate weights of `kind`.
template <typename Scalar>
Scalar directional_gate(const BasicBlockSet<Scalar>& p, GateKind kind, const Vec<Scalar>& a,
                        const Vec<Scalar>& b, const Vec<Scalar>& c, const Vec<Scalar>& d);

template <typename Scalar>
Scalar edge_gate(Scalar forward, Scalar backward) {
  return (forward + backward) / Scalar(2);
}

/// Fills all directional and edge gates of `state` from its raw messages.
template <typename Scalar>
void compute_gates(const BasicBlockSet<Scalar>& p, BasicMessageState<Scalar>& state,
                   const BasicPredictions<Scalar>& prev_preds, const FrameInstance& inst);

/// Sets every gate to one.
template <typename Scalar>
void set_unit_gates(BasicMessageState<Scalar>& state);

/// gm = g_<A,B> * m for every directed message.
template <typename Scalar>
void apply_gates(BasicMessageState<Scalar>& state);

template <typename Scalar>
Vec<Scalar> predict_scene(const BasicBlockSet<Scalar>& p, const BasicMessageState<Scalar>& state,
                          const FrameInstance& inst);

template <typename Scalar>
std::vector<Vec<Scalar>> predict_persons(const BasicBlockSet<Scalar>& p,
                                         const BasicMessageState<Scalar>& state,
                                         const FrameInstance& inst);

/// Runs `steps` rounds of message passing. Gates are fixed to one unless both
/// params.gated and `use_gates` hold.
template <typename Scalar>
BasicInferenceTrace<Scalar> forward(const BasicModelParams<Scalar>& params,
                                    const FrameInstance& inst, int steps, bool use_gates = true);

}  // namespace sim
