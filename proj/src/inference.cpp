#include "sim/inference.hpp"

#include <stdexcept>
#include <string>

namespace sim {

namespace {

template <typename Scalar>
Vec<Scalar> person_unary(const FrameInstance& inst, int i) {
  return inst.person_unaries[static_cast<std::size_t>(i)].template cast<Scalar>();
}

template <typename Scalar>
Vec<Scalar> scene_unary(const FrameInstance& inst) {
  return inst.scene_unary.template cast<Scalar>();
}

void check_index(int index, int persons, const char* what) {
  if (index < 0 || index >= persons) {
    throw std::out_of_range(std::string(what) + " index " + std::to_string(index) +
                            " out of range for " + std::to_string(persons) + " persons");
  }
}

/// Mean of m_{k->s} over persons k != excluded.
template <typename Scalar>
Vec<Scalar> scene_incoming_average(const std::vector<Vec<Scalar>>& ps, int excluded, int length) {
  Vec<Scalar> sum = Vec<Scalar>::Zero(length);
  int count = 0;
  for (int k = 0; k < static_cast<int>(ps.size()); ++k) {
    if (k == excluded) continue;
    sum += ps[static_cast<std::size_t>(k)];
    ++count;
  }
  if (count == 0) return sum;
  return sum / static_cast<Scalar>(count);
}

void check_instance_dims(const Dims& dims, const FrameInstance& inst) {
  if (inst.persons() < 1) throw std::invalid_argument("instance has no persons");
  if (inst.scene_unary.size() != dims.scenes) {
    throw std::invalid_argument("scene unary length " + std::to_string(inst.scene_unary.size()) +
                                " does not match S=" + std::to_string(dims.scenes));
  }
  for (const auto& u : inst.person_unaries) {
    if (u.size() != dims.actions) {
      throw std::invalid_argument("person unary length " + std::to_string(u.size()) +
                                  " does not match A=" + std::to_string(dims.actions));
    }
  }
}

}  // namespace

template <typename Scalar>
std::pair<BasicMessageState<Scalar>, BasicPredictions<Scalar>> init_messages(const FrameInstance& inst) {
  const int m = inst.persons();
  BasicMessageState<Scalar> state;
  state.persons = m;
  state.m_pp.resize(static_cast<std::size_t>(m * m));
  state.gate_dir_pp.assign(static_cast<std::size_t>(m * m), Scalar(1));
  state.gate_pp.assign(static_cast<std::size_t>(m * m), Scalar(1));
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      if (i != j) state.m_pp[state.pp(i, j)] = person_unary<Scalar>(inst, i);
    }
    state.m_ps.push_back(person_unary<Scalar>(inst, i));
    state.m_sp.push_back(scene_unary<Scalar>(inst));
  }
  state.gate_dir_ps.assign(static_cast<std::size_t>(m), Scalar(1));
  state.gate_dir_sp.assign(static_cast<std::size_t>(m), Scalar(1));
  state.gate_ps.assign(static_cast<std::size_t>(m), Scalar(1));
  state.gm_pp = state.m_pp;
  state.gm_ps = state.m_ps;
  state.gm_sp = state.m_sp;

  BasicPredictions<Scalar> preds;
  preds.scene = scene_unary<Scalar>(inst);
  for (int i = 0; i < m; ++i) preds.persons.push_back(person_unary<Scalar>(inst, i));
  return {std::move(state), std::move(preds)};
}

template <typename Scalar>
Vec<Scalar> incoming_person_average(const std::vector<Vec<Scalar>>& pp, int persons, int target,
                                    int excluded, int length) {
  Vec<Scalar> sum = Vec<Scalar>::Zero(length);
  int count = 0;
  for (int k = 0; k < persons; ++k) {
    if (k == target || k == excluded) continue;
    sum += pp[static_cast<std::size_t>(k * persons + target)];
    ++count;
  }
  if (count == 0) return sum;
  return sum / static_cast<Scalar>(count);
}

template <typename Scalar>
Vec<Scalar> person_to_person_message(const BasicBlockSet<Scalar>& p,
                                     const BasicMessageState<Scalar>& prev,
                                     const BasicPredictions<Scalar>& prev_preds,
                                     const FrameInstance& inst, int i, int j) {
  const int m = inst.persons();
  check_index(i, m, "source");
  check_index(j, m, "target");
  if (i == j) throw std::out_of_range("person-to-person message needs distinct endpoints");
  const auto si = static_cast<std::size_t>(i);
  const Vec<Scalar> neighbours = incoming_person_average(prev.gm_pp, m, i, j, static_cast<int>(p.b_pp.size()));
  const Vec<Scalar> logits = p.w_xm_p * person_unary<Scalar>(inst, i) + p.w_cm_p * prev_preds.persons[si] +
                             p.w_aa * neighbours + p.w_sa * prev.gm_sp[si] + p.b_pp;
  return softmax(logits);
}

template <typename Scalar>
Vec<Scalar> person_to_scene_message(const BasicBlockSet<Scalar>& p,
                                    const BasicMessageState<Scalar>& prev,
                                    const BasicPredictions<Scalar>& prev_preds,
                                    const FrameInstance& inst, int i) {
  const int m = inst.persons();
  check_index(i, m, "source");
  const auto si = static_cast<std::size_t>(i);
  const Vec<Scalar> neighbours = incoming_person_average(prev.gm_pp, m, i, -1, static_cast<int>(p.b_ps.size()));
  const Vec<Scalar> logits = p.w_xm_p * person_unary<Scalar>(inst, i) + p.w_cm_p * prev_preds.persons[si] +
                             p.w_aa * neighbours + p.b_ps;
  return softmax(logits);
}

template <typename Scalar>
Vec<Scalar> scene_to_person_message(const BasicBlockSet<Scalar>& p,
                                    const BasicMessageState<Scalar>& prev,
                                    const BasicPredictions<Scalar>& prev_preds,
                                    const FrameInstance& inst, int j) {
  check_index(j, inst.persons(), "target");
  const Vec<Scalar> others = scene_incoming_average(prev.gm_ps, j, static_cast<int>(p.w_as.cols()));
  const Vec<Scalar> logits = p.w_xm_s * scene_unary<Scalar>(inst) + p.w_cm_s * prev_preds.scene +
                             p.w_as * others + p.b_sp;
  return softmax(logits);
}

template <typename Scalar>
Scalar directional_gate(const BasicBlockSet<Scalar>& p, GateKind kind, const Vec<Scalar>& a,
                        const Vec<Scalar>& b, const Vec<Scalar>& c, const Vec<Scalar>& d) {
  const Vec<Scalar>* weights = nullptr;
  Scalar bias = 0;
  switch (kind) {
    case GateKind::person_to_person:
      weights = &p.g_pp;
      bias = p.gb_pp;
      break;
    case GateKind::scene_to_person:
      weights = &p.g_sp;
      bias = p.gb_sp;
      break;
    case GateKind::person_to_scene:
      weights = &p.g_ps;
      bias = p.gb_ps;
      break;
  }
  const auto& w = *weights;
  if (w.size() != a.size() + b.size() + c.size() + d.size()) {
    throw std::invalid_argument("gate context length does not match gate weights");
  }
  Eigen::Index off = 0;
  Scalar act = bias;
  for (const Vec<Scalar>* part : {&a, &b, &c, &d}) {
    act += w.segment(off, part->size()).dot(*part);
    off += part->size();
  }
  return sigmoid(act);
}

template <typename Scalar>
void compute_gates(const BasicBlockSet<Scalar>& p, BasicMessageState<Scalar>& state,
                   const BasicPredictions<Scalar>& prev_preds, const FrameInstance& inst) {
  const int m = state.persons;
  const int a = static_cast<int>(p.b_pp.size());
  const Vec<Scalar> xs = scene_unary<Scalar>(inst);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      if (i == j) continue;
      const auto sj = static_cast<std::size_t>(j);
      state.gate_dir_pp[state.pp(i, j)] =
          directional_gate(p, GateKind::person_to_person, person_unary<Scalar>(inst, j),
                           prev_preds.persons[sj], state.m_pp[state.pp(i, j)],
                           incoming_person_average(state.m_pp, m, j, i, a));
    }
  }
  for (int i = 0; i < m; ++i) {
    const auto si = static_cast<std::size_t>(i);
    state.gate_dir_sp[si] =
        directional_gate(p, GateKind::scene_to_person, person_unary<Scalar>(inst, i),
                         prev_preds.persons[si], state.m_sp[si],
                         incoming_person_average(state.m_pp, m, i, -1, a));
    state.gate_dir_ps[si] =
        directional_gate(p, GateKind::person_to_scene, xs, prev_preds.scene, state.m_ps[si],
                         scene_incoming_average(state.m_ps, i, a));
  }
  for (int i = 0; i < m; ++i) {
    for (int j = i + 1; j < m; ++j) {
      const Scalar g = edge_gate(state.gate_dir_pp[state.pp(i, j)], state.gate_dir_pp[state.pp(j, i)]);
      state.gate_pp[state.pp(i, j)] = g;
      state.gate_pp[state.pp(j, i)] = g;
    }
    const auto si = static_cast<std::size_t>(i);
    state.gate_ps[si] = edge_gate(state.gate_dir_ps[si], state.gate_dir_sp[si]);
  }
}

template <typename Scalar>
void set_unit_gates(BasicMessageState<Scalar>& state) {
  const auto mm = static_cast<std::size_t>(state.persons * state.persons);
  const auto m = static_cast<std::size_t>(state.persons);
  state.gate_dir_pp.assign(mm, Scalar(1));
  state.gate_pp.assign(mm, Scalar(1));
  state.gate_dir_ps.assign(m, Scalar(1));
  state.gate_dir_sp.assign(m, Scalar(1));
  state.gate_ps.assign(m, Scalar(1));
}

template <typename Scalar>
void apply_gates(BasicMessageState<Scalar>& state) {
  const int m = state.persons;
  state.gm_pp.assign(state.m_pp.size(), Vec<Scalar>());
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      if (i == j) continue;
      const auto e = state.pp(i, j);
      state.gm_pp[e] = state.gate_pp[e] * state.m_pp[e];
    }
  }
  state.gm_ps.resize(state.m_ps.size());
  state.gm_sp.resize(state.m_sp.size());
  for (std::size_t i = 0; i < state.m_ps.size(); ++i) {
    state.gm_ps[i] = state.gate_ps[i] * state.m_ps[i];
    state.gm_sp[i] = state.gate_ps[i] * state.m_sp[i];
  }
}

template <typename Scalar>
Vec<Scalar> predict_scene(const BasicBlockSet<Scalar>& p, const BasicMessageState<Scalar>& state,
                          const FrameInstance& inst) {
  const auto s = p.w_hc1.rows();
  const auto a = p.w_hc1.cols() - s;
  const Vec<Scalar> pooled = scene_incoming_average(state.gm_ps, -1, static_cast<int>(a));
  const Vec<Scalar> logits =
      p.w_hc1.leftCols(s) * scene_unary<Scalar>(inst) + p.w_hc1.rightCols(a) * pooled + p.b_hc1;
  return softmax(logits);
}

template <typename Scalar>
std::vector<Vec<Scalar>> predict_persons(const BasicBlockSet<Scalar>& p,
                                         const BasicMessageState<Scalar>& state,
                                         const FrameInstance& inst) {
  const int m = state.persons;
  const auto a = p.w_hc2.rows();
  const auto s = p.w_hc2.cols() - 2 * a;
  std::vector<Vec<Scalar>> out;
  out.reserve(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const auto si = static_cast<std::size_t>(i);
    const Vec<Scalar> pooled = incoming_person_average(state.gm_pp, m, i, -1, static_cast<int>(a));
    const Vec<Scalar> logits = p.w_hc2.leftCols(a) * person_unary<Scalar>(inst, i) +
                               p.w_hc2.middleCols(a, a) * pooled +
                               p.w_hc2.rightCols(s) * state.gm_sp[si] + p.b_hc2;
    out.push_back(softmax(logits));
  }
  return out;
}

template <typename Scalar>
BasicInferenceTrace<Scalar> forward(const BasicModelParams<Scalar>& params,
                                    const FrameInstance& inst, int steps, bool use_gates) {
  if (steps < 1) throw std::invalid_argument("forward needs at least one step");
  if (params.max_steps() != 0 && steps > params.max_steps()) {
    throw std::invalid_argument("untied parameters support at most T=" +
                                std::to_string(params.max_steps()) + " steps");
  }
  check_instance_dims(params.dims, inst);
  const bool gated = params.gated && use_gates;
  const int m = inst.persons();

  BasicInferenceTrace<Scalar> trace;
  trace.instance = inst;
  trace.steps = steps;
  std::tie(trace.initial_state, trace.initial_preds) = init_messages<Scalar>(inst);
  trace.states.reserve(static_cast<std::size_t>(steps));
  trace.preds.reserve(static_cast<std::size_t>(steps));

  for (int t = 1; t <= steps; ++t) {
    const auto& p = params.at_step(t);
    const auto& prev = trace.state_before(t);
    const auto& prev_preds = trace.preds_before(t);

    BasicMessageState<Scalar> state;
    state.persons = m;
    state.m_pp.resize(static_cast<std::size_t>(m * m));
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < m; ++j) {
        if (i != j) state.m_pp[state.pp(i, j)] = person_to_person_message(p, prev, prev_preds, inst, i, j);
      }
    }
    for (int i = 0; i < m; ++i) {
      state.m_ps.push_back(person_to_scene_message(p, prev, prev_preds, inst, i));
      state.m_sp.push_back(scene_to_person_message(p, prev, prev_preds, inst, i));
    }
    set_unit_gates(state);
    if (gated) compute_gates(p, state, prev_preds, inst);
    apply_gates(state);

    BasicPredictions<Scalar> preds;
    preds.scene = predict_scene(p, state, inst);
    preds.persons = predict_persons(p, state, inst);

    trace.states.push_back(std::move(state));
    trace.preds.push_back(std::move(preds));
  }
  return trace;
}

#define SIM_INSTANTIATE_INFERENCE(Scalar)                                                          \
  template std::pair<BasicMessageState<Scalar>, BasicPredictions<Scalar>> init_messages<Scalar>(  \
      const FrameInstance&);                                                                       \
  template Vec<Scalar> incoming_person_average(const std::vector<Vec<Scalar>>&, int, int, int,     \
                                               int);                                               \
  template Vec<Scalar> person_to_person_message(const BasicBlockSet<Scalar>&,                      \
                                                const BasicMessageState<Scalar>&,                  \
                                                const BasicPredictions<Scalar>&,                   \
                                                const FrameInstance&, int, int);                   \
  template Vec<Scalar> person_to_scene_message(const BasicBlockSet<Scalar>&,                       \
                                               const BasicMessageState<Scalar>&,                   \
                                               const BasicPredictions<Scalar>&,                    \
                                               const FrameInstance&, int);                         \
  template Vec<Scalar> scene_to_person_message(const BasicBlockSet<Scalar>&,                       \
                                               const BasicMessageState<Scalar>&,                   \
                                               const BasicPredictions<Scalar>&,                    \
                                               const FrameInstance&, int);                         \
  template Scalar directional_gate(const BasicBlockSet<Scalar>&, GateKind, const Vec<Scalar>&,     \
                                   const Vec<Scalar>&, const Vec<Scalar>&, const Vec<Scalar>&);    \
  template void compute_gates(const BasicBlockSet<Scalar>&, BasicMessageState<Scalar>&,            \
                              const BasicPredictions<Scalar>&, const FrameInstance&);              \
  template void set_unit_gates(BasicMessageState<Scalar>&);                                        \
  template void apply_gates(BasicMessageState<Scalar>&);                                           \
  template Vec<Scalar> predict_scene(const BasicBlockSet<Scalar>&,                                 \
                                     const BasicMessageState<Scalar>&, const FrameInstance&);      \
  template std::vector<Vec<Scalar>> predict_persons(                                               \
      const BasicBlockSet<Scalar>&, const BasicMessageState<Scalar>&, const FrameInstance&);       \
  template BasicInferenceTrace<Scalar> forward(const BasicModelParams<Scalar>&,                    \
                                               const FrameInstance&, int, bool);

SIM_INSTANTIATE_INFERENCE(double)
SIM_INSTANTIATE_INFERENCE(long double)

#undef SIM_INSTANTIATE_INFERENCE

}  // namespace sim
