#include <stdexcept>

#include "sim/math.hpp"
#include "sim/training.hpp"

namespace sim {

namespace {

using Eigen::VectorXd;

/// Adjoints of one step's gated messages and predictions.
struct StepAdjoint {
  std::vector<VectorXd> gm_pp;
  std::vector<VectorXd> gm_ps;
  std::vector<VectorXd> gm_sp;
  VectorXd scene;
  std::vector<VectorXd> persons;

  static StepAdjoint zeros(int m, int a, int s) {
    StepAdjoint adj;
    adj.gm_pp.assign(static_cast<std::size_t>(m * m), VectorXd::Zero(a));
    adj.gm_ps.assign(static_cast<std::size_t>(m), VectorXd::Zero(a));
    adj.gm_sp.assign(static_cast<std::size_t>(m), VectorXd::Zero(s));
    adj.scene = VectorXd::Zero(s);
    adj.persons.assign(static_cast<std::size_t>(m), VectorXd::Zero(a));
    return adj;
  }
};

VectorXd scene_average_excluding(const std::vector<VectorXd>& ps, int excluded, int length) {
  VectorXd sum = VectorXd::Zero(length);
  int count = 0;
  for (int k = 0; k < static_cast<int>(ps.size()); ++k) {
    if (k == excluded) continue;
    sum += ps[static_cast<std::size_t>(k)];
    ++count;
  }
  return count == 0 ? sum : VectorXd(sum / count);
}

void zero_frozen(Gradients& grads, Phase phase) {
  const auto mask = UpdateMask::for_phase(phase);
  for (auto& blocks : grads.blocks) {
    blocks.for_each([&](const ParamInfo& info, Eigen::Map<Eigen::MatrixXd> view) {
      if (!mask.allows(info)) view.setZero();
    });
  }
}

}  // namespace

BackwardResult backward(const ModelParams& params, const FrameInstance& inst, int steps,
                        double lambda, Phase phase) {
  if (!inst.labeled()) throw std::invalid_argument("backward needs a labeled instance");
  const bool use_gates = gates_active(params, phase);
  const InferenceTrace trace = forward(params, inst, steps, use_gates);

  BackwardResult out{loss(trace, lambda, use_gates), params.zeros_like()};
  const int m = inst.persons();
  const int a = params.dims.actions;
  const int s = params.dims.scenes;
  const auto& labels = *inst.action_labels;
  const int scene_label = *inst.scene_label;
  const VectorXd& xs = inst.scene_unary;
  auto pp = [m](int i, int j) { return static_cast<std::size_t>(i * m + j); };
  auto x = [&](int i) -> const VectorXd& { return inst.person_unaries[static_cast<std::size_t>(i)]; };

  StepAdjoint next = StepAdjoint::zeros(m, a, s);
  for (int t = steps; t >= 1; --t) {
    const BlockSet& p = params.at_step(t);
    BlockSet& g = out.grads.at_step(t);
    const MessageState& st = trace.states[static_cast<std::size_t>(t - 1)];
    const Predictions& pr = trace.preds[static_cast<std::size_t>(t - 1)];
    const MessageState& prev = trace.state_before(t);
    const Predictions& prev_c = trace.preds_before(t);

    StepAdjoint cur = std::move(next);
    StepAdjoint prv = StepAdjoint::zeros(m, a, s);

    // Scene prediction.
    {
      VectorXd dz = softmax_backward(pr.scene, cur.scene) + pr.scene;
      dz[scene_label] -= 1.0;
      const VectorXd pooled = scene_average_excluding(st.gm_ps, -1, a);
      g.w_hc1.leftCols(s) += dz * xs.transpose();
      g.w_hc1.rightCols(a) += dz * pooled.transpose();
      g.b_hc1 += dz;
      const VectorXd d_pooled = p.w_hc1.rightCols(a).transpose() * dz / m;
      for (int k = 0; k < m; ++k) cur.gm_ps[static_cast<std::size_t>(k)] += d_pooled;
    }

    // Person predictions.
    for (int i = 0; i < m; ++i) {
      const auto si = static_cast<std::size_t>(i);
      VectorXd ce = pr.persons[si];
      ce[labels[si]] -= 1.0;
      const VectorXd dz = softmax_backward(pr.persons[si], cur.persons[si]) + ce / m;
      const VectorXd pooled = incoming_person_average(st.gm_pp, m, i, -1, a);
      g.w_hc2.leftCols(a) += dz * x(i).transpose();
      g.w_hc2.middleCols(a, a) += dz * pooled.transpose();
      g.w_hc2.rightCols(s) += dz * st.gm_sp[si].transpose();
      g.b_hc2 += dz;
      if (m > 1) {
        const VectorXd d_pooled = p.w_hc2.middleCols(a, a).transpose() * dz / (m - 1);
        for (int k = 0; k < m; ++k) {
          if (k != i) cur.gm_pp[pp(k, i)] += d_pooled;
        }
      }
      cur.gm_sp[si] += p.w_hc2.rightCols(s).transpose() * dz;
    }

    // Gates: adjoints of the raw messages.
    std::vector<VectorXd> dm_pp(static_cast<std::size_t>(m * m), VectorXd::Zero(a));
    std::vector<VectorXd> dm_ps(static_cast<std::size_t>(m), VectorXd::Zero(a));
    std::vector<VectorXd> dm_sp(static_cast<std::size_t>(m), VectorXd::Zero(s));
    if (!use_gates) {
      dm_pp = cur.gm_pp;
      dm_ps = cur.gm_ps;
      dm_sp = cur.gm_sp;
    } else {
      std::vector<double> d_dir_pp(static_cast<std::size_t>(m * m), 0.0);
      std::vector<double> d_dir_ps(static_cast<std::size_t>(m), 0.0);
      for (int i = 0; i < m; ++i) {
        for (int j = i + 1; j < m; ++j) {
          const auto ij = pp(i, j);
          const auto ji = pp(j, i);
          const double ge = st.gate_pp[ij];
          dm_pp[ij] = ge * cur.gm_pp[ij];
          dm_pp[ji] = ge * cur.gm_pp[ji];
          const double d_edge = cur.gm_pp[ij].dot(st.m_pp[ij]) + cur.gm_pp[ji].dot(st.m_pp[ji]) + lambda;
          d_dir_pp[ij] = d_edge / 2;
          d_dir_pp[ji] = d_edge / 2;
        }
        const auto si = static_cast<std::size_t>(i);
        const double ge = st.gate_ps[si];
        dm_ps[si] = ge * cur.gm_ps[si];
        dm_sp[si] = ge * cur.gm_sp[si];
        d_dir_ps[si] = (cur.gm_ps[si].dot(st.m_ps[si]) + cur.gm_sp[si].dot(st.m_sp[si]) + lambda) / 2;
      }

      // person -> person gates, context [x_j, c_j, m_ij, avg_{k != i,j} m_kj]
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
          if (i == j) continue;
          const auto ij = pp(i, j);
          const auto sj = static_cast<std::size_t>(j);
          const double gv = st.gate_dir_pp[ij];
          const double da = d_dir_pp[ij] * gv * (1.0 - gv);
          const VectorXd others = incoming_person_average(st.m_pp, m, j, i, a);
          g.g_pp.segment(0, a) += da * x(j);
          g.g_pp.segment(a, a) += da * prev_c.persons[sj];
          g.g_pp.segment(2 * a, a) += da * st.m_pp[ij];
          g.g_pp.segment(3 * a, a) += da * others;
          g.gb_pp += da;
          prv.persons[sj] += da * p.g_pp.segment(a, a);
          dm_pp[ij] += da * p.g_pp.segment(2 * a, a);
          if (m > 2) {
            const VectorXd d_avg = da * p.g_pp.segment(3 * a, a) / (m - 2);
            for (int k = 0; k < m; ++k) {
              if (k != i && k != j) dm_pp[pp(k, j)] += d_avg;
            }
          }
        }
      }

      for (int i = 0; i < m; ++i) {
        const auto si = static_cast<std::size_t>(i);
        // scene -> person gate, context [x_i, c_i, m_si, avg_{k != i} m_ki]
        {
          const double gv = st.gate_dir_sp[si];
          const double da = d_dir_ps[si] * gv * (1.0 - gv);
          const VectorXd others = incoming_person_average(st.m_pp, m, i, -1, a);
          g.g_sp.segment(0, a) += da * x(i);
          g.g_sp.segment(a, a) += da * prev_c.persons[si];
          g.g_sp.segment(2 * a, s) += da * st.m_sp[si];
          g.g_sp.segment(2 * a + s, a) += da * others;
          g.gb_sp += da;
          prv.persons[si] += da * p.g_sp.segment(a, a);
          dm_sp[si] += da * p.g_sp.segment(2 * a, s);
          if (m > 1) {
            const VectorXd d_avg = da * p.g_sp.segment(2 * a + s, a) / (m - 1);
            for (int k = 0; k < m; ++k) {
              if (k != i) dm_pp[pp(k, i)] += d_avg;
            }
          }
        }
        // person -> scene gate, context [x_s, c_s, m_is, avg_{k != i} m_ks]
        {
          const double gv = st.gate_dir_ps[si];
          const double da = d_dir_ps[si] * gv * (1.0 - gv);
          const VectorXd others = scene_average_excluding(st.m_ps, i, a);
          g.g_ps.segment(0, s) += da * xs;
          g.g_ps.segment(s, s) += da * prev_c.scene;
          g.g_ps.segment(2 * s, a) += da * st.m_ps[si];
          g.g_ps.segment(2 * s + a, a) += da * others;
          g.gb_ps += da;
          prv.scene += da * p.g_ps.segment(s, s);
          dm_ps[si] += da * p.g_ps.segment(2 * s, a);
          if (m > 1) {
            const VectorXd d_avg = da * p.g_ps.segment(2 * s + a, a) / (m - 1);
            for (int k = 0; k < m; ++k) {
              if (k != i) dm_ps[static_cast<std::size_t>(k)] += d_avg;
            }
          }
        }
      }
    }

    // Raw messages.
    for (int i = 0; i < m; ++i) {
      const auto si = static_cast<std::size_t>(i);
      for (int j = 0; j < m; ++j) {
        if (i == j) continue;
        const auto ij = pp(i, j);
        const VectorXd dz = softmax_backward(st.m_pp[ij], dm_pp[ij]);
        const VectorXd neighbours = incoming_person_average(prev.gm_pp, m, i, j, a);
        g.w_xm_p += dz * x(i).transpose();
        g.w_cm_p += dz * prev_c.persons[si].transpose();
        g.w_aa += dz * neighbours.transpose();
        g.w_sa += dz * prev.gm_sp[si].transpose();
        g.b_pp += dz;
        prv.persons[si] += p.w_cm_p.transpose() * dz;
        if (m > 2) {
          const VectorXd d_avg = p.w_aa.transpose() * dz / (m - 2);
          for (int k = 0; k < m; ++k) {
            if (k != i && k != j) prv.gm_pp[pp(k, i)] += d_avg;
          }
        }
        prv.gm_sp[si] += p.w_sa.transpose() * dz;
      }

      {
        const VectorXd dz = softmax_backward(st.m_ps[si], dm_ps[si]);
        const VectorXd neighbours = incoming_person_average(prev.gm_pp, m, i, -1, a);
        g.w_xm_p += dz * x(i).transpose();
        g.w_cm_p += dz * prev_c.persons[si].transpose();
        g.w_aa += dz * neighbours.transpose();
        g.b_ps += dz;
        prv.persons[si] += p.w_cm_p.transpose() * dz;
        if (m > 1) {
          const VectorXd d_avg = p.w_aa.transpose() * dz / (m - 1);
          for (int k = 0; k < m; ++k) {
            if (k != i) prv.gm_pp[pp(k, i)] += d_avg;
          }
        }
      }

      {
        const VectorXd dz = softmax_backward(st.m_sp[si], dm_sp[si]);
        const VectorXd others = scene_average_excluding(prev.gm_ps, i, a);
        g.w_xm_s += dz * xs.transpose();
        g.w_cm_s += dz * prev_c.scene.transpose();
        g.w_as += dz * others.transpose();
        g.b_sp += dz;
        prv.scene += p.w_cm_s.transpose() * dz;
        if (m > 1) {
          const VectorXd d_avg = p.w_as.transpose() * dz / (m - 1);
          for (int k = 0; k < m; ++k) {
            if (k != i) prv.gm_ps[static_cast<std::size_t>(k)] += d_avg;
          }
        }
      }
    }

    next = std::move(prv);
  }

  zero_frozen(out.grads, phase);
  return out;
}

BackwardResult backward(const ModelParams& params, const FrameInstance& inst, const TrainConfig& config) {
  return backward(params, inst, config.steps, config.lambda, config.phase);
}

}  // namespace sim
