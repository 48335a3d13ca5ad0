#include "sim/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "sim/math.hpp"

namespace sim {

namespace {

/// Runs fn(k) for k in [0, n) on up to `threads` workers. Callers write
/// results into per-index slots and reduce them in index order afterwards.
template <typename F>
void parallel_for(std::size_t n, int threads, F&& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || n < 2) {
    for (std::size_t k = 0; k < n; ++k) fn(k);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t used = std::min(workers, n);
  pool.reserve(used);
  for (std::size_t w = 0; w < used; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t k = w; k < n; k += used) fn(k);
    });
  }
  for (auto& th : pool) th.join();
}

template <typename Scalar>
Scalar step_gate_sum(const BasicMessageState<Scalar>& st) {
  Scalar sum = 0;
  for (int i = 0; i < st.persons; ++i) {
    for (int j = i + 1; j < st.persons; ++j) sum += st.gate_pp[st.pp(i, j)];
  }
  for (const auto g : st.gate_ps) sum += g;
  return sum;
}

template <typename Scalar>
BasicLossBreakdown<Scalar> single_step_loss(const BasicInferenceTrace<Scalar>& trace, int t,
                                            double lambda, bool gates_used) {
  using std::log;
  const auto& inst = trace.instance;
  const auto& pr = trace.preds[static_cast<std::size_t>(t - 1)];
  BasicLossBreakdown<Scalar> out;
  out.ce_scene = -log(pr.scene[*inst.scene_label]);
  Scalar person = 0;
  const auto& labels = *inst.action_labels;
  for (std::size_t i = 0; i < labels.size(); ++i) person += -log(pr.persons[i][labels[i]]);
  out.ce_person = person / static_cast<Scalar>(labels.size());
  if (gates_used) {
    out.gate_l1 = static_cast<Scalar>(lambda) * step_gate_sum(trace.states[static_cast<std::size_t>(t - 1)]);
  }
  out.total = out.ce_scene + out.ce_person + out.gate_l1;
  return out;
}

}  // namespace

std::string_view to_string(Phase phase) {
  switch (phase) {
    case Phase::joint:
      return "joint";
    case Phase::predictors_only:
      return "predictors-only";
    case Phase::gates_only:
      return "gates-only";
  }
  return "joint";
}

Phase parse_phase(std::string_view text) {
  if (text == "joint") return Phase::joint;
  if (text == "predictors-only") return Phase::predictors_only;
  if (text == "gates-only") return Phase::gates_only;
  throw std::invalid_argument("unknown phase '" + std::string(text) + "'");
}

template <typename Scalar>
BasicLossBreakdown<Scalar> loss(const BasicInferenceTrace<Scalar>& trace, double lambda, bool gates_used) {
  if (!trace.instance.labeled()) throw std::invalid_argument("loss needs scene and action labels");
  BasicLossBreakdown<Scalar> out;
  for (int t = 1; t <= trace.steps; ++t) out += single_step_loss(trace, t, lambda, gates_used);
  out.total = out.ce_scene + out.ce_person + out.gate_l1;
  return out;
}

template BasicLossBreakdown<double> loss(const BasicInferenceTrace<double>&, double, bool);
template BasicLossBreakdown<long double> loss(const BasicInferenceTrace<long double>&, double, bool);

LossBreakdown step_loss(const InferenceTrace& trace, int t, double lambda, bool gates_used) {
  if (!trace.instance.labeled()) throw std::invalid_argument("loss needs scene and action labels");
  return single_step_loss(trace, t, lambda, gates_used);
}

void TrainConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("steps must be >= 1");
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0,1)");
  if (epochs < 0 || gate_epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (threads < 1) throw std::invalid_argument("threads must be >= 1");
  if (two_phase && !gated) throw std::invalid_argument("two-phase training needs a gated model");
}

UpdateMask UpdateMask::for_phase(Phase phase, bool freeze_biases) {
  UpdateMask mask;
  mask.biases = !freeze_biases;
  if (phase == Phase::predictors_only) mask.gate = false;
  if (phase == Phase::gates_only) {
    mask.message = false;
    mask.prediction = false;
  }
  return mask;
}

bool UpdateMask::allows(const ParamInfo& info) const {
  // Gate scalar biases are gate parameters, not frozen with the affine biases.
  if (info.is_bias && info.group != ParamGroup::gate && !biases) return false;
  switch (info.group) {
    case ParamGroup::message:
      return message;
    case ParamGroup::prediction:
      return prediction;
    case ParamGroup::gate:
      return gate;
  }
  return true;
}

namespace {

void check_same_layout(const ModelParams& a, const ModelParams& b) {
  if (a.blocks.size() != b.blocks.size() || !(a.dims == b.dims)) {
    throw std::invalid_argument("parameter layouts differ");
  }
}

template <typename F>
void zip_blocks(BlockSet& y, const BlockSet& x, F&& f) {
  std::vector<Eigen::Map<const Eigen::MatrixXd>> xs;
  x.for_each([&](const ParamInfo&, const Eigen::Map<const Eigen::MatrixXd>& v) { xs.push_back(v); });
  std::size_t k = 0;
  y.for_each([&](const ParamInfo& info, Eigen::Map<Eigen::MatrixXd> v) {
    if (v.rows() != xs[k].rows() || v.cols() != xs[k].cols()) {
      throw std::invalid_argument("block shape mismatch in " + std::string(info.name));
    }
    f(info, v, xs[k]);
    ++k;
  });
}

}  // namespace

void accumulate(Gradients& y, const Gradients& x, double alpha) {
  check_same_layout(y, x);
  for (std::size_t b = 0; b < y.blocks.size(); ++b) {
    zip_blocks(y.blocks[b], x.blocks[b], [&](const ParamInfo&, auto& yv, const auto& xv) { yv += alpha * xv; });
  }
}

void sgd_step(ModelParams& params, const Gradients& grads, ModelParams& velocity,
              double learning_rate, double momentum, const UpdateMask& mask) {
  check_same_layout(params, grads);
  check_same_layout(params, velocity);
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    BlockSet& vel = velocity.blocks[b];
    zip_blocks(vel, grads.blocks[b], [&](const ParamInfo& info, auto& vv, const auto& gv) {
      if (mask.allows(info)) vv = momentum * vv - learning_rate * gv;
    });
    zip_blocks(params.blocks[b], vel, [&](const ParamInfo& info, auto& pv, const auto& vv) {
      if (mask.allows(info)) pv += vv;
    });
  }
}

GradCheckReport finite_diff_oracle(const ModelParams& params, const FrameInstance& inst, int steps,
                                   double lambda, Phase phase, double epsilon) {
  using Wide = long double;
  const BackwardResult analytic = backward(params, inst, steps, lambda, phase);
  const bool use_gates = gates_active(params, phase);
  const auto mask = UpdateMask::for_phase(phase);
  BasicModelParams<Wide> wide = params.cast<Wide>();

  auto loss_at = [&]() {
    return loss(forward(wide, inst, steps, use_gates), lambda, use_gates).total;
  };

  GradCheckReport report;
  const Wide eps = static_cast<Wide>(epsilon);
  for (std::size_t b = 0; b < wide.blocks.size(); ++b) {
    std::vector<Eigen::Map<const Eigen::MatrixXd>> grad_views;
    analytic.grads.blocks[b].for_each(
        [&](const ParamInfo&, const Eigen::Map<const Eigen::MatrixXd>& v) { grad_views.push_back(v); });
    std::size_t field = 0;
    wide.blocks[b].for_each([&](const ParamInfo& info, Eigen::Map<Mat<Wide>> view) {
      const auto& gview = grad_views[field++];
      if (!mask.allows(info)) return;
      for (Eigen::Index e = 0; e < view.size(); ++e) {
        Wide& theta = view.data()[e];
        const Wide saved = theta;
        theta = saved + eps;
        const Wide up = loss_at();
        theta = saved - eps;
        const Wide down = loss_at();
        theta = saved;
        const double numeric = static_cast<double>((up - down) / (2 * eps));
        const double exact = gview.data()[e];
        const double rel = std::abs(exact - numeric) / std::max(1e-8, std::abs(exact) + std::abs(numeric));
        ++report.entries_checked;
        if (report.worst_entry.empty() || rel > report.max_rel_error) {
          report.max_rel_error = rel;
          report.worst_entry = std::to_string(b) + "/" + std::string(info.name) + "[" + std::to_string(e) + "]";
          report.worst_analytic = exact;
          report.worst_numeric = numeric;
        }
      }
    });
  }
  return report;
}

void validate_dataset(const Dataset& data, const Dims& dims, bool require_labels) {
  for (std::size_t n = 0; n < data.size(); ++n) {
    try {
      validate_instance(data[n], dims);
      if (require_labels && !data[n].labeled()) throw ValidationError("missing labels");
    } catch (const ValidationError& e) {
      throw ValidationError("instance " + std::to_string(n) + ": " + e.what());
    }
  }
}

EvalReport evaluate(const ModelParams& params, const Dataset& data, int steps, double lambda, int threads) {
  if (data.empty()) throw std::invalid_argument("cannot evaluate on an empty dataset");
  struct PerInstance {
    std::vector<int> scene_hit;
    std::vector<int> person_hits;
    std::vector<LossBreakdown> losses;
    std::vector<double> gate_pp_sum;
    std::vector<double> gate_ps_sum;
    int unary_scene_hit = 0;
    int unary_person_hits = 0;
  };
  std::vector<PerInstance> slots(data.size());
  parallel_for(data.size(), threads, [&](std::size_t n) {
    const auto& inst = data[n];
    const auto trace = forward(params, inst, steps);
    PerInstance& out = slots[n];
    const int m = inst.persons();
    out.unary_scene_hit = argmax(inst.scene_unary) == inst.scene_label.value_or(-1);
    for (int i = 0; i < m; ++i) {
      out.unary_person_hits +=
          inst.action_labels && argmax(inst.person_unaries[static_cast<std::size_t>(i)]) ==
                                    (*inst.action_labels)[static_cast<std::size_t>(i)];
    }
    for (int t = 1; t <= steps; ++t) {
      const auto& pr = trace.preds[static_cast<std::size_t>(t - 1)];
      const auto& st = trace.states[static_cast<std::size_t>(t - 1)];
      out.scene_hit.push_back(argmax(pr.scene) == inst.scene_label.value_or(-1));
      int hits = 0;
      for (int i = 0; i < m; ++i) {
        hits += inst.action_labels && argmax(pr.persons[static_cast<std::size_t>(i)]) ==
                                          (*inst.action_labels)[static_cast<std::size_t>(i)];
      }
      out.person_hits.push_back(hits);
      out.losses.push_back(inst.labeled() ? step_loss(trace, t, lambda, params.gated) : LossBreakdown{});
      double pp_sum = 0;
      for (int i = 0; i < m; ++i) {
        for (int j = i + 1; j < m; ++j) pp_sum += st.gate_pp[st.pp(i, j)];
      }
      out.gate_pp_sum.push_back(pp_sum);
      out.gate_ps_sum.push_back(std::accumulate(st.gate_ps.begin(), st.gate_ps.end(), 0.0));
    }
  });

  EvalReport report;
  report.instances = data.size();
  std::size_t persons = 0;
  std::size_t pp_edges = 0;
  for (const auto& inst : data) {
    persons += static_cast<std::size_t>(inst.persons());
    pp_edges += static_cast<std::size_t>(inst.persons() * (inst.persons() - 1) / 2);
  }
  const double n = static_cast<double>(data.size());
  for (const auto& s : slots) {
    report.unary_scene_accuracy += s.unary_scene_hit;
    report.unary_person_accuracy += s.unary_person_hits;
  }
  report.unary_scene_accuracy /= n;
  report.unary_person_accuracy /= static_cast<double>(persons);
  for (int t = 1; t <= steps; ++t) {
    const auto k = static_cast<std::size_t>(t - 1);
    StepMetrics m;
    m.step = t;
    double scene = 0, person = 0, gpp = 0, gps = 0;
    for (const auto& s : slots) {
      scene += s.scene_hit[k];
      person += s.person_hits[k];
      m.loss += s.losses[k];
      gpp += s.gate_pp_sum[k];
      gps += s.gate_ps_sum[k];
    }
    m.scene_accuracy = scene / n;
    m.person_accuracy = person / static_cast<double>(persons);
    m.loss.total /= n;
    m.loss.ce_scene /= n;
    m.loss.ce_person /= n;
    m.loss.gate_l1 /= n;
    m.mean_gate_pp = pp_edges == 0 ? 1.0 : gpp / static_cast<double>(pp_edges);
    m.mean_gate_ps = gps / static_cast<double>(persons);
    report.steps.push_back(m);
  }
  return report;
}

TrainResult train_phase(const ModelParams& start, const Dataset& data, const TrainConfig& config,
                        Phase phase, int epochs, const Dataset& validation, const EpochCallback& on_epoch) {
  config.validate();
  if (data.empty()) throw std::invalid_argument("cannot train on an empty dataset");
  validate_params(start);
  validate_dataset(data, start.dims, true);

  TrainResult result{start, start.zeros_like(), {}};
  const auto mask = UpdateMask::for_phase(phase, config.freeze_biases);
  const double eval_lambda = gates_active(start, phase) ? config.lambda : 0.0;
  const Dataset& monitor = validation.empty() ? data : validation;

  // Each phase draws its own shuffle stream so a resumed phase replays identically.
  std::mt19937_64 rng(config.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(phase) + 1);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t begin = 0; begin < order.size(); begin += batch) {
      const std::size_t end = std::min(order.size(), begin + batch);
      std::vector<Gradients> per(end - begin);
      parallel_for(end - begin, config.threads, [&](std::size_t k) {
        per[k] = backward(result.params, data[order[begin + k]], config.steps, config.lambda, phase).grads;
      });
      Gradients total = result.params.zeros_like();
      for (const auto& g : per) accumulate(total, g);
      sgd_step(result.params, total, result.velocity, config.learning_rate, config.momentum, mask);
    }
    ModelParams eval_params = result.params;
    if (phase == Phase::predictors_only) eval_params.gated = false;
    EpochRecord record{phase, epoch, evaluate(eval_params, monitor, config.steps, eval_lambda, config.threads)};
    if (on_epoch) on_epoch(record);
    result.history.push_back(std::move(record));
  }
  return result;
}

TrainResult train(const Dataset& data, const TrainConfig& config, const Dataset& validation,
                  const ModelParams* start, const EpochCallback& on_epoch) {
  config.validate();
  if (data.empty()) throw std::invalid_argument("cannot train on an empty dataset");
  const Dims dims{static_cast<int>(data.front().person_unaries.front().size()),
                  static_cast<int>(data.front().scene_unary.size())};
  const ModelParams init =
      start ? *start : init_params(dims, config.steps, config.sharing, config.gated, config.seed);
  if (!config.two_phase) return train_phase(init, data, config, config.phase, config.epochs, validation, on_epoch);

  TrainResult first = train_phase(init, data, config, Phase::predictors_only, config.epochs, validation, on_epoch);
  TrainResult second = train_phase(first.params, data, config, Phase::gates_only, config.gate_epochs, validation, on_epoch);
  first.history.insert(first.history.end(), second.history.begin(), second.history.end());
  second.history = std::move(first.history);
  return second;
}

std::string variant_name(const ModelParams& params) {
  return std::string(params.gated ? "gated-" : "") + std::string(to_string(params.sharing));
}

std::vector<AblationRow> ablate(const Dataset& data, const Dataset& eval, const TrainConfig& base,
                                const EpochCallback& on_epoch) {
  std::vector<AblationRow> rows;
  for (bool gated : {false, true}) {
    for (auto sharing : {WeightSharing::tied, WeightSharing::untied}) {
      TrainConfig cfg = base;
      cfg.sharing = sharing;
      cfg.gated = gated;
      if (!gated) {
        cfg.two_phase = false;
        cfg.phase = Phase::joint;
      }
      cfg.validate();
      AblationRow row;
      row.result = train(data, cfg, eval, nullptr, on_epoch);
      row.variant = variant_name(row.result.params);
      row.report = evaluate(row.result.params, eval, cfg.steps, gated ? cfg.lambda : 0.0, cfg.threads);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace sim
