// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>

#include "sim/io.hpp"
#include "sim/synth.hpp"
#include "sim/training.hpp"
#include "test_util.hpp"

#ifndef SIM_REFERENCE_CONFIG
#error "SIM_REFERENCE_CONFIG must name configs/reference.json"
#endif

namespace {

using namespace sim;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
  return buf;
}

// ---- 1

Outcome gradient_oracle() {
  const auto t0 = Clock::now();
  const Dims dims{5, 4};
  double worst = 0;
  std::string where;
  int configs = 0;
  std::uint64_t seed = 1;
  for (auto sharing : {WeightSharing::tied, WeightSharing::untied}) {
    for (bool gated : {true, false}) {
      for (int steps : {1, 3}) {
        for (int persons : {1, 2, 4}) {
          const auto params = testing::random_params(dims, steps, sharing, gated, seed);
          const auto inst = testing::random_instance(dims, persons, seed + 1000);
          ++seed;
          const auto r = finite_diff_oracle(params, inst, steps, 0.01, Phase::joint, 1e-5);
          ++configs;
          if (r.max_rel_error >= worst) {
            worst = r.max_rel_error;
            where = std::string(to_string(sharing)) + (gated ? " gated" : " ungated") + " T=" +
                    std::to_string(steps) + " M=" + std::to_string(persons) + " " + r.worst_entry;
          }
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 120.0,
          std::to_string(configs) + " configs, max rel error " + num(worst) + " (" + where + "), " + num(secs, 3) +
              " s"};
}

// ---- 2

Outcome normalization() {
  std::mt19937_64 rng(2);
  double raw = 0, gated_gap = 0;
  for (int n = 0; n < 100; ++n) {
    const Dims dims{std::uniform_int_distribution<int>(2, 6)(rng), std::uniform_int_distribution<int>(2, 6)(rng)};
    const int m = std::uniform_int_distribution<int>(1, 8)(rng);
    const int steps = std::uniform_int_distribution<int>(1, 4)(rng);
    const auto sharing = n % 2 ? WeightSharing::tied : WeightSharing::untied;
    const auto params = testing::random_params(dims, steps, sharing, n % 4 != 3, rng(), 2.0);
    const auto trace = forward(params, testing::random_instance(dims, m, rng()), steps);
    auto unit = [&](const Eigen::VectorXd& v) { raw = std::max(raw, std::abs(v.sum() - 1.0)); };
    auto scaled = [&](const Eigen::VectorXd& v, double g) { gated_gap = std::max(gated_gap, std::abs(v.sum() - g)); };
    for (std::size_t t = 0; t < trace.states.size(); ++t) {
      const auto& st = trace.states[t];
      for (int i = 0; i < m; ++i) {
        const auto si = static_cast<std::size_t>(i);
        for (int j = 0; j < m; ++j) {
          if (i == j) continue;
          unit(st.m_pp[st.pp(i, j)]);
          scaled(st.gm_pp[st.pp(i, j)], st.gate_pp[st.pp(i, j)]);
        }
        unit(st.m_ps[si]);
        unit(st.m_sp[si]);
        scaled(st.gm_ps[si], st.gate_ps[si]);
        scaled(st.gm_sp[si], st.gate_ps[si]);
        unit(trace.preds[t].persons[si]);
      }
      unit(trace.preds[t].scene);
    }
  }
  return {raw <= 1e-9 && gated_gap <= 1e-12,
          "100 passes, max |sum-1| " + num(raw) + ", max |sum(gated)-gate| " + num(gated_gap)};
}

// ---- 3

// Unrolls the step functions by hand with every gate overwritten to one.
InferenceTrace unit_gate_unroll(const ModelParams& params, const FrameInstance& inst, int steps) {
  auto [state, preds] = init_messages<double>(inst);
  InferenceTrace trace;
  trace.steps = steps;
  const int m = inst.persons();
  for (int t = 1; t <= steps; ++t) {
    const auto& b = params.at_step(t);
    MessageState next = state;
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < m; ++j) {
        if (i != j) next.m_pp[next.pp(i, j)] = person_to_person_message(b, state, preds, inst, i, j);
      }
      next.m_ps[static_cast<std::size_t>(i)] = person_to_scene_message(b, state, preds, inst, i);
      next.m_sp[static_cast<std::size_t>(i)] = scene_to_person_message(b, state, preds, inst, i);
    }
    compute_gates(b, next, preds, inst);
    for (auto* gates : {&next.gate_dir_pp, &next.gate_dir_ps, &next.gate_dir_sp, &next.gate_pp, &next.gate_ps}) {
      for (auto& g : *gates) g = 1.0;
    }
    apply_gates(next);
    Predictions p{predict_scene(b, next, inst), predict_persons(b, next, inst)};
    trace.states.push_back(next);
    trace.preds.push_back(p);
    state = next;
    preds = p;
  }
  return trace;
}

Outcome gate_identity() {
  double worst = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Dims dims{5, 4};
    const int m = static_cast<int>(1 + seed % 6);
    auto gated = testing::random_params(dims, 3, seed % 2 ? WeightSharing::tied : WeightSharing::untied, true, seed, 2.0);
    auto ungated = gated;
    ungated.gated = false;
    const auto inst = testing::random_instance(dims, m, seed * 31);
    const auto a = forward(ungated, inst, 3);
    const auto b = unit_gate_unroll(gated, inst, 3);
    for (std::size_t t = 0; t < 3; ++t) {
      worst = std::max(worst, (a.preds[t].scene - b.preds[t].scene).cwiseAbs().maxCoeff());
      for (std::size_t i = 0; i < static_cast<std::size_t>(m); ++i) {
        worst = std::max(worst, (a.preds[t].persons[i] - b.preds[t].persons[i]).cwiseAbs().maxCoeff());
      }
    }
  }
  return {worst <= 1e-12, "20 models, max prediction difference " + num(worst)};
}

// ---- 4

Outcome permutation() {
  std::mt19937_64 rng(4);
  const Dims dims{5, 4};
  double scene = 0, persons = 0;
  for (int n = 0; n < 20; ++n) {
    const int m = std::uniform_int_distribution<int>(2, 8)(rng);
    const auto params = testing::random_params(dims, 3, n % 2 ? WeightSharing::tied : WeightSharing::untied, true, rng(), 2.0);
    const auto inst = testing::random_instance(dims, m, rng());
    std::vector<int> perm(static_cast<std::size_t>(m));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    FrameInstance shuffled = inst;
    for (int i = 0; i < m; ++i) {
      shuffled.person_unaries[static_cast<std::size_t>(i)] = inst.person_unaries[static_cast<std::size_t>(perm[i])];
      (*shuffled.action_labels)[static_cast<std::size_t>(i)] = (*inst.action_labels)[static_cast<std::size_t>(perm[i])];
    }
    const auto a = forward(params, inst, 3);
    const auto b = forward(params, shuffled, 3);
    for (std::size_t t = 0; t < 3; ++t) {
      scene = std::max(scene, (a.preds[t].scene - b.preds[t].scene).cwiseAbs().maxCoeff());
      for (int i = 0; i < m; ++i) {
        persons = std::max(persons, (b.preds[t].persons[static_cast<std::size_t>(i)] -
                                     a.preds[t].persons[static_cast<std::size_t>(perm[i])])
                                        .cwiseAbs()
                                        .maxCoeff());
      }
    }
  }
  return {scene <= 1e-9 && persons <= 1e-9,
          "20 instances, scene max diff " + num(scene) + ", permuted person max diff " + num(persons)};
}

// ---- reference experiment shared by 5, 6, 7 and 9

struct Reference {
  SynthConfig train_synth;
  SynthConfig test_synth;
  TrainConfig train;
};

Reference load_reference() {
  std::ifstream in(SIM_REFERENCE_CONFIG);
  if (!in) throw std::runtime_error("cannot open " SIM_REFERENCE_CONFIG);
  const auto j = nlohmann::json::parse(in);
  const auto& g = j.at("generate");
  Reference r;
  r.train_synth.dims = Dims{g.at("actions").get<int>(), g.at("scenes").get<int>()};
  r.train_synth.persons_min = g.at("persons-min");
  r.train_synth.persons_max = g.at("persons-max");
  r.train_synth.distractor_rate = g.at("distractor-rate");
  r.train_synth.correlation = g.at("correlation");
  r.train_synth.unary_noise = g.at("noise");
  r.train_synth.count = g.at("count");
  r.train_synth.seed = g.at("seed");
  r.test_synth = r.train_synth;
  r.test_synth.count = j.at("_test_set").at("count");
  r.test_synth.seed = j.at("_test_set").at("seed");
  const auto& t = j.at("ablate");
  r.train.steps = t.at("steps");
  r.train.two_phase = t.at("phase") == "two-phase";
  r.train.lambda = t.at("lambda");
  r.train.learning_rate = t.at("lr");
  r.train.momentum = t.at("momentum");
  r.train.epochs = t.at("epochs");
  r.train.gate_epochs = t.at("gate-epochs");
  r.train.batch_size = t.at("batch");
  r.train.seed = t.at("seed");
  return r;
}

struct ReferenceRun {
  Reference ref;
  std::vector<SynthInstance> test;
  Dataset train_frames, test_frames;
  std::vector<AblationRow> ablation;
  double tied_pair_seconds = 0;  // ungated tied + gated-tied training
  double ablation_seconds = 0;
};

const AblationRow& row(const ReferenceRun& run, const std::string& name) {
  for (const auto& r : run.ablation) {
    if (r.variant == name) return r;
  }
  throw std::runtime_error("missing variant " + name);
}

ReferenceRun reference_run() {
  ReferenceRun run;
  run.ref = load_reference();
  run.train_frames = frames_of(generate(run.ref.train_synth));
  run.test = generate(run.ref.test_synth);
  run.test_frames = frames_of(run.test);
  const auto t0 = Clock::now();
  std::vector<double> seconds;
  auto last = t0;
  run.ablation = ablate(run.train_frames, run.test_frames, run.ref.train, [&](const EpochRecord& rec) {
    const bool final_epoch = (rec.phase == Phase::joint && rec.epoch == run.ref.train.epochs) ||
                             (rec.phase == Phase::gates_only && rec.epoch == run.ref.train.gate_epochs);
    if (final_epoch) {
      seconds.push_back(seconds_since(last));
      last = Clock::now();
    }
  });
  run.ablation_seconds = seconds_since(t0);
  // variant order is tied, untied, gated-tied, gated-untied
  run.tied_pair_seconds = seconds.size() == 4 ? seconds[0] + seconds[2] : run.ablation_seconds;
  return run;
}

// ---- 5

Outcome structure_benefit(const ReferenceRun& run) {
  const double ungated = row(run, "tied").report.steps.back().scene_accuracy;
  const double gated = row(run, "gated-tied").report.steps.back().scene_accuracy;
  const double gap = gated - ungated;
  return {gap >= 0.05 && run.tied_pair_seconds < 600.0,
          "t=3 scene accuracy gated-tied " + pct(gated) + " vs tied " + pct(ungated) + " (gap " +
              num(100 * gap, 3) + " points, need >= 5), " + num(run.tied_pair_seconds, 3) + " s"};
}

// ---- 6

Outcome refinement(const ReferenceRun& run) {
  const auto& r = row(run, "gated-tied").report;
  const double s1 = r.steps.front().scene_accuracy;
  const double s3 = r.steps.back().scene_accuracy;
  const double p3 = r.steps.back().person_accuracy;
  return {s3 >= s1 && p3 >= r.unary_person_accuracy,
          "gated-tied scene t=1 " + pct(s1) + ", t=3 " + pct(s3) + "; person t=3 " + pct(p3) + " vs unary argmax " +
              pct(r.unary_person_accuracy)};
}

// ---- 7

struct GateSplit {
  double mean_pp = 0;
  double relevant = 0;
  double distractor = 0;
};

GateSplit gate_split(const ModelParams& params, const std::vector<SynthInstance>& data, int steps) {
  double all = 0, rel = 0, dis = 0;
  std::size_t n_all = 0, n_rel = 0, n_dis = 0;
  for (std::size_t k = 0; k < data.size(); ++k) {
    const auto rows = gate_rows(forward(params, data[k].frame, steps), k, data[k].relevant);
    for (const auto& g : rows) {
      if (g.other < 0) continue;
      all += g.gate;
      ++n_all;
      if (g.relation == "relevant") {
        rel += g.gate;
        ++n_rel;
      } else {
        dis += g.gate;
        ++n_dis;
      }
    }
  }
  return {all / static_cast<double>(n_all), rel / static_cast<double>(n_rel), dis / static_cast<double>(n_dis)};
}

Outcome lambda_sparsity(const ReferenceRun& run) {
  auto cfg = run.ref.train;
  cfg.gated = true;
  cfg.two_phase = false;
  const auto init = init_params(run.ref.train_synth.dims, cfg.steps, WeightSharing::tied, true, cfg.seed);
  const auto predictors = train_phase(init, run.train_frames, cfg, Phase::predictors_only, cfg.epochs);
  std::vector<GateSplit> splits;
  std::string detail;
  for (double lambda : {0.0, 0.01, 0.1}) {
    cfg.lambda = lambda;
    const auto gates = train_phase(predictors.params, run.train_frames, cfg, Phase::gates_only, cfg.gate_epochs);
    splits.push_back(gate_split(gates.params, run.test, cfg.steps));
    detail += "lambda=" + num(lambda) + " mean pp gate " + num(splits.back().mean_pp) + "; ";
  }
  bool monotone = true;
  for (std::size_t k = 1; k < splits.size(); ++k) monotone = monotone && splits[k].mean_pp <= splits[k - 1].mean_pp;
  const auto& top = splits.back();
  detail += "at lambda=0.1 distractor-incident " + num(top.distractor) + " vs relevant-relevant " + num(top.relevant);
  return {monotone && top.distractor < top.relevant, detail};
}

// ---- 8

Outcome round_trip() {
  const auto dir = std::filesystem::temp_directory_path() / "sim_acceptance";
  std::filesystem::create_directories(dir);
  int identical = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Dims dims{static_cast<int>(2 + seed % 4), static_cast<int>(2 + seed % 3)};
    const auto sharing = seed % 2 ? WeightSharing::tied : WeightSharing::untied;
    Checkpoint ckpt;
    ckpt.params = testing::random_params(dims, 3, sharing, seed % 3 != 0, seed, 3.0);
    ckpt.steps = 3;
    ckpt.rng_seed = seed;
    const auto path = dir / ("ckpt" + std::to_string(seed) + ".json");
    save_checkpoint(path, ckpt);
    const auto back = load_checkpoint(path);
    const auto inst = testing::random_instance(dims, static_cast<int>(1 + seed % 5), seed);
    identical += back.params == ckpt.params && forward(back.params, inst, 3) == forward(ckpt.params, inst, 3);
  }
  SynthConfig synth;
  synth.count = 200;
  synth.unary_noise = 0.7;
  const auto file = DatasetFile::from_synth(synth.dims, generate(synth));
  save_dataset(dir / "data.jsonl", file);
  const auto back = load_dataset(dir / "data.jsonl");
  bool exact = back.records.size() == file.records.size();
  for (std::size_t n = 0; exact && n < file.records.size(); ++n) {
    const auto& a = file.records[n];
    const auto& b = back.records[n];
    exact = a.frame.scene_unary == b.frame.scene_unary && a.frame.person_unaries == b.frame.person_unaries &&
            a.frame.scene_label == b.frame.scene_label && a.frame.action_labels == b.frame.action_labels &&
            a.relevance == b.relevance;
  }
  return {identical == 10 && exact, std::to_string(identical) + "/10 checkpoints bit-identical, dataset " +
                                        (exact ? "exact" : "differs") + " over " + std::to_string(file.records.size()) +
                                        " frames"};
}

// ---- 9

Outcome ablation(const ReferenceRun& run) {
  std::ostringstream table;
  bool ok = run.ablation.size() == 4;
  for (const auto& r : run.ablation) ok = ok && r.report.steps.size() == 3;
  table << "rows:";
  for (const auto& r : run.ablation) {
    table << " " << r.variant << "[";
    for (const auto& m : r.report.steps) table << (m.step > 1 ? " " : "") << num(100 * m.scene_accuracy, 4);
    table << "]";
  }
  for (const auto& [gated, plain] : {std::pair{"gated-tied", "tied"}, std::pair{"gated-untied", "untied"}}) {
    const auto& g = row(run, gated).report.steps;
    const auto& u = row(run, plain).report.steps;
    for (std::size_t t = 0; t < g.size(); ++t) ok = ok && g[t].scene_accuracy >= u[t].scene_accuracy;
  }
  table << ", " << num(run.ablation_seconds, 3) << " s";
  return {ok, table.str()};
}

}  // namespace

int main() {
  int failed = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& check) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s  [%d] %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
  };

  report(1, "gradient oracle", gradient_oracle);
  report(2, "normalization", normalization);
  report(3, "gate identity", gate_identity);
  report(4, "permutation equivariance", permutation);
  report(8, "round-trip fidelity", round_trip);

  std::printf("running the reference experiment...\n");
  std::fflush(stdout);
  std::optional<ReferenceRun> run;
  try {
    run = reference_run();
  } catch (const std::exception& e) {
    std::printf("reference experiment failed: %s\n", e.what());
  }
  auto need_run = [&](const std::function<Outcome(const ReferenceRun&)>& f) {
    return [&run, f]() -> Outcome {
      if (!run) return {false, "reference experiment unavailable"};
      return f(*run);
    };
  };
  report(5, "structure-learning benefit", need_run(structure_benefit));
  report(6, "iteration refinement", need_run(refinement));
  report(7, "lambda sparsity", need_run(lambda_sparsity));
  report(9, "ablation harness", need_run(ablation));

  std::printf("%d of 9 criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
