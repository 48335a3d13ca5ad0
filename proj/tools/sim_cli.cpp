// siminfer: generate synthetic frames, train and evaluate structure inference
// models, run the ablation matrix, check gradients and export learned gates.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>

#include "sim/io.hpp"
#include "sim/synth.hpp"
#include "sim/training.hpp"

namespace {

using json = nlohmann::ordered_json;

constexpr int kUsageError = 2;
constexpr int kCheckFailure = 1;
constexpr double kGradTolerance = 1e-4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Presets look like {"train": {"lambda": 0.01, ...}, "generate": {...}}: one
// section per subcommand, keys are long flag names without dashes, and keys
// starting with '_' are comments. Flags given on the command line win.
class JsonPreset : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    json out = json::object();
    for (const CLI::App* sub : app->get_subcommands({})) {
      json section = json::object();
      for (const CLI::Option* opt : sub->get_options()) {
        const std::string name = opt->get_single_name();
        if (name.empty() || name == "help") continue;
        if (opt->count() > 0) {
          const auto& res = opt->results();
          section[name] = res.size() == 1 ? json(res[0]) : json(res);
        } else if (default_also) {
          section[name] = opt->get_default_str();
        }
      }
      out[sub->get_name()] = section;
    }
    return out.dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw CLI::ConversionError("config", std::string("preset is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw CLI::ConversionError("config", "preset must be a JSON object");
    std::vector<CLI::ConfigItem> items;
    for (const auto& [section, body] : doc.items()) {
      if (section.rfind('_', 0) == 0) continue;
      if (!body.is_object()) throw CLI::ConversionError("config", "preset section " + section + " must be an object");
      for (const auto& [key, value] : body.items()) {
        if (key.rfind('_', 0) == 0) continue;
        CLI::ConfigItem item;
        item.parents = {section};
        item.name = key;
        if (value.is_array()) {
          for (const auto& v : value) item.inputs.push_back(scalar_text(v));
        } else {
          item.inputs.push_back(scalar_text(value));
        }
        items.push_back(std::move(item));
      }
    }
    return items;
  }

 private:
  static std::string scalar_text(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_float()) return sim::format_double(v.get<double>());
    return v.dump();
  }
};

// --config is accepted after the subcommand name too.
void add_preset(CLI::App* sub) { sub->fallthrough(); }

void print_resolved(const std::string& command, const json& resolved) {
  std::cout << "resolved configuration:\n" << json{{command, resolved}}.dump(2) << "\n";
}

json train_json(const sim::TrainConfig& c) { return json::parse(sim::config_to_json(c)); }

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%6.2f", 100.0 * v);
  return buf;
}

void print_report(const sim::EvalReport& r) {
  for (const auto& m : r.steps) {
    std::cout << "  t=" << m.step << "  scene " << pct(m.scene_accuracy) << "%  person " << pct(m.person_accuracy)
              << "%  loss " << sim::format_double(m.loss.total) << "  gate_pp " << sim::format_double(m.mean_gate_pp)
              << "  gate_ps " << sim::format_double(m.mean_gate_ps) << "\n";
  }
}

// ---- generate

struct GenerateOptions {
  std::string out;
  sim::SynthConfig synth;
};

void setup_generate(CLI::App& app, GenerateOptions& o, std::function<int()>& run) {
  auto* sub = app.add_subcommand("generate", "Write a synthetic dataset (JSONL)");
  add_preset(sub);
  sub->add_option("--out", o.out, "Output dataset path")->required();
  sub->add_option("--persons-min", o.synth.persons_min, "Fewest persons per frame");
  sub->add_option("--persons-max", o.synth.persons_max, "Most persons per frame");
  sub->add_option("--actions", o.synth.dims.actions, "Number of action classes A");
  sub->add_option("--scenes", o.synth.dims.scenes, "Number of scene classes S");
  sub->add_option("--count", o.synth.count, "Number of frames");
  sub->add_option("--distractor-rate", o.synth.distractor_rate, "Probability a person ignores the group activity");
  sub->add_option("--correlation", o.synth.correlation, "Probability a relevant person performs the activity");
  sub->add_option("--noise", o.synth.unary_noise, "Unary sharpness: Dirichlet concentration added to the true class");
  sub->add_option("--seed", o.synth.seed, "Random seed");
  sub->callback([&o, &run] {
    run = [&o] {
      const auto& s = o.synth;
      print_resolved("generate", json{{"out", o.out},
                                      {"persons-min", s.persons_min},
                                      {"persons-max", s.persons_max},
                                      {"actions", s.dims.actions},
                                      {"scenes", s.dims.scenes},
                                      {"count", s.count},
                                      {"distractor-rate", s.distractor_rate},
                                      {"correlation", s.correlation},
                                      {"noise", s.unary_noise},
                                      {"seed", s.seed}});
      try {
        s.validate();
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      const auto file = sim::DatasetFile::from_synth(s.dims, sim::generate(s));
      sim::save_dataset(o.out, file);
      std::cout << "wrote " << file.records.size() << " frames to " << o.out << "\n";
      return 0;
    };
  });
}

// ---- shared training flags

struct TrainOptions {
  TrainOptions() { config.gated = false; }

  sim::TrainConfig config;
  std::string mode = "tied";
  std::string phase = "joint";
};

void add_training_flags(CLI::App* sub, TrainOptions& o, bool with_variant_flags) {
  auto& c = o.config;
  if (with_variant_flags) {
    sub->add_option("--mode", o.mode, "Weight sharing across steps")->check(CLI::IsMember({"tied", "untied"}));
    sub->add_flag("--gated", c.gated, "Learn structure gates (off unless given)");
  }
  sub->add_option("--steps", c.steps, "Inference steps T");
  sub->add_option("--lambda", c.lambda, "L1 weight on edge gates");
  sub->add_option("--lr", c.learning_rate, "Learning rate");
  sub->add_option("--momentum", c.momentum, "Momentum");
  sub->add_option("--epochs", c.epochs, "Epochs (predictor phase when two-phase)");
  sub->add_option("--gate-epochs", c.gate_epochs, "Epochs of the gates-only phase in two-phase training");
  sub->add_option("--batch", c.batch_size, "Mini-batch size");
  sub->add_option("--seed", c.seed, "Random seed");
  sub->add_option("--phase", o.phase, "Training schedule")
      ->check(CLI::IsMember({"joint", "two-phase", "predictors-only", "gates-only"}));
  sub->add_flag("--freeze-biases", c.freeze_biases, "Keep affine biases at their initial values");
  sub->add_option("--threads", c.threads, "Worker threads (results do not depend on it)");
}

sim::TrainConfig resolve_training(const TrainOptions& o) {
  sim::TrainConfig c = o.config;
  c.sharing = sim::parse_weight_sharing(o.mode);
  c.two_phase = o.phase == "two-phase";
  c.phase = c.two_phase ? sim::Phase::joint : sim::parse_phase(o.phase);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return c;
}

sim::DatasetFile load_checked(const std::string& path, const char* what) {
  try {
    return sim::load_dataset(path);
  } catch (const sim::IoError& e) {
    throw UsageError(std::string(what) + ": " + e.what());
  }
}

void require_dims(const sim::Dims& have, const sim::Dims& want, const std::string& what) {
  if (have.actions != want.actions || have.scenes != want.scenes) {
    throw UsageError("dims mismatch: " + what + " has A=" + std::to_string(have.actions) + ", S=" +
                     std::to_string(have.scenes) + " but A=" + std::to_string(want.actions) +
                     ", S=" + std::to_string(want.scenes) + " is required");
  }
}

void require_labels(const sim::DatasetFile& file, const std::string& what) {
  try {
    sim::validate_dataset(file.frames(), file.dims, true);
  } catch (const sim::ValidationError& e) {
    throw UsageError(what + ": " + e.what());
  }
}

void print_epoch(const sim::EpochRecord& rec) {
  std::cout << "[" << sim::to_string(rec.phase) << "] epoch " << rec.epoch << "\n";
  print_report(rec.report);
}

// ---- train

struct TrainCommand {
  std::string data, val, out_checkpoint, out_metrics;
  TrainOptions train;
};

void setup_train(CLI::App& app, TrainCommand& o, std::function<int()>& run) {
  auto* sub = app.add_subcommand("train", "Train a model and write a checkpoint");
  add_preset(sub);
  sub->add_option("--data", o.data, "Training dataset")->required()->check(CLI::ExistingFile);
  sub->add_option("--val", o.val, "Validation dataset (defaults to the training data)")->check(CLI::ExistingFile);
  sub->add_option("--out-checkpoint", o.out_checkpoint, "Checkpoint output path")->required();
  sub->add_option("--out-metrics", o.out_metrics, "Per-epoch metrics CSV");
  add_training_flags(sub, o.train, true);
  sub->callback([&o, &run] {
    run = [&o] {
      const auto config = resolve_training(o.train);
      json resolved{{"data", o.data}, {"val", o.val}, {"out-checkpoint", o.out_checkpoint},
                    {"out-metrics", o.out_metrics}};
      resolved["training"] = train_json(config);
      print_resolved("train", resolved);
      if (config.two_phase && !config.gated) throw UsageError("--phase two-phase needs --gated");

      const auto data = load_checked(o.data, "--data");
      require_labels(data, "--data");
      sim::DatasetFile val;
      if (!o.val.empty()) {
        val = load_checked(o.val, "--val");
        require_dims(val.dims, data.dims, "--val");
        require_labels(val, "--val");
      }
      const auto start = sim::init_params(data.dims, config.steps, config.sharing, config.gated, config.seed);
      const auto result = sim::train(data.frames(), config, val.frames(), &start, print_epoch);

      sim::Checkpoint ckpt{result.params, config.steps, result.velocity, config, config.seed};
      sim::save_checkpoint(o.out_checkpoint, ckpt);
      if (!o.out_metrics.empty()) {
        sim::save_metrics(o.out_metrics, sim::metrics_rows(variant_name(result.params), result.history));
      }
      std::cout << "wrote checkpoint " << o.out_checkpoint << "\n";
      return 0;
    };
  });
}

// ---- eval / export-gates share checkpoint handling

sim::Checkpoint load_model(const std::string& path) {
  try {
    return sim::load_checkpoint(path);
  } catch (const sim::IoError& e) {
    throw UsageError(e.what());
  }
}

int resolve_steps(const sim::Checkpoint& ckpt, int requested) {
  const int steps = requested > 0 ? requested : ckpt.steps;
  if (ckpt.params.sharing == sim::WeightSharing::untied && steps > ckpt.params.max_steps()) {
    throw UsageError("untied checkpoint supports T=" + std::to_string(ckpt.params.max_steps()) +
                     " at most, got --steps " + std::to_string(steps));
  }
  return steps;
}

using sim::variant_name;

struct EvalCommand {
  std::string data, checkpoint, out_metrics;
  int steps = 0;
  int threads = 1;
};

void setup_eval(CLI::App& app, EvalCommand& o, std::function<int()>& run) {
  auto* sub = app.add_subcommand("eval", "Evaluate a checkpoint at every step");
  add_preset(sub);
  sub->add_option("--data", o.data, "Labeled dataset")->required()->check(CLI::ExistingFile);
  sub->add_option("--checkpoint", o.checkpoint, "Checkpoint to evaluate")->required()->check(CLI::ExistingFile);
  sub->add_option("--steps", o.steps, "Inference steps (0 uses the checkpoint's T)");
  sub->add_option("--out-metrics", o.out_metrics, "Metrics CSV output");
  sub->add_option("--threads", o.threads, "Worker threads");
  sub->callback([&o, &run] {
    run = [&o] {
      print_resolved("eval", json{{"data", o.data}, {"checkpoint", o.checkpoint}, {"steps", o.steps},
                                  {"out-metrics", o.out_metrics}, {"threads", o.threads}});
      if (o.threads < 1) throw UsageError("--threads must be >= 1");
      const auto ckpt = load_model(o.checkpoint);
      const int steps = resolve_steps(ckpt, o.steps);
      const auto data = load_checked(o.data, "--data");
      require_dims(data.dims, ckpt.params.dims, "--data");
      require_labels(data, "--data");
      const double lambda = ckpt.config ? ckpt.config->lambda : 0.0;
      const auto report = sim::evaluate(ckpt.params, data.frames(), steps, lambda, o.threads);
      std::cout << variant_name(ckpt.params) << " on " << report.instances << " frames (unary argmax: scene "
                << pct(report.unary_scene_accuracy) << "%, person " << pct(report.unary_person_accuracy) << "%)\n";
      print_report(report);
      if (!o.out_metrics.empty()) {
        sim::save_metrics(o.out_metrics, sim::metrics_rows(variant_name(ckpt.params), "eval", 0, report));
      }
      return 0;
    };
  });
}

// ---- ablate

struct AblateCommand {
  std::string data, val, out_metrics;
  TrainOptions train;
};

void print_table(const char* title, const std::vector<std::pair<std::string, sim::EvalReport>>& rows, bool scene) {
  std::cout << title << "\n" << "  variant        ";
  for (const auto& m : rows.front().second.steps) std::cout << "  t=" << m.step << "   ";
  std::cout << "\n";
  for (const auto& [name, report] : rows) {
    std::cout << "  " << name << std::string(15 - std::min<std::size_t>(15, name.size()), ' ');
    for (const auto& m : report.steps) std::cout << "  " << pct(scene ? m.scene_accuracy : m.person_accuracy);
    std::cout << "\n";
  }
}

void setup_ablate(CLI::App& app, AblateCommand& o, std::function<int()>& run) {
  auto* sub = app.add_subcommand("ablate", "Train tied/untied x ungated/gated variants and tabulate accuracy");
  add_preset(sub);
  o.train.phase = "two-phase";
  sub->add_option("--data", o.data, "Training dataset")->required()->check(CLI::ExistingFile);
  sub->add_option("--val", o.val, "Evaluation dataset (defaults to the training data)")->check(CLI::ExistingFile);
  sub->add_option("--out-metrics", o.out_metrics, "Metrics CSV with one row per variant and step");
  add_training_flags(sub, o.train, false);
  sub->callback([&o, &run] {
    run = [&o] {
      auto opts = o.train;
      opts.config.gated = true;  // each variant sets its own gating
      auto base = resolve_training(opts);
      json resolved{{"data", o.data}, {"val", o.val}, {"out-metrics", o.out_metrics}};
      resolved["training"] = train_json(base);
      print_resolved("ablate", resolved);

      const auto data = load_checked(o.data, "--data");
      require_labels(data, "--data");
      sim::DatasetFile val = data;
      if (!o.val.empty()) {
        val = load_checked(o.val, "--val");
        require_dims(val.dims, data.dims, "--val");
        require_labels(val, "--val");
      }
      const auto train_frames = data.frames();
      const auto val_frames = val.frames();

      const auto results = sim::ablate(train_frames, val_frames, base, print_epoch);
      const int epochs = base.epochs + (base.two_phase ? base.gate_epochs : 0);
      std::vector<std::pair<std::string, sim::EvalReport>> table;
      std::vector<sim::MetricsRow> rows;
      for (const auto& r : results) {
        auto part = sim::metrics_rows(r.variant, "eval", r.variant.rfind("gated", 0) == 0 ? epochs : base.epochs, r.report);
        rows.insert(rows.end(), part.begin(), part.end());
        table.emplace_back(r.variant, r.report);
      }
      print_table("scene accuracy (%)", table, true);
      print_table("person accuracy (%)", table, false);
      if (!o.out_metrics.empty()) sim::save_metrics(o.out_metrics, rows);
      return 0;
    };
  });
}

// ---- gradcheck

struct GradcheckCommand {
  std::vector<int> dims{5, 4};
  std::vector<int> persons{1, 2, 4};
  std::vector<int> steps{1, 3};
  std::vector<std::string> modes{"tied", "untied"};
  std::string gated = "both";
  std::uint64_t seed = 1;
  double epsilon = 1e-5;
  double lambda = 0.01;
  std::string phase = "joint";
};

sim::FrameInstance random_frame(const sim::Dims& dims, int persons, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  auto draw = [&](int n) {
    Eigen::VectorXd v(n);
    for (int k = 0; k < n; ++k) v[k] = u(rng);
    return Eigen::VectorXd(v / v.sum());
  };
  sim::FrameInstance inst;
  inst.scene_unary = draw(dims.scenes);
  inst.scene_label = std::uniform_int_distribution<int>(0, dims.scenes - 1)(rng);
  std::vector<int> labels;
  for (int i = 0; i < persons; ++i) {
    inst.person_unaries.push_back(draw(dims.actions));
    labels.push_back(std::uniform_int_distribution<int>(0, dims.actions - 1)(rng));
  }
  inst.action_labels = labels;
  return inst;
}

void setup_gradcheck(CLI::App& app, GradcheckCommand& o, std::function<int()>& run) {
  auto* sub = app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
  add_preset(sub);
  sub->add_option("--dims", o.dims, "A,S")->delimiter(',')->expected(2);
  sub->add_option("--persons", o.persons, "Comma-separated person counts")->delimiter(',');
  sub->add_option("--steps", o.steps, "Comma-separated step counts")->delimiter(',');
  sub->add_option("--mode", o.modes, "Comma-separated weight sharing modes")
      ->delimiter(',')
      ->check(CLI::IsMember({"tied", "untied"}));
  sub->add_option("--gated", o.gated, "Gated models, ungated models or both")->check(CLI::IsMember({"on", "off", "both"}));
  sub->add_option("--seed", o.seed, "Seed for parameters and instances");
  sub->add_option("--epsilon", o.epsilon, "Central-difference step");
  sub->add_option("--lambda", o.lambda, "L1 weight on edge gates");
  sub->add_option("--phase", o.phase, "Which parameter groups receive gradients")
      ->check(CLI::IsMember({"joint", "predictors-only", "gates-only"}));
  sub->callback([&o, &run] {
    run = [&o] {
      print_resolved("gradcheck", json{{"dims", o.dims}, {"persons", o.persons}, {"steps", o.steps},
                                       {"mode", o.modes}, {"gated", o.gated}, {"seed", o.seed},
                                       {"epsilon", o.epsilon}, {"lambda", o.lambda}, {"phase", o.phase},
                                       {"tolerance", kGradTolerance}});
      const sim::Dims dims{o.dims[0], o.dims[1]};
      try {
        dims.validate();
        for (int m : o.persons) {
          if (m < 1) throw std::invalid_argument("--persons entries must be >= 1");
        }
        for (int t : o.steps) {
          if (t < 1) throw std::invalid_argument("--steps entries must be >= 1");
        }
        if (!(o.epsilon > 0)) throw std::invalid_argument("--epsilon must be positive");
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      const auto phase = sim::parse_phase(o.phase);
      std::vector<bool> gating;
      if (o.gated != "off") gating.push_back(true);
      if (o.gated != "on") gating.push_back(false);

      bool ok = true;
      std::uint64_t k = 0;
      for (const auto& mode : o.modes) {
        for (bool gated : gating) {
          for (int t : o.steps) {
            for (int m : o.persons) {
              const auto seed = sim::derive_seed(o.seed, k++);
              auto params = sim::init_params(dims, t, sim::parse_weight_sharing(mode), gated, seed);
              // push biases away from zero so every term is exercised
              std::mt19937_64 rng(seed);
              std::uniform_real_distribution<double> u(-0.5, 0.5);
              for (auto& b : params.blocks) {
                b.for_each([&](const sim::ParamInfo& info, Eigen::Map<Eigen::MatrixXd> v) {
                  if (info.is_bias) {
                    for (Eigen::Index n = 0; n < v.size(); ++n) v.data()[n] = u(rng);
                  }
                });
              }
              const auto inst = random_frame(dims, m, rng);
              const auto r = sim::finite_diff_oracle(params, inst, t, o.lambda, phase, o.epsilon);
              const bool pass = r.max_rel_error < kGradTolerance;
              ok = ok && pass;
              std::cout << (pass ? "ok   " : "FAIL ") << mode << (gated ? " gated  " : " ungated") << " T=" << t
                        << " M=" << m << "  max_rel_error " << sim::format_double(r.max_rel_error) << "  ("
                        << r.entries_checked << " entries, worst " << r.worst_entry << ")\n";
            }
          }
        }
      }
      std::cout << (ok ? "all configurations within " : "tolerance exceeded: ") << sim::format_double(kGradTolerance)
                << "\n";
      return ok ? 0 : kCheckFailure;
    };
  });
}

// ---- export-gates

struct ExportCommand {
  std::string data, checkpoint, out;
  int steps = 0;
};

void setup_export(CLI::App& app, ExportCommand& o, std::function<int()>& run) {
  auto* sub = app.add_subcommand("export-gates", "Write every edge gate per frame and step");
  add_preset(sub);
  sub->add_option("--data", o.data, "Dataset")->required()->check(CLI::ExistingFile);
  sub->add_option("--checkpoint", o.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  sub->add_option("--steps", o.steps, "Inference steps (0 uses the checkpoint's T)");
  sub->add_option("--out", o.out, "Output CSV")->required();
  sub->callback([&o, &run] {
    run = [&o] {
      print_resolved("export-gates",
                     json{{"data", o.data}, {"checkpoint", o.checkpoint}, {"steps", o.steps}, {"out", o.out}});
      const auto ckpt = load_model(o.checkpoint);
      const int steps = resolve_steps(ckpt, o.steps);
      const auto data = load_checked(o.data, "--data");
      require_dims(data.dims, ckpt.params.dims, "--data");
      std::vector<sim::GateRow> rows;
      for (std::size_t n = 0; n < data.records.size(); ++n) {
        const auto& rec = data.records[n];
        const auto part = sim::gate_rows(sim::forward(ckpt.params, rec.frame, steps), n, rec.relevance);
        rows.insert(rows.end(), part.begin(), part.end());
      }
      sim::save_gates(o.out, rows);
      std::cout << "wrote " << rows.size() << " gate rows to " << o.out << "\n";
      return 0;
    };
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structure inference over scene and person nodes with learned message gates"};
  app.require_subcommand(1);
  app.set_config("--config", "", "JSON preset with one section of flag defaults per subcommand");
  app.config_formatter(std::make_shared<JsonPreset>());
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.option_defaults()->always_capture_default();

  std::function<int()> run;
  GenerateOptions generate;
  TrainCommand train;
  EvalCommand eval;
  AblateCommand ablate;
  GradcheckCommand gradcheck;
  ExportCommand export_gates;
  setup_generate(app, generate, run);
  setup_train(app, train, run);
  setup_eval(app, eval, run);
  setup_ablate(app, ablate, run);
  setup_gradcheck(app, gradcheck, run);
  setup_export(app, export_gates, run);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    return run();
  } catch (const std::exception& e) {
    // bad flag values, unreadable or mismatched files, invalid data
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  }
}
