#include "sim/io.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

namespace sim {

using nlohmann::json;

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

namespace {

void append_vector(std::string& out, const Eigen::VectorXd& v) {
  out += '[';
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    if (k) out += ',';
    out += format_double(v[k]);
  }
  out += ']';
}

std::string quoted(std::string_view s) { return json(std::string(s)).dump(); }

Eigen::VectorXd parse_vector(const json& j, const char* what) {
  if (!j.is_array()) throw IoError(std::string(what) + " must be an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) {
    if (!j[k].is_number()) throw IoError(std::string(what) + " must contain numbers");
    v[static_cast<Eigen::Index>(k)] = j[k].get<double>();
  }
  return v;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return in;
}

}  // namespace

Dataset DatasetFile::frames() const {
  Dataset out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.frame);
  return out;
}

DatasetFile DatasetFile::from_synth(const Dims& dims, const std::vector<SynthInstance>& instances) {
  DatasetFile file{dims, {}};
  file.records.reserve(instances.size());
  for (const auto& inst : instances) file.records.push_back({inst.frame, inst.relevant});
  return file;
}

void write_dataset(std::ostream& out, const DatasetFile& file) {
  out << "{\"A\":" << file.dims.actions << ",\"S\":" << file.dims.scenes
      << ",\"format_version\":" << kFormatVersion << "}\n";
  std::string line;
  for (const auto& rec : file.records) {
    const auto& f = rec.frame;
    line.clear();
    line += "{\"scene_unary\":";
    append_vector(line, f.scene_unary);
    line += ",\"person_unaries\":[";
    for (std::size_t i = 0; i < f.person_unaries.size(); ++i) {
      if (i) line += ',';
      append_vector(line, f.person_unaries[i]);
    }
    line += ']';
    if (f.scene_label) line += ",\"scene_label\":" + std::to_string(*f.scene_label);
    if (f.action_labels) {
      line += ",\"action_labels\":[";
      for (std::size_t i = 0; i < f.action_labels->size(); ++i) {
        if (i) line += ',';
        line += std::to_string((*f.action_labels)[i]);
      }
      line += ']';
    }
    if (rec.relevance) {
      line += ",\"relevance\":[";
      for (std::size_t i = 0; i < rec.relevance->size(); ++i) {
        if (i) line += ',';
        line += (*rec.relevance)[i] ? "true" : "false";
      }
      line += ']';
    }
    line += "}\n";
    out << line;
  }
  if (!out) throw IoError("failed writing dataset");
}

DatasetFile read_dataset(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  DatasetFile file;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw IoError(where + "malformed record (" + e.what() + ")");
    }
    if (!have_header) {
      if (!j.is_object() || !j.contains("A") || !j.contains("S") || !j.contains("format_version")) {
        throw IoError(where + "missing header");
      }
      if (j["format_version"] != kFormatVersion) {
        throw IoError(where + "unsupported format_version " + j["format_version"].dump());
      }
      file.dims = Dims{j["A"].get<int>(), j["S"].get<int>()};
      try {
        file.dims.validate();
      } catch (const ValidationError& e) {
        throw IoError(where + e.what());
      }
      have_header = true;
      continue;
    }
    try {
      if (!j.is_object()) throw IoError("record must be an object");
      DatasetRecord rec;
      rec.frame.scene_unary = parse_vector(j.at("scene_unary"), "scene_unary");
      const auto& persons = j.at("person_unaries");
      if (!persons.is_array()) throw IoError("person_unaries must be an array");
      for (const auto& p : persons) rec.frame.person_unaries.push_back(parse_vector(p, "person_unaries"));
      if (j.contains("scene_label")) rec.frame.scene_label = j["scene_label"].get<int>();
      if (j.contains("action_labels")) rec.frame.action_labels = j["action_labels"].get<std::vector<int>>();
      if (j.contains("relevance")) {
        rec.relevance = j["relevance"].get<std::vector<bool>>();
        if (rec.relevance->size() != rec.frame.person_unaries.size()) {
          throw IoError("relevance has " + std::to_string(rec.relevance->size()) + " entries for " +
                        std::to_string(rec.frame.person_unaries.size()) + " persons");
        }
      }
      validate_instance(rec.frame, file.dims);
      file.records.push_back(std::move(rec));
    } catch (const IoError& e) {
      throw IoError(where + e.what());
    } catch (const ValidationError& e) {
      throw IoError(where + e.what());
    } catch (const json::exception& e) {
      throw IoError(where + "malformed record (" + e.what() + ")");
    }
  }
  if (!have_header) throw IoError("missing header");
  return file;
}

void save_dataset(const std::filesystem::path& path, const DatasetFile& file) {
  auto out = open_out(path);
  write_dataset(out, file);
}

DatasetFile load_dataset(const std::filesystem::path& path) {
  auto in = open_in(path);
  try {
    return read_dataset(in);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

namespace {

std::string blocks_json(const std::vector<BlockSet>& sets) {
  std::string out = "[";
  for (std::size_t b = 0; b < sets.size(); ++b) {
    if (b) out += ',';
    out += "\n    {";
    bool first = true;
    sets[b].for_each([&](const ParamInfo& info, const Eigen::Map<const Eigen::MatrixXd>& v) {
      if (!first) out += ',';
      first = false;
      out += "\n      " + quoted(info.name) + ":{\"rows\":" + std::to_string(v.rows()) +
             ",\"cols\":" + std::to_string(v.cols()) + ",\"data\":[";
      for (Eigen::Index r = 0; r < v.rows(); ++r) {
        for (Eigen::Index c = 0; c < v.cols(); ++c) {
          if (r || c) out += ',';
          out += format_double(v(r, c));
        }
      }
      out += "]}";
    });
    out += "\n    }";
  }
  out += "\n  ]";
  return out;
}

std::vector<BlockSet> parse_blocks(const json& j, const Dims& dims, std::size_t expected, const char* what) {
  if (!j.is_array()) throw IoError(std::string(what) + " must be an array");
  if (j.size() != expected) {
    throw IoError(std::string(what) + " has " + std::to_string(j.size()) + " block sets, expected " +
                  std::to_string(expected));
  }
  std::vector<BlockSet> sets;
  for (const auto& jb : j) {
    auto blocks = BlockSet::zeros(dims);
    blocks.for_each([&](const ParamInfo& info, Eigen::Map<Eigen::MatrixXd> v) {
      const std::string name(info.name);
      if (!jb.contains(name)) throw IoError(std::string(what) + " is missing field " + name);
      const auto& field = jb[name];
      const auto rows = field.at("rows").get<Eigen::Index>();
      const auto cols = field.at("cols").get<Eigen::Index>();
      const auto& data = field.at("data");
      if (rows != v.rows() || cols != v.cols() || !data.is_array() ||
          data.size() != static_cast<std::size_t>(rows * cols)) {
        throw IoError("shape mismatch in " + name + ": declared dims need " + std::to_string(v.rows()) + "x" +
                      std::to_string(v.cols()));
      }
      for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) v(r, c) = data[static_cast<std::size_t>(r * cols + c)].get<double>();
      }
    });
    sets.push_back(std::move(blocks));
  }
  return sets;
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.steps = j.value("steps", c.steps);
  c.sharing = parse_weight_sharing(j.value("mode", std::string(to_string(c.sharing))));
  c.gated = j.value("gated", c.gated);
  c.lambda = j.value("lambda", c.lambda);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.momentum = j.value("momentum", c.momentum);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.phase = parse_phase(j.value("phase", std::string(to_string(c.phase))));
  c.two_phase = j.value("two_phase", c.two_phase);
  c.gate_epochs = j.value("gate_epochs", c.gate_epochs);
  c.freeze_biases = j.value("freeze_biases", c.freeze_biases);
  c.threads = j.value("threads", c.threads);
  return c;
}

}  // namespace

std::string config_to_json(const TrainConfig& c) {
  std::ostringstream os;
  os << "{\"steps\":" << c.steps << ",\"mode\":" << quoted(to_string(c.sharing))
     << ",\"gated\":" << (c.gated ? "true" : "false") << ",\"lambda\":" << format_double(c.lambda)
     << ",\"learning_rate\":" << format_double(c.learning_rate)
     << ",\"momentum\":" << format_double(c.momentum) << ",\"epochs\":" << c.epochs
     << ",\"batch_size\":" << c.batch_size << ",\"seed\":" << c.seed
     << ",\"phase\":" << quoted(to_string(c.phase)) << ",\"two_phase\":" << (c.two_phase ? "true" : "false")
     << ",\"gate_epochs\":" << c.gate_epochs << ",\"freeze_biases\":" << (c.freeze_biases ? "true" : "false")
     << ",\"threads\":" << c.threads << "}";
  return os.str();
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  const auto& p = ckpt.params;
  std::string text = "{\n  \"format_version\":" + std::to_string(kFormatVersion) +
                     ",\n  \"dims\":{\"A\":" + std::to_string(p.dims.actions) +
                     ",\"S\":" + std::to_string(p.dims.scenes) + "},\n  \"T\":" + std::to_string(ckpt.steps) +
                     ",\n  \"mode\":" + quoted(to_string(p.sharing)) +
                     ",\n  \"gated\":" + (p.gated ? "true" : "false") + ",\n  \"blocks\":" + blocks_json(p.blocks) +
                     ",\n  \"velocity\":" + (ckpt.velocity ? blocks_json(ckpt.velocity->blocks) : "null") +
                     ",\n  \"config\":" + (ckpt.config ? config_to_json(*ckpt.config) : "null") +
                     ",\n  \"rng_seed\":" + std::to_string(ckpt.rng_seed) + "\n}\n";
  out << text;
  if (!out) throw IoError("failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& in) {
  std::stringstream buffer;
  buffer << in.rdbuf();
  json j;
  try {
    j = json::parse(buffer.str());
  } catch (const json::parse_error& e) {
    throw IoError(std::string("checkpoint parse error: ") + e.what());
  }
  try {
    if (!j.is_object() || !j.contains("format_version")) throw IoError("checkpoint has no format_version");
    if (j["format_version"] != kFormatVersion) {
      throw IoError("unsupported checkpoint format_version " + j["format_version"].dump());
    }
    Checkpoint ckpt;
    ckpt.params.dims = Dims{j.at("dims").at("A").get<int>(), j.at("dims").at("S").get<int>()};
    ckpt.params.dims.validate();
    ckpt.steps = j.at("T").get<int>();
    if (ckpt.steps < 1) throw IoError("checkpoint T must be >= 1");
    ckpt.params.sharing = parse_weight_sharing(j.at("mode").get<std::string>());
    ckpt.params.gated = j.at("gated").get<bool>();
    const std::size_t sets = ckpt.params.sharing == WeightSharing::tied ? 1 : static_cast<std::size_t>(ckpt.steps);
    ckpt.params.blocks = parse_blocks(j.at("blocks"), ckpt.params.dims, sets, "blocks");
    if (j.contains("velocity") && !j["velocity"].is_null()) {
      ModelParams vel = ckpt.params;
      vel.blocks = parse_blocks(j["velocity"], ckpt.params.dims, sets, "velocity");
      ckpt.velocity = std::move(vel);
    }
    if (j.contains("config") && !j["config"].is_null()) ckpt.config = config_from_json(j["config"]);
    ckpt.rng_seed = j.value("rng_seed", std::uint64_t{0});
    validate_params(ckpt.params);
    return ckpt;
  } catch (const IoError&) {
    throw;
  } catch (const std::exception& e) {
    throw IoError(std::string("invalid checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  auto out = open_out(path);
  write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto in = open_in(path);
  try {
    return read_checkpoint(in);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::vector<MetricsRow> metrics_rows(const std::string& variant, const std::string& phase, int epoch,
                                     const EvalReport& report) {
  std::vector<MetricsRow> rows;
  for (const auto& m : report.steps) rows.push_back({variant, phase, epoch, m});
  return rows;
}

std::vector<MetricsRow> metrics_rows(const std::string& variant, const std::vector<EpochRecord>& history) {
  std::vector<MetricsRow> rows;
  for (const auto& rec : history) {
    auto part = metrics_rows(variant, std::string(to_string(rec.phase)), rec.epoch, rec.report);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  return rows;
}

void write_metrics(std::ostream& out, const std::vector<MetricsRow>& rows) {
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    out << r.variant << ',' << r.phase << ',' << r.epoch << ',' << m.step << ','
        << format_double(m.scene_accuracy) << ',' << format_double(m.person_accuracy) << ','
        << format_double(m.loss.total) << ',' << format_double(m.loss.ce_scene) << ','
        << format_double(m.loss.ce_person) << ',' << format_double(m.loss.gate_l1) << ','
        << format_double(m.mean_gate_pp) << ',' << format_double(m.mean_gate_ps) << '\n';
  }
  if (!out) throw IoError("failed writing metrics");
}

namespace {

double parse_cell(const std::string& cell) {
  double v = 0;
  const auto [end, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc{} || end != cell.data() + cell.size()) throw std::invalid_argument(cell);
  return v;
}

}  // namespace

std::vector<MetricsRow> read_metrics(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw IoError("metrics file has an unexpected header");
  std::vector<MetricsRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 12) throw IoError("line " + std::to_string(line_no) + ": expected 12 columns");
    try {
      MetricsRow r;
      r.variant = cells[0];
      r.phase = cells[1];
      r.epoch = std::stoi(cells[2]);
      r.metrics.step = std::stoi(cells[3]);
      r.metrics.scene_accuracy = parse_cell(cells[4]);
      r.metrics.person_accuracy = parse_cell(cells[5]);
      r.metrics.loss.total = parse_cell(cells[6]);
      r.metrics.loss.ce_scene = parse_cell(cells[7]);
      r.metrics.loss.ce_person = parse_cell(cells[8]);
      r.metrics.loss.gate_l1 = parse_cell(cells[9]);
      r.metrics.mean_gate_pp = parse_cell(cells[10]);
      r.metrics.mean_gate_ps = parse_cell(cells[11]);
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw IoError("line " + std::to_string(line_no) + ": malformed number");
    }
  }
  return rows;
}

void save_metrics(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
  auto out = open_out(path);
  write_metrics(out, rows);
}

std::vector<MetricsRow> load_metrics(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_metrics(in);
}

std::vector<GateRow> gate_rows(const InferenceTrace& trace, std::size_t instance,
                               const std::optional<std::vector<bool>>& relevance) {
  auto relation = [&](int i, int j) -> std::string {
    if (!relevance) return "unknown";
    const bool ri = (*relevance)[static_cast<std::size_t>(i)];
    const bool rj = j < 0 || (*relevance)[static_cast<std::size_t>(j)];
    return ri && rj ? "relevant" : "distractor";
  };
  std::vector<GateRow> rows;
  for (int t = 1; t <= trace.steps; ++t) {
    const auto& st = trace.states[static_cast<std::size_t>(t - 1)];
    for (int i = 0; i < st.persons; ++i) {
      for (int j = i + 1; j < st.persons; ++j) {
        rows.push_back({instance, t, i, j, static_cast<double>(st.gate_pp[st.pp(i, j)]), relation(i, j)});
      }
    }
    for (int i = 0; i < st.persons; ++i) {
      rows.push_back({instance, t, i, -1, static_cast<double>(st.gate_ps[static_cast<std::size_t>(i)]), relation(i, -1)});
    }
  }
  return rows;
}

void write_gates(std::ostream& out, const std::vector<GateRow>& rows) {
  out << "# gate categories: irrelevant < " << format_double(kIrrelevantBelow) << " <= ambiguous <= "
      << format_double(kUsefulAbove) << " < useful\n";
  out << "# threshold_irrelevant=" << format_double(kIrrelevantBelow)
      << " threshold_useful=" << format_double(kUsefulAbove) << '\n';
  out << "instance,timestep,edge,node_a,node_b,gate,category,relation\n";
  for (const auto& r : rows) {
    out << r.instance << ',' << r.step << ',' << (r.other < 0 ? "person-scene" : "person-person") << ",p"
        << r.person << ',' << (r.other < 0 ? std::string("scene") : "p" + std::to_string(r.other)) << ','
        << format_double(r.gate) << ',' << gate_category(r.gate) << ',' << r.relation << '\n';
  }
  if (!out) throw IoError("failed writing gates");
}

void save_gates(const std::filesystem::path& path, const std::vector<GateRow>& rows) {
  auto out = open_out(path);
  write_gates(out, rows);
}

}  // namespace sim
