#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sim/synth.hpp"
#include "sim/training.hpp"
#include "sim/types.hpp"

namespace sim {

inline constexpr int kFormatVersion = 1;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Decimal text with 17 significant digits; round-trips every double exactly.
std::string format_double(double value);

struct DatasetRecord {
  FrameInstance frame;
  std::optional<std::vector<bool>> relevance;
};

struct DatasetFile {
  Dims dims;
  std::vector<DatasetRecord> records;

  Dataset frames() const;
  static DatasetFile from_synth(const Dims& dims, const std::vector<SynthInstance>& instances);
};

/// Header line {"A":..,"S":..,"format_version":..} followed by one record per line.
void write_dataset(std::ostream& out, const DatasetFile& file);
DatasetFile read_dataset(std::istream& in);
void save_dataset(const std::filesystem::path& path, const DatasetFile& file);
DatasetFile load_dataset(const std::filesystem::path& path);

struct Checkpoint {
  ModelParams params;
  int steps = 1;
  std::optional<ModelParams> velocity;
  std::optional<TrainConfig> config;
  std::uint64_t rng_seed = 0;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct MetricsRow {
  std::string variant;
  std::string phase;
  int epoch = 0;
  StepMetrics metrics;
};

std::vector<MetricsRow> metrics_rows(const std::string& variant, const std::vector<EpochRecord>& history);
std::vector<MetricsRow> metrics_rows(const std::string& variant, const std::string& phase, int epoch,
                                     const EvalReport& report);

inline constexpr const char* kMetricsHeader =
    "variant,phase,epoch,timestep,scene_accuracy,person_accuracy,loss_total,loss_ce_scene,"
    "loss_ce_person,loss_gate_l1,mean_gate_pp,mean_gate_ps";

void write_metrics(std::ostream& out, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics(std::istream& in);
void save_metrics(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> load_metrics(const std::filesystem::path& path);

/// One edge gate of one instance at one step.
struct GateRow {
  std::size_t instance = 0;
  int step = 0;
  int person = 0;
  int other = -1;  // second person, or -1 for the scene node
  double gate = 1;
  std::string relation;  // "relevant", "distractor" or "unknown"
};

/// Every edge gate of the trace: M(M-1)/2 person pairs plus M scene edges per step.
std::vector<GateRow> gate_rows(const InferenceTrace& trace, std::size_t instance,
                               const std::optional<std::vector<bool>>& relevance);

/// CSV with '#' metadata lines giving the category thresholds.
void write_gates(std::ostream& out, const std::vector<GateRow>& rows);
void save_gates(const std::filesystem::path& path, const std::vector<GateRow>& rows);

/// Encodes a TrainConfig as a JSON object (used for checkpoint echoes and presets).
std::string config_to_json(const TrainConfig& config);

}  // namespace sim
