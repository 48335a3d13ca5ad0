#include "sim/types.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace sim {

void Dims::validate() const {
  if (actions < 2 || scenes < 2) {
    std::ostringstream os;
    os << "dims need at least 2 action and 2 scene classes, got A=" << actions
       << " S=" << scenes;
    throw ValidationError(os.str());
  }
}

GraphTopology build_topology(int persons) {
  if (persons < 1) throw std::invalid_argument("topology needs at least one person");
  GraphTopology topo;
  topo.persons = persons;
  for (int i = 0; i < persons; ++i) {
    for (int j = i + 1; j < persons; ++j) topo.person_edges.emplace_back(i, j);
  }
  for (int i = 0; i < persons; ++i) topo.scene_edges.push_back(i);
  return topo;
}

std::int64_t layer_width(const Dims& dims, int persons) {
  const auto topo = build_topology(persons);
  const std::int64_t a = dims.actions;
  const std::int64_t s = dims.scenes;
  return static_cast<std::int64_t>(topo.person_edges.size()) * (a + a) +
         static_cast<std::int64_t>(topo.scene_edges.size()) * (a + s);
}

namespace {

void check_simplex(const Eigen::VectorXd& v, int expected_len, const std::string& what) {
  if (v.size() != expected_len) {
    std::ostringstream os;
    os << what << " has length " << v.size() << ", expected " << expected_len;
    throw ValidationError(os.str());
  }
  double sum = 0.0;
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    if (!std::isfinite(v[k]) || v[k] < 0.0) {
      std::ostringstream os;
      os << what << " has invalid entry " << v[k] << " at index " << k;
      throw ValidationError(os.str());
    }
    sum += v[k];
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    std::ostringstream os;
    os.precision(17);
    os << what << " is not a probability vector: sums to " << sum;
    throw ValidationError(os.str());
  }
}

}  // namespace

void validate_instance(const FrameInstance& inst, const Dims& dims) {
  dims.validate();
  if (inst.person_unaries.empty()) throw ValidationError("instance has no persons");
  check_simplex(inst.scene_unary, dims.scenes, "scene unary");
  for (int i = 0; i < inst.persons(); ++i) {
    check_simplex(inst.person_unaries[static_cast<std::size_t>(i)], dims.actions,
                  "person " + std::to_string(i) + " unary");
  }
  if (inst.scene_label && (*inst.scene_label < 0 || *inst.scene_label >= dims.scenes)) {
    throw ValidationError("scene label " + std::to_string(*inst.scene_label) +
                          " out of range [0," + std::to_string(dims.scenes) + ")");
  }
  if (inst.action_labels) {
    const auto& labels = *inst.action_labels;
    if (static_cast<int>(labels.size()) != inst.persons()) {
      throw ValidationError("expected " + std::to_string(inst.persons()) + " action labels, got " +
                            std::to_string(labels.size()));
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || labels[i] >= dims.actions) {
        throw ValidationError("action label " + std::to_string(labels[i]) + " of person " +
                              std::to_string(i) + " out of range [0," +
                              std::to_string(dims.actions) + ")");
      }
    }
  }
}

std::string_view to_string(WeightSharing sharing) {
  return sharing == WeightSharing::tied ? "tied" : "untied";
}

WeightSharing parse_weight_sharing(std::string_view text) {
  if (text == "tied") return WeightSharing::tied;
  if (text == "untied") return WeightSharing::untied;
  throw std::invalid_argument("unknown weight sharing mode '" + std::string(text) + "'");
}

ModelParams init_params(const Dims& dims, int steps, WeightSharing sharing, bool gated,
                        std::uint64_t seed) {
  dims.validate();
  if (steps < 1) throw std::invalid_argument("steps must be >= 1");
  ModelParams params{dims, sharing, gated, {}};
  const int sets = sharing == WeightSharing::tied ? 1 : steps;
  std::mt19937_64 rng(seed);
  for (int k = 0; k < sets; ++k) {
    auto blocks = BlockSet::zeros(dims);
    blocks.for_each([&](const ParamInfo& info, Eigen::Map<Eigen::MatrixXd> view) {
      if (info.is_bias) return;
      const double limit = std::sqrt(6.0 / static_cast<double>(info.fan_in + info.fan_out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (Eigen::Index e = 0; e < view.size(); ++e) view.data()[e] = dist(rng);
    });
    params.blocks.push_back(std::move(blocks));
  }
  return params;
}

void validate_params(const ModelParams& params) {
  params.dims.validate();
  if (params.blocks.empty()) throw ValidationError("parameters have no block sets");
  if (params.sharing == WeightSharing::tied && params.blocks.size() != 1) {
    throw ValidationError("tied parameters must have exactly one block set");
  }
  for (std::size_t k = 0; k < params.blocks.size(); ++k) {
    const auto& b = params.blocks[k];
    if (!b.has_shape(params.dims)) {
      throw ValidationError("block set " + std::to_string(k) + " has wrong shapes");
    }
    b.for_each([&](const ParamInfo& info, const auto& view) {
      if (!view.allFinite()) {
        throw ValidationError("block set " + std::to_string(k) + " field " +
                              std::string(info.name) + " has non-finite entries");
      }
    });
  }
}

}  // namespace sim
