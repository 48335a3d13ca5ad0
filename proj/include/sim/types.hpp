#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace sim {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Number of classes at each node type.
struct Dims {
  int actions = 0;  // per-person action classes
  int scenes = 0;   // scene-level activity classes

  void validate() const;
  friend bool operator==(const Dims&, const Dims&) = default;
};

/// Scene node connected to every person; persons form a clique.
struct GraphTopology {
  int persons = 0;
  std::vector<std::pair<int, int>> person_edges;  // (i, j) with i < j
  std::vector<int> scene_edges;                   // one per person

  std::size_t edge_count() const { return person_edges.size() + scene_edges.size(); }
};

GraphTopology build_topology(int persons);

/// Number of neurons per unrolled layer: sum over edges of the state counts
/// of both endpoints.
std::int64_t layer_width(const Dims& dims, int persons);

/// One scene: unary class distributions plus optional ground truth.
struct FrameInstance {
  Eigen::VectorXd scene_unary;
  std::vector<Eigen::VectorXd> person_unaries;
  std::optional<int> scene_label;
  std::optional<std::vector<int>> action_labels;

  int persons() const { return static_cast<int>(person_unaries.size()); }
  bool labeled() const { return scene_label.has_value() && action_labels.has_value(); }
};

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Throws ValidationError describing the first violated invariant.
void validate_instance(const FrameInstance& inst, const Dims& dims);

enum class WeightSharing { tied, untied };

std::string_view to_string(WeightSharing sharing);
WeightSharing parse_weight_sharing(std::string_view text);

enum class ParamGroup { message, prediction, gate };

struct ParamInfo {
  std::string_view name;
  ParamGroup group;
  bool is_bias;
  int fan_in;
  int fan_out;
};

/// All learnable blocks for one message-passing step.
template <typename Scalar>
struct BasicBlockSet {
  // person-sourced messages (person->person and person->scene)
  Mat<Scalar> w_xm_p;  // A x A, applied to x_i
  Mat<Scalar> w_cm_p;  // A x A, applied to c_i
  Mat<Scalar> w_aa;    // A x A, averaged person->person messages
  Mat<Scalar> w_sa;    // A x S, scene->person message
  Vec<Scalar> b_pp;
  Vec<Scalar> b_ps;
  // scene-sourced messages
  Mat<Scalar> w_xm_s;  // S x S
  Mat<Scalar> w_cm_s;  // S x S
  Mat<Scalar> w_as;    // S x A
  Vec<Scalar> b_sp;
  // prediction layers
  Mat<Scalar> w_hc1;  // S x (S + A)
  Vec<Scalar> b_hc1;
  Mat<Scalar> w_hc2;  // A x (A + A + S)
  Vec<Scalar> b_hc2;
  // directional gates, row vectors stored as column vectors
  Vec<Scalar> g_pp;  // 4A
  Scalar gb_pp = 0;
  Vec<Scalar> g_sp;  // A + A + S + A
  Scalar gb_sp = 0;
  Vec<Scalar> g_ps;  // S + S + A + A
  Scalar gb_ps = 0;

  static BasicBlockSet zeros(const Dims& dims);

  /// Calls f(const ParamInfo&, Eigen::Map<...>) for every block in a fixed
  /// order. Vectors appear as n x 1 maps and scalars as 1 x 1 maps.
  template <typename F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  template <typename To>
  BasicBlockSet<To> cast() const;

  std::size_t size() const;
  bool has_shape(const Dims& dims) const;

  friend bool operator==(const BasicBlockSet& a, const BasicBlockSet& b) {
    const auto va = a.views();
    const auto vb = b.views();
    if (va.size() != vb.size()) return false;
    for (std::size_t k = 0; k < va.size(); ++k) {
      if (va[k].rows() != vb[k].rows() || va[k].cols() != vb[k].cols() || va[k] != vb[k]) {
        return false;
      }
    }
    return true;
  }

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f);
  std::vector<Eigen::Map<const Mat<Scalar>>> views() const;
};

using BlockSet = BasicBlockSet<double>;

/// Parameters for tied (one block set) or untied (one per step) inference.
template <typename Scalar>
struct BasicModelParams {
  Dims dims;
  WeightSharing sharing = WeightSharing::tied;
  bool gated = false;
  std::vector<BasicBlockSet<Scalar>> blocks;

  /// Block set used at step t (1-based).
  const BasicBlockSet<Scalar>& at_step(int t) const;
  BasicBlockSet<Scalar>& at_step(int t);

  /// Largest step count these parameters support; 0 means unbounded.
  int max_steps() const { return sharing == WeightSharing::untied ? static_cast<int>(blocks.size()) : 0; }

  BasicModelParams zeros_like() const;

  template <typename To>
  BasicModelParams<To> cast() const {
    BasicModelParams<To> out{dims, sharing, gated, {}};
    for (const auto& b : blocks) out.blocks.push_back(b.template cast<To>());
    return out;
  }

  friend bool operator==(const BasicModelParams&, const BasicModelParams&) = default;
};

using ModelParams = BasicModelParams<double>;
/// Gradients mirror the parameter layout block for block.
using Gradients = ModelParams;

/// Uniform Glorot-style weights, zero biases, fully determined by seed.
ModelParams init_params(const Dims& dims, int steps, WeightSharing sharing, bool gated,
                        std::uint64_t seed);

/// Throws ValidationError if shapes disagree with dims or entries are non-finite.
void validate_params(const ModelParams& params);

}  // namespace sim

#include "sim/detail/types_impl.hpp"
