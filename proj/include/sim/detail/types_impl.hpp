#pragma once

#include <type_traits>

namespace sim {

template <typename Scalar>
template <typename Self, typename F>
void BasicBlockSet<Scalar>::visit(Self& self, F& f) {
  using MapT = std::conditional_t<std::is_const_v<Self>, Eigen::Map<const Mat<Scalar>>,
                                  Eigen::Map<Mat<Scalar>>>;
  auto mat = [&](std::string_view name, ParamGroup group, auto& m) {
    const ParamInfo info{name, group, false, static_cast<int>(m.cols()), static_cast<int>(m.rows())};
    f(info, MapT(m.data(), m.rows(), m.cols()));
  };
  auto vec = [&](std::string_view name, ParamGroup group, auto& v, int fan_in, int fan_out, bool bias) {
    const ParamInfo info{name, group, bias, fan_in, fan_out};
    f(info, MapT(v.data(), v.size(), 1));
  };
  auto scalar = [&](std::string_view name, auto& s) {
    const ParamInfo info{name, ParamGroup::gate, true, 1, 1};
    f(info, MapT(&s, 1, 1));
  };
  const int gpp = static_cast<int>(self.g_pp.size());
  const int gsp = static_cast<int>(self.g_sp.size());
  const int gps = static_cast<int>(self.g_ps.size());

  mat("w_xm_p", ParamGroup::message, self.w_xm_p);
  mat("w_cm_p", ParamGroup::message, self.w_cm_p);
  mat("w_aa", ParamGroup::message, self.w_aa);
  mat("w_sa", ParamGroup::message, self.w_sa);
  vec("b_pp", ParamGroup::message, self.b_pp, 1, 1, true);
  vec("b_ps", ParamGroup::message, self.b_ps, 1, 1, true);
  mat("w_xm_s", ParamGroup::message, self.w_xm_s);
  mat("w_cm_s", ParamGroup::message, self.w_cm_s);
  mat("w_as", ParamGroup::message, self.w_as);
  vec("b_sp", ParamGroup::message, self.b_sp, 1, 1, true);
  mat("w_hc1", ParamGroup::prediction, self.w_hc1);
  vec("b_hc1", ParamGroup::prediction, self.b_hc1, 1, 1, true);
  mat("w_hc2", ParamGroup::prediction, self.w_hc2);
  vec("b_hc2", ParamGroup::prediction, self.b_hc2, 1, 1, true);
  vec("g_pp", ParamGroup::gate, self.g_pp, gpp, 1, false);
  scalar("gb_pp", self.gb_pp);
  vec("g_sp", ParamGroup::gate, self.g_sp, gsp, 1, false);
  scalar("gb_sp", self.gb_sp);
  vec("g_ps", ParamGroup::gate, self.g_ps, gps, 1, false);
  scalar("gb_ps", self.gb_ps);
}

template <typename Scalar>
std::vector<Eigen::Map<const Mat<Scalar>>> BasicBlockSet<Scalar>::views() const {
  std::vector<Eigen::Map<const Mat<Scalar>>> out;
  for_each([&](const ParamInfo&, const Eigen::Map<const Mat<Scalar>>& v) { out.push_back(v); });
  return out;
}

template <typename Scalar>
BasicBlockSet<Scalar> BasicBlockSet<Scalar>::zeros(const Dims& dims) {
  const int a = dims.actions;
  const int s = dims.scenes;
  BasicBlockSet b;
  b.w_xm_p = Mat<Scalar>::Zero(a, a);
  b.w_cm_p = Mat<Scalar>::Zero(a, a);
  b.w_aa = Mat<Scalar>::Zero(a, a);
  b.w_sa = Mat<Scalar>::Zero(a, s);
  b.b_pp = Vec<Scalar>::Zero(a);
  b.b_ps = Vec<Scalar>::Zero(a);
  b.w_xm_s = Mat<Scalar>::Zero(s, s);
  b.w_cm_s = Mat<Scalar>::Zero(s, s);
  b.w_as = Mat<Scalar>::Zero(s, a);
  b.b_sp = Vec<Scalar>::Zero(s);
  b.w_hc1 = Mat<Scalar>::Zero(s, s + a);
  b.b_hc1 = Vec<Scalar>::Zero(s);
  b.w_hc2 = Mat<Scalar>::Zero(a, a + a + s);
  b.b_hc2 = Vec<Scalar>::Zero(a);
  b.g_pp = Vec<Scalar>::Zero(4 * a);
  b.g_sp = Vec<Scalar>::Zero(a + a + s + a);
  b.g_ps = Vec<Scalar>::Zero(s + s + a + a);
  return b;
}

template <typename Scalar>
template <typename To>
BasicBlockSet<To> BasicBlockSet<Scalar>::cast() const {
  BasicBlockSet<To> out;
  out.w_xm_p = w_xm_p.template cast<To>();
  out.w_cm_p = w_cm_p.template cast<To>();
  out.w_aa = w_aa.template cast<To>();
  out.w_sa = w_sa.template cast<To>();
  out.b_pp = b_pp.template cast<To>();
  out.b_ps = b_ps.template cast<To>();
  out.w_xm_s = w_xm_s.template cast<To>();
  out.w_cm_s = w_cm_s.template cast<To>();
  out.w_as = w_as.template cast<To>();
  out.b_sp = b_sp.template cast<To>();
  out.w_hc1 = w_hc1.template cast<To>();
  out.b_hc1 = b_hc1.template cast<To>();
  out.w_hc2 = w_hc2.template cast<To>();
  out.b_hc2 = b_hc2.template cast<To>();
  out.g_pp = g_pp.template cast<To>();
  out.gb_pp = static_cast<To>(gb_pp);
  out.g_sp = g_sp.template cast<To>();
  out.gb_sp = static_cast<To>(gb_sp);
  out.g_ps = g_ps.template cast<To>();
  out.gb_ps = static_cast<To>(gb_ps);
  return out;
}

template <typename Scalar>
std::size_t BasicBlockSet<Scalar>::size() const {
  std::size_t n = 0;
  for_each([&](const ParamInfo&, const auto& v) { n += static_cast<std::size_t>(v.size()); });
  return n;
}

template <typename Scalar>
bool BasicBlockSet<Scalar>::has_shape(const Dims& dims) const {
  const auto ref = zeros(dims).views();
  const auto mine = views();
  if (ref.size() != mine.size()) return false;
  for (std::size_t k = 0; k < ref.size(); ++k) {
    if (ref[k].rows() != mine[k].rows() || ref[k].cols() != mine[k].cols()) return false;
  }
  return true;
}

template <typename Scalar>
const BasicBlockSet<Scalar>& BasicModelParams<Scalar>::at_step(int t) const {
  if (sharing == WeightSharing::tied) return blocks.at(0);
  return blocks.at(static_cast<std::size_t>(t - 1));
}

template <typename Scalar>
BasicBlockSet<Scalar>& BasicModelParams<Scalar>::at_step(int t) {
  if (sharing == WeightSharing::tied) return blocks.at(0);
  return blocks.at(static_cast<std::size_t>(t - 1));
}

template <typename Scalar>
BasicModelParams<Scalar> BasicModelParams<Scalar>::zeros_like() const {
  BasicModelParams out{dims, sharing, gated, {}};
  out.blocks.assign(blocks.size(), BasicBlockSet<Scalar>::zeros(dims));
  return out;
}

}  // namespace sim
