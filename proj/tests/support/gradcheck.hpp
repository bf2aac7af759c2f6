#pragma once

// Central finite-difference gradient checks over a ParameterStore.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>

#include "ad/nn.hpp"

namespace gradcheck {

struct Result {
  double max_rel = 0.0;
  std::string worst;
  int checked = 0;
};

// For every parameter tensor, compares up to `per_param` randomly chosen
// entries. The error of a tensor is max |analytic - numeric| over the chosen
// entries divided by the largest numeric magnitude among them. That scale is
// floored at 1e-4 of the largest magnitude over all tensors, so parameters
// whose true gradient vanishes (such as key biases under softmax) are judged
// against the overall gradient size. The result is the maximum over tensors.
inline Result check(lld::ad::ParameterStore& store, const std::function<lld::ad::Tensor()>& loss_fn,
                    int per_param = 12, double h = 1e-5, std::uint64_t seed = 1) {
  using lld::ad::Mat;
  store.zero_grad();
  lld::ad::backward(loss_fn());
  std::mt19937_64 g(seed);
  Result r;
  std::vector<std::pair<double, double>> per;  // (max diff, numeric scale) per tensor
  for (auto& e : store.entries()) {
    const Mat analytic = e.param.has_grad() ? e.param.grad() : Mat::Zero(e.param.rows(), e.param.cols());
    Mat& p = e.param.mutable_value();
    const Eigen::Index n = p.size();
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    std::shuffle(idx.begin(), idx.end(), g);
    idx.resize(std::min<std::size_t>(idx.size(), static_cast<std::size_t>(per_param)));
    double num_scale = 0.0, diff = 0.0;
    for (Eigen::Index i : idx) {
      const double orig = p.data()[i];
      double fp, fm;
      {
        lld::ad::NoGradGuard ng;
        p.data()[i] = orig + h;
        fp = loss_fn().item();
        p.data()[i] = orig - h;
        fm = loss_fn().item();
      }
      p.data()[i] = orig;
      const double num = (fp - fm) / (2 * h);
      num_scale = std::max(num_scale, std::abs(num));
      diff = std::max(diff, std::abs(num - analytic.data()[i]));
      ++r.checked;
    }
    per.emplace_back(diff, num_scale);
  }
  double global = 1e-300;
  for (const auto& [d, sc] : per) global = std::max(global, sc);
  for (std::size_t i = 0; i < per.size(); ++i) {
    const double rel = per[i].first / std::max(per[i].second, 1e-4 * global);
    if (rel > r.max_rel) {
      r.max_rel = rel;
      r.worst = store.entries()[i].name;
    }
  }
  store.zero_grad();
  return r;
}

}  // namespace gradcheck
