#pragma once

#include <chrono>
#include <limits>
#include <map>
#include <string>

#include "ad/nn.hpp"

namespace lld::ad {

// Tracks the best validation value and keeps a copy of the parameters that
// produced it. Stopping is allowed only after min_epochs.
class EarlyStopper {
 public:
  EarlyStopper(int patience, int min_epochs) : patience_(patience), min_epochs_(min_epochs) {}

  // Returns true when training should stop after this epoch.
  bool update(int epoch, double value, const ParameterStore& store, bool use_shadow = false) {
    if (value < best_) {
      best_ = value;
      best_epoch_ = epoch;
      bad_ = 0;
      best_params_ = store.snapshot(use_shadow);
    } else {
      ++bad_;
    }
    return epoch + 1 >= min_epochs_ && bad_ >= patience_;
  }

  double best() const { return best_; }
  int best_epoch() const { return best_epoch_; }
  bool has_best() const { return !best_params_.empty(); }
  const std::map<std::string, Mat>& best_params() const { return best_params_; }

 private:
  int patience_, min_epochs_;
  double best_ = std::numeric_limits<double>::infinity();
  int best_epoch_ = -1;
  int bad_ = 0;
  std::map<std::string, Mat> best_params_;
};

class Stopwatch {
 public:
  Stopwatch() : t0_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  std::chrono::steady_clock::time_point t0_;
};

}  // namespace lld::ad
