#ifndef EMOSYNTH_SCHEDULE_HPP
#define EMOSYNTH_SCHEDULE_HPP

#include <cmath>
#include <stdexcept>

namespace emosynth {

/// Linear noise schedule beta(t) = beta0 + (beta1 - beta0) t on [0, T] and the
/// closed-form quantities of the mean-reverting forward process
///   Y_t = mu + (Y_0 - mu) rho(t) + sqrt(variance(t)) z.
struct NoiseSchedule {
  double beta0 = 0.05;
  double beta1 = 20.0;
  double terminal = 1.0;

  void validate() const {
    if (!(beta0 > 0.0 && beta1 > beta0 && terminal > 0.0)) {
      throw std::invalid_argument("noise schedule requires 0 < beta0 < beta1 and T > 0");
    }
  }

  [[nodiscard]] double beta(double t) const { return beta0 + (beta1 - beta0) * t; }
  /// Integral of beta over [0, t].
  [[nodiscard]] double integral(double t) const { return beta0 * t + 0.5 * (beta1 - beta0) * t * t; }
  [[nodiscard]] double rho(double t) const { return std::exp(-0.5 * integral(t)); }
  [[nodiscard]] double variance(double t) const { return -std::expm1(-integral(t)); }
};

/// Lower time cutoff for training and sampling; variance(0) = 0.
inline constexpr double kMinTime = 1e-3;

}  // namespace emosynth

#endif  // EMOSYNTH_SCHEDULE_HPP
