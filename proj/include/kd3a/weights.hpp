#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace kd3a {

// Simplex vector over domains. Entry k weighs source domain k; the last entry
// weighs the consensus-distilled domain when one is present.
struct DomainWeights {
  std::vector<double> alpha;

  DomainWeights() = default;
  explicit DomainWeights(std::vector<double> a) : alpha(std::move(a)) {}

  size_t size() const { return alpha.size(); }
  double operator[](size_t i) const { return alpha[i]; }

  void validate() const {
    if (alpha.empty()) throw std::invalid_argument("DomainWeights: empty");
    double sum = 0.0;
    for (double a : alpha) {
      if (!(a >= 0.0)) throw std::invalid_argument("DomainWeights: negative entry");
      sum += a;
    }
    if (sum < 1.0 - 1e-9 || sum > 1.0 + 1e-9)
      throw std::invalid_argument("DomainWeights: sum " + std::to_string(sum) + " != 1");
  }
};

enum class WeightStrategy { uniform, datasize, hdiv_proxy, consensus_focus };

const char* to_string(WeightStrategy s);
WeightStrategy weight_strategy_from_string(const std::string& name);

}  // namespace kd3a
