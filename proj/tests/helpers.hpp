#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "numkit/ops.hpp"
#include "numkit/tensor.hpp"

namespace testutil {

// Central finite differences against the analytic gradient of a scalar
// loss. Rebuilds the graph per probe, so the loss function must be pure.
// Returns the worst relative error across all leaf elements.
inline double fd_gradient_error(
    const std::function<numkit::Tensor(std::vector<numkit::Tensor>&)>& loss_fn,
    std::vector<numkit::Tensor>& leaves, double step = 1e-5) {
  for (auto& l : leaves) {
    l.set_requires_grad(true);
    l.zero_grad();
  }
  numkit::Tensor loss = loss_fn(leaves);
  loss.backward();

  double worst = 0.0;
  for (auto& leaf : leaves) {
    const auto analytic = leaf.grad();
    for (int64_t i = 0; i < leaf.size(); ++i) {
      const double keep = leaf.data()[i];
      leaf.data()[i] = keep + step;
      const double fp = loss_fn(leaves).value();
      leaf.data()[i] = keep - step;
      const double fm = loss_fn(leaves).value();
      leaf.data()[i] = keep;
      const double fd = (fp - fm) / (2.0 * step);
      const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-6});
      worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
    }
  }
  return worst;
}

inline numkit::Tensor random_tensor(const numkit::Shape& shape, std::mt19937_64& rng,
                                    double stddev = 1.0) {
  return numkit::Tensor::randn(shape, rng, stddev);
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace testutil
