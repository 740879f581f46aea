#pragma once

#include "svc/types.hpp"

namespace svc {

struct NnlsResult {
  Vec x;
  double residual_norm = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

// min ‖Mx − b‖₂ subject to x ≥ 0 (Lawson–Hanson active set).
NnlsResult nnls(const Mat& M, const Vec& b, std::size_t max_iterations = 0,
                double tolerance = 0.0);

}  // namespace svc
