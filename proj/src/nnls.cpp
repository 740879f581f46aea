#include "svc/nnls.hpp"

#include <algorithm>
#include <limits>
#include <vector>

namespace svc {

namespace {

Vec solve_passive(const Mat& M, const Vec& b, const std::vector<Index>& passive) {
  Mat sub(M.rows(), static_cast<Index>(passive.size()));
  for (std::size_t k = 0; k < passive.size(); ++k) sub.col(static_cast<Index>(k)) = M.col(passive[k]);
  return sub.colPivHouseholderQr().solve(b);
}

}  // namespace

NnlsResult nnls(const Mat& M, const Vec& b, std::size_t max_iterations, double tolerance) {
  const Index n = M.cols();
  if (max_iterations == 0) max_iterations = static_cast<std::size_t>(3 * n + 30);
  if (tolerance <= 0.0) {
    tolerance = 10.0 * std::numeric_limits<double>::epsilon() * M.cwiseAbs().colwise().sum().maxCoeff() *
                static_cast<double>(std::max(M.rows(), n));
  }

  NnlsResult out;
  out.x = Vec::Zero(n);
  std::vector<bool> in_passive(static_cast<std::size_t>(n), false);
  Vec w = M.transpose() * (b - M * out.x);

  while (out.iterations < max_iterations) {
    Index best = -1;
    double best_w = tolerance;
    for (Index j = 0; j < n; ++j) {
      if (!in_passive[static_cast<std::size_t>(j)] && w(j) > best_w) {
        best_w = w(j);
        best = j;
      }
    }
    if (best < 0) {
      out.converged = true;
      break;
    }
    in_passive[static_cast<std::size_t>(best)] = true;

    while (true) {
      ++out.iterations;
      std::vector<Index> passive;
      for (Index j = 0; j < n; ++j)
        if (in_passive[static_cast<std::size_t>(j)]) passive.push_back(j);
      const Vec s_passive = solve_passive(M, b, passive);
      Vec s = Vec::Zero(n);
      for (std::size_t k = 0; k < passive.size(); ++k) s(passive[k]) = s_passive(static_cast<Index>(k));

      bool feasible = true;
      for (Index j : passive) feasible = feasible && s(j) > 0.0;
      if (feasible) {
        out.x = s;
        break;
      }
      double alpha = std::numeric_limits<double>::infinity();
      for (Index j : passive) {
        if (s(j) <= 0.0) alpha = std::min(alpha, out.x(j) / (out.x(j) - s(j)));
      }
      out.x += alpha * (s - out.x);
      for (Index j : passive) {
        if (out.x(j) <= tolerance) {
          out.x(j) = 0.0;
          in_passive[static_cast<std::size_t>(j)] = false;
        }
      }
      if (out.iterations >= max_iterations) break;
    }
    w = M.transpose() * (b - M * out.x);
  }
  out.residual_norm = (M * out.x - b).norm();
  return out;
}

}  // namespace svc
