#pragma once

// Test problems shared by the unit and acceptance suites.

#include <cmath>

#include "svc/forward.hpp"
#include "svc/kernel.hpp"
#include "svc/lift.hpp"
#include "svc/problem.hpp"

namespace fixture {

using svc::Mat;
using svc::Vec;

inline const svc::BernsteinKernel& fractional_kernel_n10() {
  static const auto fit = svc::discretize(svc::make_fractional(0.3), 10, svc::TimeWindow{1e-3, 10.0});
  return fit.kernel;
}

inline svc::DiscreteLift make_lift(const svc::BernsteinKernel& kernel, double a, double alpha = 0.7) {
  return svc::DiscreteLift(kernel, svc::OperatorA(Mat::Constant(1, 1, a)), svc::choose_exponents(alpha));
}

// Linear test problem: scalar, quadratic running cost, linear terminal cost,
// f(u) = -u/2 + 1/2, r = γ on a 21-point grid over [-1, 1].
inline svc::ProblemSpec linear_problem() {
  svc::ProblemSpec p(make_lift(fractional_kernel_n10(), -1.0), Mat::Constant(1, 1, 1.0));
  p.f = [](double, const Vec& u) { return Vec((-0.5 * u.array() + 0.5).matrix()); };
  p.f_jacobian = [](double, const Vec&) { return Mat(Mat::Constant(1, 1, -0.5)); };
  p.r = [](double, const Vec&, const Vec& gamma) { return gamma; };
  p.l = [](double, const Vec&, const Vec& gamma) { return 0.5 * gamma.squaredNorm(); };
  p.phi = [](const Vec& u) { return u(0); };
  p.controls = svc::control_grid(-1.0, 1.0, 21);
  p.history = svc::HistoryDescriptor::exponential(Vec::Constant(1, 0.2), 1.0);
  p.constants = {0.5, 1.0, 0.5, 1.0};
  return p;
}

// Two-action problem: 𝒰 = {0, 1}, r = γ, l = γ/2, φ(u) = -2 tanh(2u).
inline svc::ProblemSpec two_action_problem() {
  svc::ProblemSpec p(make_lift(fractional_kernel_n10(), -1.0), Mat::Constant(1, 1, 1.0));
  p.f = [](double, const Vec& u) { return Vec(-0.5 * u); };
  p.f_jacobian = [](double, const Vec&) { return Mat(Mat::Constant(1, 1, -0.5)); };
  p.r = [](double, const Vec&, const Vec& gamma) { return gamma; };
  p.l = [](double, const Vec&, const Vec& gamma) { return 0.5 * gamma(0); };
  p.phi = [](const Vec& u) { return -2.0 * std::tanh(2.0 * u(0)); };
  p.controls = {Vec::Constant(1, 0.0), Vec::Constant(1, 1.0)};
  p.history = svc::HistoryDescriptor::exponential(Vec::Constant(1, 0.2), 1.0);
  p.constants = {0.5, 1.0, 0.5, 4.0};
  return p;
}

inline svc::TimeGrid unit_grid(std::size_t steps) { return {0.0, 1.0, steps, 0}; }

}  // namespace fixture
