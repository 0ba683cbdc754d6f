#include "sorbkit/dae.hpp"

#include <cmath>
#include <limits>

namespace sorbkit {

Vec DaeSystem::residual(double t, const Vec& y, const Vec& yp, int segment) const
{
  Vec f(size);
  rhs(t, y, f, segment);
  if (has_mass()) return f - mass * yp;
  return f - yp;
}

std::vector<int> DaeSystem::mass_pattern() const
{
  std::vector<int> pattern(static_cast<std::size_t>(size), 1);
  for (auto r : algebraic_rows) pattern[static_cast<std::size_t>(r)] = 0;
  return pattern;
}

void DaeSystem::eval_jacobian(double t, const Vec& y, Mat& jac, int segment) const
{
  if (jacobian) {
    jacobian(t, y, jac, segment);
    return;
  }
  jac.resize(size, size);
  Vec f0(size), f1(size);
  rhs(t, y, f0, segment);
  Vec yy = y;
  const double root_eps = std::sqrt(std::numeric_limits<double>::epsilon());
  for (Eigen::Index j = 0; j < size; ++j) {
    const double step = root_eps * std::max(1.0, std::abs(y[j]));
    yy[j] = y[j] + step;
    rhs(t, yy, f1, segment);
    jac.col(j) = (f1 - f0) / step;
    yy[j] = y[j];
  }
}

}  // namespace sorbkit
