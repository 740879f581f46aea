#pragma once

#include <Eigen/Dense>

namespace svc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

}  // namespace svc
