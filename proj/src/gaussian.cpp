/*
Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    https://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

#include "serendip/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace serendip {

namespace {

Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

void check_square(const Matrix& m, const char* what) {
  if (m.rows() != m.cols()) {
    std::ostringstream msg;
    msg << what << " must be square, got " << m.rows() << "x" << m.cols();
    throw std::invalid_argument(msg.str());
  }
}

// Eigendecomposition of a symmetric matrix with validation that it is not
// corrupted beyond the floor's ability to repair.
Eigen::SelfAdjointEigenSolver<Matrix> decompose(const Matrix& sym,
                                                const char* what) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  if (eig.info() != Eigen::Success) {
    throw std::invalid_argument(std::string(what) +
                                ": eigendecomposition failed");
  }
  const Vector& values = eig.eigenvalues();
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i]) || values[i] < -kSymmetryTol) {
      std::ostringstream msg;
      msg << what << " has eigenvalue " << values[i]
          << " below the repairable floor";
      throw std::invalid_argument(msg.str());
    }
  }
  return eig;
}

}  // namespace

double kl_divergence(const GaussianBelief& post, const GaussianBelief& prior) {
  const Eigen::Index k = prior.dim();
  if (post.dim() != k) {
    std::ostringstream msg;
    msg << "dimension mismatch: post has " << post.dim() << ", prior has "
        << k;
    throw std::invalid_argument(msg.str());
  }
  check_square(post.cov, "posterior covariance");
  check_square(prior.cov, "prior covariance");
  if (post.cov.rows() != k || prior.cov.rows() != k) {
    throw std::invalid_argument("covariance dimension does not match mean");
  }

  auto prior_eig = decompose(symmetrized(prior.cov), "prior covariance");
  auto post_eig = decompose(symmetrized(post.cov), "posterior covariance");

  Vector prior_vals = prior_eig.eigenvalues().cwiseMax(kCovEigenFloor);
  Vector post_vals = post_eig.eigenvalues().cwiseMax(kCovEigenFloor);
  const Matrix& u = prior_eig.eigenvectors();

  // Work in the prior eigenbasis: inv(prior) = U diag(1/lambda) U^T.
  Matrix rotated = u.transpose() * symmetrized(post.cov) * u;
  double trace_term =
      (rotated.diagonal().array() / prior_vals.array()).sum();

  Vector diff = u.transpose() * (prior.mean - post.mean);
  double quad_term = (diff.array().square() / prior_vals.array()).sum();

  double logdet_prior = prior_vals.array().log().sum();
  double logdet_post = post_vals.array().log().sum();

  double kl = 0.5 * (trace_term + quad_term - static_cast<double>(k) +
                     logdet_prior - logdet_post);
  return std::max(kl, 0.0);
}

Matrix clip_eigenvalues(const Matrix& cov, double tau_v) {
  check_square(cov, "covariance");
  if (!(tau_v > 0.0)) {
    throw std::invalid_argument("tau_v must be positive");
  }
  double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > kSymmetryTol * scale) {
    throw std::invalid_argument("covariance is not symmetric");
  }

  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  if (eig.info() != Eigen::Success) {
    throw std::invalid_argument("covariance eigendecomposition failed");
  }
  if (eig.eigenvalues().minCoeff() >= tau_v) {
    return cov;
  }
  Vector clipped = eig.eigenvalues().cwiseMax(tau_v);
  Matrix result = eig.eigenvectors() * clipped.asDiagonal() *
                  eig.eigenvectors().transpose();
  return symmetrized(result);
}

Matrix floor_and_symmetrize(const Matrix& cov) {
  check_square(cov, "covariance");
  Matrix sym = symmetrized(cov);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  if (eig.info() != Eigen::Success) {
    throw std::invalid_argument("covariance eigendecomposition failed");
  }
  if (eig.eigenvalues().minCoeff() >= kCovEigenFloor) {
    return sym;
  }
  Vector floored = eig.eigenvalues().cwiseMax(kCovEigenFloor);
  Matrix result = eig.eigenvectors() * floored.asDiagonal() *
                  eig.eigenvectors().transpose();
  return symmetrized(result);
}

}  // namespace serendip
