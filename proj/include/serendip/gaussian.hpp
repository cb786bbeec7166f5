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

#ifndef SERENDIP_GAUSSIAN_HPP_
#define SERENDIP_GAUSSIAN_HPP_

#include <Eigen/Dense>

namespace serendip {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Eigenvalue floor applied when a covariance must be repaired or inverted.
inline constexpr double kCovEigenFloor = 1e-12;

// Tolerance for symmetry checks and for deciding that a slightly negative
// eigenvalue is roundoff rather than corruption.
inline constexpr double kSymmetryTol = 1e-9;

// Multivariate normal belief over per-topic preference weights.
struct GaussianBelief {
  Vector mean;
  Matrix cov;

  Eigen::Index dim() const { return mean.size(); }
};

// KL(post || prior) in nats, closed form for two Gaussians of equal
// dimension. The prior covariance is eigendecomposed; eigenvalues below
// kCovEigenFloor are floored before inversion, and an eigenvalue below
// -kSymmetryTol raises std::invalid_argument naming the offending value.
// The result is clamped at zero to absorb roundoff.
double kl_divergence(const GaussianBelief& post, const GaussianBelief& prior);

// Spectral clamp: every eigenvalue of the symmetric matrix `cov` below
// `tau_v` is raised to `tau_v`; eigenvectors are untouched. Returns the
// input unchanged when no eigenvalue is below the threshold. Requires
// tau_v > 0 and a symmetric input.
Matrix clip_eigenvalues(const Matrix& cov, double tau_v);

// (cov + cov^T) / 2 with eigenvalues floored at kCovEigenFloor. Used to
// keep covariances symmetric positive definite after downdates.
Matrix floor_and_symmetrize(const Matrix& cov);

}  // namespace serendip

#endif  // SERENDIP_GAUSSIAN_HPP_
