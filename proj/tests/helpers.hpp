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

#ifndef SERENDIP_TESTS_HELPERS_HPP_
#define SERENDIP_TESTS_HELPERS_HPP_

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "serendip/gaussian.hpp"
#include "serendip/neighbors.hpp"
#include "serendip/rng.hpp"

namespace test_support {

using serendip::GaussianBelief;
using serendip::Matrix;
using serendip::Rng;
using serendip::Vector;

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<unsigned> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("serendip_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const {
    return (path_ / name).string();
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Random orthogonal matrix via QR of a Gaussian matrix.
inline Matrix random_orthogonal(Rng& rng, int k) {
  Matrix gaussian(k, k);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) gaussian(i, j) = rng.normal();
  }
  Eigen::HouseholderQR<Matrix> qr(gaussian);
  return qr.householderQ() * Matrix::Identity(k, k);
}

// Symmetric positive definite matrix with eigenvalues log-uniform in
// [min_eig, max_eig].
inline Matrix random_spd(Rng& rng, int k, double min_eig = 1e-3,
                         double max_eig = 10.0) {
  Matrix q = random_orthogonal(rng, k);
  Vector eigenvalues(k);
  for (int i = 0; i < k; ++i) {
    eigenvalues[i] =
        std::exp(rng.uniform(std::log(min_eig), std::log(max_eig)));
  }
  Matrix m = q * eigenvalues.asDiagonal() * q.transpose();
  return 0.5 * (m + m.transpose());
}

inline GaussianBelief random_belief(Rng& rng, int k, double min_eig = 1e-3,
                                    double max_eig = 10.0) {
  GaussianBelief belief;
  belief.mean = Vector(k);
  for (int i = 0; i < k; ++i) belief.mean[i] = rng.normal();
  belief.cov = random_spd(rng, k, min_eig, max_eig);
  return belief;
}

// Random point on the probability simplex.
inline Vector random_simplex(Rng& rng, int k, double alpha = 0.5) {
  return rng.dirichlet(alpha, k);
}

// Batch conjugate posterior for a linear-Gaussian model: prior
// N(0, prior_variance I), observation precision beta, data (thetas, rs).
// This is the closed form the sequential rank-one updates must reproduce.
inline GaussianBelief batch_posterior(double prior_variance, double beta,
                                      const std::vector<Vector>& thetas,
                                      const std::vector<double>& rs) {
  int k = static_cast<int>(thetas.front().size());
  Matrix precision = (1.0 / prior_variance) * Matrix::Identity(k, k);
  Vector moment = Vector::Zero(k);
  for (std::size_t i = 0; i < thetas.size(); ++i) {
    precision += beta * thetas[i] * thetas[i].transpose();
    moment += beta * rs[i] * thetas[i];
  }
  GaussianBelief posterior;
  posterior.cov = precision.llt().solve(Matrix::Identity(k, k));
  posterior.cov = 0.5 * (posterior.cov + posterior.cov.transpose());
  posterior.mean = posterior.cov * moment;
  return posterior;
}

// Reference nearest-neighbor scan: every eligible row scored with the
// public distance function and sorted by (distance, row).
inline std::vector<serendip::QueryHit> naive_top_n(
    const serendip::SnapshotIndex& index, const Vector& query, int n,
    const std::string& exclude_user) {
  std::vector<serendip::QueryHit> all;
  for (std::size_t row = 0; row < index.size(); ++row) {
    if (index.user_id(row) == exclude_user) continue;
    double dist =
        serendip::preference_distance(Vector(index.preference(row)), query);
    all.push_back(serendip::QueryHit{row, dist});
  }
  std::sort(all.begin(), all.end(),
            [](const serendip::QueryHit& a, const serendip::QueryHit& b) {
              if (a.distance != b.distance) return a.distance < b.distance;
              return a.row < b.row;
            });
  if (static_cast<int>(all.size()) > n) all.resize(n);
  return all;
}

// One fabricated interaction: the stars of the interaction itself, the
// preference point after processing it, and the surprise it caused.
// Fabricated runs let index and evaluation tests pick exact geometry
// without going through a learner.
struct FakeStep {
  int stars;
  Vector point;
  double surprise;
};

inline void add_fake_user(
    std::vector<serendip::UserHistory>& users,
    std::map<std::string, std::vector<serendip::StepOutcome>>& runs,
    const std::string& user_id, const std::vector<FakeStep>& steps) {
  serendip::UserHistory user;
  user.user_id = user_id;
  std::vector<serendip::StepOutcome> run;
  for (std::size_t t = 0; t < steps.size(); ++t) {
    user.interactions.push_back(serendip::Interaction{
        user_id + "_i" + std::to_string(t), steps[t].stars,
        static_cast<std::int64_t>(t + 1)});
    serendip::StepOutcome out;
    out.surprise = steps[t].surprise;
    out.state_after.config.kind = serendip::ModelKind::kNlms;
    out.state_after.step = static_cast<int>(t + 1);
    out.state_after.point = steps[t].point;
    run.push_back(std::move(out));
  }
  users.push_back(std::move(user));
  runs.emplace(user_id, std::move(run));
}

// Monte-Carlo KL estimate between two Gaussians, for cross-checking the
// closed form: E_post[log post(x) - log prior(x)] over samples from post.
inline double monte_carlo_kl(const GaussianBelief& post,
                             const GaussianBelief& prior, Rng& rng,
                             int samples) {
  int k = static_cast<int>(post.mean.size());
  Eigen::SelfAdjointEigenSolver<Matrix> post_eig(post.cov);
  Eigen::SelfAdjointEigenSolver<Matrix> prior_eig(prior.cov);
  Matrix post_root = post_eig.eigenvectors() *
                     post_eig.eigenvalues().cwiseMax(0.0).cwiseSqrt()
                         .asDiagonal();
  auto log_density = [&](const GaussianBelief& b,
                         const Eigen::SelfAdjointEigenSolver<Matrix>& eig,
                         const Vector& x) {
    Vector d = eig.eigenvectors().transpose() * (x - b.mean);
    double quad = (d.array().square() / eig.eigenvalues().array()).sum();
    double logdet = eig.eigenvalues().array().log().sum();
    return -0.5 * (quad + logdet + k * std::log(2.0 * M_PI));
  };
  double total = 0.0;
  for (int s = 0; s < samples; ++s) {
    Vector z(k);
    for (int i = 0; i < k; ++i) z[i] = rng.normal();
    Vector x = post.mean + post_root * z;
    total += log_density(post, post_eig, x) - log_density(prior, prior_eig, x);
  }
  return total / samples;
}

}  // namespace test_support

#endif  // SERENDIP_TESTS_HELPERS_HPP_
