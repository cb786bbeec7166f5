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

#ifndef SERENDIP_RNG_HPP_
#define SERENDIP_RNG_HPP_

#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace serendip {

// Deterministic random source. The engine sequence is fixed by the standard
// and all variate transforms are implemented here, so identical seeds yield
// identical draws on every platform and compiler.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection sampling, unbiased.
  std::uint64_t uniform_below(std::uint64_t n);

  // Standard normal via Box-Muller. No caching, one value per call.
  double normal();

  // Gamma(shape, 1) via Marsaglia-Tsang squeeze, with the standard
  // boost for shape < 1.
  double gamma(double shape);

  // Symmetric Dirichlet(alpha) over `dim` components.
  Eigen::VectorXd dirichlet(double alpha, int dim);

  // Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// Stateless 64-bit mix used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace serendip

#endif  // SERENDIP_RNG_HPP_
