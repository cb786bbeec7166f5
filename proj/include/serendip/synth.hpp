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

#ifndef SERENDIP_SYNTH_HPP_
#define SERENDIP_SYNTH_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "serendip/history.hpp"

namespace serendip {

// Configuration of the synthetic population. Each user lives through
// `regimes_per_user` preference regimes of (near) equal length; every
// regime draws its items from its own disjoint set of
// `regime_topic_count` topics, so regime boundaries are genuine
// preference shifts.
struct SynthConfig {
  std::uint64_t seed = 1;
  int num_users = 20;
  int topic_dim = 20;
  int history_length = 120;
  int regimes_per_user = 3;
  int regime_topic_count = 5;
  double noise_sd = 0.3;
  double topic_concentration = 0.5;
};

// The per-user ground truth: the 1-based positions where a new regime
// begins (the first interaction drawn from the new preference).
struct ChangePoints {
  std::string user_id;
  std::vector<int> positions;
};

struct SynthPopulation {
  Corpus corpus;  // items + users; annotations left empty
  std::vector<ChangePoints> change_points;
};

// Deterministic generation: one independent random stream per user,
// derived from the seed and the user's ordinal, so output is reproducible
// and independent of evaluation order. Every item's topic vector is a
// Dirichlet draw supported on the active regime's topics; ratings are the
// regime preference applied to the item plus Gaussian noise, rounded and
// clamped to 1..5 stars.
SynthPopulation generate_population(const SynthConfig& config);

// Labels positions burn_in+1 .. history length for every user: 1 at regime
// starts, 0 elsewhere. Change points at or before burn_in cannot be
// represented and are dropped.
std::vector<SurpriseAnnotation> ground_truth_annotations(
    const SynthPopulation& population, int burn_in = kDefaultBurnIn);

// Writes topics, histories and annotation files in the loaders' format.
// A non-empty comment is placed at the top of each file.
void write_population(const SynthPopulation& population,
                      const std::string& topics_path,
                      const std::string& histories_path,
                      const std::string& annotations_path,
                      int burn_in = kDefaultBurnIn, char delim = '\t',
                      const std::string& comment = {});

}  // namespace serendip

#endif  // SERENDIP_SYNTH_HPP_
