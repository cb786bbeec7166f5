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

#include "serendip/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "serendip/rng.hpp"

namespace serendip {

namespace {

void validate(const SynthConfig& config) {
  if (config.num_users < 1) {
    throw std::invalid_argument("num_users must be >= 1");
  }
  if (config.topic_dim < 1) {
    throw std::invalid_argument("topic_dim must be >= 1");
  }
  if (config.regimes_per_user < 1) {
    throw std::invalid_argument("regimes_per_user must be >= 1");
  }
  if (config.history_length < config.regimes_per_user) {
    throw std::invalid_argument(
        "history_length must be at least regimes_per_user");
  }
  if (config.regime_topic_count < 1) {
    throw std::invalid_argument("regime_topic_count must be >= 1");
  }
  if (config.regimes_per_user * config.regime_topic_count > config.topic_dim) {
    throw std::invalid_argument(
        "regimes_per_user * regime_topic_count exceeds topic_dim; regimes "
        "need disjoint topic support");
  }
  if (config.noise_sd < 0.0) {
    throw std::invalid_argument("noise_sd must be >= 0");
  }
  if (!(config.topic_concentration > 0.0)) {
    throw std::invalid_argument("topic_concentration must be positive");
  }
}

std::string user_label(int ordinal) {
  char buffer[24];
  std::snprintf(buffer, sizeof(buffer), "u%04d", ordinal + 1);
  return buffer;
}

std::string item_label(const std::string& user_id, int position) {
  char buffer[48];
  std::snprintf(buffer, sizeof(buffer), "b_%s_%04d", user_id.c_str(),
                position);
  return buffer;
}

}  // namespace

SynthPopulation generate_population(const SynthConfig& config) {
  validate(config);

  SynthPopulation population;
  population.corpus.topic_dim = config.topic_dim;

  for (int u = 0; u < config.num_users; ++u) {
    Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(u)));
    std::string user_id = user_label(u);

    // Disjoint topic support per regime.
    std::vector<int> topic_order(config.topic_dim);
    std::iota(topic_order.begin(), topic_order.end(), 0);
    rng.shuffle(topic_order);

    std::vector<Vector> regime_preferences;
    regime_preferences.reserve(config.regimes_per_user);
    std::vector<std::vector<int>> regime_supports;
    regime_supports.reserve(config.regimes_per_user);
    for (int regime = 0; regime < config.regimes_per_user; ++regime) {
      std::vector<int> support(
          topic_order.begin() + regime * config.regime_topic_count,
          topic_order.begin() + (regime + 1) * config.regime_topic_count);
      Vector preference = Vector::Zero(config.topic_dim);
      for (int topic : support) {
        preference[topic] = rng.uniform(-2.0, 2.0);
      }
      regime_supports.push_back(std::move(support));
      regime_preferences.push_back(std::move(preference));
    }

    // Near-equal regime segments; earlier regimes absorb the remainder.
    int base = config.history_length / config.regimes_per_user;
    int remainder = config.history_length % config.regimes_per_user;
    std::vector<int> segment_lengths(config.regimes_per_user, base);
    for (int i = 0; i < remainder; ++i) ++segment_lengths[i];

    UserHistory history;
    history.user_id = user_id;
    ChangePoints changes;
    changes.user_id = user_id;

    int position = 0;
    for (int regime = 0; regime < config.regimes_per_user; ++regime) {
      if (regime > 0) changes.positions.push_back(position + 1);
      const Vector& preference = regime_preferences[regime];
      const std::vector<int>& support = regime_supports[regime];
      for (int step = 0; step < segment_lengths[regime]; ++step) {
        ++position;
        Vector topics = Vector::Zero(config.topic_dim);
        Vector weights = rng.dirichlet(config.topic_concentration,
                                       static_cast<int>(support.size()));
        for (std::size_t i = 0; i < support.size(); ++i) {
          topics[support[i]] = weights[static_cast<Eigen::Index>(i)];
        }

        double score = preference.dot(topics) + rng.normal() * config.noise_sd;
        int stars = static_cast<int>(std::lround(score)) + 3;
        stars = std::clamp(stars, 1, 5);

        std::string item_id = item_label(user_id, position);
        population.corpus.items.emplace(item_id,
                                        ItemRecord{item_id, std::move(topics)});
        history.interactions.push_back(
            Interaction{std::move(item_id), stars, position});
      }
    }
    population.corpus.users.push_back(std::move(history));
    population.change_points.push_back(std::move(changes));
  }

  std::sort(population.corpus.users.begin(), population.corpus.users.end(),
            [](const UserHistory& a, const UserHistory& b) {
              return a.user_id < b.user_id;
            });
  std::sort(population.change_points.begin(), population.change_points.end(),
            [](const ChangePoints& a, const ChangePoints& b) {
              return a.user_id < b.user_id;
            });
  return population;
}

std::vector<SurpriseAnnotation> ground_truth_annotations(
    const SynthPopulation& population, int burn_in) {
  std::vector<SurpriseAnnotation> annotations;
  for (const auto& changes : population.change_points) {
    const UserHistory* user = population.corpus.find_user(changes.user_id);
    if (!user) continue;
    int len = static_cast<int>(user->interactions.size());
    for (int position = burn_in + 1; position <= len; ++position) {
      bool surprising =
          std::find(changes.positions.begin(), changes.positions.end(),
                    position) != changes.positions.end();
      annotations.push_back(
          SurpriseAnnotation{changes.user_id, position, surprising});
    }
  }
  return annotations;
}

void write_population(const SynthPopulation& population,
                      const std::string& topics_path,
                      const std::string& histories_path,
                      const std::string& annotations_path, int burn_in,
                      char delim, const std::string& comment) {
  save_topics(topics_path, population.corpus.items,
              population.corpus.topic_dim, delim, comment);
  save_histories(histories_path, population.corpus.users, delim, comment);
  save_annotations(annotations_path,
                   ground_truth_annotations(population, burn_in), delim,
                   comment);
}

}  // namespace serendip
