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

#ifndef SERENDIP_NEIGHBORS_HPP_
#define SERENDIP_NEIGHBORS_HPP_

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "serendip/gaussian.hpp"
#include "serendip/history.hpp"
#include "serendip/models.hpp"

namespace serendip {

// Euclidean distance between two preference vectors. The accumulation
// order is fixed (sequential over components) so results are reproducible
// bit for bit; the index scan uses the same kernel.
double preference_distance(const Vector& a, const Vector& b);

// One user-step preference snapshot together with what happened next.
// step is 1-based; the snapshot holds the preference after `step`
// interactions and the annotations of interaction step+1.
struct Snapshot {
  std::string user_id;
  int step = 0;
  Vector preference;
  double next_surprise = 0.0;
  double next_rating_centered = 0.0;
  std::string next_item_id;
};

struct QueryHit {
  std::size_t row = 0;
  double distance = 0.0;
};

struct SerendipityHit {
  std::string user_id;
  int step = 0;
  double next_surprise = 0.0;
  double next_rating_centered = 0.0;
  std::string next_item_id;
  double distance = 0.0;
};

// Flat store of preference snapshots over a population, ordered by
// (user_id, step) so row order is the canonical tie-break order. String
// ids are interned; preference rows live in one contiguous buffer.
class SnapshotIndex {
 public:
  std::size_t size() const { return metas_.size(); }
  int topic_dim() const { return topic_dim_; }
  int min_step() const { return min_step_; }
  const std::string& config_label() const { return config_label_; }

  const std::string& user_id(std::size_t row) const {
    return user_table_[metas_[row].user_idx];
  }
  // Interned id of user_id, or nullopt when the user has no snapshots.
  std::optional<std::uint32_t> user_index(const std::string& user_id) const;
  std::uint32_t user_index_of_row(std::size_t row) const {
    return metas_[row].user_idx;
  }
  int step(std::size_t row) const { return metas_[row].step; }
  double next_surprise(std::size_t row) const {
    return metas_[row].next_surprise;
  }
  double next_rating_centered(std::size_t row) const {
    return metas_[row].next_rating_centered;
  }
  const std::string& next_item_id(std::size_t row) const {
    return item_table_[metas_[row].item_idx];
  }
  Eigen::Map<const Vector> preference(std::size_t row) const {
    return Eigen::Map<const Vector>(prefs_.data() + row * topic_dim_,
                                    topic_dim_);
  }
  Snapshot snapshot(std::size_t row) const;

 private:
  struct Meta {
    std::uint32_t user_idx = 0;
    std::uint32_t item_idx = 0;
    std::int32_t step = 0;
    double next_surprise = 0.0;
    double next_rating_centered = 0.0;
  };

  friend SnapshotIndex build_index(
      const std::vector<UserHistory>& users,
      const std::map<std::string, std::vector<StepOutcome>>& sim_runs,
      const std::map<std::string, std::vector<StepOutcome>>& surprise_runs,
      int min_step, const std::string& config_label);
  friend SnapshotIndex load_index(const std::string& path);
  friend void save_index(const std::string& path, const SnapshotIndex& index);
  friend bool same_contents(const SnapshotIndex& a, const SnapshotIndex& b);

  std::vector<std::string> user_table_;  // lexicographically sorted
  std::vector<std::string> item_table_;  // lexicographically sorted
  std::vector<Meta> metas_;              // sorted by (user_idx, step)
  std::vector<double> prefs_;            // row-major, size() * topic_dim_
  int topic_dim_ = 0;
  int min_step_ = 1;
  std::string config_label_;
};

// Builds the index from per-user runs. sim_runs supply the preference
// vectors; surprise_runs supply next-step surprise (the two differ when
// similarity and surprise come from different learners). Snapshots cover
// steps max(1, min_step) .. len-1 of every user, so each snapshot has a
// successor interaction. Result is independent of the input ordering.
SnapshotIndex build_index(
    const std::vector<UserHistory>& users,
    const std::map<std::string, std::vector<StepOutcome>>& sim_runs,
    const std::map<std::string, std::vector<StepOutcome>>& surprise_runs,
    int min_step, const std::string& config_label);

// Exact scan: the n snapshots nearest to `query`, excluding every row of
// `exclude_user`, ordered by (distance, row). Fewer than n rows available
// returns them all.
std::vector<QueryHit> query_top_n(const SnapshotIndex& index,
                                  const Vector& query, int n,
                                  const std::string& exclude_user);

// Serendipity search: among the top-n neighbors of `query` (excluding
// `user_id`), keep those with distance < tau_d and a positively rated next
// item, and return the one whose next interaction was most surprising.
// Ties prefer the lexicographically smallest (user_id, step). Empty
// candidate set yields nullopt.
std::optional<SerendipityHit> find_serendipity(const SnapshotIndex& index,
                                               const std::string& user_id,
                                               const Vector& query,
                                               double tau_d, int n);

// Binary cache. save/load round-trip exactly; the header records the
// topic dimension, snapshot count, min_step and the config label with its
// hash, and load rejects files whose magic or version do not match.
void save_index(const std::string& path, const SnapshotIndex& index);
SnapshotIndex load_index(const std::string& path);

// True when two indexes hold identical contents (used by tests).
bool same_contents(const SnapshotIndex& a, const SnapshotIndex& b);

}  // namespace serendip

#endif  // SERENDIP_NEIGHBORS_HPP_
