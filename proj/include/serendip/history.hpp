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

#ifndef SERENDIP_HISTORY_HPP_
#define SERENDIP_HISTORY_HPP_

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "serendip/gaussian.hpp"

namespace serendip {

// Number of leading interactions consumed before evaluation starts.
inline constexpr int kDefaultBurnIn = 15;

// An item and its topic mixture. Topic vectors live on the probability
// simplex: non-negative components summing to one.
struct ItemRecord {
  std::string item_id;
  Vector topics;
};

using ItemMap = std::unordered_map<std::string, ItemRecord>;

// One rated consumption event. Ratings are 1..5 stars.
struct Interaction {
  std::string item_id;
  int stars = 0;
  std::int64_t timestamp = 0;
};

// A user's interactions, non-decreasing in timestamp after loading.
struct UserHistory {
  std::string user_id;
  std::vector<Interaction> interactions;
};

// Ground-truth label: was the item at 1-based `position` in the user's
// history a surprising consumption?
struct SurpriseAnnotation {
  std::string user_id;
  int position = 0;
  bool surprising = false;
};

// Everything one evaluation needs, loaded and cross-validated.
struct Corpus {
  ItemMap items;
  std::vector<UserHistory> users;               // sorted by user_id
  std::vector<SurpriseAnnotation> annotations;  // sorted by (user_id, position)
  int topic_dim = 0;

  const UserHistory* find_user(const std::string& user_id) const;
  std::vector<SurpriseAnnotation> annotations_for(
      const std::string& user_id) const;
};

// Maps 1..5 stars onto the signed scale -2..2. Out-of-range input throws.
double center_rating(int stars);

// Loaders. Files are headered tab- or comma-separated text; the delimiter
// is detected from the header line. Lines starting with '#' are skipped.
// Malformed input throws std::runtime_error naming the line number.
//
// Topic rows are validated against the simplex: any component below -1e-12
// is an error, sums off by more than 1e-3 are an error, and sums off by
// more than 1e-6 are silently renormalized.
ItemMap load_topics(const std::string& path, int* topic_dim = nullptr);

// Rows: user_id, item_id, stars, timestamp. Interactions are stably sorted
// by timestamp per user; users are sorted by user_id.
std::vector<UserHistory> load_histories(const std::string& path);

// Rows: user_id, position, surprising (0/1). Sorted by (user_id, position).
std::vector<SurpriseAnnotation> load_annotations(const std::string& path);

// Loads all three files (annotations optional: pass an empty path) and
// cross-validates: every interaction's item must resolve, and every
// annotation must name a known user, fall within that user's history, and
// sit strictly after the burn-in prefix.
Corpus load_corpus(const std::string& topics_path,
                   const std::string& histories_path,
                   const std::string& annotations_path = {},
                   int burn_in = kDefaultBurnIn);

// Savers, inverse of the loaders. Numeric fields are written with enough
// digits to round-trip exactly. Rows are emitted in sorted order so equal
// inputs produce byte-identical files. A non-empty `comment` becomes a
// leading '#' line, which the loaders skip.
void save_topics(const std::string& path, const ItemMap& items, int topic_dim,
                 char delim = '\t', const std::string& comment = {});
void save_histories(const std::string& path,
                    const std::vector<UserHistory>& users, char delim = '\t',
                    const std::string& comment = {});
void save_annotations(const std::string& path,
                      const std::vector<SurpriseAnnotation>& annotations,
                      char delim = '\t', const std::string& comment = {});

}  // namespace serendip

#endif  // SERENDIP_HISTORY_HPP_
