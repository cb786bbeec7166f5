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

#include "serendip/neighbors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <queue>
#include <sstream>
#include <stdexcept>

namespace serendip {

namespace {

constexpr char kMagic[8] = {'S', 'E', 'R', 'S', 'N', 'P', '0', '1'};
constexpr std::uint32_t kFormatVersion = 1;

// Sequential scalar accumulation; the scan below repeats this order
// exactly so distances compare bit for bit with this function.
double distance_kernel(const double* a, const double* b, int k) {
  double acc = 0.0;
  for (int i = 0; i < k; ++i) {
    double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t hash = 0xCBF29CE484222325ULL;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001B3ULL;
  }
  return hash;
}

void put_u32(std::ostream& out, std::uint32_t v) {
  char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(buf, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(buf, 8);
}

void put_f64(std::ostream& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in) {
  return std::bit_cast<double>(get_u64(in));
}

std::string get_string(std::istream& in) {
  std::uint32_t len = get_u32(in);
  std::string s(len, '\0');
  in.read(s.data(), len);
  return s;
}

}  // namespace

double preference_distance(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) {
    std::ostringstream msg;
    msg << "dimension mismatch: " << a.size() << " vs " << b.size();
    throw std::invalid_argument(msg.str());
  }
  return distance_kernel(a.data(), b.data(), static_cast<int>(a.size()));
}

std::optional<std::uint32_t> SnapshotIndex::user_index(
    const std::string& user_id) const {
  auto it = std::lower_bound(user_table_.begin(), user_table_.end(), user_id);
  if (it == user_table_.end() || *it != user_id) return std::nullopt;
  return static_cast<std::uint32_t>(it - user_table_.begin());
}

Snapshot SnapshotIndex::snapshot(std::size_t row) const {
  Snapshot snap;
  snap.user_id = user_id(row);
  snap.step = step(row);
  snap.preference = preference(row);
  snap.next_surprise = next_surprise(row);
  snap.next_rating_centered = next_rating_centered(row);
  snap.next_item_id = next_item_id(row);
  return snap;
}

SnapshotIndex build_index(
    const std::vector<UserHistory>& users,
    const std::map<std::string, std::vector<StepOutcome>>& sim_runs,
    const std::map<std::string, std::vector<StepOutcome>>& surprise_runs,
    int min_step, const std::string& config_label) {
  SnapshotIndex index;
  index.min_step_ = std::max(1, min_step);
  index.config_label_ = config_label;

  // Canonical user order regardless of input ordering.
  std::vector<const UserHistory*> ordered;
  ordered.reserve(users.size());
  for (const auto& user : users) ordered.push_back(&user);
  std::sort(ordered.begin(), ordered.end(),
            [](const UserHistory* a, const UserHistory* b) {
              return a->user_id < b->user_id;
            });
  for (std::size_t i = 1; i < ordered.size(); ++i) {
    if (ordered[i - 1]->user_id == ordered[i]->user_id) {
      throw std::invalid_argument("duplicate user '" + ordered[i]->user_id +
                                  "' in index input");
    }
  }

  std::map<std::string, std::uint32_t> item_ids;
  struct PendingRow {
    std::uint32_t user_idx;
    std::int32_t step;
    std::string item_id;
    double next_surprise;
    double next_rating_centered;
    const Vector* preference;
  };
  std::vector<PendingRow> rows;

  for (std::size_t u = 0; u < ordered.size(); ++u) {
    const UserHistory& user = *ordered[u];
    auto sim_it = sim_runs.find(user.user_id);
    auto sur_it = surprise_runs.find(user.user_id);
    if (sim_it == sim_runs.end() || sur_it == surprise_runs.end()) {
      throw std::invalid_argument("no run available for user '" +
                                  user.user_id + "'");
    }
    const auto& sim_run = sim_it->second;
    const auto& sur_run = sur_it->second;
    int len = static_cast<int>(user.interactions.size());
    if (static_cast<int>(sim_run.size()) != len ||
        static_cast<int>(sur_run.size()) != len) {
      throw std::invalid_argument("run length mismatch for user '" +
                                  user.user_id + "'");
    }

    index.user_table_.push_back(user.user_id);
    for (int step = index.min_step_; step <= len - 1; ++step) {
      const Vector& pref = sim_run[step - 1].state_after.preference();
      if (index.topic_dim_ == 0) {
        index.topic_dim_ = static_cast<int>(pref.size());
      } else if (static_cast<int>(pref.size()) != index.topic_dim_) {
        throw std::invalid_argument(
            "preference dimension mismatch for user '" + user.user_id + "'");
      }
      const Interaction& next = user.interactions[step];
      PendingRow row;
      row.user_idx = static_cast<std::uint32_t>(u);
      row.step = step;
      row.item_id = next.item_id;
      row.next_surprise = sur_run[step].surprise;
      row.next_rating_centered = center_rating(next.stars);
      row.preference = &pref;
      rows.push_back(std::move(row));
    }
  }

  // Intern item ids through a sorted table.
  for (const auto& row : rows) item_ids.emplace(row.item_id, 0);
  index.item_table_.reserve(item_ids.size());
  for (auto& [id, idx] : item_ids) {
    idx = static_cast<std::uint32_t>(index.item_table_.size());
    index.item_table_.push_back(id);
  }

  index.metas_.reserve(rows.size());
  index.prefs_.reserve(rows.size() * static_cast<std::size_t>(
                                          std::max(index.topic_dim_, 1)));
  for (const auto& row : rows) {
    SnapshotIndex::Meta meta;
    meta.user_idx = row.user_idx;
    meta.item_idx = item_ids.at(row.item_id);
    meta.step = row.step;
    meta.next_surprise = row.next_surprise;
    meta.next_rating_centered = row.next_rating_centered;
    index.metas_.push_back(meta);
    const Vector& pref = *row.preference;
    index.prefs_.insert(index.prefs_.end(), pref.data(),
                        pref.data() + pref.size());
  }
  return index;
}

std::vector<QueryHit> query_top_n(const SnapshotIndex& index,
                                  const Vector& query, int n,
                                  const std::string& exclude_user) {
  if (n < 1) {
    throw std::invalid_argument("n must be >= 1, got " + std::to_string(n));
  }
  if (index.size() > 0 &&
      static_cast<int>(query.size()) != index.topic_dim()) {
    std::ostringstream msg;
    msg << "query dimension " << query.size() << " does not match index ("
        << index.topic_dim() << ")";
    throw std::invalid_argument(msg.str());
  }

  // (distance, row) max-heap of the best n seen so far.
  using Entry = std::pair<double, std::size_t>;
  std::priority_queue<Entry> heap;

  const std::optional<std::uint32_t> exclude_idx =
      index.user_index(exclude_user);
  const std::uint32_t excluded =
      exclude_idx ? *exclude_idx : std::numeric_limits<std::uint32_t>::max();

  const int k = index.topic_dim();
  const double* query_data = query.data();
  const std::size_t count = index.size();
  for (std::size_t row = 0; row < count; ++row) {
    if (exclude_idx && index.user_index_of_row(row) == excluded) continue;
    const double* pref = index.preference(row).data();
    double acc = 0.0;
    for (int i = 0; i < k; ++i) {
      double d = pref[i] - query_data[i];
      acc += d * d;
    }
    double dist = std::sqrt(acc);
    Entry entry{dist, row};
    if (heap.size() < static_cast<std::size_t>(n)) {
      heap.push(entry);
    } else if (entry < heap.top()) {
      heap.pop();
      heap.push(entry);
    }
  }

  std::vector<QueryHit> hits(heap.size());
  for (std::size_t i = heap.size(); i-- > 0;) {
    hits[i] = QueryHit{heap.top().second, heap.top().first};
    heap.pop();
  }
  return hits;
}

std::optional<SerendipityHit> find_serendipity(const SnapshotIndex& index,
                                               const std::string& user_id,
                                               const Vector& query,
                                               double tau_d, int n) {
  if (!(tau_d > 0.0)) {
    throw std::invalid_argument("tau_d must be positive");
  }
  std::vector<QueryHit> hits = query_top_n(index, query, n, user_id);

  bool found = false;
  std::size_t best_row = 0;
  double best_surprise = 0.0;
  double best_distance = 0.0;
  for (const QueryHit& hit : hits) {
    if (!(hit.distance < tau_d)) continue;
    if (!(index.next_rating_centered(hit.row) > 0.0)) continue;
    double surprise = index.next_surprise(hit.row);
    if (!found || surprise > best_surprise ||
        (surprise == best_surprise && hit.row < best_row)) {
      found = true;
      best_row = hit.row;
      best_surprise = surprise;
      best_distance = hit.distance;
    }
  }
  if (!found) return std::nullopt;

  SerendipityHit result;
  result.user_id = index.user_id(best_row);
  result.step = index.step(best_row);
  result.next_surprise = best_surprise;
  result.next_rating_centered = index.next_rating_centered(best_row);
  result.next_item_id = index.next_item_id(best_row);
  result.distance = best_distance;
  return result;
}

void save_index(const std::string& path, const SnapshotIndex& index) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path);
  }
  out.write(kMagic, sizeof(kMagic));
  put_u32(out, kFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(index.topic_dim_));
  put_u32(out, static_cast<std::uint32_t>(index.min_step_));
  put_u32(out, static_cast<std::uint32_t>(index.user_table_.size()));
  put_u32(out, static_cast<std::uint32_t>(index.item_table_.size()));
  put_u64(out, index.metas_.size());
  put_u64(out, fnv1a(index.config_label_));
  put_string(out, index.config_label_);
  for (const auto& id : index.user_table_) put_string(out, id);
  for (const auto& id : index.item_table_) put_string(out, id);
  for (std::size_t row = 0; row < index.metas_.size(); ++row) {
    const auto& meta = index.metas_[row];
    put_u32(out, meta.user_idx);
    put_u32(out, static_cast<std::uint32_t>(meta.step));
    put_u32(out, meta.item_idx);
    put_u32(out, 0);  // reserved
    put_f64(out, meta.next_surprise);
    put_f64(out, meta.next_rating_centered);
    const double* pref = index.prefs_.data() +
                         row * static_cast<std::size_t>(index.topic_dim_);
    for (int i = 0; i < index.topic_dim_; ++i) put_f64(out, pref[i]);
  }
  if (!out) {
    throw std::runtime_error("write failed for " + path);
  }
}

SnapshotIndex load_index(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path);
  }
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error(path + ": not a snapshot index file");
  }
  std::uint32_t version = get_u32(in);
  if (version != kFormatVersion) {
    throw std::runtime_error(path + ": unsupported index version " +
                             std::to_string(version));
  }

  SnapshotIndex index;
  index.topic_dim_ = static_cast<int>(get_u32(in));
  index.min_step_ = static_cast<int>(get_u32(in));
  std::uint32_t user_count = get_u32(in);
  std::uint32_t item_count = get_u32(in);
  std::uint64_t row_count = get_u64(in);
  std::uint64_t label_hash = get_u64(in);
  index.config_label_ = get_string(in);
  if (fnv1a(index.config_label_) != label_hash) {
    throw std::runtime_error(path + ": config label hash mismatch");
  }

  index.user_table_.reserve(user_count);
  for (std::uint32_t i = 0; i < user_count; ++i) {
    index.user_table_.push_back(get_string(in));
  }
  index.item_table_.reserve(item_count);
  for (std::uint32_t i = 0; i < item_count; ++i) {
    index.item_table_.push_back(get_string(in));
  }

  index.metas_.reserve(row_count);
  index.prefs_.resize(row_count * index.topic_dim_);
  for (std::uint64_t row = 0; row < row_count; ++row) {
    SnapshotIndex::Meta meta;
    meta.user_idx = get_u32(in);
    meta.step = static_cast<std::int32_t>(get_u32(in));
    meta.item_idx = get_u32(in);
    get_u32(in);  // reserved
    meta.next_surprise = get_f64(in);
    meta.next_rating_centered = get_f64(in);
    if (meta.user_idx >= user_count || meta.item_idx >= item_count) {
      throw std::runtime_error(path + ": corrupt index record");
    }
    index.metas_.push_back(meta);
    for (int i = 0; i < index.topic_dim_; ++i) {
      index.prefs_[row * index.topic_dim_ + i] = get_f64(in);
    }
  }
  if (!in) {
    throw std::runtime_error(path + ": truncated index file");
  }
  return index;
}

bool same_contents(const SnapshotIndex& a, const SnapshotIndex& b) {
  if (a.topic_dim_ != b.topic_dim_ || a.min_step_ != b.min_step_ ||
      a.config_label_ != b.config_label_ || a.user_table_ != b.user_table_ ||
      a.item_table_ != b.item_table_ || a.metas_.size() != b.metas_.size() ||
      a.prefs_.size() != b.prefs_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.metas_.size(); ++i) {
    const auto& ma = a.metas_[i];
    const auto& mb = b.metas_[i];
    if (ma.user_idx != mb.user_idx || ma.item_idx != mb.item_idx ||
        ma.step != mb.step || ma.next_surprise != mb.next_surprise ||
        ma.next_rating_centered != mb.next_rating_centered) {
      return false;
    }
  }
  return a.prefs_ == b.prefs_;
}

}  // namespace serendip
