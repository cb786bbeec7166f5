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

#include "serendip/history.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace serendip {

namespace {

constexpr double kComponentTol = 1e-12;
constexpr double kRenormalizeTol = 1e-6;
constexpr double kRejectTol = 1e-3;

[[noreturn]] void fail(const std::string& path, std::size_t line,
                       const std::string& message) {
  std::ostringstream msg;
  msg << path << ":" << line << ": " << message;
  throw std::runtime_error(msg.str());
}

std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (;;) {
    std::size_t end = line.find(delim, start);
    if (end == std::string::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, end - start));
    start = end + 1;
  }
}

double parse_double(const std::string& field, const std::string& path,
                    std::size_t line) {
  double value = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  auto result = std::from_chars(begin, end, value);
  if (result.ec != std::errc() || result.ptr != end) {
    fail(path, line, "expected a number, got '" + field + "'");
  }
  return value;
}

std::int64_t parse_int(const std::string& field, const std::string& path,
                       std::size_t line) {
  std::int64_t value = 0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  auto result = std::from_chars(begin, end, value);
  if (result.ec != std::errc() || result.ptr != end) {
    fail(path, line, "expected an integer, got '" + field + "'");
  }
  return value;
}

// Streams a headered delimited file. on_header(fields) runs once for the
// header line, then on_row(fields, line_number) for every data row. The
// delimiter (tab or comma) is detected from the header.
template <typename HeaderFn, typename RowFn>
void for_each_row(const std::string& path, HeaderFn&& on_header,
                  RowFn&& on_row) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path);
  }
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  char delim = '\t';
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      delim = line.find('\t') != std::string::npos ? '\t' : ',';
      on_header(split(line, delim));
      continue;
    }
    on_row(split(line, delim), line_no);
  }
  if (!header_seen) {
    throw std::runtime_error(path + ": missing header line");
  }
}

std::string format_double(double value) {
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), "%.17g", value);
  return buffer;
}

}  // namespace

const UserHistory* Corpus::find_user(const std::string& user_id) const {
  auto it = std::lower_bound(
      users.begin(), users.end(), user_id,
      [](const UserHistory& u, const std::string& id) { return u.user_id < id; });
  if (it == users.end() || it->user_id != user_id) return nullptr;
  return &*it;
}

std::vector<SurpriseAnnotation> Corpus::annotations_for(
    const std::string& user_id) const {
  std::vector<SurpriseAnnotation> result;
  for (const auto& a : annotations) {
    if (a.user_id == user_id) result.push_back(a);
  }
  return result;
}

double center_rating(int stars) {
  if (stars < 1 || stars > 5) {
    throw std::invalid_argument("rating must be 1..5 stars, got " +
                                std::to_string(stars));
  }
  return static_cast<double>(stars - 3);
}

ItemMap load_topics(const std::string& path, int* topic_dim) {
  ItemMap items;
  int k = 0;
  for_each_row(
      path,
      [&](const std::vector<std::string>& header) {
        if (header.size() < 2) {
          throw std::runtime_error(path +
                                   ": header must name at least one topic");
        }
        k = static_cast<int>(header.size()) - 1;
      },
      [&](const std::vector<std::string>& fields, std::size_t line) {
        if (static_cast<int>(fields.size()) != k + 1) {
          fail(path, line,
               "expected " + std::to_string(k + 1) + " fields, got " +
                   std::to_string(fields.size()));
        }
        const std::string& id = fields[0];
        if (id.empty()) fail(path, line, "empty item id");
        if (items.count(id)) {
          fail(path, line, "duplicate item id '" + id + "'");
        }

        Vector topics(k);
        for (int i = 0; i < k; ++i) {
          double v = parse_double(fields[i + 1], path, line);
          if (v < -kComponentTol) {
            fail(path, line,
                 "topic component " + std::to_string(i + 1) +
                     " is negative (" + format_double(v) + ")");
          }
          topics[i] = std::max(v, 0.0);
        }
        double sum = topics.sum();
        if (std::abs(sum - 1.0) > kRejectTol) {
          fail(path, line,
               "topic components sum to " + format_double(sum) +
                   ", too far from 1");
        }
        if (std::abs(sum - 1.0) > kRenormalizeTol) {
          topics /= sum;
        }
        items.emplace(id, ItemRecord{id, std::move(topics)});
      });
  if (topic_dim) *topic_dim = k;
  return items;
}

std::vector<UserHistory> load_histories(const std::string& path) {
  std::unordered_map<std::string, std::size_t> index;
  std::vector<UserHistory> users;
  auto check_header = [&](const std::vector<std::string>& header) {
    if (header.size() != 4) {
      throw std::runtime_error(path + ": expected a 4-column header");
    }
  };
  for_each_row(path, check_header, [&](const std::vector<std::string>& fields,
                                       std::size_t line) {
    if (fields.size() != 4) {
      fail(path, line,
           "expected 4 fields (user_id, item_id, stars, timestamp), got " +
               std::to_string(fields.size()));
    }
    if (fields[0].empty()) fail(path, line, "empty user id");
    if (fields[1].empty()) fail(path, line, "empty item id");
    std::int64_t stars = parse_int(fields[2], path, line);
    if (stars < 1 || stars > 5) {
      fail(path, line, "rating must be 1..5 stars, got " + fields[2]);
    }
    std::int64_t timestamp = parse_int(fields[3], path, line);

    auto [it, inserted] = index.emplace(fields[0], users.size());
    if (inserted) {
      users.push_back(UserHistory{fields[0], {}});
    }
    users[it->second].interactions.push_back(
        Interaction{fields[1], static_cast<int>(stars), timestamp});
  });

  for (auto& user : users) {
    std::stable_sort(user.interactions.begin(), user.interactions.end(),
                     [](const Interaction& a, const Interaction& b) {
                       return a.timestamp < b.timestamp;
                     });
  }
  std::sort(users.begin(), users.end(),
            [](const UserHistory& a, const UserHistory& b) {
              return a.user_id < b.user_id;
            });
  return users;
}

std::vector<SurpriseAnnotation> load_annotations(const std::string& path) {
  std::vector<SurpriseAnnotation> annotations;
  std::set<std::pair<std::string, int>> seen;
  auto check_header = [&](const std::vector<std::string>& header) {
    if (header.size() != 3) {
      throw std::runtime_error(path + ": expected a 3-column header");
    }
  };
  for_each_row(path, check_header, [&](const std::vector<std::string>& fields,
                                       std::size_t line) {
    if (fields.size() != 3) {
      fail(path, line,
           "expected 3 fields (user_id, position, surprising), got " +
               std::to_string(fields.size()));
    }
    if (fields[0].empty()) fail(path, line, "empty user id");
    std::int64_t position = parse_int(fields[1], path, line);
    if (position < 1) {
      fail(path, line, "position must be >= 1, got " + fields[1]);
    }
    bool surprising;
    if (fields[2] == "0") {
      surprising = false;
    } else if (fields[2] == "1") {
      surprising = true;
    } else {
      fail(path, line, "surprising must be 0 or 1, got '" + fields[2] + "'");
    }
    if (!seen.emplace(fields[0], static_cast<int>(position)).second) {
      fail(path, line,
           "duplicate annotation for user '" + fields[0] + "' position " +
               fields[1]);
    }
    annotations.push_back(SurpriseAnnotation{
        fields[0], static_cast<int>(position), surprising});
  });
  std::sort(annotations.begin(), annotations.end(),
            [](const SurpriseAnnotation& a, const SurpriseAnnotation& b) {
              return std::tie(a.user_id, a.position) <
                     std::tie(b.user_id, b.position);
            });
  return annotations;
}

Corpus load_corpus(const std::string& topics_path,
                   const std::string& histories_path,
                   const std::string& annotations_path, int burn_in) {
  Corpus corpus;
  corpus.items = load_topics(topics_path, &corpus.topic_dim);
  corpus.users = load_histories(histories_path);

  std::set<std::string> missing;
  for (const auto& user : corpus.users) {
    for (const auto& interaction : user.interactions) {
      if (!corpus.items.count(interaction.item_id)) {
        missing.insert(interaction.item_id);
      }
    }
  }
  if (!missing.empty()) {
    std::ostringstream msg;
    msg << histories_path << ": " << missing.size()
        << " item id(s) not present in " << topics_path << ":";
    for (const auto& id : missing) msg << " " << id;
    throw std::runtime_error(msg.str());
  }

  if (!annotations_path.empty()) {
    corpus.annotations = load_annotations(annotations_path);
    for (const auto& a : corpus.annotations) {
      const UserHistory* user = corpus.find_user(a.user_id);
      if (!user) {
        throw std::runtime_error(annotations_path + ": unknown user '" +
                                 a.user_id + "'");
      }
      int len = static_cast<int>(user->interactions.size());
      if (a.position > len) {
        std::ostringstream msg;
        msg << annotations_path << ": user '" << a.user_id << "' position "
            << a.position << " exceeds history length " << len;
        throw std::runtime_error(msg.str());
      }
      if (a.position <= burn_in) {
        std::ostringstream msg;
        msg << annotations_path << ": user '" << a.user_id << "' position "
            << a.position << " falls inside the burn-in prefix (" << burn_in
            << ")";
        throw std::runtime_error(msg.str());
      }
    }
  }
  return corpus;
}

void save_topics(const std::string& path, const ItemMap& items, int topic_dim,
                 char delim, const std::string& comment) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write " + path);
  }
  if (!comment.empty()) out << "# " << comment << "\n";
  out << "item_id";
  for (int i = 1; i <= topic_dim; ++i) out << delim << "topic_" << i;
  out << "\n";

  std::vector<const ItemRecord*> sorted;
  sorted.reserve(items.size());
  for (const auto& [id, record] : items) sorted.push_back(&record);
  std::sort(sorted.begin(), sorted.end(),
            [](const ItemRecord* a, const ItemRecord* b) {
              return a->item_id < b->item_id;
            });

  for (const ItemRecord* record : sorted) {
    if (record->topics.size() != topic_dim) {
      throw std::invalid_argument("item '" + record->item_id +
                                  "' has wrong topic dimension");
    }
    out << record->item_id;
    for (int i = 0; i < topic_dim; ++i) {
      out << delim << format_double(record->topics[i]);
    }
    out << "\n";
  }
  if (!out) {
    throw std::runtime_error("write failed for " + path);
  }
}

void save_histories(const std::string& path,
                    const std::vector<UserHistory>& users, char delim,
                    const std::string& comment) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write " + path);
  }
  if (!comment.empty()) out << "# " << comment << "\n";
  out << "user_id" << delim << "item_id" << delim << "stars" << delim
      << "timestamp\n";

  std::vector<const UserHistory*> sorted;
  sorted.reserve(users.size());
  for (const auto& user : users) sorted.push_back(&user);
  std::sort(sorted.begin(), sorted.end(),
            [](const UserHistory* a, const UserHistory* b) {
              return a->user_id < b->user_id;
            });

  for (const UserHistory* user : sorted) {
    for (const auto& interaction : user->interactions) {
      out << user->user_id << delim << interaction.item_id << delim
          << interaction.stars << delim << interaction.timestamp << "\n";
    }
  }
  if (!out) {
    throw std::runtime_error("write failed for " + path);
  }
}

void save_annotations(const std::string& path,
                      const std::vector<SurpriseAnnotation>& annotations,
                      char delim, const std::string& comment) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write " + path);
  }
  if (!comment.empty()) out << "# " << comment << "\n";
  out << "user_id" << delim << "position" << delim << "surprising\n";

  std::vector<SurpriseAnnotation> sorted = annotations;
  std::sort(sorted.begin(), sorted.end(),
            [](const SurpriseAnnotation& a, const SurpriseAnnotation& b) {
              return std::tie(a.user_id, a.position) <
                     std::tie(b.user_id, b.position);
            });

  for (const auto& a : sorted) {
    out << a.user_id << delim << a.position << delim << (a.surprising ? 1 : 0)
        << "\n";
  }
  if (!out) {
    throw std::runtime_error("write failed for " + path);
  }
}

}  // namespace serendip
