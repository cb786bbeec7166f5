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

#include "serendip/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace serendip {

namespace {

std::string percent(double fraction) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%.1f", 100.0 * fraction);
  return buffer;
}

const SurpriseAnnotation* find_annotation(
    const std::vector<SurpriseAnnotation>& annotations,
    const std::string& user_id, int position) {
  for (const auto& a : annotations) {
    if (a.position == position && a.user_id == user_id) return &a;
  }
  return nullptr;
}

}  // namespace

Metrics metrics_from_counts(const ConfusionCounts& counts) {
  if (counts.tp < 0 || counts.fp < 0 || counts.tn < 0 || counts.fn < 0) {
    throw std::invalid_argument("negative confusion counts");
  }
  Metrics m;
  long predicted = counts.tp + counts.fp;
  long actual = counts.tp + counts.fn;
  m.precision = predicted > 0
                    ? static_cast<double>(counts.tp) / predicted
                    : 0.0;
  m.recall = actual > 0 ? static_cast<double>(counts.tp) / actual : 0.0;
  double denom = m.precision + m.recall;
  m.f1 = denom > 0.0 ? 2.0 * m.precision * m.recall / denom : 0.0;
  return m;
}

ConfusionCounts surprise_detection_counts(
    const std::vector<StepOutcome>& run,
    const std::vector<SurpriseAnnotation>& annotations, double tau_s) {
  ConfusionCounts counts;
  for (const auto& a : annotations) {
    if (a.position < 1 || a.position > static_cast<int>(run.size())) {
      std::ostringstream msg;
      msg << "annotation position " << a.position
          << " outside the run of length " << run.size();
      throw std::invalid_argument(msg.str());
    }
    bool predicted = run[a.position - 1].surprise > tau_s;
    if (predicted && a.surprising) ++counts.tp;
    if (predicted && !a.surprising) ++counts.fp;
    if (!predicted && a.surprising) ++counts.fn;
    if (!predicted && !a.surprising) ++counts.tn;
  }
  return counts;
}

Metrics eval_surprise_detection(
    const std::vector<StepOutcome>& run,
    const std::vector<SurpriseAnnotation>& annotations, double tau_s) {
  return metrics_from_counts(surprise_detection_counts(run, annotations,
                                                       tau_s));
}

ConfusionCounts serendipity_counts(
    const UserHistory& user, const std::vector<StepOutcome>& sim_run,
    const SnapshotIndex& index,
    const std::vector<SurpriseAnnotation>& annotations, double tau_s,
    double tau_d, int top_n, int burn_in) {
  int len = static_cast<int>(user.interactions.size());
  if (static_cast<int>(sim_run.size()) != len) {
    throw std::invalid_argument("run length mismatch for user '" +
                                user.user_id + "'");
  }
  if (burn_in < 0) {
    throw std::invalid_argument("burn_in must be >= 0");
  }

  ConfusionCounts counts;
  for (int i = std::max(1, burn_in); i <= len - 1; ++i) {
    const SurpriseAnnotation* label =
        find_annotation(annotations, user.user_id, i + 1);
    if (!label) continue;

    const Vector& query = sim_run[i - 1].state_after.preference();
    std::optional<SerendipityHit> hit =
        find_serendipity(index, user.user_id, query, tau_d, top_n);
    if (!hit) continue;  // no neighbor qualified; the step contributes nothing

    bool predicted = hit->next_surprise > tau_s;
    bool truth = label->surprising &&
                 center_rating(user.interactions[i].stars) > 0.0;
    if (predicted && truth) ++counts.tp;
    if (predicted && !truth) ++counts.fp;
    if (!predicted && truth) ++counts.fn;
    if (!predicted && !truth) ++counts.tn;
  }
  return counts;
}

Metrics eval_serendipity(const UserHistory& user,
                         const std::vector<StepOutcome>& sim_run,
                         const SnapshotIndex& index,
                         const std::vector<SurpriseAnnotation>& annotations,
                         double tau_s, double tau_d, int top_n, int burn_in) {
  return metrics_from_counts(serendipity_counts(
      user, sim_run, index, annotations, tau_s, tau_d, top_n, burn_in));
}

Metrics random_baseline_expected(double p, long positives, long total) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::invalid_argument("p must lie in [0, 1]");
  }
  if (total <= 0) {
    throw std::invalid_argument("total must be positive");
  }
  if (positives < 0 || positives > total) {
    throw std::invalid_argument("positives must lie in [0, total]");
  }
  Metrics m;
  m.precision = static_cast<double>(positives) / static_cast<double>(total);
  m.recall = p;
  double denom = m.precision + m.recall;
  m.f1 = denom > 0.0 ? 2.0 * m.precision * m.recall / denom : 0.0;
  return m;
}

TuningResult tune_leave_one_out(
    std::size_t grid_size, const std::vector<std::string>& users,
    const std::function<Metrics(std::size_t, const std::string&)>& evaluate) {
  if (grid_size == 0) {
    throw std::invalid_argument("tuning grid is empty");
  }
  if (users.size() < 2) {
    throw std::invalid_argument("leave-one-out needs at least two users");
  }

  // Score every (grid point, user) pair once.
  std::vector<std::vector<Metrics>> table(grid_size);
  for (std::size_t g = 0; g < grid_size; ++g) {
    table[g].reserve(users.size());
    for (const auto& user : users) {
      table[g].push_back(evaluate(g, user));
    }
  }

  TuningResult result;
  double f1_sum = 0.0;
  for (std::size_t u = 0; u < users.size(); ++u) {
    std::size_t best_g = 0;
    double best_train = -1.0;
    for (std::size_t g = 0; g < grid_size; ++g) {
      double train_sum = 0.0;
      for (std::size_t v = 0; v < users.size(); ++v) {
        if (v == u) continue;
        train_sum += table[g][v].f1;
      }
      double train_avg = train_sum / static_cast<double>(users.size() - 1);
      if (train_avg > best_train) {
        best_train = train_avg;
        best_g = g;
      }
    }
    TuningSelection selection;
    selection.user_id = users[u];
    selection.grid_index = best_g;
    selection.train_avg_f1 = best_train;
    selection.heldout = table[best_g][u];
    f1_sum += selection.heldout.f1;
    result.per_user.push_back(std::move(selection));
  }
  result.average_f1 = f1_sum / static_cast<double>(users.size());
  return result;
}

std::string format_metrics_header(const std::vector<std::string>& user_ids,
                                  char delim) {
  std::ostringstream out;
  out << "config";
  for (const auto& id : user_ids) {
    out << delim << id << ":precision" << delim << id << ":recall" << delim
        << id << ":f1";
  }
  out << delim << "avg_f1";
  return out.str();
}

std::string format_metrics_row(const std::string& label,
                               const std::vector<Metrics>& per_user,
                               char delim) {
  std::ostringstream out;
  out << label;
  double f1_sum = 0.0;
  for (const auto& m : per_user) {
    out << delim << percent(m.precision) << delim << percent(m.recall)
        << delim << percent(m.f1);
    f1_sum += m.f1;
  }
  double avg = per_user.empty() ? 0.0
                                : f1_sum / static_cast<double>(per_user.size());
  out << delim << percent(avg);
  return out.str();
}

}  // namespace serendip
