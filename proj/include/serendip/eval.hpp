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

#ifndef SERENDIP_EVAL_HPP_
#define SERENDIP_EVAL_HPP_

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "serendip/history.hpp"
#include "serendip/models.hpp"
#include "serendip/neighbors.hpp"

namespace serendip {

struct ConfusionCounts {
  long tp = 0;
  long fp = 0;
  long tn = 0;
  long fn = 0;

  long total() const { return tp + fp + tn + fn; }
};

// Precision, recall, F1 as fractions in [0, 1]. Undefined ratios (0/0)
// are reported as 0.
struct Metrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

Metrics metrics_from_counts(const ConfusionCounts& counts);

// Surprise detection for one user: at every annotated position, predict
// "surprising" when the model's surprise at that step exceeds tau_s, and
// score against the label. Positions must land inside the run.
ConfusionCounts surprise_detection_counts(
    const std::vector<StepOutcome>& run,
    const std::vector<SurpriseAnnotation>& annotations, double tau_s);

Metrics eval_surprise_detection(
    const std::vector<StepOutcome>& run,
    const std::vector<SurpriseAnnotation>& annotations, double tau_s);

// Serendipity recommendation for one user. For every step i >= burn_in
// whose successor i+1 carries a label, query the index with the user's
// preference after step i. A returned neighbor predicts "serendipitous"
// when its next-step surprise exceeds tau_s; the ground truth is the label
// at i+1 combined with a positive centered rating there. Steps where the
// search returns nothing are skipped entirely.
ConfusionCounts serendipity_counts(
    const UserHistory& user, const std::vector<StepOutcome>& sim_run,
    const SnapshotIndex& index,
    const std::vector<SurpriseAnnotation>& annotations, double tau_s,
    double tau_d, int top_n, int burn_in);

Metrics eval_serendipity(const UserHistory& user,
                         const std::vector<StepOutcome>& sim_run,
                         const SnapshotIndex& index,
                         const std::vector<SurpriseAnnotation>& annotations,
                         double tau_s, double tau_d, int top_n, int burn_in);

// Expected metrics of a detector that answers "surprising" independently
// with probability p, against a labeled set holding `positives` positive
// labels out of `total`. Expected precision is the base rate; expected
// recall is p.
Metrics random_baseline_expected(double p, long positives, long total);

// Leave-one-out selection over an abstract grid: for each user, pick the
// grid point maximizing the mean F1 over the other users (first point wins
// ties), then score the held-out user at that point. evaluate(g, user)
// must be deterministic; it is called at most grid_size * users^2 times.
struct TuningSelection {
  std::string user_id;
  std::size_t grid_index = 0;
  double train_avg_f1 = 0.0;
  Metrics heldout;
};

struct TuningResult {
  std::vector<TuningSelection> per_user;
  double average_f1 = 0.0;
};

TuningResult tune_leave_one_out(
    std::size_t grid_size, const std::vector<std::string>& users,
    const std::function<Metrics(std::size_t, const std::string&)>& evaluate);

// Wide results table: one row per configuration, three percentage columns
// (precision, recall, F1) per user plus the average F1, all to one
// decimal.
std::string format_metrics_header(const std::vector<std::string>& user_ids,
                                  char delim = '\t');
std::string format_metrics_row(const std::string& label,
                               const std::vector<Metrics>& per_user,
                               char delim = '\t');

}  // namespace serendip

#endif  // SERENDIP_EVAL_HPP_
