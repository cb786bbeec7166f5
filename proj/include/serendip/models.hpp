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

#ifndef SERENDIP_MODELS_HPP_
#define SERENDIP_MODELS_HPP_

#include <string>
#include <vector>

#include "serendip/gaussian.hpp"
#include "serendip/history.hpp"

namespace serendip {

// Online preference learners. The Bayesian kinds (blr, vbblr, arow) keep a
// Gaussian belief and measure surprise as the KL divergence from the
// pre-update belief to the post-update belief. nlms keeps a point estimate
// and measures surprise as preference displacement over a horizon. basic
// keeps running statistics and measures surprise as the largest topic
// excess over a per-topic envelope.
enum class ModelKind { kBlr, kVbBlr, kArow, kNlms, kBasic };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

// What the basic model's per-topic envelope tracks: the raw topic vectors
// of consumed items, or the running averages of the consumed prefix.
enum class BasicEnvelopeSource { kItemTopics, kHistoryAverages };

struct ModelConfig {
  ModelKind kind = ModelKind::kBlr;

  // Bayesian kinds. prior_variance scales the initial isotropic covariance;
  // beta is the observation precision for blr/vbblr.
  double prior_variance = 1.0;
  double beta = 1.0;

  // vbblr: eigenvalue floor applied to the belief covariance before each
  // update, keeping the learner plastic under drift.
  double tau_v = 0.1;

  // arow: regularizers for the mean step (r1) and covariance step (r2).
  double r1 = 1.0;
  double r2 = 1.0;

  // nlms: step size and the look-ahead horizon (in steps) over which
  // preference displacement is measured.
  double eta = 0.1;
  int horizon_k = 1;

  BasicEnvelopeSource basic_envelope_source = BasicEnvelopeSource::kItemTopics;
};

// A learner's state after `step` interactions. Exactly the fields relevant
// to the configured kind are maintained; `point` mirrors the belief mean
// for Bayesian kinds so preference() is uniform across kinds.
struct PreferenceState {
  ModelConfig config;
  int step = 0;

  GaussianBelief belief;  // Bayesian kinds

  Vector point;  // nlms point estimate; basic rating-weighted preference

  // basic: running mean of consumed topic vectors (empty until step 1),
  // per-topic running envelope, and the numerator of `point`.
  Vector history_avg;
  Vector envelope;
  Vector rating_weighted_sum;

  // nlms: the last horizon_k+1 point estimates, oldest first.
  std::vector<Vector> recent_points;

  const Vector& preference() const;
};

// One processed interaction. serendipity is always centered_rating times
// surprise; predicted_rating is the pre-update estimate on the centered
// scale (raw scale for basic).
struct StepOutcome {
  double surprise = 0.0;
  double serendipity = 0.0;
  double predicted_rating = 0.0;
  PreferenceState state_after;
};

// Fresh state for a K-dimensional topic space. Validates the config fields
// relevant to its kind (positivity, horizon >= 1).
PreferenceState init_state(const ModelConfig& config, int topic_dim);

// Single-interaction updates. theta is the item's topic vector; r is the
// centered rating for all kinds except basic_update, which takes raw stars.
// Each returns the outcome holding the advanced state.
//
// blr: conjugate rank-one update of the Gaussian belief.
StepOutcome blr_update(const PreferenceState& state, const Vector& theta,
                       double r);

// vbblr: like blr, but the pre-update covariance is spectrally clamped at
// tau_v first; surprise is measured against the clamped belief.
StepOutcome vbblr_update(const PreferenceState& state, const Vector& theta,
                         double r);

// arow: adaptive-regularization update; the covariance shrinks along theta
// regardless of the residual.
StepOutcome arow_update(const PreferenceState& state, const Vector& theta,
                        double r);

// nlms: normalized gradient step on the point estimate. The returned
// surprise is provisional (horizon clamped to the newest step); for
// horizon_k > 1, run_history rewrites it once later steps are available.
StepOutcome nlms_update(const PreferenceState& state, const Vector& theta,
                        double r);

// basic: envelope surprise, then the running statistics advance. r is raw
// stars (1..5).
StepOutcome basic_update(const PreferenceState& state, const Vector& theta,
                         int r);

// Runs one user's full history in timestamp order, resolving items through
// the map, and returns one outcome per interaction. For nlms with
// horizon_k > 1, surprise and serendipity entries are finalized
// retrospectively; the horizon end is clamped to the last step.
std::vector<StepOutcome> run_history(const ModelConfig& config,
                                     const UserHistory& history,
                                     const ItemMap& items);

}  // namespace serendip

#endif  // SERENDIP_MODELS_HPP_
