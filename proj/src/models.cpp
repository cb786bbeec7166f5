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

#include "serendip/models.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace serendip {

namespace {

// Below this squared norm an item vector is treated as empty and the
// update becomes a no-op.
constexpr double kThetaNormFloor = 1e-12;

void check_kind(const PreferenceState& state, ModelKind expected,
                const char* fn) {
  if (state.config.kind != expected) {
    std::ostringstream msg;
    msg << fn << " called on a state configured for "
        << to_string(state.config.kind);
    throw std::invalid_argument(msg.str());
  }
}

void check_theta(const PreferenceState& state, const Vector& theta) {
  Eigen::Index k = state.point.size();
  if (theta.size() != k) {
    std::ostringstream msg;
    msg << "dimension mismatch: item vector has " << theta.size()
        << " topics, state has " << k;
    throw std::invalid_argument(msg.str());
  }
}

void require_positive(double value, const char* name) {
  if (!(value > 0.0)) {
    std::ostringstream msg;
    msg << name << " must be positive, got " << value;
    throw std::invalid_argument(msg.str());
  }
}

// Shared conjugate rank-one update used by blr and vbblr. `sigma` is the
// effective pre-update covariance. Returns the posterior; `predicted` is
// the pre-update rating estimate.
GaussianBelief conjugate_update(const Vector& mu, const Matrix& sigma,
                                const Vector& theta, double r, double beta,
                                double* predicted) {
  Vector sigma_theta = sigma * theta;
  double denom = 1.0 + beta * theta.dot(sigma_theta);
  *predicted = mu.dot(theta);
  double residual = r - *predicted;

  GaussianBelief post;
  post.mean = mu + (beta * residual / denom) * sigma_theta;
  Matrix cov = sigma - (beta / denom) * (sigma_theta * sigma_theta.transpose());
  post.cov = 0.5 * (cov + cov.transpose());
  return post;
}

}  // namespace

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kBlr:
      return "blr";
    case ModelKind::kVbBlr:
      return "vbblr";
    case ModelKind::kArow:
      return "arow";
    case ModelKind::kNlms:
      return "nlms";
    case ModelKind::kBasic:
      return "basic";
  }
  throw std::invalid_argument("unknown model kind");
}

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "blr") return ModelKind::kBlr;
  if (name == "vbblr") return ModelKind::kVbBlr;
  if (name == "arow") return ModelKind::kArow;
  if (name == "nlms") return ModelKind::kNlms;
  if (name == "basic") return ModelKind::kBasic;
  throw std::invalid_argument("unknown model kind '" + name + "'");
}

const Vector& PreferenceState::preference() const {
  switch (config.kind) {
    case ModelKind::kBlr:
    case ModelKind::kVbBlr:
    case ModelKind::kArow:
      return belief.mean;
    default:
      return point;
  }
}

PreferenceState init_state(const ModelConfig& config, int topic_dim) {
  if (topic_dim < 1) {
    throw std::invalid_argument("topic dimension must be >= 1, got " +
                                std::to_string(topic_dim));
  }
  switch (config.kind) {
    case ModelKind::kBlr:
      require_positive(config.prior_variance, "prior_variance");
      require_positive(config.beta, "beta");
      break;
    case ModelKind::kVbBlr:
      require_positive(config.prior_variance, "prior_variance");
      require_positive(config.beta, "beta");
      require_positive(config.tau_v, "tau_v");
      break;
    case ModelKind::kArow:
      require_positive(config.prior_variance, "prior_variance");
      require_positive(config.r1, "r1");
      require_positive(config.r2, "r2");
      break;
    case ModelKind::kNlms:
      require_positive(config.eta, "eta");
      if (config.horizon_k < 1) {
        throw std::invalid_argument("horizon_k must be >= 1, got " +
                                    std::to_string(config.horizon_k));
      }
      break;
    case ModelKind::kBasic:
      break;
  }

  PreferenceState state;
  state.config = config;
  state.step = 0;
  state.point = Vector::Zero(topic_dim);
  switch (config.kind) {
    case ModelKind::kBlr:
    case ModelKind::kVbBlr:
    case ModelKind::kArow:
      state.belief.mean = Vector::Zero(topic_dim);
      state.belief.cov =
          config.prior_variance * Matrix::Identity(topic_dim, topic_dim);
      break;
    case ModelKind::kNlms:
      state.recent_points.push_back(state.point);
      break;
    case ModelKind::kBasic:
      state.envelope = Vector::Zero(topic_dim);
      state.rating_weighted_sum = Vector::Zero(topic_dim);
      break;
  }
  return state;
}

StepOutcome blr_update(const PreferenceState& state, const Vector& theta,
                       double r) {
  check_kind(state, ModelKind::kBlr, "blr_update");
  check_theta(state, theta);

  StepOutcome out;
  GaussianBelief post = conjugate_update(state.belief.mean, state.belief.cov,
                                         theta, r, state.config.beta,
                                         &out.predicted_rating);
  out.surprise = kl_divergence(post, state.belief);
  out.serendipity = r * out.surprise;

  PreferenceState next = state;
  next.step = state.step + 1;
  next.belief = std::move(post);
  next.point = next.belief.mean;
  out.state_after = std::move(next);
  return out;
}

StepOutcome vbblr_update(const PreferenceState& state, const Vector& theta,
                         double r) {
  check_kind(state, ModelKind::kVbBlr, "vbblr_update");
  check_theta(state, theta);

  // Clamp the belief's spectrum before learning so the posterior can keep
  // moving even after long stationary stretches.
  GaussianBelief clamped;
  clamped.mean = state.belief.mean;
  clamped.cov = clip_eigenvalues(state.belief.cov, state.config.tau_v);

  StepOutcome out;
  GaussianBelief post =
      conjugate_update(clamped.mean, clamped.cov, theta, r, state.config.beta,
                       &out.predicted_rating);
  out.surprise = kl_divergence(post, clamped);
  out.serendipity = r * out.surprise;

  PreferenceState next = state;
  next.step = state.step + 1;
  next.belief = std::move(post);
  next.point = next.belief.mean;
  out.state_after = std::move(next);
  return out;
}

StepOutcome arow_update(const PreferenceState& state, const Vector& theta,
                        double r) {
  check_kind(state, ModelKind::kArow, "arow_update");
  check_theta(state, theta);

  const Vector& mu = state.belief.mean;
  const Matrix& sigma = state.belief.cov;
  Vector sigma_theta = sigma * theta;
  double confidence = theta.dot(sigma_theta);

  StepOutcome out;
  out.predicted_rating = mu.dot(theta);

  GaussianBelief post;
  post.mean = mu + ((r - out.predicted_rating) /
                    (state.config.r1 + confidence)) * sigma_theta;
  Matrix cov = sigma - (sigma_theta * sigma_theta.transpose()) /
                           (state.config.r2 + confidence);
  post.cov = floor_and_symmetrize(cov);

  out.surprise = kl_divergence(post, state.belief);
  out.serendipity = r * out.surprise;

  PreferenceState next = state;
  next.step = state.step + 1;
  next.belief = std::move(post);
  next.point = next.belief.mean;
  out.state_after = std::move(next);
  return out;
}

StepOutcome nlms_update(const PreferenceState& state, const Vector& theta,
                        double r) {
  check_kind(state, ModelKind::kNlms, "nlms_update");
  check_theta(state, theta);

  double norm2 = theta.squaredNorm();
  StepOutcome out;
  out.predicted_rating = state.point.dot(theta);

  Vector new_point = state.point;
  if (norm2 >= kThetaNormFloor) {
    new_point += (state.config.eta / norm2) * (r - out.predicted_rating) *
                 theta;
  }

  // Provisional: displacement to the newest point. Exact for horizon 1;
  // run_history rewrites longer horizons once the stream has advanced.
  out.surprise = (new_point - state.point).norm();
  out.serendipity = r * out.surprise;

  PreferenceState next = state;
  next.step = state.step + 1;
  next.point = std::move(new_point);
  next.recent_points.push_back(next.point);
  std::size_t window = static_cast<std::size_t>(state.config.horizon_k) + 1;
  while (next.recent_points.size() > window) {
    next.recent_points.erase(next.recent_points.begin());
  }
  out.state_after = std::move(next);
  return out;
}

StepOutcome basic_update(const PreferenceState& state, const Vector& theta,
                         int r) {
  check_kind(state, ModelKind::kBasic, "basic_update");
  check_theta(state, theta);
  double centered = center_rating(r);

  StepOutcome out;
  out.surprise = (theta - state.envelope).maxCoeff();
  out.predicted_rating = state.point.dot(theta);
  out.serendipity = centered * out.surprise;

  PreferenceState next = state;
  int t = state.step + 1;
  next.step = t;
  next.history_avg =
      state.history_avg.size() == 0
          ? theta
          : Vector((state.history_avg * state.step + theta) / t);
  next.envelope =
      state.config.basic_envelope_source == BasicEnvelopeSource::kItemTopics
          ? state.envelope.cwiseMax(theta)
          : state.envelope.cwiseMax(next.history_avg);
  next.rating_weighted_sum = state.rating_weighted_sum + r * theta;
  next.point = next.rating_weighted_sum / t;
  out.state_after = std::move(next);
  return out;
}

std::vector<StepOutcome> run_history(const ModelConfig& config,
                                     const UserHistory& history,
                                     const ItemMap& items) {
  std::vector<StepOutcome> outcomes;
  if (history.interactions.empty()) return outcomes;
  outcomes.reserve(history.interactions.size());

  // Honor timestamp order even if the caller skipped the loader.
  std::vector<const Interaction*> ordered;
  ordered.reserve(history.interactions.size());
  for (const auto& interaction : history.interactions) {
    ordered.push_back(&interaction);
  }
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const Interaction* a, const Interaction* b) {
                     return a->timestamp < b->timestamp;
                   });

  auto resolve = [&](const std::string& item_id) -> const ItemRecord& {
    auto it = items.find(item_id);
    if (it == items.end()) {
      throw std::runtime_error("user '" + history.user_id +
                               "' consumed unknown item '" + item_id + "'");
    }
    return it->second;
  };

  int topic_dim = static_cast<int>(resolve(ordered.front()->item_id)
                                       .topics.size());
  PreferenceState state = init_state(config, topic_dim);

  for (const Interaction* interaction : ordered) {
    const ItemRecord& item = resolve(interaction->item_id);
    StepOutcome out;
    switch (config.kind) {
      case ModelKind::kBlr:
        out = blr_update(state, item.topics, center_rating(interaction->stars));
        break;
      case ModelKind::kVbBlr:
        out = vbblr_update(state, item.topics,
                           center_rating(interaction->stars));
        break;
      case ModelKind::kArow:
        out = arow_update(state, item.topics,
                          center_rating(interaction->stars));
        break;
      case ModelKind::kNlms:
        out = nlms_update(state, item.topics,
                          center_rating(interaction->stars));
        break;
      case ModelKind::kBasic:
        out = basic_update(state, item.topics, interaction->stars);
        break;
    }
    state = out.state_after;
    outcomes.push_back(std::move(out));
  }

  // Retrospective surprise for nlms with a multi-step horizon: the
  // displacement from the pre-update point to the point horizon_k steps
  // ahead, clamped to the end of the stream.
  if (config.kind == ModelKind::kNlms && config.horizon_k > 1) {
    int len = static_cast<int>(outcomes.size());
    auto point_at = [&](int step) -> const Vector& {
      return outcomes[step - 1].state_after.point;
    };
    Vector origin = Vector::Zero(topic_dim);
    for (int t = 1; t <= len; ++t) {
      const Vector& before = t == 1 ? origin : point_at(t - 1);
      int horizon_end = std::min(t + config.horizon_k - 1, len);
      double surprise = (point_at(horizon_end) - before).norm();
      outcomes[t - 1].surprise = surprise;
      double centered = center_rating(ordered[t - 1]->stars);
      outcomes[t - 1].serendipity = centered * surprise;
    }
  }
  return outcomes;
}

}  // namespace serendip
