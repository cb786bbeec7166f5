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

#ifndef SERENDIP_PIPELINE_HPP_
#define SERENDIP_PIPELINE_HPP_

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "serendip/eval.hpp"
#include "serendip/history.hpp"
#include "serendip/models.hpp"
#include "serendip/neighbors.hpp"
#include "serendip/synth.hpp"

namespace serendip {

// A fully resolved job. Loaded from JSON, overridden by CLI flags, and
// hashed so every output file can name the configuration that produced it.
struct JobConfig {
  std::string topics_path;
  std::string histories_path;
  std::string annotations_path;
  std::string out_dir = "out";
  std::string queries_path;      // recommend: optional (user_id, step) file
  std::string index_cache_path;  // optional binary snapshot cache

  ModelConfig model;                      // surprise learner
  std::optional<ModelConfig> sim_model;   // similarity learner, if different

  int burn_in = kDefaultBurnIn;
  double tau_s = 0.1;
  double tau_d = 1.0;
  int top_n = 50;
  int jobs = 0;  // worker threads; 0 means one per hardware core

  std::string tune_mode = "surprise";  // or "serendipity"
  SynthConfig synth;
};

// JSON round-trip. Unknown keys are an error; missing keys keep defaults.
JobConfig load_job_config(const std::string& path);
std::string job_config_json(const JobConfig& job);

// FNV-1a over the canonical JSON, as 16 hex digits.
std::string job_config_hash(const JobConfig& job);

// Compact model syntax for flags and labels: "kind" or
// "kind:key=value,key=value", e.g. "arow:r1=0.5,r2=2". Keys match the
// ModelConfig fields; "k" abbreviates horizon_k, "envelope" selects the
// basic envelope source. For blr/vbblr, giving beta without prior_variance
// sets prior_variance = beta.
ModelConfig parse_model_spec(const std::string& spec);
std::string model_spec(const ModelConfig& config);

// Runs the model over every user, jobs-way parallel. Keyed by user_id.
std::map<std::string, std::vector<StepOutcome>> run_population(
    const std::vector<UserHistory>& users, const ItemMap& items,
    const ModelConfig& config, int jobs);

// Hyperparameter sweep for one learner kind; fields not swept retain the
// values in `base`.
std::vector<ModelConfig> default_model_grid(const ModelConfig& base);

// Decile grid (10th..90th percentile, deduplicated) of a sample, used to
// propose thresholds. Empty input yields {fallback}.
std::vector<double> decile_grid(std::vector<double> values, double fallback);

// Executes `command` (run | recommend | eval-surprise | eval-serendipity |
// tune | synth) for the job. Returns the process exit code; failures throw.
int run_job(const JobConfig& job, const std::string& command);

}  // namespace serendip

#endif  // SERENDIP_PIPELINE_HPP_
