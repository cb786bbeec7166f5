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

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "serendip/pipeline.hpp"

namespace {

struct Overrides {
  std::string config_path;
  std::string topics, histories, annotations, out, queries, index_cache;
  std::string model, sim_model, tune_mode;
  int burn_in = 0;
  double tau_s = 0.0, tau_d = 0.0;
  int top_n = 0, jobs = 0;
  std::uint64_t seed = 0;
  int synth_users = 0, synth_topics = 0, synth_length = 0;
  int synth_regimes = 0, synth_regime_topics = 0;
  double synth_noise = 0.0, synth_concentration = 0.0;
};

// Registers the shared flag set on a subcommand and returns the option
// pointers needed to test presence after parsing.
void add_common_options(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path,
                  "JSON job config; flags override its values")
      ->check(CLI::ExistingFile);
  cmd->add_option("--topics", o.topics, "item topic matrix (TSV/CSV)");
  cmd->add_option("--histories", o.histories, "interaction log (TSV/CSV)");
  cmd->add_option("--annotations", o.annotations,
                  "surprise labels (TSV/CSV)");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--model", o.model,
                  "learner spec, e.g. arow:r1=0.5,r2=2");
  cmd->add_option("--sim-model", o.sim_model,
                  "separate learner for similarity vectors");
  cmd->add_option("--burn-in", o.burn_in, "steps consumed before scoring");
  cmd->add_option("--tau-s", o.tau_s, "surprise threshold");
  cmd->add_option("--tau-d", o.tau_d, "neighbor distance threshold");
  cmd->add_option("--top-n", o.top_n, "neighbors per query");
  cmd->add_option("--jobs", o.jobs, "worker threads (0 = all cores)");
  cmd->add_option("--seed", o.seed, "random seed (synthetic data)");
}

serendip::JobConfig resolve(const CLI::App* cmd, const Overrides& o) {
  serendip::JobConfig job;
  if (cmd->count("--config")) {
    job = serendip::load_job_config(o.config_path);
  }
  if (cmd->count("--topics")) job.topics_path = o.topics;
  if (cmd->count("--histories")) job.histories_path = o.histories;
  if (cmd->count("--annotations")) job.annotations_path = o.annotations;
  if (cmd->count("--out")) job.out_dir = o.out;
  if (cmd->count("--model")) job.model = serendip::parse_model_spec(o.model);
  if (cmd->count("--sim-model")) {
    job.sim_model = serendip::parse_model_spec(o.sim_model);
  }
  if (cmd->count("--burn-in")) job.burn_in = o.burn_in;
  if (cmd->count("--tau-s")) job.tau_s = o.tau_s;
  if (cmd->count("--tau-d")) job.tau_d = o.tau_d;
  if (cmd->count("--top-n")) job.top_n = o.top_n;
  if (cmd->count("--jobs")) job.jobs = o.jobs;
  if (cmd->count("--seed")) job.synth.seed = o.seed;
  if (cmd->get_option_no_throw("--queries") && cmd->count("--queries")) {
    job.queries_path = o.queries;
  }
  if (cmd->get_option_no_throw("--index-cache") &&
      cmd->count("--index-cache")) {
    job.index_cache_path = o.index_cache;
  }
  if (cmd->get_option_no_throw("--mode") && cmd->count("--mode")) {
    job.tune_mode = o.tune_mode;
  }
  if (cmd->get_option_no_throw("--synth-users")) {
    if (cmd->count("--synth-users")) job.synth.num_users = o.synth_users;
    if (cmd->count("--synth-topics")) job.synth.topic_dim = o.synth_topics;
    if (cmd->count("--synth-length")) {
      job.synth.history_length = o.synth_length;
    }
    if (cmd->count("--synth-regimes")) {
      job.synth.regimes_per_user = o.synth_regimes;
    }
    if (cmd->count("--synth-regime-topics")) {
      job.synth.regime_topic_count = o.synth_regime_topics;
    }
    if (cmd->count("--synth-noise")) job.synth.noise_sd = o.synth_noise;
    if (cmd->count("--synth-concentration")) {
      job.synth.topic_concentration = o.synth_concentration;
    }
  }
  return job;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Topic-level surprise and serendipity toolkit"};
  app.require_subcommand(1);

  Overrides o;

  CLI::App* run = app.add_subcommand(
      "run", "score every interaction of every user with one learner");
  add_common_options(run, o);

  CLI::App* recommend = app.add_subcommand(
      "recommend", "answer serendipity queries against the population");
  add_common_options(recommend, o);
  recommend->add_option("--queries", o.queries,
                        "TSV/CSV of user_id, step pairs to answer");
  recommend->add_option("--index-cache", o.index_cache,
                        "binary snapshot index cache path");

  CLI::App* eval_surprise = app.add_subcommand(
      "eval-surprise", "score surprise detection against the labels");
  add_common_options(eval_surprise, o);

  CLI::App* eval_serendipity = app.add_subcommand(
      "eval-serendipity", "score serendipity recommendation with labels");
  add_common_options(eval_serendipity, o);
  eval_serendipity->add_option("--index-cache", o.index_cache,
                               "binary snapshot index cache path");

  CLI::App* tune = app.add_subcommand(
      "tune", "leave-one-out hyperparameter selection");
  add_common_options(tune, o);
  tune->add_option("--mode", o.tune_mode, "surprise or serendipity");

  CLI::App* synth = app.add_subcommand(
      "synth", "generate a synthetic population with known change points");
  add_common_options(synth, o);
  synth->add_option("--synth-users", o.synth_users, "number of users");
  synth->add_option("--synth-topics", o.synth_topics, "topic dimension");
  synth->add_option("--synth-length", o.synth_length,
                    "interactions per user");
  synth->add_option("--synth-regimes", o.synth_regimes,
                    "preference regimes per user");
  synth->add_option("--synth-regime-topics", o.synth_regime_topics,
                    "topics per regime");
  synth->add_option("--synth-noise", o.synth_noise, "rating noise sd");
  synth->add_option("--synth-concentration", o.synth_concentration,
                    "Dirichlet concentration of item topics");

  CLI11_PARSE(app, argc, argv);

  CLI::App* selected = app.get_subcommands().front();
  try {
    serendip::JobConfig job = resolve(selected, o);
    return serendip::run_job(job, selected->get_name());
  } catch (const std::exception& e) {
    std::cerr << "serendip: error: " << e.what() << std::endl;
    return 1;
  }
}
