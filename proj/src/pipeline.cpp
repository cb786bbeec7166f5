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

#include "serendip/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

namespace serendip {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string format_double(double value) {
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), "%.17g", value);
  return buffer;
}

std::string format_short(double value) {
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), "%.10g", value);
  return buffer;
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t hash = 0xCBF29CE484222325ULL;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001B3ULL;
  }
  return hash;
}

void log_line(const std::string& message) {
  std::cerr << "[serendip] " << message << "\n";
}

json model_to_json(const ModelConfig& config) {
  json j;
  j["kind"] = to_string(config.kind);
  j["prior_variance"] = config.prior_variance;
  j["beta"] = config.beta;
  j["tau_v"] = config.tau_v;
  j["r1"] = config.r1;
  j["r2"] = config.r2;
  j["eta"] = config.eta;
  j["horizon_k"] = config.horizon_k;
  j["basic_envelope_source"] =
      config.basic_envelope_source == BasicEnvelopeSource::kItemTopics
          ? "item_topics"
          : "history_averages";
  return j;
}

ModelConfig model_from_json(const json& j) {
  ModelConfig config;
  static const std::set<std::string> known = {
      "kind", "prior_variance", "beta",      "tau_v",
      "r1",   "r2",             "eta",       "horizon_k",
      "basic_envelope_source"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!known.count(key)) {
      throw std::invalid_argument("unknown model key '" + key + "'");
    }
  }
  if (j.contains("kind")) {
    config.kind = model_kind_from_string(j.at("kind").get<std::string>());
  }
  bool beta_given = j.contains("beta");
  bool prior_given = j.contains("prior_variance");
  if (beta_given) config.beta = j.at("beta").get<double>();
  if (prior_given) {
    config.prior_variance = j.at("prior_variance").get<double>();
  } else if (beta_given) {
    // Single-knob default: prior variance tracks the observation precision.
    config.prior_variance = config.beta;
  }
  if (j.contains("tau_v")) config.tau_v = j.at("tau_v").get<double>();
  if (j.contains("r1")) config.r1 = j.at("r1").get<double>();
  if (j.contains("r2")) config.r2 = j.at("r2").get<double>();
  if (j.contains("eta")) config.eta = j.at("eta").get<double>();
  if (j.contains("horizon_k")) {
    config.horizon_k = j.at("horizon_k").get<int>();
  }
  if (j.contains("basic_envelope_source")) {
    std::string source = j.at("basic_envelope_source").get<std::string>();
    if (source == "item_topics") {
      config.basic_envelope_source = BasicEnvelopeSource::kItemTopics;
    } else if (source == "history_averages") {
      config.basic_envelope_source = BasicEnvelopeSource::kHistoryAverages;
    } else {
      throw std::invalid_argument("unknown envelope source '" + source + "'");
    }
  }
  return config;
}

json synth_to_json(const SynthConfig& config) {
  json j;
  j["seed"] = config.seed;
  j["num_users"] = config.num_users;
  j["topic_dim"] = config.topic_dim;
  j["history_length"] = config.history_length;
  j["regimes_per_user"] = config.regimes_per_user;
  j["regime_topic_count"] = config.regime_topic_count;
  j["noise_sd"] = config.noise_sd;
  j["topic_concentration"] = config.topic_concentration;
  return j;
}

SynthConfig synth_from_json(const json& j) {
  SynthConfig config;
  static const std::set<std::string> known = {
      "seed",           "num_users",         "topic_dim",
      "history_length", "regimes_per_user",  "regime_topic_count",
      "noise_sd",       "topic_concentration"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!known.count(key)) {
      throw std::invalid_argument("unknown synth key '" + key + "'");
    }
  }
  if (j.contains("seed")) config.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("num_users")) config.num_users = j.at("num_users").get<int>();
  if (j.contains("topic_dim")) config.topic_dim = j.at("topic_dim").get<int>();
  if (j.contains("history_length")) {
    config.history_length = j.at("history_length").get<int>();
  }
  if (j.contains("regimes_per_user")) {
    config.regimes_per_user = j.at("regimes_per_user").get<int>();
  }
  if (j.contains("regime_topic_count")) {
    config.regime_topic_count = j.at("regime_topic_count").get<int>();
  }
  if (j.contains("noise_sd")) config.noise_sd = j.at("noise_sd").get<double>();
  if (j.contains("topic_concentration")) {
    config.topic_concentration = j.at("topic_concentration").get<double>();
  }
  return config;
}

json job_to_json(const JobConfig& job) {
  json j;
  j["topics"] = job.topics_path;
  j["histories"] = job.histories_path;
  j["annotations"] = job.annotations_path;
  j["out"] = job.out_dir;
  j["queries"] = job.queries_path;
  j["index_cache"] = job.index_cache_path;
  j["model"] = model_to_json(job.model);
  if (job.sim_model) {
    j["sim_model"] = model_to_json(*job.sim_model);
  }
  j["burn_in"] = job.burn_in;
  j["tau_s"] = job.tau_s;
  j["tau_d"] = job.tau_d;
  j["top_n"] = job.top_n;
  j["jobs"] = job.jobs;
  j["tune_mode"] = job.tune_mode;
  j["synth"] = synth_to_json(job.synth);
  return j;
}

int effective_jobs(int jobs) {
  if (jobs > 0) return jobs;
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void ensure_out_dir(const std::string& out_dir) {
  if (out_dir.empty()) {
    throw std::invalid_argument("output directory is not set");
  }
  fs::create_directories(out_dir);
}

std::string out_path(const JobConfig& job, const std::string& name) {
  return (fs::path(job.out_dir) / name).string();
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write " + path);
  }
  return out;
}

void write_resolved_config(const JobConfig& job, const std::string& command) {
  json j = job_to_json(job);
  j["command"] = command;
  j["config_hash"] = job_config_hash(job);
  std::ofstream out = open_out(out_path(job, "resolved_config.json"));
  out << j.dump(2) << "\n";
}

Corpus load_job_corpus(const JobConfig& job, bool require_annotations) {
  if (job.topics_path.empty() || job.histories_path.empty()) {
    throw std::invalid_argument(
        "both --topics and --histories must be provided");
  }
  if (require_annotations && job.annotations_path.empty()) {
    throw std::invalid_argument("this command requires --annotations");
  }
  Corpus corpus = load_corpus(job.topics_path, job.histories_path,
                              job.annotations_path, job.burn_in);
  std::size_t interactions = 0;
  for (const auto& user : corpus.users) {
    interactions += user.interactions.size();
  }
  std::ostringstream msg;
  msg << "loaded " << corpus.items.size() << " items, " << corpus.users.size()
      << " users, " << interactions << " interactions, "
      << corpus.annotations.size() << " annotations (K=" << corpus.topic_dim
      << ")";
  log_line(msg.str());
  return corpus;
}

std::vector<std::string> annotated_user_ids(const Corpus& corpus) {
  std::set<std::string> ids;
  for (const auto& a : corpus.annotations) ids.insert(a.user_id);
  return {ids.begin(), ids.end()};
}

// ---------------------------------------------------------------------
// run

void write_runs_file(
    const JobConfig& job, const Corpus& corpus,
    const std::map<std::string, std::vector<StepOutcome>>& runs,
    const std::string& filename) {
  std::ofstream out = open_out(out_path(job, filename));
  out << "# config_hash=" << job_config_hash(job) << "\n";
  out << "user_id\tstep\titem_id\tstars\trating_centered\tpredicted_rating"
      << "\tsurprise\tserendipity\n";
  for (const auto& user : corpus.users) {
    auto it = runs.find(user.user_id);
    if (it == runs.end()) continue;
    const auto& run = it->second;
    for (std::size_t i = 0; i < run.size(); ++i) {
      const Interaction& interaction = user.interactions[i];
      out << user.user_id << "\t" << (i + 1) << "\t" << interaction.item_id
          << "\t" << interaction.stars << "\t"
          << format_double(center_rating(interaction.stars)) << "\t"
          << format_double(run[i].predicted_rating) << "\t"
          << format_double(run[i].surprise) << "\t"
          << format_double(run[i].serendipity) << "\n";
    }
  }
  if (!out) {
    throw std::runtime_error("write failed for " + filename);
  }
}

int command_run(const JobConfig& job) {
  ensure_out_dir(job.out_dir);
  Corpus corpus = load_job_corpus(job, false);

  auto start = Clock::now();
  auto runs =
      run_population(corpus.users, corpus.items, job.model, job.jobs);
  double elapsed = seconds_since(start);

  std::size_t interactions = 0;
  for (const auto& [id, run] : runs) interactions += run.size();
  std::ostringstream msg;
  msg << "model " << model_spec(job.model) << ": " << interactions
      << " interactions in " << format_short(elapsed) << " s ("
      << format_short(elapsed > 0 ? interactions / elapsed : 0.0)
      << " items/s)";
  log_line(msg.str());

  write_runs_file(job, corpus, runs, "runs.tsv");
  write_resolved_config(job, "run");
  return 0;
}

// ---------------------------------------------------------------------
// recommend / eval-serendipity shared plumbing

struct IndexedRuns {
  std::map<std::string, std::vector<StepOutcome>> surprise_runs;
  std::map<std::string, std::vector<StepOutcome>> sim_runs;  // may alias
  SnapshotIndex index;
  const std::map<std::string, std::vector<StepOutcome>>& sims() const {
    return sim_runs.empty() ? surprise_runs : sim_runs;
  }
};

std::string index_label(const JobConfig& job) {
  std::string label = "model=" + model_spec(job.model);
  if (job.sim_model) label += "|sim=" + model_spec(*job.sim_model);
  label += "|burn_in=" + std::to_string(job.burn_in);
  return label;
}

IndexedRuns prepare_index(const JobConfig& job, const Corpus& corpus) {
  IndexedRuns prepared;
  auto start = Clock::now();
  prepared.surprise_runs =
      run_population(corpus.users, corpus.items, job.model, job.jobs);
  if (job.sim_model) {
    prepared.sim_runs =
        run_population(corpus.users, corpus.items, *job.sim_model, job.jobs);
  }
  double run_elapsed = seconds_since(start);

  std::string label = index_label(job);
  bool loaded = false;
  if (!job.index_cache_path.empty() && fs::exists(job.index_cache_path)) {
    SnapshotIndex cached = load_index(job.index_cache_path);
    if (cached.config_label() == label &&
        cached.min_step() == std::max(1, job.burn_in)) {
      prepared.index = std::move(cached);
      loaded = true;
      log_line("index cache hit: " + job.index_cache_path);
    } else {
      log_line("index cache stale (config changed), rebuilding");
    }
  }
  if (!loaded) {
    auto build_start = Clock::now();
    prepared.index = build_index(corpus.users, prepared.sims(),
                                 prepared.surprise_runs, job.burn_in, label);
    double build_elapsed = seconds_since(build_start);
    std::ostringstream msg;
    msg << "built index with " << prepared.index.size() << " snapshots in "
        << format_short(build_elapsed) << " s (runs took "
        << format_short(run_elapsed) << " s)";
    log_line(msg.str());
    if (!job.index_cache_path.empty()) {
      save_index(job.index_cache_path, prepared.index);
      log_line("index cache written: " + job.index_cache_path);
    }
  }
  return prepared;
}

std::vector<std::pair<std::string, int>> load_queries(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path);
  }
  std::vector<std::pair<std::string, int>> queries;
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
      continue;
    }
    std::size_t cut = line.find(delim);
    if (cut == std::string::npos) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected user_id and step");
    }
    std::string user = line.substr(0, cut);
    int step = std::stoi(line.substr(cut + 1));
    queries.emplace_back(std::move(user), step);
  }
  return queries;
}

std::vector<std::pair<std::string, int>> default_queries(
    const JobConfig& job, const Corpus& corpus) {
  std::vector<std::string> users = annotated_user_ids(corpus);
  if (users.empty()) {
    for (const auto& user : corpus.users) users.push_back(user.user_id);
  }
  std::vector<std::pair<std::string, int>> queries;
  for (const auto& id : users) {
    const UserHistory* user = corpus.find_user(id);
    if (!user) continue;
    int len = static_cast<int>(user->interactions.size());
    for (int step = std::max(1, job.burn_in); step <= len - 1; ++step) {
      queries.emplace_back(id, step);
    }
  }
  return queries;
}

int command_recommend(const JobConfig& job) {
  ensure_out_dir(job.out_dir);
  Corpus corpus = load_job_corpus(job, false);
  IndexedRuns prepared = prepare_index(job, corpus);

  std::vector<std::pair<std::string, int>> queries =
      job.queries_path.empty() ? default_queries(job, corpus)
                               : load_queries(job.queries_path);

  std::ofstream out = open_out(out_path(job, "recommendations.tsv"));
  out << "# config_hash=" << job_config_hash(job) << "\n";
  out << "user_id\tstep\tmatch_user_id\tmatch_step\tmatch_item_id\tdistance"
      << "\tmatch_next_surprise\n";

  double total_latency = 0.0;
  double max_latency = 0.0;
  std::size_t found = 0;
  for (const auto& [user_id, step] : queries) {
    const auto& sims = prepared.sims();
    auto run_it = sims.find(user_id);
    if (run_it == sims.end()) {
      throw std::invalid_argument("query names unknown user '" + user_id +
                                  "'");
    }
    const auto& run = run_it->second;
    if (step < 1 || step > static_cast<int>(run.size())) {
      throw std::invalid_argument(
          "query step " + std::to_string(step) + " outside user '" + user_id +
          "' history of length " + std::to_string(run.size()));
    }
    const Vector& query = run[step - 1].state_after.preference();

    auto start = Clock::now();
    std::optional<SerendipityHit> hit =
        find_serendipity(prepared.index, user_id, query, job.tau_d,
                         job.top_n);
    double latency = seconds_since(start);
    total_latency += latency;
    max_latency = std::max(max_latency, latency);

    out << user_id << "\t" << step << "\t";
    if (hit) {
      ++found;
      out << hit->user_id << "\t" << hit->step << "\t" << hit->next_item_id
          << "\t" << format_double(hit->distance) << "\t"
          << format_double(hit->next_surprise) << "\n";
    } else {
      out << "null\t\t\t\t\n";
    }
  }
  if (!out) {
    throw std::runtime_error("write failed for recommendations.tsv");
  }

  std::ostringstream msg;
  msg << queries.size() << " queries, " << found << " matched; latency mean "
      << format_short(queries.empty() ? 0.0
                                      : total_latency / queries.size())
      << " s, max " << format_short(max_latency) << " s";
  log_line(msg.str());

  write_resolved_config(job, "recommend");
  return 0;
}

// ---------------------------------------------------------------------
// eval-surprise

int command_eval_surprise(const JobConfig& job) {
  ensure_out_dir(job.out_dir);
  Corpus corpus = load_job_corpus(job, true);
  std::vector<std::string> users = annotated_user_ids(corpus);
  if (users.empty()) {
    throw std::invalid_argument("annotations name no users");
  }

  std::vector<Metrics> per_user;
  for (const auto& id : users) {
    const UserHistory* user = corpus.find_user(id);
    auto run = run_history(job.model, *user, corpus.items);
    per_user.push_back(eval_surprise_detection(run, corpus.annotations_for(id),
                                               job.tau_s));
  }

  std::string label =
      model_spec(job.model) + ",tau_s=" + format_short(job.tau_s);
  std::string header = format_metrics_header(users);
  std::string row = format_metrics_row(label, per_user);

  std::ofstream out = open_out(out_path(job, "metrics_surprise.tsv"));
  out << "# config_hash=" << job_config_hash(job) << "\n";
  out << header << "\n" << row << "\n";
  std::cout << header << "\n" << row << "\n";

  write_resolved_config(job, "eval-surprise");
  return 0;
}

// ---------------------------------------------------------------------
// eval-serendipity

int command_eval_serendipity(const JobConfig& job) {
  ensure_out_dir(job.out_dir);
  Corpus corpus = load_job_corpus(job, true);
  std::vector<std::string> users = annotated_user_ids(corpus);
  if (users.empty()) {
    throw std::invalid_argument("annotations name no users");
  }
  IndexedRuns prepared = prepare_index(job, corpus);

  std::vector<Metrics> per_user;
  for (const auto& id : users) {
    const UserHistory* user = corpus.find_user(id);
    const auto& sims = prepared.sims();
    per_user.push_back(eval_serendipity(
        *user, sims.at(id), prepared.index, corpus.annotations_for(id),
        job.tau_s, job.tau_d, job.top_n, job.burn_in));
  }

  std::string label = index_label(job) + ",tau_s=" + format_short(job.tau_s) +
                      ",tau_d=" + format_short(job.tau_d) +
                      ",N=" + std::to_string(job.top_n);
  std::string header = format_metrics_header(users);
  std::string row = format_metrics_row(label, per_user);

  std::ofstream out = open_out(out_path(job, "metrics_serendipity.tsv"));
  out << "# config_hash=" << job_config_hash(job) << "\n";
  out << header << "\n" << row << "\n";
  std::cout << header << "\n" << row << "\n";

  write_resolved_config(job, "eval-serendipity");
  return 0;
}

// ---------------------------------------------------------------------
// tune

struct SerendipityGridPoint {
  std::size_t combo = 0;
  double tau_s = 0.0;
  double tau_d = 0.0;
  int top_n = 0;
};

// find_serendipity over precomputed top-maxN hits: taking the first
// min(N, maxN) hits of the ordered list equals querying with n=N directly,
// because hits are ordered by (distance, row).
std::optional<std::pair<std::size_t, double>> best_from_hits(
    const SnapshotIndex& index, const std::vector<QueryHit>& hits,
    double tau_d, int top_n) {
  bool found = false;
  std::size_t best_row = 0;
  double best_surprise = 0.0;
  int considered = 0;
  for (const QueryHit& hit : hits) {
    if (considered++ >= top_n) break;
    if (!(hit.distance < tau_d)) continue;
    if (!(index.next_rating_centered(hit.row) > 0.0)) continue;
    double surprise = index.next_surprise(hit.row);
    if (!found || surprise > best_surprise ||
        (surprise == best_surprise && hit.row < best_row)) {
      found = true;
      best_row = hit.row;
      best_surprise = surprise;
    }
  }
  if (!found) return std::nullopt;
  return std::make_pair(best_row, best_surprise);
}

int command_tune(const JobConfig& job) {
  ensure_out_dir(job.out_dir);
  Corpus corpus = load_job_corpus(job, true);
  std::vector<std::string> users = annotated_user_ids(corpus);
  if (users.size() < 2) {
    throw std::invalid_argument(
        "leave-one-out tuning needs at least two annotated users");
  }

  std::vector<ModelConfig> combos = default_model_grid(job.model);
  std::ofstream out = open_out(out_path(job, "tuning.tsv"));
  out << "# config_hash=" << job_config_hash(job) << "\n";
  out << "user_id\tconfig\ttau_s\ttau_d\ttop_n\ttrain_avg_f1\tprecision"
      << "\trecall\tf1\n";

  TuningResult result;
  std::vector<std::string> grid_labels;
  std::vector<double> grid_tau_s;
  std::vector<double> grid_tau_d;
  std::vector<int> grid_top_n;

  if (job.tune_mode == "surprise") {
    // Per-combo runs for the reference users only.
    std::vector<std::map<std::string, std::vector<StepOutcome>>> runs;
    runs.reserve(combos.size());
    for (const auto& combo : combos) {
      std::map<std::string, std::vector<StepOutcome>> combo_runs;
      for (const auto& id : users) {
        combo_runs[id] =
            run_history(combo, *corpus.find_user(id), corpus.items);
      }
      runs.push_back(std::move(combo_runs));
    }

    // Grid: every combo crossed with deciles of its own surprise values.
    struct Point {
      std::size_t combo;
      double tau_s;
    };
    std::vector<Point> points;
    for (std::size_t c = 0; c < combos.size(); ++c) {
      std::vector<double> pooled;
      for (const auto& id : users) {
        const auto& run = runs[c].at(id);
        for (const auto& a : corpus.annotations_for(id)) {
          pooled.push_back(run[a.position - 1].surprise);
        }
      }
      for (double tau_s : decile_grid(std::move(pooled), job.tau_s)) {
        points.push_back(Point{c, tau_s});
      }
    }

    std::vector<std::vector<Metrics>> table(points.size());
    for (std::size_t g = 0; g < points.size(); ++g) {
      table[g].reserve(users.size());
      for (const auto& id : users) {
        table[g].push_back(eval_surprise_detection(
            runs[points[g].combo].at(id), corpus.annotations_for(id),
            points[g].tau_s));
      }
    }

    auto user_pos = [&](const std::string& id) {
      return std::find(users.begin(), users.end(), id) - users.begin();
    };
    result = tune_leave_one_out(
        points.size(), users,
        [&](std::size_t g, const std::string& id) -> Metrics {
          return table[g][user_pos(id)];
        });
    for (const auto& point : points) {
      grid_labels.push_back(model_spec(combos[point.combo]));
      grid_tau_s.push_back(point.tau_s);
      grid_tau_d.push_back(0.0);
      grid_top_n.push_back(0);
    }
  } else if (job.tune_mode == "serendipity") {
    const std::vector<int> top_n_grid = {10, 50, 100};
    const int max_n = *std::max_element(top_n_grid.begin(), top_n_grid.end());

    std::vector<SerendipityGridPoint> points;
    std::vector<std::vector<Metrics>> table;
    std::vector<std::string> point_labels;

    // One query per (reference user, labeled successor step), cached with
    // its top-max_n hits so every threshold combination reuses the scan.
    struct CachedQuery {
      bool truth = false;
      std::vector<QueryHit> hits;
    };

    for (std::size_t c = 0; c < combos.size(); ++c) {
      JobConfig combo_job = job;
      combo_job.model = combos[c];
      combo_job.index_cache_path.clear();  // per-combo indexes stay in memory
      IndexedRuns prepared = prepare_index(combo_job, corpus);
      const SnapshotIndex& index = prepared.index;

      std::vector<double> pooled_surprise;
      pooled_surprise.reserve(index.size());
      for (std::size_t row = 0; row < index.size(); ++row) {
        pooled_surprise.push_back(index.next_surprise(row));
      }

      std::vector<double> pooled_distance;
      std::vector<std::vector<CachedQuery>> queries(users.size());
      for (std::size_t u = 0; u < users.size(); ++u) {
        const UserHistory* user = corpus.find_user(users[u]);
        const auto& sim_run = prepared.sims().at(users[u]);
        auto annotations = corpus.annotations_for(users[u]);
        int len = static_cast<int>(user->interactions.size());
        for (int i = std::max(1, job.burn_in); i <= len - 1; ++i) {
          const SurpriseAnnotation* label = nullptr;
          for (const auto& a : annotations) {
            if (a.position == i + 1) {
              label = &a;
              break;
            }
          }
          if (!label) continue;
          CachedQuery cached;
          cached.truth = label->surprising &&
                         center_rating(user->interactions[i].stars) > 0.0;
          cached.hits = query_top_n(
              index, sim_run[i - 1].state_after.preference(), max_n,
              users[u]);
          for (const auto& hit : cached.hits) {
            pooled_distance.push_back(hit.distance);
          }
          queries[u].push_back(std::move(cached));
        }
      }

      for (double tau_s : decile_grid(pooled_surprise, job.tau_s)) {
        for (double tau_d : decile_grid(pooled_distance, job.tau_d)) {
          if (!(tau_d > 0.0)) continue;
          for (int top_n : top_n_grid) {
            std::vector<Metrics> per_user;
            per_user.reserve(users.size());
            for (std::size_t u = 0; u < users.size(); ++u) {
              ConfusionCounts counts;
              for (const auto& cached : queries[u]) {
                auto best = best_from_hits(index, cached.hits, tau_d, top_n);
                if (!best) continue;
                bool predicted = best->second > tau_s;
                if (predicted && cached.truth) ++counts.tp;
                if (predicted && !cached.truth) ++counts.fp;
                if (!predicted && cached.truth) ++counts.fn;
                if (!predicted && !cached.truth) ++counts.tn;
              }
              per_user.push_back(metrics_from_counts(counts));
            }
            points.push_back(SerendipityGridPoint{c, tau_s, tau_d, top_n});
            point_labels.push_back(model_spec(combos[c]));
            table.push_back(std::move(per_user));
          }
        }
      }
    }
    if (points.empty()) {
      throw std::invalid_argument(
          "serendipity tuning produced an empty grid (no labeled steps?)");
    }

    auto user_pos = [&](const std::string& id) {
      return std::find(users.begin(), users.end(), id) - users.begin();
    };
    result = tune_leave_one_out(
        points.size(), users,
        [&](std::size_t g, const std::string& id) -> Metrics {
          return table[g][user_pos(id)];
        });
    for (std::size_t g = 0; g < points.size(); ++g) {
      grid_labels.push_back(point_labels[g]);
      grid_tau_s.push_back(points[g].tau_s);
      grid_tau_d.push_back(points[g].tau_d);
      grid_top_n.push_back(points[g].top_n);
    }
  } else {
    throw std::invalid_argument("tune_mode must be 'surprise' or "
                                "'serendipity', got '" +
                                job.tune_mode + "'");
  }

  for (const auto& selection : result.per_user) {
    out << selection.user_id << "\t" << grid_labels[selection.grid_index]
        << "\t" << format_short(grid_tau_s[selection.grid_index]) << "\t"
        << format_short(grid_tau_d[selection.grid_index]) << "\t"
        << grid_top_n[selection.grid_index] << "\t"
        << format_short(100.0 * selection.train_avg_f1) << "\t"
        << format_short(100.0 * selection.heldout.precision) << "\t"
        << format_short(100.0 * selection.heldout.recall) << "\t"
        << format_short(100.0 * selection.heldout.f1) << "\n";
  }
  out << "# average_f1=" << format_short(100.0 * result.average_f1) << "\n";
  std::ostringstream msg;
  msg << "tuned " << result.per_user.size() << " users, average F1 "
      << format_short(100.0 * result.average_f1) << "%";
  log_line(msg.str());

  write_resolved_config(job, "tune");
  return 0;
}

// ---------------------------------------------------------------------
// synth

int command_synth(const JobConfig& job) {
  ensure_out_dir(job.out_dir);
  SynthPopulation population = generate_population(job.synth);
  std::string comment = "config_hash=" + job_config_hash(job);
  write_population(population, out_path(job, "topics.tsv"),
                   out_path(job, "histories.tsv"),
                   out_path(job, "annotations.tsv"), job.burn_in, '\t',
                   comment);

  std::size_t labels = 0;
  for (const auto& changes : population.change_points) {
    labels += changes.positions.size();
  }
  std::ostringstream msg;
  msg << "generated " << population.corpus.users.size() << " users, "
      << population.corpus.items.size() << " items, " << labels
      << " change points";
  log_line(msg.str());

  write_resolved_config(job, "synth");
  return 0;
}

}  // namespace

JobConfig load_job_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path);
  }
  json j = json::parse(in, nullptr, true, true);  // allow comments

  JobConfig job;
  static const std::set<std::string> known = {
      "topics", "histories", "annotations", "out",       "queries",
      "index_cache", "model", "sim_model",  "burn_in",   "tau_s",
      "tau_d",  "top_n",     "jobs",        "tune_mode", "synth"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!known.count(key)) {
      throw std::invalid_argument(path + ": unknown key '" + key + "'");
    }
  }
  if (j.contains("topics")) job.topics_path = j.at("topics");
  if (j.contains("histories")) job.histories_path = j.at("histories");
  if (j.contains("annotations")) job.annotations_path = j.at("annotations");
  if (j.contains("out")) job.out_dir = j.at("out");
  if (j.contains("queries")) job.queries_path = j.at("queries");
  if (j.contains("index_cache")) job.index_cache_path = j.at("index_cache");
  if (j.contains("model")) job.model = model_from_json(j.at("model"));
  if (j.contains("sim_model")) {
    job.sim_model = model_from_json(j.at("sim_model"));
  }
  if (j.contains("burn_in")) job.burn_in = j.at("burn_in").get<int>();
  if (j.contains("tau_s")) job.tau_s = j.at("tau_s").get<double>();
  if (j.contains("tau_d")) job.tau_d = j.at("tau_d").get<double>();
  if (j.contains("top_n")) job.top_n = j.at("top_n").get<int>();
  if (j.contains("jobs")) job.jobs = j.at("jobs").get<int>();
  if (j.contains("tune_mode")) job.tune_mode = j.at("tune_mode");
  if (j.contains("synth")) job.synth = synth_from_json(j.at("synth"));
  return job;
}

std::string job_config_json(const JobConfig& job) {
  return job_to_json(job).dump();
}

std::string job_config_hash(const JobConfig& job) {
  char buffer[24];
  std::snprintf(buffer, sizeof(buffer), "%016llx",
                static_cast<unsigned long long>(fnv1a(job_config_json(job))));
  return buffer;
}

ModelConfig parse_model_spec(const std::string& spec) {
  std::string kind_part = spec;
  std::string params_part;
  std::size_t colon = spec.find(':');
  if (colon != std::string::npos) {
    kind_part = spec.substr(0, colon);
    params_part = spec.substr(colon + 1);
  }

  ModelConfig config;
  config.kind = model_kind_from_string(kind_part);

  bool beta_given = false;
  bool prior_given = false;
  std::size_t start = 0;
  while (start < params_part.size()) {
    std::size_t end = params_part.find(',', start);
    if (end == std::string::npos) end = params_part.size();
    std::string pair = params_part.substr(start, end - start);
    start = end + 1;
    if (pair.empty()) continue;

    std::size_t eq = pair.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("malformed model parameter '" + pair +
                                  "' (expected key=value)");
    }
    std::string key = pair.substr(0, eq);
    std::string value = pair.substr(eq + 1);
    auto as_double = [&]() {
      try {
        std::size_t used = 0;
        double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
      } catch (const std::exception&) {
        throw std::invalid_argument("model parameter '" + key +
                                    "' has non-numeric value '" + value + "'");
      }
    };

    if (key == "beta") {
      config.beta = as_double();
      beta_given = true;
    } else if (key == "prior_variance" || key == "prior") {
      config.prior_variance = as_double();
      prior_given = true;
    } else if (key == "tau_v") {
      config.tau_v = as_double();
    } else if (key == "r1") {
      config.r1 = as_double();
    } else if (key == "r2") {
      config.r2 = as_double();
    } else if (key == "eta") {
      config.eta = as_double();
    } else if (key == "k" || key == "horizon_k") {
      config.horizon_k = static_cast<int>(as_double());
    } else if (key == "envelope") {
      if (value == "item_topics") {
        config.basic_envelope_source = BasicEnvelopeSource::kItemTopics;
      } else if (value == "history_averages") {
        config.basic_envelope_source = BasicEnvelopeSource::kHistoryAverages;
      } else {
        throw std::invalid_argument("unknown envelope source '" + value +
                                    "'");
      }
    } else {
      throw std::invalid_argument("unknown model parameter '" + key + "'");
    }
  }
  if (beta_given && !prior_given) {
    config.prior_variance = config.beta;
  }
  return config;
}

std::string model_spec(const ModelConfig& config) {
  std::ostringstream out;
  out << to_string(config.kind);
  switch (config.kind) {
    case ModelKind::kBlr:
      out << ":beta=" << format_short(config.beta)
          << ",prior_variance=" << format_short(config.prior_variance);
      break;
    case ModelKind::kVbBlr:
      out << ":beta=" << format_short(config.beta)
          << ",prior_variance=" << format_short(config.prior_variance)
          << ",tau_v=" << format_short(config.tau_v);
      break;
    case ModelKind::kArow:
      out << ":r1=" << format_short(config.r1)
          << ",r2=" << format_short(config.r2);
      break;
    case ModelKind::kNlms:
      out << ":eta=" << format_short(config.eta)
          << ",k=" << config.horizon_k;
      break;
    case ModelKind::kBasic:
      if (config.basic_envelope_source ==
          BasicEnvelopeSource::kHistoryAverages) {
        out << ":envelope=history_averages";
      }
      break;
  }
  return out.str();
}

std::map<std::string, std::vector<StepOutcome>> run_population(
    const std::vector<UserHistory>& users, const ItemMap& items,
    const ModelConfig& config, int jobs) {
  int workers = std::min<int>(effective_jobs(jobs),
                              std::max<std::size_t>(users.size(), 1));
  std::vector<std::vector<StepOutcome>> slots(users.size());
  std::vector<std::thread> threads;
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;

  auto work = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= users.size()) return;
      try {
        slots[i] = run_history(config, users[i], items);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  if (workers <= 1) {
    work();
  } else {
    threads.reserve(workers);
    for (int w = 0; w < workers; ++w) threads.emplace_back(work);
    for (auto& thread : threads) thread.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  std::map<std::string, std::vector<StepOutcome>> runs;
  for (std::size_t i = 0; i < users.size(); ++i) {
    runs.emplace(users[i].user_id, std::move(slots[i]));
  }
  return runs;
}

std::vector<ModelConfig> default_model_grid(const ModelConfig& base) {
  const std::vector<double> scale = {0.1, 0.5, 1.0, 2.0};
  const std::vector<double> tau_v_grid = {0.01, 0.05, 0.1, 0.5};
  const std::vector<double> regularizers = {0.5, 1.0, 2.0, 4.0};
  const std::vector<double> eta_grid = {0.05, 0.1, 0.2, 0.5};
  const std::vector<int> horizon_grid = {1, 2, 4};

  std::vector<ModelConfig> grid;
  switch (base.kind) {
    case ModelKind::kBlr:
      for (double beta : scale) {
        for (double prior : scale) {
          ModelConfig config = base;
          config.beta = beta;
          config.prior_variance = prior;
          grid.push_back(config);
        }
      }
      break;
    case ModelKind::kVbBlr:
      for (double beta : scale) {
        for (double prior : scale) {
          for (double tau_v : tau_v_grid) {
            ModelConfig config = base;
            config.beta = beta;
            config.prior_variance = prior;
            config.tau_v = tau_v;
            grid.push_back(config);
          }
        }
      }
      break;
    case ModelKind::kArow:
      for (double r1 : regularizers) {
        for (double r2 : regularizers) {
          ModelConfig config = base;
          config.r1 = r1;
          config.r2 = r2;
          grid.push_back(config);
        }
      }
      break;
    case ModelKind::kNlms:
      for (double eta : eta_grid) {
        for (int horizon : horizon_grid) {
          ModelConfig config = base;
          config.eta = eta;
          config.horizon_k = horizon;
          grid.push_back(config);
        }
      }
      break;
    case ModelKind::kBasic:
      grid.push_back(base);
      break;
  }
  return grid;
}

std::vector<double> decile_grid(std::vector<double> values, double fallback) {
  if (values.empty()) return {fallback};
  std::sort(values.begin(), values.end());
  std::vector<double> grid;
  for (int q = 1; q <= 9; ++q) {
    // Nearest-rank decile over the sorted sample.
    std::size_t idx =
        (static_cast<std::size_t>(q) * (values.size() - 1) + 5) / 10;
    double v = values[idx];
    if (grid.empty() || v != grid.back()) grid.push_back(v);
  }
  return grid;
}

int run_job(const JobConfig& job, const std::string& command) {
  if (command == "run") return command_run(job);
  if (command == "recommend") return command_recommend(job);
  if (command == "eval-surprise") return command_eval_surprise(job);
  if (command == "eval-serendipity") return command_eval_serendipity(job);
  if (command == "tune") return command_tune(job);
  if (command == "synth") return command_synth(job);
  throw std::invalid_argument("unknown command '" + command + "'");
}

}  // namespace serendip
