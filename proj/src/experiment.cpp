// Copyright 2026 The ICL Engine Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "icl/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "icl/binary_io.hpp"
#include "icl/errors.hpp"

namespace icl {

using nlohmann::json;

namespace {

/// Typed view of one JSON object that reports errors by dotted path and
/// rejects keys nobody asked for.
class Section {
 public:
  Section(const json* j, std::string path) : j_(j), path_(std::move(path)) {
    if (j_ && !j_->is_object()) fail("", "must be an object");
  }
  bool has(const std::string& key) {
    seen_.insert(key);
    return j_ && j_->contains(key) && !(*j_)[key].is_null();
  }

  Section child(const std::string& key) {
    return Section(has(key) ? &(*j_)[key] : nullptr, field(key));
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const auto& v = (*j_)[key];
    if (!v.is_number()) fail(key, "must be a number");
    return v.get<double>();
  }

  std::uint64_t count(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) return fallback;
    const auto& v = (*j_)[key];
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
      fail(key, "must be a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }

  bool flag(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const auto& v = (*j_)[key];
    if (!v.is_boolean()) fail(key, "must be true or false");
    return v.get<bool>();
  }

  std::string text(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const auto& v = (*j_)[key];
    if (!v.is_string()) fail(key, "must be a string");
    return v.get<std::string>();
  }

  std::string choice(const std::string& key, const std::string& fallback,
                     const std::vector<std::string>& allowed) {
    auto v = text(key, fallback);
    if (std::find(allowed.begin(), allowed.end(), v) == allowed.end()) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : "|") + a;
      fail(key, "must be one of " + list + ", got '" + v + "'");
    }
    return v;
  }

  bool present() const { return j_ != nullptr; }

  /// Raises on keys that were never queried.
  void finish() const {
    if (!j_) return;
    for (const auto& [k, v] : j_->items()) {
      if (!seen_.contains(k)) fail(k, "unknown field");
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& why) const {
    throw Error(ErrorKind::ConfigError, field(key) + ": " + why);
  }

  std::string field(const std::string& key) const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const json* j_;
  std::string path_;
  std::set<std::string> seen_;
};

void parse_dims(Section s, InteractorDims& d) {
  d.tokens = s.count("tokens", d.tokens);
  d.model_dim = s.count("model_dim", d.model_dim);
  d.heads = s.count("heads", d.heads);
  d.task_dim = s.count("task_dim", d.task_dim);
  s.finish();
  try {
    d.validate();
  } catch (const Error& e) {
    s.fail("", e.what());
  }
}

void parse_vmf(Section s, VmfConfig& v) {
  v.kappa = s.number("kappa", v.kappa);
  v.delta = s.number("delta", v.delta);
  v.lambda = s.number("lambda", v.lambda);
  s.finish();
  if (!(v.kappa > 0.0)) s.fail("kappa", "must be > 0");
  if (!(v.delta >= 0.0)) s.fail("delta", "must be >= 0");
  if (!(v.lambda >= 0.0)) s.fail("lambda", "must be >= 0");
}

void parse_train(Section s, TrainConfig& t, RunMode* mode) {
  t.batch_size = s.count("batch_size", t.batch_size);
  t.epochs = s.count("epochs", t.epochs);
  t.lr = s.number("lr", t.lr);
  t.beta1 = s.number("beta1", t.beta1);
  t.beta2 = s.number("beta2", t.beta2);
  t.eps = s.number("eps", t.eps);
  if (s.has("em_batches")) t.em_batches = s.count("em_batches", 0);
  t.buffer_capacity = s.count("buffer_capacity", t.buffer_capacity);
  t.rehearsal = s.flag("rehearsal", t.rehearsal);
  t.freeze = s.flag("freeze", t.freeze);
  t.scope = s.choice("scope", t.scope == CandidateScope::Batch ? "batch" : "registered",
                     {"batch", "registered"}) == "batch"
                ? CandidateScope::Batch
                : CandidateScope::Registered;
  t.update = s.choice("update", t.update == UpdateRule::Alternating ? "em" : "simultaneous",
                      {"em", "simultaneous"}) == "em"
                 ? UpdateRule::Alternating
                 : UpdateRule::Simultaneous;
  if (mode) {
    const auto m = s.choice("mode", std::string(to_string(*mode)), {"engine", "naive", "joint"});
    *mode = m == "engine" ? RunMode::Engine : m == "naive" ? RunMode::Naive : RunMode::Joint;
  }
  s.finish();
  if (t.batch_size < 1) s.fail("batch_size", "must be >= 1");
  if (t.epochs < 1) s.fail("epochs", "must be >= 1");
  if (!(t.lr > 0.0)) s.fail("lr", "must be > 0");
  if (!(t.beta1 >= 0.0 && t.beta1 < 1.0)) s.fail("beta1", "must be in [0,1)");
  if (!(t.beta2 >= 0.0 && t.beta2 < 1.0)) s.fail("beta2", "must be in [0,1)");
  if (!(t.eps > 0.0)) s.fail("eps", "must be > 0");
}

json dims_json(const InteractorDims& d) {
  return {{"tokens", d.tokens}, {"model_dim", d.model_dim}, {"heads", d.heads}, {"task_dim", d.task_dim}};
}

json vmf_json(const VmfConfig& v) { return {{"kappa", v.kappa}, {"delta", v.delta}, {"lambda", v.lambda}}; }

json train_json(const TrainConfig& t) {
  json j{{"batch_size", t.batch_size},
         {"epochs", t.epochs},
         {"lr", t.lr},
         {"beta1", t.beta1},
         {"beta2", t.beta2},
         {"eps", t.eps},
         {"buffer_capacity", t.buffer_capacity},
         {"rehearsal", t.rehearsal},
         {"freeze", t.freeze},
         {"scope", t.scope == CandidateScope::Batch ? "batch" : "registered"},
         {"update", t.update == UpdateRule::Alternating ? "em" : "simultaneous"}};
  j["em_batches"] = t.em_batches ? json(*t.em_batches) : json(nullptr);
  return j;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::vector<Label> shard_classes(const EmbeddingShard& s) {
  std::set<Label> set;
  for (const auto& x : s.samples) set.insert(x.label);
  return {set.begin(), set.end()};
}

}  // namespace

std::string_view to_string(RunMode m) {
  switch (m) {
    case RunMode::Engine: return "engine";
    case RunMode::Naive: return "naive";
    case RunMode::Joint: return "joint";
  }
  return "engine";
}

EngineConfig ExperimentConfig::engine_config() const {
  EngineConfig e;
  e.dims = dims;
  e.vmf = vmf;
  e.train = train;
  e.init_seed = init_seed;
  if (mode == RunMode::Naive) {
    e.train.rehearsal = false;
    e.train.freeze = false;
    e.train.scope = CandidateScope::Registered;
  }
  return e;
}

void ExperimentConfig::validate() const {
  dims.validate();
  vmf.validate();
  train.validate();
  if (!data.synthetic && !data.manifest) {
    throw Error(ErrorKind::ConfigError, "data: needs either 'synthetic' or 'manifest'");
  }
  if (eval.batch_size < 1) throw Error(ErrorKind::ConfigError, "eval.batch_size: must be >= 1");
  if (client.k < 1) throw Error(ErrorKind::ConfigError, "client.k: must be >= 1");
}

ExperimentConfig parse_config(const json& doc, const std::filesystem::path& base_dir) {
  ExperimentConfig cfg;
  Section root(&doc, "");
  parse_dims(root.child("dims"), cfg.dims);
  parse_vmf(root.child("vmf"), cfg.vmf);
  parse_train(root.child("train"), cfg.train, &cfg.mode);

  {
    Section s = root.child("odi");
    cfg.odi.alpha = s.number("alpha", cfg.odi.alpha);
    cfg.odi.min_batch = s.count("min_batch", cfg.odi.min_batch);
    cfg.odi.sigma_floor = s.number("sigma_floor", cfg.odi.sigma_floor);
    s.finish();
  }
  {
    Section s = root.child("client");
    auto& c = cfg.client;
    c.kind = s.choice("kind", c.kind, {"none", "mock", "scripted", "http"});
    c.reliability = s.number("reliability", c.reliability);
    c.k = s.count("k", c.k);
    if (s.has("transcript")) c.transcript = base_dir / s.text("transcript", "");
    c.url = s.text("url", c.url);
    c.timeout_ms = static_cast<std::int64_t>(s.count("timeout_ms", static_cast<std::uint64_t>(c.timeout_ms)));
    c.parallelism = s.count("parallelism", c.parallelism);
    s.finish();
    if (!(c.reliability >= 0.0 && c.reliability <= 1.0)) s.fail("reliability", "must be in [0,1]");
    if (c.k < 1) s.fail("k", "must be >= 1");
    if (c.timeout_ms <= 0) s.fail("timeout_ms", "must be > 0");
    if (c.parallelism < 1) s.fail("parallelism", "must be >= 1");
    if (c.kind == "scripted" && c.transcript.empty()) s.fail("transcript", "required for kind=scripted");
    if (c.kind == "http" && c.url.empty()) s.fail("url", "required for kind=http");
  }
  Section seeds = root.child("seeds");
  {
    Section s = root.child("data");
    if (s.has("manifest")) cfg.data.manifest = base_dir / s.text("manifest", "");
    Section syn = s.child("synthetic");
    if (syn.present()) {
      SyntheticSpec spec;
      spec.classes = syn.count("classes", spec.classes);
      spec.tasks = syn.count("tasks", spec.tasks);
      spec.n_per_class = syn.count("n_per_class", spec.n_per_class);
      spec.n_test_per_class = syn.count("n_test_per_class", spec.n_test_per_class);
      spec.kappa_data = syn.number("kappa_data", spec.kappa_data);
      syn.finish();
      if (spec.classes == 0) syn.fail("classes", "must be >= 1");
      if (spec.tasks == 0) syn.fail("tasks", "must be >= 1");
      if (spec.classes % spec.tasks != 0) syn.fail("classes", "must be divisible by tasks");
      if (!(spec.kappa_data > 0.0)) syn.fail("kappa_data", "must be > 0");
      spec.tokens = cfg.dims.tokens;
      spec.model_dim = cfg.dims.model_dim;
      cfg.data.synthetic = spec;
    }
    s.finish();
    if (cfg.data.synthetic && cfg.data.manifest) s.fail("", "set only one of 'synthetic' and 'manifest'");
    if (!cfg.data.synthetic && !cfg.data.manifest) s.fail("", "needs either 'synthetic' or 'manifest'");
  }
  {
    Section s = root.child("eval");
    cfg.eval.batch_size = s.count("batch_size", cfg.eval.batch_size);
    cfg.eval.task_il = s.flag("task_il", cfg.eval.task_il);
    s.finish();
    if (cfg.eval.batch_size < 1) s.fail("batch_size", "must be >= 1");
  }
  {
    cfg.init_seed = seeds.count("init", cfg.init_seed);
    cfg.train.seed = seeds.count("train", cfg.train.seed);
    cfg.client_seed = seeds.count("client", cfg.client_seed);
    const auto data_seed = seeds.count("data", 0);
    if (cfg.data.synthetic) cfg.data.synthetic->seed = data_seed;
    seeds.finish();
  }
  root.finish();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::ConfigError, "cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ConfigError, path.string() + ": " + e.what());
  }
  return parse_config(doc, path.parent_path());
}

json to_json(const ExperimentConfig& cfg) {
  json j;
  j["dims"] = dims_json(cfg.dims);
  j["vmf"] = vmf_json(cfg.vmf);
  j["train"] = train_json(cfg.train);
  j["train"]["mode"] = std::string(to_string(cfg.mode));
  j["odi"] = {{"alpha", cfg.odi.alpha}, {"min_batch", cfg.odi.min_batch}, {"sigma_floor", cfg.odi.sigma_floor}};
  j["client"] = {{"kind", cfg.client.kind},
                 {"reliability", cfg.client.reliability},
                 {"k", cfg.client.k},
                 {"timeout_ms", cfg.client.timeout_ms},
                 {"parallelism", cfg.client.parallelism}};
  if (!cfg.client.transcript.empty()) j["client"]["transcript"] = cfg.client.transcript.string();
  if (!cfg.client.url.empty()) j["client"]["url"] = cfg.client.url;
  j["data"] = json::object();
  if (cfg.data.manifest) j["data"]["manifest"] = cfg.data.manifest->string();
  std::uint64_t data_seed = 0;
  if (cfg.data.synthetic) {
    const auto& s = *cfg.data.synthetic;
    j["data"]["synthetic"] = {{"classes", s.classes},
                              {"tasks", s.tasks},
                              {"n_per_class", s.n_per_class},
                              {"n_test_per_class", s.n_test_per_class},
                              {"kappa_data", s.kappa_data}};
    data_seed = s.seed;
  }
  j["eval"] = {{"batch_size", cfg.eval.batch_size}, {"task_il", cfg.eval.task_il}};
  j["seeds"] = {{"init", cfg.init_seed}, {"train", cfg.train.seed}, {"data", data_seed}, {"client", cfg.client_seed}};
  return j;
}

Dataset Dataset::from_synthetic(SyntheticData data) {
  return {std::move(data.train), std::move(data.test), std::move(data.names)};
}

Dataset load_dataset(const ExperimentConfig& cfg) {
  if (cfg.data.synthetic) return Dataset::from_synthetic(gen_synthetic(*cfg.data.synthetic));
  if (!cfg.data.manifest) throw Error(ErrorKind::ConfigError, "data: no source configured");
  const auto m = load_manifest(*cfg.data.manifest);
  const auto dir = cfg.data.manifest->parent_path();
  Dataset d;
  d.train = load_shards(dir, m.train);
  d.test = load_shards(dir, m.test);
  d.names = m.labels;
  for (const auto* list : {&d.train, &d.test}) {
    for (const auto& s : *list) {
      if (s.tokens != cfg.dims.tokens || s.model_dim != cfg.dims.model_dim) {
        throw Error(ErrorKind::FormatError, "shard for task " + std::to_string(s.task_id) + " holds " +
                                                std::to_string(s.tokens) + "x" + std::to_string(s.model_dim) +
                                                " tokens, config expects " + std::to_string(cfg.dims.tokens) +
                                                "x" + std::to_string(cfg.dims.model_dim));
      }
    }
  }
  return d;
}

std::map<std::uint64_t, std::string> truth_table(const Dataset& data) {
  std::map<std::uint64_t, std::string> truth;
  for (const auto& s : data.test) {
    for (const auto& x : s.samples) {
      auto it = data.names.find(x.label);
      truth[x.id] = it != data.names.end() ? it->second : default_class_name(x.label);
    }
  }
  return truth;
}

std::unique_ptr<System2Backend> make_backend(const ClientConfig& cfg, const Dataset& data,
                                             std::uint64_t seed) {
  if (cfg.kind == "none") return nullptr;
  if (cfg.kind == "mock") return std::make_unique<MockBackend>(truth_table(data), cfg.reliability, seed);
  if (cfg.kind == "scripted") return ScriptedBackend::from_file(cfg.transcript);
  if (cfg.kind == "http") {
    HttpBackendConfig h;
    h.url = cfg.url;
    h.timeout = std::chrono::milliseconds(cfg.timeout_ms);
    if (const char* token = std::getenv("ICL_HTTP_TOKEN")) h.token = token;
    return std::make_unique<HttpBackend>(h);
  }
  throw Error(ErrorKind::ConfigError, "client.kind: unknown backend '" + cfg.kind + "'");
}

EvalResult evaluate_samples(const System1View& system1, std::span<const Sample> samples,
                            std::optional<std::span<const Label>> candidates, std::size_t batch_size,
                            System2Backend* client, const CollaborationOptions& options) {
  EvalResult r;
  std::size_t hits = 0;
  for (std::size_t lo = 0; lo < samples.size(); lo += batch_size) {
    const auto batch = samples.subspan(lo, std::min(batch_size, samples.size() - lo));
    std::vector<PredictionRecord> recs;
    if (client) {
      CollaborationStats st;
      recs = collaborate_infer(system1, batch, *client, options, candidates, &st);
      r.stats.hard += st.hard;
      r.stats.queries += st.queries;
      r.stats.failures += st.failures;
      r.stats.exact_answers += st.exact_answers;
    } else {
      recs = predict_batch(system1, batch, options.k, candidates);
      odi_filter(recs, options.odi);
    }
    for (std::size_t i = 0; i < recs.size(); ++i) hits += recs[i].final_label == batch[i].label;
    r.records.insert(r.records.end(), recs.begin(), recs.end());
  }
  r.accuracy = samples.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(samples.size());
  return r;
}

std::optional<double> ExperimentResult::final_collaborative() const {
  if (!collaborative) return std::nullopt;
  return incremental_accuracy(*collaborative, final_row);
}

double mean_value_separation(const ValueMemoryStore& store) {
  const auto labels = store.labels();
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto a = store.value_vector(labels[i]);
    for (std::size_t j = i + 1; j < labels.size(); ++j) {
      sum += 1.0 - cosine(a, store.value_vector(labels[j]));
      ++pairs;
    }
  }
  return pairs ? sum / static_cast<double>(pairs) : 0.0;
}

std::string value_memory_csv(const ValueMemoryStore& store) {
  std::ostringstream os;
  os << "label,name,task,frozen";
  for (std::size_t i = 0; i < store.dims().total(); ++i) os << ",v" << i;
  os << '\n';
  for (Label y : store.labels()) {
    os << y << ',' << store.name_of(y) << ',' << store.task_of(y).index << ','
       << (store.is_class_frozen(y) ? 1 : 0);
    for (double v : store.value_vector(y)) os << ',' << fmt(v);
    os << '\n';
  }
  return os.str();
}

std::string train_metrics_csv(const std::vector<TaskReport>& reports) {
  std::ostringstream os;
  os << "task,batches,em_batches,new_classes,total_classes,buffer_size,first_loss,last_loss,mean_loss\n";
  for (const auto& r : reports) {
    os << r.task.index << ',' << r.batches << ',' << r.em_batches << ',' << r.new_classes << ','
       << r.total_classes << ',' << r.buffer_size << ',' << fmt(r.first_loss) << ',' << fmt(r.last_loss)
       << ',' << fmt(r.mean_loss) << '\n';
  }
  return os.str();
}

std::string summary_csv(const ExperimentResult& r) {
  std::ostringstream os;
  os << "protocol,after_task,A_T\n";
  auto emit = [&](const char* name, const AccuracyMatrix& m) {
    for (std::size_t T = 0; T < m.tasks(); ++T) {
      if (m.row_complete(T)) os << name << ',' << T << ',' << fmt(incremental_accuracy(m, T)) << '\n';
    }
  };
  emit("class_il", r.class_il);
  if (r.task_il.entries()) emit("task_il", r.task_il);
  if (r.collaborative) emit("class_il_system2", *r.collaborative);
  return os.str();
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const Dataset& data,
                                const std::optional<std::filesystem::path>& out_dir) {
  cfg.validate();
  if (data.train.empty()) throw Error(ErrorKind::EmptyBatch, "dataset has no training shards");
  if (data.train.size() != data.test.size()) {
    throw Error(ErrorKind::FormatError, "dataset has " + std::to_string(data.train.size()) + " train and " +
                                            std::to_string(data.test.size()) + " test shards");
  }
  const std::size_t T = data.train.size();

  ExperimentResult result;
  result.class_il = AccuracyMatrix(T);
  result.task_il = AccuracyMatrix(T);
  Engine engine(cfg.engine_config());
  engine.set_class_names(data.names);

  auto client = make_backend(cfg.client, data, cfg.client_seed);
  if (client) result.collaborative = AccuracyMatrix(T);
  CollaborationOptions options;
  options.k = cfg.client.k;
  options.odi = cfg.odi;
  options.parallelism = cfg.client.parallelism;

  std::vector<std::vector<Label>> task_classes;
  for (const auto& s : data.test) task_classes.push_back(shard_classes(s));

  auto evaluate_row = [&](std::size_t row, std::size_t seen) {
    const System1View view{engine.params(), engine.store(), cfg.vmf.kappa};
    const bool last = row + 1 == T;
    for (std::size_t t = 0; t < seen; ++t) {
      const auto& samples = data.test[t].samples;
      auto plain = evaluate_samples(view, samples, std::nullopt, cfg.eval.batch_size, nullptr, options);
      result.class_il.set(row, t, plain.accuracy);
      if (cfg.eval.task_il) {
        auto restricted = evaluate_samples(view, samples, std::span<const Label>(task_classes[t]),
                                           cfg.eval.batch_size, nullptr, options);
        result.task_il.set(row, t, restricted.accuracy);
      }
      if (client) {
        auto collab = evaluate_samples(view, samples, std::nullopt, cfg.eval.batch_size, client.get(), options);
        result.collaborative->set(row, t, collab.accuracy);
        if (last) {
          result.collaboration.hard += collab.stats.hard;
          result.collaboration.queries += collab.stats.queries;
          result.collaboration.failures += collab.stats.failures;
          result.collaboration.exact_answers += collab.stats.exact_answers;
          result.collaborative_predictions.insert(result.collaborative_predictions.end(),
                                                  collab.records.begin(), collab.records.end());
        }
      }
      if (last) result.predictions.insert(result.predictions.end(), plain.records.begin(), plain.records.end());
    }
  };

  if (cfg.mode == RunMode::Joint) {
    std::vector<Sample> pooled;
    for (const auto& s : data.train) pooled.insert(pooled.end(), s.samples.begin(), s.samples.end());
    result.reports.push_back(engine.train_task(TaskId{0}, pooled));
    evaluate_row(T - 1, T);
  } else {
    for (std::size_t t = 0; t < T; ++t) {
      result.reports.push_back(engine.train_task(TaskId{data.train[t].task_id}, data.train[t].samples));
      evaluate_row(t, t + 1);
    }
  }
  result.final_row = T - 1;
  result.value_separation = mean_value_separation(engine.store());

  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    write_text(*out_dir / "accuracy_matrix.csv", result.class_il.to_csv());
    if (cfg.eval.task_il) write_text(*out_dir / "accuracy_matrix_task_il.csv", result.task_il.to_csv());
    if (result.collaborative) {
      write_text(*out_dir / "accuracy_matrix_system2.csv", result.collaborative->to_csv());
      write_predictions_csv(*out_dir / "predictions_system2.csv", result.collaborative_predictions);
    }
    write_text(*out_dir / "summary.csv", summary_csv(result));
    write_text(*out_dir / "forgetting_curves.csv", forgetting_curves_csv(result.class_il));
    write_predictions_csv(*out_dir / "predictions.csv", result.predictions);
    write_text(*out_dir / "value_memory.csv", value_memory_csv(engine.store()));
    write_text(*out_dir / "train_metrics.csv", train_metrics_csv(result.reports));
    write_text(*out_dir / "config.json", to_json(cfg).dump(2) + "\n");
    save_checkpoint(engine, *out_dir / "ckpt");
  }
  result.engine.emplace(std::move(engine));
  return result;
}

ExperimentResult run_experiment(const std::filesystem::path& config_path, const std::filesystem::path& out_dir) {
  const auto cfg = load_config(config_path);
  return run_experiment(cfg, load_dataset(cfg), out_dir);
}

std::vector<std::uint8_t> serialize_params(const QueryInteractorParams& params) {
  io::ByteWriter w;
  w.bytes("ICLP");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(params.dims.tokens));
  w.u32(static_cast<std::uint32_t>(params.dims.model_dim));
  w.u32(static_cast<std::uint32_t>(params.dims.heads));
  w.u32(static_cast<std::uint32_t>(params.dims.task_dim));
  w.u8(params.use_nonlinearity ? 1 : 0);
  const auto named = params.named();
  w.u32(static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, m] : named) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(m->rows));
    w.u32(static_cast<std::uint32_t>(m->cols));
    w.f32s(m->data);
  }
  return w.buffer();
}

QueryInteractorParams deserialize_params(std::vector<std::uint8_t> bytes, const std::string& origin) {
  io::ByteReader r(std::move(bytes), origin);
  if (r.bytes(4) != "ICLP") r.fail("bad magic, not a parameter file");
  if (const auto v = r.u32(); v != 1) r.fail("unsupported version " + std::to_string(v));
  InteractorDims dims;
  dims.tokens = r.u32();
  dims.model_dim = r.u32();
  dims.heads = r.u32();
  dims.task_dim = r.u32();
  try {
    dims.validate();
  } catch (const Error& e) {
    r.fail(e.what());
  }
  auto params = QueryInteractorParams::init(dims, 0);
  params.use_nonlinearity = r.u8() != 0;
  auto named = params.named();
  if (r.u32() != named.size()) r.fail("parameter count does not match the dims");
  for (auto& [name, m] : named) {
    if (r.str() != name) r.fail("expected parameter " + name);
    const std::size_t rows = r.u32();
    const std::size_t cols = r.u32();
    if (rows != m->rows || cols != m->cols) r.fail(name + " has the wrong shape");
    m->data = r.f32s(rows * cols);
    if (!m->all_finite()) r.fail(name + " holds non-finite values");
  }
  if (r.remaining() != 0) r.fail("trailing bytes");
  return params;
}

void save_checkpoint(const Engine& engine, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  engine.store().persist(dir / "store.iclz");
  io::write_file(dir / "params.iclp", serialize_params(engine.params()));
  const auto& c = engine.config();
  json j;
  j["dims"] = dims_json(c.dims);
  j["vmf"] = vmf_json(c.vmf);
  j["train"] = train_json(c.train);
  j["seeds"] = {{"init", c.init_seed}, {"train", c.train.seed}};
  j["tasks_trained"] = engine.tasks_trained();
  j["labels"] = json::object();
  for (Label y : engine.store().labels()) j["labels"][std::to_string(y)] = engine.store().name_of(y);
  write_text(dir / "engine.json", j.dump(2) + "\n");
}

Engine load_checkpoint(const std::filesystem::path& dir) {
  json j;
  try {
    j = json::parse(read_text(dir / "engine.json"));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::FormatError, (dir / "engine.json").string() + ": " + e.what());
  }
  EngineConfig c;
  Section root(&j, "");
  parse_dims(root.child("dims"), c.dims);
  parse_vmf(root.child("vmf"), c.vmf);
  parse_train(root.child("train"), c.train, nullptr);
  {
    Section s = root.child("seeds");
    c.init_seed = s.count("init", 0);
    c.train.seed = s.count("train", 0);
    s.finish();
  }
  root.has("tasks_trained");
  root.has("labels");
  root.finish();

  auto params = deserialize_params(io::read_file(dir / "params.iclp"), (dir / "params.iclp").string());
  auto store = ValueMemoryStore::load(dir / "store.iclz");
  Engine engine(c, std::move(params), std::move(store));
  std::map<Label, std::string> names;
  for (Label y : engine.store().labels()) names[y] = engine.store().name_of(y);
  engine.set_class_names(std::move(names));
  return engine;
}

}  // namespace icl
