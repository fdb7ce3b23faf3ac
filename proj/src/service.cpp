#include "cohere/service.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <random>

#include <httplib.h>

#include "cohere/coherence.hpp"
#include "cohere/errors.hpp"
#include "cohere/hash.hpp"
#include "cohere/insights.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cohere {

namespace {

constexpr const char* kManifest = "registry.json";

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string absolute_string(const std::string& path) {
  if (path.empty()) return path;
  return fs::absolute(path).lexically_normal().string();
}

// Raised inside handlers to return a specific client error.
struct HttpError {
  int status;
  json body;
};

[[noreturn]] void fail(int status, const std::string& code, const std::string& detail = "") {
  json body{{"error", code}};
  if (!detail.empty()) body["detail"] = detail;
  throw HttpError{status, std::move(body)};
}

Document request_document(const json& req) {
  if (req.contains("sentences")) {
    const auto& s = req.at("sentences");
    if (!s.is_array()) fail(400, "bad_request", "sentences must be an array of strings");
    std::vector<std::string> texts;
    for (const auto& t : s) {
      if (!t.is_string()) fail(400, "bad_request", "sentences must be an array of strings");
      texts.push_back(t.get<std::string>());
    }
    auto doc = Document::from_sentences("request", texts);
    if (doc.empty()) fail(422, "empty_text");
    return doc;
  }
  if (!req.contains("text") || !req.at("text").is_string()) fail(422, "empty_text");
  Document doc;
  doc.id = "request";
  try {
    doc.sentences = segment_sentences(req.at("text").get<std::string>());
  } catch (const EmptyDocument&) {
    fail(422, "empty_text");
  }
  return doc;
}

std::string require_string(const json& req, const char* key) {
  if (!req.is_object() || !req.contains(key) || !req.at(key).is_string()) {
    fail(400, "bad_request", std::string("missing string field '") + key + "'");
  }
  return req.at(key).get<std::string>();
}

InsightOptions request_options(const json& req) {
  InsightOptions opts;
  if (!req.contains("options")) return opts;
  const auto& o = req.at("options");
  try {
    if (o.contains("n_summary")) opts.n_summary = o.at("n_summary").get<std::size_t>();
    if (o.contains("jsd_threshold")) opts.jsd_threshold = o.at("jsd_threshold").get<double>();
    if (o.contains("drop_delta") && !o.at("drop_delta").is_null()) opts.drop_delta = o.at("drop_delta").get<double>();
  } catch (const json::exception& e) {
    fail(400, "bad_request", e.what());
  }
  if (opts.n_summary < 1) fail(400, "bad_request", "n_summary must be >= 1");
  if (!(opts.jsd_threshold >= 0)) fail(400, "bad_request", "jsd_threshold must be >= 0");
  if (opts.drop_delta && !(*opts.drop_delta > 0)) fail(400, "bad_request", "drop_delta must be > 0");
  return opts;
}

json coherence_json(const CoherenceScore& s) {
  return {{"tau", s.tau}, {"n", s.n}, {"degenerate", s.degenerate}};
}

std::string diagnostic_id() {
  static std::mt19937_64 rng(std::random_device{}());
  static std::mutex mu;
  std::lock_guard lock(mu);
  return to_hex(rng()).substr(0, 12);
}

}  // namespace

json ModelRegistryEntry::to_json() const {
  return {{"model_id", model_id}, {"path", path},           {"vectors_path", vectors_path},
          {"config", config},     {"vocab_hash", vocab_hash}, {"created_at", created_at},
          {"corpus_tag", corpus_tag}, {"checksum", checksum}};
}

ModelRegistryEntry ModelRegistryEntry::from_json(const json& j) {
  ModelRegistryEntry e;
  e.model_id = j.at("model_id").get<std::string>();
  e.path = j.at("path").get<std::string>();
  e.vectors_path = j.value("vectors_path", "");
  e.config = j.value("config", json::object());
  e.vocab_hash = j.value("vocab_hash", "");
  e.created_at = j.value("created_at", "");
  e.corpus_tag = j.value("corpus_tag", "");
  e.checksum = j.at("checksum").get<std::string>();
  return e;
}

json CorpusRegistryEntry::to_json() const {
  return {{"corpus_id", corpus_id}, {"path", path}, {"format", format}, {"vectors_path", vectors_path}};
}

CorpusRegistryEntry CorpusRegistryEntry::from_json(const json& j) {
  CorpusRegistryEntry e;
  e.corpus_id = j.at("corpus_id").get<std::string>();
  e.path = j.at("path").get<std::string>();
  e.format = j.value("format", "jsonl");
  e.vectors_path = j.value("vectors_path", "");
  return e;
}

Registry::Registry(fs::path data_dir) : data_dir_(std::move(data_dir)) {
  fs::create_directories(data_dir_ / "models");
  reload();
}

void Registry::reload() {
  std::lock_guard lock(mu_);
  models_.clear();
  corpora_.clear();
  const auto path = data_dir_ / kManifest;
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  json j;
  try {
    in >> j;
    for (const auto& m : j.value("models", json::array())) {
      auto e = ModelRegistryEntry::from_json(m);
      models_[e.model_id] = e;
    }
    for (const auto& c : j.value("corpora", json::array())) {
      auto e = CorpusRegistryEntry::from_json(c);
      corpora_[e.corpus_id] = e;
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void Registry::save_locked() const {
  json j{{"version", 1}, {"models", json::array()}, {"corpora", json::array()}};
  for (const auto& [_, e] : models_) j["models"].push_back(e.to_json());
  for (const auto& [_, e] : corpora_) j["corpora"].push_back(e.to_json());
  const auto path = data_dir_ / kManifest;
  const auto tmp = data_dir_ / (std::string(kManifest) + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << j.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

ModelRegistryEntry Registry::register_model(const std::string& model_id, const std::string& model_path,
                                            const std::string& vectors_path, const std::string& corpus_tag) {
  if (model_id.empty()) throw InvalidConfig("model id must not be empty");
  const auto loaded = load_model(model_path);
  ModelRegistryEntry e;
  e.model_id = model_id;
  e.path = absolute_string(model_path);
  e.vectors_path = absolute_string(vectors_path);
  e.config = loaded.config().to_json();
  e.vocab_hash = to_hex(loaded.vocab_hash);
  e.created_at = utc_now();
  e.corpus_tag = corpus_tag;
  e.checksum = to_hex(file_checksum(model_path));
  std::lock_guard lock(mu_);
  if (models_.count(model_id)) throw InvalidConfig("model id already registered: " + model_id);
  models_[model_id] = e;
  save_locked();
  return e;
}

void Registry::register_corpus(const CorpusRegistryEntry& entry) {
  if (entry.corpus_id.empty()) throw InvalidConfig("corpus id must not be empty");
  parse_corpus_format(entry.format);
  auto e = entry;
  e.path = absolute_string(e.path);
  e.vectors_path = absolute_string(e.vectors_path);
  std::lock_guard lock(mu_);
  corpora_[e.corpus_id] = e;
  save_locked();
}

std::optional<ModelRegistryEntry> Registry::model(const std::string& model_id) const {
  std::lock_guard lock(mu_);
  auto it = models_.find(model_id);
  if (it == models_.end()) return std::nullopt;
  return it->second;
}

std::optional<CorpusRegistryEntry> Registry::corpus(const std::string& corpus_id) const {
  std::lock_guard lock(mu_);
  auto it = corpora_.find(corpus_id);
  if (it == corpora_.end()) return std::nullopt;
  return it->second;
}

std::vector<ModelRegistryEntry> Registry::models() const {
  std::lock_guard lock(mu_);
  std::vector<ModelRegistryEntry> out;
  for (const auto& [_, e] : models_) out.push_back(e);
  return out;
}

std::vector<CorpusRegistryEntry> Registry::corpora() const {
  std::lock_guard lock(mu_);
  std::vector<CorpusRegistryEntry> out;
  for (const auto& [_, e] : corpora_) out.push_back(e);
  return out;
}

std::shared_ptr<const ModelBundle> load_bundle(const ModelRegistryEntry& entry) {
  const auto actual = to_hex(file_checksum(entry.path));
  if (actual != entry.checksum) {
    throw ChecksumMismatch(entry.path + ": checksum " + actual + " does not match registry " + entry.checksum);
  }
  auto bundle = std::make_shared<ModelBundle>();
  bundle->loaded = load_model(entry.path);
  bundle->vectors = load_vectors(entry.vectors_path);
  check_compatible(bundle->loaded, bundle->vectors);
  return bundle;
}

std::string to_string(JobStatus status) {
  switch (status) {
    case JobStatus::queued: return "queued";
    case JobStatus::running: return "running";
    case JobStatus::done: return "done";
    case JobStatus::failed: return "failed";
  }
  return "unknown";
}

json TrainJob::to_json() const {
  json hist = json::array();
  for (auto s : history) hist.push_back(to_string(s));
  json j{{"job_id", job_id},
         {"status", to_string(status)},
         {"history", hist},
         {"progress", {{"epochs_done", epochs_done}, {"epochs_total", epochs_total}}}};
  if (!model_id.empty()) j["model_id"] = model_id;
  if (!message.empty()) j["message"] = message;
  return j;
}

std::string run_training(const TrainRequest& req, const CorpusRegistryEntry& corpus, const fs::path& out_path,
                         const std::function<void(int)>& on_epoch) {
  const auto docs = load_corpus(corpus.path, parse_corpus_format(corpus.format)).documents;
  if (docs.empty()) throw EmptyDocument("corpus has no usable documents: " + corpus.path);
  const auto vocab = build_vocab(docs, req.vocab_size);
  const auto store = load_vectors(corpus.vectors_path);
  auto cfg = req.model;
  cfg.input_dim = static_cast<int>(3 * store.dim());
  const auto data = build_dataset(docs, store, vocab, cfg.q, static_cast<std::size_t>(cfg.l_max));
  auto tc = req.train;
  tc.on_epoch = [&](int epoch, const EpochStats&) { on_epoch(epoch + 1); };
  auto result = train(init_model(cfg), data, tc);
  save_model(result.model, vocab, store.dim(), out_path.string());
  return out_path.string();
}

Service::Service(ServiceOptions options)
    : options_(std::move(options)), registry_(options_.data_dir), worker_([this] { worker_loop(); }) {}

Service::~Service() {
  {
    std::lock_guard lock(jobs_mu_);
    stopping_ = true;
  }
  jobs_cv_.notify_all();
  worker_.join();
}

template <typename Fn>
ServiceResponse Service::guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const HttpError& e) {
    return {e.status, e.body};
  } catch (const std::exception& e) {
    const auto id = diagnostic_id();
    std::cerr << "[cohere] internal error " << id << ": " << e.what() << '\n';
    return {500, {{"error", "internal"}, {"diagnostic_id", id}}};
  }
}

std::shared_ptr<const ModelBundle> Service::bundle(const std::string& model_id) {
  {
    std::lock_guard lock(cache_mu_);
    auto it = cache_.find(model_id);
    if (it != cache_.end()) return it->second;
  }
  const auto entry = registry_.model(model_id);
  if (!entry) fail(404, "unknown_model");
  auto b = load_bundle(*entry);
  std::lock_guard lock(cache_mu_);
  return cache_.emplace(model_id, std::move(b)).first->second;
}

ServiceResponse Service::analyze(const json& req) {
  return guarded([&]() -> ServiceResponse {
    const auto model_id = require_string(req, "model_id");
    const auto opts = request_options(req);
    const auto b = bundle(model_id);
    const auto doc = request_document(req);
    const auto seq = ppd_sequence(b->loaded.model, doc, b->vectors, b->loaded.vocab);
    auto body = heatmap_to_json(analyze_insights(seq, doc, opts));
    body["model_id"] = model_id;
    body["coherence"] = coherence_json(coherence_score(seq));
    body["ordering"] = cohere::reorder(seq).permutation;
    body["degenerate"] = seq.degenerate;
    return {200, body};
  });
}

ServiceResponse Service::summarize(const json& req) {
  return guarded([&]() -> ServiceResponse {
    const auto model_id = require_string(req, "model_id");
    std::size_t n = 3;
    if (req.contains("n")) {
      if (!req.at("n").is_number_integer() || req.at("n").get<long long>() < 1) {
        fail(400, "bad_request", "n must be a positive integer");
      }
      n = req.at("n").get<std::size_t>();
    }
    const auto b = bundle(model_id);
    const auto doc = request_document(req);
    const auto seq = ppd_sequence(b->loaded.model, doc, b->vectors, b->loaded.vocab);
    const auto sel = cohere::summarize(seq, n);
    json texts = json::array();
    for (auto i : sel.selected) texts.push_back(doc.sentences[i].text);
    return {200, {{"model_id", model_id}, {"summary", sel.selected}, {"scores", sel.scores}, {"sentences", texts}}};
  });
}

ServiceResponse Service::reorder(const json& req) {
  return guarded([&]() -> ServiceResponse {
    const auto model_id = require_string(req, "model_id");
    const auto b = bundle(model_id);
    const auto doc = request_document(req);
    const auto seq = ppd_sequence(b->loaded.model, doc, b->vectors, b->loaded.vocab);
    const auto ord = cohere::reorder(seq);
    json texts = json::array();
    for (auto i : ord.permutation) texts.push_back(doc.sentences[i].text);
    return {200,
            {{"model_id", model_id},
             {"ordering", ord.permutation},
             {"wq", ord.weighted_quantiles},
             {"sentences", texts},
             {"coherence", coherence_json(coherence_score(seq))}}};
  });
}

ServiceResponse Service::models() const {
  json list = json::array();
  for (const auto& e : registry_.models()) list.push_back(e.to_json());
  json corpora = json::array();
  for (const auto& e : registry_.corpora()) corpora.push_back(e.to_json());
  return {200, {{"models", list}, {"corpora", corpora}}};
}

ServiceResponse Service::train(const json& req) {
  return guarded([&]() -> ServiceResponse {
    TrainRequest tr;
    tr.corpus_id = require_string(req, "corpus_id");
    if (!registry_.corpus(tr.corpus_id)) fail(404, "unknown_corpus");
    try {
      // Fields left out keep their defaults; input_dim is replaced by
      // 3 x vector dim when the job runs.
      auto cfg = tr.model.to_json();
      if (req.contains("config")) cfg.merge_patch(req.at("config"));
      cfg["input_dim"] = 3;
      tr.model = ModelConfig::from_json(cfg);
      const auto& t = req.value("train", json::object());
      tr.train.epochs = t.value("epochs", tr.train.epochs);
      tr.train.batch_size = t.value("batch_size", tr.train.batch_size);
      tr.train.shuffle_seed = t.value("shuffle_seed", tr.train.shuffle_seed);
      tr.train.optimizer.learning_rate = t.value("learning_rate", tr.train.optimizer.learning_rate);
      tr.vocab_size = req.value("vocab_size", tr.vocab_size);
      tr.model_id = req.value("model_id", "");
    } catch (const json::exception& e) {
      fail(400, "bad_request", e.what());
    } catch (const InvalidConfig& e) {
      fail(400, "invalid_config", e.what());
    }
    if (tr.train.epochs < 1 || tr.train.batch_size < 1) fail(400, "invalid_config", "epochs and batch_size must be >= 1");
    if (!tr.model_id.empty() && registry_.model(tr.model_id)) fail(409, "model_exists");
    const std::string token = req.value("token", "");

    std::lock_guard lock(jobs_mu_);
    if (!token.empty() && tokens_.count(token)) {
      fail(409, "duplicate_submission", "token already used by " + tokens_.at(token));
    }
    TrainJob job;
    job.job_id = "job-" + std::to_string(next_job_++);
    job.token = token;
    job.epochs_total = tr.train.epochs;
    job.history = {JobStatus::queued};
    if (tr.model_id.empty()) tr.model_id = "model-" + job.job_id.substr(4) + "-" + tr.corpus_id;
    if (!token.empty()) tokens_[token] = job.job_id;
    jobs_[job.job_id] = job;
    queue_.emplace_back(job.job_id, std::move(tr));
    jobs_cv_.notify_all();
    return {202, job.to_json()};
  });
}

ServiceResponse Service::job_status(const std::string& job_id) const {
  std::lock_guard lock(jobs_mu_);
  auto it = jobs_.find(job_id);
  if (it == jobs_.end()) return {404, {{"error", "unknown_job"}}};
  return {200, it->second.to_json()};
}

void Service::wait_idle() {
  std::unique_lock lock(jobs_mu_);
  jobs_cv_.wait(lock, [&] { return queue_.empty() && !busy_; });
}

void Service::worker_loop() {
  for (;;) {
    std::pair<std::string, TrainRequest> item;
    {
      std::unique_lock lock(jobs_mu_);
      jobs_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      item = std::move(queue_.front());
      queue_.pop_front();
      busy_ = true;
      auto& job = jobs_.at(item.first);
      job.status = JobStatus::running;
      job.history.push_back(JobStatus::running);
    }
    const auto& [job_id, req] = item;
    JobStatus final_status = JobStatus::done;
    std::string message;
    try {
      const auto corpus = registry_.corpus(req.corpus_id);
      if (!corpus) throw InvalidConfig("corpus no longer registered: " + req.corpus_id);
      const auto out = registry_.data_dir() / "models" / (req.model_id + ".ppd");
      const auto path = options_.trainer(req, *corpus, out, [&](int epochs_done) {
        std::lock_guard lock(jobs_mu_);
        jobs_.at(job_id).epochs_done = epochs_done;
      });
      registry_.register_model(req.model_id, path, corpus->vectors_path, corpus->corpus_id);
    } catch (const std::exception& e) {
      final_status = JobStatus::failed;
      message = e.what();
    }
    {
      std::lock_guard lock(jobs_mu_);
      auto& job = jobs_.at(job_id);
      job.status = final_status;
      job.history.push_back(final_status);
      job.message = message;
      if (final_status == JobStatus::done) job.model_id = req.model_id;
      busy_ = false;
    }
    jobs_cv_.notify_all();
  }
}

void install_routes(httplib::Server& server, Service& service, const std::string& static_dir) {
  auto reply = [](httplib::Response& res, const ServiceResponse& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  auto post = [&server, reply](const std::string& path, std::function<ServiceResponse(const json&)> handler) {
    server.Post(path, [reply, handler](const httplib::Request& req, httplib::Response& res) {
      const auto body = json::parse(req.body, nullptr, false);
      if (body.is_discarded() || !body.is_object()) {
        reply(res, {400, {{"error", "bad_request"}, {"detail", "body must be a JSON object"}}});
        return;
      }
      reply(res, handler(body));
    });
  };
  post("/api/analyze", [&service](const json& b) { return service.analyze(b); });
  post("/api/summarize", [&service](const json& b) { return service.summarize(b); });
  post("/api/reorder", [&service](const json& b) { return service.reorder(b); });
  post("/api/train", [&service](const json& b) { return service.train(b); });
  server.Get("/api/models", [&service, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, service.models());
  });
  server.Get(R"(/api/jobs/([A-Za-z0-9_\-]+))", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.job_status(req.matches[1]));
  });
  if (!static_dir.empty()) server.set_mount_point("/", static_dir);
}

}  // namespace cohere
