#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cohere/corpus.hpp"
#include "cohere/embeddings.hpp"
#include "cohere/model_io.hpp"
#include "cohere/position_model.hpp"

namespace httplib {
class Server;
}

namespace cohere {

struct ModelRegistryEntry {
  std::string model_id;
  std::string path;
  std::string vectors_path;
  nlohmann::json config;
  std::string vocab_hash;
  std::string created_at;
  std::string corpus_tag;
  std::string checksum;

  nlohmann::json to_json() const;
  static ModelRegistryEntry from_json(const nlohmann::json& j);
};

struct CorpusRegistryEntry {
  std::string corpus_id;
  std::string path;
  std::string format = "jsonl";
  std::string vectors_path;

  nlohmann::json to_json() const;
  static CorpusRegistryEntry from_json(const nlohmann::json& j);
};

/// Models and corpora known to a data directory, persisted as
/// `<data_dir>/registry.json`. Mutations are serialized and rewrite the
/// manifest atomically.
class Registry {
 public:
  explicit Registry(std::filesystem::path data_dir);

  const std::filesystem::path& data_dir() const { return data_dir_; }

  /// Fills in checksum, vocab hash, config and created_at from the file.
  /// Throws InvalidConfig when the id is taken.
  ModelRegistryEntry register_model(const std::string& model_id, const std::string& model_path,
                                    const std::string& vectors_path, const std::string& corpus_tag = "");
  void register_corpus(const CorpusRegistryEntry& entry);

  std::optional<ModelRegistryEntry> model(const std::string& model_id) const;
  std::optional<CorpusRegistryEntry> corpus(const std::string& corpus_id) const;
  std::vector<ModelRegistryEntry> models() const;
  std::vector<CorpusRegistryEntry> corpora() const;

  /// Re-reads the manifest from disk.
  void reload();

 private:
  void save_locked() const;

  std::filesystem::path data_dir_;
  mutable std::mutex mu_;
  std::map<std::string, ModelRegistryEntry> models_;
  std::map<std::string, CorpusRegistryEntry> corpora_;
};

/// A loaded model with its vectors, shared by concurrent requests.
struct ModelBundle {
  LoadedModel loaded;
  VectorStore vectors;
};

/// Loads a registered model, verifying the recorded checksum first.
std::shared_ptr<const ModelBundle> load_bundle(const ModelRegistryEntry& entry);

enum class JobStatus { queued, running, done, failed };

std::string to_string(JobStatus status);

struct TrainJob {
  std::string job_id;
  std::string token;
  JobStatus status = JobStatus::queued;
  /// Every status the job has held, in order.
  std::vector<JobStatus> history;
  int epochs_done = 0;
  int epochs_total = 0;
  std::string model_id;
  std::string message;

  nlohmann::json to_json() const;
};

struct TrainRequest {
  std::string corpus_id;
  std::string model_id;
  ModelConfig model;
  TrainConfig train;
  std::size_t vocab_size = 10000;
};

/// Runs one training request and returns the saved model's path. The
/// callback reports completed epochs.
using TrainRunner = std::function<std::string(const TrainRequest&, const CorpusRegistryEntry&,
                                              const std::filesystem::path& out_path,
                                              const std::function<void(int)>& on_epoch)>;

/// Default runner: loads the corpus and vectors, builds the vocabulary, trains
/// and saves the model.
std::string run_training(const TrainRequest& req, const CorpusRegistryEntry& corpus,
                         const std::filesystem::path& out_path, const std::function<void(int)>& on_epoch);

struct ServiceResponse {
  int status = 200;
  nlohmann::json body;
};

struct ServiceOptions {
  std::filesystem::path data_dir = "cohere-data";
  TrainRunner trainer = run_training;
};

/// The HTTP API as plain functions of a JSON body. Analysis is synchronous
/// and read-only; training runs on a single background worker in FIFO order.
class Service {
 public:
  explicit Service(ServiceOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  ServiceResponse analyze(const nlohmann::json& request);
  ServiceResponse summarize(const nlohmann::json& request);
  ServiceResponse reorder(const nlohmann::json& request);
  ServiceResponse models() const;
  ServiceResponse train(const nlohmann::json& request);
  ServiceResponse job_status(const std::string& job_id) const;

  Registry& registry() { return registry_; }

  /// Blocks until the queue is empty and no job is running.
  void wait_idle();

 private:
  template <typename Fn>
  ServiceResponse guarded(Fn&& fn);
  std::shared_ptr<const ModelBundle> bundle(const std::string& model_id);
  void worker_loop();

  ServiceOptions options_;
  Registry registry_;

  std::mutex cache_mu_;
  std::map<std::string, std::shared_ptr<const ModelBundle>> cache_;

  mutable std::mutex jobs_mu_;
  std::condition_variable jobs_cv_;
  std::map<std::string, TrainJob> jobs_;
  std::map<std::string, std::string> tokens_;
  std::deque<std::pair<std::string, TrainRequest>> queue_;
  bool busy_ = false;
  bool stopping_ = false;
  std::uint64_t next_job_ = 1;
  std::thread worker_;
};

/// Mounts the /api routes and, when `static_dir` is non-empty, serves it at /.
void install_routes(httplib::Server& server, Service& service, const std::string& static_dir = "");

}  // namespace cohere
