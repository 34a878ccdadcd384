#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>

#include "artifact_store.hpp"
#include "job_store.hpp"
#include "worker_pool.hpp"

namespace gestinv::service {

// Rejected request; `status` is the HTTP code to answer with (400 or 404).
class RequestError : public std::runtime_error {
 public:
  RequestError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

struct ServiceConfig {
  std::size_t workers = 2;
  // Empty keeps artifacts in memory only.
  std::filesystem::path store_dir;
};

// Storage directory named by GESTINV_STORE, or empty.
std::filesystem::path store_dir_from_env();

// Validates job requests, queues them on the worker pool and records their
// progress. Payloads are checked before a job is created, so a job id always
// refers to a runnable request.
class JobService {
 public:
  JobService(ServiceConfig config, std::shared_ptr<const Checkpoint> model);
  ~JobService();

  // {kind, payload} -> job id. Throws RequestError.
  std::string submit(const Json& request);

  const JobStore& jobs() const noexcept { return jobs_; }
  ArtifactStore& artifacts() noexcept { return artifacts_; }
  const Skeleton& skeleton() const noexcept { return skeleton_; }
  std::shared_ptr<const Checkpoint> active_model() const;

 private:
  using Runner = std::function<Json(const std::string& job_id)>;

  Runner prepare(JobKind kind, const Json& payload);
  Runner prepare_train(const Json& payload);
  Runner prepare_generate(const Json& payload);
  Runner prepare_invert(const Json& payload);
  Runner prepare_regen(const Json& payload);
  Runner prepare_edit(const Json& payload);
  std::shared_ptr<const Checkpoint> model_for(const Json& payload) const;
  MotionSequence motion_for(const Json& payload, const char* key) const;
  void run(const std::string& id, const Runner& runner);

  Skeleton skeleton_;
  JobStore jobs_;
  ArtifactStore artifacts_;
  mutable std::mutex model_mu_;
  std::shared_ptr<const Checkpoint> model_;
  // Last member: joined before the stores it writes to are destroyed.
  WorkerPool pool_;
};

}  // namespace gestinv::service
