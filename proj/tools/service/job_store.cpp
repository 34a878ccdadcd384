#include "job_store.hpp"

#include <cstdio>

namespace gestinv::service {

std::string to_string(JobKind kind) {
  switch (kind) {
    case JobKind::kTrain: return "train";
    case JobKind::kGenerate: return "generate";
    case JobKind::kInvert: return "invert";
    case JobKind::kRegenStyle: return "regen_style";
    case JobKind::kEdit: return "edit";
  }
  return "unknown";
}

std::optional<JobKind> job_kind_from_string(const std::string& name) {
  for (auto k : {JobKind::kTrain, JobKind::kGenerate, JobKind::kInvert, JobKind::kRegenStyle,
                 JobKind::kEdit}) {
    if (to_string(k) == name) return k;
  }
  return std::nullopt;
}

std::string to_string(JobStatus status) {
  switch (status) {
    case JobStatus::kQueued: return "queued";
    case JobStatus::kRunning: return "running";
    case JobStatus::kDone: return "done";
    case JobStatus::kFailed: return "failed";
  }
  return "unknown";
}

std::string JobStore::create(JobKind kind, Json payload) {
  std::lock_guard lock(mu_);
  char id[32];
  std::snprintf(id, sizeof id, "job-%06llu", static_cast<unsigned long long>(next_++));
  Entry e;
  e.view.id = id;
  e.view.kind = kind;
  e.view.payload = std::move(payload);
  jobs_.emplace(id, std::move(e));
  return id;
}

bool JobStore::start(const std::string& id) {
  std::lock_guard lock(mu_);
  auto it = jobs_.find(id);
  if (it == jobs_.end() || it->second.view.status != JobStatus::kQueued) return false;
  it->second.view.status = JobStatus::kRunning;
  return true;
}

bool JobStore::append_trace(const std::string& id, Json record) {
  std::lock_guard lock(mu_);
  auto it = jobs_.find(id);
  if (it == jobs_.end() || it->second.view.status != JobStatus::kRunning) return false;
  it->second.trace.push_back(std::move(record));
  it->second.view.trace_records = it->second.trace.size();
  return true;
}

bool JobStore::finish(const std::string& id, Json result) {
  std::lock_guard lock(mu_);
  auto it = jobs_.find(id);
  if (it == jobs_.end() || it->second.view.status != JobStatus::kRunning) return false;
  it->second.view.status = JobStatus::kDone;
  it->second.view.result = std::move(result);
  return true;
}

bool JobStore::fail(const std::string& id, std::string error) {
  std::lock_guard lock(mu_);
  auto it = jobs_.find(id);
  if (it == jobs_.end() || it->second.view.status != JobStatus::kRunning) return false;
  it->second.view.status = JobStatus::kFailed;
  it->second.view.error = std::move(error);
  return true;
}

std::optional<JobView> JobStore::get(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second.view;
}

std::optional<std::pair<JobStatus, std::vector<Json>>> JobStore::trace(
    const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return std::pair{it->second.view.status, it->second.trace};
}

std::size_t JobStore::size() const {
  std::lock_guard lock(mu_);
  return jobs_.size();
}

}  // namespace gestinv::service
