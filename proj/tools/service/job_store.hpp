#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "gestinv/serialization.hpp"

namespace gestinv::service {

enum class JobKind { kTrain, kGenerate, kInvert, kRegenStyle, kEdit };
enum class JobStatus { kQueued, kRunning, kDone, kFailed };

std::string to_string(JobKind kind);
std::optional<JobKind> job_kind_from_string(const std::string& name);
std::string to_string(JobStatus status);

struct JobView {
  std::string id;
  JobKind kind = JobKind::kGenerate;
  JobStatus status = JobStatus::kQueued;
  Json payload;
  Json result;  // null until done
  std::string error;
  std::size_t trace_records = 0;
};

// Synchronized job table. Status moves queued -> running -> done | failed
// and never backwards; finished entries are frozen. Every method holds the
// lock only for a copy, so polls never wait on a running job.
class JobStore {
 public:
  std::string create(JobKind kind, Json payload);

  // Each returns false (and changes nothing) when the transition is illegal.
  bool start(const std::string& id);
  bool append_trace(const std::string& id, Json record);
  bool finish(const std::string& id, Json result);
  bool fail(const std::string& id, std::string error);

  std::optional<JobView> get(const std::string& id) const;
  // Trace records appended so far plus the status they were read under.
  std::optional<std::pair<JobStatus, std::vector<Json>>> trace(const std::string& id) const;
  std::size_t size() const;

 private:
  struct Entry {
    JobView view;
    std::vector<Json> trace;
  };

  mutable std::mutex mu_;
  std::map<std::string, Entry> jobs_;
  std::uint64_t next_ = 1;
};

}  // namespace gestinv::service
