#pragma once

#include <memory>
#include <string>

#include "job_service.hpp"

namespace httplib {
class Server;
}

namespace gestinv::service {

// Routes:
//   POST /api/jobs                 {kind, payload} -> 202 {job_id, status}
//   GET  /api/jobs/{id}            status, result refs, error
//   GET  /api/jobs/{id}/trace      chunked JSON lines of the records so far;
//                                  409 while the job is still queued
//   GET  /api/motions/{id}         {skeleton, frame_rate, frames, condition?}
//   PUT  /api/motions              upload a motion -> 201 {motion_id}
//   GET  /api/skeleton             active skeleton definition
// Errors answer {"error": {"status", "message"}}.
class HttpApi {
 public:
  explicit HttpApi(JobService& service);
  ~HttpApi();

  // Binds and serves on the calling thread until stop().
  bool listen(const std::string& host, int port);
  // Binds to a free port and returns it (or -1); serve with listen_after_bind().
  int bind_any_port(const std::string& host);
  bool listen_after_bind();
  void stop();
  bool running() const;
  void wait_until_ready() const;

 private:
  void install_routes();

  JobService& service_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace gestinv::service
