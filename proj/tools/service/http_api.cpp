#include "http_api.hpp"

#include <httplib.h>

namespace gestinv::service {

namespace {

void send_json(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, Json{{"error", {{"status", status}, {"message", message}}}});
}

Json job_json(const JobView& v) {
  Json j{{"job_id", v.id},
         {"kind", to_string(v.kind)},
         {"status", to_string(v.status)},
         {"trace_records", v.trace_records}};
  if (v.status == JobStatus::kDone) j["result"] = v.result;
  if (v.status == JobStatus::kFailed) j["error"] = v.error;
  return j;
}

}  // namespace

HttpApi::HttpApi(JobService& service)
    : service_(service), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

HttpApi::~HttpApi() { stop(); }

void HttpApi::install_routes() {
  auto& s = *server_;

  s.Post("/api/jobs", [this](const httplib::Request& req, httplib::Response& res) {
    Json body;
    try {
      body = Json::parse(req.body);
    } catch (const Json::parse_error& e) {
      send_error(res, 400, std::string("malformed JSON: ") + e.what());
      return;
    }
    try {
      const auto id = service_.submit(body);
      send_json(res, 202, Json{{"job_id", id}, {"status", "queued"}});
    } catch (const RequestError& e) {
      send_error(res, e.status(), e.what());
    }
  });

  s.Get(R"(/api/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    auto view = service_.jobs().get(req.matches[1]);
    if (!view) {
      send_error(res, 404, "unknown job '" + std::string(req.matches[1]) + "'");
      return;
    }
    send_json(res, 200, job_json(*view));
  });

  s.Get(R"(/api/jobs/([^/]+)/trace)", [this](const httplib::Request& req, httplib::Response& res) {
    auto snap = service_.jobs().trace(req.matches[1]);
    if (!snap) {
      send_error(res, 404, "unknown job '" + std::string(req.matches[1]) + "'");
      return;
    }
    if (snap->first == JobStatus::kQueued) {
      send_error(res, 409, "job '" + std::string(req.matches[1]) + "' has not started");
      return;
    }
    res.status = 200;
    res.set_header("X-Job-Status", to_string(snap->first));
    auto lines = std::make_shared<std::vector<std::string>>();
    for (const auto& rec : snap->second) lines->push_back(rec.dump() + "\n");
    res.set_chunked_content_provider(
        "application/x-ndjson",
        [lines, next = std::size_t{0}](std::size_t, httplib::DataSink& sink) mutable {
          if (next < lines->size()) {
            const auto& l = (*lines)[next++];
            return sink.write(l.data(), l.size());
          }
          sink.done();
          return true;
        });
  });

  s.Get(R"(/api/motions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    std::optional<MotionSequence> m;
    try {
      m = service_.artifacts().motion(req.matches[1]);
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
      return;
    }
    if (!m) {
      send_error(res, 404, "unknown motion '" + std::string(req.matches[1]) + "'");
      return;
    }
    send_json(res, 200, motion_to_json(*m));
  });

  s.Put("/api/motions", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      auto motion = motion_from_json(Json::parse(req.body));
      if (motion.skeleton().fingerprint() != service_.skeleton().fingerprint()) {
        send_error(res, 400, "motion skeleton does not match the active skeleton");
        return;
      }
      send_json(res, 201, Json{{"motion_id", service_.artifacts().put_motion(std::move(motion))}});
    } catch (const std::exception& e) {
      send_error(res, 400, std::string("invalid motion: ") + e.what());
    }
  });

  s.Get("/api/skeleton", [this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, skeleton_to_json(service_.skeleton()));
  });

  s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) send_error(res, res.status, httplib::status_message(res.status));
  });
}

bool HttpApi::listen(const std::string& host, int port) { return server_->listen(host, port); }

int HttpApi::bind_any_port(const std::string& host) { return server_->bind_to_any_port(host); }

bool HttpApi::listen_after_bind() { return server_->listen_after_bind(); }

void HttpApi::stop() {
  if (server_) server_->stop();
}

bool HttpApi::running() const { return server_->is_running(); }

void HttpApi::wait_until_ready() const { server_->wait_until_ready(); }

}  // namespace gestinv::service
