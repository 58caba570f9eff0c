#include "spinealign/service/http_service.hpp"

#include <httplib.h>

#include <spdlog/spdlog.h>

namespace spinealign::service {

using nlohmann::json;

namespace {

constexpr const char* kSession = R"(/api/v1/sessions/([A-Za-z0-9_-]+))";

json error_body(int status, const std::string& code, const std::string& message) {
  return {{"error", {{"status", status}, {"code", code}, {"message", message}}}};
}

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json request_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw ServiceError(400, "bad_json", std::string("request body is not valid JSON: ") + e.what());
  }
}

template <class F>
auto guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const ServiceError& e) {
      reply(res, e.status(), error_body(e.status(), e.code(), e.what()));
    } catch (const InvalidArgument& e) {
      reply(res, 400, error_body(400, "bad_request", e.what()));
    } catch (const std::exception& e) {
      spdlog::error("{} {}: {}", req.method, req.path, e.what());
      reply(res, 500, error_body(500, "internal", e.what()));
    }
  };
}

}  // namespace

struct HttpService::Impl {
  SessionManager& sessions;
  httplib::Server server;

  explicit Impl(SessionManager& s) : sessions(s) { routes(); }

  void routes() {
    auto& sv = server;
    const std::string session = kSession;

    sv.Get("/api/v1/health", guarded([](const httplib::Request&, httplib::Response& res) {
             reply(res, 200, {{"api_version", kApiVersion}, {"status", "ok"}});
           }));
    sv.Get("/api/v1/sessions", guarded([this](const httplib::Request&, httplib::Response& res) {
             reply(res, 200, sessions.list());
           }));
    sv.Post("/api/v1/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
              reply(res, 201, sessions.create(request_body(req)));
            }));
    sv.Get(session, guarded([this](const httplib::Request& req, httplib::Response& res) {
             reply(res, 200, sessions.state(req.matches[1]));
           }));
    sv.Delete(session, guarded([this](const httplib::Request& req, httplib::Response& res) {
                sessions.remove(req.matches[1]);
                res.status = 204;
              }));
    sv.Get(session + "/geometry", guarded([this](const httplib::Request& req, httplib::Response& res) {
             reply(res, 200, sessions.geometry(req.matches[1]));
           }));
    sv.Put(session + "/joint", guarded([this](const httplib::Request& req, httplib::Response& res) {
             reply(res, 200, sessions.set_joint(req.matches[1], request_body(req)));
           }));
    sv.Put(session + "/global", guarded([this](const httplib::Request& req, httplib::Response& res) {
             reply(res, 200, sessions.set_global(req.matches[1], request_body(req)));
           }));
    sv.Post(session + "/coarse-align", guarded([this](const httplib::Request& req, httplib::Response& res) {
              reply(res, 200, sessions.coarse_align(req.matches[1], request_body(req)));
            }));
    sv.Post(session + "/optimize", guarded([this](const httplib::Request& req, httplib::Response& res) {
              reply(res, 202, sessions.start_optimize(req.matches[1], request_body(req)));
            }));
    sv.Get(session + R"(/jobs/([A-Za-z0-9_-]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
             reply(res, 200, sessions.job(req.matches[1], req.matches[2]));
           }));
    sv.Post(session + R"(/jobs/([A-Za-z0-9_-]+)/cancel)",
            guarded([this](const httplib::Request& req, httplib::Response& res) {
              sessions.cancel_job(req.matches[1], req.matches[2]);
              reply(res, 202, {{"job_id", req.matches[2].str()}, {"cancel_requested", true}});
            }));
    sv.Get(session + R"(/jobs/([A-Za-z0-9_-]+)/events)",
           guarded([this](const httplib::Request& req, httplib::Response& res) { stream_events(req, res); }));
    sv.Post(session + "/icp", guarded([this](const httplib::Request& req, httplib::Response& res) {
              reply(res, 200, sessions.run_icp(req.matches[1], request_body(req)));
            }));
    sv.Post(session + "/undo", guarded([this](const httplib::Request& req, httplib::Response& res) {
              reply(res, 200, sessions.undo(req.matches[1]));
            }));
    sv.Post(session + "/label", guarded([this](const httplib::Request& req, httplib::Response& res) {
              reply(res, 201, sessions.save_label(req.matches[1], request_body(req)));
            }));

    sv.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
      if (!res.body.empty()) return;
      const std::string code = res.status == 404 ? "not_found" : "http_error";
      reply(res, res.status, error_body(res.status, code, "no route for " + req.method + " " + req.path));
    });
    sv.set_logger([](const httplib::Request& req, const httplib::Response& res) {
      spdlog::debug("{} {} -> {}", req.method, req.path, res.status);
    });
  }

  void stream_events(const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    const std::string job = req.matches[2];
    std::size_t from = 0;
    if (req.has_param("from")) {
      try {
        from = std::stoull(req.get_param_value("from"));
      } catch (const std::exception&) {
        throw ServiceError(400, "bad_request", "'from' must be a non-negative integer");
      }
    }
    sessions.job(id, job);  // 404 before the stream starts
    auto cursor = std::make_shared<std::size_t>(from);
    res.set_chunked_content_provider(
        "application/x-ndjson", [this, id, job, cursor](std::size_t, httplib::DataSink& sink) {
          bool done = false;
          std::vector<json> events;
          try {
            events = sessions.wait_events(id, job, *cursor, std::chrono::milliseconds(250), done);
          } catch (const ServiceError&) {
            sink.done();  // session removed mid-stream
            return true;
          }
          for (const auto& e : events) {
            const std::string line = e.dump() + "\n";
            if (!sink.write(line.data(), line.size())) return false;
          }
          *cursor += events.size();
          if (done) sink.done();
          return true;
        });
  }
};

HttpService::HttpService(SessionManager& sessions) : impl_(std::make_unique<Impl>(sessions)) {}

HttpService::~HttpService() { stop(); }

int HttpService::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw Error("service: cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) throw Error("service: cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpService::listen() { impl_->server.listen_after_bind(); }

void HttpService::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

void HttpService::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace spinealign::service
