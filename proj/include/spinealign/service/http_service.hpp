#pragma once

#include <memory>
#include <string>

#include "spinealign/service/session.hpp"

namespace spinealign::service {

// REST front end for a SessionManager; routes live under /api/v1.
// Progress of optimize jobs is streamed as NDJSON from
// /api/v1/sessions/{id}/jobs/{job}/events?from=N.
class HttpService {
 public:
  explicit HttpService(SessionManager& sessions);
  ~HttpService();
  HttpService(const HttpService&) = delete;
  HttpService& operator=(const HttpService&) = delete;

  // port 0 picks a free port. Returns the bound port; throws Error on failure.
  int bind(const std::string& host, int port);
  // Blocks until stop() is called.
  void listen();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace spinealign::service
