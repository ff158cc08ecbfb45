#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <string>

#include <httplib.h>
#include "pica/lms.hpp"

namespace pica::lms {

// HttpTransport backed by cpp-httplib. https needs the library built with
// CPPHTTPLIB_OPENSSL_SUPPORT.
class HttplibTransport final : public HttpTransport {
 public:
  explicit HttplibTransport(std::chrono::milliseconds timeout = std::chrono::seconds(10)) : timeout_(timeout) {}

  HttpResponse send(const HttpRequest& request) override {
    auto [origin, path] = split_url(request.url);
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
    if (origin.rfind("https://", 0) == 0)
      fail(ErrorKind::InvalidArgument, "this build has no TLS support; https LMS URLs are unavailable");
#endif
    httplib::Client client(origin);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);
    httplib::Headers headers;
    for (const auto& [k, v] : request.headers) headers.emplace(k, v);

    httplib::Result result;
    if (request.method == "GET") {
      result = client.Get(path, headers);
    } else if (request.method == "PUT") {
      result = client.Put(path, headers, request.body, "application/json");
    } else if (request.method == "POST") {
      result = client.Post(path, headers, request.body, "application/json");
    } else {
      fail(ErrorKind::InvalidArgument, "unsupported HTTP method " + request.method);
    }
    if (!result) throw Error(ErrorKind::Transport, "HTTP " + request.method + " failed: " + httplib::to_string(result.error()));

    HttpResponse out;
    out.status = result->status;
    out.body = result->body;
    for (const auto& [k, v] : result->headers) {
      std::string key = k;
      std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      out.headers[key] = v;
    }
    return out;
  }

  static std::pair<std::string, std::string> split_url(const std::string& url) {
    auto scheme = url.find("://");
    if (scheme == std::string::npos) fail(ErrorKind::InvalidArgument, "not an absolute URL: " + url);
    auto path = url.find('/', scheme + 3);
    if (path == std::string::npos) return {url, "/"};
    return {url.substr(0, path), url.substr(path)};
  }

 private:
  std::chrono::milliseconds timeout_;
};

}  // namespace pica::lms
