#include "lane/http.hpp"

#include <chrono>

#include "httplib.h"

namespace lane {

std::string http_post_json(const std::string& url, const std::string& body,
                           const HttpHeaders& headers, double timeout_seconds) {
  // Split "scheme://host[:port]" from the path.
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw HttpError("malformed URL '" + url + "'");
  const auto path_start = url.find('/', scheme_end + 3);
  const std::string origin = url.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

  httplib::Client client(origin);
  if (!client.is_valid()) throw HttpError("unsupported URL '" + url + "'");
  const auto timeout = std::chrono::milliseconds(static_cast<long>(timeout_seconds * 1000.0));
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);

  httplib::Headers hs;
  for (const auto& [k, v] : headers) hs.emplace(k, v);
  auto res = client.Post(path, hs, body, "application/json");
  if (!res) {
    throw HttpError("POST " + url + " failed: " + httplib::to_string(res.error()));
  }
  if (res->status < 200 || res->status >= 300) {
    throw HttpError("POST " + url + " returned HTTP " + std::to_string(res->status) + ": " +
                    res->body.substr(0, 200));
  }
  return res->body;
}

}  // namespace lane
