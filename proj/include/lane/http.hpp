#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lane/error.hpp"

namespace lane {

class HttpError : public Error {
 public:
  using Error::Error;
};

using HttpHeaders = std::vector<std::pair<std::string, std::string>>;

/// POSTs a JSON body to `url` (http:// or, when built with OpenSSL, https://)
/// and returns the response body. Non-2xx statuses and transport failures
/// throw HttpError.
std::string http_post_json(const std::string& url, const std::string& body,
                           const HttpHeaders& headers, double timeout_seconds);

}  // namespace lane
