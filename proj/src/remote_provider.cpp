#include "httplib.h"
#include "json.hpp"
#include "newscast/embed.hpp"

namespace newscast {

RemoteProvider::RemoteProvider(std::string endpoint, std::string model_id, std::size_t dim, std::string token,
                               std::chrono::milliseconds timeout)
    : model_id_(std::move(model_id)), dim_(dim), token_(std::move(token)), timeout_(timeout) {
  const auto scheme_end = endpoint.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("provider endpoint lacks a scheme: " + endpoint);
  const auto path_start = endpoint.find('/', scheme_end + 3);
  base_ = endpoint.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : endpoint.substr(path_start);
}

std::vector<std::vector<double>> RemoteProvider::embed(std::span<const std::string> texts) {
  httplib::Client client(base_);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  httplib::Headers headers;
  if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);

  nlohmann::json body;
  body["model"] = model_id_;
  body["input"] = std::vector<std::string>(texts.begin(), texts.end());
  const auto res = client.Post(path_, headers, body.dump(), "application/json");
  if (!res) throw TransportError("embedding request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw TransportError("embedding request returned HTTP " + std::to_string(res->status));

  const auto reply = nlohmann::json::parse(res->body, nullptr, false);
  if (reply.is_discarded()) throw TransportError("embedding response is not JSON");

  std::vector<std::vector<double>> out;
  try {
    if (reply.contains("vectors")) {
      out = reply["vectors"].get<std::vector<std::vector<double>>>();
    } else if (reply.contains("data")) {
      out.resize(reply["data"].size());
      for (const auto& item : reply["data"]) {
        const auto index = item.value("index", std::size_t{0});
        if (index >= out.size()) throw TransportError("embedding response index out of range");
        out[index] = item["embedding"].get<std::vector<double>>();
      }
    } else {
      throw TransportError("embedding response has neither 'vectors' nor 'data'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw TransportError(std::string("malformed embedding response: ") + e.what());
  }
  if (out.size() != texts.size()) throw TransportError("embedding response has wrong vector count");
  return out;
}

}  // namespace newscast
