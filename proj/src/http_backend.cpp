#include <chrono>
#include <cstdlib>
#include <fstream>
#include <random>
#include <regex>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <openssl/evp.h>

#include "cmrf/backend.hpp"
#include "cmrf/codec.hpp"
#include "cmrf/error.hpp"

namespace cmrf {

namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path before /v1/chat/completions, no trailing slash
};

Endpoint split_base_url(const std::string& url) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) {
    throw Error(Errc::invalid_argument, "base_url must be an http(s) URL: " + url);
  }
  Endpoint e{m[1].str(), m[2].str()};
  while (!e.prefix.empty() && e.prefix.back() == '/') e.prefix.pop_back();
  return e;
}

std::string mime_for(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".png") return "image/png";
  if (ext == ".gif") return "image/gif";
  if (ext == ".webp") return "image/webp";
  if (ext == ".bmp") return "image/bmp";
  return "image/jpeg";
}

std::string base64(const std::string& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

bool is_url(const std::string& ref) {
  return ref.rfind("data:", 0) == 0 || ref.find("://") != std::string::npos;
}

std::string image_url_for(const std::string& ref) {
  if (is_url(ref)) return ref;
  std::ifstream in(ref, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot read image: " + ref);
  std::ostringstream buf;
  buf << in.rdbuf();
  return "data:" + mime_for(ref) + ";base64," + base64(buf.str());
}

bool transient_status(int status) { return status == 429 || status >= 500; }

}  // namespace

std::string build_chat_body(const BackendConfig& config, const PromptRequest& request) {
  Json content = Json::array();
  for (const auto& ref : request.image_refs) {
    content.push_back(Json{{"type", "image_url"}, {"image_url", Json{{"url", image_url_for(ref)}}}});
  }
  for (const auto& part : request.text_parts) {
    content.push_back(Json{{"type", "text"}, {"text", part}});
  }
  Json body;
  body["model"] = config.model_name;
  body["messages"] = Json::array({Json{{"role", "user"}, {"content", std::move(content)}}});
  body["temperature"] = request.sampling.temperature;
  body["max_tokens"] = request.sampling.max_tokens;
  if (request.sampling.seed) body["seed"] = *request.sampling.seed;
  return body.dump();
}

HttpBackend::HttpBackend(BackendConfig config)
    : config_(std::move(config)), rng_state_(config_.jitter_seed) {
  if (!config_.base_url) {
    if (const char* env = std::getenv("CMRF_BASE_URL")) config_.base_url = env;
  }
  if (!config_.base_url) throw Error(Errc::invalid_argument, "http backend requires base_url");
  split_base_url(*config_.base_url);
  if (config_.api_key) {
    api_key_ = *config_.api_key;
  } else if (const char* env = std::getenv("CMRF_API_KEY")) {
    api_key_ = env;
  }
}

ModelResponse HttpBackend::generate(const PromptRequest& request) {
  if (request.text_parts.empty()) throw Error(Errc::invalid_argument, "prompt request has no text parts");
  const auto endpoint = split_base_url(*config_.base_url);
  const auto body = build_chat_body(config_, request);
  const auto path = endpoint.prefix + "/v1/chat/completions";

  httplib::Client client(endpoint.origin);
  const auto secs = std::chrono::duration<double>(config_.timeout);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(secs));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(secs));
  client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(secs));
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  std::string last_error;
  std::optional<std::pair<int, std::string>> last_status;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      const double cap = config_.backoff_base * static_cast<double>(1ULL << (attempt - 1));
      double wait;
      {
        std::lock_guard lock(rng_mutex_);
        std::mt19937_64 gen(rng_state_++);
        wait = std::uniform_real_distribution<double>(0.0, cap)(gen);
      }
      std::this_thread::sleep_for(std::chrono::duration<double>(wait));
    }
    const auto start = std::chrono::steady_clock::now();
    auto res = client.Post(path, headers, body, "application/json");
    const double latency =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!res) {
      last_error = httplib::to_string(res.error());
      last_status.reset();
      continue;
    }
    if (res->status != 200) {
      if (transient_status(res->status)) {
        last_status = {res->status, res->body};
        continue;
      }
      throw EndpointError(res->status, res->body);
    }
    Json j;
    try {
      j = Json::parse(res->body);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(Errc::malformed_input, std::string("endpoint reply is not JSON: ") + e.what());
    }
    const auto choices = j.find("choices");
    if (choices == j.end() || !choices->is_array() || choices->empty()) {
      throw Error(Errc::malformed_input, "endpoint reply has no choices");
    }
    const auto& message = (*choices)[0].value("message", Json::object());
    ModelResponse out;
    const auto content = message.find("content");
    if (content != message.end() && content->is_string()) {
      out.text = content->get<std::string>();
    } else if (content != message.end() && content->is_array()) {
      for (const auto& part : *content) {
        if (part.value("type", "") == "text") out.text += part.value("text", "");
      }
    }
    out.latency = std::max(0.0, latency);
    if (const auto usage = j.find("usage"); usage != j.end() && usage->is_object()) {
      out.tokens.prompt = usage->value("prompt_tokens", 0);
      out.tokens.completion = usage->value("completion_tokens", 0);
    }
    return out;
  }
  if (last_status) throw EndpointError(last_status->first, last_status->second);
  throw Error(Errc::transport_error,
              "request failed after " + std::to_string(config_.max_retries + 1) +
                  " attempts: " + last_error);
}

}  // namespace cmrf
