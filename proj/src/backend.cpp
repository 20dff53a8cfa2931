#include "cmrf/backend.hpp"

#include <cstdlib>

#include "cmrf/codec.hpp"
#include "cmrf/error.hpp"
#include "cmrf/text.hpp"

namespace cmrf {

std::string_view to_string(Role r) {
  switch (r) {
    case Role::rdu: return "rdu";
    case Role::cie: return "cie";
    case Role::cam: return "cam";
  }
  return "cie";
}

std::optional<Role> role_from_string(std::string_view s) {
  if (s == "rdu") return Role::rdu;
  if (s == "cie") return Role::cie;
  if (s == "cam") return Role::cam;
  return std::nullopt;
}

std::string PromptRequest::joined_text() const {
  std::string out;
  for (std::size_t i = 0; i < text_parts.size(); ++i) {
    if (i) out.push_back('\n');
    out += text_parts[i];
  }
  return out;
}

Script make_script(const std::vector<std::string>& rdu, const std::vector<std::string>& cie,
                   const std::vector<std::string>& cam) {
  Script s;
  const auto add = [&](Role role, const std::vector<std::string>& replies) {
    for (std::size_t i = 0; i < replies.size(); ++i) {
      s[{role, static_cast<int>(i) + 1}] = replies[i];
    }
  };
  add(Role::rdu, rdu);
  add(Role::cie, cie);
  add(Role::cam, cam);
  return s;
}

void validate(const BackendConfig& config) {
  if (config.kind == BackendKind::http && !config.base_url && config.transcript_mode != TranscriptMode::replay) {
    throw Error(Errc::invalid_argument, "http backend requires base_url");
  }
  if (config.kind == BackendKind::scripted && !config.script) {
    throw Error(Errc::invalid_argument, "scripted backend requires a script");
  }
  if (config.max_retries < 0) throw Error(Errc::invalid_argument, "max_retries must be >= 0");
  if (!(config.timeout > 0)) throw Error(Errc::invalid_argument, "timeout must be > 0");
  if (config.backoff_base < 0) throw Error(Errc::invalid_argument, "backoff_base must be >= 0");
  if (config.transcript_mode != TranscriptMode::none && !config.transcript) {
    throw Error(Errc::invalid_argument, "transcript mode set without a transcript path");
  }
}

namespace {

void check_request(const PromptRequest& request) {
  if (request.text_parts.empty()) {
    throw Error(Errc::invalid_argument, "prompt request has no text parts");
  }
  if (!(request.sampling.temperature >= 0)) {
    throw Error(Errc::invalid_argument, "temperature must be >= 0");
  }
  if (request.sampling.max_tokens <= 0) {
    throw Error(Errc::invalid_argument, "max_tokens must be positive");
  }
}

}  // namespace

ScriptedBackend::ScriptedBackend(Script script) : script_(std::move(script)) {}

ModelResponse ScriptedBackend::generate(const PromptRequest& request) {
  check_request(request);
  const auto role = static_cast<std::size_t>(request.role);
  const int ordinal = ordinals_[role].fetch_add(1) + 1;
  {
    std::lock_guard lock(log_mutex_);
    log_.push_back(request);
  }
  const auto it = script_.find({request.role, ordinal});
  if (it == script_.end()) {
    throw Error(Errc::script_exhausted, "script has no reply for (" +
                                            std::string(to_string(request.role)) + ", " +
                                            std::to_string(ordinal) + ")");
  }
  ModelResponse r;
  r.text = it->second;
  r.latency = 0.0;
  r.tokens = {text::word_count(request.joined_text()), text::word_count(r.text)};
  return r;
}

std::vector<PromptRequest> ScriptedBackend::calls() const {
  std::lock_guard lock(log_mutex_);
  return log_;
}

std::size_t ScriptedBackend::call_count(Role role) const {
  std::lock_guard lock(log_mutex_);
  std::size_t n = 0;
  for (const auto& c : log_) n += c.role == role;
  return n;
}

RecordingBackend::RecordingBackend(std::unique_ptr<Backend> inner,
                                   const std::filesystem::path& path)
    : inner_(std::move(inner)), out_(path, std::ios::out | std::ios::trunc) {
  if (!out_) throw Error(Errc::io_error, "cannot open transcript for writing: " + path.string());
}

ModelResponse RecordingBackend::generate(const PromptRequest& request) {
  auto response = inner_->generate(request);
  std::lock_guard lock(mutex_);
  const int ordinal = ++ordinals_[static_cast<std::size_t>(request.role)];
  Json line;
  line["role"] = std::string(to_string(request.role));
  line["ordinal"] = ordinal;
  line["request"] = to_json(request);
  line["response"] = to_json(response);
  out_ << line.dump() << '\n';
  out_.flush();
  return response;
}

ReplayBackend::ReplayBackend(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "cannot open transcript: " + path.string());
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto ctx = "transcript line " + std::to_string(line_no);
    const auto j = parse_json(line, ctx);
    ObjectReader r(j, ctx);
    const auto role = role_from_string(r.string("role"));
    if (!role) r.fail("unknown role");
    const int ordinal = static_cast<int>(r.integer("ordinal"));
    request_from_json(r.required("request"));
    table_[{*role, ordinal}] = response_from_json(r.required("response"));
    r.finish();
  }
}

ModelResponse ReplayBackend::generate(const PromptRequest& request) {
  check_request(request);
  const int ordinal = ordinals_[static_cast<std::size_t>(request.role)].fetch_add(1) + 1;
  const auto it = table_.find({request.role, ordinal});
  if (it == table_.end()) {
    throw Error(Errc::replay_mismatch, "transcript has no recorded pair for (" +
                                           std::string(to_string(request.role)) + ", " +
                                           std::to_string(ordinal) + ")");
  }
  return it->second;
}

BackendConfig record_replay(BackendConfig config, const std::filesystem::path& path,
                            TranscriptMode mode) {
  if (mode == TranscriptMode::replay) {
    if (!std::filesystem::is_regular_file(path)) {
      throw Error(Errc::io_error, "transcript not found: " + path.string());
    }
  } else if (mode == TranscriptMode::record) {
    std::ofstream probe(path, std::ios::app);
    if (!probe) throw Error(Errc::io_error, "transcript not writable: " + path.string());
  }
  config.transcript_mode = mode;
  config.transcript = path;
  return config;
}

std::unique_ptr<Backend> make_backend(const BackendConfig& config) {
  validate(config);
  if (config.transcript_mode == TranscriptMode::replay) {
    return std::make_unique<ReplayBackend>(*config.transcript);
  }
  std::unique_ptr<Backend> backend;
  if (config.kind == BackendKind::scripted) {
    backend = std::make_unique<ScriptedBackend>(*config.script);
  } else {
    backend = std::make_unique<HttpBackend>(config);
  }
  if (config.transcript_mode == TranscriptMode::record) {
    backend = std::make_unique<RecordingBackend>(std::move(backend), *config.transcript);
  }
  return backend;
}

}  // namespace cmrf
