#pragma once

// Uniform text-generation interface over the vision-language model.

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace cmrf {

/// Which pipeline stage issued a request.
enum class Role { rdu = 0, cie = 1, cam = 2 };
inline constexpr std::size_t kRoleCount = 3;

std::string_view to_string(Role r);
std::optional<Role> role_from_string(std::string_view s);

struct Sampling {
  double temperature = 0.0;
  std::optional<std::int64_t> seed = 0;
  int max_tokens = 512;

  bool operator==(const Sampling&) const = default;
};

struct PromptRequest {
  Role role = Role::cie;
  std::string template_id;
  std::vector<std::string> text_parts;
  std::vector<std::string> image_refs;
  Sampling sampling;

  /// Text parts joined with newlines, as sent to the model.
  std::string joined_text() const;

  bool operator==(const PromptRequest&) const = default;
};

struct TokenCounts {
  int prompt = 0;
  int completion = 0;

  bool operator==(const TokenCounts&) const = default;
};

struct ModelResponse {
  std::string text;
  double latency = 0.0;  // seconds
  TokenCounts tokens;

  bool operator==(const ModelResponse&) const = default;
};

/// Reply table keyed by (role, 1-based per-role call ordinal).
using Script = std::map<std::pair<Role, int>, std::string>;

/// Builds a script from per-role reply lists; element i gets ordinal i+1.
Script make_script(const std::vector<std::string>& rdu, const std::vector<std::string>& cie,
                   const std::vector<std::string>& cam);

enum class BackendKind { scripted, http };
enum class TranscriptMode { none, record, replay };

struct BackendConfig {
  BackendKind kind = BackendKind::scripted;
  std::optional<std::string> base_url;
  std::string model_name = "llava-v1.6-34b";
  double timeout = 60.0;  // seconds
  int max_retries = 2;
  std::optional<Script> script;
  std::optional<std::string> api_key;  // falls back to CMRF_API_KEY
  double backoff_base = 0.5;           // seconds; factor 2, full jitter
  std::uint64_t jitter_seed = 0;
  TranscriptMode transcript_mode = TranscriptMode::none;
  std::optional<std::filesystem::path> transcript;
};

/// Throws invalid_argument when kind-specific requirements are unmet.
void validate(const BackendConfig& config);

class Backend {
 public:
  virtual ~Backend() = default;
  virtual ModelResponse generate(const PromptRequest& request) = 0;
};

/// Table-driven deterministic backend. Zero latency; token counts are word
/// counts. Every request is logged for inspection.
class ScriptedBackend final : public Backend {
 public:
  explicit ScriptedBackend(Script script);

  ModelResponse generate(const PromptRequest& request) override;

  std::vector<PromptRequest> calls() const;
  std::size_t call_count(Role role) const;

 private:
  Script script_;
  std::array<std::atomic<int>, kRoleCount> ordinals_{};
  mutable std::mutex log_mutex_;
  std::vector<PromptRequest> log_;
};

/// OpenAI-compatible chat-completions client.
class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(BackendConfig config);

  ModelResponse generate(const PromptRequest& request) override;

 private:
  BackendConfig config_;
  std::string api_key_;
  std::mutex rng_mutex_;
  std::uint64_t rng_state_;
};

/// Request body for POST {base_url}/v1/chat/completions. Local image files
/// are inlined as base64 data URLs; URLs pass through unchanged.
std::string build_chat_body(const BackendConfig& config, const PromptRequest& request);

/// Wraps another backend and appends every exchange to a transcript file,
/// one JSON record per line.
class RecordingBackend final : public Backend {
 public:
  RecordingBackend(std::unique_ptr<Backend> inner, const std::filesystem::path& path);

  ModelResponse generate(const PromptRequest& request) override;

 private:
  std::unique_ptr<Backend> inner_;
  std::mutex mutex_;
  std::ofstream out_;
  std::array<int, kRoleCount> ordinals_{};
};

/// Serves recorded responses in order, keyed by (role, per-role ordinal).
class ReplayBackend final : public Backend {
 public:
  explicit ReplayBackend(const std::filesystem::path& path);

  ModelResponse generate(const PromptRequest& request) override;

 private:
  std::map<std::pair<Role, int>, ModelResponse> table_;
  std::array<std::atomic<int>, kRoleCount> ordinals_{};
};

/// Returns `config` switched to recording into, or replaying from, the
/// transcript at `path`. Replay requires an existing file; record requires a
/// writable location.
BackendConfig record_replay(BackendConfig config, const std::filesystem::path& path,
                            TranscriptMode mode);

std::unique_ptr<Backend> make_backend(const BackendConfig& config);

}  // namespace cmrf
