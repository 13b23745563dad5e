// Copyright 2026 The ICL Engine Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace icl {

/// Inquiry sent to the deliberate reasoner for one hard sample.
struct PromptRequest {
  std::uint64_t sample_id = 0;
  std::optional<std::string> image_ref;
  /// Candidate class names in descending System1 posterior.
  std::vector<std::string> candidate_names;
  std::string template_id = "choose-one";

  /// Throws EmptyCandidates when the list is empty or has duplicates.
  void validate() const;
};

std::string build_prompt(const PromptRequest& request);

/// Exact answer from a free-text response: the single candidate mentioned as a
/// whole-word (case-insensitive, punctuation-stripped) sequence. Responses that
/// mention zero or several distinct candidates yield nullopt.
std::optional<std::string> parse_answer(std::string_view response,
                                        const std::vector<std::string>& candidates);

/// Access point for the reasoner. Implementations throw ClientFailure.
class System2Backend {
 public:
  virtual ~System2Backend() = default;
  virtual std::string query(const PromptRequest& request) = 0;
  virtual std::string_view kind() const = 0;
};

/// Oracle backend: answers the true class name with probability `reliability`,
/// otherwise a non-committal sentence naming two candidates.
class MockBackend final : public System2Backend {
 public:
  MockBackend(std::map<std::uint64_t, std::string> truth, double reliability, std::uint64_t seed);

  /// Loads a sample_id,label CSV and maps labels through `names`.
  static std::map<std::uint64_t, std::string> load_truth_table(
      const std::filesystem::path& csv, const std::map<std::uint32_t, std::string>& names);

  std::string query(const PromptRequest& request) override;
  std::string_view kind() const override { return "mock"; }

 private:
  std::map<std::uint64_t, std::string> truth_;
  double reliability_;
  std::uint64_t seed_;
};

/// Replays recorded responses. Each sample id consumes its own entries in
/// transcript order.
class ScriptedBackend final : public System2Backend {
 public:
  struct Entry {
    std::uint64_t sample_id = 0;
    std::string text;
  };

  explicit ScriptedBackend(std::vector<Entry> entries);
  /// One JSON object per line: {"sample_id": int, "text": str}.
  static std::unique_ptr<ScriptedBackend> from_file(const std::filesystem::path& path);

  std::string query(const PromptRequest& request) override;
  std::string_view kind() const override { return "scripted"; }

 private:
  std::mutex mu_;
  std::map<std::uint64_t, std::vector<std::string>> pending_;
  std::map<std::uint64_t, std::size_t> cursor_;
};

struct HttpBackendConfig {
  std::string url;  // e.g. http://127.0.0.1:8080
  std::chrono::milliseconds timeout{10000};
  std::string token;  // bearer token; empty for none
  void validate() const;
};

/// POST {url}/v1/chat with {"prompt", "image_ref"}; expects {"text"}. One retry.
class HttpBackend final : public System2Backend {
 public:
  explicit HttpBackend(HttpBackendConfig cfg);

  std::string query(const PromptRequest& request) override;
  std::string_view kind() const override { return "http"; }

 private:
  std::string attempt(const std::string& body);

  HttpBackendConfig cfg_;
  std::string scheme_host_port_;
  std::string path_prefix_;
};

}  // namespace icl
