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

#include "icl/system2.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "icl/errors.hpp"

namespace icl {

namespace {

std::vector<std::string> words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string join_words(const std::vector<std::string>& w) {
  std::string s;
  for (const auto& x : w) {
    if (!s.empty()) s.push_back(' ');
    s += x;
  }
  return s;
}

}  // namespace

void PromptRequest::validate() const {
  if (candidate_names.empty()) throw Error(ErrorKind::EmptyCandidates, "prompt has no candidates");
  std::set<std::string> seen;
  for (const auto& n : candidate_names) {
    if (words(n).empty()) throw Error(ErrorKind::EmptyCandidates, "blank candidate name");
    if (!seen.insert(join_words(words(n))).second) {
      throw Error(ErrorKind::EmptyCandidates, "duplicate candidate '" + n + "'");
    }
  }
}

std::string build_prompt(const PromptRequest& request) {
  request.validate();
  std::string list;
  for (const auto& n : request.candidate_names) {
    if (!list.empty()) list += ", ";
    list += n;
  }
  return "Question: Which category does this image belong to? Choose the most likely one from [" +
         list + "] and answer with exactly one category name.";
}

std::optional<std::string> parse_answer(std::string_view response,
                                        const std::vector<std::string>& candidates) {
  const auto text = words(response);
  if (text.empty()) return std::nullopt;

  struct Span {
    std::size_t cand, lo, hi;
  };
  std::vector<Span> spans;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const auto name = words(candidates[c]);
    if (name.empty() || name.size() > text.size()) continue;
    for (std::size_t i = 0; i + name.size() <= text.size(); ++i) {
      if (std::equal(name.begin(), name.end(), text.begin() + static_cast<std::ptrdiff_t>(i))) {
        spans.push_back({c, i, i + name.size()});
      }
    }
  }
  // A mention inside a longer candidate's mention ("sea" in "sea lion") does not count.
  std::set<std::string> mentioned;
  std::optional<std::size_t> chosen;
  for (const auto& s : spans) {
    const bool nested = std::any_of(spans.begin(), spans.end(), [&](const Span& o) {
      return o.hi - o.lo > s.hi - s.lo && o.lo <= s.lo && s.hi <= o.hi;
    });
    if (nested) continue;
    if (mentioned.insert(join_words(words(candidates[s.cand]))).second) chosen = s.cand;
  }
  if (mentioned.size() != 1) return std::nullopt;
  return candidates[*chosen];
}

MockBackend::MockBackend(std::map<std::uint64_t, std::string> truth, double reliability,
                         std::uint64_t seed)
    : truth_(std::move(truth)), reliability_(reliability), seed_(seed) {
  if (!(reliability >= 0.0 && reliability <= 1.0)) {
    throw Error(ErrorKind::ConfigError, "client.reliability must be in [0,1]");
  }
}

std::map<std::uint64_t, std::string> MockBackend::load_truth_table(
    const std::filesystem::path& csv, const std::map<std::uint32_t, std::string>& names) {
  std::ifstream in(csv);
  if (!in) throw Error(ErrorKind::IoError, "cannot open truth table " + csv.string());
  std::map<std::uint64_t, std::string> truth;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || (lineno == 1 && line.rfind("sample_id", 0) == 0)) continue;
    const auto comma = line.find(',');
    try {
      if (comma == std::string::npos) throw std::invalid_argument("no comma");
      const std::uint64_t id = std::stoull(line.substr(0, comma));
      const auto label = static_cast<std::uint32_t>(std::stoul(line.substr(comma + 1)));
      auto it = names.find(label);
      truth[id] = it != names.end() ? it->second : "class_" + std::to_string(label);
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::FormatError, csv.string() + ":" + std::to_string(lineno) + ": bad row");
    }
  }
  return truth;
}

std::string MockBackend::query(const PromptRequest& request) {
  auto it = truth_.find(request.sample_id);
  if (it == truth_.end()) {
    throw ClientFailure(ClientFailureReason::BadResponse,
                        "mock has no truth for sample " + std::to_string(request.sample_id));
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                    static_cast<std::uint32_t>(request.sample_id),
                    static_cast<std::uint32_t>(request.sample_id >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng) < reliability_) return it->second;
  const auto& c = request.candidate_names;
  if (c.size() >= 2) return "It could be a " + c[0] + " or a " + c[1] + ", I cannot tell.";
  return "I cannot tell which category this is.";
}

ScriptedBackend::ScriptedBackend(std::vector<Entry> entries) {
  for (auto& e : entries) pending_[e.sample_id].push_back(std::move(e.text));
}

std::unique_ptr<ScriptedBackend> ScriptedBackend::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open transcript " + path.string());
  std::vector<Entry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      entries.push_back({j.at("sample_id").get<std::uint64_t>(), j.at("text").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::FormatError,
                  path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return std::make_unique<ScriptedBackend>(std::move(entries));
}

std::string ScriptedBackend::query(const PromptRequest& request) {
  std::lock_guard lock(mu_);
  auto it = pending_.find(request.sample_id);
  std::size_t& next = cursor_[request.sample_id];
  if (it == pending_.end() || next >= it->second.size()) {
    throw ClientFailure(ClientFailureReason::TranscriptExhausted,
                        "no transcript entry left for sample " + std::to_string(request.sample_id));
  }
  return it->second[next++];
}

void HttpBackendConfig::validate() const {
  if (timeout.count() <= 0) throw Error(ErrorKind::ConfigError, "client.timeout_ms must be > 0");
  if (url.rfind("http://", 0) != 0) {
    throw Error(ErrorKind::ConfigError, "client.url must start with http://");
  }
}

HttpBackend::HttpBackend(HttpBackendConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const auto rest = cfg_.url.substr(7);
  const auto slash = rest.find('/');
  scheme_host_port_ = "http://" + rest.substr(0, slash);
  if (slash != std::string::npos) {
    path_prefix_ = rest.substr(slash);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
  }
}

std::string HttpBackend::attempt(const std::string& body) {
  httplib::Client cli(scheme_host_port_);
  const auto sec = cfg_.timeout.count() / 1000;
  const auto usec = (cfg_.timeout.count() % 1000) * 1000;
  cli.set_connection_timeout(sec, usec);
  cli.set_read_timeout(sec, usec);
  cli.set_write_timeout(sec, usec);
  httplib::Headers headers;
  if (!cfg_.token.empty()) headers.emplace("Authorization", "Bearer " + cfg_.token);
  auto res = cli.Post(path_prefix_ + "/v1/chat", headers, body, "application/json");
  if (!res) {
    const auto err = res.error();
    const auto reason = (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read)
                            ? ClientFailureReason::Timeout
                            : ClientFailureReason::TransportError;
    throw ClientFailure(reason, "POST " + cfg_.url + "/v1/chat: " + httplib::to_string(err));
  }
  if (res->status != 200) {
    throw ClientFailure(ClientFailureReason::TransportError,
                        "POST " + cfg_.url + "/v1/chat returned HTTP " + std::to_string(res->status));
  }
  try {
    return nlohmann::json::parse(res->body).at("text").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ClientFailure(ClientFailureReason::BadResponse, std::string("malformed response: ") + e.what());
  }
}

std::string HttpBackend::query(const PromptRequest& request) {
  nlohmann::json body{{"prompt", build_prompt(request)}};
  body["image_ref"] = request.image_ref ? nlohmann::json(*request.image_ref) : nlohmann::json(nullptr);
  const std::string payload = body.dump();
  try {
    return attempt(payload);
  } catch (const ClientFailure&) {
    return attempt(payload);
  }
}

}  // namespace icl
