#pragma once

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <functional>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "transaudio/dsp.hpp"
#include "transaudio/error.hpp"
#include "transaudio/model.hpp"
#include "transaudio/vocab.hpp"
#include "transaudio/waveform.hpp"

namespace transaudio {

enum class EndpointKind { kLocal, kRemote, kStub };

inline std::string_view to_string(EndpointKind k) {
  switch (k) {
    case EndpointKind::kLocal: return "local";
    case EndpointKind::kRemote: return "remote";
    case EndpointKind::kStub: return "stub";
  }
  return "?";
}

inline EndpointKind parse_endpoint_kind(std::string_view s) {
  if (s == "local" || s == "local-model") return EndpointKind::kLocal;
  if (s == "remote" || s == "remote-api") return EndpointKind::kRemote;
  if (s == "stub") return EndpointKind::kStub;
  throw ConfigError("unknown endpoint kind: " + std::string(s));
}

struct RetryPolicy {
  int max_attempts = 4;
  double initial_backoff_s = 0.25;
  double backoff_factor = 2.0;
};

struct EndpointConfig {
  std::string name;
  EndpointKind kind = EndpointKind::kLocal;
  std::string model;                   // local: name of a trained model
  std::string url;                     // remote: http://host[:port]/path
  std::string credential_env;          // remote: variable holding the bearer token
  double rate_limit = 2.0;             // remote: requests per second
  double timeout_s = 10.0;             // remote: per-request connect/read timeout
  RetryPolicy retry;
  std::vector<std::string> responses;  // stub: canned transcripts, cycled

  void validate() const {
    if (name.empty()) throw ConfigError("endpoint needs a name");
    if (kind == EndpointKind::kRemote) {
      if (url.empty()) throw ConfigError("remote endpoint '" + name + "' needs a url");
      if (credential_env.empty()) {
        throw ConfigError("remote endpoint '" + name + "' needs credential_env");
      }
      if (!(rate_limit > 0.0)) throw ConfigError("rate_limit must be positive");
      if (retry.max_attempts < 1) throw ConfigError("retry.max_attempts must be at least 1");
    }
    if (kind == EndpointKind::kStub && responses.empty()) {
      throw ConfigError("stub endpoint '" + name + "' needs responses");
    }
  }
};

class Transcriber {
 public:
  virtual ~Transcriber() = default;
  virtual Transcript transcribe(const Waveform& w) = 0;
  virtual bool deterministic() const { return true; }
};

class LocalTranscriber final : public Transcriber {
 public:
  explicit LocalTranscriber(ModelParams p) : params_(std::move(p)) {}
  Transcript transcribe(const Waveform& w) override { return decode_greedy(params_, w); }
  const ModelParams& params() const { return params_; }

 private:
  ModelParams params_;
};

class StubTranscriber final : public Transcriber {
 public:
  StubTranscriber(std::vector<Transcript> responses) : responses_(std::move(responses)) {
    if (responses_.empty()) throw ConfigError("stub transcriber needs responses");
  }

  Transcript transcribe(const Waveform&) override {
    std::lock_guard lock(mu_);
    return responses_[calls_++ % responses_.size()];
  }

  std::size_t calls() const {
    std::lock_guard lock(mu_);
    return calls_;
  }

 private:
  std::vector<Transcript> responses_;
  mutable std::mutex mu_;
  std::size_t calls_ = 0;
};

// Token bucket with a burst of one: grants are at least 1/rate seconds apart.
// Every grant time is kept so callers can audit the request rate.
class RateLimiter {
 public:
  using Clock = std::chrono::steady_clock;

  explicit RateLimiter(double rate_per_s)
      : interval_(std::chrono::duration_cast<Clock::duration>(
            std::chrono::duration<double>(1.0 / rate_per_s))) {
    if (!(rate_per_s > 0.0)) throw ConfigError("rate limit must be positive");
  }

  void acquire() {
    std::lock_guard lock(mu_);
    auto now = Clock::now();
    if (!grants_.empty() && now < grants_.back() + interval_) {
      std::this_thread::sleep_until(grants_.back() + interval_);
      now = Clock::now();
    }
    grants_.push_back(now);
  }

  std::vector<Clock::time_point> grants() const {
    std::lock_guard lock(mu_);
    return grants_;
  }

  Clock::duration interval() const { return interval_; }

 private:
  Clock::duration interval_;
  mutable std::mutex mu_;
  std::vector<Clock::time_point> grants_;
};

struct RemoteStats {
  std::size_t requests = 0;       // HTTP attempts made
  std::size_t retries = 0;        // attempts beyond the first, summed over calls
  std::size_t unknown_words = 0;  // response words outside the vocabulary, dropped
};

namespace detail {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline ParsedUrl parse_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw ConfigError("url has no scheme: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

}  // namespace detail

// Posts WAV bytes and reads {"transcript": "..."} back. The bearer token is
// read from the named environment variable when the client is built and is
// never written anywhere.
class RemoteTranscriber final : public Transcriber {
 public:
  using Sleeper = std::function<void(double seconds)>;

  RemoteTranscriber(EndpointConfig cfg, Vocab vocab, Sleeper sleeper = {})
      : cfg_(std::move(cfg)), vocab_(std::move(vocab)), limiter_(cfg_.rate_limit),
        sleeper_(sleeper ? std::move(sleeper) : Sleeper([](double s) {
          std::this_thread::sleep_for(std::chrono::duration<double>(s));
        })) {
    cfg_.validate();
    const char* token = std::getenv(cfg_.credential_env.c_str());
    if (token == nullptr || *token == '\0') {
      throw ConfigError("environment variable " + cfg_.credential_env +
                        " is not set for endpoint '" + cfg_.name + "'");
    }
    token_ = token;
    url_ = detail::parse_url(cfg_.url);
  }

  bool deterministic() const override { return false; }

  Transcript transcribe(const Waveform& w) override {
    std::lock_guard lock(mu_);
    const auto bytes = wav_encode(w);
    const std::string body(bytes.begin(), bytes.end());
    httplib::Client client(url_.origin);
    const auto secs = static_cast<time_t>(cfg_.timeout_s);
    const auto usecs = static_cast<time_t>((cfg_.timeout_s - secs) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    const httplib::Headers headers{{"Authorization", "Bearer " + token_}};
    double backoff = cfg_.retry.initial_backoff_s;
    std::string last_failure;
    for (int attempt = 1; attempt <= cfg_.retry.max_attempts; ++attempt) {
      if (attempt > 1) {
        ++stats_.retries;
        sleeper_(backoff);
        backoff *= cfg_.retry.backoff_factor;
      }
      limiter_.acquire();
      ++stats_.requests;
      const auto res = client.Post(url_.path, headers, body, "audio/wav");
      if (!res) {
        last_failure = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      const int status = res->status;
      if (status == 401 || status == 403) {
        throw AuthError("endpoint '" + cfg_.name + "' rejected the credentials (HTTP " +
                        std::to_string(status) + ")");
      }
      if (status == 429 || status >= 500) {
        last_failure = "HTTP " + std::to_string(status);
        continue;
      }
      if (status != 200) {
        throw MalformedResponseError("endpoint '" + cfg_.name + "' answered HTTP " +
                                     std::to_string(status));
      }
      return parse_response(res->body);
    }
    throw TimeoutError("endpoint '" + cfg_.name + "' gave up after " +
                       std::to_string(cfg_.retry.max_attempts) + " attempts (" + last_failure +
                       ")");
  }

  RemoteStats stats() const {
    std::lock_guard lock(mu_);
    return stats_;
  }

  const RateLimiter& limiter() const { return limiter_; }

 private:
  Transcript parse_response(const std::string& body) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception&) {
      throw MalformedResponseError("endpoint '" + cfg_.name + "' returned invalid JSON");
    }
    if (!j.is_object() || !j.contains("transcript") || !j["transcript"].is_string()) {
      throw MalformedResponseError("endpoint '" + cfg_.name +
                                   "' response lacks a string \"transcript\"");
    }
    Transcript out;
    std::istringstream words(j["transcript"].get<std::string>());
    std::string word;
    while (words >> word) {
      if (vocab_.contains(word) && vocab_.is_word(vocab_.id(word))) {
        out.words.push_back(vocab_.id(word));
      } else {
        ++stats_.unknown_words;
      }
    }
    return out;
  }

  EndpointConfig cfg_;
  Vocab vocab_;
  RateLimiter limiter_;
  Sleeper sleeper_;
  std::string token_;
  detail::ParsedUrl url_;
  mutable std::mutex mu_;
  RemoteStats stats_;
};

}  // namespace transaudio
