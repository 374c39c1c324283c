#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvrag {

struct Message {
    std::string role;
    std::string text;
    std::vector<std::string> image_refs;  // file paths or URLs, resolved at the gateway
};

struct PromptRequest {
    std::vector<Message> messages;
    double temperature = 0.0;
    int max_new_tokens = 1024;
    std::string model_tag;
};

// Stable FNV-1a digest of the rendered prompt; the mock's exact-replay key.
std::uint64_t request_digest(const PromptRequest& req);

struct TransportFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// The only door to any model. The filter and reasoner never do network
// I/O themselves; they hold one of these.
class ModelBackend {
public:
    virtual ~ModelBackend() = default;
    virtual std::string complete(const PromptRequest& req) = 0;
    virtual bool accepts_images() const { return false; }
};

struct TranscriptEntry {
    std::uint64_t digest = 0;
    std::string prompt;    // concatenated message text
    std::string response;
};

// Scripted deterministic backend. Matchers are checked in order; a
// matcher hits on prompt substring or on "digest:<hex>".
class MockBackend : public ModelBackend {
public:
    struct Rule {
        std::string matcher;
        std::string response;
    };

    MockBackend(std::vector<Rule> script, std::string default_response,
                bool images = false);

    // Fully programmable variant for oracle mocks in tests.
    explicit MockBackend(std::function<std::string(const PromptRequest&)> fn,
                         bool images = false);
    // Guard: a string literal second argument would otherwise decay to the
    // bool of the functional overload instead of default_response.
    MockBackend(std::vector<Rule>, const char* default_response, bool images = false);

    std::string complete(const PromptRequest& req) override;
    bool accepts_images() const override { return images_; }

    std::vector<TranscriptEntry> transcript() const;
    std::size_t call_count() const;

    // Optional seeded jitter (microseconds) before answering, to stress
    // completion-order independence in concurrent callers.
    void set_jitter(std::uint64_t seed, int max_delay_us);

private:
    std::vector<Rule> script_;
    std::string default_response_;
    std::function<std::string(const PromptRequest&)> fn_;
    bool images_ = false;
    mutable std::mutex mu_;
    std::vector<TranscriptEntry> transcript_;
    std::uint64_t jitter_state_ = 0;
    int max_delay_us_ = 0;
};

// Chat-completion HTTP client (OpenAI-style /v1/chat/completions).
class HttpBackend : public ModelBackend {
public:
    HttpBackend(std::string endpoint_url, std::string auth_token, std::string model_tag,
                int timeout_seconds = 120, int max_retries = 2, bool images = false);

    std::string complete(const PromptRequest& req) override;
    bool accepts_images() const override { return images_; }

    // Outbound payload for a request; exposed for tests.
    std::string build_payload(const PromptRequest& req) const;

private:
    std::string scheme_host_;
    std::string path_;
    std::string auth_token_;
    std::string model_tag_;
    int timeout_seconds_;
    int max_retries_;
    bool images_;
};

std::string flatten_prompt(const PromptRequest& req);

}  // namespace mvrag
