#include "medvrag/gateway.hpp"

#include <chrono>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"

namespace mvrag {

std::string flatten_prompt(const PromptRequest& req) {
    std::string out;
    for (const auto& m : req.messages) {
        out += m.role;
        out += ": ";
        out += m.text;
        out += "\n";
    }
    return out;
}

std::uint64_t request_digest(const PromptRequest& req) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ull;
        }
        h ^= 0xff;
        h *= 1099511628211ull;
    };
    for (const auto& m : req.messages) {
        mix(m.role);
        mix(m.text);
        for (const auto& ref : m.image_refs) mix(ref);
    }
    mix(req.model_tag);
    mix(std::to_string(req.temperature));
    mix(std::to_string(req.max_new_tokens));
    return h;
}

MockBackend::MockBackend(std::vector<Rule> script, std::string default_response, bool images)
    : script_(std::move(script)), default_response_(std::move(default_response)),
      images_(images) {}

MockBackend::MockBackend(std::function<std::string(const PromptRequest&)> fn, bool images)
    : fn_(std::move(fn)), images_(images) {}

MockBackend::MockBackend(std::vector<Rule> script, const char* default_response, bool images)
    : MockBackend(std::move(script), std::string(default_response), images) {}

void MockBackend::set_jitter(std::uint64_t seed, int max_delay_us) {
    jitter_state_ = seed ? seed : 1;
    max_delay_us_ = max_delay_us;
}

std::string MockBackend::complete(const PromptRequest& req) {
    if (max_delay_us_ > 0) {
        std::uint64_t x;
        {
            std::lock_guard<std::mutex> lock(mu_);
            jitter_state_ ^= jitter_state_ << 13;
            jitter_state_ ^= jitter_state_ >> 7;
            jitter_state_ ^= jitter_state_ << 17;
            x = jitter_state_;
        }
        std::this_thread::sleep_for(std::chrono::microseconds(x % std::uint64_t(max_delay_us_)));
    }

    std::string prompt = flatten_prompt(req);
    std::uint64_t digest = request_digest(req);
    std::string response;
    if (fn_) {
        response = fn_(req);
    } else {
        response = default_response_;
        std::ostringstream hex;
        hex << "digest:" << std::hex << digest;
        for (const auto& rule : script_) {
            if (rule.matcher == hex.str() || prompt.find(rule.matcher) != std::string::npos) {
                response = rule.response;
                break;
            }
        }
    }
    {
        std::lock_guard<std::mutex> lock(mu_);
        transcript_.push_back({digest, prompt, response});
    }
    return response;
}

std::vector<TranscriptEntry> MockBackend::transcript() const {
    std::lock_guard<std::mutex> lock(mu_);
    return transcript_;
}

std::size_t MockBackend::call_count() const {
    std::lock_guard<std::mutex> lock(mu_);
    return transcript_.size();
}

HttpBackend::HttpBackend(std::string endpoint_url, std::string auth_token,
                         std::string model_tag, int timeout_seconds, int max_retries,
                         bool images)
    : auth_token_(std::move(auth_token)), model_tag_(std::move(model_tag)),
      timeout_seconds_(timeout_seconds), max_retries_(max_retries), images_(images) {
    // Split "scheme://host[:port]/path".
    auto pos = endpoint_url.find("://");
    if (pos == std::string::npos) throw std::invalid_argument("malformed endpoint URL");
    auto path_pos = endpoint_url.find('/', pos + 3);
    if (path_pos == std::string::npos) {
        scheme_host_ = endpoint_url;
        path_ = "/v1/chat/completions";
    } else {
        scheme_host_ = endpoint_url.substr(0, path_pos);
        path_ = endpoint_url.substr(path_pos);
    }
}

std::string HttpBackend::build_payload(const PromptRequest& req) const {
    nlohmann::ordered_json j;
    j["model"] = req.model_tag.empty() ? model_tag_ : req.model_tag;
    j["temperature"] = req.temperature;
    j["max_tokens"] = req.max_new_tokens;
    auto messages = nlohmann::ordered_json::array();
    for (const auto& m : req.messages) {
        nlohmann::ordered_json msg;
        msg["role"] = m.role;
        if (m.image_refs.empty() || !images_) {
            msg["content"] = m.text;
        } else {
            auto parts = nlohmann::ordered_json::array();
            parts.push_back({{"type", "text"}, {"text", m.text}});
            for (const auto& ref : m.image_refs)
                parts.push_back({{"type", "image_url"}, {"image_url", {{"url", ref}}}});
            msg["content"] = parts;
        }
        messages.push_back(msg);
    }
    j["messages"] = messages;
    return j.dump();
}

std::string HttpBackend::complete(const PromptRequest& req) {
    std::string payload = build_payload(req);
    std::string last_error;
    for (int attempt = 0; attempt <= max_retries_; ++attempt) {
        httplib::Client client(scheme_host_);
        client.set_read_timeout(timeout_seconds_, 0);
        client.set_connection_timeout(timeout_seconds_, 0);
        httplib::Headers headers;
        if (!auth_token_.empty())
            headers.emplace("Authorization", "Bearer " + auth_token_);
        auto res = client.Post(path_, headers, payload, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
        } else if (res->status != 200) {
            last_error = "HTTP " + std::to_string(res->status) + ": " +
                         res->body.substr(0, 512);
        } else {
            auto j = nlohmann::json::parse(res->body, nullptr, false);
            if (j.is_discarded() || !j.contains("choices") || j["choices"].empty())
                throw TransportFailure("malformed completion response");
            const auto& msg = j["choices"][0]["message"];
            return msg.value("content", std::string{});
        }
        if (attempt < max_retries_)
            std::this_thread::sleep_for(std::chrono::milliseconds(100 * (1 << attempt)));
    }
    throw TransportFailure(last_error);
}

}  // namespace mvrag
