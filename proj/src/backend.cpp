#include "chemtown/backend.hpp"

#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "chemtown/errors.hpp"
#include "chemtown/log.hpp"

namespace chemtown::backend {

namespace {

struct ParsedUrl {
    std::string target; // scheme://host[:port]
    std::string prefix; // path without trailing slash, may be empty
};

ParsedUrl parse_base_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        throw ConfigError("base_url must start with http:// or https://");
    std::string scheme = url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https")
        throw ConfigError("unsupported scheme in base_url: " + scheme);
    auto path_start = url.find('/', scheme_end + 3);
    ParsedUrl parsed;
    if (path_start == std::string::npos) {
        parsed.target = url;
    } else {
        parsed.target = url.substr(0, path_start);
        parsed.prefix = url.substr(path_start);
    }
    while (!parsed.prefix.empty() && parsed.prefix.back() == '/') parsed.prefix.pop_back();
    if (parsed.target.size() == scheme_end + 3) throw ConfigError("base_url has no host");
    return parsed;
}

bool is_timeout(httplib::Error err) { return err == httplib::Error::ConnectionTimeout; }

} // namespace

void BackendConfig::validate() const {
    parse_base_url(base_url);
    if (timeout_seconds <= 0) throw ConfigError("timeout must be positive");
    if (backoff_base_seconds < 0) throw ConfigError("backoff base must be non-negative");
    if (max_in_flight == 0) throw ConfigError("max_in_flight must be positive");
    if (api_key_env.empty()) throw ConfigError("api_key_env must be named");
}

struct Client::Gate {
    std::mutex mutex;
    std::condition_variable cv;
    std::size_t in_flight = 0;
    std::size_t limit = 4;

    void acquire() {
        std::unique_lock lock(mutex);
        cv.wait(lock, [&] { return in_flight < limit; });
        ++in_flight;
    }
    void release() {
        {
            std::lock_guard lock(mutex);
            --in_flight;
        }
        cv.notify_one();
    }
};

Client::Client(BackendConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    ParsedUrl parsed = parse_base_url(cfg_.base_url);
    client_target_ = std::move(parsed.target);
    path_prefix_ = std::move(parsed.prefix);
    gate_ = std::make_shared<Gate>();
    gate_->limit = cfg_.max_in_flight;
}

void Client::set_sleep_hook(SleepFn fn) { sleep_ = std::move(fn); }

std::string Client::api_key() const {
    const char* value = std::getenv(cfg_.api_key_env.c_str());
    return value ? value : "";
}

nlohmann::json Client::post_json(const std::string& path, const nlohmann::json& body) const {
    const std::string full_path = path_prefix_ + path;
    const std::string context = "POST " + full_path;
    const std::string payload = body.dump();
    const std::string key = api_key();

    gate_->acquire();
    struct Release {
        Gate* gate;
        ~Release() { gate->release(); }
    } release{gate_.get()};

    auto backoff = [&](std::size_t failed_attempts) {
        auto delay = std::chrono::duration<double>(
            cfg_.backoff_base_seconds * static_cast<double>(1ull << (failed_attempts - 1)));
        if (sleep_)
            sleep_(delay);
        else
            std::this_thread::sleep_for(delay);
    };

    const std::size_t max_attempts = cfg_.max_retries + 1;
    for (std::size_t attempt = 1; attempt <= max_attempts; ++attempt) {
        httplib::Client http(client_target_);
        auto timeout = std::chrono::duration<double>(cfg_.timeout_seconds);
        http.set_connection_timeout(timeout);
        http.set_read_timeout(timeout);
        http.set_write_timeout(timeout);
        httplib::Headers headers;
        if (!key.empty()) headers.emplace("Authorization", "Bearer " + key);
        log::debug(context + " attempt " + std::to_string(attempt));

        httplib::Result result = http.Post(full_path, headers, payload, "application/json");
        if (!result) {
            BackendError::Kind kind =
                is_timeout(result.error()) ? BackendError::Kind::timeout
                                           : BackendError::Kind::transport;
            if (attempt < max_attempts) {
                log::warn(context + " failed (" + httplib::to_string(result.error()) +
                          "), retrying");
                backoff(attempt);
                continue;
            }
            throw BackendError(kind, attempt, context);
        }
        int status = result->status;
        if (status >= 200 && status < 300) {
            nlohmann::json reply = nlohmann::json::parse(result->body, nullptr, false);
            if (reply.is_discarded())
                throw BackendError(BackendError::Kind::malformed_reply, attempt,
                                   context + ": reply is not JSON");
            return reply;
        }
        if (status >= 500 && attempt < max_attempts) {
            log::warn(context + " returned " + std::to_string(status) + ", retrying");
            backoff(attempt);
            continue;
        }
        throw BackendError(BackendError::Kind::status, attempt, context, status);
    }
    throw BackendError(BackendError::Kind::transport, max_attempts, context);
}

std::string Client::chat(const std::vector<Message>& messages, const ChatParams& params) const {
    nlohmann::json body;
    body["model"] = cfg_.model_id;
    auto& msgs = body["messages"] = nlohmann::json::array();
    for (const Message& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
    body["temperature"] = params.temperature;
    if (params.seed) body["seed"] = *params.seed;

    nlohmann::json reply = post_json("/chat/completions", body);
    const auto* choices = reply.contains("choices") ? &reply["choices"] : nullptr;
    if (!choices || !choices->is_array() || choices->empty())
        throw BackendError(BackendError::Kind::malformed_reply, 1,
                           "chat reply has no choices");
    const nlohmann::json& first = (*choices)[0];
    if (!first.contains("message") || !first["message"].contains("content") ||
        !first["message"]["content"].is_string())
        throw BackendError(BackendError::Kind::malformed_reply, 1,
                           "chat reply has no message content");
    return first["message"]["content"].get<std::string>();
}

std::vector<std::vector<double>> Client::embed(const std::vector<std::string>& texts) const {
    nlohmann::json body;
    body["model"] = cfg_.model_id;
    body["input"] = texts;

    nlohmann::json reply = post_json("/embeddings", body);
    if (!reply.contains("data") || !reply["data"].is_array())
        throw BackendError(BackendError::Kind::malformed_reply, 1, "embed reply has no data");
    const nlohmann::json& data = reply["data"];
    if (data.size() != texts.size())
        throw BackendError(BackendError::Kind::malformed_reply, 1,
                           "embed reply count " + std::to_string(data.size()) +
                               " does not match input count " + std::to_string(texts.size()));
    std::vector<std::vector<double>> vectors;
    vectors.reserve(data.size());
    for (const nlohmann::json& item : data) {
        if (!item.contains("embedding") || !item["embedding"].is_array())
            throw BackendError(BackendError::Kind::malformed_reply, 1,
                               "embed reply item has no embedding");
        vectors.push_back(item["embedding"].get<std::vector<double>>());
    }
    return vectors;
}

} // namespace chemtown::backend
