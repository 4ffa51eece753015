#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace chemtown::backend {

struct BackendConfig {
    std::string base_url;                          // e.g. http://127.0.0.1:8080/v1
    std::string api_key_env = "CHEMTOWN_API_KEY";  // name of the env var holding the key
    std::string model_id;
    double timeout_seconds = 30.0;
    std::size_t max_retries = 3;
    double backoff_base_seconds = 1.0; // doubles per retry
    std::size_t max_in_flight = 4;

    void validate() const;
};

struct Message {
    std::string role;
    std::string content;
};

struct ChatParams {
    double temperature = 0.0;
    std::optional<std::uint64_t> seed;
};

/// HTTP JSON client for the chat-completions and embeddings endpoints.
/// Transport failures and 5xx responses are retried up to max_retries with
/// doubled backoff; 4xx responses fail immediately. Stateless per call and
/// safe for concurrent use; max_in_flight bounds concurrent requests.
class Client {
public:
    explicit Client(BackendConfig cfg);

    using SleepFn = std::function<void(std::chrono::duration<double>)>;
    /// Replaces the backoff sleep (tests install a recorder). nullptr restores
    /// the real sleep.
    void set_sleep_hook(SleepFn fn);

    /// POST {base_url}/chat/completions; returns the first choice's message content.
    std::string chat(const std::vector<Message>& messages, const ChatParams& params = {}) const;

    /// POST {base_url}/embeddings; one vector per input, order preserved.
    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) const;

    const BackendConfig& config() const { return cfg_; }

private:
    nlohmann::json post_json(const std::string& path, const nlohmann::json& body) const;
    std::string api_key() const;

    BackendConfig cfg_;
    std::string client_target_; // scheme://host[:port]
    std::string path_prefix_;   // leading path of base_url, may be empty
    SleepFn sleep_;

    struct Gate;
    std::shared_ptr<Gate> gate_; // bounds in-flight requests
};

} // namespace chemtown::backend
