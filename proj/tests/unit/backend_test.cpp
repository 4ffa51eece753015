#include <doctest.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include "chemtown/backend.hpp"
#include "chemtown/errors.hpp"
#include "chemtown/log.hpp"
#include "mock_server.hpp"

using namespace chemtown;
using testsupport::MockServer;

namespace {

backend::BackendConfig quick_config(std::string url) {
    backend::BackendConfig cfg;
    cfg.base_url = std::move(url);
    cfg.model_id = "test-model";
    cfg.timeout_seconds = 5.0;
    cfg.max_retries = 3;
    cfg.backoff_base_seconds = 0.01;
    return cfg;
}

void set_chat_reply(httplib::Response& res, const std::string& content) {
    nlohmann::json reply;
    reply["choices"][0]["message"]["content"] = content;
    res.set_content(reply.dump(), "application/json");
}

struct LogCapture {
    std::vector<std::string> lines;
    LogCapture() {
        log::set_verbose(true);
        log::set_sink([this](log::Level, std::string_view msg) {
            lines.push_back(std::string(msg));
        });
    }
    ~LogCapture() {
        log::set_sink(nullptr);
        log::set_verbose(false);
    }
    bool any_contains(std::string_view needle) const {
        for (const std::string& line : lines)
            if (line.find(needle) != std::string::npos) return true;
        return false;
    }
};

} // namespace

TEST_SUITE("backend") {

TEST_CASE("configs are validated before use") {
    CHECK_NOTHROW(quick_config("http://127.0.0.1:9").validate());
    CHECK_NOTHROW(quick_config("https://example.test/v1").validate());

    CHECK_THROWS_AS(quick_config("ftp://example.test").validate(), ConfigError);
    CHECK_THROWS_AS(quick_config("example.test:8080").validate(), ConfigError);
    CHECK_THROWS_AS(quick_config("http://").validate(), ConfigError);

    auto cfg = quick_config("http://127.0.0.1:9");
    cfg.timeout_seconds = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = quick_config("http://127.0.0.1:9");
    cfg.backoff_base_seconds = -0.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = quick_config("http://127.0.0.1:9");
    cfg.max_in_flight = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = quick_config("http://127.0.0.1:9");
    cfg.api_key_env.clear();
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK_THROWS_AS(backend::Client{cfg}, ConfigError);
}

TEST_CASE("chat requests carry the configured payload") {
    MockServer server;
    nlohmann::json seen;
    server.server.Post("/chat/completions",
                       [&](const httplib::Request& req, httplib::Response& res) {
                           seen = nlohmann::json::parse(req.body);
                           set_chat_reply(res, "pong");
                       });
    server.start();

    backend::Client client(quick_config(server.base_url()));
    backend::ChatParams params;
    params.temperature = 0.25;
    params.seed = 99;
    std::string reply = client.chat({{"system", "be brief"}, {"user", "ping"}}, params);
    CHECK(reply == "pong");
    CHECK(seen["model"] == "test-model");
    CHECK(seen["temperature"] == doctest::Approx(0.25));
    CHECK(seen["seed"] == 99);
    REQUIRE(seen["messages"].size() == 2);
    CHECK(seen["messages"][0]["role"] == "system");
    CHECK(seen["messages"][0]["content"] == "be brief");
    CHECK(seen["messages"][1]["role"] == "user");
    CHECK(seen["messages"][1]["content"] == "ping");

    client.chat({{"user", "again"}});
    CHECK(!seen.contains("seed"));
    CHECK(seen["temperature"] == doctest::Approx(0.0));
}

TEST_CASE("server errors are retried with doubling backoff") {
    MockServer server;
    std::atomic<int> hits{0};
    server.server.Post("/chat/completions",
                       [&](const httplib::Request&, httplib::Response& res) {
                           int n = ++hits;
                           if (n < 3) {
                               res.status = 503;
                               res.set_content("overloaded", "text/plain");
                           } else {
                               set_chat_reply(res, "recovered");
                           }
                       });
    server.start();

    backend::Client client(quick_config(server.base_url()));
    std::vector<double> delays;
    client.set_sleep_hook(
        [&](std::chrono::duration<double> d) { delays.push_back(d.count()); });

    CHECK(client.chat({{"user", "hello"}}) == "recovered");
    CHECK(hits.load() == 3);
    REQUIRE(delays.size() == 2);
    CHECK(delays[0] == doctest::Approx(0.01));
    CHECK(delays[1] == doctest::Approx(0.02));
}

TEST_CASE("client errors fail immediately without retries") {
    MockServer server;
    std::atomic<int> hits{0};
    server.server.Post("/chat/completions",
                       [&](const httplib::Request&, httplib::Response& res) {
                           ++hits;
                           res.status = 401;
                           res.set_content("denied", "text/plain");
                       });
    server.start();

    backend::Client client(quick_config(server.base_url()));
    std::vector<double> delays;
    client.set_sleep_hook(
        [&](std::chrono::duration<double> d) { delays.push_back(d.count()); });
    try {
        client.chat({{"user", "hello"}});
        FAIL("expected BackendError");
    } catch (const BackendError& e) {
        CHECK(e.kind() == BackendError::Kind::status);
        CHECK(e.status_code() == 401);
        CHECK(e.attempts() == 1);
    }
    CHECK(hits.load() == 1);
    CHECK(delays.empty());
}

TEST_CASE("persistent server errors exhaust the retry budget") {
    MockServer server;
    std::atomic<int> hits{0};
    server.server.Post("/chat/completions",
                       [&](const httplib::Request&, httplib::Response& res) {
                           ++hits;
                           res.status = 500;
                           res.set_content("broken", "text/plain");
                       });
    server.start();

    auto cfg = quick_config(server.base_url());
    cfg.max_retries = 2;
    backend::Client client(cfg);
    std::vector<double> delays;
    client.set_sleep_hook(
        [&](std::chrono::duration<double> d) { delays.push_back(d.count()); });
    try {
        client.chat({{"user", "hello"}});
        FAIL("expected BackendError");
    } catch (const BackendError& e) {
        CHECK(e.kind() == BackendError::Kind::status);
        CHECK(e.status_code() == 500);
        CHECK(e.attempts() == 3);
    }
    CHECK(hits.load() == 3);
    REQUIRE(delays.size() == 2);
    CHECK(delays[1] == doctest::Approx(2.0 * delays[0]));
}

TEST_CASE("replies that are not JSON or lack choices are malformed") {
    MockServer server;
    std::atomic<int> hits{0};
    bool junk = true;
    server.server.Post("/chat/completions",
                       [&](const httplib::Request&, httplib::Response& res) {
                           ++hits;
                           if (junk)
                               res.set_content("<html>oops</html>", "text/html");
                           else
                               res.set_content(R"({"choices": []})", "application/json");
                       });
    server.start();

    backend::Client client(quick_config(server.base_url()));
    try {
        client.chat({{"user", "hello"}});
        FAIL("expected BackendError");
    } catch (const BackendError& e) {
        CHECK(e.kind() == BackendError::Kind::malformed_reply);
        CHECK(e.attempts() == 1);
    }
    CHECK(hits.load() == 1); // malformed replies are not retried

    junk = false;
    CHECK_THROWS_AS(client.chat({{"user", "hello"}}), BackendError);
}

TEST_CASE("embeddings come back one vector per input in order") {
    MockServer server;
    server.server.Post("/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
        auto body = nlohmann::json::parse(req.body);
        nlohmann::json reply;
        reply["data"] = nlohmann::json::array();
        for (std::size_t i = 0; i < body["input"].size(); ++i) {
            reply["data"].push_back(
                {{"embedding", {static_cast<double>(i), static_cast<double>(i) + 0.5}}});
        }
        res.set_content(reply.dump(), "application/json");
    });
    server.start();

    backend::Client client(quick_config(server.base_url()));
    auto vectors = client.embed({"alpha", "beta", "gamma"});
    REQUIRE(vectors.size() == 3);
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        REQUIRE(vectors[i].size() == 2);
        CHECK(vectors[i][0] == doctest::Approx(static_cast<double>(i)));
        CHECK(vectors[i][1] == doctest::Approx(static_cast<double>(i) + 0.5));
    }
}

TEST_CASE("short embedding replies are rejected with both counts") {
    MockServer server;
    server.server.Post("/embeddings", [&](const httplib::Request&, httplib::Response& res) {
        nlohmann::json reply;
        reply["data"] = nlohmann::json::array();
        reply["data"].push_back({{"embedding", {1.0}}});
        reply["data"].push_back({{"embedding", {2.0}}});
        res.set_content(reply.dump(), "application/json");
    });
    server.start();

    backend::Client client(quick_config(server.base_url()));
    try {
        client.embed({"a", "b", "c"});
        FAIL("expected BackendError");
    } catch (const BackendError& e) {
        CHECK(e.kind() == BackendError::Kind::malformed_reply);
        CHECK(std::string(e.what()).find("count 2") != std::string::npos);
        CHECK(std::string(e.what()).find("count 3") != std::string::npos);
    }
}

TEST_CASE("the api key is sent as a bearer token and never logged") {
    const char* env_name = "CHEMTOWN_BACKEND_TEST_KEY";
    const std::string sentinel = "sk-sentinel-7f3a1c";
    REQUIRE(setenv(env_name, sentinel.c_str(), 1) == 0);

    MockServer server;
    std::string auth_header;
    server.server.Post("/chat/completions",
                       [&](const httplib::Request& req, httplib::Response& res) {
                           auth_header = req.get_header_value("Authorization");
                           res.status = 500;
                           res.set_content("broken", "text/plain");
                       });
    server.start();

    auto cfg = quick_config(server.base_url());
    cfg.api_key_env = env_name;
    cfg.max_retries = 1;
    backend::Client client(cfg);
    client.set_sleep_hook([](std::chrono::duration<double>) {});

    std::string error_text;
    {
        LogCapture capture;
        try {
            client.chat({{"user", "hello"}});
        } catch (const BackendError& e) {
            error_text = e.what();
        }
        CHECK(capture.any_contains("POST /chat/completions"));
        CHECK(capture.any_contains("retrying"));
        CHECK(!capture.any_contains(sentinel));
    }
    CHECK(auth_header == "Bearer " + sentinel);
    CHECK(!error_text.empty());
    CHECK(error_text.find(sentinel) == std::string::npos);

    REQUIRE(unsetenv(env_name) == 0);
    auth_header = "unset";
    try {
        client.chat({{"user", "hello"}});
    } catch (const BackendError&) {
    }
    CHECK(auth_header.empty()); // no Authorization header without a key
}

TEST_CASE("unreachable hosts surface as transport errors") {
    auto cfg = quick_config("http://127.0.0.1:1");
    cfg.max_retries = 0;
    cfg.timeout_seconds = 2.0;
    backend::Client client(cfg);
    try {
        client.chat({{"user", "hello"}});
        FAIL("expected BackendError");
    } catch (const BackendError& e) {
        bool transportish = e.kind() == BackendError::Kind::transport ||
                            e.kind() == BackendError::Kind::timeout;
        CHECK(transportish);
        CHECK(e.attempts() == 1);
    }
}

TEST_CASE("a path prefix in the base URL is preserved") {
    MockServer server;
    std::atomic<int> plain_hits{0};
    std::atomic<int> prefixed_hits{0};
    server.server.Post("/chat/completions",
                       [&](const httplib::Request&, httplib::Response& res) {
                           ++plain_hits;
                           set_chat_reply(res, "plain");
                       });
    server.server.Post("/v1/chat/completions",
                       [&](const httplib::Request&, httplib::Response& res) {
                           ++prefixed_hits;
                           set_chat_reply(res, "prefixed");
                       });
    server.start();

    backend::Client client(quick_config(server.base_url() + "/v1/"));
    CHECK(client.chat({{"user", "hello"}}) == "prefixed");
    CHECK(prefixed_hits.load() == 1);
    CHECK(plain_hits.load() == 0);
}

TEST_CASE("the in-flight gate serializes requests when told to") {
    MockServer server;
    std::atomic<int> active{0};
    std::atomic<int> high_water{0};
    server.server.Post("/chat/completions",
                       [&](const httplib::Request&, httplib::Response& res) {
                           int now = ++active;
                           int prev = high_water.load();
                           while (prev < now && !high_water.compare_exchange_weak(prev, now)) {
                           }
                           std::this_thread::sleep_for(std::chrono::milliseconds(25));
                           --active;
                           set_chat_reply(res, "done");
                       });
    server.start();

    auto cfg = quick_config(server.base_url());
    cfg.max_in_flight = 1;
    backend::Client client(cfg);

    std::vector<std::thread> workers;
    std::atomic<int> ok{0};
    for (int i = 0; i < 3; ++i) {
        workers.emplace_back([&] {
            if (client.chat({{"user", "hello"}}) == "done") ++ok;
        });
    }
    for (std::thread& w : workers) w.join();
    CHECK(ok.load() == 3);
    CHECK(high_water.load() == 1);
}

} // TEST_SUITE
