#pragma once

#include <string>
#include <thread>

#include <httplib.h>

namespace testsupport {

/// In-process HTTP server for backend tests. Register handlers on `server`
/// before calling start().
struct MockServer {
    httplib::Server server;
    int port = 0;
    std::thread thread;

    void start() {
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }

    ~MockServer() {
        server.stop();
        if (thread.joinable()) thread.join();
    }

    std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port); }
};

} // namespace testsupport
