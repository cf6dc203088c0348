#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "morphlm/platform/platform.hpp"

namespace morphlm::platform {

/// HTTP+JSON front end of a Platform; routes are listed in docs/api.md.
class PlatformServer {
public:
    /// `static_dir`, when non-empty, is served under "/".
    explicit PlatformServer(Platform& platform, std::filesystem::path static_dir = {});
    ~PlatformServer();
    PlatformServer(const PlatformServer&) = delete;
    PlatformServer& operator=(const PlatformServer&) = delete;

    /// Binds (port 0 picks a free port) and serves on a background thread.
    int start(const std::string& host, int port);
    /// Blocks serving on the calling thread.
    bool listen(const std::string& host, int port);
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace morphlm::platform
