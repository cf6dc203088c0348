#include "morphlm/platform/server.hpp"

#include <httplib.h>

#include <thread>

namespace morphlm::platform {

using nlohmann::json;

namespace {

void send(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const ServiceError& e) { send(res, e.http_status(), e.to_json()); }

json parse_body(const httplib::Request& req, bool allow_empty = false) {
    if (req.body.empty()) {
        if (allow_empty) return json::object();
        throw ServiceError("invalid_argument", 400, "request body is empty");
    }
    try {
        return json::parse(req.body);
    } catch (const json::exception& e) {
        throw ServiceError("invalid_json", 400, "request body is not valid JSON", {{"reason", e.what()}});
    }
}

template <class F>
httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
        try {
            f(req, res);
        } catch (const ServiceError& e) {
            send_error(res, e);
        } catch (const json::exception& e) {
            send_error(res, ServiceError("invalid_argument", 400, e.what()));
        } catch (const std::invalid_argument& e) {
            send_error(res, ServiceError("invalid_argument", 400, e.what()));
        } catch (const std::exception& e) {
            send_error(res, ServiceError("internal", 500, e.what()));
        }
    };
}

template <class T, class F>
json array_of(const std::vector<T>& items, F to_json) {
    json out = json::array();
    for (const auto& item : items) out.push_back(to_json(item));
    return out;
}

}  // namespace

struct PlatformServer::Impl {
    explicit Impl(Platform& p) : platform(p) {}
    Platform& platform;
    httplib::Server server;
    std::thread thread;
};

PlatformServer::PlatformServer(Platform& platform, std::filesystem::path static_dir)
    : impl_(std::make_unique<Impl>(platform)) {
    auto& s = impl_->server;
    Platform& p = platform;

    s.Get("/api/health", guarded([](const auto&, auto& res) { send(res, 200, {{"status", "ok"}}); }));
    s.Get("/api/defaults", guarded([](const auto&, auto& res) {
              send(res, 200, {{"hyper", finetune::FinetuneHyper{}.to_json()}});
          }));

    s.Post("/api/datasets", guarded([&p](const httplib::Request& req, auto& res) {
               std::string name, payload;
               if (req.get_header_value("Content-Type").starts_with("application/json")) {
                   const json body = parse_body(req);
                   name = body.value("name", "");
                   payload = body.at("tsv").get<std::string>();
               } else {
                   name = req.get_param_value("name");
                   payload = req.body;
               }
               send(res, 201, p.create_dataset(name, payload).to_json());
           }));
    s.Get("/api/datasets", guarded([&p](const auto&, auto& res) {
              send(res, 200, array_of(p.datasets(), [](const auto& d) { return d.to_json(); }));
          }));
    s.Get(R"(/api/datasets/([^/]+))", guarded([&p](const httplib::Request& req, auto& res) {
              send(res, 200, p.dataset(req.matches[1]).to_json());
          }));
    s.Post(R"(/api/datasets/([^/]+)/preprocess)", guarded([&p](const httplib::Request& req, auto& res) {
               send(res, 200, p.preprocess_dataset(req.matches[1]).to_json());
           }));

    s.Post("/api/jobs", guarded([&p](const httplib::Request& req, auto& res) {
               const json body = parse_body(req);
               const auto hyper = finetune::FinetuneHyper::from_json(body.value("hyper", json::object()));
               const JobRecord job = p.submit_job(body.at("dataset_id").get<std::string>(), hyper);
               send(res, 201, p.job_json(job));
           }));
    s.Get("/api/jobs", guarded([&p](const auto&, auto& res) {
              send(res, 200, array_of(p.jobs(), [&p](const auto& j) { return p.job_json(j); }));
          }));
    s.Get(R"(/api/jobs/([^/]+))", guarded([&p](const httplib::Request& req, auto& res) {
              send(res, 200, p.job_json(p.job(req.matches[1])));
          }));
    s.Post(R"(/api/jobs/([^/]+)/cancel)", guarded([&p](const httplib::Request& req, auto& res) {
               send(res, 200, p.job_json(p.cancel_job(req.matches[1])));
           }));

    s.Get("/api/models", guarded([&p](const auto&, auto& res) {
              send(res, 200, array_of(p.models(), [](const auto& m) { return m.to_json(); }));
          }));
    s.Get(R"(/api/models/([^/]+))", guarded([&p](const httplib::Request& req, auto& res) {
              send(res, 200, p.model(req.matches[1]).to_json());
          }));
    s.Post(R"(/api/models/([^/]+)/deploy)", guarded([&p](const httplib::Request& req, auto& res) {
               const json body = parse_body(req, true);
               const auto params = ServingParams::from_json(body.value("params", json::object()));
               send(res, 201, p.deploy_model(req.matches[1], params).to_json());
           }));

    s.Get("/api/deployments", guarded([&p](const auto&, auto& res) {
              send(res, 200, array_of(p.deployments(), [](const auto& d) { return d.to_json(); }));
          }));
    s.Get(R"(/api/deployments/([^/]+))", guarded([&p](const httplib::Request& req, auto& res) {
              send(res, 200, p.deployment(req.matches[1]).to_json());
          }));
    s.Post(R"(/api/deployments/([^/]+)/predict)", guarded([&p](const httplib::Request& req, auto& res) {
               const json body = parse_body(req);
               send(res, 200, p.predict(req.matches[1], body.at("text").get<std::string>()).to_json());
           }));
    s.Post(R"(/api/deployments/([^/]+)/start)", guarded([&p](const httplib::Request& req, auto& res) {
               send(res, 200, p.start_deployment(req.matches[1]).to_json());
           }));
    s.Delete(R"(/api/deployments/([^/]+))", guarded([&p](const httplib::Request& req, auto& res) {
                 send(res, 200, p.stop_deployment(req.matches[1]).to_json());
             }));

    if (!static_dir.empty()) s.set_mount_point("/", static_dir.string());

    s.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
        if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
        const std::string code = res.status == 404 ? "not_found" : "http_error";
        send(res, res.status, ServiceError(code, res.status, "no route for " + req.method + " " + req.path).to_json());
        return httplib::Server::HandlerResponse::Handled;
    });
}

PlatformServer::~PlatformServer() { stop(); }

int PlatformServer::start(const std::string& host, int port) {
    int bound = port;
    if (port == 0) {
        bound = impl_->server.bind_to_any_port(host);
    } else if (!impl_->server.bind_to_port(host, port)) {
        bound = -1;
    }
    if (bound < 0) throw std::runtime_error("platform server: cannot bind " + host + ":" + std::to_string(port));
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return bound;
}

bool PlatformServer::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }

void PlatformServer::stop() {
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace morphlm::platform
