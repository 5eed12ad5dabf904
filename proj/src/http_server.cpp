#include "telecg/http_server.hpp"

#include <sys/socket.h>

#include <charconv>
#include <limits>

#include <httplib.h>

#include "telecg/errors.hpp"

namespace telecg {

namespace {

constexpr const char* kJson = "application/json";

void reply(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), kJson);
}

void reply_error(httplib::Response& res, int status, const std::string& message) {
  reply(res, status, Json{{"error", message}});
}

// Maps library exceptions onto HTTP statuses.
template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const Json::parse_error& e) {
      reply_error(res, 400, std::string("malformed JSON: ") + e.what());
    } catch (const Json::exception& e) {
      reply_error(res, 422, e.what());
    } catch (const ValidationError& e) {
      reply_error(res, 422, e.what());
    } catch (const NotFoundError& e) {
      reply_error(res, 404, e.what());
    } catch (const StateError& e) {
      reply_error(res, 409, e.what());
    } catch (const StorageError& e) {
      reply_error(res, 503, e.what());
    } catch (const std::exception& e) {
      reply_error(res, 500, e.what());
    }
  };
}

std::uint64_t query_u64(const httplib::Request& req, const char* key, std::uint64_t fallback) {
  if (!req.has_param(key)) return fallback;
  const auto text = req.get_param_value(key);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ValidationError(std::string("query parameter '") + key + "' must be a non-negative integer");
  }
  return v;
}

std::string sse_frame(const StreamEvent& ev) {
  std::string out = "event: " + to_string(ev.type) + "\n";
  if (ev.type == StreamEvent::Type::Batch) out += "id: " + std::to_string(ev.seq) + "\n";
  out += "data: " + ev.body.dump() + "\n\n";
  return out;
}

constexpr const char* kUiPlaceholder =
    "<!doctype html><title>telecg</title><p>The clinician viewer assets are not installed. "
    "Start the server with <code>--ui-dir</code> pointing at a built viewer.</p>";

}  // namespace

void parse_listen_address(const std::string& text, std::string& host, int& port) {
  const auto colon = text.rfind(':');
  std::string port_text = text;
  if (colon != std::string::npos) {
    if (colon > 0) host = text.substr(0, colon);
    port_text = text.substr(colon + 1);
  }
  int p = -1;
  const auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), p);
  if (ec != std::errc{} || ptr != port_text.data() + port_text.size() || p < 0 || p > 65535) {
    throw ValidationError("invalid listen address '" + text + "'");
  }
  port = p;
}

HttpServer::HttpServer(IngestService& service, HttpServerConfig config)
    : service_(service), config_(std::move(config)), server_(std::make_unique<httplib::Server>()) {
  const auto threads = std::max<std::size_t>(4, config_.worker_threads);
  server_->new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  // plain SO_REUSEADDR so a second server on the same port fails to bind
  server_->set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  server_->set_tcp_nodelay(true);
  server_->set_keep_alive_max_count(std::numeric_limits<std::size_t>::max());
  server_->set_payload_max_length(16 * 1024 * 1024);
  server_->set_keep_alive_timeout(2);
  install_routes();
}

HttpServer::~HttpServer() { stop(); }

std::string HttpServer::base_url() const {
  return "http://" + config_.host + ":" + std::to_string(port_);
}

int HttpServer::bind() {
  if (config_.port == 0) {
    port_ = server_->bind_to_any_port(config_.host);
    if (port_ < 0) throw std::runtime_error("cannot bind " + config_.host);
  } else {
    if (!server_->bind_to_port(config_.host, config_.port)) {
      throw std::runtime_error("cannot bind " + config_.host + ":" + std::to_string(config_.port) +
                               " (address in use?)");
    }
    port_ = config_.port;
  }
  return port_;
}

void HttpServer::run() { server_->listen_after_bind(); }

int HttpServer::start() {
  bind();
  thread_ = std::thread([this] { run(); });
  server_->wait_until_ready();
  return port_;
}

void HttpServer::stop() {
  stopping_ = true;
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

void HttpServer::install_routes() {
  auto& svr = *server_;
  auto& service = service_;

  svr.Get("/api/v1/health", guarded([](const httplib::Request&, httplib::Response& res) {
            reply(res, 200, Json{{"status", "ok"}});
          }));

  svr.Post("/api/v1/patients", guarded([&service](const httplib::Request& req, httplib::Response& res) {
             auto p = patient_from_json(Json::parse(req.body));
             reply(res, 200, to_json(service.upsert_patient(std::move(p))));
           }));

  svr.Get("/api/v1/patients", guarded([&service](const httplib::Request&, httplib::Response& res) {
            Json out = Json::array();
            for (const auto& p : service.list_patients()) out.push_back(to_json(p));
            reply(res, 200, out);
          }));

  const auto list_sessions = [&service](const std::string& patient_id, httplib::Response& res) {
    Json out = Json::array();
    for (const auto& s : service.list_sessions(patient_id)) out.push_back(to_json(s));
    reply(res, 200, out);
  };

  svr.Get(R"(/api/v1/patients/([^/]+)/sessions)",
          guarded([list_sessions](const httplib::Request& req, httplib::Response& res) {
            list_sessions(req.matches[1].str(), res);
          }));

  svr.Get("/api/v1/sessions", guarded([list_sessions](const httplib::Request& req, httplib::Response& res) {
            list_sessions(req.get_param_value("patient_id"), res);
          }));

  svr.Post("/api/v1/sessions", guarded([&service](const httplib::Request& req, httplib::Response& res) {
             const auto j = Json::parse(req.body);
             if (!j.is_object()) throw ValidationError("session request must be an object");
             const auto session = service.create_session(
                 j.at("device_id").get<std::string>(), j.at("patient_id").get<std::string>(),
                 j.at("sample_rate_hz").get<std::uint32_t>(), adc_from_json(j.at("adc")));
             reply(res, 201, to_json(session));
           }));

  svr.Get(R"(/api/v1/sessions/([^/]+))", guarded([&service](const httplib::Request& req, httplib::Response& res) {
            reply(res, 200, to_json(service.get_session(req.matches[1].str())));
          }));

  svr.Delete(R"(/api/v1/sessions/([^/]+))",
             guarded([&service](const httplib::Request& req, httplib::Response& res) {
               reply(res, 200, to_json(service.close_session(req.matches[1].str())));
             }));

  svr.Post(R"(/api/v1/sessions/([^/]+)/batches)",
           guarded([&service](const httplib::Request& req, httplib::Response& res) {
             const auto session_id = req.matches[1].str();
             SampleBatch batch;
             try {
               batch = batch_from_json(Json::parse(req.body));
             } catch (const Json::exception& e) {
               throw ValidationError(std::string("malformed batch: ") + e.what());
             }
             batch.session_id = session_id;
             const auto outcome = service.ingest_batch(session_id, batch);
             int status = 200;
             switch (outcome.status) {
               case IngestStatus::Accepted:
               case IngestStatus::Duplicate: status = 200; break;
               case IngestStatus::Gap: status = 409; break;
               case IngestStatus::OutOfRange: status = 422; break;
               case IngestStatus::Closed: status = 410; break;
             }
             reply(res, status, to_json(outcome.ack));
           }));

  svr.Get(R"(/api/v1/sessions/([^/]+)/samples)",
          guarded([&service](const httplib::Request& req, httplib::Response& res) {
            const auto from = query_u64(req, "from_us", 0);
            const auto to = query_u64(req, "to_us", std::numeric_limits<std::uint64_t>::max());
            const auto q = service.query_range(req.matches[1].str(), from, to);
            Json samples = Json::array();
            for (const auto& s : q.read.samples) samples.push_back(Json::array({s.ts_us, s.code, s.flags}));
            Json out{{"sample_rate_hz", q.sample_rate_hz}, {"adc", to_json(q.adc)}, {"samples", std::move(samples)}};
            if (q.read.corruption) out["corruption"] = *q.read.corruption;
            reply(res, 200, out);
          }));

  svr.Get(R"(/api/v1/sessions/([^/]+)/alerts)",
          guarded([&service](const httplib::Request& req, httplib::Response& res) {
            Json out = Json::array();
            for (const auto& a : service.alerts(req.matches[1].str())) out.push_back(to_json(a));
            reply(res, 200, out);
          }));

  svr.Get(R"(/api/v1/sessions/([^/]+)/vitals)",
          guarded([&service](const httplib::Request& req, httplib::Response& res) {
            double window_s = 10.0;
            if (req.has_param("window_s")) window_s = std::stod(req.get_param_value("window_s"));
            const auto v = service.vitals(req.matches[1].str(), window_s);
            reply(res, 200, Json{{"window_s", v.window_s}, {"heart_rate", to_json(v.beats)}, {"quality", to_json(v.quality)}});
          }));

  svr.Post(R"(/api/v1/alerts/([^/]+)/ack)",
           guarded([&service](const httplib::Request& req, httplib::Response& res) {
             reply(res, 200, to_json(service.acknowledge_alert(req.matches[1].str())));
           }));

  svr.Get(R"(/api/v1/sessions/([^/]+)/stream)",
          guarded([this, &service](const httplib::Request& req, httplib::Response& res) {
            const auto session_id = req.matches[1].str();
            std::optional<std::uint32_t> from_seq;
            if (req.has_param("from_seq")) {
              const auto v = query_u64(req, "from_seq", 0);
              if (v > std::numeric_limits<std::uint32_t>::max()) throw ValidationError("from_seq out of range");
              from_seq = static_cast<std::uint32_t>(v);
            }
            auto sub = service.subscribe(session_id, from_seq);
            res.set_header("Cache-Control", "no-cache");
            const auto heartbeat = config_.stream_heartbeat;
            res.set_chunked_content_provider(
                "text/event-stream",
                [this, sub, heartbeat](std::size_t, httplib::DataSink& sink) {
                  if (stopping_) {
                    sink.done();
                    return true;
                  }
                  auto ev = sub->pop(heartbeat);
                  if (!ev) {
                    if (sub->done()) {
                      sink.done();
                      return true;
                    }
                    static constexpr char kPing[] = ": ping\n\n";
                    return sink.write(kPing, sizeof(kPing) - 1);
                  }
                  const auto frame = sse_frame(*ev);
                  if (!sink.write(frame.data(), frame.size())) return false;
                  if (ev->type == StreamEvent::Type::Overflow || ev->type == StreamEvent::Type::End) {
                    sink.done();
                  }
                  return true;
                },
                [&service, session_id, sub](bool) { service.unsubscribe(session_id, sub); });
          }));

  if (!config_.ui_dir.empty() && std::filesystem::is_directory(config_.ui_dir)) {
    svr.set_mount_point("/ui", config_.ui_dir.string());
  } else {
    svr.Get("/ui/?", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(kUiPlaceholder, "text/html");
    });
  }
}

}  // namespace telecg
