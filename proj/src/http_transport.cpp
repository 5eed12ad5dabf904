#include <httplib.h>

#include "telecg/device.hpp"

namespace telecg {

namespace {

constexpr const char* kJson = "application/json";

std::string describe(const httplib::Result& res) {
  if (!res) return httplib::to_string(res.error());
  std::string msg = "HTTP " + std::to_string(res->status);
  try {
    const auto j = Json::parse(res->body);
    if (j.contains("error")) msg += ": " + j.at("error").get<std::string>();
    if (j.contains("reason")) msg += ": " + j.at("reason").get<std::string>();
  } catch (const std::exception&) {
  }
  return msg;
}

SendResult::Kind classify(int status) {
  if (status >= 200 && status < 300) return SendResult::Kind::Ok;
  if (status == 409) return SendResult::Kind::Gap;
  if (status >= 500 || status == 408 || status == 429) return SendResult::Kind::Transient;
  return SendResult::Kind::Fatal;
}

class HttpTransport final : public Transport {
 public:
  explicit HttpTransport(const std::string& url) : client_(url) {
    client_.set_connection_timeout(2, 0);
    client_.set_read_timeout(15, 0);
    client_.set_write_timeout(15, 0);
    client_.set_keep_alive(true);
    client_.set_tcp_nodelay(true);
  }

  CreateResult create_session(const SessionRequest& req) override {
    CreateResult out;
    const Json patient{{"patient_id", req.patient_id}, {"display_name", req.patient_name}};
    auto pres = client_.Post("/api/v1/patients", patient.dump(), kJson);
    if (!pres || classify(pres->status) != SendResult::Kind::Ok) {
      out.kind = pres ? classify(pres->status) : SendResult::Kind::Transient;
      out.error = describe(pres);
      return out;
    }
    const Json body{{"device_id", req.device_id},
                    {"patient_id", req.patient_id},
                    {"sample_rate_hz", req.sample_rate_hz},
                    {"adc", to_json(req.adc)}};
    auto res = client_.Post("/api/v1/sessions", body.dump(), kJson);
    out.kind = res ? classify(res->status) : SendResult::Kind::Transient;
    if (out.kind != SendResult::Kind::Ok) {
      out.error = describe(res);
      return out;
    }
    try {
      out.session_id = Json::parse(res->body).at("session_id").get<std::string>();
    } catch (const std::exception& e) {
      out.kind = SendResult::Kind::Fatal;
      out.error = std::string("bad session response: ") + e.what();
    }
    return out;
  }

  SendResult send_batch(const std::string& session_id, const SampleBatch& batch) override {
    SendResult out;
    auto res = client_.Post("/api/v1/sessions/" + session_id + "/batches", batch_to_json(batch).dump(), kJson);
    if (!res) {
      out.kind = SendResult::Kind::Transient;
      out.error = describe(res);
      return out;
    }
    out.http_status = res->status;
    out.kind = classify(res->status);
    if (out.kind == SendResult::Kind::Ok || out.kind == SendResult::Kind::Gap) {
      try {
        out.ack = ack_from_json(Json::parse(res->body));
      } catch (const std::exception& e) {
        out.kind = SendResult::Kind::Transient;
        out.error = std::string("bad ack: ") + e.what();
        return out;
      }
    }
    if (out.kind != SendResult::Kind::Ok) out.error = describe(res);
    return out;
  }

 private:
  httplib::Client client_;
};

}  // namespace

std::unique_ptr<Transport> make_http_transport(const std::string& server_url) {
  return std::make_unique<HttpTransport>(server_url);
}

}  // namespace telecg
