#include "telecg/wire.hpp"

#include <chrono>
#include <limits>

#include "telecg/errors.hpp"

namespace telecg {

namespace {

template <typename T>
T require_unsigned(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw ValidationError(std::string("missing field '") + key + "'");
  if (!it->is_number_integer() || (!it->is_number_unsigned() && it->get<std::int64_t>() < 0)) {
    throw ValidationError(std::string("field '") + key + "' must be a non-negative integer");
  }
  const auto v = it->get<std::uint64_t>();
  if (v > std::numeric_limits<T>::max()) {
    throw ValidationError(std::string("field '") + key + "' out of range");
  }
  return static_cast<T>(v);
}

std::string require_string(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) {
    throw ValidationError(std::string("field '") + key + "' must be a string");
  }
  return it->get<std::string>();
}

double require_number(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_number()) {
    throw ValidationError(std::string("field '") + key + "' must be a number");
  }
  return it->get<double>();
}

}  // namespace

std::uint64_t now_us() {
  using namespace std::chrono;
  return static_cast<std::uint64_t>(
      duration_cast<microseconds>(system_clock::now().time_since_epoch()).count());
}

Json to_json(const AdcConfig& adc) {
  return Json{{"vref_v", adc.vref_v}, {"bits", adc.bits}, {"baseline_v", adc.baseline_v}};
}

AdcConfig adc_from_json(const Json& j) {
  if (!j.is_object()) throw ValidationError("adc must be an object");
  AdcConfig adc;
  adc.vref_v = require_number(j, "vref_v");
  adc.bits = static_cast<int>(require_unsigned<std::uint32_t>(j, "bits"));
  adc.baseline_v = j.contains("baseline_v") ? require_number(j, "baseline_v") : adc.vref_v / 2.0;
  return adc;
}

Json to_json(const Patient& p) {
  return Json{{"patient_id", p.patient_id},
              {"display_name", p.display_name},
              {"created_ts_us", p.created_ts_us}};
}

Patient patient_from_json(const Json& j) {
  if (!j.is_object()) throw ValidationError("patient must be an object");
  Patient p;
  p.patient_id = require_string(j, "patient_id");
  p.display_name = j.contains("display_name") ? require_string(j, "display_name") : p.patient_id;
  if (j.contains("created_ts_us")) p.created_ts_us = require_unsigned<std::uint64_t>(j, "created_ts_us");
  return p;
}

std::string to_string(SessionState s) { return s == SessionState::Active ? "Active" : "Closed"; }

SessionState session_state_from_string(const std::string& s) {
  if (s == "Active") return SessionState::Active;
  if (s == "Closed") return SessionState::Closed;
  throw ValidationError("unknown session state '" + s + "'");
}

Json to_json(const Session& s) {
  return Json{{"session_id", s.session_id},
              {"device_id", s.device_id},
              {"patient_id", s.patient_id},
              {"sample_rate_hz", s.sample_rate_hz},
              {"adc", to_json(s.adc)},
              {"state", to_string(s.state)},
              {"created_ts_us", s.created_ts_us},
              {"last_seq_accepted", s.last_seq_accepted}};
}

Session session_from_json(const Json& j) {
  if (!j.is_object()) throw ValidationError("session must be an object");
  Session s;
  s.session_id = j.value("session_id", "");
  s.device_id = require_string(j, "device_id");
  s.patient_id = require_string(j, "patient_id");
  s.sample_rate_hz = require_unsigned<std::uint32_t>(j, "sample_rate_hz");
  s.adc = adc_from_json(j.at("adc"));
  if (j.contains("state")) s.state = session_state_from_string(j.at("state").get<std::string>());
  s.created_ts_us = j.value("created_ts_us", std::uint64_t{0});
  s.last_seq_accepted = j.value("last_seq_accepted", std::int64_t{-1});
  return s;
}

Json to_json(const IngestAck& ack) {
  Json j{{"accepted", ack.accepted}, {"next_expected_seq", ack.next_expected_seq}};
  if (ack.reason) j["reason"] = *ack.reason;
  return j;
}

IngestAck ack_from_json(const Json& j) {
  IngestAck ack;
  ack.accepted = j.at("accepted").get<bool>();
  ack.next_expected_seq = j.at("next_expected_seq").get<std::uint32_t>();
  if (j.contains("reason") && j.at("reason").is_string()) ack.reason = j.at("reason").get<std::string>();
  return ack;
}

Json batch_to_json(const SampleBatch& b) {
  return Json{{"seq", b.seq}, {"start_ts_us", b.start_ts_us}, {"codes", b.codes}, {"flags", b.flags}};
}

SampleBatch batch_from_json(const Json& j) {
  if (!j.is_object()) throw ValidationError("batch must be an object");
  SampleBatch b;
  b.seq = require_unsigned<std::uint32_t>(j, "seq");
  b.start_ts_us = require_unsigned<std::uint64_t>(j, "start_ts_us");
  const auto codes = j.find("codes");
  const auto flags = j.find("flags");
  if (codes == j.end() || !codes->is_array()) throw ValidationError("field 'codes' must be an array");
  if (flags == j.end() || !flags->is_array()) throw ValidationError("field 'flags' must be an array");
  if (codes->size() != flags->size()) throw ValidationError("codes and flags differ in length");
  if (codes->empty()) throw ValidationError("batch must carry at least one sample");
  if (codes->size() > 0xFFFF) throw ValidationError("batch too large (max 65535 samples)");
  b.codes.reserve(codes->size());
  b.flags.reserve(flags->size());
  for (const auto& c : *codes) {
    if (!c.is_number_integer() || (!c.is_number_unsigned() && c.get<std::int64_t>() < 0)) {
      throw ValidationError("codes must be non-negative integers");
    }
    if (c.get<std::uint64_t>() > 0xFFFFFFFFull) throw ValidationError("code exceeds 32 bits");
    b.codes.push_back(c.get<std::uint32_t>());
  }
  for (const auto& f : *flags) {
    if (!f.is_number_integer() || f.get<std::int64_t>() < 0 || f.get<std::int64_t>() > 3) {
      throw ValidationError("flags must be integers in [0, 3]");
    }
    b.flags.push_back(static_cast<std::uint8_t>(f.get<std::int64_t>()));
  }
  if (j.contains("sample_rate_hz")) b.sample_rate_hz = require_unsigned<std::uint32_t>(j, "sample_rate_hz");
  return b;
}

Json to_json(const Alert& a) {
  Json j{{"alert_id", a.alert_id},
         {"session_id", a.session_id},
         {"kind", to_string(a.kind)},
         {"start_ts_us", a.start_ts_us},
         {"acknowledged", a.acknowledged}};
  j["end_ts_us"] = a.end_ts_us ? Json(*a.end_ts_us) : Json(nullptr);
  return j;
}

Alert alert_from_json(const Json& j) {
  Alert a;
  a.alert_id = j.at("alert_id").get<std::string>();
  a.session_id = j.at("session_id").get<std::string>();
  a.kind = alert_kind_from_string(j.at("kind").get<std::string>());
  a.start_ts_us = j.at("start_ts_us").get<std::uint64_t>();
  if (j.contains("end_ts_us") && !j.at("end_ts_us").is_null()) a.end_ts_us = j.at("end_ts_us").get<std::uint64_t>();
  a.acknowledged = j.value("acknowledged", false);
  return a;
}

Json to_json(const QualityReport& q) {
  return Json{{"window_start_us", q.window_start_us},     {"window_len_s", q.window_len_s},
              {"in_range_fraction", q.in_range_fraction}, {"flatline_fraction", q.flatline_fraction},
              {"lead_off_fraction", q.lead_off_fraction}, {"score", q.score}};
}

Json to_json(const BeatEstimate& b) {
  return Json{{"bpm", b.bpm}, {"confidence", b.confidence}, {"beat_ts_us", b.beat_ts_us}};
}

}  // namespace telecg
