#pragma once

// JSON shapes of the HTTP API. Both the server and the device side go through
// these so the two ends cannot drift apart.

#include <optional>
#include <string>

#include <json.hpp>

#include "telecg/analytics.hpp"
#include "telecg/batch.hpp"
#include "telecg/signal.hpp"

namespace telecg {

using Json = nlohmann::json;

struct Patient {
  std::string patient_id;
  std::string display_name;
  std::uint64_t created_ts_us = 0;
};

enum class SessionState { Active, Closed };

struct Session {
  std::string session_id;
  std::string device_id;
  std::string patient_id;
  std::uint32_t sample_rate_hz = 0;
  AdcConfig adc;
  SessionState state = SessionState::Active;
  std::uint64_t created_ts_us = 0;
  std::int64_t last_seq_accepted = -1;
};

struct IngestAck {
  bool accepted = false;
  std::uint32_t next_expected_seq = 0;
  std::optional<std::string> reason;
};

Json to_json(const AdcConfig& adc);
AdcConfig adc_from_json(const Json& j);

Json to_json(const Patient& p);
Patient patient_from_json(const Json& j);

std::string to_string(SessionState s);
SessionState session_state_from_string(const std::string& s);
Json to_json(const Session& s);
Session session_from_json(const Json& j);

Json to_json(const IngestAck& ack);
IngestAck ack_from_json(const Json& j);

/// Batch body as posted by the device: {seq, start_ts_us, codes, flags}.
Json batch_to_json(const SampleBatch& b);
/// Strict parse of a posted batch body; throws ValidationError on bad shape.
SampleBatch batch_from_json(const Json& j);

Json to_json(const Alert& a);
Alert alert_from_json(const Json& j);

Json to_json(const QualityReport& q);
Json to_json(const BeatEstimate& b);

/// Current wall clock, microseconds since the Unix epoch.
std::uint64_t now_us();

}  // namespace telecg
