#pragma once

// Transport-independent core of the ingestion server. The HTTP layer is a thin
// adapter over IngestService; tests drive this class directly as well.

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "telecg/analytics.hpp"
#include "telecg/store.hpp"
#include "telecg/wire.hpp"

namespace telecg {

/// One message on a live stream.
struct StreamEvent {
  enum class Type { Batch, Alert, Overflow, End };
  Type type = Type::Batch;
  std::uint32_t seq = 0;  // Batch only
  Json body;
};

std::string to_string(StreamEvent::Type t);

/// Bounded per-subscriber queue. The publisher never blocks: when the queue is
/// full the subscription is marked overflowed and ends.
class Subscription {
 public:
  explicit Subscription(std::size_t capacity) : capacity_(capacity) {}

  /// Returns false if the subscriber was (or just became) disconnected.
  bool push(StreamEvent ev);
  /// Next event, or nullopt on timeout. Backlog events are delivered first.
  std::optional<StreamEvent> pop(std::chrono::milliseconds timeout);
  /// Ends the stream after queued events drain.
  void finish();
  /// Marks the consumer gone; subsequent pushes are discarded.
  void cancel();

  bool overflowed() const;
  bool done() const;

 private:
  friend class IngestService;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<StreamEvent> backlog_;  // history replay, not bounded
  std::deque<StreamEvent> queue_;
  std::size_t capacity_;
  bool overflowed_ = false;
  bool finished_ = false;
  bool cancelled_ = false;
  bool end_sent_ = false;
};

enum class IngestStatus { Accepted, Duplicate, Gap, OutOfRange, Closed };

struct IngestOutcome {
  IngestStatus status = IngestStatus::Accepted;
  IngestAck ack;
};

struct ServiceConfig {
  std::filesystem::path data_dir = "data";
  std::size_t stream_queue_capacity = 256;
  MonitorConfig monitor;
};

struct SessionQuery {
  std::uint32_t sample_rate_hz = 0;
  AdcConfig adc;
  RangeRead read;
};

struct Vitals {
  BeatEstimate beats;
  QualityReport quality;
  double window_s = 0.0;
};

class IngestService {
 public:
  /// Loads the registry and recovers every segment in the data directory.
  explicit IngestService(ServiceConfig config);
  ~IngestService();

  IngestService(const IngestService&) = delete;
  IngestService& operator=(const IngestService&) = delete;

  Patient upsert_patient(Patient p);
  std::vector<Patient> list_patients() const;

  Session create_session(const std::string& device_id, const std::string& patient_id,
                         std::uint32_t sample_rate_hz, const AdcConfig& adc);
  Session get_session(const std::string& session_id) const;
  /// Newest first; an empty patient id lists every session.
  std::vector<Session> list_sessions(const std::string& patient_id) const;
  /// Idempotent; flushes the segment and ends live streams.
  Session close_session(const std::string& session_id);

  IngestOutcome ingest_batch(const std::string& session_id, const SampleBatch& batch);

  SessionQuery query_range(const std::string& session_id, std::uint64_t from_us,
                           std::uint64_t to_us) const;

  /// Without from_seq only future batches are delivered; with it, stored
  /// batches with seq >= from_seq are replayed first.
  std::shared_ptr<Subscription> subscribe(const std::string& session_id,
                                          std::optional<std::uint32_t> from_seq = std::nullopt);
  void unsubscribe(const std::string& session_id, const std::shared_ptr<Subscription>& sub);

  std::vector<Alert> alerts(const std::string& session_id) const;
  Alert acknowledge_alert(const std::string& alert_id);

  Vitals vitals(const std::string& session_id, double window_s) const;

  /// Sessions whose segment could not be recovered, with reasons.
  std::map<std::string, std::string> unavailable_sessions() const;

  /// Closes every writer and ends every stream. Safe to call twice.
  void shutdown();

  const ServiceConfig& config() const { return config_; }

 private:
  struct SessionEntry {
    mutable std::mutex mu;
    Session info;
    std::optional<SegmentWriter> writer;
    std::unique_ptr<SessionMonitor> monitor;
    std::vector<std::shared_ptr<Subscription>> subscribers;
  };

  std::shared_ptr<SessionEntry> find(const std::string& session_id) const;
  void publish_locked(SessionEntry& entry, const StreamEvent& ev);
  void load();
  /// Caller must hold neither registry_mu_ nor any session mutex.
  void persist_registry();
  std::string new_session_id();

  ServiceConfig config_;
  mutable std::shared_mutex registry_mu_;
  std::map<std::string, Patient> patients_;
  std::map<std::string, std::shared_ptr<SessionEntry>> sessions_;
  std::map<std::string, std::string> unavailable_;
  std::set<std::string> acked_alerts_;
  std::mutex persist_mu_;
  std::mt19937_64 id_rng_;
  std::uint64_t last_created_us_ = 0;
  bool shut_down_ = false;
};

/// Device ids: 1..64 chars of [A-Za-z0-9_-].
bool valid_device_id(const std::string& id);

}  // namespace telecg
