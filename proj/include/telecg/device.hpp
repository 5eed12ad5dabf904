#pragma once

// Simulated patient-side unit: samples a source at a fixed rate on a virtual
// clock, packs batches, and ships them to the ingest server with retry,
// exponential backoff and a bounded drop-oldest buffer.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "telecg/batch.hpp"
#include "telecg/signal.hpp"
#include "telecg/wire.hpp"

namespace telecg {

struct DeviceConfig {
  std::string device_id = "esp32-sim";
  std::string server_url = "http://127.0.0.1:8080";
  std::string patient_id = "patient-1";
  std::string patient_name;  // defaults to patient_id
  std::uint32_t sample_rate_hz = 250;
  std::uint32_t batch_size = 50;
  std::uint32_t buffer_capacity = 0;  // samples; 0 means 60 s worth
  std::uint32_t max_backoff_ms = 30000;
  /// Once all samples are produced, stop retrying after this much cumulative
  /// backoff without a successful send.
  std::uint32_t give_up_ms = 60000;
  /// 0 runs on the virtual clock as fast as possible; 1 is real time; k is k x real time.
  double pace = 0.0;
  AdcConfig adc;
  std::uint64_t epoch_us = 0;  // virtual clock origin; 0 means wall clock at start
  std::uint64_t seed = 0;      // backoff jitter

  std::uint32_t effective_buffer_capacity() const {
    return buffer_capacity != 0 ? buffer_capacity : 60 * sample_rate_hz;
  }
  void validate() const;
};

struct TransmitReport {
  std::string device_id;
  std::vector<std::string> session_ids;
  std::uint64_t samples_produced = 0;
  std::uint64_t samples_sent = 0;
  std::uint64_t batches_produced = 0;
  std::uint64_t batches_sent = 0;
  std::uint64_t batches_dropped = 0;  // evicted from a full buffer
  std::uint64_t batches_pending = 0;  // still buffered when the device gave up
  std::uint64_t retries = 0;
  double duration_s = 0.0;
  std::optional<std::string> error;

  bool ok() const { return !error && batches_dropped == 0 && batches_pending == 0; }
};

Json to_json(const TransmitReport& r);

// --- sources ---------------------------------------------------------------

struct DigitalSample {
  std::uint16_t code = 0;
  std::uint8_t flags = 0;
};

class SampleSource {
 public:
  virtual ~SampleSource() = default;
  /// nullopt when the source is exhausted.
  virtual std::optional<DigitalSample> next() = 0;
};

/// Synthetic ECG pushed through the ADC model.
class SynthSource : public SampleSource {
 public:
  SynthSource(SynthParams params, double rate_hz, AdcConfig adc);
  std::optional<DigitalSample> next() override;

 private:
  EcgSynthesizer synth_;
  AdcConfig adc_;
};

/// Replays a fixed recording.
class RecordedSource : public SampleSource {
 public:
  explicit RecordedSource(std::vector<DigitalSample> samples) : samples_(std::move(samples)) {}
  std::optional<DigitalSample> next() override;
  std::size_t size() const { return samples_.size(); }

 private:
  std::vector<DigitalSample> samples_;
  std::size_t pos_ = 0;
};

// --- batching --------------------------------------------------------------

struct PendingSample {
  std::uint64_t ts_us = 0;
  std::uint16_t code = 0;
  std::uint8_t flags = 0;
};

/// Takes up to `batch_size` samples off the front of `pending`.
/// Returns nullopt when `pending` is empty.
std::optional<SampleBatch> build_batch(std::deque<PendingSample>& pending, const std::string& session_id,
                                       std::uint32_t seq, std::uint32_t rate_hz, std::uint32_t batch_size);

/// min(500 * 2^attempt, max_ms), before jitter.
std::uint32_t backoff_base_ms(std::uint32_t attempt, std::uint32_t max_ms);
/// Base delay plus uniform jitter in [0, 10%] of it.
std::uint32_t backoff_delay(std::uint32_t attempt, std::uint32_t max_ms, std::mt19937_64& rng);

/// Single-producer / single-consumer batch buffer bounded in samples.
/// A full buffer evicts its oldest batches.
class BatchRing {
 public:
  explicit BatchRing(std::size_t capacity_samples) : capacity_(capacity_samples) {}

  /// Returns how many batches were evicted to make room.
  std::size_t push(SampleBatch batch);
  /// Copy of the oldest batch, waiting up to `timeout` for one to arrive.
  std::optional<SampleBatch> wait_front(std::chrono::milliseconds timeout);
  /// Removes the oldest batch if it still carries `seq`.
  bool pop_if(std::uint32_t seq);
  /// Signals that no more batches will be pushed.
  void close();
  bool closed() const;
  std::size_t batches() const;
  std::size_t samples() const;
  std::vector<std::uint32_t> seqs() const;

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<SampleBatch> items_;
  std::size_t capacity_;
  std::size_t samples_ = 0;
  bool closed_ = false;
};

// --- transport -------------------------------------------------------------

struct SendResult {
  enum class Kind {
    Ok,         // accepted (fresh or duplicate)
    Gap,        // server expects an earlier seq
    Transient,  // connection failure or server-side error; retry later
    Fatal       // request can never succeed (unknown/closed session, bad data)
  };
  Kind kind = Kind::Transient;
  int http_status = 0;
  IngestAck ack;
  std::string error;
};

struct SessionRequest {
  std::string device_id;
  std::string patient_id;
  std::string patient_name;
  std::uint32_t sample_rate_hz = 0;
  AdcConfig adc;
};

struct CreateResult {
  SendResult::Kind kind = SendResult::Kind::Transient;
  std::string session_id;
  std::string error;
};

class Transport {
 public:
  virtual ~Transport() = default;
  /// Registers the patient (idempotent) and opens a session.
  virtual CreateResult create_session(const SessionRequest& req) = 0;
  virtual SendResult send_batch(const std::string& session_id, const SampleBatch& batch) = 0;
};

/// HTTP transport against the ingest server's REST API.
std::unique_ptr<Transport> make_http_transport(const std::string& server_url);

// --- device ----------------------------------------------------------------

class Device {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  Device(DeviceConfig config, std::unique_ptr<Transport> transport);

  /// Streams `total_samples` from `source` (fewer if it runs dry) and returns
  /// once everything is acknowledged, the device gives up, or a fatal error.
  TransmitReport run(SampleSource& source, std::uint64_t total_samples);

  /// Overrides how backoff waits are performed (tests use a no-op).
  void set_sleeper(Sleeper sleeper) { sleeper_ = std::move(sleeper); }
  /// Called with each batch after the server accepts it.
  void set_on_sent(std::function<void(const SampleBatch&)> cb) { on_sent_ = std::move(cb); }

  /// Batches left in the buffer after run() returned.
  const BatchRing& buffer() const { return ring_; }

 private:
  void produce(SampleSource& source, std::uint64_t total_samples, std::uint64_t epoch_us);
  bool open_session(TransmitReport& report, std::uint32_t& attempt, std::uint64_t& failing_ms);

  DeviceConfig config_;
  std::unique_ptr<Transport> transport_;
  BatchRing ring_;
  Sleeper sleeper_;
  std::function<void(const SampleBatch&)> on_sent_;
  std::mt19937_64 jitter_rng_;
  std::atomic<bool> stop_{false};
  std::atomic<std::uint64_t> dropped_{0};
  std::atomic<std::uint64_t> produced_batches_{0};
  std::atomic<std::uint64_t> produced_samples_{0};

  std::string session_id_;
  // Batches evicted from the buffer leave a hole in the local numbering; the
  // survivors are shifted down by this much so the session stays contiguous.
  std::uint32_t seq_offset_ = 0;
  std::uint32_t next_wire_seq_ = 0;  // what the server expects next
};

/// Synthetic-source convenience wrapper over Device with the HTTP transport.
TransmitReport run_device(const DeviceConfig& cfg, const SynthParams& params, double duration_s);

/// N independent devices "<device_id>-<i>" on their own threads. Device i's
/// synthetic seed is params.seed + i.
std::vector<TransmitReport> run_fleet(const DeviceConfig& cfg, const SynthParams& params,
                                      double duration_s, std::size_t count);

}  // namespace telecg
