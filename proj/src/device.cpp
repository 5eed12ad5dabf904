#include "telecg/device.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "telecg/errors.hpp"
#include "telecg/ingest.hpp"

namespace telecg {

using namespace std::chrono_literals;

void DeviceConfig::validate() const {
  if (!valid_device_id(device_id)) {
    throw ValidationError("device_id must be 1..64 characters of [A-Za-z0-9_-]");
  }
  if (sample_rate_hz == 0) throw ValidationError("sample_rate_hz must be positive");
  if (batch_size == 0) throw ValidationError("batch_size must be positive");
  if (batch_size > 0xFFFF) throw ValidationError("batch_size must be <= 65535");
  if (max_backoff_ms == 0) throw ValidationError("max_backoff_ms must be positive");
  if (batch_size > effective_buffer_capacity()) {
    throw ValidationError("batch_size must not exceed buffer_capacity");
  }
  if (!(pace >= 0.0)) throw ValidationError("pace must be >= 0");
  adc.validate();
}

Json to_json(const TransmitReport& r) {
  Json j{{"device_id", r.device_id},
         {"session_ids", r.session_ids},
         {"samples_produced", r.samples_produced},
         {"samples_sent", r.samples_sent},
         {"batches_produced", r.batches_produced},
         {"batches_sent", r.batches_sent},
         {"batches_dropped", r.batches_dropped},
         {"batches_pending", r.batches_pending},
         {"retries", r.retries},
         {"duration_s", r.duration_s}};
  j["error"] = r.error ? Json(*r.error) : Json(nullptr);
  return j;
}

SynthSource::SynthSource(SynthParams params, double rate_hz, AdcConfig adc)
    : synth_(std::move(params), rate_hz, adc), adc_(adc) {}

std::optional<DigitalSample> SynthSource::next() {
  const auto s = synth_.next();
  return DigitalSample{static_cast<std::uint16_t>(quantize(s.value_mv, adc_)), s.lead_state};
}

std::optional<DigitalSample> RecordedSource::next() {
  if (pos_ >= samples_.size()) return std::nullopt;
  return samples_[pos_++];
}

std::optional<SampleBatch> build_batch(std::deque<PendingSample>& pending, const std::string& session_id,
                                       std::uint32_t seq, std::uint32_t rate_hz, std::uint32_t batch_size) {
  if (pending.empty()) return std::nullopt;
  const std::size_t n = std::min<std::size_t>(pending.size(), batch_size);
  SampleBatch b;
  b.session_id = session_id;
  b.seq = seq;
  b.sample_rate_hz = rate_hz;
  b.start_ts_us = pending.front().ts_us;
  b.codes.reserve(n);
  b.flags.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    b.codes.push_back(pending.front().code);
    b.flags.push_back(pending.front().flags);
    pending.pop_front();
  }
  return b;
}

std::uint32_t backoff_base_ms(std::uint32_t attempt, std::uint32_t max_ms) {
  if (attempt >= 31) return max_ms;
  const std::uint64_t base = std::uint64_t{500} << attempt;
  return static_cast<std::uint32_t>(std::min<std::uint64_t>(base, max_ms));
}

std::uint32_t backoff_delay(std::uint32_t attempt, std::uint32_t max_ms, std::mt19937_64& rng) {
  const auto base = backoff_base_ms(attempt, max_ms);
  std::uniform_real_distribution<double> jitter(0.0, 0.1);
  return base + static_cast<std::uint32_t>(std::floor(base * jitter(rng)));
}

// --- BatchRing ---------------------------------------------------------------

std::size_t BatchRing::push(SampleBatch batch) {
  std::size_t evicted = 0;
  {
    std::lock_guard lock(mu_);
    while (!items_.empty() && samples_ + batch.size() > capacity_) {
      samples_ -= items_.front().size();
      items_.pop_front();
      ++evicted;
    }
    samples_ += batch.size();
    items_.push_back(std::move(batch));
  }
  cv_.notify_all();
  return evicted;
}

std::optional<SampleBatch> BatchRing::wait_front(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  cv_.wait_for(lock, timeout, [this] { return !items_.empty() || closed_; });
  if (items_.empty()) return std::nullopt;
  return items_.front();
}

bool BatchRing::pop_if(std::uint32_t seq) {
  std::lock_guard lock(mu_);
  if (items_.empty() || items_.front().seq != seq) return false;
  samples_ -= items_.front().size();
  items_.pop_front();
  return true;
}

void BatchRing::close() {
  {
    std::lock_guard lock(mu_);
    closed_ = true;
  }
  cv_.notify_all();
}

bool BatchRing::closed() const {
  std::lock_guard lock(mu_);
  return closed_;
}

std::size_t BatchRing::batches() const {
  std::lock_guard lock(mu_);
  return items_.size();
}

std::size_t BatchRing::samples() const {
  std::lock_guard lock(mu_);
  return samples_;
}

std::vector<std::uint32_t> BatchRing::seqs() const {
  std::lock_guard lock(mu_);
  std::vector<std::uint32_t> out;
  for (const auto& b : items_) out.push_back(b.seq);
  return out;
}

// --- Device ------------------------------------------------------------------

Device::Device(DeviceConfig config, std::unique_ptr<Transport> transport)
    : config_(std::move(config)),
      transport_(std::move(transport)),
      ring_(config_.effective_buffer_capacity()),
      sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }),
      jitter_rng_(config_.seed) {
  config_.validate();
  if (!transport_) throw ValidationError("device needs a transport");
}

void Device::produce(SampleSource& source, std::uint64_t total_samples, std::uint64_t epoch_us) {
  const auto wall_start = std::chrono::steady_clock::now();
  std::deque<PendingSample> pending;
  std::uint32_t seq = 0;
  const auto flush = [&](std::uint64_t produced) {
    if (config_.pace > 0.0) {
      const double due_s = static_cast<double>(produced) / config_.sample_rate_hz / config_.pace;
      const auto due = wall_start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                        std::chrono::duration<double>(due_s));
      while (!stop_ && std::chrono::steady_clock::now() < due) {
        std::this_thread::sleep_until(std::min(due, std::chrono::steady_clock::now() + 100ms));
      }
    }
    auto batch = build_batch(pending, "", seq, config_.sample_rate_hz, config_.batch_size);
    if (!batch) return;
    ++seq;
    produced_batches_.fetch_add(1);
    dropped_.fetch_add(ring_.push(std::move(*batch)));
  };

  std::uint64_t i = 0;
  for (; i < total_samples && !stop_; ++i) {
    const auto s = source.next();
    if (!s) break;
    pending.push_back({sample_ts_us(epoch_us, i, config_.sample_rate_hz), s->code, s->flags});
    produced_samples_.fetch_add(1);
    if (pending.size() == config_.batch_size) flush(i + 1);
  }
  if (!stop_) flush(i);
  ring_.close();
}

bool Device::open_session(TransmitReport& report, std::uint32_t& attempt, std::uint64_t& failing_ms) {
  SessionRequest req{config_.device_id, config_.patient_id,
                     config_.patient_name.empty() ? config_.patient_id : config_.patient_name,
                     config_.sample_rate_hz, config_.adc};
  const auto r = transport_->create_session(req);
  if (r.kind == SendResult::Kind::Ok) {
    session_id_ = r.session_id;
    report.session_ids.push_back(session_id_);
    next_wire_seq_ = 0;
    attempt = 0;
    failing_ms = 0;
    return true;
  }
  if (r.kind == SendResult::Kind::Fatal || r.kind == SendResult::Kind::Gap) {
    report.error = "session creation rejected: " + r.error;
    stop_ = true;
    return false;
  }
  ++report.retries;
  const auto delay = backoff_delay(attempt++, config_.max_backoff_ms, jitter_rng_);
  failing_ms += delay;
  sleeper_(std::chrono::milliseconds(delay));
  return false;
}

TransmitReport Device::run(SampleSource& source, std::uint64_t total_samples) {
  TransmitReport report;
  report.device_id = config_.device_id;
  const auto wall_start = std::chrono::steady_clock::now();
  const std::uint64_t epoch = config_.epoch_us != 0 ? config_.epoch_us : now_us();

  std::thread producer([&] { produce(source, total_samples, epoch); });

  std::uint32_t attempt = 0;
  std::uint64_t failing_ms = 0;
  const auto gave_up = [&] { return ring_.closed() && failing_ms >= config_.give_up_ms; };

  while (!stop_) {
    if (session_id_.empty()) {
      if (!open_session(report, attempt, failing_ms) && gave_up()) break;
      continue;
    }
    auto front = ring_.wait_front(100ms);
    if (!front) {
      if (ring_.closed() && ring_.batches() == 0) break;
      continue;
    }
    const std::uint32_t local_seq = front->seq;
    const std::uint32_t wire_seq = local_seq - seq_offset_;
    if (wire_seq < next_wire_seq_) {
      // already acknowledged (ack for it was lost)
      ring_.pop_if(local_seq);
      continue;
    }
    if (wire_seq > next_wire_seq_) {
      seq_offset_ = local_seq - next_wire_seq_;
      continue;
    }

    SampleBatch batch = std::move(*front);
    batch.seq = wire_seq;
    batch.session_id = session_id_;
    const auto r = transport_->send_batch(session_id_, batch);
    switch (r.kind) {
      case SendResult::Kind::Ok:
        ring_.pop_if(local_seq);
        ++report.batches_sent;
        report.samples_sent += batch.size();
        next_wire_seq_ = std::max(next_wire_seq_, r.ack.next_expected_seq);
        attempt = 0;
        failing_ms = 0;
        if (on_sent_) on_sent_(batch);
        break;
      case SendResult::Kind::Gap:
        // the server is missing batches this device no longer holds
        if (r.ack.next_expected_seq < wire_seq) {
          seq_offset_ = local_seq - r.ack.next_expected_seq;
        }
        next_wire_seq_ = r.ack.next_expected_seq;
        break;
      case SendResult::Kind::Transient: {
        ++report.retries;
        const auto delay = backoff_delay(attempt++, config_.max_backoff_ms, jitter_rng_);
        failing_ms += delay;
        if (gave_up()) {
          report.error = "server unreachable: " + r.error;
          stop_ = true;
          break;
        }
        sleeper_(std::chrono::milliseconds(delay));
        break;
      }
      case SendResult::Kind::Fatal:
        report.error = "batch rejected: " + r.error;
        stop_ = true;
        break;
    }
  }
  if (!report.error && gave_up() && ring_.batches() > 0) report.error = "server unreachable";

  stop_ = true;
  producer.join();
  report.samples_produced = produced_samples_.load();
  report.batches_produced = produced_batches_.load();
  report.batches_dropped = dropped_.load();
  report.batches_pending = ring_.batches();
  report.duration_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  return report;
}

TransmitReport run_device(const DeviceConfig& cfg, const SynthParams& params, double duration_s) {
  const auto total = sample_count(cfg.sample_rate_hz, duration_s);
  Device device(cfg, make_http_transport(cfg.server_url));
  SynthSource source(params, cfg.sample_rate_hz, cfg.adc);
  return device.run(source, total);
}

std::vector<TransmitReport> run_fleet(const DeviceConfig& cfg, const SynthParams& params,
                                      double duration_s, std::size_t count) {
  std::vector<TransmitReport> reports(count);
  std::vector<std::thread> threads;
  threads.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    threads.emplace_back([&, i] {
      DeviceConfig c = cfg;
      c.device_id = cfg.device_id + "-" + std::to_string(i);
      c.seed = cfg.seed + i;
      SynthParams p = params;
      p.seed = params.seed + i;
      try {
        reports[i] = run_device(c, p, duration_s);
      } catch (const std::exception& e) {
        reports[i].device_id = c.device_id;
        reports[i].error = e.what();
      }
    });
  }
  for (auto& t : threads) t.join();
  return reports;
}

}  // namespace telecg
