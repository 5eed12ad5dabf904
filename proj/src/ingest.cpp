#include "telecg/ingest.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <fstream>

#include "telecg/errors.hpp"

namespace telecg {

namespace fs = std::filesystem;

namespace {

constexpr const char* kRegistryFile = "registry.json";

void write_file_atomically(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0) throw StorageError("cannot write " + tmp.string());
    const char* p = content.data();
    std::size_t left = content.size();
    while (left > 0) {
      const ssize_t n = ::write(fd, p, left);
      if (n < 0) {
        if (errno == EINTR) continue;
        ::close(fd);
        throw StorageError("write failed for " + tmp.string());
      }
      p += n;
      left -= static_cast<std::size_t>(n);
    }
    ::fsync(fd);
    ::close(fd);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw StorageError("rename " + tmp.string() + ": " + ec.message());
  const int dfd = ::open(path.parent_path().c_str(), O_RDONLY | O_DIRECTORY);
  if (dfd >= 0) {
    ::fsync(dfd);
    ::close(dfd);
  }
}

Json alert_event_body(const AlertTransition& t) {
  Json j = to_json(t.alert);
  j["transition"] = t.type == AlertTransition::Type::Opened ? "opened" : "closed";
  return j;
}

std::string session_of_alert(const std::string& alert_id) {
  const auto dash = alert_id.find('-');
  return dash == std::string::npos ? std::string{} : alert_id.substr(0, dash);
}

}  // namespace

bool valid_device_id(const std::string& id) {
  if (id.empty() || id.size() > 64) return false;
  return std::all_of(id.begin(), id.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '_' || c == '-';
  });
}

std::string to_string(StreamEvent::Type t) {
  switch (t) {
    case StreamEvent::Type::Batch: return "batch";
    case StreamEvent::Type::Alert: return "alert";
    case StreamEvent::Type::Overflow: return "overflow";
    case StreamEvent::Type::End: return "end";
  }
  return "?";
}

// --- Subscription ----------------------------------------------------------

bool Subscription::push(StreamEvent ev) {
  {
    std::lock_guard lock(mu_);
    if (cancelled_ || finished_ || overflowed_) return false;
    if (queue_.size() >= capacity_) {
      overflowed_ = true;
    } else {
      queue_.push_back(std::move(ev));
    }
  }
  cv_.notify_all();
  return !overflowed();
}

std::optional<StreamEvent> Subscription::pop(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  const auto ready = [this] {
    return cancelled_ || overflowed_ || !backlog_.empty() || !queue_.empty() || finished_;
  };
  if (!cv_.wait_for(lock, timeout, ready)) return std::nullopt;
  if (cancelled_) return std::nullopt;
  if (!backlog_.empty()) {
    auto ev = std::move(backlog_.front());
    backlog_.pop_front();
    return ev;
  }
  if (overflowed_) {
    if (end_sent_) return std::nullopt;
    end_sent_ = true;
    queue_.clear();
    return StreamEvent{StreamEvent::Type::Overflow, 0,
                       Json{{"reason", "subscriber queue overflow"}, {"capacity", capacity_}}};
  }
  if (!queue_.empty()) {
    auto ev = std::move(queue_.front());
    queue_.pop_front();
    return ev;
  }
  if (finished_ && !end_sent_) {
    end_sent_ = true;
    return StreamEvent{StreamEvent::Type::End, 0, Json{{"reason", "session closed"}}};
  }
  return std::nullopt;
}

void Subscription::finish() {
  {
    std::lock_guard lock(mu_);
    finished_ = true;
  }
  cv_.notify_all();
}

void Subscription::cancel() {
  {
    std::lock_guard lock(mu_);
    cancelled_ = true;
  }
  cv_.notify_all();
}

bool Subscription::overflowed() const {
  std::lock_guard lock(mu_);
  return overflowed_;
}

bool Subscription::done() const {
  std::lock_guard lock(mu_);
  return cancelled_ || end_sent_;
}

// --- IngestService ---------------------------------------------------------

IngestService::IngestService(ServiceConfig config)
    : config_(std::move(config)), id_rng_(std::random_device{}()) {
  std::error_code ec;
  fs::create_directories(config_.data_dir, ec);
  if (ec || !fs::is_directory(config_.data_dir)) {
    throw StorageError("cannot create data directory " + config_.data_dir.string());
  }
  const fs::path probe = config_.data_dir / ".write-probe";
  {
    std::ofstream out(probe);
    if (!out) throw StorageError("data directory " + config_.data_dir.string() + " is not writable");
  }
  fs::remove(probe, ec);
  load();
}

IngestService::~IngestService() { shutdown(); }

void IngestService::load() {
  struct SavedSession {
    std::uint64_t created_ts_us = 0;
    SessionState state = SessionState::Active;
  };
  std::map<std::string, SavedSession> saved;

  const fs::path reg = config_.data_dir / kRegistryFile;
  if (fs::exists(reg)) {
    std::ifstream in(reg);
    Json j;
    try {
      j = Json::parse(in);
      for (const auto& p : j.value("patients", Json::array())) {
        auto patient = patient_from_json(p);
        patients_[patient.patient_id] = patient;
      }
      for (const auto& s : j.value("sessions", Json::array())) {
        saved[s.at("session_id").get<std::string>()] = {
            s.value("created_ts_us", std::uint64_t{0}),
            session_state_from_string(s.value("state", "Active"))};
      }
      for (const auto& a : j.value("acked_alerts", Json::array())) acked_alerts_.insert(a.get<std::string>());
    } catch (const std::exception& e) {
      throw StorageError("corrupt registry " + reg.string() + ": " + std::string(e.what()));
    }
  }

  auto recovered = recover(config_.data_dir);
  unavailable_ = recovered.unavailable;
  for (auto& [id, seg] : recovered.sessions) {
    auto entry = std::make_shared<SessionEntry>();
    const auto& meta = seg.scan.meta;
    entry->info.session_id = id;
    entry->info.device_id = meta.device_id;
    entry->info.patient_id = meta.patient_id;
    entry->info.sample_rate_hz = meta.sample_rate_hz;
    entry->info.adc = meta.adc;
    entry->info.last_seq_accepted = seg.scan.last_seq();
    if (auto it = saved.find(id); it != saved.end()) {
      entry->info.created_ts_us = it->second.created_ts_us;
      entry->info.state = it->second.state;
    } else {
      const auto mtime = fs::last_write_time(seg.path);
      const auto sys = std::chrono::system_clock::now() +
                       std::chrono::duration_cast<std::chrono::system_clock::duration>(
                           mtime - fs::file_time_type::clock::now());
      entry->info.created_ts_us = static_cast<std::uint64_t>(
          std::chrono::duration_cast<std::chrono::microseconds>(sys.time_since_epoch()).count());
    }
    last_created_us_ = std::max(last_created_us_, entry->info.created_ts_us);

    entry->monitor = std::make_unique<SessionMonitor>(id, meta.sample_rate_hz, meta.adc, config_.monitor);
    for (const auto& rec : seg.scan.records) entry->monitor->update(expand_record(rec, meta.sample_rate_hz));
    for (const auto& a : entry->monitor->alerts()) {
      if (acked_alerts_.count(a.alert_id)) entry->monitor->acknowledge(a.alert_id);
    }
    if (entry->info.state == SessionState::Active) {
      try {
        entry->writer.emplace(SegmentWriter::reopen(seg.path, seg.scan));
      } catch (const std::exception& e) {
        unavailable_[id] = e.what();
        continue;
      }
    }
    sessions_[id] = std::move(entry);
  }
  for (const auto& [id, s] : saved) {
    if (!sessions_.count(id) && !unavailable_.count(id)) unavailable_[id] = "segment file missing";
  }
}

void IngestService::persist_registry() {
  std::lock_guard persist(persist_mu_);
  Json j{{"version", 1}, {"patients", Json::array()}, {"sessions", Json::array()}, {"acked_alerts", Json::array()}};
  {
    std::shared_lock lock(registry_mu_);
    for (const auto& [id, p] : patients_) j["patients"].push_back(to_json(p));
    for (const auto& [id, entry] : sessions_) {
      std::lock_guard el(entry->mu);
      j["sessions"].push_back(Json{{"session_id", id},
                                   {"created_ts_us", entry->info.created_ts_us},
                                   {"state", to_string(entry->info.state)}});
    }
    for (const auto& a : acked_alerts_) j["acked_alerts"].push_back(a);
  }
  write_file_atomically(config_.data_dir / kRegistryFile, j.dump(2) + "\n");
}

std::string IngestService::new_session_id() {
  static constexpr char kHex[] = "0123456789abcdef";
  for (;;) {
    std::uint64_t v = id_rng_();
    std::string id = "s";
    for (int i = 0; i < 16; ++i) {
      id += kHex[v & 0xF];
      v >>= 4;
    }
    if (!sessions_.count(id) && !unavailable_.count(id) &&
        !fs::exists(segment_path(config_.data_dir, id))) {
      return id;
    }
  }
}

std::shared_ptr<IngestService::SessionEntry> IngestService::find(const std::string& session_id) const {
  std::shared_lock lock(registry_mu_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) {
    if (auto u = unavailable_.find(session_id); u != unavailable_.end()) {
      throw NotFoundError("session " + session_id + " is unavailable: " + u->second);
    }
    throw NotFoundError("unknown session " + session_id);
  }
  return it->second;
}

Patient IngestService::upsert_patient(Patient p) {
  if (p.patient_id.empty() || p.patient_id.size() > 128) {
    throw ValidationError("patient_id must be 1..128 characters");
  }
  if (p.display_name.empty()) p.display_name = p.patient_id;
  {
    std::unique_lock lock(registry_mu_);
    if (shut_down_) throw StateError("service is shut down");
    auto it = patients_.find(p.patient_id);
    p.created_ts_us = it != patients_.end() ? it->second.created_ts_us : now_us();
    patients_[p.patient_id] = p;
  }
  persist_registry();
  return p;
}

std::vector<Patient> IngestService::list_patients() const {
  std::shared_lock lock(registry_mu_);
  std::vector<Patient> out;
  for (const auto& [id, p] : patients_) out.push_back(p);
  return out;
}

Session IngestService::create_session(const std::string& device_id, const std::string& patient_id,
                                      std::uint32_t sample_rate_hz, const AdcConfig& adc) {
  if (!valid_device_id(device_id)) {
    throw ValidationError("device_id must be 1..64 characters of [A-Za-z0-9_-]");
  }
  if (sample_rate_hz < 50 || sample_rate_hz > 2000) {
    throw ValidationError("sample_rate_hz must be in [50, 2000]");
  }
  adc.validate();

  Session info;
  {
    std::unique_lock lock(registry_mu_);
    if (shut_down_) throw StateError("service is shut down");
    if (!patients_.count(patient_id)) throw NotFoundError("unknown patient " + patient_id);
    auto entry = std::make_shared<SessionEntry>();
    info.session_id = new_session_id();
    info.device_id = device_id;
    info.patient_id = patient_id;
    info.sample_rate_hz = sample_rate_hz;
    info.adc = adc;
    info.state = SessionState::Active;
    info.created_ts_us = std::max(now_us(), last_created_us_ + 1);
    last_created_us_ = info.created_ts_us;
    info.last_seq_accepted = -1;

    SegmentMeta meta{info.session_id, device_id, patient_id, sample_rate_hz, adc};
    entry->writer.emplace(SegmentWriter::create(segment_path(config_.data_dir, info.session_id), meta));
    entry->monitor = std::make_unique<SessionMonitor>(info.session_id, sample_rate_hz, adc, config_.monitor);
    entry->info = info;
    sessions_[info.session_id] = std::move(entry);
  }
  persist_registry();
  return info;
}

Session IngestService::get_session(const std::string& session_id) const {
  auto entry = find(session_id);
  std::lock_guard lock(entry->mu);
  return entry->info;
}

std::vector<Session> IngestService::list_sessions(const std::string& patient_id) const {
  std::vector<Session> out;
  {
    std::shared_lock lock(registry_mu_);
    if (!patient_id.empty() && !patients_.count(patient_id)) throw NotFoundError("unknown patient " + patient_id);
    for (const auto& [id, entry] : sessions_) {
      std::lock_guard el(entry->mu);
      if (patient_id.empty() || entry->info.patient_id == patient_id) out.push_back(entry->info);
    }
  }
  std::sort(out.begin(), out.end(), [](const Session& a, const Session& b) {
    if (a.created_ts_us != b.created_ts_us) return a.created_ts_us > b.created_ts_us;
    return a.session_id > b.session_id;
  });
  return out;
}

Session IngestService::close_session(const std::string& session_id) {
  auto entry = find(session_id);
  Session info;
  bool changed = false;
  {
    std::lock_guard lock(entry->mu);
    if (entry->info.state == SessionState::Active) {
      if (entry->writer) entry->writer->close();
      entry->info.state = SessionState::Closed;
      changed = true;
      for (auto& sub : entry->subscribers) sub->finish();
      entry->subscribers.clear();
    }
    info = entry->info;
  }
  if (changed) persist_registry();
  return info;
}

void IngestService::publish_locked(SessionEntry& entry, const StreamEvent& ev) {
  auto& subs = entry.subscribers;
  subs.erase(std::remove_if(subs.begin(), subs.end(),
                            [&](const std::shared_ptr<Subscription>& s) { return !s->push(ev); }),
             subs.end());
}

IngestOutcome IngestService::ingest_batch(const std::string& session_id, const SampleBatch& batch) {
  auto entry = find(session_id);
  std::lock_guard lock(entry->mu);
  auto& info = entry->info;
  IngestOutcome out;
  const auto next = [&] { return static_cast<std::uint32_t>(info.last_seq_accepted + 1); };

  if (info.state == SessionState::Closed) {
    out.status = IngestStatus::Closed;
    out.ack = {false, next(), "session closed"};
    return out;
  }
  if (static_cast<std::int64_t>(batch.seq) <= info.last_seq_accepted) {
    out.status = IngestStatus::Duplicate;
    out.ack = {true, next(), std::nullopt};
    return out;
  }
  if (static_cast<std::int64_t>(batch.seq) > info.last_seq_accepted + 1) {
    out.status = IngestStatus::Gap;
    out.ack = {false, next(), "seq gap: expected " + std::to_string(next())};
    return out;
  }
  if (batch.codes.empty() || batch.codes.size() != batch.flags.size()) {
    throw ValidationError("codes and flags must be non-empty and equal in length");
  }
  const auto top = info.adc.max_code();
  for (auto c : batch.codes) {
    if (c > top) {
      out.status = IngestStatus::OutOfRange;
      out.ack = {false, next(), "code out of range"};
      return out;
    }
  }
  for (auto f : batch.flags) {
    if (f > lead::kMask) throw ValidationError("flags must be in [0, 3]");
  }

  // durable before acknowledged
  entry->writer->append(record_from_batch(batch));
  info.last_seq_accepted = batch.seq;

  StreamEvent ev{StreamEvent::Type::Batch, batch.seq, batch_to_json(batch)};
  publish_locked(*entry, ev);
  for (const auto& t : entry->monitor->update(batch)) {
    publish_locked(*entry, StreamEvent{StreamEvent::Type::Alert, 0, alert_event_body(t)});
  }

  out.status = IngestStatus::Accepted;
  out.ack = {true, next(), std::nullopt};
  return out;
}

SessionQuery IngestService::query_range(const std::string& session_id, std::uint64_t from_us,
                                        std::uint64_t to_us) const {
  if (from_us > to_us) throw ValidationError("from_us must be <= to_us");
  auto entry = find(session_id);
  SessionQuery q;
  std::optional<std::uint64_t> limit;
  {
    std::lock_guard lock(entry->mu);
    q.sample_rate_hz = entry->info.sample_rate_hz;
    q.adc = entry->info.adc;
    if (entry->writer && !entry->writer->closed()) limit = entry->writer->committed_bytes();
  }
  q.read = read_range(segment_path(config_.data_dir, session_id), from_us, to_us, limit);
  return q;
}

std::shared_ptr<Subscription> IngestService::subscribe(const std::string& session_id,
                                                       std::optional<std::uint32_t> from_seq) {
  auto entry = find(session_id);
  auto sub = std::make_shared<Subscription>(config_.stream_queue_capacity);
  std::lock_guard lock(entry->mu);
  if (from_seq && static_cast<std::int64_t>(*from_seq) <= entry->info.last_seq_accepted) {
    std::optional<std::uint64_t> limit;
    if (entry->writer && !entry->writer->closed()) limit = entry->writer->committed_bytes();
    const auto scan = scan_segment(segment_path(config_.data_dir, session_id), limit);
    for (const auto& rec : scan.records) {
      if (rec.seq < *from_seq) continue;
      SampleBatch b;
      b.seq = rec.seq;
      b.start_ts_us = rec.start_ts_us;
      b.codes.assign(rec.codes.begin(), rec.codes.end());
      b.flags = rec.flags;
      sub->backlog_.push_back(StreamEvent{StreamEvent::Type::Batch, rec.seq, batch_to_json(b)});
    }
  }
  if (entry->info.state == SessionState::Closed) {
    sub->finish();
  } else {
    entry->subscribers.push_back(sub);
  }
  return sub;
}

void IngestService::unsubscribe(const std::string& session_id, const std::shared_ptr<Subscription>& sub) {
  sub->cancel();
  std::shared_ptr<SessionEntry> entry;
  try {
    entry = find(session_id);
  } catch (const NotFoundError&) {
    return;
  }
  std::lock_guard lock(entry->mu);
  auto& subs = entry->subscribers;
  subs.erase(std::remove(subs.begin(), subs.end(), sub), subs.end());
}

std::vector<Alert> IngestService::alerts(const std::string& session_id) const {
  auto entry = find(session_id);
  std::lock_guard lock(entry->mu);
  return entry->monitor->alerts();
}

Alert IngestService::acknowledge_alert(const std::string& alert_id) {
  const auto session_id = session_of_alert(alert_id);
  std::shared_ptr<SessionEntry> entry;
  try {
    entry = find(session_id);
  } catch (const NotFoundError&) {
    throw NotFoundError("unknown alert " + alert_id);
  }
  Alert result;
  {
    std::lock_guard lock(entry->mu);
    if (!entry->monitor->acknowledge(alert_id)) throw NotFoundError("unknown alert " + alert_id);
    for (const auto& a : entry->monitor->alerts()) {
      if (a.alert_id == alert_id) result = a;
    }
  }
  bool added = false;
  {
    std::unique_lock lock(registry_mu_);
    added = acked_alerts_.insert(alert_id).second;
  }
  if (added) persist_registry();
  return result;
}

Vitals IngestService::vitals(const std::string& session_id, double window_s) const {
  if (!(window_s > 0.0)) throw ValidationError("window_s must be > 0");
  const auto q = query_range(session_id, 0, std::numeric_limits<std::uint64_t>::max());
  std::span<const StoredSample> samples(q.read.samples);
  const auto want = static_cast<std::size_t>(window_s * q.sample_rate_hz);
  if (samples.size() > want) samples = samples.last(want);
  Vitals v;
  v.window_s = window_s;
  v.beats = detect_beats(samples, q.sample_rate_hz, q.adc);
  v.quality = quality_window(samples, q.sample_rate_hz, q.adc.bits, window_s);
  return v;
}

std::map<std::string, std::string> IngestService::unavailable_sessions() const {
  std::shared_lock lock(registry_mu_);
  return unavailable_;
}

void IngestService::shutdown() {
  std::vector<std::shared_ptr<SessionEntry>> entries;
  {
    std::unique_lock lock(registry_mu_);
    if (shut_down_) return;
    shut_down_ = true;
    for (auto& [id, e] : sessions_) entries.push_back(e);
  }
  for (auto& e : entries) {
    std::lock_guard lock(e->mu);
    for (auto& sub : e->subscribers) sub->finish();
    e->subscribers.clear();
    if (e->writer) e->writer->close();
  }
}

}  // namespace telecg
