// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any failed. argv[1] is the telecg binary (crash recovery
// runs it as a separate process so it can be killed).
#include <arpa/inet.h>
#include <netinet/in.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <httplib.h>

#include <chrono>
#include <cstring>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <sstream>
#include <thread>

#include "telecg/analytics.hpp"
#include "telecg/cli.hpp"
#include "telecg/device.hpp"
#include "telecg/http_server.hpp"
#include "telecg/ingest.hpp"
#include "telecg/store.hpp"
#include "../support/sse.hpp"
#include "../support/temp_dir.hpp"

extern char** environ;

using namespace telecg;
using telecg::testing::TempDir;
using Clock = std::chrono::steady_clock;

namespace {

constexpr std::uint64_t kEpoch = 1'700'000'000'000'000;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int digits = 2) {
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(digits);
  ss << v;
  return ss.str();
}

struct LocalServer {
  TempDir dir{"acc"};
  std::unique_ptr<IngestService> svc;
  std::unique_ptr<HttpServer> http;
  std::string url;
  int port = 0;

  LocalServer() {
    ServiceConfig sc;
    sc.data_dir = dir.path();
    svc = std::make_unique<IngestService>(sc);
    HttpServerConfig hc;
    hc.port = 0;
    http = std::make_unique<HttpServer>(*svc, hc);
    port = http->start();
    url = http->base_url();
  }
  ~LocalServer() {
    http->stop();
    svc->shutdown();
  }

  std::vector<StoredSample> stored(const std::string& sid) const {
    return svc->query_range(sid, 0, UINT64_MAX).read.samples;
  }
};

std::pair<int, std::string> telecg_cli(const std::vector<std::string>& args) {
  std::ostringstream out;
  const int code = cli::run(args, out);
  return {code, out.str()};
}

std::vector<StoredSample> expected_codes(const SynthParams& p, double seconds, std::uint64_t epoch = kEpoch) {
  const AdcConfig adc;
  const auto a = generate_analog(p, 250, seconds, adc);
  std::vector<StoredSample> out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    out.push_back({sample_ts_us(epoch, i, 250), static_cast<std::uint16_t>(quantize(a[i].value_mv, adc)), a[i].lead_state});
  }
  return out;
}

DeviceConfig device_config(const std::string& url, const std::string& id) {
  DeviceConfig c;
  c.device_id = id;
  c.patient_id = "acc-patient";
  c.server_url = url;
  c.epoch_us = kEpoch;
  return c;
}

// --- criteria ------------------------------------------------------------------

Outcome pipeline_exactness() {
  LocalServer s;
  const auto t0 = Clock::now();
  const auto [code, out] = telecg_cli({"simulate", "--server", s.url, "--hr", "60", "--duration", "60", "--rate", "250"});
  const double elapsed = seconds_since(t0);
  if (code != 0) return {false, "simulate exited " + std::to_string(code)};
  const auto sid = Json::parse(out).at("session_ids").at(0).get<std::string>();

  httplib::Client cli("127.0.0.1", s.port);
  auto res = cli.Get("/api/v1/sessions/" + sid + "/samples");
  if (!res || res->status != 200) return {false, "full-range query failed"};
  const auto rows = Json::parse(res->body).at("samples");
  std::size_t bad_steps = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i][0].get<std::uint64_t>() - rows[i - 1][0].get<std::uint64_t>() != 4000) ++bad_steps;
  }
  const bool pass = rows.size() == 15000 && bad_steps == 0 && elapsed < 10.0;
  return {pass, std::to_string(rows.size()) + " samples, " + std::to_string(bad_steps) +
                    " non-4000us steps, simulate took " + fmt(elapsed) + " s"};
}

Outcome pqrst_fidelity() {
  LocalServer s;
  SynthParams p;
  p.heart_rate_bpm = 72;
  p.noise.white_sigma_mv = 0.05;
  p.noise.baseline_wander_amp_mv = 0.2;
  p.noise.mains_amp_mv = 0.05;
  p.seed = 11;
  const auto [code, out] = telecg_cli({"simulate", "--server", s.url, "--hr", "72", "--duration", "30", "--noise-sigma",
                                       "0.05", "--wander-amp", "0.2", "--mains-amp", "0.05", "--seed", "11",
                                       "--epoch-us", std::to_string(kEpoch)});
  if (code != 0) return {false, "simulate exited " + std::to_string(code)};
  const auto sid = Json::parse(out).at("session_ids").at(0).get<std::string>();
  const auto [ecode, text] = telecg_cli({"export", "--server", s.url, sid});
  if (ecode != 0) return {false, "export exited " + std::to_string(ecode)};

  std::istringstream in(text);
  const auto exported = read_samples_text(in);
  const AdcConfig adc;
  const auto analog = generate_analog(p, 250, 30, adc);
  if (exported.size() != analog.size()) {
    return {false, "exported " + std::to_string(exported.size()) + " of " + std::to_string(analog.size())};
  }
  const double bound = adc.lsb_mv() / 2.0 + 1e-9;
  double worst = 0.0;
  std::size_t bad_ts = 0;
  for (std::size_t i = 0; i < analog.size(); ++i) {
    worst = std::max(worst, std::abs(dequantize(exported[i].code, adc) - analog[i].value_mv));
    if (exported[i].ts_us != sample_ts_us(kEpoch, i, 250)) ++bad_ts;
  }
  return {worst <= bound && bad_ts == 0, std::to_string(analog.size()) + " samples, worst |error| " + fmt(worst, 4) +
                                             " mV (bound " + fmt(bound, 4) + "), " + std::to_string(bad_ts) +
                                             " timestamp mismatches"};
}

Outcome heart_rate_oracle() {
  // declared input set: seeds 1..20 at each rate for the noisy case
  const AdcConfig adc;
  std::ostringstream detail;
  bool pass = true;
  for (double hr : {40.0, 60.0, 120.0, 180.0}) {
    SynthParams p;
    p.heart_rate_bpm = hr;
    const double clean_err = std::abs(detect_beats(expected_codes(p, 30, 0), 250, adc).bpm - hr);
    double worst = 0.0;
    int misses = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      p.noise.white_sigma_mv = 0.05;
      p.seed = seed;
      const double err = std::abs(detect_beats(expected_codes(p, 30, 0), 250, adc).bpm - hr);
      worst = std::max(worst, err);
      if (err > 5.0) ++misses;
    }
    pass = pass && clean_err <= 3.0 && misses == 0;
    detail << hr << " bpm: clean err " << fmt(clean_err) << ", noisy worst " << fmt(worst) << " (" << misses
           << "/20 over 5); ";
  }
  auto d = detail.str();
  d.resize(d.size() - 2);
  return {pass, d};
}

Outcome lead_off_alerting() {
  LocalServer s;
  std::ostringstream detail;
  bool pass = true;
  const struct {
    const char* event;
    AlertKind kind;
  } full[] = {{"3:4:plus", AlertKind::LeadOffPlus}, {"3:4:minus", AlertKind::LeadOffMinus}};
  for (const auto& c : full) {
    const auto [code, out] = telecg_cli({"simulate", "--server", s.url, "--duration", "8", "--lead-off", c.event,
                                         "--epoch-us", std::to_string(kEpoch)});
    if (code != 0) return {false, std::string("simulate failed for ") + c.event};
    const auto alerts = s.svc->alerts(Json::parse(out).at("session_ids").at(0).get<std::string>());
    const bool one = alerts.size() == 1 && alerts[0].kind == c.kind;
    const double delay_ms = one ? (static_cast<double>(alerts[0].start_ts_us) - (kEpoch + 3e6)) / 1000.0 : -1;
    pass = pass && one && delay_ms >= 0 && delay_ms <= 260;
    detail << c.event << ": " << alerts.size() << " alert(s)";
    if (one) detail << " " << to_string(alerts[0].kind) << " +" << fmt(delay_ms, 0) << " ms";
    detail << "; ";
  }
  for (const char* event : {"3:3.2:plus", "3:3.24:minus"}) {
    const auto [code, out] = telecg_cli({"simulate", "--server", s.url, "--duration", "8", "--lead-off", event});
    if (code != 0) return {false, std::string("simulate failed for ") + event};
    const auto alerts = s.svc->alerts(Json::parse(out).at("session_ids").at(0).get<std::string>());
    pass = pass && alerts.empty();
    detail << event << ": " << alerts.size() << " alert(s); ";
  }
  auto d = detail.str();
  d.resize(d.size() - 2);
  return {pass, d};
}

int free_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
  socklen_t len = sizeof(addr);
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  ::close(fd);
  return ntohs(addr.sin_port);
}

pid_t spawn_server(const std::string& bin, int port, const std::filesystem::path& data, const std::filesystem::path& log) {
  posix_spawn_file_actions_t fa;
  posix_spawn_file_actions_init(&fa);
  posix_spawn_file_actions_addopen(&fa, 1, log.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  posix_spawn_file_actions_adddup2(&fa, 1, 2);
  const std::string listen = "127.0.0.1:" + std::to_string(port);
  const std::string data_s = data.string();
  const char* argv[] = {bin.c_str(), "serve", "--listen", listen.c_str(), "--data", data_s.c_str(), nullptr};
  pid_t pid = -1;
  if (posix_spawn(&pid, bin.c_str(), &fa, nullptr, const_cast<char* const*>(argv), environ) != 0) pid = -1;
  posix_spawn_file_actions_destroy(&fa);
  return pid;
}

bool wait_healthy(int port, std::chrono::seconds limit) {
  const auto deadline = Clock::now() + limit;
  while (Clock::now() < deadline) {
    httplib::Client cli("127.0.0.1", port);
    cli.set_connection_timeout(0, 200000);
    if (auto res = cli.Get("/api/v1/health"); res && res->status == 200) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  return false;
}

Outcome crash_recovery(const std::string& bin) {
  TempDir dir("crash");
  const auto data = dir / "data";
  const int port = free_port();
  pid_t pid = spawn_server(bin, port, data, dir / "server.log");
  if (pid < 0 || !wait_healthy(port, std::chrono::seconds(10))) return {false, "server did not start"};

  auto cfg = device_config("http://127.0.0.1:" + std::to_string(port), "crash-dev");
  cfg.pace = 10.0;  // 60 s of signal in about 6 s
  SynthParams params;
  params.noise.white_sigma_mv = 0.05;
  params.seed = 5;
  Device device(cfg, make_http_transport(cfg.server_url));
  std::promise<void> midway;
  std::atomic<int> sent{0};
  device.set_on_sent([&](const SampleBatch&) {
    if (++sent == 100) midway.set_value();
  });
  SynthSource source(params, 250, cfg.adc);
  auto run = std::async(std::launch::async, [&] { return device.run(source, 15000); });

  if (midway.get_future().wait_for(std::chrono::seconds(30)) != std::future_status::ready) {
    ::kill(pid, SIGKILL);
    return {false, "device never reached batch 100"};
  }
  ::kill(pid, SIGKILL);
  ::waitpid(pid, nullptr, 0);
  const int at_kill = sent.load();
  std::this_thread::sleep_for(std::chrono::milliseconds(1500));
  pid = spawn_server(bin, port, data, dir / "server.log");
  if (pid < 0 || !wait_healthy(port, std::chrono::seconds(10))) return {false, "server did not restart"};

  const auto report = run.get();
  std::vector<StoredSample> stored;
  std::string sid = report.session_ids.empty() ? "" : report.session_ids[0];
  {
    httplib::Client cli("127.0.0.1", port);
    cli.set_read_timeout(30, 0);
    auto res = cli.Get("/api/v1/sessions/" + sid + "/samples");
    if (res && res->status == 200) {
      const auto body = Json::parse(res->body);
      for (const auto& r : body.at("samples")) {
        stored.push_back({r[0].get<std::uint64_t>(), r[1].get<std::uint16_t>(), r[2].get<std::uint8_t>()});
      }
    }
  }
  ::kill(pid, SIGTERM);
  ::waitpid(pid, nullptr, 0);

  const auto scan = scan_segment(segment_path(data, sid));
  const bool crc_ok = !scan.corruption && scan.valid_bytes == scan.file_bytes;
  const bool lossless = stored == expected_codes(params, 60);
  const bool pass = report.ok() && report.session_ids.size() == 1 && lossless && crc_ok && scan.records.size() == 300;
  return {pass, "killed after " + std::to_string(at_kill) + " acked batches; device retries " +
                    std::to_string(report.retries) + ", dropped " + std::to_string(report.batches_dropped) +
                    "; stored " + std::to_string(stored.size()) + "/15000 " + (lossless ? "identical" : "MISMATCH") +
                    "; segment " + std::to_string(scan.records.size()) + " records, " +
                    (crc_ok ? "all CRCs valid" : "CRC/torn data: " + scan.corruption.value_or("trailing bytes"))};
}

class Duplicating : public Transport {
 public:
  Duplicating(std::unique_ptr<Transport> inner, int* duplicates) : inner_(std::move(inner)), duplicates_(duplicates) {}
  CreateResult create_session(const SessionRequest& req) override { return inner_->create_session(req); }
  SendResult send_batch(const std::string& sid, const SampleBatch& b) override {
    const auto first = inner_->send_batch(sid, b);
    if (first.kind != SendResult::Kind::Ok) return first;
    ++*duplicates_;
    return inner_->send_batch(sid, b);
  }

 private:
  std::unique_ptr<Transport> inner_;
  int* duplicates_;
};

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome idempotent_retransmission() {
  LocalServer s;
  SynthParams params;
  params.noise.white_sigma_mv = 0.05;
  params.lead_events.push_back({4, 5.5, LeadWhich::LoPlus});
  params.seed = 3;

  auto run_with = [&](std::unique_ptr<Transport> t) {
    Device d(device_config(s.url, "dup-dev"), std::move(t));
    SynthSource src(params, 250, AdcConfig{});
    return d.run(src, sample_count(250, 20));
  };
  const auto single = run_with(make_http_transport(s.url));
  int duplicates = 0;
  const auto doubled = run_with(std::make_unique<Duplicating>(make_http_transport(s.url), &duplicates));
  if (!single.ok() || !doubled.ok()) return {false, "device run failed"};

  const auto a_id = single.session_ids.at(0);
  const auto b_id = doubled.session_ids.at(0);
  s.svc->close_session(a_id);
  s.svc->close_session(b_id);
  auto a = file_bytes(segment_path(s.dir.path(), a_id));
  const auto b = file_bytes(segment_path(s.dir.path(), b_id));
  // the header names its own session; give the single-delivery file the other id before comparing
  const auto at = a.find(a_id);
  if (at != std::string::npos) a.replace(at, a_id.size(), b_id);
  const bool same = a == b;
  return {same && duplicates == 100,
          std::to_string(duplicates) + " batches delivered twice; segment files " + std::to_string(a.size()) +
              " vs " + std::to_string(b.size()) + " bytes, " + (same ? "byte-identical" : "DIFFERENT") +
              " apart from the session id"};
}

class Announcing : public Transport {
 public:
  explicit Announcing(std::unique_ptr<Transport> inner) : inner_(std::move(inner)) {}
  CreateResult create_session(const SessionRequest& req) override {
    auto r = inner_->create_session(req);
    if (r.kind == SendResult::Kind::Ok && !announced_) {
      announced_ = true;
      session.set_value(r.session_id);
    }
    return r;
  }
  SendResult send_batch(const std::string& sid, const SampleBatch& b) override { return inner_->send_batch(sid, b); }
  std::promise<std::string> session;

 private:
  std::unique_ptr<Transport> inner_;
  bool announced_ = false;
};

Outcome fanout_consistency() {
  LocalServer s;
  auto cfg = device_config(s.url, "fan-dev");
  cfg.pace = 2.0;
  auto t = std::make_unique<Announcing>(make_http_transport(s.url));
  auto session = t->session.get_future();
  Device device(cfg, std::move(t));
  SynthParams params;
  params.noise.white_sigma_mv = 0.05;
  SynthSource src(params, 250, cfg.adc);
  auto run = std::async(std::launch::async, [&] { return device.run(src, 2500); });

  const auto sid = session.get();
  constexpr int kSubscribers = 5;
  std::vector<std::vector<testing::SseEvent>> got(kSubscribers);
  std::vector<std::thread> readers;
  for (int i = 0; i < kSubscribers; ++i) {
    readers.emplace_back([&, i] {
      got[i] = testing::read_stream("127.0.0.1", s.port, "/api/v1/sessions/" + sid + "/stream?from_seq=0", 60);
    });
  }
  const auto report = run.get();
  std::this_thread::sleep_for(std::chrono::milliseconds(200));
  s.svc->close_session(sid);
  for (auto& r : readers) r.join();

  std::vector<std::vector<Json>> batches(kSubscribers);
  for (int i = 0; i < kSubscribers; ++i) {
    for (const auto& ev : got[i]) {
      if (ev.type == "batch") batches[i].push_back(ev.data);
    }
  }
  bool identical = true;
  for (int i = 1; i < kSubscribers; ++i) identical = identical && batches[i] == batches[0];
  std::vector<StoredSample> streamed;
  for (const auto& b : batches[0]) {
    const auto parsed = batch_from_json(b);
    for (std::size_t k = 0; k < parsed.size(); ++k) {
      streamed.push_back({sample_ts_us(parsed.start_ts_us, k, 250), static_cast<std::uint16_t>(parsed.codes[k]),
                          parsed.flags[k]});
    }
  }
  const bool matches_store = streamed == s.stored(sid);
  bool ended = true;
  for (const auto& g : got) ended = ended && !g.empty() && g.back().type == "end";
  const bool pass = report.ok() && identical && matches_store && ended && batches[0].size() == 50;
  return {pass, std::to_string(kSubscribers) + " subscribers, " + std::to_string(batches[0].size()) + " batches each, " +
                    (identical ? "identical" : "DIFFERENT") + ", " +
                    (matches_store ? "equal to stored data" : "NOT equal to stored data") +
                    (ended ? "" : ", a stream did not end cleanly")};
}

Outcome fleet_scale() {
  LocalServer s;
  const auto t0 = Clock::now();
  const auto [code, out] = telecg_cli({"simulate", "--server", s.url, "--fleet", "25", "--duration", "10", "--device-id", "bed"});
  const double elapsed = seconds_since(t0);
  if (out.empty()) return {false, "simulate exited " + std::to_string(code) + " without a report"};
  const auto j = Json::parse(out);
  std::size_t exact = 0;
  for (const auto& d : j.at("devices")) {
    const auto sid = d.at("session_ids").at(0).get<std::string>();
    if (s.stored(sid).size() == 2500) ++exact;
  }
  const auto& totals = j.at("totals");
  const bool pass = code == 0 && totals.at("batches_dropped") == 0 && totals.at("batches_pending") == 0 &&
                    exact == 25 && elapsed < 60.0;
  return {pass, std::to_string(exact) + "/25 sessions with exactly 2500 samples, " +
                    totals.at("batches_dropped").dump() + " dropped, " + fmt(elapsed) + " s wall"};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: acceptance <path-to-telecg>\n";
    return 2;
  }
  const std::string bin = argv[1];
  const std::vector<std::pair<std::string, std::function<Outcome()>>> checks = {
      {"pipeline exactness", pipeline_exactness},
      {"pqrst fidelity", pqrst_fidelity},
      {"heart-rate oracle", heart_rate_oracle},
      {"lead-off alerting", lead_off_alerting},
      {"crash recovery", [&] { return crash_recovery(bin); }},
      {"idempotent retransmission", idempotent_retransmission},
      {"fan-out consistency", fanout_consistency},
      {"fleet scale", fleet_scale},
  };
  int failed = 0;
  for (const auto& [name, fn] : checks) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS  " : "FAIL  ") << name << ": " << o.detail << std::endl;
  }
  std::cout << (checks.size() - failed) << "/" << checks.size() << " acceptance criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
