#include "telecg/cli.hpp"

#include <signal.h>

#include <atomic>
#include <cstring>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <httplib.h>

#include "telecg/device.hpp"
#include "telecg/errors.hpp"
#include "telecg/http_server.hpp"
#include "telecg/ingest.hpp"
#include "telecg/log.hpp"
#include "telecg/store.hpp"

namespace telecg::cli {

namespace fs = std::filesystem;

namespace {

struct SharedOptions {
  std::string log_level = "info";
};

struct ServeOptions {
  std::string listen = "127.0.0.1:8080";
  std::string data_dir = "data";
  std::size_t threads = 64;
  std::size_t queue = 256;
  std::string ui_dir;
};

struct SignalOptions {
  double hr = 60.0;
  double noise_sigma = 0.05;
  double wander_amp = 0.0;
  double mains_amp = 0.0;
  double mains_hz = 50.0;
  double gain = 1.0;
  std::vector<std::string> lead_off;
  std::uint64_t seed = 1;
};

struct DeviceOptions {
  std::string server = "http://127.0.0.1:8080";
  std::string device_id = "esp32-sim";
  std::string patient_id = "patient-1";
  std::string patient_name;
  std::uint32_t rate = 250;
  std::uint32_t batch_size = 50;
  std::uint32_t buffer_capacity = 0;
  std::uint32_t max_backoff_ms = 30000;
  std::uint32_t give_up_ms = 60000;
  double duration = 10.0;
  bool realtime = false;
  double pace = 0.0;
  int bits = 12;
  double vref = 3.3;
  std::uint64_t epoch_us = 0;
};

struct SimulateOptions {
  DeviceOptions device;
  SignalOptions signal;
  std::size_t fleet = 1;
};

struct ReplayOptions {
  std::string file;
  DeviceOptions device;
  bool patient_given = false;
};

struct ExportOptions {
  std::string session_id;
  std::string file;
  std::string data_dir = "data";
  std::string server;
  std::uint64_t from_us = 0;
  std::uint64_t to_us = std::numeric_limits<std::uint64_t>::max();
  std::string out;
};

struct DemoOptions {
  ServeOptions serve{.listen = "127.0.0.1:8080", .data_dir = "telecg-demo-data", .ui_dir = {}};
  DeviceOptions device;
  SignalOptions signal;
  bool exit_after = false;
};

// --- option wiring -----------------------------------------------------------

void add_serve_options(CLI::App& app, ServeOptions& o) {
  app.add_option("--listen", o.listen, "listen address host:port")->envname("TELECG_LISTEN")->capture_default_str();
  app.add_option("--data", o.data_dir, "data directory")->envname("TELECG_DATA")->capture_default_str();
  app.add_option("--threads", o.threads, "HTTP worker threads")->envname("TELECG_THREADS")->capture_default_str()
      ->check(CLI::Range(4, 4096));
  app.add_option("--queue", o.queue, "per-subscriber stream queue bound (batches)")
      ->envname("TELECG_QUEUE")->capture_default_str()->check(CLI::Range(1, 1 << 20));
  app.add_option("--ui-dir", o.ui_dir, "static viewer assets served under /ui/")->envname("TELECG_UI_DIR");
}

void add_device_options(CLI::App& app, DeviceOptions& o, bool with_server = true) {
  if (with_server) {
    app.add_option("--server", o.server, "ingest server base URL")->envname("TELECG_SERVER")->capture_default_str();
  }
  app.add_option("--device-id", o.device_id, "device identifier")->envname("TELECG_DEVICE_ID")->capture_default_str();
  app.add_option("--patient-id", o.patient_id, "patient the session belongs to")->envname("TELECG_PATIENT_ID")
      ->capture_default_str();
  app.add_option("--patient-name", o.patient_name, "patient display name");
  app.add_option("--rate", o.rate, "sample rate (Hz)")->capture_default_str()->check(CLI::Range(50u, 2000u));
  app.add_option("--batch-size", o.batch_size, "samples per batch")->capture_default_str()
      ->check(CLI::Range(1u, 65535u));
  app.add_option("--buffer-capacity", o.buffer_capacity, "outage buffer in samples (0 = 60 s)");
  app.add_option("--max-backoff-ms", o.max_backoff_ms, "retry backoff cap")->capture_default_str()
      ->check(CLI::PositiveNumber);
  app.add_option("--give-up-ms", o.give_up_ms, "cumulative backoff before giving up")->capture_default_str();
  app.add_option("--duration", o.duration, "seconds of signal to send")->capture_default_str()
      ->check(CLI::PositiveNumber);
  app.add_flag("--realtime", o.realtime, "pace emission at real time");
  app.add_option("--pace", o.pace, "pace factor (0 = virtual clock, 1 = real time)")->check(CLI::NonNegativeNumber);
  app.add_option("--bits", o.bits, "ADC resolution")->capture_default_str()->check(CLI::Range(8, 16));
  app.add_option("--vref", o.vref, "ADC reference voltage")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--epoch-us", o.epoch_us, "virtual clock origin (0 = now)");
}

void add_signal_options(CLI::App& app, SignalOptions& o) {
  app.add_option("--hr", o.hr, "heart rate (bpm)")->capture_default_str()->check(CLI::Range(20.0, 300.0));
  app.add_option("--noise-sigma", o.noise_sigma, "white noise sigma (mV)")->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  app.add_option("--wander-amp", o.wander_amp, "baseline wander amplitude (mV)")->check(CLI::NonNegativeNumber);
  app.add_option("--mains-amp", o.mains_amp, "mains interference amplitude (mV)")->check(CLI::NonNegativeNumber);
  app.add_option("--mains-hz", o.mains_hz, "mains frequency")->check(CLI::IsMember({50.0, 60.0}));
  app.add_option("--gain", o.gain, "front-end gain applied to the morphology")->capture_default_str();
  app.add_option("--lead-off", o.lead_off, "lead-off event start:end:plus|minus|both (seconds)");
  app.add_option("--seed", o.seed, "noise seed")->capture_default_str();
}

SynthParams synth_from(const SignalOptions& o) {
  SynthParams p;
  p.heart_rate_bpm = o.hr;
  p.gain = o.gain;
  p.noise.white_sigma_mv = o.noise_sigma;
  p.noise.baseline_wander_amp_mv = o.wander_amp;
  p.noise.mains_amp_mv = o.mains_amp;
  p.noise.mains_hz = o.mains_hz;
  p.seed = o.seed;
  for (const auto& text : o.lead_off) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    for (std::string part; std::getline(ss, part, ':');) parts.push_back(part);
    if (parts.size() != 3) throw ValidationError("--lead-off expects start:end:which, got '" + text + "'");
    LeadEvent ev;
    try {
      ev.start_s = std::stod(parts[0]);
      ev.end_s = std::stod(parts[1]);
    } catch (const std::exception&) {
      throw ValidationError("--lead-off times must be numbers, got '" + text + "'");
    }
    ev.which = parse_lead_which(parts[2]);
    p.lead_events.push_back(ev);
  }
  p.validate();
  return p;
}

DeviceConfig device_from(const DeviceOptions& o) {
  DeviceConfig c;
  c.device_id = o.device_id;
  c.server_url = o.server;
  c.patient_id = o.patient_id;
  c.patient_name = o.patient_name;
  c.sample_rate_hz = o.rate;
  c.batch_size = o.batch_size;
  c.buffer_capacity = o.buffer_capacity;
  c.max_backoff_ms = o.max_backoff_ms;
  c.give_up_ms = o.give_up_ms;
  c.pace = o.realtime ? 1.0 : o.pace;
  c.adc.vref_v = o.vref;
  c.adc.bits = o.bits;
  c.adc.baseline_v = o.vref / 2.0;
  c.epoch_us = o.epoch_us;
  c.validate();
  return c;
}

// Blocks SIGINT/SIGTERM for this thread and every thread it spawns afterwards.
sigset_t block_termination_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return set;
}

// --- subcommands -------------------------------------------------------------

int cmd_serve(const ServeOptions& o, std::ostream& out) {
  const sigset_t signals = block_termination_signals();
  HttpServerConfig hc;
  parse_listen_address(o.listen, hc.host, hc.port);
  hc.worker_threads = o.threads;
  hc.ui_dir = o.ui_dir;

  ServiceConfig sc;
  sc.data_dir = o.data_dir;
  sc.stream_queue_capacity = o.queue;
  IngestService service(sc);
  for (const auto& [id, why] : service.unavailable_sessions()) {
    log::warn("session " + id + " unavailable: " + why);
  }

  HttpServer server(service, hc);
  const int port = server.start();
  out << Json{{"event", "listening"}, {"url", server.base_url()}, {"port", port}, {"data", o.data_dir}}.dump()
      << std::endl;
  log::info("listening on " + server.base_url() + " (data " + o.data_dir + ")");

  int sig = 0;
  sigwait(&signals, &sig);
  log::info(std::string("received ") + (sig == SIGINT ? "SIGINT" : "SIGTERM") + ", shutting down");
  server.stop();
  service.shutdown();
  return kExitOk;
}

Json fleet_json(const std::vector<TransmitReport>& reports) {
  Json devices = Json::array();
  std::uint64_t sent = 0, dropped = 0, pending = 0, samples = 0, retries = 0;
  bool ok = true;
  for (const auto& r : reports) {
    devices.push_back(to_json(r));
    sent += r.batches_sent;
    dropped += r.batches_dropped;
    pending += r.batches_pending;
    samples += r.samples_sent;
    retries += r.retries;
    ok = ok && r.ok();
  }
  return Json{{"devices", devices},
              {"totals",
               {{"devices", reports.size()},
                {"batches_sent", sent},
                {"batches_dropped", dropped},
                {"batches_pending", pending},
                {"samples_sent", samples},
                {"retries", retries},
                {"ok", ok}}}};
}

int cmd_simulate(const SimulateOptions& o, std::ostream& out) {
  const auto cfg = device_from(o.device);
  const auto params = synth_from(o.signal);
  if (o.fleet <= 1) {
    const auto report = run_device(cfg, params, o.device.duration);
    out << to_json(report).dump() << std::endl;
    if (report.error) log::error(*report.error);
    return report.ok() ? kExitOk : kExitFailure;
  }
  const auto reports = run_fleet(cfg, params, o.device.duration, o.fleet);
  const auto j = fleet_json(reports);
  out << j.dump() << std::endl;
  return j["totals"]["ok"].get<bool>() ? kExitOk : kExitFailure;
}

int cmd_replay(ReplayOptions o, std::ostream& out) {
  std::ifstream in(o.file, std::ios::binary);
  if (!in) {
    log::error("cannot open " + o.file);
    return kExitFailure;
  }
  char magic[4] = {};
  in.read(magic, 4);
  const bool is_segment = in.gcount() == 4 && std::memcmp(magic, kSegmentMagic, 4) == 0;
  in.clear();
  in.seekg(0);

  std::vector<DigitalSample> samples;
  bool corrupt = false;
  if (is_segment) {
    const auto scan = scan_segment(o.file);
    if (scan.corruption) {
      corrupt = true;
      log::warn(o.file + ": " + *scan.corruption + "; replaying the valid prefix");
    }
    o.device.rate = scan.meta.sample_rate_hz;
    o.device.bits = scan.meta.adc.bits;
    o.device.vref = scan.meta.adc.vref_v;
    if (!o.patient_given) o.device.patient_id = scan.meta.patient_id;
    if (o.device.epoch_us == 0 && !scan.records.empty()) o.device.epoch_us = scan.records.front().start_ts_us;
    for (const auto& rec : scan.records) {
      for (std::size_t i = 0; i < rec.codes.size(); ++i) samples.push_back({rec.codes[i], rec.flags[i]});
    }
  } else {
    std::string first;
    std::streampos start = in.tellg();
    std::size_t columns = 0;
    while (std::getline(in, first)) {
      if (first.empty() || first[0] == '#') continue;
      std::istringstream ss(first);
      std::string tok;
      while (ss >> tok) ++columns;
      break;
    }
    in.clear();
    in.seekg(start);
    if (columns == 3 && first.find('.') == std::string::npos) {
      const auto stored = read_samples_text(in);
      if (o.device.epoch_us == 0 && !stored.empty()) o.device.epoch_us = stored.front().ts_us;
      for (const auto& s : stored) samples.push_back({s.code, s.flags});
    } else {
      AdcConfig adc{o.device.vref, o.device.bits, o.device.vref / 2.0};
      for (const auto& a : read_analog_text(in)) {
        samples.push_back({static_cast<std::uint16_t>(quantize(a.value_mv, adc)), a.lead_state});
      }
    }
  }

  auto cfg = device_from(o.device);
  cfg.batch_size = std::max<std::uint32_t>(1, cfg.batch_size);
  if (cfg.effective_buffer_capacity() < cfg.batch_size) cfg.buffer_capacity = cfg.batch_size;
  if (samples.empty()) {
    out << Json{{"replayed_samples", 0}, {"warning", "no samples in input"}}.dump() << std::endl;
    return corrupt ? kExitFailure : kExitOk;
  }
  const auto total = samples.size();
  RecordedSource source(std::move(samples));
  Device device(cfg, make_http_transport(cfg.server_url));
  const auto report = device.run(source, total);
  Json j = to_json(report);
  j["replayed_samples"] = total;
  if (corrupt) j["warning"] = "input segment was corrupt; valid prefix replayed";
  out << j.dump() << std::endl;
  if (report.error) log::error(*report.error);
  return report.ok() && !corrupt ? kExitOk : kExitFailure;
}

int cmd_export(const ExportOptions& o, std::ostream& out) {
  std::ofstream file;
  std::ostream* dst = &out;
  if (!o.out.empty()) {
    file.open(o.out);
    if (!file) {
      log::error("cannot write " + o.out);
      return kExitFailure;
    }
    dst = &file;
  }

  if (!o.server.empty()) {
    if (o.session_id.empty()) {
      log::error("export from a server needs a session id");
      return kExitUsage;
    }
    httplib::Client client(o.server);
    client.set_read_timeout(60, 0);
    const auto path = "/api/v1/sessions/" + o.session_id + "/samples?from_us=" + std::to_string(o.from_us) +
                      "&to_us=" + std::to_string(o.to_us);
    auto res = client.Get(path);
    if (!res) {
      log::error("server unreachable: " + httplib::to_string(res.error()));
      return kExitFailure;
    }
    if (res->status != 200) {
      log::error("export failed: HTTP " + std::to_string(res->status) + " " + res->body);
      return kExitFailure;
    }
    const auto j = Json::parse(res->body);
    std::vector<StoredSample> samples;
    for (const auto& s : j.at("samples")) {
      samples.push_back({s.at(0).get<std::uint64_t>(), s.at(1).get<std::uint16_t>(), s.at(2).get<std::uint8_t>()});
    }
    write_samples_text(*dst, samples);
    if (j.contains("corruption")) {
      log::warn("stored segment is corrupt: " + j.at("corruption").get<std::string>());
      return kExitFailure;
    }
    return kExitOk;
  }

  fs::path path = o.file;
  if (path.empty()) {
    if (o.session_id.empty()) {
      log::error("export needs a session id or --file");
      return kExitUsage;
    }
    path = segment_path(o.data_dir, o.session_id);
  }
  if (!fs::exists(path)) {
    log::error("no such segment: " + path.string());
    return kExitFailure;
  }
  const auto read = read_range(path, o.from_us, o.to_us);
  write_samples_text(*dst, read.samples);
  if (read.corruption) {
    log::warn(path.string() + ": " + *read.corruption);
    return kExitFailure;
  }
  return kExitOk;
}

int cmd_demo(const DemoOptions& o, std::ostream& out) {
  const sigset_t signals = block_termination_signals();
  HttpServerConfig hc;
  parse_listen_address(o.serve.listen, hc.host, hc.port);
  hc.worker_threads = o.serve.threads;
  hc.ui_dir = o.serve.ui_dir;
  ServiceConfig sc;
  sc.data_dir = o.serve.data_dir;
  sc.stream_queue_capacity = o.serve.queue;
  IngestService service(sc);
  HttpServer server(service, hc);
  server.start();

  auto dopts = o.device;
  dopts.server = server.base_url();
  auto cfg = device_from(dopts);
  if (!o.exit_after) cfg.pace = cfg.pace > 0.0 ? cfg.pace : 1.0;
  const auto params = synth_from(o.signal);

  std::atomic<bool> finished{false};
  TransmitReport report;
  std::thread sim([&] {
    Device device(cfg, make_http_transport(cfg.server_url));
    bool announced = false;
    device.set_on_sent([&](const SampleBatch& b) {
      if (announced) return;
      announced = true;
      out << Json{{"event", "streaming"},
                  {"api", server.base_url() + "/api/v1"},
                  {"session_id", b.session_id},
                  {"viewer", server.base_url() + "/ui/?session=" + b.session_id}}
                 .dump()
          << std::endl;
    });
    SynthSource source(params, cfg.sample_rate_hz, cfg.adc);
    report = device.run(source, sample_count(cfg.sample_rate_hz, dopts.duration));
    finished = true;
  });

  const timespec poll{0, 200'000'000};
  bool interrupted = false;
  while (!interrupted) {
    if (sigtimedwait(&signals, nullptr, &poll) > 0) interrupted = true;
    if (finished && o.exit_after) break;
  }
  if (interrupted) log::info("interrupted, shutting down");
  server.stop();
  service.shutdown();
  sim.join();
  out << to_json(report).dump() << std::endl;
  return report.ok() || interrupted ? kExitOk : kExitFailure;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out) {
  CLI::App app{"telecg: simulated tele-ECG device, ingest server and tools"};
  app.set_version_flag("--version", "telecg 0.1.0");
  app.require_subcommand(1);
  SharedOptions shared;
  app.add_option("--log-level", shared.log_level, "debug|info|warn|error")->envname("TELECG_LOG_LEVEL")
      ->check(CLI::IsMember({"debug", "info", "warn", "warning", "error"}));

  ServeOptions serve;
  auto* serve_cmd = app.add_subcommand("serve", "run the ingest server");
  add_serve_options(*serve_cmd, serve);

  SimulateOptions sim;
  auto* sim_cmd = app.add_subcommand("simulate", "stream synthetic ECG from simulated devices");
  add_device_options(*sim_cmd, sim.device);
  add_signal_options(*sim_cmd, sim.signal);
  sim_cmd->add_option("--fleet", sim.fleet, "number of concurrent devices")->capture_default_str()
      ->check(CLI::Range(std::size_t{1}, std::size_t{10000}));

  ReplayOptions replay;
  replay.device.device_id = "replay";
  auto* replay_cmd = app.add_subcommand("replay", "re-stream a stored segment or text recording");
  replay_cmd->add_option("file", replay.file, "segment (.tecg), export text or analog text")->required();
  add_device_options(*replay_cmd, replay.device);

  ExportOptions exp;
  auto* export_cmd = app.add_subcommand("export", "dump a stored session as 'ts_us code flags' lines");
  export_cmd->add_option("session_id", exp.session_id, "session to export");
  export_cmd->add_option("--file", exp.file, "segment file to read instead of a session id");
  export_cmd->add_option("--data", exp.data_dir, "data directory")->envname("TELECG_DATA")->capture_default_str();
  export_cmd->add_option("--server", exp.server, "read through a running server instead of the data directory");
  export_cmd->add_option("--from-us", exp.from_us, "range start (inclusive)");
  export_cmd->add_option("--to-us", exp.to_us, "range end (exclusive)");
  export_cmd->add_option("--out", exp.out, "write to a file instead of stdout");

  DemoOptions demo;
  auto* demo_cmd = app.add_subcommand("demo", "server plus one live simulated device");
  add_serve_options(*demo_cmd, demo.serve);
  add_device_options(*demo_cmd, demo.device, false);
  add_signal_options(*demo_cmd, demo.signal);
  demo.device.duration = 300.0;
  demo_cmd->add_flag("--exit-after", demo.exit_after, "exit when the simulated run completes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, std::cerr);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, std::cerr);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, std::cerr);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    std::cerr << app.help();
    return kExitUsage;
  }

  try {
    log::set_level(log::parse_level(shared.log_level));
    if (serve_cmd->parsed()) return cmd_serve(serve, out);
    if (sim_cmd->parsed()) return cmd_simulate(sim, out);
    if (replay_cmd->parsed()) {
      replay.patient_given = replay_cmd->count("--patient-id") > 0;
      return cmd_replay(replay, out);
    }
    if (export_cmd->parsed()) return cmd_export(exp, out);
    if (demo_cmd->parsed()) return cmd_demo(demo, out);
  } catch (const ValidationError& e) {
    log::error(e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    log::error(e.what());
    return kExitFailure;
  }
  return kExitUsage;
}

int run(const std::vector<std::string>& args, std::ostream& out) {
  std::vector<const char*> argv;
  argv.push_back("telecg");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out);
}

}  // namespace telecg::cli
