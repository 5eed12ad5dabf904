#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "telecg/analytics.hpp"
#include "telecg/device.hpp"
#include "telecg/errors.hpp"
#include "telecg/http_server.hpp"
#include "telecg/ingest.hpp"
#include "telecg/signal.hpp"
#include "telecg/store.hpp"
#include "telecg/wire.hpp"

namespace py = pybind11;
using namespace telecg;

namespace {

py::object to_py(const Json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

AdcConfig make_adc(int bits, double vref_v, std::optional<double> baseline_v) {
  AdcConfig adc;
  adc.bits = bits;
  adc.vref_v = vref_v;
  adc.baseline_v = baseline_v.value_or(vref_v / 2.0);
  adc.validate();
  return adc;
}

SynthParams make_params(double heart_rate_bpm, double noise_sigma_mv, double wander_amp_mv, double mains_amp_mv,
                        double mains_hz, double gain, const std::vector<std::tuple<double, double, std::string>>& lead_off,
                        std::uint64_t seed) {
  SynthParams p;
  p.heart_rate_bpm = heart_rate_bpm;
  p.noise.white_sigma_mv = noise_sigma_mv;
  p.noise.baseline_wander_amp_mv = wander_amp_mv;
  p.noise.mains_amp_mv = mains_amp_mv;
  p.noise.mains_hz = mains_hz;
  p.gain = gain;
  p.seed = seed;
  for (const auto& [start, end, which] : lead_off) p.lead_events.push_back({start, end, parse_lead_which(which)});
  p.validate();
  return p;
}

std::vector<StoredSample> stored_from(py::array_t<std::uint16_t, py::array::c_style | py::array::forcecast> codes,
                                      std::optional<py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>> flags,
                                      double rate_hz) {
  const auto c = codes.unchecked<1>();
  std::vector<StoredSample> out(c.shape(0));
  for (py::ssize_t i = 0; i < c.shape(0); ++i) out[i] = {sample_ts_us(0, i, rate_hz), c(i), 0};
  if (flags) {
    const auto f = flags->unchecked<1>();
    if (f.shape(0) != c.shape(0)) throw ValidationError("codes and flags differ in length");
    for (py::ssize_t i = 0; i < f.shape(0); ++i) out[i].flags = f(i);
  }
  return out;
}

py::dict scan_to_py(const SegmentScan& scan) {
  py::list records;
  for (const auto& r : scan.records) {
    records.append(py::dict(py::arg("seq") = r.seq, py::arg("start_ts_us") = r.start_ts_us,
                            py::arg("codes") = r.codes, py::arg("flags") = r.flags));
  }
  return py::dict(py::arg("session_id") = scan.meta.session_id, py::arg("device_id") = scan.meta.device_id,
                  py::arg("patient_id") = scan.meta.patient_id, py::arg("sample_rate_hz") = scan.meta.sample_rate_hz,
                  py::arg("adc") = to_py(to_json(scan.meta.adc)), py::arg("records") = records,
                  py::arg("header_bytes") = scan.header_bytes, py::arg("valid_bytes") = scan.valid_bytes,
                  py::arg("file_bytes") = scan.file_bytes, py::arg("corruption") = scan.corruption);
}

class PyServer {
 public:
  PyServer(const std::string& data_dir, const std::string& host, int port, std::size_t threads,
           std::size_t queue, const std::string& ui_dir) {
    ServiceConfig sc;
    sc.data_dir = data_dir;
    sc.stream_queue_capacity = queue;
    service_ = std::make_unique<IngestService>(sc);
    HttpServerConfig hc;
    hc.host = host;
    hc.port = port;
    hc.worker_threads = threads;
    hc.ui_dir = ui_dir;
    server_ = std::make_unique<HttpServer>(*service_, hc);
  }
  ~PyServer() { stop(); }

  int start() { return server_->start(); }
  void stop() {
    if (stopped_) return;
    stopped_ = true;
    py::gil_scoped_release release;
    server_->stop();
    service_->shutdown();
  }
  std::string url() const { return server_->base_url(); }
  int port() const { return server_->port(); }

 private:
  std::unique_ptr<IngestService> service_;
  std::unique_ptr<HttpServer> server_;
  bool stopped_ = false;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "telecg native core";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<NotFoundError>(m, "NotFoundError", PyExc_LookupError);
  py::register_exception<StorageError>(m, "StorageError", PyExc_OSError);
  py::register_exception<StateError>(m, "StateError", PyExc_RuntimeError);

  m.def("beat_value", [](double phase_rad) { return beat_value(SynthParams{}, phase_rad); }, py::arg("phase_rad"),
        "Noise-free default PQRST morphology (mV) at a phase in radians.");

  m.def(
      "generate_analog",
      [](double heart_rate_bpm, double rate_hz, double duration_s, double noise_sigma_mv, double wander_amp_mv,
         double mains_amp_mv, double mains_hz, double gain,
         const std::vector<std::tuple<double, double, std::string>>& lead_off, std::uint64_t seed, int bits,
         double vref_v) {
        const auto params = make_params(heart_rate_bpm, noise_sigma_mv, wander_amp_mv, mains_amp_mv, mains_hz, gain,
                                        lead_off, seed);
        const auto samples = generate_analog(params, rate_hz, duration_s, make_adc(bits, vref_v, std::nullopt));
        py::array_t<double> t(samples.size()), mv(samples.size());
        py::array_t<std::uint8_t> flags(samples.size());
        auto tt = t.mutable_unchecked<1>();
        auto vv = mv.mutable_unchecked<1>();
        auto ff = flags.mutable_unchecked<1>();
        for (std::size_t i = 0; i < samples.size(); ++i) {
          tt(i) = samples[i].t_s;
          vv(i) = samples[i].value_mv;
          ff(i) = samples[i].lead_state;
        }
        return py::make_tuple(t, mv, flags);
      },
      py::arg("heart_rate_bpm") = 60.0, py::arg("rate_hz") = 250.0, py::arg("duration_s") = 10.0,
      py::arg("noise_sigma_mv") = 0.0, py::arg("wander_amp_mv") = 0.0, py::arg("mains_amp_mv") = 0.0,
      py::arg("mains_hz") = 50.0, py::arg("gain") = 1.0,
      py::arg("lead_off") = std::vector<std::tuple<double, double, std::string>>{}, py::arg("seed") = 1,
      py::arg("bits") = 12, py::arg("vref_v") = 3.3,
      "Returns (t_s, value_mv, lead_flags) numpy arrays.");

  m.def("sample_count", &sample_count, py::arg("rate_hz"), py::arg("duration_s"));

  m.def(
      "quantize",
      [](py::array_t<double, py::array::forcecast> mv, int bits, double vref_v, std::optional<double> baseline_v) {
        const auto adc = make_adc(bits, vref_v, baseline_v);
        return py::vectorize([&adc](double x) { return quantize(x, adc); })(mv);
      },
      py::arg("value_mv"), py::arg("bits") = 12, py::arg("vref_v") = 3.3, py::arg("baseline_v") = py::none());

  m.def(
      "dequantize",
      [](py::array_t<std::uint32_t, py::array::forcecast> codes, int bits, double vref_v,
         std::optional<double> baseline_v) {
        const auto adc = make_adc(bits, vref_v, baseline_v);
        return py::vectorize([&adc](std::uint32_t c) { return dequantize(c, adc); })(codes);
      },
      py::arg("code"), py::arg("bits") = 12, py::arg("vref_v") = 3.3, py::arg("baseline_v") = py::none());

  m.def(
      "detect_beats",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> mv, double rate_hz) {
        const std::span<const double> view(mv.data(), static_cast<std::size_t>(mv.size()));
        return to_py(to_json(detect_beats(view, rate_hz)));
      },
      py::arg("value_mv"), py::arg("rate_hz"), "Beat detection over dequantized millivolts.");

  m.def(
      "detect_beats_codes",
      [](py::array_t<std::uint16_t, py::array::c_style | py::array::forcecast> codes, double rate_hz, int bits,
         double vref_v) {
        const auto samples = stored_from(codes, std::nullopt, rate_hz);
        return to_py(to_json(detect_beats(samples, rate_hz, make_adc(bits, vref_v, std::nullopt))));
      },
      py::arg("codes"), py::arg("rate_hz"), py::arg("bits") = 12, py::arg("vref_v") = 3.3);

  m.def(
      "quality_window",
      [](py::array_t<std::uint16_t, py::array::c_style | py::array::forcecast> codes,
         std::optional<py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>> flags, double rate_hz,
         int bits, double window_len_s) {
        const auto samples = stored_from(codes, flags, rate_hz);
        return to_py(to_json(quality_window(samples, rate_hz, bits, window_len_s)));
      },
      py::arg("codes"), py::arg("flags") = py::none(), py::arg("rate_hz") = 250.0, py::arg("bits") = 12,
      py::arg("window_len_s") = 10.0);

  m.def("backoff_base_ms", &backoff_base_ms, py::arg("attempt"), py::arg("max_ms") = 30000);

  m.def(
      "crc32",
      [](py::bytes data) {
        const std::string s = data;
        return crc32(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
      },
      py::arg("data"));

  m.def("scan_segment", [](const std::filesystem::path& p) { return scan_to_py(scan_segment(p)); }, py::arg("path"));

  m.def(
      "read_range",
      [](const std::filesystem::path& p, std::uint64_t from_us, std::uint64_t to_us) {
        const auto r = read_range(p, from_us, to_us);
        py::list rows;
        for (const auto& s : r.samples) rows.append(py::make_tuple(s.ts_us, s.code, s.flags));
        return py::make_tuple(rows, r.corruption);
      },
      py::arg("path"), py::arg("from_us") = 0, py::arg("to_us") = std::numeric_limits<std::uint64_t>::max());

  m.def(
      "recover",
      [](const std::filesystem::path& data_dir) {
        const auto r = recover(data_dir);
        py::dict sessions;
        for (const auto& [id, seg] : r.sessions) {
          sessions[py::str(id)] = py::dict(py::arg("last_seq") = seg.scan.last_seq(),
                                           py::arg("samples") = seg.scan.sample_count(),
                                           py::arg("truncated_bytes") = seg.truncated_bytes);
        }
        return py::dict(py::arg("sessions") = sessions, py::arg("unavailable") = r.unavailable);
      },
      py::arg("data_dir"), "Truncates damaged segment tails in place and reports resume points.");

  py::class_<PyServer>(m, "Server")
      .def(py::init<const std::string&, const std::string&, int, std::size_t, std::size_t, const std::string&>(),
           py::arg("data_dir"), py::arg("host") = "127.0.0.1", py::arg("port") = 0, py::arg("threads") = 64,
           py::arg("queue") = 256, py::arg("ui_dir") = "")
      .def("start", &PyServer::start)
      .def("stop", &PyServer::stop)
      .def_property_readonly("url", &PyServer::url)
      .def_property_readonly("port", &PyServer::port)
      .def("__enter__", [](PyServer& s) -> PyServer& { s.start(); return s; }, py::return_value_policy::reference)
      .def("__exit__", [](PyServer& s, py::args) { s.stop(); return false; });

  m.def(
      "simulate",
      [](const std::string& server_url, double duration_s, double heart_rate_bpm, double noise_sigma_mv,
         const std::vector<std::tuple<double, double, std::string>>& lead_off, const std::string& device_id,
         const std::string& patient_id, std::uint32_t rate_hz, std::uint32_t batch_size, std::size_t fleet,
         std::uint64_t seed, double pace, std::uint64_t epoch_us) {
        DeviceConfig cfg;
        cfg.server_url = server_url;
        cfg.device_id = device_id;
        cfg.patient_id = patient_id;
        cfg.sample_rate_hz = rate_hz;
        cfg.batch_size = batch_size;
        cfg.pace = pace;
        cfg.epoch_us = epoch_us;
        cfg.seed = seed;
        cfg.validate();
        const auto params = make_params(heart_rate_bpm, noise_sigma_mv, 0, 0, 50, 1.0, lead_off, seed);
        std::vector<TransmitReport> reports;
        {
          py::gil_scoped_release release;
          if (fleet <= 1) {
            reports.push_back(run_device(cfg, params, duration_s));
          } else {
            reports = run_fleet(cfg, params, duration_s, fleet);
          }
        }
        py::list out;
        for (const auto& r : reports) out.append(to_py(to_json(r)));
        return out;
      },
      py::arg("server_url"), py::arg("duration_s") = 10.0, py::arg("heart_rate_bpm") = 60.0,
      py::arg("noise_sigma_mv") = 0.05, py::arg("lead_off") = std::vector<std::tuple<double, double, std::string>>{},
      py::arg("device_id") = "py-sim", py::arg("patient_id") = "patient-1", py::arg("rate_hz") = 250,
      py::arg("batch_size") = 50, py::arg("fleet") = 1, py::arg("seed") = 1, py::arg("pace") = 0.0,
      py::arg("epoch_us") = 0, "Runs simulated devices against a server; returns one report per device.");
}
