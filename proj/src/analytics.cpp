#include "telecg/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

#include "telecg/errors.hpp"

namespace telecg {

namespace {

// run of `count` samples lasts at least `seconds`
bool lasts(std::uint64_t count, double seconds, double rate_hz) {
  return static_cast<double>(count) >= seconds * rate_hz - 1e-9;
}

std::size_t samples_for(double seconds, double rate_hz) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(seconds * rate_hz)));
}

// Centered moving average with the window clipped at the edges.
std::vector<double> centered_mean(std::span<const double> x, std::size_t window) {
  const std::size_t n = x.size();
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + x[i];
  const std::size_t half = window / 2;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(n, i + (window - half));
    out[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(hi - lo);
  }
  return out;
}

const char* kind_tag(AlertKind k) {
  switch (k) {
    case AlertKind::LeadOffPlus: return "lop";
    case AlertKind::LeadOffMinus: return "lom";
    case AlertKind::Flatline: return "flat";
    case AlertKind::QualityLow: return "qual";
  }
  return "x";
}

}  // namespace

std::string to_string(AlertKind kind) {
  switch (kind) {
    case AlertKind::LeadOffPlus: return "LeadOffPlus";
    case AlertKind::LeadOffMinus: return "LeadOffMinus";
    case AlertKind::Flatline: return "Flatline";
    case AlertKind::QualityLow: return "QualityLow";
  }
  return "?";
}

AlertKind alert_kind_from_string(const std::string& s) {
  if (s == "LeadOffPlus") return AlertKind::LeadOffPlus;
  if (s == "LeadOffMinus") return AlertKind::LeadOffMinus;
  if (s == "Flatline") return AlertKind::Flatline;
  if (s == "QualityLow") return AlertKind::QualityLow;
  throw ValidationError("unknown alert kind '" + s + "'");
}

std::string make_alert_id(const std::string& session_id, AlertKind kind, std::uint64_t start_ts_us) {
  return session_id + "-" + kind_tag(kind) + "-" + std::to_string(start_ts_us);
}

double quality_score(double in_range_fraction, double flatline_fraction, double lead_off_fraction) {
  return in_range_fraction * (1.0 - flatline_fraction) * (1.0 - lead_off_fraction);
}

QualityReport quality_window(std::span<const StoredSample> samples, double rate_hz, int adc_bits,
                             double window_len_s) {
  QualityReport r;
  r.window_len_s = window_len_s;
  if (samples.empty()) return r;
  const std::size_t want = samples_for(window_len_s, rate_hz);
  if (samples.size() > want) samples = samples.last(want);
  r.window_start_us = samples.front().ts_us;

  const std::uint32_t top = (std::uint32_t{1} << adc_bits) - 1;
  std::size_t in_range = 0, lead_off = 0, flat = 0;
  std::size_t run_start = 0;
  const auto close_run = [&](std::size_t end) {
    if (lasts(end - run_start, 0.5, rate_hz)) flat += end - run_start;
  };
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.code > 0 && s.code < top) ++in_range;
    if ((s.flags & lead::kMask) != 0) ++lead_off;
    if (i > 0 && s.code != samples[i - 1].code) {
      close_run(i);
      run_start = i;
    }
  }
  close_run(samples.size());

  const auto n = static_cast<double>(samples.size());
  r.in_range_fraction = static_cast<double>(in_range) / n;
  r.flatline_fraction = static_cast<double>(flat) / n;
  r.lead_off_fraction = static_cast<double>(lead_off) / n;
  r.score = quality_score(r.in_range_fraction, r.flatline_fraction, r.lead_off_fraction);
  return r;
}

BeatEstimate detect_beats(std::span<const double> mv, double rate_hz, std::uint64_t start_ts_us) {
  std::vector<std::uint64_t> ts(mv.size());
  for (std::size_t i = 0; i < ts.size(); ++i) ts[i] = sample_ts_us(start_ts_us, i, rate_hz);

  BeatEstimate est;
  if (!(rate_hz > 0.0)) throw ValidationError("rate_hz must be > 0");
  const std::size_t n = mv.size();
  if (static_cast<double>(n) < kMinBeatWindowS * rate_hz) return est;
  const auto [lo, hi] = std::minmax_element(mv.begin(), mv.end());
  if (*lo == *hi) return est;

  // band-limit: three passes of a short mean minus a long mean, then slope, square, integrate
  const std::size_t short_len = samples_for(kBeatSmoothS, rate_hz);
  std::vector<double> smooth(mv.begin(), mv.end());
  for (int k = 0; k < 3; ++k) smooth = centered_mean(smooth, short_len);
  const auto trend = centered_mean(mv, samples_for(0.25, rate_hz));
  std::vector<double> band(n);
  for (std::size_t i = 0; i < n; ++i) band[i] = smooth[i] - trend[i];
  std::vector<double> energy(n, 0.0);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double slope = 0.5 * (band[i + 1] - band[i - 1]);
    energy[i] = slope * slope;
  }
  const auto integrated = centered_mean(energy, samples_for(kBeatIntegrateS, rate_hz));

  const std::size_t training = std::min(n, samples_for(kMinBeatWindowS, rate_hz));
  const double initial_peak = *std::max_element(integrated.begin(), integrated.begin() + training);
  if (!(initial_peak > 0.0)) return est;

  // running means of accepted peaks, one on the integrated energy and one on the band amplitude
  constexpr std::size_t kPeakMemory = 8;
  std::deque<double> recent_peaks{initial_peak};
  double initial_amp = 0.0;
  for (std::size_t i = 0; i < training; ++i) initial_amp = std::max(initial_amp, std::abs(band[i]));
  std::deque<double> recent_amps{initial_amp};
  const auto half_mean = [](const std::deque<double>& d) {
    return 0.5 * std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
  };
  const auto remember = [](std::deque<double>& d, double v) {
    d.push_back(v);
    if (d.size() > kPeakMemory) d.pop_front();
  };

  const std::size_t refractory = samples_for(kBeatRefractoryS, rate_hz);
  const std::size_t search = samples_for(0.075, rate_hz);
  std::vector<std::size_t> beats;

  // snap to the largest band-limited deflection near the energy peak
  const auto snap = [&](std::size_t i) {
    const std::size_t lo = i > search ? i - search : 0;
    const std::size_t hi = std::min(n, i + search + 1);
    std::size_t at = lo;
    for (std::size_t k = lo; k < hi; ++k) {
      if (std::abs(band[k]) > std::abs(band[at])) at = k;
    }
    return at;
  };
  const auto accept = [&](std::size_t i, double v) {
    const std::size_t at = snap(i);
    const double amp = std::abs(band[at]);
    if (amp <= half_mean(recent_amps)) return;
    if (!beats.empty() && (at <= beats.back() || at - beats.back() < refractory)) {
      // a stronger peak inside the refractory period replaces the earlier one
      if (v > recent_peaks.back() && (beats.size() < 2 || at - beats[beats.size() - 2] >= refractory)) {
        beats.back() = at;
        recent_peaks.back() = v;
        recent_amps.back() = amp;
      }
      return;
    }
    beats.push_back(at);
    remember(recent_peaks, v);
    remember(recent_amps, amp);
  };
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double v = integrated[i];
    if (!(v > integrated[i - 1] && v >= integrated[i + 1])) continue;
    if (v > half_mean(recent_peaks)) accept(i, v);
  }

  for (auto b : beats) est.beat_ts_us.push_back(ts[b]);
  if (beats.size() >= 2) {
    const double span_s = static_cast<double>(beats.back() - beats.front()) / rate_hz;
    est.bpm = 60.0 * static_cast<double>(beats.size() - 1) / span_s;
    std::vector<double> rr;
    for (std::size_t k = 1; k < beats.size(); ++k) {
      rr.push_back(static_cast<double>(beats[k] - beats[k - 1]) / rate_hz);
    }
    const double mean = std::accumulate(rr.begin(), rr.end(), 0.0) / static_cast<double>(rr.size());
    double var = 0.0;
    for (double x : rr) var += (x - mean) * (x - mean);
    var /= static_cast<double>(rr.size());
    est.confidence = std::clamp(1.0 - std::sqrt(var) / mean, 0.0, 1.0);
  }
  return est;
}

BeatEstimate detect_beats(std::span<const StoredSample> samples, double rate_hz, const AdcConfig& adc) {
  std::vector<double> mv;
  mv.reserve(samples.size());
  for (const auto& s : samples) mv.push_back(dequantize(s.code, adc));
  auto est = detect_beats(std::span<const double>(mv), rate_hz, 0);
  // map index-based timestamps back onto the stored ones
  for (auto& t : est.beat_ts_us) {
    const auto idx = static_cast<std::size_t>(std::llround(static_cast<double>(t) * rate_hz / 1e6));
    t = samples[std::min(idx, samples.size() - 1)].ts_us;
  }
  return est;
}

SessionMonitor::SessionMonitor(std::string session_id, std::uint32_t rate_hz, AdcConfig adc,
                               MonitorConfig config)
    : session_id_(std::move(session_id)), rate_hz_(rate_hz), adc_(adc), config_(config) {
  if (rate_hz_ == 0) throw ValidationError("rate_hz must be > 0");
}

void SessionMonitor::open_alert(RunState& st, AlertKind kind, std::uint64_t ts,
                                std::vector<AlertTransition>& out) {
  Alert a;
  a.alert_id = make_alert_id(session_id_, kind, ts);
  a.session_id = session_id_;
  a.kind = kind;
  a.start_ts_us = ts;
  st.open_index = alerts_.size();
  st.clear_run = 0;
  alerts_.push_back(a);
  out.push_back({AlertTransition::Type::Opened, a});
}

void SessionMonitor::close_alert(RunState& st, std::uint64_t ts, std::vector<AlertTransition>& out) {
  auto& a = alerts_[*st.open_index];
  a.end_ts_us = std::max(ts, a.start_ts_us);
  st.open_index.reset();
  st.clear_run = 0;
  out.push_back({AlertTransition::Type::Closed, a});
}

void SessionMonitor::step_lead(RunState& st, AlertKind kind, bool flagged, std::uint64_t ts,
                               std::vector<AlertTransition>& out) {
  if (flagged) {
    ++st.run;
    st.clear_run = 0;
    if (!st.open_index && lasts(st.run, config_.lead_open_s, rate_hz_)) open_alert(st, kind, ts, out);
    return;
  }
  st.run = 0;
  if (!st.open_index) return;
  if (st.clear_run++ == 0) st.first_clear_ts = ts;
  if (lasts(st.clear_run, config_.lead_close_s, rate_hz_)) close_alert(st, st.first_clear_ts, out);
}

void SessionMonitor::step_flatline(const StoredSample& s, std::vector<AlertTransition>& out) {
  // lead-off pins the output to a rail; that is reported by the lead alerts
  if ((s.flags & lead::kMask) != 0 || !flat_code_ || *flat_code_ != s.code) {
    if (flat_.open_index) close_alert(flat_, s.ts_us, out);
    flat_.run = (s.flags & lead::kMask) != 0 ? 0 : 1;
    flat_code_ = (s.flags & lead::kMask) != 0 ? std::nullopt : std::optional<std::uint16_t>(s.code);
    return;
  }
  ++flat_.run;
  if (!flat_.open_index && lasts(flat_.run, config_.flatline_alert_s, rate_hz_)) {
    open_alert(flat_, AlertKind::Flatline, s.ts_us, out);
  }
}

void SessionMonitor::step_quality(const StoredSample& s, std::vector<AlertTransition>& out) {
  quality_buf_.push_back(s);
  const std::size_t window = samples_for(config_.quality_window_s, rate_hz_);
  if (quality_buf_.size() < window) return;
  const auto report = quality_window(quality_buf_, rate_hz_, adc_.bits, config_.quality_window_s);
  last_quality_ = report;
  quality_buf_.clear();
  if (report.lead_off_fraction > 0.0) return;  // lead alerts own this window
  const bool poor = report.score < config_.quality_threshold;
  if (poor && !quality_.open_index) {
    open_alert(quality_, AlertKind::QualityLow, report.window_start_us, out);
  } else if (!poor && quality_.open_index) {
    close_alert(quality_, report.window_start_us, out);
  }
}

std::vector<AlertTransition> SessionMonitor::update(std::span<const StoredSample> samples) {
  std::vector<AlertTransition> out;
  for (const auto& s : samples) {
    step_lead(plus_, AlertKind::LeadOffPlus, (s.flags & lead::kPlus) != 0, s.ts_us, out);
    step_lead(minus_, AlertKind::LeadOffMinus, (s.flags & lead::kMinus) != 0, s.ts_us, out);
    step_flatline(s, out);
    step_quality(s, out);
  }
  return out;
}

std::vector<AlertTransition> SessionMonitor::update(const SampleBatch& batch) {
  std::vector<StoredSample> samples;
  samples.reserve(batch.codes.size());
  for (std::size_t i = 0; i < batch.codes.size(); ++i) {
    samples.push_back({sample_ts_us(batch.start_ts_us, i, rate_hz_),
                       static_cast<std::uint16_t>(batch.codes[i]), batch.flags[i]});
  }
  return update(samples);
}

bool SessionMonitor::acknowledge(const std::string& alert_id) {
  for (auto& a : alerts_) {
    if (a.alert_id == alert_id) {
      a.acknowledged = true;
      return true;
    }
  }
  return false;
}

}  // namespace telecg
