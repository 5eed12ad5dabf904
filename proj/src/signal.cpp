#include "telecg/signal.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "telecg/errors.hpp"

namespace telecg {

namespace {
constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}  // namespace

std::array<WaveParams, kWaveCount> default_waves() {
  return {{
      {0.15, -kPi / 3.0, 0.25},        // P
      {-0.25, -kPi / 12.0, 0.1},       // Q
      {1.0, 0.0, 0.1},                 // R
      {-0.3, kPi / 12.0, 0.1},         // S
      {0.35, 5.0 * kPi / 12.0, 0.4},   // T
  }};
}

std::uint8_t lead_bits(LeadWhich which) {
  switch (which) {
    case LeadWhich::LoPlus: return lead::kPlus;
    case LeadWhich::LoMinus: return lead::kMinus;
    case LeadWhich::Both: return lead::kPlus | lead::kMinus;
  }
  return 0;
}

LeadWhich parse_lead_which(const std::string& text) {
  if (text == "plus" || text == "LoPlus" || text == "+") return LeadWhich::LoPlus;
  if (text == "minus" || text == "LoMinus" || text == "-") return LeadWhich::LoMinus;
  if (text == "both" || text == "Both") return LeadWhich::Both;
  throw ValidationError("unknown lead selector '" + text + "' (expected plus, minus or both)");
}

std::string to_string(LeadWhich which) {
  switch (which) {
    case LeadWhich::LoPlus: return "plus";
    case LeadWhich::LoMinus: return "minus";
    case LeadWhich::Both: return "both";
  }
  return "?";
}

void SynthParams::validate() const {
  if (!(heart_rate_bpm >= 20.0 && heart_rate_bpm <= 300.0)) {
    throw ValidationError("heart_rate_bpm must be in [20, 300]");
  }
  for (std::size_t i = 0; i < waves.size(); ++i) {
    const auto& w = waves[i];
    if (!(w.width_rad > 0.0)) throw ValidationError("wave width_rad must be > 0");
    if (!(w.center_rad >= -kPi && w.center_rad < kPi)) {
      throw ValidationError("wave center_rad must be in [-pi, pi)");
    }
    if (i > 0 && !(waves[i - 1].center_rad < w.center_rad)) {
      throw ValidationError("wave centers must be strictly increasing P < Q < R < S < T");
    }
  }
  if (!std::isfinite(baseline_mv) || !std::isfinite(gain)) {
    throw ValidationError("baseline_mv and gain must be finite");
  }
  if (!(noise.white_sigma_mv >= 0.0) || !(noise.baseline_wander_amp_mv >= 0.0) ||
      !(noise.mains_amp_mv >= 0.0)) {
    throw ValidationError("noise amplitudes must be non-negative");
  }
  if (!(noise.baseline_wander_hz > 0.0)) throw ValidationError("baseline_wander_hz must be > 0");
  if (noise.mains_hz != 50.0 && noise.mains_hz != 60.0) {
    throw ValidationError("mains_hz must be 50 or 60");
  }
  for (const auto& ev : lead_events) {
    if (!(ev.start_s >= 0.0) || !(ev.end_s > ev.start_s)) {
      throw ValidationError("lead event needs 0 <= start_s < end_s");
    }
  }
}

void AdcConfig::validate() const {
  if (!(vref_v > 0.0) || !std::isfinite(vref_v)) throw ValidationError("adc vref_v must be > 0");
  if (bits < 8 || bits > 16) throw ValidationError("adc bits must be in [8, 16]");
  if (!(baseline_v >= 0.0 && baseline_v <= vref_v)) {
    throw ValidationError("adc baseline_v must be in [0, vref_v]");
  }
}

double wrap_phase(double rad) {
  double r = std::fmod(rad + kPi, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  double out = r - kPi;
  // fmod can land exactly on +pi after rounding
  return out >= kPi ? -kPi : out;
}

double beat_value(const SynthParams& params, double phase_rad) {
  double sum = params.baseline_mv;
  for (const auto& w : params.waves) {
    const double d = wrap_phase(phase_rad - w.center_rad);
    sum += w.amplitude_mv * std::exp(-(d * d) / (2.0 * w.width_rad * w.width_rad));
  }
  return sum;
}

EcgSynthesizer::EcgSynthesizer(SynthParams params, double rate_hz, AdcConfig adc)
    : params_(std::move(params)),
      rate_hz_(rate_hz),
      rail_mv_(adc.vref_v * 1000.0),
      cycles_per_sample_(0.0),
      rng_(params_.seed),
      white_(0.0, 1.0) {
  params_.validate();
  adc.validate();
  if (!(rate_hz > 0.0) || !std::isfinite(rate_hz)) throw ValidationError("rate_hz must be > 0");
  cycles_per_sample_ = params_.heart_rate_bpm / 60.0 / rate_hz_;
}

std::uint8_t EcgSynthesizer::lead_state_at(double t_s) const {
  std::uint8_t state = 0;
  for (const auto& ev : params_.lead_events) {
    if (t_s >= ev.start_s && t_s < ev.end_s) state |= lead_bits(ev.which);
  }
  return state;
}

AnalogSample EcgSynthesizer::next() {
  AnalogSample s;
  s.t_s = static_cast<double>(index_) / rate_hz_;
  const double phase = -kPi + kTwoPi * cycle_pos_;

  double v = params_.gain * beat_value(params_, phase);
  const auto& n = params_.noise;
  // One normal draw per sample regardless of sigma keeps sequences aligned
  // across different noise levels for the same seed.
  const double z = white_(rng_);
  v += n.white_sigma_mv * z;
  if (n.baseline_wander_amp_mv != 0.0) {
    v += n.baseline_wander_amp_mv * std::sin(kTwoPi * n.baseline_wander_hz * s.t_s);
  }
  if (n.mains_amp_mv != 0.0) v += n.mains_amp_mv * std::sin(kTwoPi * n.mains_hz * s.t_s);

  s.lead_state = lead_state_at(s.t_s);
  s.value_mv = s.lead_state != 0 ? rail_mv_ : v;

  cycle_pos_ += cycles_per_sample_;
  while (cycle_pos_ >= 1.0) cycle_pos_ -= 1.0;
  ++index_;
  return s;
}

std::uint64_t sample_count(double rate_hz, double duration_s) {
  if (!(rate_hz > 0.0) || !std::isfinite(rate_hz)) throw ValidationError("rate_hz must be > 0");
  if (!(duration_s > 0.0) || !std::isfinite(duration_s)) {
    throw ValidationError("duration_s must be > 0");
  }
  // Guard against 250 * 0.1 landing a hair below 25.
  const double product = rate_hz * duration_s;
  const double rounded = std::round(product);
  if (std::abs(product - rounded) < 1e-9 * std::max(1.0, product)) {
    return static_cast<std::uint64_t>(rounded);
  }
  return static_cast<std::uint64_t>(std::floor(product));
}

std::vector<AnalogSample> generate_analog(const SynthParams& params, double rate_hz,
                                          double duration_s, const AdcConfig& adc) {
  const auto n = sample_count(rate_hz, duration_s);
  EcgSynthesizer synth(params, rate_hz, adc);
  std::vector<AnalogSample> out;
  out.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) out.push_back(synth.next());
  return out;
}

std::uint32_t quantize(double value_mv, const AdcConfig& adc) {
  const double levels = static_cast<double>(std::uint32_t{1} << adc.bits);
  const double v = adc.baseline_v + value_mv / 1000.0;
  const double code = std::floor(v / adc.vref_v * levels);
  if (!(code >= 0.0)) return 0;  // also catches NaN
  if (code >= levels - 1.0) return adc.max_code();
  return static_cast<std::uint32_t>(code);
}

double dequantize(std::uint32_t code, const AdcConfig& adc) {
  if (code > adc.max_code()) {
    throw ValidationError("code " + std::to_string(code) + " out of range for " +
                          std::to_string(adc.bits) + "-bit ADC");
  }
  const double levels = static_cast<double>(std::uint32_t{1} << adc.bits);
  return ((static_cast<double>(code) + 0.5) / levels * adc.vref_v - adc.baseline_v) * 1000.0;
}

void write_analog_text(std::ostream& out, std::span<const AnalogSample> samples) {
  std::ostringstream line;
  line.imbue(std::locale::classic());
  line.precision(17);
  for (const auto& s : samples) {
    line.str({});
    line << s.t_s << ' ' << s.value_mv << '\n';
    out << line.str();
  }
}

std::vector<AnalogSample> read_analog_text(std::istream& in) {
  std::vector<AnalogSample> out;
  std::string text;
  std::size_t lineno = 0;
  while (std::getline(in, text)) {
    ++lineno;
    if (text.empty() || text[0] == '#') continue;
    std::istringstream fields(text);
    fields.imbue(std::locale::classic());
    AnalogSample s;
    if (!(fields >> s.t_s >> s.value_mv)) {
      throw ValidationError("analog text line " + std::to_string(lineno) + " is malformed");
    }
    unsigned flags = 0;
    if (fields >> flags) s.lead_state = static_cast<std::uint8_t>(flags & lead::kMask);
    out.push_back(s);
  }
  return out;
}

}  // namespace telecg
