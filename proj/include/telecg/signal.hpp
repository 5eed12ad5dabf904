#pragma once

// Synthetic single-lead ECG source and the front-end -> ADC model.
//
// A beat is a sum of five Gaussian bumps (P, Q, R, S, T) over a wrapped beat
// phase in [-pi, pi). generate_analog() runs the phase at the configured heart
// rate, adds the configured noise, and applies lead-off events. quantize() and
// dequantize() model the ESP32 ADC.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace telecg {

struct WaveParams {
  double amplitude_mv = 0.0;
  double center_rad = 0.0;
  double width_rad = 0.1;
};

enum class LeadWhich : std::uint8_t { LoPlus, LoMinus, Both };

/// Per-sample lead-state flags as reported by the AD8232 LO+/LO- pins.
namespace lead {
inline constexpr std::uint8_t kPlus = 0x1;   // positive electrode detached
inline constexpr std::uint8_t kMinus = 0x2;  // negative electrode detached
inline constexpr std::uint8_t kMask = 0x3;
}  // namespace lead

std::uint8_t lead_bits(LeadWhich which);
LeadWhich parse_lead_which(const std::string& text);
std::string to_string(LeadWhich which);

struct LeadEvent {
  double start_s = 0.0;
  double end_s = 0.0;
  LeadWhich which = LeadWhich::LoPlus;
};

struct NoiseConfig {
  double white_sigma_mv = 0.0;
  double baseline_wander_amp_mv = 0.0;
  double baseline_wander_hz = 0.3;
  double mains_amp_mv = 0.0;
  double mains_hz = 50.0;

  bool silent() const {
    return white_sigma_mv == 0.0 && baseline_wander_amp_mv == 0.0 && mains_amp_mv == 0.0;
  }
};

inline constexpr std::size_t kWaveCount = 5;

/// P, Q, R, S, T defaults giving a ~1 mV R peak.
std::array<WaveParams, kWaveCount> default_waves();

struct SynthParams {
  double heart_rate_bpm = 60.0;
  std::array<WaveParams, kWaveCount> waves = default_waves();
  double baseline_mv = 0.0;
  /// Front-end gain applied to the morphology before noise is added. 1.0 means
  /// the wave amplitudes are already expressed at the ADC input.
  double gain = 1.0;
  NoiseConfig noise;
  std::vector<LeadEvent> lead_events;
  std::uint64_t seed = 0;

  /// Throws ValidationError if any invariant is violated.
  void validate() const;
};

struct AdcConfig {
  double vref_v = 3.3;
  int bits = 12;
  double baseline_v = 1.65;

  void validate() const;
  std::uint32_t max_code() const { return (std::uint32_t{1} << bits) - 1; }
  /// Size of one code step in millivolts.
  double lsb_mv() const { return vref_v * 1000.0 / static_cast<double>(std::uint32_t{1} << bits); }
};

struct AnalogSample {
  double t_s = 0.0;
  double value_mv = 0.0;
  std::uint8_t lead_state = 0;
};

/// Wraps an angle into [-pi, pi).
double wrap_phase(double rad);

/// Noise-free morphology at a beat phase. Expects a validated params.
double beat_value(const SynthParams& params, double phase_rad);

/// Incremental generator behind generate_analog(). Produces the same sequence
/// sample by sample so long or open-ended runs need no up-front buffer.
class EcgSynthesizer {
 public:
  EcgSynthesizer(SynthParams params, double rate_hz, AdcConfig adc = {});

  AnalogSample next();
  std::uint64_t index() const { return index_; }
  double rate_hz() const { return rate_hz_; }
  const SynthParams& params() const { return params_; }

 private:
  std::uint8_t lead_state_at(double t_s) const;

  SynthParams params_;
  double rate_hz_;
  double rail_mv_;
  double cycles_per_sample_;
  double cycle_pos_ = 0.0;  // fraction of the current beat, in [0, 1)
  std::uint64_t index_ = 0;
  std::mt19937_64 rng_;
  std::normal_distribution<double> white_;
};

/// floor(rate_hz * duration_s) samples at uniform 1/rate_hz spacing.
/// During lead-off the value is pinned to the positive rail of `adc`.
std::vector<AnalogSample> generate_analog(const SynthParams& params, double rate_hz,
                                          double duration_s, const AdcConfig& adc = {});

/// Number of samples generate_analog() returns for a rate and duration.
std::uint64_t sample_count(double rate_hz, double duration_s);

std::uint32_t quantize(double value_mv, const AdcConfig& adc);
double dequantize(std::uint32_t code, const AdcConfig& adc);

/// Two-column debug text: "t_s value_mv" per line, '.' decimal separator.
void write_analog_text(std::ostream& out, std::span<const AnalogSample> samples);
/// Reads the two-column format; an optional third column carries lead flags.
std::vector<AnalogSample> read_analog_text(std::istream& in);

}  // namespace telecg
