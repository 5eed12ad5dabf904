#pragma once

// Server-side derived signals: debounced lead-off / flatline / quality alerts,
// a windowed quality score, and an energy-threshold beat detector.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "telecg/batch.hpp"
#include "telecg/signal.hpp"

namespace telecg {

enum class AlertKind { LeadOffPlus, LeadOffMinus, Flatline, QualityLow };

std::string to_string(AlertKind kind);
AlertKind alert_kind_from_string(const std::string& s);

struct Alert {
  std::string alert_id;
  std::string session_id;
  AlertKind kind = AlertKind::LeadOffPlus;
  std::uint64_t start_ts_us = 0;
  std::optional<std::uint64_t> end_ts_us;  // empty while ongoing
  bool acknowledged = false;

  bool open() const { return !end_ts_us.has_value(); }
  bool operator==(const Alert&) const = default;
};

struct AlertTransition {
  enum class Type { Opened, Closed };
  Type type = Type::Opened;
  Alert alert;
};

struct MonitorConfig {
  double lead_open_s = 0.25;
  double lead_close_s = 1.0;
  double flatline_alert_s = 2.0;
  double quality_window_s = 5.0;
  double quality_threshold = 0.5;
};

struct QualityReport {
  std::uint64_t window_start_us = 0;
  double window_len_s = 0.0;
  double in_range_fraction = 0.0;
  double flatline_fraction = 0.0;
  double lead_off_fraction = 0.0;
  double score = 0.0;
};

/// score = in_range * (1 - flatline) * (1 - lead_off)
double quality_score(double in_range_fraction, double flatline_fraction, double lead_off_fraction);

/// Evaluates the trailing `window_len_s` seconds of `samples` (all of them if
/// shorter). A flatline is a run of identical codes lasting at least 500 ms.
QualityReport quality_window(std::span<const StoredSample> samples, double rate_hz, int adc_bits,
                             double window_len_s);

struct BeatEstimate {
  std::vector<std::uint64_t> beat_ts_us;
  double bpm = 0.0;
  double confidence = 0.0;
};

/// Minimum window the detector accepts.
inline constexpr double kMinBeatWindowS = 2.0;
inline constexpr double kBeatRefractoryS = 0.2;
inline constexpr double kBeatSmoothS = 0.016;
inline constexpr double kBeatIntegrateS = 0.1;

/// Beat detection over uniformly sampled millivolts starting at `start_ts_us`.
BeatEstimate detect_beats(std::span<const double> mv, double rate_hz, std::uint64_t start_ts_us = 0);
/// Same pipeline over stored ADC codes; timestamps come from the samples.
BeatEstimate detect_beats(std::span<const StoredSample> samples, double rate_hz, const AdcConfig& adc);

/// Streaming alert state for one session. Feed samples in timestamp order;
/// replaying the same samples into a fresh monitor yields the same alerts.
class SessionMonitor {
 public:
  SessionMonitor(std::string session_id, std::uint32_t rate_hz, AdcConfig adc,
                 MonitorConfig config = {});

  std::vector<AlertTransition> update(std::span<const StoredSample> samples);
  std::vector<AlertTransition> update(const SampleBatch& batch);

  const std::vector<Alert>& alerts() const { return alerts_; }
  /// Marks an alert acknowledged. Returns false if unknown.
  bool acknowledge(const std::string& alert_id);
  std::optional<QualityReport> last_quality() const { return last_quality_; }

 private:
  struct RunState {
    std::uint64_t run = 0;        // consecutive samples in the triggering condition
    std::uint64_t clear_run = 0;  // consecutive samples out of it while an alert is open
    std::uint64_t first_clear_ts = 0;
    std::optional<std::size_t> open_index;
  };

  void open_alert(RunState& st, AlertKind kind, std::uint64_t ts, std::vector<AlertTransition>& out);
  void close_alert(RunState& st, std::uint64_t ts, std::vector<AlertTransition>& out);
  void step_lead(RunState& st, AlertKind kind, bool flagged, std::uint64_t ts,
                 std::vector<AlertTransition>& out);
  void step_flatline(const StoredSample& s, std::vector<AlertTransition>& out);
  void step_quality(const StoredSample& s, std::vector<AlertTransition>& out);

  std::string session_id_;
  std::uint32_t rate_hz_;
  AdcConfig adc_;
  MonitorConfig config_;
  std::vector<Alert> alerts_;

  RunState plus_;
  RunState minus_;
  RunState flat_;
  std::optional<std::uint16_t> flat_code_;
  RunState quality_;
  std::vector<StoredSample> quality_buf_;
  std::optional<QualityReport> last_quality_;
};

std::string make_alert_id(const std::string& session_id, AlertKind kind, std::uint64_t start_ts_us);

}  // namespace telecg
