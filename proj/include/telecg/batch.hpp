#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace telecg {

/// Unit of transmission and storage: a run of consecutive ADC samples.
struct SampleBatch {
  std::string session_id;
  std::uint32_t seq = 0;
  std::uint64_t start_ts_us = 0;
  std::uint32_t sample_rate_hz = 0;
  std::vector<std::uint32_t> codes;
  std::vector<std::uint8_t> flags;

  std::size_t size() const { return codes.size(); }
  bool operator==(const SampleBatch&) const = default;
};

/// One stored reading with its expanded timestamp.
struct StoredSample {
  std::uint64_t ts_us = 0;
  std::uint16_t code = 0;
  std::uint8_t flags = 0;

  bool operator==(const StoredSample&) const = default;
};

/// Timestamp of the i-th sample of a run, rounded to the nearest microsecond.
inline std::uint64_t sample_ts_us(std::uint64_t start_ts_us, std::uint64_t i, double rate_hz) {
  return start_ts_us +
         static_cast<std::uint64_t>(std::llround(static_cast<double>(i) * 1e6 / rate_hz));
}

}  // namespace telecg
