#pragma once

// Append-only segment files, one per session.
//
// Layout (little-endian):
//   header:  "TECG" | u16 version (=1) | u32 meta_len | meta (JSON, meta_len bytes)
//   record:  u32 seq | u64 start_ts_us | u16 count | u16 code[count] | u8 flags[count] | u32 crc32
// The record CRC covers every preceding byte of that record. A reader stops at
// the first record that is short or fails its CRC; everything before it is a
// valid prefix.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "telecg/batch.hpp"
#include "telecg/signal.hpp"

namespace telecg {

inline constexpr char kSegmentMagic[4] = {'T', 'E', 'C', 'G'};
inline constexpr std::uint16_t kSegmentVersion = 1;
inline constexpr std::size_t kRecordOverhead = 4 + 8 + 2 + 4;
inline constexpr const char* kSegmentExtension = ".tecg";

/// Standard CRC-32 (IEEE 802.3, reflected, as used by zlib and PNG).
std::uint32_t crc32(std::span<const std::uint8_t> bytes);

struct SegmentMeta {
  std::string session_id;
  std::string device_id;
  std::string patient_id;
  std::uint32_t sample_rate_hz = 0;
  AdcConfig adc;

  bool operator==(const SegmentMeta& o) const {
    return session_id == o.session_id && device_id == o.device_id && patient_id == o.patient_id &&
           sample_rate_hz == o.sample_rate_hz && adc.vref_v == o.adc.vref_v &&
           adc.bits == o.adc.bits && adc.baseline_v == o.adc.baseline_v;
  }
};

struct SegmentRecord {
  std::uint32_t seq = 0;
  std::uint64_t start_ts_us = 0;
  std::vector<std::uint16_t> codes;
  std::vector<std::uint8_t> flags;

  bool operator==(const SegmentRecord&) const = default;
};

/// Encoded size of a record holding `count` samples.
constexpr std::size_t record_size(std::size_t count) { return kRecordOverhead + count * 3; }

std::vector<std::uint8_t> encode_header(const SegmentMeta& meta);
std::vector<std::uint8_t> encode_record(const SegmentRecord& rec);

enum class DecodeStatus { Ok, Incomplete, CrcMismatch, Invalid };

struct DecodeResult {
  DecodeStatus status = DecodeStatus::Invalid;
  SegmentRecord record;
  std::size_t consumed = 0;
};

/// Decodes one record from the front of `bytes`.
DecodeResult decode_record(std::span<const std::uint8_t> bytes);

SegmentRecord record_from_batch(const SampleBatch& batch);

/// Expands a record into per-sample timestamps.
std::vector<StoredSample> expand_record(const SegmentRecord& rec, std::uint32_t rate_hz);

struct SegmentScan {
  SegmentMeta meta;
  std::vector<SegmentRecord> records;
  std::uint64_t header_bytes = 0;
  std::uint64_t valid_bytes = 0;  // header plus every valid record
  std::uint64_t file_bytes = 0;
  std::optional<std::string> corruption;  // set when bytes past valid_bytes were rejected

  std::int64_t last_seq() const { return records.empty() ? -1 : records.back().seq; }
  std::uint64_t sample_count() const;
};

/// Parses a segment file. Throws StorageError if the header itself is unreadable.
/// `limit_bytes` caps how much of the file is considered (readers racing a writer).
SegmentScan scan_segment(const std::filesystem::path& path,
                         std::optional<std::uint64_t> limit_bytes = std::nullopt);

struct RangeRead {
  std::vector<StoredSample> samples;
  std::optional<std::string> corruption;
};

/// Samples with ts in [from_us, to_us), ascending.
RangeRead read_range(const SegmentScan& scan, std::uint64_t from_us, std::uint64_t to_us);
RangeRead read_range(const std::filesystem::path& path, std::uint64_t from_us, std::uint64_t to_us,
                     std::optional<std::uint64_t> limit_bytes = std::nullopt);

/// Single-writer appender for one segment file. Every append is flushed to
/// durable storage before it returns.
class SegmentWriter {
 public:
  /// Creates a new segment; fails if the file already exists.
  static SegmentWriter create(const std::filesystem::path& path, const SegmentMeta& meta);
  /// Reopens a recovered segment for further appends.
  static SegmentWriter reopen(const std::filesystem::path& path, const SegmentScan& scan);

  SegmentWriter(SegmentWriter&& other) noexcept;
  SegmentWriter& operator=(SegmentWriter&& other) noexcept;
  SegmentWriter(const SegmentWriter&) = delete;
  SegmentWriter& operator=(const SegmentWriter&) = delete;
  ~SegmentWriter();

  /// Requires rec.seq == last_seq() + 1. Throws StateError on a seq regression
  /// or closed writer, StorageError on I/O failure (file left at its old size).
  void append(const SegmentRecord& rec);
  void close();

  bool closed() const { return fd_ < 0; }
  std::int64_t last_seq() const { return last_seq_; }
  /// Bytes known to be durable; safe bound for concurrent readers.
  std::uint64_t committed_bytes() const { return committed_.load(std::memory_order_acquire); }
  const std::filesystem::path& path() const { return path_; }
  const SegmentMeta& meta() const { return meta_; }

 private:
  SegmentWriter(std::filesystem::path path, SegmentMeta meta, int fd, std::uint64_t size,
                std::int64_t last_seq);

  std::filesystem::path path_;
  SegmentMeta meta_;
  int fd_ = -1;
  std::atomic<std::uint64_t> committed_{0};
  std::int64_t last_seq_ = -1;
};

struct RecoveredSegment {
  std::filesystem::path path;
  SegmentScan scan;
  std::uint64_t truncated_bytes = 0;
};

struct RecoveryResult {
  std::map<std::string, RecoveredSegment> sessions;
  /// Files that could not be opened or whose header is unreadable, with reasons.
  std::map<std::string, std::string> unavailable;

  /// session_id -> last valid seq (-1 for a header-only segment).
  std::map<std::string, std::int64_t> resume_points() const;
};

/// Scans every segment in `data_dir`, truncates trailing partial or corrupt
/// records in place, and reports where each session resumes.
RecoveryResult recover(const std::filesystem::path& data_dir);

std::filesystem::path segment_path(const std::filesystem::path& data_dir,
                                   const std::string& session_id);

/// Export text: "ts_us code flags" per line.
void write_samples_text(std::ostream& out, std::span<const StoredSample> samples);
std::vector<StoredSample> read_samples_text(std::istream& in);

}  // namespace telecg
