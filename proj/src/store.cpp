#include "telecg/store.hpp"

#include <fcntl.h>
#include <unistd.h>
#include <zlib.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "telecg/errors.hpp"
#include "telecg/wire.hpp"

namespace telecg {

namespace fs = std::filesystem;

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::string errno_text(const std::string& what, const fs::path& path) {
  return what + " " + path.string() + ": " + std::strerror(errno);
}

void write_all(int fd, const std::uint8_t* data, std::size_t len, const fs::path& path) {
  while (len > 0) {
    const ssize_t n = ::write(fd, data, len);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw StorageError(errno_text("write", path));
    }
    data += n;
    len -= static_cast<std::size_t>(n);
  }
}

void sync_dir(const fs::path& dir) {
  const int dfd = ::open(dir.empty() ? "." : dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (dfd >= 0) {
    ::fsync(dfd);
    ::close(dfd);
  }
}

Json meta_to_json(const SegmentMeta& m) {
  return Json{{"session_id", m.session_id},
              {"device_id", m.device_id},
              {"patient_id", m.patient_id},
              {"sample_rate_hz", m.sample_rate_hz},
              {"adc", to_json(m.adc)}};
}

SegmentMeta meta_from_json(const Json& j) {
  SegmentMeta m;
  m.session_id = j.at("session_id").get<std::string>();
  m.device_id = j.at("device_id").get<std::string>();
  m.patient_id = j.at("patient_id").get<std::string>();
  m.sample_rate_hz = j.at("sample_rate_hz").get<std::uint32_t>();
  m.adc = adc_from_json(j.at("adc"));
  return m;
}

std::vector<std::uint8_t> read_file(const fs::path& path, std::optional<std::uint64_t> limit) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError("cannot open segment " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (limit && bytes.size() > *limit) bytes.resize(*limit);
  return bytes;
}

}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes a uInt length; feed in chunks for very large spans
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = ::crc32(crc, bytes.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_header(const SegmentMeta& meta) {
  const std::string blob = meta_to_json(meta).dump();
  std::vector<std::uint8_t> out(kSegmentMagic, kSegmentMagic + 4);
  put_u16(out, kSegmentVersion);
  put_u32(out, static_cast<std::uint32_t>(blob.size()));
  out.insert(out.end(), blob.begin(), blob.end());
  return out;
}

std::vector<std::uint8_t> encode_record(const SegmentRecord& rec) {
  if (rec.codes.empty() || rec.codes.size() > 0xFFFF) {
    throw ValidationError("record must hold 1..65535 samples");
  }
  if (rec.codes.size() != rec.flags.size()) throw ValidationError("codes/flags length mismatch");
  std::vector<std::uint8_t> out;
  out.reserve(record_size(rec.codes.size()));
  put_u32(out, rec.seq);
  put_u64(out, rec.start_ts_us);
  put_u16(out, static_cast<std::uint16_t>(rec.codes.size()));
  for (auto c : rec.codes) put_u16(out, c);
  out.insert(out.end(), rec.flags.begin(), rec.flags.end());
  put_u32(out, crc32(out));
  return out;
}

DecodeResult decode_record(std::span<const std::uint8_t> bytes) {
  DecodeResult r;
  if (bytes.size() < 14) {
    r.status = DecodeStatus::Incomplete;
    return r;
  }
  const std::uint16_t count = get_u16(bytes.data() + 12);
  if (count == 0) {
    r.status = DecodeStatus::Invalid;
    return r;
  }
  const std::size_t total = record_size(count);
  if (bytes.size() < total) {
    r.status = DecodeStatus::Incomplete;
    return r;
  }
  const std::uint32_t stored = get_u32(bytes.data() + total - 4);
  if (crc32(bytes.first(total - 4)) != stored) {
    r.status = DecodeStatus::CrcMismatch;
    return r;
  }
  const std::uint8_t* p = bytes.data();
  r.record.seq = get_u32(p);
  r.record.start_ts_us = get_u64(p + 4);
  r.record.codes.resize(count);
  r.record.flags.resize(count);
  for (std::size_t i = 0; i < count; ++i) r.record.codes[i] = get_u16(p + 14 + 2 * i);
  std::memcpy(r.record.flags.data(), p + 14 + 2 * count, count);
  r.consumed = total;
  r.status = DecodeStatus::Ok;
  return r;
}

SegmentRecord record_from_batch(const SampleBatch& batch) {
  SegmentRecord rec;
  rec.seq = batch.seq;
  rec.start_ts_us = batch.start_ts_us;
  rec.codes.reserve(batch.codes.size());
  for (auto c : batch.codes) {
    if (c > 0xFFFF) throw ValidationError("code does not fit a 16-bit cell");
    rec.codes.push_back(static_cast<std::uint16_t>(c));
  }
  rec.flags = batch.flags;
  return rec;
}

std::vector<StoredSample> expand_record(const SegmentRecord& rec, std::uint32_t rate_hz) {
  std::vector<StoredSample> out;
  out.reserve(rec.codes.size());
  for (std::size_t i = 0; i < rec.codes.size(); ++i) {
    out.push_back({sample_ts_us(rec.start_ts_us, i, rate_hz), rec.codes[i], rec.flags[i]});
  }
  return out;
}

std::uint64_t SegmentScan::sample_count() const {
  std::uint64_t n = 0;
  for (const auto& r : records) n += r.codes.size();
  return n;
}

SegmentScan scan_segment(const fs::path& path, std::optional<std::uint64_t> limit_bytes) {
  const auto bytes = read_file(path, limit_bytes);
  SegmentScan scan;
  scan.file_bytes = bytes.size();
  if (bytes.size() < 10 || std::memcmp(bytes.data(), kSegmentMagic, 4) != 0) {
    throw StorageError("bad segment magic in " + path.string());
  }
  const std::uint16_t version = get_u16(bytes.data() + 4);
  if (version != kSegmentVersion) {
    throw StorageError("unsupported segment version " + std::to_string(version) + " in " +
                       path.string());
  }
  const std::uint32_t meta_len = get_u32(bytes.data() + 6);
  if (bytes.size() < 10 + static_cast<std::uint64_t>(meta_len)) {
    throw StorageError("truncated segment header in " + path.string());
  }
  try {
    const auto* meta_begin = reinterpret_cast<const char*>(bytes.data() + 10);
    scan.meta = meta_from_json(Json::parse(meta_begin, meta_begin + meta_len));
  } catch (const std::exception& e) {
    throw StorageError("unreadable segment metadata in " + path.string() + ": " + e.what());
  }
  scan.header_bytes = 10 + meta_len;

  std::size_t off = scan.header_bytes;
  const std::span<const std::uint8_t> all(bytes);
  while (off < bytes.size()) {
    auto r = decode_record(all.subspan(off));
    if (r.status != DecodeStatus::Ok) {
      const char* why = r.status == DecodeStatus::Incomplete    ? "truncated record"
                        : r.status == DecodeStatus::CrcMismatch ? "crc mismatch"
                                                                : "invalid record";
      scan.corruption = std::string(why) + " at offset " + std::to_string(off);
      break;
    }
    if (!scan.records.empty() && r.record.seq <= scan.records.back().seq) {
      scan.corruption = "seq regression at offset " + std::to_string(off);
      break;
    }
    scan.records.push_back(std::move(r.record));
    off += r.consumed;
  }
  scan.valid_bytes = off;
  return scan;
}

RangeRead read_range(const SegmentScan& scan, std::uint64_t from_us, std::uint64_t to_us) {
  if (from_us > to_us) throw ValidationError("from_us must be <= to_us");
  RangeRead out;
  out.corruption = scan.corruption;
  for (const auto& rec : scan.records) {
    for (std::size_t i = 0; i < rec.codes.size(); ++i) {
      const auto ts = sample_ts_us(rec.start_ts_us, i, scan.meta.sample_rate_hz);
      if (ts >= from_us && ts < to_us) out.samples.push_back({ts, rec.codes[i], rec.flags[i]});
    }
  }
  return out;
}

RangeRead read_range(const fs::path& path, std::uint64_t from_us, std::uint64_t to_us,
                     std::optional<std::uint64_t> limit_bytes) {
  if (from_us > to_us) throw ValidationError("from_us must be <= to_us");
  return read_range(scan_segment(path, limit_bytes), from_us, to_us);
}

SegmentWriter::SegmentWriter(fs::path path, SegmentMeta meta, int fd, std::uint64_t size,
                             std::int64_t last_seq)
    : path_(std::move(path)), meta_(std::move(meta)), fd_(fd), committed_(size), last_seq_(last_seq) {}

SegmentWriter::SegmentWriter(SegmentWriter&& other) noexcept
    : path_(std::move(other.path_)),
      meta_(std::move(other.meta_)),
      fd_(std::exchange(other.fd_, -1)),
      committed_(other.committed_.load()),
      last_seq_(other.last_seq_) {}

SegmentWriter& SegmentWriter::operator=(SegmentWriter&& other) noexcept {
  if (this != &other) {
    close();
    path_ = std::move(other.path_);
    meta_ = std::move(other.meta_);
    fd_ = std::exchange(other.fd_, -1);
    committed_.store(other.committed_.load());
    last_seq_ = other.last_seq_;
  }
  return *this;
}

SegmentWriter::~SegmentWriter() { close(); }

SegmentWriter SegmentWriter::create(const fs::path& path, const SegmentMeta& meta) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_EXCL | O_CLOEXEC, 0644);
  if (fd < 0) throw StorageError(errno_text("create", path));
  const auto header = encode_header(meta);
  try {
    write_all(fd, header.data(), header.size(), path);
    if (::fdatasync(fd) != 0) throw StorageError(errno_text("fdatasync", path));
  } catch (...) {
    ::close(fd);
    ::unlink(path.c_str());
    throw;
  }
  sync_dir(path.parent_path());
  return SegmentWriter(path, meta, fd, header.size(), -1);
}

SegmentWriter SegmentWriter::reopen(const fs::path& path, const SegmentScan& scan) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_CLOEXEC);
  if (fd < 0) throw StorageError(errno_text("open", path));
  if (::ftruncate(fd, static_cast<off_t>(scan.valid_bytes)) != 0 ||
      ::lseek(fd, 0, SEEK_END) < 0) {
    ::close(fd);
    throw StorageError(errno_text("reposition", path));
  }
  return SegmentWriter(path, scan.meta, fd, scan.valid_bytes, scan.last_seq());
}

void SegmentWriter::append(const SegmentRecord& rec) {
  if (closed()) throw StateError("segment " + path_.string() + " is closed");
  if (static_cast<std::int64_t>(rec.seq) != last_seq_ + 1) {
    throw StateError("seq " + std::to_string(rec.seq) + " does not follow stored seq " +
                     std::to_string(last_seq_));
  }
  const auto bytes = encode_record(rec);
  const auto before = committed_.load(std::memory_order_relaxed);
  try {
    write_all(fd_, bytes.data(), bytes.size(), path_);
    if (::fdatasync(fd_) != 0) throw StorageError(errno_text("fdatasync", path_));
  } catch (...) {
    // keep the on-disk file a valid prefix
    if (::ftruncate(fd_, static_cast<off_t>(before)) == 0) ::lseek(fd_, 0, SEEK_END);
    throw;
  }
  last_seq_ = rec.seq;
  committed_.store(before + bytes.size(), std::memory_order_release);
}

void SegmentWriter::close() {
  if (fd_ >= 0) {
    ::fdatasync(fd_);
    ::close(fd_);
    fd_ = -1;
  }
}

std::map<std::string, std::int64_t> RecoveryResult::resume_points() const {
  std::map<std::string, std::int64_t> out;
  for (const auto& [id, seg] : sessions) out[id] = seg.scan.last_seq();
  return out;
}

RecoveryResult recover(const fs::path& data_dir) {
  RecoveryResult result;
  std::error_code ec;
  if (!fs::exists(data_dir, ec)) return result;
  for (const auto& entry : fs::directory_iterator(data_dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != kSegmentExtension) continue;
    const auto& path = entry.path();
    try {
      auto scan = scan_segment(path);
      if (scan.meta.session_id != path.stem().string()) {
        throw StorageError("segment header names session " + scan.meta.session_id);
      }
      RecoveredSegment seg;
      seg.path = path;
      if (scan.valid_bytes < scan.file_bytes) {
        seg.truncated_bytes = scan.file_bytes - scan.valid_bytes;
        fs::resize_file(path, scan.valid_bytes);
        const int fd = ::open(path.c_str(), O_WRONLY | O_CLOEXEC);
        if (fd >= 0) {
          ::fdatasync(fd);
          ::close(fd);
        }
        scan.file_bytes = scan.valid_bytes;
      }
      seg.scan = std::move(scan);
      result.sessions.emplace(seg.scan.meta.session_id, std::move(seg));
    } catch (const std::exception& e) {
      result.unavailable[path.stem().string()] = e.what();
    }
  }
  return result;
}

fs::path segment_path(const fs::path& data_dir, const std::string& session_id) {
  return data_dir / (session_id + kSegmentExtension);
}

void write_samples_text(std::ostream& out, std::span<const StoredSample> samples) {
  std::string line;
  for (const auto& s : samples) {
    line = std::to_string(s.ts_us);
    line += ' ';
    line += std::to_string(s.code);
    line += ' ';
    line += std::to_string(static_cast<unsigned>(s.flags));
    line += '\n';
    out << line;
  }
}

std::vector<StoredSample> read_samples_text(std::istream& in) {
  std::vector<StoredSample> out;
  std::string text;
  std::size_t lineno = 0;
  while (std::getline(in, text)) {
    ++lineno;
    if (text.empty() || text[0] == '#') continue;
    std::istringstream fields(text);
    std::uint64_t ts = 0;
    unsigned code = 0, flags = 0;
    if (!(fields >> ts >> code >> flags) || code > 0xFFFF || flags > lead::kMask) {
      throw ValidationError("export text line " + std::to_string(lineno) + " is malformed");
    }
    out.push_back({ts, static_cast<std::uint16_t>(code), static_cast<std::uint8_t>(flags)});
  }
  return out;
}

}  // namespace telecg
