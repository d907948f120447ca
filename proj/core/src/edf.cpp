#include "s4sleep/edf.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>
#include <utility>

namespace s4sleep::edf {
namespace {

constexpr std::uint8_t kTalTextEnd = 0x14;
constexpr std::uint8_t kTalDuration = 0x15;
constexpr std::uint8_t kTalEnd = 0x00;

[[noreturn]] void fail(EdfErrc code, const std::string& msg) { throw EdfError(code, msg); }

class MemorySource final : public ByteSource {
 public:
  explicit MemorySource(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {}

  std::uint64_t size() const override { return bytes_.size(); }

  void read(std::uint64_t offset, std::span<std::uint8_t> out) const override {
    if (offset + out.size() > bytes_.size()) fail(EdfErrc::TruncatedData, "read past end of buffer");
    std::memcpy(out.data(), bytes_.data() + offset, out.size());
  }

 private:
  std::vector<std::uint8_t> bytes_;
};

class FileSource final : public ByteSource {
 public:
  explicit FileSource(const std::filesystem::path& path)
      : path_(path), stream_(path, std::ios::binary) {
    if (!stream_) fail(EdfErrc::Io, "cannot open " + path.string());
    stream_.seekg(0, std::ios::end);
    size_ = static_cast<std::uint64_t>(stream_.tellg());
  }

  std::uint64_t size() const override { return size_; }

  void read(std::uint64_t offset, std::span<std::uint8_t> out) const override {
    std::lock_guard lock(mutex_);
    stream_.clear();
    stream_.seekg(static_cast<std::streamoff>(offset));
    stream_.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (static_cast<std::size_t>(stream_.gcount()) != out.size()) {
      fail(EdfErrc::TruncatedData, "short read from " + path_.string());
    }
  }

 private:
  std::filesystem::path path_;
  mutable std::ifstream stream_;
  mutable std::mutex mutex_;
  std::uint64_t size_ = 0;
};

// Fixed-width field cursor over the header bytes.
class FieldReader {
 public:
  explicit FieldReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::string text(std::size_t width, std::string_view name) {
    if (pos_ + width > bytes_.size()) fail(EdfErrc::ShortHeader, "header ends inside field " + std::string(name));
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), width);
    pos_ += width;
    for (unsigned char ch : s) {
      if (ch < 0x20 || ch > 0x7e) fail(EdfErrc::NonAsciiText, "non-ASCII byte in field " + std::string(name));
    }
    while (!s.empty() && s.back() == ' ') s.pop_back();
    return s;
  }

  std::size_t position() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::string_view trim(std::string_view s) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  return s;
}

template <class T>
T parse_number(std::string_view raw, std::string_view field) {
  std::string_view s = trim(raw);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  T value{};
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (s.empty() || ec != std::errc() || ptr != last) {
    fail(EdfErrc::NonNumericField, "field " + std::string(field) + " is not numeric: '" + std::string(raw) + "'");
  }
  return value;
}

DateTime parse_datetime(std::string_view date, std::string_view time) {
  auto part = [](std::string_view s, std::size_t i, std::string_view field) {
    if (s.size() != 8 || (i > 0 && s[i - 1] != '.' && s[i - 1] != ':')) {
      fail(EdfErrc::NonNumericField, "malformed " + std::string(field) + ": '" + std::string(s) + "'");
    }
    return parse_number<int>(s.substr(i, 2), field);
  };
  DateTime dt;
  dt.day = part(date, 0, "startdate");
  dt.month = part(date, 3, "startdate");
  const int yy = part(date, 6, "startdate");
  dt.year = yy >= 85 ? 1900 + yy : 2000 + yy;
  dt.hour = part(time, 0, "starttime");
  dt.minute = part(time, 3, "starttime");
  dt.second = part(time, 6, "starttime");
  return dt;
}

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= s.size()) return false;
    for (std::size_t k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    static constexpr std::uint32_t kMin[] = {0, 0x80, 0x800, 0x10000};
    if (cp < kMin[extra] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += extra + 1;
  }
  return true;
}

double parse_tal_number(std::string_view s, bool require_sign) {
  if (require_sign) {
    if (s.empty() || (s.front() != '+' && s.front() != '-')) {
      fail(EdfErrc::MalformedOnset, "TAL onset lacks a sign prefix: '" + std::string(s) + "'");
    }
  }
  std::string_view digits = s;
  if (require_sign) digits.remove_prefix(1);
  const bool ok = !digits.empty() && std::all_of(digits.begin(), digits.end(), [](char ch) {
    return (ch >= '0' && ch <= '9') || ch == '.';
  });
  if (!ok) fail(EdfErrc::MalformedOnset, "malformed TAL time stamp: '" + std::string(s) + "'");
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
  if (ec != std::errc() || ptr != digits.data() + digits.size()) {
    fail(EdfErrc::MalformedOnset, "malformed TAL time stamp: '" + std::string(s) + "'");
  }
  return (require_sign && s.front() == '-') ? -value : value;
}

// Shortest fixed-notation text that parses back to the same double.
std::string format_decimal(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::fixed);
  if (ec != std::errc()) fail(EdfErrc::UnrepresentableField, "cannot format number");
  return std::string(buf, ptr);
}

class FieldWriter {
 public:
  explicit FieldWriter(std::vector<std::uint8_t>& out) : out_(out) {}

  void text(std::string_view s, std::size_t width, std::string_view name) {
    if (s.size() > width) {
      fail(EdfErrc::UnrepresentableField,
           "field " + std::string(name) + " exceeds " + std::to_string(width) + " bytes: '" + std::string(s) + "'");
    }
    if (!s.empty() && s.back() == ' ') {
      fail(EdfErrc::UnrepresentableField, "field " + std::string(name) + " has trailing spaces");
    }
    for (unsigned char ch : s) {
      if (ch < 0x20 || ch > 0x7e) fail(EdfErrc::UnrepresentableField, "non-ASCII text in field " + std::string(name));
    }
    out_.insert(out_.end(), s.begin(), s.end());
    out_.insert(out_.end(), width - s.size(), static_cast<std::uint8_t>(' '));
  }

  void integer(std::int64_t v, std::size_t width, std::string_view name) { text(std::to_string(v), width, name); }

  void decimal(double v, std::size_t width, std::string_view name) {
    if (!std::isfinite(v)) fail(EdfErrc::UnrepresentableField, "non-finite value in field " + std::string(name));
    text(format_decimal(v), width, name);
  }

 private:
  std::vector<std::uint8_t>& out_;
};

std::string two_digits(int v) {
  std::string s = std::to_string(v);
  return s.size() < 2 ? "0" + s : s;
}

void validate_signal(const SignalSpec& s, std::size_t index) {
  const std::string where = "signal " + std::to_string(index) + " ('" + s.label + "')";
  if (s.digital_min >= s.digital_max) fail(EdfErrc::InvalidSignalSpec, where + ": digital_min must be < digital_max");
  if (s.physical_min == s.physical_max) fail(EdfErrc::InvalidSignalSpec, where + ": physical_min equals physical_max");
  if (s.samples_per_record < 0) fail(EdfErrc::InvalidSignalSpec, where + ": negative samples_per_record");
  if (!s.is_annotation() && (s.digital_min < -32768 || s.digital_max > 32767)) {
    fail(EdfErrc::InvalidSignalSpec, where + ": digital range exceeds 16 bits");
  }
}

bool annotation_only(const std::vector<SignalSpec>& signals) {
  return !signals.empty() &&
         std::all_of(signals.begin(), signals.end(), [](const SignalSpec& s) { return s.is_annotation(); });
}

// Record that carries annotation i under the even-spread packing policy.
std::int64_t record_for_annotation(std::size_t i, std::size_t count, std::int64_t n_records) {
  return static_cast<std::int64_t>((static_cast<std::uint64_t>(i) * static_cast<std::uint64_t>(n_records)) / count);
}

std::string time_keeping_tal(std::int64_t record, double record_duration_s) {
  Annotation tk;
  tk.onset_s = static_cast<double>(record) * record_duration_s;
  return format_tal(tk);
}

}  // namespace

HeaderInfo parse_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kFixedHeaderBytes) {
    fail(EdfErrc::ShortHeader, "EDF header needs 256 bytes, got " + std::to_string(bytes.size()));
  }
  FieldReader r(bytes);
  HeaderInfo info;
  EdfHeader& h = info.header;
  h.version = parse_number<int>(r.text(8, "version"), "version");
  h.patient_id = r.text(80, "patient_id");
  h.recording_id = r.text(80, "recording_id");
  const std::string date = r.text(8, "startdate");
  const std::string time = r.text(8, "starttime");
  h.header_bytes = parse_number<std::int64_t>(r.text(8, "header_bytes"), "header_bytes");
  h.reserved = r.text(44, "reserved");
  h.n_data_records = parse_number<std::int64_t>(r.text(8, "n_data_records"), "n_data_records");
  h.record_duration_s = parse_number<double>(r.text(8, "record_duration"), "record_duration");
  h.n_signals = parse_number<std::int64_t>(r.text(4, "n_signals"), "n_signals");
  h.start = parse_datetime(date, time);

  if (h.n_signals < 0) fail(EdfErrc::InvalidHeader, "negative signal count");
  if (h.header_bytes != 256 * (h.n_signals + 1)) {
    fail(EdfErrc::InconsistentHeaderBytes, "header_bytes " + std::to_string(h.header_bytes) + " != 256*(" +
                                               std::to_string(h.n_signals) + "+1)");
  }
  if (bytes.size() < static_cast<std::size_t>(h.header_bytes)) {
    fail(EdfErrc::ShortHeader, "header declares " + std::to_string(h.header_bytes) + " bytes, got " +
                                   std::to_string(bytes.size()));
  }
  if (h.n_data_records < -1) fail(EdfErrc::InvalidHeader, "invalid data record count");

  const auto ns = static_cast<std::size_t>(h.n_signals);
  info.signals.resize(ns);
  for (auto& s : info.signals) s.label = r.text(16, "label");
  for (auto& s : info.signals) s.transducer = r.text(80, "transducer");
  for (auto& s : info.signals) s.physical_dimension = r.text(8, "physical_dimension");
  for (auto& s : info.signals) s.physical_min = parse_number<double>(r.text(8, "physical_min"), "physical_min");
  for (auto& s : info.signals) s.physical_max = parse_number<double>(r.text(8, "physical_max"), "physical_max");
  for (auto& s : info.signals) s.digital_min = parse_number<std::int32_t>(r.text(8, "digital_min"), "digital_min");
  for (auto& s : info.signals) s.digital_max = parse_number<std::int32_t>(r.text(8, "digital_max"), "digital_max");
  for (auto& s : info.signals) s.prefiltering = r.text(80, "prefiltering");
  for (auto& s : info.signals) {
    s.samples_per_record = parse_number<std::int64_t>(r.text(8, "samples_per_record"), "samples_per_record");
  }
  for (auto& s : info.signals) s.reserved = r.text(32, "signal_reserved");
  return info;
}

AnnotationList parse_annotations(std::span<const std::uint8_t> tal_bytes) {
  AnnotationList out;
  const std::size_t n = tal_bytes.size();
  std::size_t pos = 0;
  auto at = [&](std::size_t i) { return tal_bytes[i]; };

  while (pos < n) {
    if (at(pos) == kTalEnd) {  // padding after the last TAL
      ++pos;
      continue;
    }
    std::size_t stamp_end = pos;
    while (stamp_end < n && at(stamp_end) != kTalTextEnd && at(stamp_end) != kTalDuration &&
           at(stamp_end) != kTalEnd) {
      ++stamp_end;
    }
    if (stamp_end == n || at(stamp_end) == kTalEnd) fail(EdfErrc::MissingTerminator, "TAL onset not terminated");
    const std::string_view onset_text(reinterpret_cast<const char*>(tal_bytes.data() + pos), stamp_end - pos);
    const double onset = parse_tal_number(onset_text, true);
    std::optional<double> duration;
    pos = stamp_end;
    if (at(pos) == kTalDuration) {
      const std::size_t dur_begin = ++pos;
      while (pos < n && at(pos) != kTalTextEnd && at(pos) != kTalEnd) ++pos;
      if (pos == n || at(pos) != kTalTextEnd) fail(EdfErrc::MissingTerminator, "TAL duration not terminated");
      duration = parse_tal_number(
          std::string_view(reinterpret_cast<const char*>(tal_bytes.data() + dur_begin), pos - dur_begin), false);
    }
    ++pos;  // skip 0x14 closing the time stamp

    std::size_t texts = 0;
    bool closed = false;
    while (pos < n) {
      if (at(pos) == kTalEnd) {
        closed = true;
        ++pos;
        break;
      }
      const std::size_t text_begin = pos;
      while (pos < n && at(pos) != kTalTextEnd && at(pos) != kTalEnd) ++pos;
      if (pos == n || at(pos) != kTalTextEnd) fail(EdfErrc::MissingTerminator, "TAL annotation text not terminated");
      std::string text(reinterpret_cast<const char*>(tal_bytes.data() + text_begin), pos - text_begin);
      if (!valid_utf8(text)) fail(EdfErrc::NonUtf8Text, "TAL annotation text is not valid UTF-8");
      out.push_back(Annotation{onset, duration, std::move(text)});
      ++texts;
      ++pos;
    }
    if (!closed) fail(EdfErrc::MissingTerminator, "TAL missing 0x00 terminator");
    if (texts == 0) out.push_back(Annotation{onset, duration, {}});
  }
  return out;
}

std::string format_tal(const Annotation& a) {
  std::string s;
  s += std::signbit(a.onset_s) ? '-' : '+';
  s += format_decimal(std::fabs(a.onset_s));
  if (a.duration_s) {
    if (*a.duration_s < 0.0) fail(EdfErrc::UnrepresentableField, "negative annotation duration");
    s += static_cast<char>(kTalDuration);
    s += format_decimal(*a.duration_s);
  }
  s += static_cast<char>(kTalTextEnd);
  if (a.text.find(static_cast<char>(kTalTextEnd)) != std::string::npos ||
      a.text.find(static_cast<char>(kTalEnd)) != std::string::npos ||
      a.text.find(static_cast<char>(kTalDuration)) != std::string::npos || !valid_utf8(a.text)) {
    fail(EdfErrc::UnrepresentableField, "annotation text contains TAL delimiters or invalid UTF-8");
  }
  s += a.text;
  s += static_cast<char>(kTalTextEnd);
  s += static_cast<char>(kTalEnd);
  return s;
}

std::int64_t annotation_samples_needed(const AnnotationList& annotations, std::int64_t n_data_records,
                                       double record_duration_s) {
  if (n_data_records <= 0) return annotations.empty() ? 0 : -1;
  std::vector<std::size_t> bytes(static_cast<std::size_t>(n_data_records));
  for (std::int64_t r = 0; r < n_data_records; ++r) {
    bytes[static_cast<std::size_t>(r)] = time_keeping_tal(r, record_duration_s).size();
  }
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    bytes[static_cast<std::size_t>(record_for_annotation(i, annotations.size(), n_data_records))] +=
        format_tal(annotations[i]).size();
  }
  const std::size_t worst = *std::max_element(bytes.begin(), bytes.end());
  return static_cast<std::int64_t>((worst + 1) / 2);
}

std::vector<std::uint8_t> encode(const EdfContents& c) {
  const EdfHeader& h = c.header;
  if (h.n_signals != static_cast<std::int64_t>(c.signals.size())) {
    fail(EdfErrc::InvalidHeader, "n_signals does not match the signal list");
  }
  if (h.header_bytes != 256 * (h.n_signals + 1)) {
    fail(EdfErrc::InconsistentHeaderBytes, "header_bytes must equal 256*(n_signals+1)");
  }
  if (h.n_data_records < 0) fail(EdfErrc::UnrepresentableField, "n_data_records must be known when writing");
  if (h.is_discontinuous()) fail(EdfErrc::Discontinuous, "EDF+D is not supported");
  if (c.samples.size() != c.signals.size()) fail(EdfErrc::InvalidHeader, "sample store does not match signals");
  if (h.start.year < 1985 || h.start.year > 2084) fail(EdfErrc::UnrepresentableField, "start year outside 1985..2084");

  std::optional<std::size_t> annotation_signal;
  for (std::size_t i = 0; i < c.signals.size(); ++i) {
    validate_signal(c.signals[i], i);
    const auto expected = static_cast<std::size_t>(h.n_data_records * c.signals[i].samples_per_record);
    if (c.signals[i].is_annotation()) {
      if (!c.samples[i].empty()) fail(EdfErrc::InvalidHeader, "annotation signal carries raw samples");
      if (!annotation_signal) annotation_signal = i;
    } else if (c.samples[i].size() != expected) {
      fail(EdfErrc::InvalidHeader, "signal " + std::to_string(i) + " holds " + std::to_string(c.samples[i].size()) +
                                       " samples, expected " + std::to_string(expected));
    }
  }
  if (!c.annotations.empty() && !annotation_signal) {
    fail(EdfErrc::UnrepresentableField, "annotations require an 'EDF Annotations' signal");
  }

  std::vector<std::uint8_t> out;
  out.reserve(static_cast<std::size_t>(h.header_bytes));
  FieldWriter w(out);
  w.integer(h.version, 8, "version");
  w.text(h.patient_id, 80, "patient_id");
  w.text(h.recording_id, 80, "recording_id");
  w.text(two_digits(h.start.day) + "." + two_digits(h.start.month) + "." + two_digits(h.start.year % 100), 8,
         "startdate");
  w.text(two_digits(h.start.hour) + "." + two_digits(h.start.minute) + "." + two_digits(h.start.second), 8,
         "starttime");
  w.integer(h.header_bytes, 8, "header_bytes");
  w.text(h.reserved, 44, "reserved");
  w.integer(h.n_data_records, 8, "n_data_records");
  w.decimal(h.record_duration_s, 8, "record_duration");
  w.integer(h.n_signals, 4, "n_signals");
  for (const auto& s : c.signals) w.text(s.label, 16, "label");
  for (const auto& s : c.signals) w.text(s.transducer, 80, "transducer");
  for (const auto& s : c.signals) w.text(s.physical_dimension, 8, "physical_dimension");
  for (const auto& s : c.signals) w.decimal(s.physical_min, 8, "physical_min");
  for (const auto& s : c.signals) w.decimal(s.physical_max, 8, "physical_max");
  for (const auto& s : c.signals) w.integer(s.digital_min, 8, "digital_min");
  for (const auto& s : c.signals) w.integer(s.digital_max, 8, "digital_max");
  for (const auto& s : c.signals) w.text(s.prefiltering, 80, "prefiltering");
  for (const auto& s : c.signals) w.integer(s.samples_per_record, 8, "samples_per_record");
  for (const auto& s : c.signals) w.text(s.reserved, 32, "signal_reserved");

  // TAL blocks per data record: a time-keeping TAL first, then the
  // annotations assigned to that record.
  std::vector<std::string> blocks;
  if (annotation_signal) {
    blocks.resize(static_cast<std::size_t>(h.n_data_records));
    for (std::int64_t r = 0; r < h.n_data_records; ++r) {
      blocks[static_cast<std::size_t>(r)] = time_keeping_tal(r, h.record_duration_s);
    }
    if (!c.annotations.empty() && h.n_data_records == 0) {
      fail(EdfErrc::UnrepresentableField, "annotations need at least one data record");
    }
    for (std::size_t i = 0; i < c.annotations.size(); ++i) {
      blocks[static_cast<std::size_t>(record_for_annotation(i, c.annotations.size(), h.n_data_records))] +=
          format_tal(c.annotations[i]);
    }
    const auto capacity = static_cast<std::size_t>(2 * c.signals[*annotation_signal].samples_per_record);
    for (const auto& b : blocks) {
      if (b.size() > capacity) {
        fail(EdfErrc::UnrepresentableField, "annotations exceed the annotation signal capacity of " +
                                                std::to_string(capacity) + " bytes per record");
      }
    }
  }

  for (std::int64_t r = 0; r < h.n_data_records; ++r) {
    for (std::size_t i = 0; i < c.signals.size(); ++i) {
      const auto spr = static_cast<std::size_t>(c.signals[i].samples_per_record);
      if (c.signals[i].is_annotation()) {
        std::vector<std::uint8_t> block(2 * spr, 0);
        if (i == *annotation_signal) {
          const auto& text = blocks[static_cast<std::size_t>(r)];
          std::copy(text.begin(), text.end(), block.begin());
        }
        out.insert(out.end(), block.begin(), block.end());
        continue;
      }
      const std::int16_t* src = c.samples[i].data() + static_cast<std::size_t>(r) * spr;
      for (std::size_t k = 0; k < spr; ++k) {
        const auto u = static_cast<std::uint16_t>(src[k]);
        out.push_back(static_cast<std::uint8_t>(u & 0xFF));
        out.push_back(static_cast<std::uint8_t>(u >> 8));
      }
    }
  }
  return out;
}

std::vector<std::uint8_t> write_fixture(const EdfRecording& rec) { return encode(rec.materialize()); }

EdfRecording EdfRecording::open(const std::filesystem::path& path) {
  EdfRecording rec;
  rec.load(std::make_shared<FileSource>(path));
  return rec;
}

EdfRecording EdfRecording::from_bytes(std::vector<std::uint8_t> bytes) {
  EdfRecording rec;
  rec.load(std::make_shared<MemorySource>(std::move(bytes)));
  return rec;
}

EdfRecording EdfRecording::from_contents(const EdfContents& contents) { return from_bytes(encode(contents)); }

void EdfRecording::load(std::shared_ptr<const ByteSource> source) {
  source_ = std::move(source);
  const std::uint64_t file_size = source_->size();
  std::vector<std::uint8_t> head(static_cast<std::size_t>(std::min<std::uint64_t>(file_size, kFixedHeaderBytes)));
  source_->read(0, head);
  if (head.size() < kFixedHeaderBytes) {
    fail(EdfErrc::ShortHeader, "EDF header needs 256 bytes, got " + std::to_string(head.size()));
  }
  // Read the declared header size (validated by parse_header before use).
  const std::int64_t declared = parse_number<std::int64_t>(
      std::string_view(reinterpret_cast<const char*>(head.data() + 184), 8), "header_bytes");
  std::vector<std::uint8_t> full = head;
  if (declared > static_cast<std::int64_t>(kFixedHeaderBytes)) {
    full.resize(static_cast<std::size_t>(std::min<std::uint64_t>(file_size, static_cast<std::uint64_t>(declared))));
    source_->read(0, full);
  }
  HeaderInfo info = parse_header(full);
  header_ = std::move(info.header);
  signals_ = std::move(info.signals);

  if (header_.is_discontinuous()) fail(EdfErrc::Discontinuous, "EDF+D (discontinuous) files are not supported");
  for (std::size_t i = 0; i < signals_.size(); ++i) validate_signal(signals_[i], i);
  if (header_.record_duration_s < 0.0 ||
      (header_.record_duration_s == 0.0 && !annotation_only(signals_))) {
    fail(EdfErrc::InvalidHeader, "record duration must be positive for files carrying signals");
  }

  signal_offsets_.clear();
  record_bytes_ = 0;
  for (const auto& s : signals_) {
    signal_offsets_.push_back(record_bytes_);
    record_bytes_ += 2 * static_cast<std::uint64_t>(s.samples_per_record);
  }
  const auto data_bytes = file_size - static_cast<std::uint64_t>(header_.header_bytes);
  if (header_.n_data_records == -1) {
    header_.n_data_records = record_bytes_ == 0 ? 0 : static_cast<std::int64_t>(data_bytes / record_bytes_);
  } else if (data_bytes < static_cast<std::uint64_t>(header_.n_data_records) * record_bytes_) {
    fail(EdfErrc::TruncatedData, "file holds fewer data records than declared");
  }

  annotations_.clear();
  record_onsets_.clear();
  for (std::size_t i = 0; i < signals_.size(); ++i) {
    if (!signals_[i].is_annotation()) continue;
    std::vector<std::uint8_t> block(2 * static_cast<std::size_t>(signals_[i].samples_per_record));
    for (std::int64_t r = 0; r < header_.n_data_records; ++r) {
      source_->read(static_cast<std::uint64_t>(header_.header_bytes) +
                        static_cast<std::uint64_t>(r) * record_bytes_ + signal_offsets_[i],
                    block);
      AnnotationList tals = parse_annotations(block);
      auto it = tals.begin();
      if (it != tals.end() && it->text.empty() && !it->duration_s) {
        record_onsets_.push_back(it->onset_s);
        ++it;
      }
      annotations_.insert(annotations_.end(), it, tals.end());
    }
  }
}

std::optional<std::size_t> EdfRecording::find_signal(std::string_view label) const {
  for (std::size_t i = 0; i < signals_.size(); ++i) {
    if (signals_[i].label == label) return i;
  }
  return std::nullopt;
}

std::size_t EdfRecording::signal_length(std::size_t signal_index) const {
  if (signal_index >= signals_.size()) {
    fail(EdfErrc::IndexOutOfRange, "signal index " + std::to_string(signal_index) + " out of range");
  }
  return static_cast<std::size_t>(header_.n_data_records * signals_[signal_index].samples_per_record);
}

double EdfRecording::sampling_rate(std::size_t signal_index) const {
  if (signal_index >= signals_.size()) {
    fail(EdfErrc::IndexOutOfRange, "signal index " + std::to_string(signal_index) + " out of range");
  }
  return static_cast<double>(signals_[signal_index].samples_per_record) / header_.record_duration_s;
}

double EdfRecording::duration_s() const {
  return static_cast<double>(header_.n_data_records) * header_.record_duration_s;
}

void EdfRecording::check_range(std::size_t signal_index, std::size_t begin, std::size_t end) const {
  if (signal_index >= signals_.size() || signals_[signal_index].is_annotation()) {
    fail(EdfErrc::IndexOutOfRange, "signal index " + std::to_string(signal_index) + " is not a data signal");
  }
  if (begin > end || end > signal_length(signal_index)) {
    fail(EdfErrc::RangeBeyondSignal, "sample range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                         ") exceeds signal length " + std::to_string(signal_length(signal_index)));
  }
}

std::vector<std::int16_t> EdfRecording::read_digital(std::size_t signal_index, std::size_t begin,
                                                     std::size_t end) const {
  check_range(signal_index, begin, end);
  const auto spr = static_cast<std::size_t>(signals_[signal_index].samples_per_record);
  std::vector<std::int16_t> out;
  out.reserve(end - begin);
  std::vector<std::uint8_t> buf;
  std::size_t k = begin;
  while (k < end) {
    const std::size_t record = k / spr;
    const std::size_t first = k % spr;
    const std::size_t count = std::min(spr - first, end - k);
    buf.resize(2 * count);
    source_->read(static_cast<std::uint64_t>(header_.header_bytes) + record * record_bytes_ +
                      signal_offsets_[signal_index] + 2 * first,
                  buf);
    for (std::size_t j = 0; j < count; ++j) {
      const auto u = static_cast<std::uint16_t>(buf[2 * j] | (static_cast<std::uint16_t>(buf[2 * j + 1]) << 8));
      out.push_back(static_cast<std::int16_t>(u));
    }
    k += count;
  }
  return out;
}

std::vector<double> EdfRecording::read_signal(std::size_t signal_index, std::size_t begin, std::size_t end) const {
  const auto digital = read_digital(signal_index, begin, end);
  const SignalSpec& spec = signals_[signal_index];
  std::vector<double> out(digital.size());
  std::transform(digital.begin(), digital.end(), out.begin(), [&](std::int16_t d) { return spec.to_physical(d); });
  return out;
}

EdfContents EdfRecording::materialize() const {
  EdfContents c;
  c.header = header_;
  c.signals = signals_;
  c.samples.resize(signals_.size());
  for (std::size_t i = 0; i < signals_.size(); ++i) {
    if (!signals_[i].is_annotation()) c.samples[i] = read_digital(i, 0, signal_length(i));
  }
  c.annotations = annotations_;
  return c;
}

}  // namespace s4sleep::edf
