#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "s4sleep/error.hpp"

namespace s4sleep::edf {

enum class EdfErrc {
  ShortHeader,
  NonNumericField,
  InconsistentHeaderBytes,
  NonAsciiText,
  InvalidHeader,
  InvalidSignalSpec,
  Discontinuous,
  TruncatedData,
  IndexOutOfRange,
  RangeBeyondSignal,
  MissingTerminator,
  MalformedOnset,
  NonUtf8Text,
  UnrepresentableField,
  Io,
};

using EdfError = CodedError<EdfErrc>;

inline constexpr std::size_t kFixedHeaderBytes = 256;
inline constexpr std::size_t kSignalHeaderBytes = 256;
inline constexpr std::string_view kAnnotationLabel = "EDF Annotations";

struct DateTime {
  int day = 1;
  int month = 1;
  int year = 1985;  // EDF's two-digit year covers 1985..2084
  int hour = 0;
  int minute = 0;
  int second = 0;

  auto operator<=>(const DateTime&) const = default;
};

struct EdfHeader {
  int version = 0;
  std::string patient_id;
  std::string recording_id;
  DateTime start;
  std::int64_t header_bytes = 256;
  std::int64_t n_data_records = 0;  // -1 when unknown
  double record_duration_s = 30.0;
  std::int64_t n_signals = 0;
  std::string reserved;  // "EDF+C" / "EDF+D" / empty for plain EDF

  bool is_edf_plus() const { return reserved.starts_with("EDF+"); }
  bool is_discontinuous() const { return reserved.starts_with("EDF+D"); }

  bool operator==(const EdfHeader&) const = default;
};

struct SignalSpec {
  std::string label;
  std::string transducer;
  std::string physical_dimension;
  double physical_min = -1.0;
  double physical_max = 1.0;
  std::int32_t digital_min = -32768;
  std::int32_t digital_max = 32767;
  std::string prefiltering;
  std::int64_t samples_per_record = 0;
  std::string reserved;

  bool is_annotation() const { return label == kAnnotationLabel; }

  // (d - dmin) * (pmax - pmin) / (dmax - dmin) + pmin
  double to_physical(std::int32_t digital) const {
    return static_cast<double>(digital - digital_min) * (physical_max - physical_min) /
               static_cast<double>(digital_max - digital_min) +
           physical_min;
  }

  bool operator==(const SignalSpec&) const = default;
};

struct Annotation {
  double onset_s = 0.0;
  std::optional<double> duration_s;
  std::string text;

  bool operator==(const Annotation&) const = default;
};

using AnnotationList = std::vector<Annotation>;

struct HeaderInfo {
  EdfHeader header;
  std::vector<SignalSpec> signals;
};

// Decodes the fixed header and the per-signal headers. `bytes` must hold at
// least the declared header size.
HeaderInfo parse_header(std::span<const std::uint8_t> bytes);

// Decodes one annotation-signal block (the TALs of a single data record).
// Trailing 0x00 padding after the last TAL is accepted.
AnnotationList parse_annotations(std::span<const std::uint8_t> tal_bytes);

// Fully materialized file contents. Digital samples are stored per signal in
// file order; annotation signals have an empty sample vector and their
// entries live in `annotations` (time-keeping TALs excluded).
struct EdfContents {
  EdfHeader header;
  std::vector<SignalSpec> signals;
  std::vector<std::vector<std::int16_t>> samples;
  AnnotationList annotations;

  bool operator==(const EdfContents&) const = default;
};

// Random-access byte provider behind an EdfRecording.
class ByteSource {
 public:
  virtual ~ByteSource() = default;
  virtual std::uint64_t size() const = 0;
  virtual void read(std::uint64_t offset, std::span<std::uint8_t> out) const = 0;
};

// A parsed EDF/EDF+C file. Header and annotations are decoded eagerly; signal
// samples are read on demand by byte range, so long recordings never need to
// be resident. Immutable after construction and safe for concurrent readers.
class EdfRecording {
 public:
  static EdfRecording open(const std::filesystem::path& path);
  static EdfRecording from_bytes(std::vector<std::uint8_t> bytes);
  static EdfRecording from_contents(const EdfContents& contents);

  const EdfHeader& header() const { return header_; }
  std::span<const SignalSpec> signals() const { return signals_; }
  const AnnotationList& annotations() const { return annotations_; }
  // Onsets of the time-keeping TAL of each data record (EDF+ only).
  const std::vector<double>& record_onsets() const { return record_onsets_; }

  std::optional<std::size_t> find_signal(std::string_view label) const;
  std::size_t signal_length(std::size_t signal_index) const;
  double sampling_rate(std::size_t signal_index) const;
  double duration_s() const;

  // Physical samples [begin, end) of an ordinary signal.
  std::vector<double> read_signal(std::size_t signal_index, std::size_t begin,
                                  std::size_t end) const;
  std::vector<std::int16_t> read_digital(std::size_t signal_index, std::size_t begin,
                                         std::size_t end) const;

  EdfContents materialize() const;

 private:
  EdfRecording() = default;
  void load(std::shared_ptr<const ByteSource> source);
  void check_range(std::size_t signal_index, std::size_t begin, std::size_t end) const;

  std::shared_ptr<const ByteSource> source_;
  EdfHeader header_;
  std::vector<SignalSpec> signals_;
  std::vector<std::uint64_t> signal_offsets_;  // byte offset inside one data record
  std::uint64_t record_bytes_ = 0;
  AnnotationList annotations_;
  std::vector<double> record_onsets_;
};

// Serializes contents into EDF bytes. Fails with UnrepresentableField when a
// text or number does not fit its fixed-width field, or when the annotations
// do not fit the annotation signal's capacity.
std::vector<std::uint8_t> encode(const EdfContents& contents);

std::vector<std::uint8_t> write_fixture(const EdfRecording& rec);

// Minimum samples_per_record of an annotation signal that can carry
// `annotations` packed by `encode`.
std::int64_t annotation_samples_needed(const AnnotationList& annotations,
                                       std::int64_t n_data_records, double record_duration_s);

std::string format_tal(const Annotation& annotation);

}  // namespace s4sleep::edf
