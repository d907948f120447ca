#include <algorithm>
#include <map>

#include "s4sleep/dataset.hpp"
#include "s4sleep/log.hpp"

namespace s4sleep {
namespace {

bool has_suffix(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

}  // namespace

std::vector<LabeledRecord> load_edf_directory(const std::filesystem::path& dir, std::string_view channel_label) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DatasetError(DatasetErrc::Io, "not a directory: " + dir.string());

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && lower(entry.path().extension().string()) == ".edf") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  std::map<std::string, fs::path> hypnograms;  // keyed by the 6-character Sleep-EDF prefix
  std::vector<fs::path> recordings;
  for (const auto& f : files) {
    const std::string name = f.filename().string();
    if (has_suffix(lower(name), "-hypnogram.edf")) {
      hypnograms.emplace(name.substr(0, 6), f);
    } else {
      recordings.push_back(f);
    }
  }

  std::vector<LabeledRecord> out;
  for (const auto& f : recordings) {
    const auto rec = edf::EdfRecording::open(f);
    std::string stem = f.stem().string();
    if (has_suffix(lower(stem), "-psg")) stem.resize(stem.size() - 4);
    if (!rec.find_signal(channel_label)) {
      log_warning("skipping " + f.filename().string() + ": no channel '" + std::string(channel_label) + "'");
      continue;
    }
    if (!rec.annotations().empty()) {
      out.push_back(align_epochs(rec, rec.annotations(), channel_label, stem));
      continue;
    }
    const auto it = hypnograms.find(f.filename().string().substr(0, 6));
    if (it == hypnograms.end()) {
      log_warning("skipping " + f.filename().string() + ": no hypnogram found");
      continue;
    }
    const auto hyp = edf::EdfRecording::open(it->second);
    out.push_back(align_epochs(rec, hyp.annotations(), channel_label, stem));
  }
  return out;
}

}  // namespace s4sleep
