#include "asyncmeet/transcript.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "asyncmeet/error.hpp"

namespace asyncmeet {

AsrResult make_result(std::string text, TokenMode mode, std::size_t speaker, double start_s, double end_s,
                      std::optional<double> confidence) {
  AsrResult r;
  r.tokens = tokenize(text, mode);
  r.text = std::move(text);
  r.speaker = speaker;
  r.start_s = start_s;
  r.end_s = end_s;
  r.confidence = confidence;
  return r;
}

void TranscriptSet::sort() {
  std::stable_sort(results.begin(), results.end(), [](const AsrResult& a, const AsrResult& b) {
    if (a.start_s != b.start_s) return a.start_s < b.start_s;
    if (a.end_s != b.end_s) return a.end_s < b.end_s;
    return a.speaker < b.speaker;
  });
}

nlohmann::json to_json(const TranscriptSet& set) {
  nlohmann::json results = nlohmann::json::array();
  for (const auto& r : set.results) {
    nlohmann::json item{{"speaker", r.speaker}, {"start_s", r.start_s}, {"end_s", r.end_s}, {"text", r.text}};
    item["confidence"] = r.confidence ? nlohmann::json(*r.confidence) : nlohmann::json(nullptr);
    results.push_back(std::move(item));
  }
  return {{"schema_version", TranscriptSet::kSchemaVersion},
          {"session_id", set.session_id},
          {"token_mode", std::string(to_string(set.token_mode))},
          {"results", std::move(results)},
          {"config_digest", set.config_digest}};
}

TranscriptSet transcript_from_json(const nlohmann::json& j, std::optional<TokenMode> mode) {
  try {
    TranscriptSet set;
    set.session_id = j.value("session_id", "");
    set.config_digest = j.value("config_digest", "");
    set.token_mode = mode.value_or(parse_token_mode(j.value("token_mode", "words")));
    std::map<std::string, std::size_t> labels;
    for (const auto& item : j.at("results")) {
      std::size_t speaker = 0;
      const auto& s = item.at("speaker");
      if (s.is_number_integer()) {
        speaker = s.get<std::size_t>();
      } else {
        const auto label = s.get<std::string>();
        const auto [it, inserted] = labels.emplace(label, labels.size());
        speaker = it->second;
      }
      std::optional<double> conf;
      if (item.contains("confidence") && !item["confidence"].is_null()) conf = item["confidence"].get<double>();
      set.results.push_back(make_result(item.at("text").get<std::string>(), set.token_mode, speaker,
                                        item.at("start_s").get<double>(), item.at("end_s").get<double>(), conf));
    }
    set.sort();
    return set;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed transcript JSON: ") + e.what());
  }
}

TranscriptSet read_transcript(const std::filesystem::path& path, std::optional<TokenMode> mode) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open transcript: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("cannot parse transcript " + path.string() + ": " + e.what());
  }
  return transcript_from_json(j, mode);
}

void write_transcript(const std::filesystem::path& path, const TranscriptSet& set) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write transcript: " + path.string());
  out << to_json(set).dump(2) << '\n';
}

std::string format_rttm(const std::string& session_id, const std::vector<RttmSegment>& segments) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  for (const auto& s : segments)
    os << "SPEAKER " << session_id << " 1 " << s.start_s << ' ' << s.duration_s << " <NA> <NA> spk" << s.speaker
       << " <NA> <NA>\n";
  return os.str();
}

void write_rttm(const std::filesystem::path& path, const std::string& session_id,
                const std::vector<RttmSegment>& segments) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write RTTM: " + path.string());
  out << format_rttm(session_id, segments);
}

std::vector<RttmSegment> parse_rttm(const std::string& content) {
  std::vector<RttmSegment> out;
  std::map<std::string, std::size_t> labels;
  std::istringstream in(content);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string type, file, channel, onset, dur, ortho, stype, name;
    if (!(ls >> type)) continue;
    if (type != "SPEAKER") continue;
    if (!(ls >> file >> channel >> onset >> dur >> ortho >> stype >> name))
      throw IoError("malformed RTTM line " + std::to_string(lineno));
    RttmSegment seg;
    try {
      seg.start_s = std::stod(onset);
      seg.duration_s = std::stod(dur);
    } catch (const std::exception&) {
      throw IoError("malformed RTTM timing on line " + std::to_string(lineno));
    }
    if (name.rfind("spk", 0) == 0 && name.size() > 3 &&
        std::all_of(name.begin() + 3, name.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      seg.speaker = std::stoul(name.substr(3));
    } else {
      const auto [it, inserted] = labels.emplace(name, labels.size());
      seg.speaker = it->second;
    }
    out.push_back(seg);
  }
  return out;
}

std::vector<RttmSegment> read_rttm(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open RTTM: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_rttm(ss.str());
}

}  // namespace asyncmeet
