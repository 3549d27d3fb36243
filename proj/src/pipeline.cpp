#include "asyncmeet/pipeline.hpp"

#include <unistd.h>

#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "asyncmeet/asr.hpp"
#include "asyncmeet/dedup.hpp"
#include "asyncmeet/diarize.hpp"
#include "asyncmeet/enhance.hpp"
#include "asyncmeet/sync.hpp"

namespace asyncmeet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

std::string digest(std::string_view text) { return hex64(fnv1a(text.data(), text.size())); }

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string file_digest(const fs::path& path) {
  const auto bytes = read_file(path);
  return digest(bytes);
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("missing artifact " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw IoError("corrupt artifact " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

constexpr const char* kStageMarker = "stage.json";
// int16 headroom for utterance WAVs
constexpr double kPeakLimit = 0.95;

bool stage_complete(const fs::path& dir) { return fs::exists(dir / kStageMarker); }

std::size_t anchor_index(const PipelineConfig& config, const InputManifest& manifest, const std::string& id) {
  if (id.empty()) return 0;
  for (std::size_t i = 0; i < manifest.devices.size(); ++i)
    if (manifest.devices[i].id == id) return i;
  throw InvalidInput("unknown device '" + id + "' in " + config.manifest.string());
}

std::vector<Recording> load_recordings(const InputManifest& manifest) {
  std::vector<Recording> recs;
  for (const auto& d : manifest.devices) {
    if (!fs::exists(d.wav)) throw IoError("missing WAV for device '" + d.id + "': " + d.wav.string());
    try {
      auto rec = read_wav(d.wav);
      rec.device_id = d.id;
      recs.push_back(std::move(rec));
    } catch (const Error& e) {
      throw IoError("device '" + d.id + "': " + e.what());
    }
  }
  return recs;
}

std::string activity_row(const ActivityMatrix& a, std::size_t r) {
  std::string s(a.slots(), '0');
  for (std::size_t t = 0; t < a.slots(); ++t)
    if (a(r, t)) s[t] = '1';
  return s;
}

// ---------------------------------------------------------------------------
// Artifacts as read back by downstream stages.

struct SyncArtifact {
  SyncResult sync;
  std::vector<std::string> devices;
};

SyncArtifact load_sync(const fs::path& dir, const InputManifest& manifest) {
  const auto j = read_json(dir / "sync.json");
  SyncArtifact a;
  a.devices = j.at("devices").get<std::vector<std::string>>();
  const auto anchor = j.at("anchor").get<std::size_t>();
  const auto shifts = j.at("shifts").get<std::vector<std::int64_t>>();
  a.sync = apply_shifts(load_recordings(manifest), anchor, shifts);
  return a;
}

struct DiarizeArtifact {
  SegmentGrid grid;
  ActivityMatrix slot_activity;
  std::size_t frames = 0;
  std::vector<Utterance> utterances;
};

DiarizeArtifact load_diarization(const fs::path& dir) {
  const auto j = read_json(dir / "diarization.json");
  DiarizeArtifact a;
  const auto& g = j.at("grid");
  a.grid.sample_rate = g.at("sample_rate").get<int>();
  a.grid.window = g.at("window").get<std::size_t>();
  a.grid.shift = g.at("shift").get<std::size_t>();
  a.grid.slots = g.at("slots").get<std::size_t>();
  const auto speakers = j.at("speakers").get<std::size_t>();
  a.slot_activity = ActivityMatrix(speakers, a.grid.slots, a.grid.shift_s());
  const auto rows = j.at("slot_activity").get<std::vector<std::string>>();
  for (std::size_t r = 0; r < rows.size() && r < a.slot_activity.rows(); ++r)
    for (std::size_t t = 0; t < rows[r].size() && t < a.grid.slots; ++t) a.slot_activity(r, t) = rows[r][t] == '1';
  a.frames = j.at("frames").get<std::size_t>();
  for (const auto& u : j.at("utterances"))
    a.utterances.push_back({u.at("speaker").get<std::size_t>(), u.at("begin").get<std::size_t>(),
                            u.at("end").get<std::size_t>()});
  return a;
}

// ---------------------------------------------------------------------------

struct Context {
  const PipelineConfig& config;
  InputManifest manifest;
  std::map<Stage, std::string> keys;
};

Stage upstream(Stage s) { return static_cast<Stage>(static_cast<int>(s) - 1); }

fs::path dir_of(const Context& ctx, Stage s) { return stage_dir(ctx.config, s, ctx.keys.at(s)); }

fs::path require_upstream(const Context& ctx, Stage s) {
  const auto up = upstream(s);
  const auto dir = dir_of(ctx, up);
  if (!stage_complete(dir))
    throw MissingArtifact("stage '" + std::string(to_string(s)) + "' needs the '" + std::string(to_string(up)) +
                          "' artifact at " + dir.string() + "; run that stage first");
  return dir;
}

void compute_sync(const Context& ctx, const fs::path& out) {
  const auto recs = load_recordings(ctx.manifest);
  const auto anchor = anchor_index(ctx.config, ctx.manifest, ctx.config.anchor);
  const auto r = synchronize(recs, anchor);
  json devices = json::array();
  for (const auto& d : ctx.manifest.devices) devices.push_back(d.id);
  std::vector<bool> ambiguous(r.ambiguous.begin(), r.ambiguous.end());
  write_json(out / "sync.json", {{"anchor", r.anchor},
                                 {"devices", devices},
                                 {"shifts", r.shifts},
                                 {"begin", r.begin},
                                 {"end", r.end},
                                 {"ambiguous", ambiguous},
                                 {"sample_rate", r.sample_rate}});
}

void compute_diarize(const Context& ctx, const fs::path& out) {
  const auto& c = ctx.config;
  const auto up = require_upstream(ctx, Stage::diarize);
  const auto s = load_sync(up, ctx.manifest);
  DiarizeOptions opts;
  opts.speakers = c.speakers;
  opts.window_s = c.window_s;
  opts.shift_s = c.shift_s;
  opts.lambda = c.lambda;
  opts.closing = c.closing;
  opts.min_utterance_frames = c.min_utterance_frames;
  opts.stft = c.stft;
  std::unique_ptr<SegmentEmbedder> embedder;
  if (!c.embeddings.empty()) {
    embedder = std::make_unique<FileEmbedder>(c.embeddings.string());
  } else {
    SpectralStatsOptions so;
    so.sample_rate = s.sync.sample_rate;
    embedder = std::make_unique<SpectralStatsEmbedder>(so);
  }
  const auto r = diarize(s.sync.aligned, s.sync.sample_rate, opts, *embedder);

  json rows = json::array(), utts = json::array();
  for (std::size_t k = 0; k < r.slot_activity.rows(); ++k) rows.push_back(activity_row(r.slot_activity, k));
  for (const auto& u : r.utterances) utts.push_back({{"speaker", u.speaker}, {"begin", u.begin}, {"end", u.end}});
  write_json(out / "diarization.json",
             {{"grid",
               {{"sample_rate", r.grid.sample_rate},
                {"window", r.grid.window},
                {"shift", r.grid.shift},
                {"slots", r.grid.slots}}},
              {"speakers", c.speakers},
              {"slot_activity", rows},
              {"frames", r.frame_activity.slots()},
              {"utterances", utts},
              {"dropped_segments", r.dropped_segments}});

  StftConfig stft = c.stft;
  stft.sample_rate = s.sync.sample_rate;
  const double fs_ = s.sync.sample_rate;
  std::vector<RttmSegment> segs;
  for (const auto& u : r.utterances)
    segs.push_back({u.speaker, (static_cast<double>(s.sync.begin) + static_cast<double>(u.begin * stft.frame_shift())) / fs_,
                    static_cast<double>(u.frames() * stft.frame_shift()) / fs_});
  write_rttm(out / "diarization.rttm", ctx.manifest.session_id, segs);
}

void compute_enhance(const Context& ctx, const fs::path& out) {
  const auto& c = ctx.config;
  const auto up = require_upstream(ctx, Stage::enhance);
  const auto s = load_sync(dir_of(ctx, Stage::sync), ctx.manifest);
  const auto d = load_diarization(up);
  StftConfig stft = c.stft;
  stft.sample_rate = s.sync.sample_rate;
  const std::size_t shift = stft.frame_shift();
  const double fs_ = s.sync.sample_rate;
  const std::size_t channels = s.sync.aligned.size();
  const bool beamform = c.enhance && channels > 1;
  const auto reference =
      anchor_index(c, ctx.manifest, c.reference_device.empty() ? c.anchor : c.reference_device);

  std::optional<SpectrogramTensor> session;
  ActivityMatrix guide;
  if (beamform) {
    session = SpectrogramTensor::from_signals(s.sync.aligned, stft);
    guide = upsample(d.slot_activity, d.grid, stft, session->frames());
  }
  EnhanceOptions eo;
  eo.dereverberate = c.dereverberate;
  eo.wpe = {c.wpe_taps, c.wpe_delay, c.wpe_iterations};
  eo.gss = {c.gss_iterations, c.context_s, c.guide_margin_s};
  WpeCache cache;

  fs::create_directories(out / "wav");
  json items = json::array(), failures = json::array();
  const std::size_t total_frames = stft.frames_for(s.sync.aligned[reference].size());
  const auto pad = static_cast<std::size_t>(std::lround(c.utterance_pad_s * fs_ / static_cast<double>(shift)));
  for (std::size_t i = 0; i < d.utterances.size(); ++i) {
    auto u = d.utterances[i];
    u.begin = u.begin > pad ? u.begin - pad : 0;
    u.end = std::min(total_frames - 1, u.end + pad);
    char id[32];
    std::snprintf(id, sizeof id, "utt%04zu", i);
    std::vector<double> samples;
    try {
      if (beamform) {
        samples = enhance_utterance(*session, u, guide, eo, &cache).samples;
      } else {
        const auto& x = s.sync.aligned[reference];
        const auto a = std::min(x.size(), u.begin * shift), b = std::min(x.size(), (u.end + 1) * shift);
        samples.assign(x.begin() + static_cast<std::ptrdiff_t>(a), x.begin() + static_cast<std::ptrdiff_t>(b));
      }
    } catch (const std::exception& e) {
      spdlog::warn("enhance: utterance {} skipped: {}", id, e.what());
      failures.push_back({{"id", id}, {"error", e.what()}});
      continue;
    }
    const double start = (static_cast<double>(s.sync.begin) + static_cast<double>(u.begin * shift)) / fs_;
    const auto rel = fs::path("wav") / (std::string(id) + ".wav");
    double peak = 0.0;
    for (const double v : samples) peak = std::max(peak, std::abs(v));
    if (peak > kPeakLimit) for (auto& v : samples) v *= kPeakLimit / peak;
    write_wav(out / rel, samples, s.sync.sample_rate);
    items.push_back({{"id", id},
                     {"speaker", u.speaker},
                     {"begin_frame", u.begin},
                     {"end_frame", u.end},
                     {"start_s", start},
                     {"end_s", start + static_cast<double>(samples.size()) / fs_},
                     {"wav", rel.string()}});
  }
  write_json(out / "utterances.json", {{"enhanced", beamform}, {"utterances", items}, {"failures", failures}});
}

std::unique_ptr<AsrBackend> make_backend(const AsrConfig& a) {
  const auto timeout = std::chrono::milliseconds(static_cast<long long>(a.timeout_s * 1000.0));
  switch (a.kind) {
    case AsrKind::mock:
      return std::make_unique<MockBackend>(MockManifest::load(a.mock_manifest));
    case AsrKind::command:
      return std::make_unique<SubprocessBackend>(a.command, timeout);
    case AsrKind::http:
      return std::make_unique<HttpBackend>(a.url, timeout);
    case AsrKind::none:
      break;
  }
  throw InvalidInput("no ASR backend configured (use --asr-cmd, --asr-url or --asr-mock)");
}

void compute_asr(const Context& ctx, const fs::path& out) {
  const auto& c = ctx.config;
  const auto up = require_upstream(ctx, Stage::asr);
  const auto backend = make_backend(c.asr);
  const auto j = read_json(up / "utterances.json");
  std::vector<UtteranceAudio> batch;
  for (const auto& item : j.at("utterances")) {
    const auto rec = read_wav(up / item.at("wav").get<std::string>());
    UtteranceAudio a;
    a.id = item.at("id").get<std::string>();
    a.samples = rec.samples;
    a.sample_rate = rec.sample_rate;
    a.speaker = item.at("speaker").get<std::size_t>();
    a.start_s = item.at("start_s").get<double>();
    a.end_s = item.at("end_s").get<double>();
    batch.push_back(std::move(a));
  }
  const auto outcomes = transcribe_batch(*backend, batch, c.asr.tokens, c.asr.parallelism);
  TranscriptSet set;
  set.session_id = ctx.manifest.session_id;
  set.token_mode = c.asr.tokens;
  set.config_digest = ctx.keys.at(Stage::asr);
  json failures = json::array();
  for (const auto& o : outcomes) {
    if (o.failed) failures.push_back({{"id", o.id}, {"error", o.error}});
    else if (o.result) set.results.push_back(*o.result);
  }
  set.sort();
  auto doc = to_json(set);
  doc["failures"] = failures;
  write_json(out / "asr.json", doc);
}

void compute_dedup(const Context& ctx, const fs::path& out) {
  const auto& c = ctx.config;
  const auto up = require_upstream(ctx, Stage::dedup);
  auto set = transcript_from_json(read_json(up / "asr.json"), c.asr.tokens);
  if (c.dedup) set = reduce(set, c.tau);
  set.session_id = ctx.manifest.session_id;
  set.config_digest = ctx.keys.at(Stage::dedup);
  write_transcript(out / "transcript.json", set);
}

void compute(const Context& ctx, Stage stage, const fs::path& out) {
  switch (stage) {
    case Stage::sync: return compute_sync(ctx, out);
    case Stage::diarize: return compute_diarize(ctx, out);
    case Stage::enhance: return compute_enhance(ctx, out);
    case Stage::asr: return compute_asr(ctx, out);
    case Stage::dedup: return compute_dedup(ctx, out);
  }
}

// Builds the stage into a scratch directory and renames it into place.
fs::path execute(const Context& ctx, Stage stage) {
  const auto dir = dir_of(ctx, stage);
  const auto tmp = fs::path(dir.string() + ".tmp-" + std::to_string(::getpid()));
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  try {
    compute(ctx, stage, tmp);
    write_json(tmp / kStageMarker, {{"stage", to_string(stage)}, {"key", ctx.keys.at(stage)}});
  } catch (const MissingArtifact&) {
    fs::remove_all(tmp);
    throw;
  } catch (const std::exception& e) {
    fs::remove_all(tmp);
    throw StageError(stage, e.what());
  }
  fs::remove_all(dir);
  fs::rename(tmp, dir);
  return dir;
}

Context make_context(const PipelineConfig& config) {
  config.validate();
  Context ctx{config, InputManifest::load(config.manifest), {}};
  ctx.keys = stage_keys(config);
  return ctx;
}

}  // namespace

// ---------------------------------------------------------------------------

InputManifest InputManifest::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path.string());
  InputManifest m;
  try {
    const auto j = json::parse(in);
    m.session_id = j.value("session_id", path.parent_path().filename().string());
    for (const auto& d : j.at("devices")) {
      DeviceInput dev;
      dev.id = d.at("id").get<std::string>();
      fs::path wav = d.at("wav").get<std::string>();
      dev.wav = wav.is_absolute() ? wav : path.parent_path() / wav;
      m.devices.push_back(std::move(dev));
    }
  } catch (const json::exception& e) {
    throw IoError("malformed manifest " + path.string() + ": " + e.what());
  }
  if (m.devices.empty()) throw InvalidInput("manifest lists no devices: " + path.string());
  return m;
}

void PipelineConfig::validate() const {
  if (manifest.empty()) throw InvalidInput("no input manifest given");
  if (speakers < 1) throw InvalidInput("speaker count must be at least 1");
  if (!(lambda >= 0.0)) throw InvalidInput("lambda must be non-negative");
  if (!(tau >= 0.0 && tau <= 1.0)) throw InvalidInput("tau must lie in [0, 1]");
  if (!(window_s > 0.0 && shift_s > 0.0)) throw InvalidInput("segment window and shift must be positive");
  if (stft.frame_len_ms < stft.frame_shift_ms) throw InvalidInput("STFT frame must not be shorter than its shift");
  if (asr.parallelism < 1) throw InvalidInput("ASR parallelism must be at least 1");
  if (!(context_s >= 0.0 && guide_margin_s >= 0.0 && utterance_pad_s >= 0.0)) throw InvalidInput("context, guide margin and utterance padding must be non-negative");
}

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::sync: return "sync";
    case Stage::diarize: return "diarize";
    case Stage::enhance: return "enhance";
    case Stage::asr: return "asr";
    case Stage::dedup: return "dedup";
  }
  return "?";
}

Stage parse_stage(std::string_view name) {
  for (auto s : kStages)
    if (to_string(s) == name) return s;
  throw InvalidInput("unknown stage '" + std::string(name) + "' (valid stages: sync, diarize, enhance, asr, dedup)");
}

std::map<Stage, std::string> stage_keys(const PipelineConfig& c) {
  const auto manifest = InputManifest::load(c.manifest);
  json inputs = json::array();
  for (const auto& d : manifest.devices) {
    if (!fs::exists(d.wav)) throw IoError("missing WAV for device '" + d.id + "': " + d.wav.string());
    inputs.push_back({{"id", d.id}, {"wav", file_digest(d.wav)}});
  }
  const json stft{{"frame_len_ms", c.stft.frame_len_ms}, {"frame_shift_ms", c.stft.frame_shift_ms}};
  std::map<Stage, std::string> keys;
  keys[Stage::sync] = digest(json{{"inputs", inputs}, {"anchor", c.anchor}}.dump());
  keys[Stage::diarize] = digest(json{{"up", keys[Stage::sync]},
                                     {"vad", "slot-share"},
                                     {"speakers", c.speakers},
                                     {"lambda", c.lambda},
                                     {"window_s", c.window_s},
                                     {"shift_s", c.shift_s},
                                     {"closing", c.closing},
                                     {"min_utterance_frames", c.min_utterance_frames},
                                     {"stft", stft},
                                     {"embeddings", c.embeddings.empty() ? "" : file_digest(c.embeddings)}}
                                    .dump());
  keys[Stage::enhance] = digest(json{{"up", keys[Stage::diarize]},
                                     {"enhance", c.enhance},
                                     {"dereverberate", c.dereverberate},
                                     {"wpe", {c.wpe_taps, c.wpe_delay, c.wpe_iterations}},
                                     {"gss", {c.gss_iterations, c.context_s, c.guide_margin_s}},
                                     {"pad", c.utterance_pad_s},
                                     {"reference", c.enhance ? "" : (c.reference_device.empty() ? c.anchor : c.reference_device)}}
                                    .dump());
  std::string backend;
  switch (c.asr.kind) {
    case AsrKind::none: backend = "none"; break;
    case AsrKind::mock:
      backend = "mock:" + (fs::exists(c.asr.mock_manifest) ? file_digest(c.asr.mock_manifest) : c.asr.mock_manifest.string());
      break;
    case AsrKind::command: backend = "cmd:" + c.asr.command; break;
    case AsrKind::http: backend = "http:" + c.asr.url; break;
  }
  keys[Stage::asr] =
      digest(json{{"up", keys[Stage::enhance]}, {"backend", backend}, {"tokens", to_string(c.asr.tokens)}}.dump());
  keys[Stage::dedup] = digest(json{{"up", keys[Stage::asr]}, {"dedup", c.dedup}, {"tau", c.dedup ? c.tau : 0.0}}.dump());
  return keys;
}

fs::path stage_dir(const PipelineConfig& config, Stage stage, const std::string& key) {
  return config.output_dir / "stages" / (std::string(to_string(stage)) + "-" + key);
}

RunReport run(const PipelineConfig& config) {
  const auto ctx = make_context(config);
  RunReport report;
  for (auto stage : kStages) {
    const auto start = std::chrono::steady_clock::now();
    auto dir = dir_of(ctx, stage);
    const bool cached = stage_complete(dir);
    if (!cached) dir = execute(ctx, stage);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    spdlog::info("stage {}: {} in {:.2f} s ({})", to_string(stage), cached ? "cached" : "done", secs, dir.string());
    report.timings.push_back({stage, secs, cached});
    report.artifacts[stage] = dir;
  }
  const auto& out = config.output_dir;
  fs::copy_file(report.artifacts[Stage::dedup] / "transcript.json", out / "transcript.json",
                fs::copy_options::overwrite_existing);
  fs::copy_file(report.artifacts[Stage::diarize] / "diarization.rttm", out / "diarization.rttm",
                fs::copy_options::overwrite_existing);
  report.transcript = read_transcript(out / "transcript.json", config.asr.tokens);
  const auto enh = read_json(report.artifacts[Stage::enhance] / "utterances.json");
  const auto asr = read_json(report.artifacts[Stage::asr] / "asr.json");
  report.failed_utterances = enh.at("failures").size() + asr.at("failures").size();

  json timings = json::array();
  for (const auto& t : report.timings)
    timings.push_back({{"stage", to_string(t.stage)}, {"seconds", t.seconds}, {"cached", t.cached}});
  write_json(out / "run_report.json", {{"timings", timings}, {"failed_utterances", report.failed_utterances}});
  return report;
}

fs::path run_stage(const PipelineConfig& config, Stage stage) {
  const auto ctx = make_context(config);
  return execute(ctx, stage);
}

}  // namespace asyncmeet
