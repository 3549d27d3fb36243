#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "asyncmeet/evalscore.hpp"
#include "asyncmeet/pipeline.hpp"
#include "asyncmeet/simharness.hpp"

using namespace asyncmeet;
namespace fs = std::filesystem;

namespace {

struct PipelineFlags {
  std::string manifest;
  std::string out = "out";
  std::size_t speakers = 2;
  double lambda = 1.0;
  double tau = 0.5;
  std::string anchor;
  std::string reference;
  bool no_closing = false;
  bool no_enhance = false;
  bool no_dedup = false;
  bool no_wpe = false;
  std::size_t gss_iterations = 10;
  double context_s = 15.0;
  double guide_margin_s = 1.0;
  double utterance_pad_s = 0.75;
  std::string embeddings;
  std::string asr_cmd;
  std::string asr_url;
  std::string asr_mock;
  double asr_timeout = 120.0;
  std::size_t asr_parallel = 1;
  std::string tokens = "words";
};

void add_pipeline_flags(CLI::App* app, PipelineFlags& f) {
  app->add_option("--manifest", f.manifest, "Input manifest (device -> WAV)")->required()->envname("ASYNCMEET_MANIFEST");
  app->add_option("--out", f.out, "Output directory")->envname("ASYNCMEET_OUT");
  app->add_option("--speakers,-K", f.speakers, "Number of speakers")->check(CLI::PositiveNumber)->envname("ASYNCMEET_SPEAKERS");
  app->add_option("--lambda", f.lambda, "Weight of the power feature")->check(CLI::NonNegativeNumber)->envname("ASYNCMEET_LAMBDA");
  app->add_option("--tau,--dedup-tau", f.tau, "Duplication similarity threshold")->check(CLI::Range(0.0, 1.0))->envname("ASYNCMEET_TAU");
  app->add_option("--anchor", f.anchor, "Anchor device id (default: first)")->envname("ASYNCMEET_ANCHOR");
  app->add_option("--reference-device", f.reference, "Device used when enhancement is off (default: anchor)")
      ->envname("ASYNCMEET_REFERENCE_DEVICE");
  app->add_flag("--no-closing", f.no_closing, "Skip binary closing of the activity matrix");
  app->add_flag("--no-enhance", f.no_enhance, "Skip speech enhancement");
  app->add_flag("--no-dedup", f.no_dedup, "Skip duplication reduction");
  app->add_flag("--no-wpe", f.no_wpe, "Skip dereverberation");
  app->add_option("--gss-iterations", f.gss_iterations, "EM iterations per utterance")->envname("ASYNCMEET_GSS_ITERATIONS");
  app->add_option("--context", f.context_s, "Context added around each utterance, seconds")->envname("ASYNCMEET_CONTEXT");
  app->add_option("--guide-margin", f.guide_margin_s, "Activity margin for the separation guide, seconds")->envname("ASYNCMEET_GUIDE_MARGIN");
  app->add_option("--pad", f.utterance_pad_s, "Padding added to both ends of each utterance, seconds")->envname("ASYNCMEET_PAD");
  app->add_option("--embeddings", f.embeddings, "Precomputed segment embeddings")->envname("ASYNCMEET_EMBEDDINGS");
  auto* cmd = app->add_option("--asr-cmd", f.asr_cmd, "Recognizer command, {wav} is replaced by a WAV path")
                  ->envname("ASYNCMEET_ASR_CMD");
  auto* url = app->add_option("--asr-url", f.asr_url, "Recognizer HTTP endpoint")->envname("ASYNCMEET_ASR_URL");
  auto* mock = app->add_option("--asr-mock", f.asr_mock, "Mock recognizer manifest")->envname("ASYNCMEET_ASR_MOCK");
  cmd->excludes(url)->excludes(mock);
  url->excludes(mock);
  app->add_option("--asr-timeout", f.asr_timeout, "Recognizer timeout, seconds")->envname("ASYNCMEET_ASR_TIMEOUT");
  app->add_option("--asr-parallel", f.asr_parallel, "Concurrent recognizer requests")->envname("ASYNCMEET_ASR_PARALLEL");
  app->add_option("--tokens", f.tokens, "Token granularity: words or characters")
      ->check(CLI::IsMember({"words", "characters"}))
      ->envname("ASYNCMEET_TOKENS");
}

PipelineConfig to_config(const PipelineFlags& f) {
  PipelineConfig c;
  c.manifest = f.manifest;
  c.output_dir = f.out;
  c.speakers = f.speakers;
  c.lambda = f.lambda;
  c.tau = f.tau;
  c.anchor = f.anchor;
  c.reference_device = f.reference;
  c.closing = !f.no_closing;
  c.enhance = !f.no_enhance;
  c.dedup = !f.no_dedup;
  c.dereverberate = !f.no_wpe;
  c.gss_iterations = f.gss_iterations;
  c.context_s = f.context_s;
  c.guide_margin_s = f.guide_margin_s;
  c.utterance_pad_s = f.utterance_pad_s;
  c.embeddings = f.embeddings;
  c.asr.timeout_s = f.asr_timeout;
  c.asr.parallelism = f.asr_parallel;
  c.asr.tokens = parse_token_mode(f.tokens);
  if (!f.asr_cmd.empty()) {
    c.asr.kind = AsrKind::command;
    c.asr.command = f.asr_cmd;
  } else if (!f.asr_url.empty()) {
    c.asr.kind = AsrKind::http;
    c.asr.url = f.asr_url;
  } else if (!f.asr_mock.empty()) {
    c.asr.kind = AsrKind::mock;
    c.asr.mock_manifest = f.asr_mock;
  }
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meeting transcription with asynchronous distributed microphones"};
  app.set_config("--config", "", "TOML/INI file whose keys mirror the flags");
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")->envname("ASYNCMEET_LOG_LEVEL");

  PipelineFlags flags;
  auto* transcribe = app.add_subcommand("transcribe", "Run sync, diarize, enhance, asr and dedup");
  add_pipeline_flags(transcribe, flags);

  std::string stage_name;
  auto* stage = app.add_subcommand("run-stage", "Recompute one stage from cached upstream artifacts");
  stage->add_option("stage", stage_name, "sync, diarize, enhance, asr or dedup")->required();
  add_pipeline_flags(stage, flags);

  std::string hyp, ref, mode = "attribution", score_tokens = "characters";
  bool score_json = false;
  auto* score_cmd = app.add_subcommand("score", "Character error rate of a transcript against a reference");
  score_cmd->add_option("--hyp", hyp, "Hypothesis transcript JSON")->required()->check(CLI::ExistingFile);
  score_cmd->add_option("--ref", ref, "Reference transcript JSON")->required()->check(CLI::ExistingFile);
  score_cmd->add_option("--mode", mode, "attribution or pooled")->check(CLI::IsMember({"attribution", "pooled"}));
  score_cmd->add_option("--tokens", score_tokens, "characters or words")->check(CLI::IsMember({"words", "characters"}));
  score_cmd->add_flag("--json", score_json, "Print the result as JSON");

  std::string scene_path, sim_out;
  auto* simulate = app.add_subcommand("simulate", "Render a synthetic meeting scene");
  simulate->add_option("--scene", scene_path, "Scene file (TOML or JSON)")->required()->check(CLI::ExistingFile);
  simulate->add_option("--out", sim_out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*transcribe) {
      const auto report = run(to_config(flags));
      std::cout << fs::path(flags.out) / "transcript.json" << ": " << report.transcript.results.size() << " results";
      if (report.failed_utterances) std::cout << ", " << report.failed_utterances << " failed utterances";
      std::cout << '\n';
    } else if (*stage) {
      const auto s = parse_stage(stage_name);
      std::cout << run_stage(to_config(flags), s).string() << '\n';
    } else if (*score_cmd) {
      const auto tokens = parse_token_mode(score_tokens);
      const auto r = score(read_transcript(hyp), read_transcript(ref), parse_score_mode(mode), tokens);
      if (score_json) {
        nlohmann::json j{{"cer", r.cer},
                         {"substitutions", r.substitutions},
                         {"deletions", r.deletions},
                         {"insertions", r.insertions},
                         {"reference_length", r.reference_length},
                         {"speaker_map", r.speaker_map}};
        std::cout << j.dump(2) << '\n';
      } else {
        std::printf("CER %.4f  (S %zu  D %zu  I %zu  N %zu)\n", r.cer, r.substitutions, r.deletions, r.insertions,
                    r.reference_length);
      }
    } else if (*simulate) {
      const auto scene = load_scene(scene_path);
      const auto rendered = render(scene);
      write_scene(sim_out, scene, rendered);
      std::printf("%zu devices, %zu utterances, overlap ratio %.3f -> %s\n", rendered.recordings.size(),
                  rendered.truth.utterances.size(), overlap_ratio(rendered.truth), sim_out.c_str());
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
