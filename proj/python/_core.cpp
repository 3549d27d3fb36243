#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <spdlog/spdlog.h>

#include "asyncmeet/audio.hpp"
#include "asyncmeet/dedup.hpp"
#include "asyncmeet/diarize.hpp"
#include "asyncmeet/enhance.hpp"
#include "asyncmeet/error.hpp"
#include "asyncmeet/evalscore.hpp"
#include "asyncmeet/pipeline.hpp"
#include "asyncmeet/simharness.hpp"
#include "asyncmeet/sync.hpp"
#include "asyncmeet/text.hpp"
#include "asyncmeet/transcript.hpp"

namespace py = pybind11;
using namespace asyncmeet;

namespace {

using RealArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vector(const RealArray& a) {
  if (a.ndim() != 1) throw InvalidInput("expected a 1-D array");
  return {a.data(), a.data() + a.size()};
}

RealArray to_array(const std::vector<double>& v) {
  RealArray out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

StftConfig make_stft(int sample_rate, double frame_ms, double shift_ms) {
  StftConfig c;
  c.sample_rate = sample_rate;
  c.frame_len_ms = frame_ms;
  c.frame_shift_ms = shift_ms;
  return c;
}

// JSON crosses the boundary as text; the Python side parses it.
nlohmann::json from_py(const py::handle& obj) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Meeting transcription over asynchronous distributed microphones";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<InvalidInput>(m, "InvalidInput", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def("set_log_level", [](const std::string& level) { spdlog::set_level(spdlog::level::from_str(level)); });

  // audio
  m.def(
      "read_wav",
      [](const std::filesystem::path& path) {
        const auto rec = read_wav(path);
        return py::make_tuple(to_array(rec.samples), rec.sample_rate);
      },
      py::arg("path"), "Mono 16-bit PCM WAV as (float64 samples in [-1, 1], sample rate).");
  m.def(
      "write_wav",
      [](const std::filesystem::path& path, const RealArray& samples, int sample_rate) {
        write_wav(path, to_vector(samples), sample_rate);
      },
      py::arg("path"), py::arg("samples"), py::arg("sample_rate") = 16000);
  m.def(
      "stft",
      [](const RealArray& x, int sample_rate, double frame_ms, double shift_ms) {
        return stft(to_vector(x), make_stft(sample_rate, frame_ms, shift_ms)).values;
      },
      py::arg("x"), py::arg("sample_rate") = 16000, py::arg("frame_ms") = 64.0, py::arg("shift_ms") = 16.0,
      "Frames x bins complex matrix.");
  m.def(
      "istft",
      [](const Eigen::MatrixXcd& values, std::size_t length, int sample_rate, double frame_ms, double shift_ms) {
        Spectrogram s;
        s.values = values;
        s.config = make_stft(sample_rate, frame_ms, shift_ms);
        return to_array(istft(s, length));
      },
      py::arg("spec"), py::arg("length") = 0, py::arg("sample_rate") = 16000, py::arg("frame_ms") = 64.0,
      py::arg("shift_ms") = 16.0);

  // sync
  m.def(
      "estimate_shift",
      [](const RealArray& anchor, const RealArray& other, int sample_rate, std::int64_t max_shift) {
        Recording a{to_vector(anchor), sample_rate}, b{to_vector(other), sample_rate};
        return estimate_shift(a, b, max_shift);
      },
      py::arg("anchor"), py::arg("other"), py::arg("sample_rate") = 16000, py::arg("max_shift") = 0,
      "Lag s with other[v + s] matching anchor[v].");

  // diarization helpers
  m.def(
      "close_gaps",
      [](const std::vector<std::uint8_t>& row, std::size_t max_gap) { return close_gaps(row, max_gap); },
      py::arg("row"), py::arg("max_gap") = 2);

  // beamforming algebra
  m.def("mvdr_weights", &mvdr_weights, py::arg("speech"), py::arg("noise"), py::arg("reference") = 0);
  m.def("ban_gain", &ban_gain, py::arg("w"), py::arg("noise"));

  // text
  m.def(
      "tokenize", [](const std::string& text, const std::string& mode) { return tokenize(text, parse_token_mode(mode)); },
      py::arg("text"), py::arg("mode") = "words");
  m.def(
      "similarity",
      [](const std::string& a, const std::string& b, const std::string& mode) {
        const auto t = parse_token_mode(mode);
        return similarity(tokenize(a, t), tokenize(b, t));
      },
      py::arg("a"), py::arg("b"), py::arg("mode") = "words");
  m.def(
      "reduce_duplicates",
      [](const py::object& transcript, double tau) { return to_py(to_json(reduce(transcript_from_json(from_py(transcript)), tau))); },
      py::arg("transcript"), py::arg("tau") = 0.5, "Transcript dict in, deduplicated transcript dict out.");
  m.def(
      "score",
      [](const py::object& hypothesis, const py::object& reference, const std::string& mode) {
        const auto s = score(transcript_from_json(from_py(hypothesis)), transcript_from_json(from_py(reference)),
                             parse_score_mode(mode));
        py::dict d;
        d["cer"] = s.cer;
        d["substitutions"] = s.substitutions;
        d["deletions"] = s.deletions;
        d["insertions"] = s.insertions;
        d["reference_length"] = s.reference_length;
        d["speaker_map"] = s.speaker_map;
        return d;
      },
      py::arg("hypothesis"), py::arg("reference"), py::arg("mode") = "attribution");
  m.def(
      "cer",
      [](const std::string& hypothesis, const std::string& reference) {
        const auto one = [](const std::string& text) {
          TranscriptSet t;
          if (!text.empty()) t.results.push_back(make_result(text, TokenMode::characters, 0, 0.0, 1.0));
          return t;
        };
        return score(one(hypothesis), one(reference)).cer;
      },
      py::arg("hypothesis"), py::arg("reference"));

  // simulation and the pipeline
  m.def(
      "simulate",
      [](const std::filesystem::path& scene, const std::filesystem::path& out) {
        const auto spec = load_scene(scene);
        write_scene(out, spec, render(spec));
      },
      py::arg("scene"), py::arg("out"), "Render a TOML/JSON scene into `out` (WAVs, manifest, truth, mock ASR).");
  m.def(
      "transcribe",
      [](const std::filesystem::path& manifest, const std::filesystem::path& out, std::size_t speakers,
         const std::optional<std::filesystem::path>& asr_mock, double lambda, double tau, bool closing, bool enhance,
         bool dedup) {
        PipelineConfig c;
        c.manifest = manifest;
        c.output_dir = out;
        c.speakers = speakers;
        c.lambda = lambda;
        c.tau = tau;
        c.closing = closing;
        c.enhance = enhance;
        c.dedup = dedup;
        if (asr_mock) {
          c.asr.kind = AsrKind::mock;
          c.asr.mock_manifest = *asr_mock;
        }
        RunReport report;
        {
          py::gil_scoped_release release;
          report = run(c);
        }
        return to_py(to_json(report.transcript));
      },
      py::arg("manifest"), py::arg("out"), py::arg("speakers"), py::arg("asr_mock") = py::none(),
      py::arg("lambda_") = 1.0, py::arg("tau") = 0.5, py::arg("closing") = true, py::arg("enhance") = true,
      py::arg("dedup") = true, "Run every stage and return the transcript dict.");
}
