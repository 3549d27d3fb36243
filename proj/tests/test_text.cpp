#include <doctest.h>

#include <algorithm>
#include <random>

#include "asyncmeet/dedup.hpp"
#include "asyncmeet/error.hpp"
#include "asyncmeet/evalscore.hpp"
#include "asyncmeet/text.hpp"
#include "asyncmeet/transcript.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace asyncmeet;

namespace {

std::vector<std::string> words(std::string_view s) { return tokenize(s, TokenMode::words); }

AsrResult res(std::string text, std::size_t spk, double s, double e) {
  return make_result(std::move(text), TokenMode::words, spk, s, e);
}

TranscriptSet single(std::string text, std::size_t speaker = 0) {
  TranscriptSet t;
  t.token_mode = TokenMode::characters;
  if (!text.empty()) t.results.push_back(make_result(std::move(text), TokenMode::characters, speaker, 0.0, 1.0));
  return t;
}

}  // namespace

TEST_SUITE("text") {
  TEST_CASE("tokenize") {
    CHECK(words("  a bb\tc\n") == std::vector<std::string>{"a", "bb", "c"});
    CHECK(words("").empty());
    CHECK(tokenize("ab c", TokenMode::characters) == std::vector<std::string>{"a", "b", "c"});
    CHECK(tokenize("日本 語", TokenMode::characters) == std::vector<std::string>{"日", "本", "語"});
    CHECK(parse_token_mode("chars") == TokenMode::characters);
    CHECK_THROWS_AS(parse_token_mode("bytes"), InvalidInput);
    const auto w = words("x y z");
    CHECK(join(w) == "x y z");
  }

  TEST_CASE("levenshtein agrees with the table oracle") {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> len(0, 9), ch(0, 3);
    for (int trial = 0; trial < 500; ++trial) {
      std::vector<std::string> a(static_cast<std::size_t>(len(rng))), b(static_cast<std::size_t>(len(rng)));
      for (auto& t : a) t = std::string(1, static_cast<char>('a' + ch(rng)));
      for (auto& t : b) t = std::string(1, static_cast<char>('a' + ch(rng)));
      const auto d = oracle::edit_distance(a, b);
      CHECK(levenshtein<std::string>(a, b) == d);
      CHECK(align(a, b).total() == d);
    }
  }

  TEST_CASE("edit breakdown") {
    const auto e = align(words("a b c d"), words("a x c d e"));
    CHECK(e.substitutions == 1);
    CHECK(e.insertions == 1);
    CHECK(e.deletions == 0);
    const auto del = align(words("a b c"), {});
    CHECK(del.deletions == 3);
  }
}

TEST_SUITE("dedup") {
  TEST_CASE("similarity spot values") {
    CHECK(similarity(words("a b c"), words("a b c")) == 1.0);
    CHECK(similarity(words("a b c d"), words("b c")) == 1.0);
    CHECK(similarity(words("a b c"), words("x y z")) == 0.0);
    CHECK(similarity(words("a b c d"), words("a b x")) == doctest::Approx((4.0 - 2.0) / 3.0));
    CHECK(similarity(words("a b c d e f"), words("c d")) == 1.0);  // containment
    CHECK_THROWS_AS(similarity(words(""), words("a")), InvalidInput);
  }

  TEST_CASE("adjacency clauses") {
    const std::vector<AsrResult> r{res("hello world", 0, 0, 2), res("hello world", 1, 1, 3),
                                   res("hello world", 0, 1, 3), res("hello world", 2, 5, 6)};
    const auto g = build_adjacency(r, 0.5);
    CHECK(g.adjacency[0][1] == 1);
    CHECK(g.adjacency[1][0] == 1);
    CHECK(g.adjacency[0][2] == 0);  // same speaker
    CHECK(g.adjacency[1][3] == 0);  // no time overlap
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(g.adjacency[i][i] == 0);
    CHECK(g.component_count == 2);
    CHECK(g.components == std::vector<std::size_t>{0, 0, 0, 1});
    // Touching intervals do not overlap.
    CHECK_FALSE(overlaps(res("a", 0, 0, 1), res("a", 1, 1, 2)));
  }

  TEST_CASE("longest speaker wins its component") {
    const std::vector<AsrResult> r{res("hello world", 1, 0, 2), res("hello world", 2, 0.5, 2),
                                   res("hello world again", 1, 1.5, 4), res("hello world again", 2, 1.8, 3)};
    const auto out = reduce(r, 0.5);
    REQUIRE(out.size() == 2);
    CHECK(out[0].speaker == 1);
    CHECK(out[1].speaker == 1);
    CHECK(reduce(std::vector<AsrResult>{}, 0.5).empty());
  }

  TEST_CASE("ties go to the lowest speaker") {
    const std::vector<AsrResult> r{res("a b", 3, 0, 2), res("a b", 1, 0, 2)};
    const auto out = reduce(r, 0.5);
    REQUIRE(out.size() == 1);
    CHECK(out[0].speaker == 1);
  }

  TEST_CASE("chains merge through the path rule") {
    // 0-1 linked, 1-2 linked, 0-2 not overlapping in time.
    const std::vector<AsrResult> r{res("a b c", 0, 0, 2), res("a b c", 1, 1, 4), res("a b c", 2, 3, 5)};
    const auto g = build_adjacency(r, 0.5);
    CHECK(g.adjacency[0][2] == 0);
    CHECK(g.component_count == 1);
    CHECK(reduce(r, 0.5).size() == 1);
  }

  TEST_CASE("matches the transitive-closure oracle") {
    std::mt19937_64 rng(77);
    std::uniform_int_distribution<std::size_t> size(0, 8);
    for (int trial = 0; trial < 300; ++trial) {
      const auto r = oracle::random_results(rng, size(rng));
      for (double tau : {0.0, 0.5, 0.9}) CHECK(reduce(r, tau) == oracle::dedup(r, tau));
    }
  }

  TEST_CASE("output is invariant to input order") {
    std::mt19937_64 rng(78);
    for (int trial = 0; trial < 100; ++trial) {
      auto r = oracle::random_results(rng, 8);
      const auto ref = reduce(r, 0.5);
      std::shuffle(r.begin(), r.end(), rng);
      CHECK(reduce(r, 0.5) == ref);
      // Subset of the input, text untouched.
      for (const auto& o : ref) CHECK(std::find(r.begin(), r.end(), o) != r.end());
    }
  }
}

TEST_SUITE("evalscore") {
  TEST_CASE("scorer examples") {
    CHECK(score(single("abed"), single("abcd")).cer == doctest::Approx(0.25));
    const auto empty = score(single(""), single("abcd"));
    CHECK(empty.cer == doctest::Approx(1.0));
    CHECK(empty.deletions == 4);
    CHECK(score(single("abcd"), single("abcd")).cer == 0.0);
    CHECK_THROWS_AS(score(single("abc"), single("")), InvalidInput);
    CHECK(parse_score_mode("pooled") == ScoreMode::pooled);
    CHECK_THROWS_AS(parse_score_mode("x"), InvalidInput);
  }

  TEST_CASE("speaker permutation does not change the score") {
    TranscriptSet ref, hyp;
    ref.results = {res("aaa bbb", 0, 0, 1), res("ccc", 1, 0.5, 2), res("ddd eee", 2, 2, 3)};
    hyp.results = {res("aaa bxb", 5, 0, 1), res("ccc", 7, 0.5, 2), res("dd eee", 3, 2, 3)};
    const auto base = score(hyp, ref);
    CHECK(base.errors() == 2);
    for (const auto& perm : {std::vector<std::size_t>{7, 3, 5}, {3, 5, 7}, {0, 1, 2}}) {
      TranscriptSet h = hyp;
      for (auto& r : h.results) r.speaker = r.speaker == 5 ? perm[0] : r.speaker == 7 ? perm[1] : perm[2];
      CHECK(score(h, ref).cer == base.cer);
    }
    REQUIRE(base.speaker_map.size() == 3);
    CHECK(base.speaker_map[0] == std::pair<std::size_t, std::size_t>{0, 5});
  }

  TEST_CASE("pooled ignores attribution") {
    TranscriptSet ref, hyp;
    ref.results = {res("ab", 0, 0, 1), res("cd", 1, 1, 2)};
    hyp.results = {res("ab", 1, 0, 1), res("cd", 1, 1, 2)};
    CHECK(score(hyp, ref, ScoreMode::pooled).cer == 0.0);
    CHECK(score(hyp, ref, ScoreMode::attribution).cer == doctest::Approx(1.0));
  }

  TEST_CASE("repairs never raise the error rate") {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> ch(0, 25);
    std::string truth;
    for (int i = 0; i < 40; ++i) truth += static_cast<char>('a' + ch(rng));
    std::string hyp = truth;
    std::vector<std::size_t> edits;
    for (std::size_t i = 0; i < hyp.size(); i += 3) {
      hyp[i] = hyp[i] == 'z' ? 'y' : 'z';
      edits.push_back(i);
    }
    double last = score(single(hyp), single(truth)).cer;
    for (auto i : edits) {
      hyp[i] = truth[i];
      const double now = score(single(hyp), single(truth)).cer;
      CHECK(now <= last);
      last = now;
    }
    CHECK(last == 0.0);
  }
}

TEST_SUITE("transcript") {
  TEST_CASE("json round trip") {
    TranscriptSet t;
    t.session_id = "s1";
    t.config_digest = "abc";
    t.results = {res("hello there", 1, 0.5, 1.25), make_result("x", TokenMode::words, 0, 2, 3, 0.75)};
    const auto back = transcript_from_json(to_json(t));
    CHECK(back.session_id == "s1");
    CHECK(back.config_digest == "abc");
    CHECK(back.results == t.results);
    CHECK(to_json(t)["schema_version"] == 1);
    CHECK(to_json(t)["results"][0]["confidence"].is_null());
  }

  TEST_CASE("string speaker labels") {
    const auto j = nlohmann::json::parse(
        R"({"results":[{"speaker":"bob","start_s":0,"end_s":1,"text":"a"},{"speaker":"amy","start_s":1,"end_s":2,"text":"b"},{"speaker":"bob","start_s":2,"end_s":3,"text":"c"}]})");
    const auto t = transcript_from_json(j);
    CHECK(t.results[0].speaker == 0);
    CHECK(t.results[1].speaker == 1);
    CHECK(t.results[2].speaker == 0);
  }

  TEST_CASE("files and rttm") {
    test::TempDir dir("tr");
    TranscriptSet t;
    t.session_id = "meet";
    t.results = {res("b", 0, 2, 3), res("a", 1, 0, 1)};
    t.sort();
    CHECK(t.results[0].text == "a");
    write_transcript(dir / "t.json", t);
    CHECK(read_transcript(dir / "t.json").results == t.results);
    CHECK_THROWS_AS(read_transcript(dir / "none.json"), IoError);

    const std::vector<RttmSegment> segs{{0, 0.5, 1.25}, {2, 3.0, 0.5}};
    const auto text = format_rttm("meet", segs);
    CHECK(text.find("SPEAKER meet 1 0.500") != std::string::npos);
    CHECK(text.find("spk2") != std::string::npos);
    CHECK(parse_rttm(text) == segs);
    write_rttm(dir / "a.rttm", "meet", segs);
    CHECK(read_rttm(dir / "a.rttm") == segs);
  }
}
