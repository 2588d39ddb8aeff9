#include "ladx/scene.hpp"
#include "ladx/vocab.hpp"

#include <catch_amalgamated.hpp>

#include <filesystem>
#include <set>

using namespace ladx;

TEST_CASE("vocabulary has 32 content words plus 4 specials") {
  const Vocabulary vocab = Vocabulary::standard();
  CHECK(vocab.size() == 36);
  CHECK(vocab.id("[CLS]") == Vocabulary::kCls);
  CHECK(vocab.id("[SEP]") == Vocabulary::kSep);
  CHECK(vocab.id("[PAD]") == Vocabulary::kPad);
  CHECK(vocab.id("[MASK]") == Vocabulary::kMask);
  CHECK(vocab.token(vocab.id("red")) == "red");
}

TEST_CASE("vocabulary file round-trips, one token per line") {
  const Vocabulary vocab = Vocabulary::standard();
  const auto path = std::filesystem::temp_directory_path() / "ladx_vocab_test.txt";
  vocab.save(path.string());
  const Vocabulary loaded = Vocabulary::load(path.string());
  CHECK(loaded.size() == vocab.size());
  for (int i = 0; i < vocab.size(); ++i) CHECK(loaded.token(i) == vocab.token(i));
  std::filesystem::remove(path);
}

TEST_CASE("tokenize produces CLS caption SEP PAD layout") {
  const Vocabulary vocab = Vocabulary::standard();
  const TokenSeq seq = tokenize("a red circle", vocab, 24);
  REQUIRE(seq.length() == 24);
  CHECK(seq.ids[0] == Vocabulary::kCls);
  CHECK(seq.ids[1] == vocab.id("a"));
  CHECK(seq.ids[2] == vocab.id("red"));
  CHECK(seq.ids[3] == vocab.id("circle"));
  CHECK(seq.ids[4] == Vocabulary::kSep);
  for (int i = 5; i < 24; ++i) CHECK(seq.ids[std::size_t(i)] == Vocabulary::kPad);
}

TEST_CASE("tokenize rejects unknown words and overlong captions") {
  const Vocabulary vocab = Vocabulary::standard();
  CHECK_THROWS_AS(tokenize("a red dragon", vocab, 24), std::invalid_argument);
  std::string overlong = "red";
  for (int i = 0; i < 22; ++i) overlong += " red";  // 23 content words
  CHECK_THROWS_AS(tokenize(overlong, vocab, 24), std::invalid_argument);
}

TEST_CASE("strip_specials removes specials and preserves word order") {
  const Vocabulary vocab = Vocabulary::standard();
  TokenSeq seq;
  seq.ids = {Vocabulary::kCls, vocab.id("a"), vocab.id("red"), Vocabulary::kSep,
             Vocabulary::kPad, Vocabulary::kPad};
  CHECK(strip_specials(seq, vocab) == "a red");

  TokenSeq all_pad;
  all_pad.ids.assign(8, Vocabulary::kPad);
  CHECK(strip_specials(all_pad, vocab).empty());

  TokenSeq interleaved;
  interleaved.ids = {vocab.id("red"), Vocabulary::kPad, vocab.id("circle"),
                     Vocabulary::kMask, vocab.id("above")};
  CHECK(strip_specials(interleaved, vocab) == "red circle above");
}

TEST_CASE("detokenize inverts tokenize on grammar captions") {
  const Vocabulary vocab = Vocabulary::standard();
  Rng rng(99);
  for (int i = 0; i < 200; ++i) {
    const Scene scene = sample_scene(rng);
    const std::string caption = render_caption(scene);
    CHECK(detokenize(tokenize(caption, vocab, 24), vocab) == caption);
  }
}

TEST_CASE("grammar is a bijection: captions re-parse to their scene") {
  Rng rng(4);
  for (int i = 0; i < 500; ++i) {
    const Scene scene = sample_scene(rng);
    const Scene back = parse_caption(render_caption(scene));
    CHECK(back == scene);
  }
}

TEST_CASE("one-object scenes have no relation word") {
  Scene scene;
  scene.objects = {{Shape::star, Color::yellow, ObjSize::large}};
  const std::string caption = render_caption(scene);
  CHECK(caption == "there is a large yellow star");
  for (const auto& word : split_words(caption)) {
    CHECK(word != "above");
    CHECK(word != "below");
    CHECK(word != "left");
    CHECK(word != "right");
  }
}

TEST_CASE("generation is a pure function of the seed") {
  const Corpus a = generate_dataset(13, 200, 40, 40);
  const Corpus b = generate_dataset(13, 200, 40, 40);
  REQUIRE(a.examples.size() == b.examples.size());
  for (std::size_t i = 0; i < a.examples.size(); ++i) {
    CHECK(a.examples[i].caption == b.examples[i].caption);
    CHECK(a.examples[i].split == b.examples[i].split);
    CHECK(a.examples[i].scene == b.examples[i].scene);
  }
}

TEST_CASE("splits are disjoint by scene identity at full size") {
  const Corpus corpus = generate_dataset(13, 8192, 512, 512);
  std::set<std::string> train, val, test;
  for (const auto& e : corpus.examples) {
    if (e.split == "train") train.insert(e.caption);
    else if (e.split == "val") val.insert(e.caption);
    else test.insert(e.caption);
  }
  CHECK(corpus.split("train").size() == 8192);
  CHECK(corpus.split("val").size() == 512);
  CHECK(corpus.split("test").size() == 512);
  for (const auto& c : val) CHECK(train.count(c) == 0);
  for (const auto& c : test) {
    CHECK(train.count(c) == 0);
    CHECK(val.count(c) == 0);
  }
}

TEST_CASE("caption lengths span the PAD-exercising range") {
  const Corpus corpus = generate_dataset(21, 2000, 100, 100);
  int lo = 1000, hi = 0;
  for (const auto& e : corpus.examples) {
    const int len = int(split_words(e.caption).size());
    CHECK(len >= 5);
    CHECK(len <= 18);
    lo = std::min(lo, len);
    hi = std::max(hi, len);
  }
  CHECK(lo <= 6);
  CHECK(hi >= 17);
}

TEST_CASE("jsonl round-trips the corpus bitwise") {
  const Corpus corpus = generate_dataset(5, 50, 10, 10);
  const auto path = std::filesystem::temp_directory_path() / "ladx_corpus_test.jsonl";
  save_jsonl(corpus, path.string());
  const Corpus loaded = load_jsonl(path.string());
  save_jsonl(loaded, (path.string() + ".2"));

  std::ifstream f1(path), f2(path.string() + ".2");
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
  REQUIRE(loaded.examples.size() == corpus.examples.size());
  for (std::size_t i = 0; i < corpus.examples.size(); ++i)
    CHECK(loaded.examples[i].scene == corpus.examples[i].scene);
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".2");
}
