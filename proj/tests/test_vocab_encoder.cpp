#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "guard/common.hpp"
#include "guard/encoder.hpp"
#include "guard/vocab.hpp"

using namespace guard;

namespace {

Vocabulary tiny_vocab(std::size_t max_seq = 512) {
  return Vocabulary({"[PAD]", "[UNK]", "[CLS]", "hello", "world", "a", "b", "!", "h", "e", "l",
                     "o", "x"},
                    max_seq);
}

std::string temp_path(const char* stem) {
  return std::string("/tmp/guard_enc_") + stem + "_" + std::to_string(::getpid());
}

}  // namespace

TEST_CASE("vocabulary basics") {
  const auto vocab = tiny_vocab();
  CHECK(vocab.size() == 13);
  CHECK(vocab.pad_id() == 0);
  CHECK(vocab.unk_id() == 1);
  CHECK(vocab.cls_id() == 2);
  CHECK(vocab.id_of("hello") == 3);
  CHECK(vocab.id_of("nonexistent") == vocab.unk_id());
  CHECK(vocab.contains("world"));
  CHECK_FALSE(vocab.contains("missing"));
}

TEST_CASE("vocabulary invariants enforced") {
  CHECK_THROWS_AS(Vocabulary({"[PAD]", "[UNK]"}, 512), ConfigError);       // [CLS] missing
  CHECK_THROWS_AS(Vocabulary({"[PAD]", "[UNK]", "[CLS]", "a", "a"}, 512),  // duplicate
                  ConfigError);
  CHECK_THROWS_AS(Vocabulary({"[PAD]", "[UNK]", "[CLS]"}, 1), ConfigError);  // max_seq < 2
}

TEST_CASE("split_pieces lowercases and separates punctuation") {
  CHECK(split_pieces("Hello, World!") ==
        std::vector<std::string>{"hello", ",", "world", "!"});
  CHECK(split_pieces("it's fine") == std::vector<std::string>{"it's", "fine"});
  CHECK(split_pieces("  spaced   out  ") == std::vector<std::string>{"spaced", "out"});
  CHECK(split_pieces("") == std::vector<std::string>{});
  CHECK(split_pieces("a2b c") == std::vector<std::string>{"a2b", "c"});
}

TEST_CASE("tokenize examples") {
  const auto vocab = tiny_vocab();

  SUBCASE("empty text is just CLS") {
    CHECK(tokenize("", vocab) == std::vector<std::size_t>{vocab.cls_id()});
  }
  SUBCASE("lowercasing maps Hello and hello to one id") {
    const auto ids = tokenize("Hello hello", vocab);
    REQUIRE(ids.size() == 3);
    CHECK(ids[1] == ids[2]);
    CHECK(ids[1] == vocab.id_of("hello"));
  }
  SUBCASE("known words become word ids") {
    CHECK(tokenize("hello world", vocab) ==
          std::vector<std::size_t>{vocab.cls_id(), vocab.id_of("hello"), vocab.id_of("world")});
  }
  SUBCASE("missing word falls back to characters") {
    // "hex" is absent; h/e/x are present as characters.
    CHECK(tokenize("hex", vocab) == std::vector<std::size_t>{vocab.cls_id(), vocab.id_of("h"),
                                                             vocab.id_of("e"), vocab.id_of("x")});
  }
  SUBCASE("unknown character becomes UNK") {
    // "hz" missing; 'z' not in the vocabulary.
    CHECK(tokenize("hz", vocab) ==
          std::vector<std::size_t>{vocab.cls_id(), vocab.id_of("h"), vocab.unk_id()});
  }
  SUBCASE("600 tokens truncate to the limit") {
    std::string text;
    for (int i = 0; i < 600; ++i) text += "a ";
    CHECK(tokenize(text, vocab).size() == 512);
  }
  SUBCASE("short limit truncates") {
    const auto small = tiny_vocab(4);
    CHECK(tokenize("a b a b a b", small).size() == 4);
  }
}

TEST_CASE("vocabulary build selects specials, characters, then words") {
  // Word frequencies: red 4, blue 2, green 1, zap 1. Eleven distinct
  // characters across multi-character pieces.
  const std::vector<std::string> texts = {"red red red blue", "blue red green", "zap"};

  const auto tight = Vocabulary::build(texts, 12, 64);
  CHECK(tight.size() == 12);
  CHECK(tight.contains("[PAD]"));
  CHECK(tight.contains("[UNK]"));
  CHECK(tight.contains("[CLS]"));
  // Characters fill the budget before any word does.
  for (const char c : std::string("erdblu")) {
    CHECK(tight.contains(std::string(1, c)));
  }
  CHECK_FALSE(tight.contains("red"));

  const auto medium = Vocabulary::build(texts, 16, 64);
  for (const char c : std::string("redblugnzap")) {
    CHECK(medium.contains(std::string(1, c)));
  }
  CHECK(medium.contains("red"));
  CHECK(medium.contains("blue"));
  CHECK_FALSE(medium.contains("green"));
  CHECK(medium.id_of("red") < medium.id_of("blue"));

  const auto big = Vocabulary::build(texts, 20, 64);
  CHECK(big.contains("green"));
  CHECK(big.contains("zap"));
  CHECK(big.size() == 18);  // specials + 11 chars + 4 words, nothing else
}

TEST_CASE("vocabulary save/load round trip") {
  const auto vocab = tiny_vocab(77);
  const std::string path = temp_path("vocab");
  vocab.save(path);
  const auto loaded = Vocabulary::load(path, 77);
  CHECK(loaded.tokens() == vocab.tokens());
  CHECK(loaded.max_sequence_length() == 77);
  CHECK(loaded.id_of("hello") == vocab.id_of("hello"));
  std::remove(path.c_str());
}

TEST_CASE("pool arithmetic examples") {
  Encoder::Matrix rows(2, 2);
  rows << 1, 3, 3, 1;
  const auto mean = pool<float>(rows, Pooling::kMean);
  CHECK(mean(0) == doctest::Approx(2.0));
  CHECK(mean(1) == doctest::Approx(2.0));
  const auto mx = pool<float>(rows, Pooling::kMax);
  CHECK(mx(0) == doctest::Approx(3.0));
  CHECK(mx(1) == doctest::Approx(3.0));
  const auto cls = pool<float>(rows, Pooling::kCls);
  CHECK(cls(0) == doctest::Approx(1.0));
  CHECK(cls(1) == doctest::Approx(3.0));

  Encoder::Matrix empty(0, 2);
  CHECK_THROWS_AS(pool<float>(empty, Pooling::kMean), InputError);
}

TEST_CASE("pool MEAN/MAX are permutation invariant, CLS is not") {
  Encoder::Matrix rows(3, 2);
  rows << 1, 2, 5, 0, 2, 9;
  Encoder::Matrix swapped = rows;
  swapped.row(0).swap(swapped.row(2));
  CHECK(pool<float>(rows, Pooling::kMean) == pool<float>(swapped, Pooling::kMean));
  CHECK(pool<float>(rows, Pooling::kMax) == pool<float>(swapped, Pooling::kMax));
  CHECK(pool<float>(rows, Pooling::kCls) != pool<float>(swapped, Pooling::kCls));
}

TEST_CASE("encoder config invariants") {
  EncoderConfig base;
  base.vocab_size = 13;  // validate() runs after the vocabulary is bound

  auto config = base;
  config.hidden_dim = 10;
  config.heads = 4;  // not divisible
  CHECK_THROWS_AS(config.validate(), ConfigError);

  config = base;
  config.add_feedforward = false;
  config.output_dim = 64;  // must equal hidden_dim without the projection
  CHECK_THROWS_AS(config.validate(), ConfigError);

  config = base;
  config.layers = 0;
  CHECK_THROWS_AS(config.validate(), ConfigError);

  CHECK_NOTHROW(base.validate());
  CHECK_THROWS_AS(EncoderConfig{}.validate(), ConfigError);  // unbound vocabulary
}

TEST_CASE("encoder config json round trip") {
  EncoderConfig config;
  config.layers = 3;
  config.heads = 2;
  config.hidden_dim = 64;
  config.output_dim = 32;
  config.pooling = Pooling::kMax;
  config.add_normalization = false;
  config.seed = 99;
  const auto restored = EncoderConfig::from_json(config.to_json());
  CHECK(restored.layers == 3);
  CHECK(restored.heads == 2);
  CHECK(restored.hidden_dim == 64);
  CHECK(restored.output_dim == 32);
  CHECK(restored.pooling == Pooling::kMax);
  CHECK_FALSE(restored.add_normalization);
  CHECK(restored.seed == 99);
}

namespace {

EncoderConfig small_config() {
  EncoderConfig config;
  config.layers = 1;
  config.heads = 2;
  config.hidden_dim = 16;
  config.output_dim = 16;
  config.seed = 5;
  return config;
}

}  // namespace

TEST_CASE("embed_tokens shape and determinism") {
  const auto vocab = tiny_vocab();
  const Encoder encoder(small_config(), vocab);

  Encoder::Trace trace;
  const auto cls_only = encoder.embed_tokens({vocab.cls_id()}, &trace);
  CHECK(cls_only.size() == 16);
  CHECK(trace.layers.front().n1.rows() == 1);
  CHECK(trace.layers.front().n1.cols() == 16);

  const auto again = encoder.embed_tokens({vocab.cls_id()});
  CHECK(cls_only == again);

  CHECK_THROWS_AS(encoder.embed_tokens({}), InputError);
  CHECK_THROWS_AS(encoder.embed_tokens({vocab.size() + 3}), InputError);

  std::vector<std::size_t> too_long(600, vocab.id_of("a"));
  CHECK_THROWS_AS(encoder.embed_tokens(too_long), InputError);
}

TEST_CASE("positional embeddings make token order matter") {
  const auto vocab = tiny_vocab();
  const Encoder encoder(small_config(), vocab);
  const auto ab = encoder.embed_tokens({vocab.cls_id(), vocab.id_of("a"), vocab.id_of("b")});
  const auto ba = encoder.embed_tokens({vocab.cls_id(), vocab.id_of("b"), vocab.id_of("a")});
  CHECK((ab - ba).norm() > 1e-6f);
}

TEST_CASE("normalization contract") {
  const auto vocab = tiny_vocab();
  auto config = small_config();

  config.add_normalization = true;
  const Encoder normed(config, vocab);
  CHECK(std::abs(normed.embed_text("hello world a b").norm() - 1.0f) < 1e-6f);

  config.add_normalization = false;
  const Encoder raw(config, vocab);
  CHECK(std::abs(raw.embed_text("hello world a b").norm() - 1.0f) > 1e-6f);
}

TEST_CASE("feedforward controls output width") {
  const auto vocab = tiny_vocab();
  auto config = small_config();
  config.add_feedforward = false;
  config.output_dim = config.hidden_dim;
  const Encoder encoder(config, vocab);
  CHECK(encoder.embed_text("hello").size() ==
        static_cast<Eigen::Index>(encoder.config().hidden_dim));
}

TEST_CASE("output width follows output_dim across the ablation grid") {
  const auto vocab = tiny_vocab();
  for (const std::size_t dim : {256u, 512u, 768u, 1024u, 1536u}) {
    auto config = small_config();
    config.output_dim = dim;
    const Encoder encoder(config, vocab);
    CHECK(encoder.embed_text("hello world").size() == static_cast<Eigen::Index>(dim));
  }
}

TEST_CASE("pooling modes differ on real inputs") {
  const auto vocab = tiny_vocab();
  std::set<float> firsts;
  for (const Pooling pooling : {Pooling::kCls, Pooling::kMean, Pooling::kMax}) {
    auto config = small_config();
    config.pooling = pooling;
    const Encoder encoder(config, vocab);
    firsts.insert(encoder.embed_text("hello world a b !")(0));
  }
  CHECK(firsts.size() == 3);
}

TEST_CASE("truncation makes long texts equal their prefix") {
  const auto vocab = tiny_vocab(6);
  const Encoder encoder(small_config(), vocab);
  const auto prefix = encoder.embed_text("hello world a b !");
  const auto longer = encoder.embed_text("hello world a b ! x x x hello");
  CHECK(prefix == longer);
}

TEST_CASE("identical seeds build identical encoders, different seeds differ") {
  const auto vocab = tiny_vocab();
  const Encoder a(small_config(), vocab);
  const Encoder b(small_config(), vocab);
  CHECK(a.embed_text("hello world") == b.embed_text("hello world"));

  auto other = small_config();
  other.seed = 6;
  const Encoder c(other, vocab);
  CHECK(a.embed_text("hello world") != c.embed_text("hello world"));
}

TEST_CASE("checkpoint round trip is bit-exact") {
  const auto vocab = tiny_vocab();
  auto config = small_config();
  config.layers = 2;
  config.pooling = Pooling::kMax;
  const Encoder encoder(config, vocab);
  const std::string path = temp_path("ckpt");
  encoder.save(path);
  const Encoder loaded = Encoder::load(path);

  for (const auto* text : {"hello world", "a b ! x", "", "hex hz"}) {
    const auto before = encoder.embed_text(text);
    const auto after = loaded.embed_text(text);
    REQUIRE(before.size() == after.size());
    for (Eigen::Index i = 0; i < before.size(); ++i) {
      CHECK(before(i) == after(i));  // exact float equality
    }
  }
  CHECK(loaded.config().pooling == Pooling::kMax);
  CHECK(loaded.vocabulary().tokens() == vocab.tokens());
  std::remove(path.c_str());
}

TEST_CASE("parameter count matches the architecture") {
  const auto vocab = tiny_vocab();
  auto config = small_config();
  Encoder encoder(config, vocab);
  const std::size_t V = vocab.size(), S = vocab.max_sequence_length();
  const std::size_t H = config.hidden_dim, F = config.ffn_dim(), O = config.output_dim;
  // embeddings + per layer (2 LN + 4 attn mats/biases + ffn) + final LN + proj
  const std::size_t per_layer = 2 * (2 * H) + 4 * (H * H + H) + (H * F + F + F * H + H);
  const std::size_t expected =
      V * H + S * H + config.layers * per_layer + 2 * H + (H * O + O);
  CHECK(encoder.parameter_count() == expected);

  std::size_t from_views = 0;
  for (const auto& view : encoder.parameter_views()) {
    from_views += static_cast<std::size_t>(view.size);
  }
  CHECK(from_views == expected);
}

TEST_CASE("encoder load rejects other tensor-file kinds") {
  const std::string path = temp_path("notenc");
  {
    std::ofstream out(path, std::ios::binary);
    out << "GRD1";  // magic only; header truncated
  }
  CHECK_THROWS(Encoder::load(path));
  std::remove(path.c_str());
}
