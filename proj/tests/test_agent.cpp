#include <doctest.h>

#include <sstream>

#include "voxa/agent.hpp"
#include "voxa/losses.hpp"

using namespace voxa;

namespace {

std::vector<std::string> sample_corpus() {
    return {
        "Segment the hippocampus.",
        "e = encode(v1, <MOD>)",
        "m = segment(e, <MOD>)",
        "read(e)",
        "respond(\"the volume is {0} mm3\", n)",
        "stop()",
        "vol v1: modality=t1, date=0",
    };
}

struct AgentFixture {
    Vocabulary vocab;
    ParamStore<float> store;
    AgentWeights weights;

    AgentFixture() {
        vocab = build_vocab(sample_corpus());
        AgentConfig cfg = AgentConfig::desk();
        cfg.vocab = vocab.size();
        cfg.max_seq = 256;
        cfg.step_cap = 24;
        std::mt19937_64 rng(42);
        weights = make_agent_weights(store, cfg, rng);
    }
};

}  // namespace

TEST_CASE("build_vocab is deterministic and dense") {
    auto a = build_vocab(sample_corpus());
    auto b = build_vocab(sample_corpus());
    REQUIRE(a.size() == b.size());
    for (int i = 0; i < a.size(); ++i) CHECK(a.token(i) == b.token(i));
    CHECK(a.id_of("<PAD>") == Vocabulary::kPad);
    CHECK(a.id_of("<MOD>") == Vocabulary::kMod);
    CHECK(a.id_of("segment") > 3);
}

TEST_CASE("detokenize(tokenize(s)) round-trips every corpus line") {
    auto vocab = build_vocab(sample_corpus());
    for (const auto& line : sample_corpus()) {
        auto ids = vocab.tokenize(line, true);
        CHECK(vocab.detokenize(ids) == line);
    }
}

TEST_CASE("unseen words fall back to characters") {
    auto vocab = build_vocab(sample_corpus());
    const std::string s = "cerebellum";
    auto ids = vocab.tokenize(s);
    CHECK(ids.size() == s.size());  // decomposed, one char each
    CHECK(vocab.detokenize(ids) == s);
}

TEST_CASE("program text tokenization maps <MOD> to the special id") {
    auto vocab = build_vocab(sample_corpus());
    auto ids = vocab.tokenize("e = encode(v1, <MOD>)", true);
    int mods = 0;
    for (int id : ids) mods += id == Vocabulary::kMod ? 1 : 0;
    CHECK(mods == 1);
    // plain text scanning never yields the special
    auto plain = vocab.tokenize("e = encode(v1, <MOD>)", false);
    for (int id : plain) CHECK(id != Vocabulary::kMod);
}

TEST_CASE("vocabulary serialization round-trips including whitespace tokens") {
    auto vocab = build_vocab(sample_corpus());
    std::stringstream ss;
    vocab.save(ss);
    auto loaded = Vocabulary::load(ss);
    REQUIRE(loaded.size() == vocab.size());
    for (int i = 0; i < vocab.size(); ++i) CHECK(loaded.token(i) == vocab.token(i));
}

TEST_CASE("initial_state length is 1 + prompt tokens when metadata is empty") {
    AgentFixture fx;
    const std::string prompt = "Segment the hippocampus.";
    auto mu = initial_state(prompt, {}, fx.vocab, fx.weights);
    CHECK(mu.length() == 1 + int(fx.vocab.tokenize(prompt).size()));
    CHECK(mu.tags[0] == Provenance::Prompt);
}

TEST_CASE("initial_state serializes metadata lines in input order") {
    AgentFixture fx;
    auto mu1 = initial_state("Segment.", {{"v1", "t1", "0"}}, fx.vocab, fx.weights);
    auto mu2 = initial_state("Segment.", {{"v1", "t1", "0"}, {"v2", "t2", "1"}}, fx.vocab,
                             fx.weights);
    CHECK(mu2.length() > mu1.length());
    int meta = 0;
    for (auto t : mu2.tags) meta += t == Provenance::Metadata ? 1 : 0;
    const auto l1 = fx.vocab.tokenize(metadata_line({"v1", "t1", "0"}));
    const auto l2 = fx.vocab.tokenize(metadata_line({"v2", "t2", "1"}));
    CHECK(meta == int(l1.size() + l2.size()));
}

TEST_CASE("initial_state is deterministic") {
    AgentFixture fx;
    auto a = initial_state("Segment the hippocampus.", {{"v1", "t1", "0"}}, fx.vocab, fx.weights);
    auto b = initial_state("Segment the hippocampus.", {{"v1", "t1", "0"}}, fx.vocab, fx.weights);
    CHECK(a.emb.v == b.emb.v);
}

TEST_CASE("decode_step is bit-identical on repeat and respects the cap") {
    AgentFixture fx;
    auto mu = initial_state("Segment the hippocampus.", {{"v1", "t1", "0"}}, fx.vocab, fx.weights);
    auto r1 = decode_step(mu, fx.weights, fx.vocab);
    auto r2 = decode_step(mu, fx.weights, fx.vocab);
    CHECK(r1.tokens == r2.tokens);
    CHECK(r1.code_text == r2.code_text);
    REQUIRE(r1.phis.size() == r2.phis.size());
    for (std::size_t i = 0; i < r1.phis.size(); ++i)
        CHECK(r1.phis[i].val().v == r2.phis[i].val().v);
    CHECK(int(r1.tokens.size()) <= fx.weights.cfg.step_cap);
}

TEST_CASE("phi vector count equals MOD token count") {
    AgentFixture fx;
    auto mu = initial_state("Segment the hippocampus.", {{"v1", "t1", "0"}}, fx.vocab, fx.weights);
    auto res = decode_step(mu, fx.weights, fx.vocab);
    int mods = 0;
    for (int id : res.tokens) mods += id == Vocabulary::kMod ? 1 : 0;
    CHECK(int(res.phis.size()) == mods);
    for (const auto& p : res.phis)
        CHECK(p.shape() == std::vector<int>{fx.weights.cfg.phi_dim});
}

TEST_CASE("append_feedback concatenates and preserves the prefix bit-exactly") {
    AgentFixture fx;
    auto mu = initial_state("Segment.", {}, fx.vocab, fx.weights);
    const int d = fx.weights.cfg.width;
    NdArray<float> eta({3, d}, 0.25f);
    NdArray<float> z({2, d}, -0.5f);
    auto mu2 = append_feedback(mu, eta, z, fx.weights.cfg.max_seq);
    CHECK(mu2.length() == mu.length() + 3 + 2);
    for (std::size_t i = 0; i < mu.emb.v.size(); ++i) CHECK(mu2.emb.v[i] == mu.emb.v[i]);
    CHECK(mu2.tags[std::size_t(mu.length())] == Provenance::Instruction);
    CHECK(mu2.tags.back() == Provenance::Feedback);

    auto mu3 = append_feedback(mu, eta, NdArray<float>(), fx.weights.cfg.max_seq);
    CHECK(mu3.length() == mu.length() + 3);
}

TEST_CASE("append_feedback rejects growth past the cap") {
    AgentFixture fx;
    auto mu = initial_state("Segment.", {}, fx.vocab, fx.weights);
    NdArray<float> eta({300, fx.weights.cfg.width}, 0.f);
    CHECK_THROWS_AS(append_feedback(mu, eta, NdArray<float>(), 256), StateOverflowError);
}

TEST_CASE("agent hidden states depend on position") {
    AgentFixture fx;
    const int d = fx.weights.cfg.width;
    NdArray<float> e({2, d});
    for (int i = 0; i < d; ++i) {
        e.v[std::size_t(i)] = 0.1f;
        e.v[std::size_t(d + i)] = 0.1f;  // identical token embeddings
    }
    auto h = agent_hidden(Tensor<float>(e), fx.weights, nullptr);
    double diff = 0;
    for (int i = 0; i < d; ++i)
        diff += std::abs(h.val().v[std::size_t(i)] - h.val().v[std::size_t(d + i)]);
    CHECK(diff > 1e-4);  // learned positions separate equal inputs
}

TEST_CASE("token embeddings and phi head receive gradient") {
    AgentFixture fx;
    Tape<float> tape;
    const int d = fx.weights.cfg.width;

    std::vector<int> ids{Vocabulary::kBos, 10, 12, Vocabulary::kMod, Vocabulary::kPad};
    auto emb = embedding_lookup(tape.param(*fx.weights.tok_emb), ids);
    auto hidden = agent_hidden(emb, fx.weights, &tape);
    auto logits = agent_logits(hidden, fx.weights, &tape);
    auto phi = agent_phi(take_rows(hidden, {4}), fx.weights, &tape);

    auto ce = cross_entropy(logits, {10, 12, Vocabulary::kMod, Vocabulary::kPad, Vocabulary::kEosStep},
                            {1, 1, 1, 0, 1});
    auto probe = add(ce, sum_all(mul(phi, phi)));
    tape.backward(probe);

    double emb_g = 0, phi_g = 0;
    for (float v : fx.weights.tok_emb->grad.v) emb_g += std::abs(v);
    for (float v : fx.weights.phi_w->grad.v) phi_g += std::abs(v);
    CHECK(emb_g > 1e-6);
    CHECK(phi_g > 1e-6);
    (void)d;
}
