#include <doctest.h>

#include "voxa/runtime.hpp"

using namespace voxa;

// --- parser ------------------------------------------------------------

TEST_CASE("parse assignment with a mod slot") {
    auto p = parse("e = encode(v1, <MOD>)");
    REQUIRE(p.stmts.size() == 1);
    const auto& s = p.stmts[0];
    CHECK(s.target == "e");
    CHECK(s.func == "encode");
    REQUIRE(s.args.size() == 2);
    CHECK(s.args[0].kind == Arg::Kind::Var);
    CHECK(s.args[0].text == "v1");
    CHECK(s.args[1].kind == Arg::Kind::Mod);
    CHECK(s.args[1].mod_ordinal == 0);
    CHECK(p.mod_count == 1);
}

TEST_CASE("parse bare call without assignment") {
    auto p = parse("read(e)");
    REQUIRE(p.stmts.size() == 1);
    CHECK(p.stmts[0].target.empty());
    CHECK(p.stmts[0].func == "read");
}

TEST_CASE("parse reports the unclosed parenthesis") {
    try {
        parse("x = volume_of(m");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line == 1);
        CHECK(std::string(e.what()).find("unclosed") != std::string::npos);
    }
}

TEST_CASE("parse multi-statement program with strings and numbers") {
    auto p = parse("a = volume_of(m1)\nb = volume_of(m2)\ng = sub(b, a)\n"
                   "respond(\"growth is {0} mm3\", g)");
    REQUIRE(p.stmts.size() == 4);
    CHECK(p.stmts[3].args[0].kind == Arg::Kind::Str);
    CHECK(p.stmts[3].args[0].text == "growth is {0} mm3");
    CHECK(p.mod_count == 0);

    auto q = parse("crop_to(v1, m, 2.5)");
    CHECK(q.stmts[0].args[2].kind == Arg::Kind::Number);
    CHECK(q.stmts[0].args[2].number == 2.5);
}

TEST_CASE("parse mod ordinals are textual order") {
    auto p = parse("e = encode(v1, <MOD>, v2, <MOD>)\nm = segment(e, <MOD>)");
    CHECK(p.mod_count == 3);
    CHECK(p.stmts[0].args[1].mod_ordinal == 0);
    CHECK(p.stmts[0].args[3].mod_ordinal == 1);
    CHECK(p.stmts[1].args[1].mod_ordinal == 2);
}

TEST_CASE("parse rejects stray characters with position info") {
    CHECK_THROWS_AS(parse("x = Foo(1)"), ParseError);  // uppercase identifier
    CHECK_THROWS_AS(parse("x = f(@)"), ParseError);
    CHECK_THROWS_AS(parse("= f(1)"), ParseError);
}

// --- env and executor ----------------------------------------------------

namespace {

VolumePtr cube_volume(float fill = 0.5f) {
    auto g = std::make_shared<VoxelGrid>(std::array<int, 3>{6, 6, 6}, Mat4::identity(), fill);
    return g;
}

MaskVal cube_mask(int lo, int hi) {
    MaskVal mv;
    mv.mask = std::make_shared<BinaryMask>(std::array<int, 3>{6, 6, 6}, Mat4::identity());
    for (int i = lo; i < hi; ++i)
        for (int j = lo; j < hi; ++j)
            for (int k = lo; k < hi; ++k) mv.mask->at(i, j, k) = 1;
    return mv;
}

Vocabulary tiny_vocab() {
    return build_vocab({"e = encode(v1, <MOD>)", "read(e)", "stop()",
                        "respond(\"growth is {0} mm3\", g)", "the lesion grew"});
}

}  // namespace

TEST_CASE("env keeps insertion order and rebinding replaces") {
    Env env;
    env.set("a", NumberVal{1, ""});
    env.set("b", NumberVal{2, ""});
    env.set("a", NumberVal{3, ""});
    CHECK(env.names() == std::vector<std::string>{"a", "b"});
    CHECK(std::get<NumberVal>(env.get("a")).value == 3);
    CHECK_THROWS_AS(env.get("zz"), DomainError);
}

TEST_CASE("phi count mismatch fails the step and leaves the env unchanged") {
    Env env;
    env.set("v1", cube_volume());
    Executor exec(env, nullptr, nullptr, 64);
    auto prog = parse("e = encode(v1, <MOD>)");
    auto out = exec.run(prog, {});
    CHECK_FALSE(out.ok);
    CHECK(out.error.find("phi count mismatch") != std::string::npos);
    CHECK_FALSE(env.has("e"));
}

TEST_CASE("volume_of reports mm3 through the mask geometry") {
    Env env;
    env.set("m", cube_mask(0, 5));  // 125 voxels at 1mm iso
    Executor exec(env, nullptr, nullptr, 64);
    auto out = exec.run(parse("n = volume_of(m)"), {});
    REQUIRE(out.ok);
    const auto& n = std::get<NumberVal>(env.get("n"));
    CHECK(n.value == doctest::Approx(125.0));
    CHECK(n.unit == "mm3");
}

TEST_CASE("executor arithmetic, respond formatting and unit rules") {
    Env env;
    env.set("a", NumberVal{150.0, "mm3"});
    env.set("b", NumberVal{100.0, "mm3"});
    Executor exec(env, nullptr, nullptr, 64);
    auto out = exec.run(parse("g = sub(a, b)\nrespond(\"growth is {0} mm3\", g)"), {});
    REQUIRE(out.ok);
    CHECK(out.completed);
    CHECK(out.answer == "growth is 50.0 mm3");
    CHECK(std::get<NumberVal>(env.get("g")).unit == "mm3");

    auto out2 = exec.run(parse("r = div(a, b)"), {});
    REQUIRE(out2.ok);
    CHECK(std::get<NumberVal>(env.get("r")).unit == "");
    CHECK(std::get<NumberVal>(env.get("r")).value == doctest::Approx(1.5));
}

TEST_CASE("runtime errors become error outcomes with bindings kept") {
    Env env;
    env.set("v1", cube_volume());
    Executor exec(env, nullptr, nullptr, 64);

    auto out = exec.run(parse("n = volume_of(v1)"), {});
    CHECK_FALSE(out.ok);
    CHECK(out.error.find("expected a mask") != std::string::npos);

    auto out2 = exec.run(parse("read(nope)"), {});
    CHECK_FALSE(out2.ok);
    CHECK(out2.error.find("undefined variable") != std::string::npos);

    auto out3 = exec.run(parse("frobnicate(v1)"), {});
    CHECK_FALSE(out3.ok);
    CHECK(out3.error.find("unknown function") != std::string::npos);

    auto out4 = exec.run(parse("a = add(1, 2)\nb = div(a, 0)"), {});
    CHECK_FALSE(out4.ok);
    CHECK(env.has("a"));  // earlier statements of the step persist
}

TEST_CASE("mask_apply / mask_remove / crop_to operate through voxelcore") {
    Env env;
    env.set("v1", cube_volume(1.f));
    env.set("m", cube_mask(2, 4));
    Executor exec(env, nullptr, nullptr, 64);
    auto out = exec.run(parse("a = mask_apply(v1, m)\nb = mask_remove(v1, m)\n"
                              "c = crop_to(v1, m, 1)"),
                        {});
    REQUIRE(out.ok);
    const auto& a = std::get<VolumePtr>(env.get("a"));
    const auto& b = std::get<VolumePtr>(env.get("b"));
    const auto& c = std::get<VolumePtr>(env.get("c"));
    CHECK(a->at(2, 2, 2) == 1.f);
    CHECK(a->at(0, 0, 0) == 0.f);
    CHECK(b->at(2, 2, 2) == 0.f);
    CHECK(b->at(0, 0, 0) == 1.f);
    CHECK(c->shape == std::array<int, 3>{4, 4, 4});  // 2 voxels + 1mm margin per side
}

TEST_CASE("oracle mode: segment substitutes oracle masks in order") {
    Env env;
    env.set("v1", cube_volume());
    Executor exec(env, nullptr, nullptr, 64);
    auto m1 = cube_mask(0, 2), m2 = cube_mask(3, 6);
    exec.provide_oracle_masks({*m1.mask, *m2.mask}, true);

    auto out = exec.run(parse("e = encode(v1, <MOD>)\nma = segment(e, <MOD>)\n"
                              "mb = segment(e, <MOD>)\nna = volume_of(ma)\nnb = volume_of(mb)"),
                        {Tensor<float>(NdArray<float>({8}, 0.f)),
                         Tensor<float>(NdArray<float>({8}, 0.f)),
                         Tensor<float>(NdArray<float>({8}, 0.f))});
    REQUIRE(out.ok);
    CHECK(std::get<NumberVal>(env.get("na")).value == doctest::Approx(8.0));
    CHECK(std::get<NumberVal>(env.get("nb")).value == doctest::Approx(27.0));
    REQUIRE(out.produced_masks.size() == 2);
    CHECK(out.produced_masks[0].first == "ma");

    auto out2 = exec.run(parse("mc = segment(e, <MOD>)"),
                         {Tensor<float>(NdArray<float>({8}, 0.f))});
    CHECK_FALSE(out2.ok);  // oracle masks exhausted
}

TEST_CASE("read on encodings passes pooled vectors through; numbers embed as text") {
    Env env;
    env.set("v1", cube_volume());
    env.set("n", NumberVal{12.5, "mm3"});
    Executor exec(env, nullptr, nullptr, 32);
    exec.provide_oracle_masks({}, true);
    auto out = exec.run(parse("e = encode(v1, <MOD>)\nread(e)\nread(n)"),
                        {Tensor<float>(NdArray<float>({8}, 0.f))});
    REQUIRE(out.ok);
    REQUIRE(out.feedback.size() == 2);
    CHECK(out.feedback[0].is_encoding);
    REQUIRE(out.feedback[0].vectors.size() == 1);
    CHECK(out.feedback[0].vectors[0].shape() == std::vector<int>{32});
    CHECK(out.feedback[1].rendering == "n = 12.5 mm3");

    auto vocab = tiny_vocab();
    auto block = embed_feedback(out.feedback, vocab, nullptr, nullptr, 32);
    const auto ntok = vocab.tokenize("n = 12.5 mm3").size();
    CHECK(block.vectors.size() == 1 + ntok);
    for (const auto& v : block.vectors) CHECK(v.shape() == std::vector<int>{32});
}

TEST_CASE("two reads in one step concatenate in statement order") {
    Env env;
    env.set("x", NumberVal{1.0, ""});
    env.set("y", NumberVal{2.0, ""});
    Executor exec(env, nullptr, nullptr, 16);
    auto out = exec.run(parse("read(x)\nread(y)"), {});
    REQUIRE(out.feedback.size() == 2);
    CHECK(out.feedback[0].rendering == "x = 1.0");
    CHECK(out.feedback[1].rendering == "y = 2.0");
}

// --- agent loop with the scripted oracle ---------------------------------

TEST_CASE("oracle agent reproduces a longitudinal growth answer") {
    // two timepoint volumes; oracle masks of 100 and 150 voxels at 1mm iso
    VoxelGrid v1({8, 8, 8}, Mat4::identity(), 0.4f);
    VoxelGrid v2({8, 8, 8}, Mat4::identity(), 0.6f);
    BinaryMask w1(v1.shape, v1.affine), w2(v2.shape, v2.affine);
    int placed = 0;
    for (int i = 0; i < 8 && placed < 100; ++i)
        for (int j = 0; j < 8 && placed < 100; ++j)
            for (int k = 0; k < 8 && placed < 100; ++k) w1.at(i, j, k) = 1, ++placed;
    placed = 0;
    for (int i = 0; i < 8 && placed < 150; ++i)
        for (int j = 0; j < 8 && placed < 150; ++j)
            for (int k = 0; k < 8 && placed < 150; ++k) w2.at(i, j, k) = 1, ++placed;

    std::vector<std::string> steps = {
        "e = encode(v1, <MOD>, v2, <MOD>)\nread(e)",
        "m1 = segment(e, <MOD>)\nm2 = segment(e, <MOD>)",
        "a = volume_of(m1)\nb = volume_of(m2)\ng = sub(b, a)\nread(g)",
        "respond(\"the lesion grew by {0} mm3\", g)",
    };
    auto vocab = build_vocab(steps);
    ScriptedAgent agent(steps, vocab, nullptr, 64);
    LoopOptions opts;
    opts.oracle_masks = {w1, w2};
    opts.substitute_masks = true;
    auto t = agent_loop("How much did the lesion grow?", {v1, v2},
                        {{"v1", "t1", "0"}, {"v2", "t1", "1"}}, agent, nullptr, vocab, opts);

    CHECK(t.complete);
    CHECK(t.answer == "the lesion grew by 50.0 mm3");
    CHECK(t.masks.size() == 2);
    REQUIRE(t.steps.size() == 4);
    for (const auto& s : t.steps) {
        CHECK(s.ok);
        CHECK(s.mu_after == s.mu_before + s.eta_len + s.z_len);
    }
}

TEST_CASE("a failing step feeds back as error text and the loop continues") {
    VoxelGrid v1({6, 6, 6}, Mat4::identity(), 0.5f);
    std::vector<std::string> steps = {
        "read(unbound_name)",
        "stop()",
    };
    auto vocab = build_vocab(steps);
    ScriptedAgent agent(steps, vocab, nullptr, 64);
    LoopOptions opts;
    opts.substitute_masks = true;
    auto t = agent_loop("Test error handling.", {v1}, {{"v1", "t1", "0"}}, agent, nullptr,
                        vocab, opts);
    REQUIRE(t.steps.size() == 2);
    CHECK_FALSE(t.steps[0].ok);
    CHECK(t.steps[0].feedback_rendering.find("error:") != std::string::npos);
    CHECK(t.steps[0].z_len > 0);
    CHECK(t.complete);
}

TEST_CASE("max_steps exhaustion leaves the transcript incomplete") {
    VoxelGrid v1({6, 6, 6}, Mat4::identity(), 0.5f);
    std::vector<std::string> steps(20, "read(v1)");
    auto vocab = build_vocab({"read(v1)"});
    ScriptedAgent agent(steps, vocab, nullptr, 64);
    LoopOptions opts;
    opts.max_steps = 3;
    opts.substitute_masks = true;
    auto t = agent_loop("Loop forever.", {v1}, {{"v1", "t1", "0"}}, agent, nullptr, vocab, opts);
    CHECK(t.steps.size() == 3);
    CHECK_FALSE(t.complete);
    CHECK(t.answer.empty());
}

TEST_CASE("env bindings persist across steps") {
    VoxelGrid v1({6, 6, 6}, Mat4::identity(), 0.5f);
    BinaryMask m(v1.shape, v1.affine);
    for (int i = 0; i < 3; ++i) m.at(i, 0, 0) = 1;
    std::vector<std::string> steps = {
        "e = encode(v1, <MOD>)",
        "ms = segment(e, <MOD>)",
        "n = volume_of(ms)",
        "respond(\"{0}\", n)",
    };
    auto vocab = build_vocab(steps);
    ScriptedAgent agent(steps, vocab, nullptr, 64);
    LoopOptions opts;
    opts.oracle_masks = {m};
    opts.substitute_masks = true;
    auto t = agent_loop("Measure.", {v1}, {{"v1", "t1", "0"}}, agent, nullptr, vocab, opts);
    CHECK(t.complete);
    CHECK(t.answer == "3.0");
}

TEST_CASE("transcript serialization round-trips the essentials") {
    Transcript t;
    t.prompt = "Segment the lesion.";
    t.volume_names = {"v1"};
    StepRecord s;
    s.code = "e = encode(v1, <MOD>)\nread(e)";
    s.phi_count = 1;
    s.ok = true;
    s.feedback_rendering = "e = encodings of 1 volume(s)";
    t.steps.push_back(s);
    StepRecord s2;
    s2.code = "oops(";
    s2.ok = false;
    s2.error = "syntax error at 1:6: unclosed '(' in call";
    t.steps.push_back(s2);
    t.answer = "done";
    t.complete = true;

    const std::string text = format_transcript(t);
    auto back = parse_transcript(text);
    CHECK(back.prompt == t.prompt);
    REQUIRE(back.steps.size() == 2);
    CHECK(back.steps[0].code == s.code);
    CHECK(back.steps[0].phi_count == 1);
    CHECK(back.steps[0].ok);
    CHECK_FALSE(back.steps[1].ok);
    CHECK(back.answer == "done");
    CHECK(back.complete);
}
