#include "voxa/runtime.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace voxa {

// --- values -------------------------------------------------------------

std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.1f", v);
    return buf;
}

std::string value_kind(const Value& v) {
    struct Visitor {
        std::string operator()(const VolumePtr&) const { return "volume"; }
        std::string operator()(const VolumeList&) const { return "volume list"; }
        std::string operator()(const EncodingsVal&) const { return "encodings"; }
        std::string operator()(const MaskVal&) const { return "mask"; }
        std::string operator()(const NumberVal&) const { return "number"; }
        std::string operator()(const TripleVal&) const { return "triple"; }
        std::string operator()(const TextVal&) const { return "text"; }
    };
    return std::visit(Visitor{}, v);
}

std::string render_value(const Value& v, bool with_unit) {
    struct Visitor {
        bool with_unit;
        std::string operator()(const VolumePtr& g) const {
            return "volume " + std::to_string(g->shape[0]) + "x" + std::to_string(g->shape[1]) +
                   "x" + std::to_string(g->shape[2]);
        }
        std::string operator()(const VolumeList& l) const {
            return "list of " + std::to_string(l.size()) + " volumes";
        }
        std::string operator()(const EncodingsVal& e) const {
            return "encodings of " + std::to_string(e.enc->streams) + " volume(s)";
        }
        std::string operator()(const MaskVal& m) const {
            return "mask with " + std::to_string(m.mask->count()) + " foreground voxels";
        }
        std::string operator()(const NumberVal& n) const {
            std::string s = format_number(n.value);
            if (with_unit && !n.unit.empty()) s += " " + n.unit;
            return s;
        }
        std::string operator()(const TripleVal& t) const {
            std::string s = "(" + format_number(t.value[0]) + ", " + format_number(t.value[1]) +
                            ", " + format_number(t.value[2]) + ")";
            if (with_unit && !t.unit.empty()) s += " " + t.unit;
            return s;
        }
        std::string operator()(const TextVal& t) const { return t.text; }
    };
    return std::visit(Visitor{with_unit}, v);
}

const Value& Env::get(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw DomainError("undefined variable '" + name + "'");
    return it->second;
}

void Env::set(const std::string& name, Value v) {
    auto it = map_.find(name);
    if (it == map_.end()) {
        order_.push_back(name);
        map_.emplace(name, std::move(v));
    } else {
        it->second = std::move(v);
    }
}

std::unique_ptr<ModelBundle> make_models(const NetConfig& net_cfg, AgentConfig agent_cfg,
                                         Vocabulary vocab, std::uint64_t seed) {
    if (net_cfg.summary_dim != agent_cfg.width)
        throw ShapeError("summary dim must equal the agent width for feedback pass-through");
    if (net_cfg.phi_dim != agent_cfg.phi_dim)
        throw ShapeError("phi dims of the vision and agent configs must agree");
    auto mb = std::make_unique<ModelBundle>();
    mb->net_cfg = net_cfg;
    agent_cfg.vocab = vocab.size();
    mb->agent_cfg = agent_cfg;
    mb->vocab = std::move(vocab);
    std::mt19937_64 rng(seed);
    mb->vision = make_vision_weights(mb->store, net_cfg, rng);
    mb->agent = make_agent_weights(mb->store, mb->agent_cfg, rng);
    return mb;
}

// --- executor -----------------------------------------------------------

namespace {

struct ExecError : std::runtime_error {
    explicit ExecError(const std::string& msg) : std::runtime_error(msg) {}
};

double mask_volume_mm3(const BinaryMask& m) {
    Mat4 a = m.affine;
    return double(m.count()) * std::abs(a.det3());
}

TripleVal mask_extents(const BinaryMask& m) {
    if (m.count() == 0) throw ExecError("extents_of: empty mask");
    std::array<double, 3> half[3];
    for (int c = 0; c < 3; ++c) {
        auto col = m.affine.column3(c);
        half[c] = {0.5 * col[0], 0.5 * col[1], 0.5 * col[2]};
    }
    std::array<double, 3> lo{1e300, 1e300, 1e300}, hi{-1e300, -1e300, -1e300};
    for (int i = 0; i < m.shape[0]; ++i)
        for (int j = 0; j < m.shape[1]; ++j)
            for (int k = 0; k < m.shape[2]; ++k) {
                if (!m.at(i, j, k)) continue;
                auto w = m.affine.apply(i, j, k);
                for (int c = 0; c < 8; ++c)
                    for (int a = 0; a < 3; ++a) {
                        const double corner = w[a] + ((c & 1) ? half[0][a] : -half[0][a]) +
                                              ((c & 2) ? half[1][a] : -half[1][a]) +
                                              ((c & 4) ? half[2][a] : -half[2][a]);
                        lo[a] = std::min(lo[a], corner);
                        hi[a] = std::max(hi[a], corner);
                    }
            }
    TripleVal t;
    for (int a = 0; a < 3; ++a) t.value[std::size_t(a)] = hi[a] - lo[a];
    t.unit = "mm";
    return t;
}

std::string arith_unit(const std::string& a, const std::string& b, bool is_div) {
    if (is_div) return a == b ? "" : (b.empty() ? a : "");
    if (a == b) return a;
    if (a.empty()) return b;
    if (b.empty()) return a;
    return "";
}

}  // namespace

void Executor::provide_oracle_masks(std::vector<BinaryMask> masks, bool substitute) {
    oracle_masks_ = std::move(masks);
    substitute_masks_ = substitute;
    oracle_next_ = 0;
}

StepOutcome Executor::run(const Program& program, const std::vector<Tensor<float>>& phis) {
    StepOutcome out;
    if (int(phis.size()) != program.mod_count) {
        out.ok = false;
        out.error = "phi count mismatch: program has " + std::to_string(program.mod_count) +
                    " <MOD> slots but " + std::to_string(phis.size()) + " vectors were provided";
        return out;
    }

    auto var = [&](const Arg& a) -> const Value& {
        if (a.kind != Arg::Kind::Var) throw ExecError("expected a variable argument");
        return env_.get(a.text);
    };
    auto as_volume = [&](const Arg& a) {
        const Value& v = var(a);
        if (auto* p = std::get_if<VolumePtr>(&v)) return *p;
        throw ExecError("'" + a.text + "' is a " + value_kind(v) + ", expected a volume");
    };
    auto as_mask = [&](const Arg& a) {
        const Value& v = var(a);
        if (auto* p = std::get_if<MaskVal>(&v)) return *p;
        throw ExecError("'" + a.text + "' is a " + value_kind(v) + ", expected a mask");
    };
    auto as_number = [&](const Arg& a) -> NumberVal {
        if (a.kind == Arg::Kind::Number) return NumberVal{a.number, ""};
        const Value& v = var(a);
        if (auto* p = std::get_if<NumberVal>(&v)) return *p;
        throw ExecError("'" + a.text + "' is a " + value_kind(v) + ", expected a number");
    };
    auto as_encodings = [&](const Arg& a) {
        const Value& v = var(a);
        if (auto* p = std::get_if<EncodingsVal>(&v)) return *p;
        throw ExecError("'" + a.text + "' is a " + value_kind(v) + ", expected encodings");
    };
    auto arity = [&](const Stmt& s, std::size_t n) {
        if (s.args.size() != n)
            throw ExecError(s.func + " expects " + std::to_string(n) + " argument(s), got " +
                            std::to_string(s.args.size()));
    };

    try {
        for (const Stmt& stmt : program.stmts) {
            std::optional<Value> result;
            const std::string& fn = stmt.func;

            if (fn == "encode") {
                if (stmt.args.empty() || stmt.args.size() % 2 != 0)
                    throw ExecError("encode expects volume, <MOD> pairs");
                std::vector<VoxelGrid> vols;
                std::vector<Tensor<float>> stream_phis;
                for (std::size_t i = 0; i < stmt.args.size(); i += 2) {
                    if (stmt.args[i + 1].kind != Arg::Kind::Mod)
                        throw ExecError("encode: each volume argument needs a following <MOD>");
                    vols.push_back(*as_volume(stmt.args[i]));
                    stream_phis.push_back(phis[std::size_t(stmt.args[i + 1].mod_ordinal)]);
                }
                EncodingsVal ev;
                if (models_) {
                    ev.enc = std::make_shared<EncodingSet>(
                        encode(vols, stream_phis, models_->vision, tape_));
                } else {
                    // oracle harness: structure only, zero summaries
                    auto enc = std::make_shared<EncodingSet>();
                    enc->streams = int(vols.size());
                    enc->pooled =
                        Tensor<float>(NdArray<float>({int(vols.size()), width_}, 0.f));
                    enc->ref_shape = vols[0].shape;
                    enc->ref_affine = vols[0].affine;
                    ev.enc = std::move(enc);
                }
                result = ev;
            } else if (fn == "segment") {
                arity(stmt, 2);
                auto ev = as_encodings(stmt.args[0]);
                if (stmt.args[1].kind != Arg::Kind::Mod)
                    throw ExecError("segment expects (encodings, <MOD>)");
                MaskVal mv;
                if (models_) {
                    auto gen = generate(ev.enc ? *ev.enc : EncodingSet{},
                                        {phis[std::size_t(stmt.args[1].mod_ordinal)]},
                                        models_->vision, tape_);
                    out.seg_probs.push_back(gen.prob);
                    mv.mask = std::make_shared<BinaryMask>(std::move(gen.mask));
                    mv.prob = std::make_shared<VoxelGrid>(std::move(gen.prob_grid));
                }
                if (!models_ || substitute_masks_) {
                    if (oracle_next_ >= oracle_masks_.size())
                        throw ExecError("segment: no oracle mask left to substitute");
                    mv.mask = std::make_shared<BinaryMask>(oracle_masks_[oracle_next_++]);
                }
                const std::string name = stmt.target.empty() ? "_m" : stmt.target;
                out.produced_masks.emplace_back(name, mv);
                result = mv;
            } else if (fn == "read") {
                arity(stmt, 1);
                const Value& v = var(stmt.args[0]);
                FeedbackItem item;
                item.rendering = stmt.args[0].text + " = " + render_value(v, true);
                if (auto* ev = std::get_if<EncodingsVal>(&v)) {
                    item.is_encoding = true;
                    for (int s = 0; s < ev->enc->streams; ++s)
                        item.vectors.push_back(
                            reshape(take_rows(ev->enc->pooled, {s}), {width_}));
                }
                out.feedback.push_back(std::move(item));
            } else if (fn == "volume_of") {
                arity(stmt, 1);
                result = NumberVal{mask_volume_mm3(*as_mask(stmt.args[0]).mask), "mm3"};
            } else if (fn == "extents_of") {
                arity(stmt, 1);
                result = mask_extents(*as_mask(stmt.args[0]).mask);
            } else if (fn == "mean_in" || fn == "snr_in") {
                arity(stmt, 2);
                auto vol = as_volume(stmt.args[0]);
                auto msk = as_mask(stmt.args[1]);
                RoiReport rep = roi_report(*vol, *msk.mask);
                if (fn == "mean_in") {
                    result = NumberVal{rep.mean, ""};
                } else {
                    if (!rep.snr)
                        throw ExecError("snr_in: degenerate statistics (zero variance)");
                    result = NumberVal{*rep.snr, ""};
                }
            } else if (fn == "add" || fn == "sub" || fn == "mul" || fn == "div") {
                arity(stmt, 2);
                const NumberVal a = as_number(stmt.args[0]);
                const NumberVal b = as_number(stmt.args[1]);
                NumberVal r;
                if (fn == "add") r = {a.value + b.value, arith_unit(a.unit, b.unit, false)};
                if (fn == "sub") r = {a.value - b.value, arith_unit(a.unit, b.unit, false)};
                if (fn == "mul") r = {a.value * b.value, arith_unit(a.unit, b.unit, false)};
                if (fn == "div") {
                    if (std::abs(b.value) < 1e-12) throw ExecError("div: division by zero");
                    r = {a.value / b.value, arith_unit(a.unit, b.unit, true)};
                }
                result = r;
            } else if (fn == "mask_apply" || fn == "mask_remove") {
                arity(stmt, 2);
                auto vol = as_volume(stmt.args[0]);
                auto msk = as_mask(stmt.args[1]);
                if (!msk.mask->same_geometry(*vol))
                    throw ExecError(fn + ": mask geometry does not match the volume");
                auto outv = std::make_shared<VoxelGrid>(*vol);
                const bool keep = fn == "mask_apply";
                for (std::int64_t i = 0; i < outv->numel(); ++i) {
                    const bool in = msk.mask->values[std::size_t(i)] != 0;
                    if (in != keep) outv->values[std::size_t(i)] = 0.f;
                }
                result = outv;
            } else if (fn == "crop_to") {
                arity(stmt, 3);
                auto vol = as_volume(stmt.args[0]);
                auto msk = as_mask(stmt.args[1]);
                const double margin = as_number(stmt.args[2]).value;
                if (margin < 0) throw ExecError("crop_to: negative margin");
                result = std::make_shared<VoxelGrid>(crop_margin(*vol, *msk.mask, margin));
            } else if (fn == "respond") {
                if (stmt.args.empty()) throw ExecError("respond expects a template");
                std::string tmpl;
                if (stmt.args[0].kind == Arg::Kind::Str)
                    tmpl = stmt.args[0].text;
                else if (auto* t = std::get_if<TextVal>(&var(stmt.args[0])))
                    tmpl = t->text;
                else
                    throw ExecError("respond: template must be text");
                std::string answer = tmpl;
                for (std::size_t k = 1; k < stmt.args.size(); ++k) {
                    const Arg& a = stmt.args[k];
                    std::string rendered;
                    if (a.kind == Arg::Kind::Number)
                        rendered = format_number(a.number);
                    else if (a.kind == Arg::Kind::Str)
                        rendered = a.text;
                    else
                        rendered = render_value(var(a), false);
                    const std::string slot = "{" + std::to_string(k - 1) + "}";
                    for (std::size_t pos = answer.find(slot); pos != std::string::npos;
                         pos = answer.find(slot, pos + rendered.size()))
                        answer.replace(pos, slot.size(), rendered);
                }
                out.completed = true;
                out.answer = answer;
            } else if (fn == "stop") {
                arity(stmt, 0);
                out.completed = true;
            } else {
                throw ExecError("unknown function '" + fn + "'");
            }

            if (!stmt.target.empty()) {
                if (!result)
                    throw ExecError(fn + " returns nothing; it cannot be assigned");
                env_.set(stmt.target, std::move(*result));
            }
            if (out.completed) break;
        }
    } catch (const std::exception& e) {
        out.ok = false;
        out.error = e.what();
    }
    return out;
}

// --- feedback -----------------------------------------------------------

FeedbackBlock embed_feedback(const std::vector<FeedbackItem>& items, const Vocabulary& vocab,
                             const AgentWeights* agent, Tape<float>* tape, int width) {
    FeedbackBlock block;
    std::string joined;
    for (const auto& item : items) {
        if (!joined.empty()) joined += "\n";
        joined += item.rendering;
        if (item.is_encoding) {
            for (const auto& v : item.vectors) block.vectors.push_back(v);
            continue;
        }
        const std::vector<int> ids = vocab.tokenize(item.rendering);
        if (agent) {
            auto table = tape ? tape->param(*agent->tok_emb) : Tensor<float>(agent->tok_emb->value);
            auto rows = embedding_lookup(table, ids);
            for (std::size_t i = 0; i < ids.size(); ++i)
                block.vectors.push_back(reshape(take_rows(rows, {int(i)}), {width}));
        } else {
            for (std::size_t i = 0; i < ids.size(); ++i)
                block.vectors.push_back(Tensor<float>(NdArray<float>({width}, 0.f)));
        }
    }
    block.rendering = joined;
    return block;
}

std::vector<int> program_step_tokens(const std::string& step_text, const Vocabulary& vocab) {
    std::vector<int> out;
    for (int id : vocab.tokenize(step_text, true)) {
        out.push_back(id);
        if (id == Vocabulary::kMod) out.push_back(Vocabulary::kPad);
    }
    out.push_back(Vocabulary::kEosStep);
    return out;
}

// --- policies -----------------------------------------------------------

DecodeResult NeuralAgent::next(const StateMu& mu) {
    return decode_step(mu, models_.agent, models_.vocab);
}

DecodeResult ScriptedAgent::next(const StateMu& mu) {
    (void)mu;
    DecodeResult res;
    if (cursor_ >= steps_.size()) {
        res.code_text = "stop()";
        res.tokens = program_step_tokens(res.code_text, vocab_);
    } else {
        res.code_text = steps_[cursor_++];
        res.tokens = program_step_tokens(res.code_text, vocab_);
    }
    int mods = 0;
    for (int id : res.tokens) mods += id == Vocabulary::kMod ? 1 : 0;
    for (int i = 0; i < mods; ++i)
        res.phis.push_back(Tensor<float>(NdArray<float>({phi_dim_}, 0.f)));
    res.eta_emb = NdArray<float>({int(res.tokens.size()), emb_ ? emb_->cfg.width : width_});
    if (emb_) {
        const int d = emb_->cfg.width;
        for (std::size_t i = 0; i < res.tokens.size(); ++i)
            std::copy_n(emb_->tok_emb->value->v.data() + std::int64_t(res.tokens[i]) * d, d,
                        res.eta_emb.v.data() + std::int64_t(i) * d);
    }
    return res;
}

// --- loop ------------------------------------------------------------------

std::vector<VoxelGrid> prepare_volumes(const std::vector<VoxelGrid>& volumes) {
    std::vector<VoxelGrid> out;
    out.reserve(volumes.size());
    for (const auto& g : volumes) out.push_back(preprocess_volume(g));
    return out;
}

Transcript agent_loop(const std::string& prompt, const std::vector<VoxelGrid>& volumes,
                      const std::vector<VolumeMeta>& metas, AgentPolicy& policy,
                      const ModelBundle* models, const Vocabulary& vocab,
                      const LoopOptions& opts) {
    Transcript t;
    t.prompt = prompt;

    const int width = models ? models->agent_cfg.width : 64;
    const int max_seq = models ? models->agent_cfg.max_seq : 4096;

    Env env;
    auto prepared = prepare_volumes(volumes);
    VolumeList vlist;
    for (std::size_t i = 0; i < prepared.size(); ++i) {
        const std::string name = "v" + std::to_string(i + 1);
        auto ptr = std::make_shared<VoxelGrid>(prepared[i]);
        env.set(name, ptr);
        vlist.push_back(ptr);
        t.volume_names.push_back(name);
    }
    if (vlist.size() > 1) env.set("vols", vlist);

    Executor exec(env, models, nullptr, width);
    if (!opts.oracle_masks.empty() || !models)
        exec.provide_oracle_masks(opts.oracle_masks, opts.substitute_masks || !models);

    StateMu mu;
    if (models) {
        mu = initial_state(prompt, metas, vocab, models->agent);
    } else {
        // oracle harness keeps lengths honest with zero embeddings
        std::vector<int> ids{Vocabulary::kBos};
        auto pr = vocab.tokenize(prompt);
        ids.insert(ids.end(), pr.begin(), pr.end());
        for (const auto& m : metas) {
            auto mm = vocab.tokenize(metadata_line(m));
            ids.insert(ids.end(), mm.begin(), mm.end());
        }
        mu.emb = NdArray<float>({int(ids.size()), width}, 0.f);
        mu.tags.assign(ids.size(), Provenance::Prompt);
    }

    for (int step = 0; step < opts.max_steps; ++step) {
        DecodeResult res = policy.next(mu);
        StepRecord rec;
        rec.code = res.code_text;
        rec.phi_count = int(res.phis.size());
        rec.truncated = res.truncated;
        rec.mu_before = mu.length();
        rec.eta_len = res.eta_emb.numel() ? res.eta_emb.dim(0) : 0;

        StepOutcome outcome;
        try {
            Program prog = parse(res.code_text);
            outcome = exec.run(prog, res.phis);
        } catch (const ParseError& pe) {
            outcome.ok = false;
            outcome.error = pe.what();
        }
        rec.ok = outcome.ok;
        rec.error = outcome.error;

        std::vector<FeedbackItem> items = outcome.feedback;
        if (!outcome.ok) {
            FeedbackItem err;
            err.rendering = "error: " + outcome.error;
            items.push_back(err);
        }
        FeedbackBlock fb = embed_feedback(items, vocab, models ? &models->agent : nullptr,
                                          nullptr, width);
        rec.feedback_rendering = fb.rendering;
        rec.z_len = int(fb.vectors.size());

        for (auto& [name, mv] : outcome.produced_masks)
            t.masks.emplace_back(name, *mv.mask);

        NdArray<float> z;
        if (!fb.vectors.empty()) {
            z = NdArray<float>({int(fb.vectors.size()), width});
            for (std::size_t i = 0; i < fb.vectors.size(); ++i)
                std::copy_n(fb.vectors[i].val().v.data(), width,
                            z.v.data() + std::int64_t(i) * width);
        }
        bool overflow = false;
        try {
            mu = append_feedback(mu, res.eta_emb, z, max_seq);
        } catch (const StateOverflowError&) {
            overflow = true;
        }
        rec.mu_after = mu.length();
        t.steps.push_back(rec);

        if (outcome.completed) {
            t.complete = true;
            t.answer = outcome.answer;
            break;
        }
        if (overflow) break;
    }
    return t;
}

// --- transcript serialization ------------------------------------------

namespace {

std::string indent_block(const std::string& text) {
    std::stringstream in(text), out;
    std::string line;
    while (std::getline(in, line)) out << "| " << line << "\n";
    return out.str();
}

}  // namespace

std::string format_transcript(const Transcript& t) {
    std::stringstream os;
    os << "# transcript\n";
    os << "prompt: " << t.prompt << "\n";
    os << "volumes:";
    for (const auto& n : t.volume_names) os << " " << n;
    os << "\n";
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
        const auto& s = t.steps[i];
        os << "[step " << (i + 1) << "]\n";
        os << "code:\n" << indent_block(s.code);
        os << "phi_count: " << s.phi_count << "\n";
        os << "outcome: " << (s.ok ? "ok" : std::string("error: ") + s.error) << "\n";
        os << "state: " << s.mu_before << " + " << s.eta_len << " + " << s.z_len << " -> "
           << s.mu_after << "\n";
        if (!s.feedback_rendering.empty())
            os << "feedback:\n" << indent_block(s.feedback_rendering);
    }
    os << "[answer]\n" << (t.complete ? t.answer : "(incomplete)") << "\n";
    os << "[masks]\n";
    for (const auto& [name, mask] : t.masks)
        os << name << " -> " << name << ".vxv (" << mask.count() << " voxels)\n";
    os << "complete: " << (t.complete ? "true" : "false") << "\n";
    return os.str();
}

Transcript parse_transcript(const std::string& text) {
    Transcript t;
    std::stringstream is(text);
    std::string line;
    StepRecord* cur = nullptr;
    enum class Section { None, Code, Feedback, Answer, Masks } sec = Section::None;
    while (std::getline(is, line)) {
        auto strip_pipe = [&](const std::string& l) { return l.substr(2); };
        if (line.rfind("prompt: ", 0) == 0) {
            t.prompt = line.substr(8);
        } else if (line.rfind("[step ", 0) == 0) {
            t.steps.emplace_back();
            cur = &t.steps.back();
            sec = Section::None;
        } else if (line == "code:") {
            sec = Section::Code;
        } else if (line == "feedback:") {
            sec = Section::Feedback;
        } else if (line == "[answer]") {
            sec = Section::Answer;
            cur = nullptr;
        } else if (line == "[masks]") {
            sec = Section::Masks;
        } else if (line.rfind("phi_count: ", 0) == 0 && cur) {
            cur->phi_count = std::stoi(line.substr(11));
        } else if (line.rfind("outcome: ", 0) == 0 && cur) {
            const std::string rest = line.substr(9);
            cur->ok = rest == "ok";
            if (!cur->ok && rest.rfind("error: ", 0) == 0) cur->error = rest.substr(7);
        } else if (line.rfind("complete: ", 0) == 0) {
            t.complete = line.substr(10) == "true";
        } else if (line.rfind("| ", 0) == 0) {
            if (sec == Section::Code && cur) {
                if (!cur->code.empty()) cur->code += "\n";
                cur->code += strip_pipe(line);
            } else if (sec == Section::Feedback && cur) {
                if (!cur->feedback_rendering.empty()) cur->feedback_rendering += "\n";
                cur->feedback_rendering += strip_pipe(line);
            }
        } else if (sec == Section::Answer && line != "(incomplete)" && !line.empty() &&
                   line[0] != '[') {
            t.answer = line;
        }
    }
    return t;
}

}  // namespace voxa
