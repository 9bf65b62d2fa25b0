#include "voxa/agent.hpp"

#include <cmath>

namespace voxa {

void AgentConfig::validate() const {
    if (layers < 1 || width < 1 || heads < 1 || ff < 1) throw ShapeError("AgentConfig: bad sizes");
    if (width % heads != 0) throw ShapeError("AgentConfig: width must divide by heads");
    if (vocab < 5) throw ShapeError("AgentConfig: vocabulary not set");
    if (max_seq < 8 || step_cap < 2) throw ShapeError("AgentConfig: caps too small");
}

AgentWeights make_agent_weights(ParamStore<float>& store, const AgentConfig& cfg,
                                std::mt19937_64& rng) {
    cfg.validate();
    AgentWeights w;
    w.cfg = cfg;
    const int d = cfg.width;
    w.tok_emb = &store.add("agent.tok_emb", normal_init<float>({cfg.vocab, d}, 0.02, rng));
    w.pos_emb = &store.add("agent.pos_emb", normal_init<float>({cfg.max_seq, d}, 0.02, rng));
    for (int l = 0; l < cfg.layers; ++l) {
        const std::string p = "agent.layer" + std::to_string(l);
        AgentLayerWeights lw;
        lw.wq = &store.add(p + ".wq", normal_init<float>({d, d}, 0.02, rng));
        lw.wk = &store.add(p + ".wk", normal_init<float>({d, d}, 0.02, rng));
        lw.wv = &store.add(p + ".wv", normal_init<float>({d, d}, 0.02, rng));
        lw.wo = &store.add(p + ".wo", normal_init<float>({d, d}, 0.02, rng));
        lw.norm1 = &store.add(p + ".norm1", NdArray<float>({d}, 1.f));
        lw.w1 = &store.add(p + ".ff1", normal_init<float>({cfg.ff, d}, 0.02, rng));
        lw.w2 = &store.add(p + ".ff2", normal_init<float>({d, cfg.ff}, 0.02, rng));
        lw.norm2 = &store.add(p + ".norm2", NdArray<float>({d}, 1.f));
        w.layers.push_back(lw);
    }
    w.norm_f = &store.add("agent.norm_f", NdArray<float>({d}, 1.f));
    w.head_w = &store.add("agent.head", normal_init<float>({cfg.vocab, d}, 0.02, rng));
    w.phi_w = &store.add("agent.phi.w", normal_init<float>({cfg.phi_dim, d}, 0.02, rng));
    w.phi_b = &store.add("agent.phi.b", NdArray<float>({cfg.phi_dim}));
    return w;
}

namespace {

Tensor<float> bindp(Tape<float>* tape, Parameter<float>& p) {
    return tape ? tape->param(p) : Tensor<float>(p.value);
}

NdArray<float> causal_mask(int t) {
    NdArray<float> m({t, t});
    for (int i = 0; i < t; ++i)
        for (int j = i + 1; j < t; ++j) m.v[std::size_t(i * t + j)] = -1e9f;
    return m;
}

}  // namespace

Tensor<float> agent_hidden(const Tensor<float>& emb, const AgentWeights& w, Tape<float>* tape) {
    const auto& es = emb.shape();
    if (es.size() != 2 || es[1] != w.cfg.width) throw ShapeError("agent_hidden: [T,d] input required");
    const int T = es[0], d = w.cfg.width, H = w.cfg.heads, dh = d / H;
    if (T > w.cfg.max_seq) throw StateOverflowError("sequence exceeds the state cap");

    std::vector<int> iota(static_cast<std::size_t>(T));
    for (int i = 0; i < T; ++i) iota[std::size_t(i)] = i;
    auto x = add(emb, take_rows(bindp(tape, *w.pos_emb), iota));

    const Tensor<float> mask(causal_mask(T));
    for (const auto& lw : w.layers) {
        auto h = rms_norm(x, bindp(tape, *lw.norm1));
        auto q = permute(reshape(linear(h, bindp(tape, *lw.wq)), {T, H, dh}), {1, 0, 2});
        auto k = permute(reshape(linear(h, bindp(tape, *lw.wk)), {T, H, dh}), {1, 0, 2});
        auto v = permute(reshape(linear(h, bindp(tape, *lw.wv)), {T, H, dh}), {1, 0, 2});
        auto scores = scale(bmm(q, permute(k, {0, 2, 1})), float(1.0 / std::sqrt(double(dh))));
        auto probs = softmax(add_mask(scores, mask), 2);
        auto ctx = reshape(permute(bmm(probs, v), {1, 0, 2}), {T, d});
        x = add(x, linear(ctx, bindp(tape, *lw.wo)));

        auto m = rms_norm(x, bindp(tape, *lw.norm2));
        auto ffn = linear(silu(linear(m, bindp(tape, *lw.w1))), bindp(tape, *lw.w2));
        x = add(x, ffn);
    }
    return rms_norm(x, bindp(tape, *w.norm_f));
}

Tensor<float> agent_logits(const Tensor<float>& hidden, const AgentWeights& w, Tape<float>* tape) {
    return linear(hidden, bindp(tape, *w.head_w));
}

Tensor<float> agent_phi(const Tensor<float>& hidden_rows, const AgentWeights& w,
                        Tape<float>* tape) {
    auto b = bindp(tape, *w.phi_b);
    return silu(linear(hidden_rows, bindp(tape, *w.phi_w), &b));
}

std::string metadata_line(const VolumeMeta& meta) {
    return "\nvol " + meta.name + ": modality=" + meta.modality + ", date=" + meta.date;
}

StateMu initial_state(const std::string& prompt, const std::vector<VolumeMeta>& metas,
                      const Vocabulary& vocab, const AgentWeights& w) {
    if (prompt.empty()) throw std::invalid_argument("initial_state: empty prompt");
    std::vector<int> ids{Vocabulary::kBos};
    std::vector<Provenance> tags{Provenance::Prompt};
    for (int id : vocab.tokenize(prompt)) {
        ids.push_back(id);
        tags.push_back(Provenance::Prompt);
    }
    for (const auto& meta : metas)
        for (int id : vocab.tokenize(metadata_line(meta))) {
            ids.push_back(id);
            tags.push_back(Provenance::Metadata);
        }

    const int d = w.cfg.width;
    StateMu mu;
    mu.emb = NdArray<float>({int(ids.size()), d});
    for (std::size_t i = 0; i < ids.size(); ++i)
        std::copy_n(w.tok_emb->value->v.data() + std::int64_t(ids[i]) * d, d,
                    mu.emb.v.data() + std::int64_t(i) * d);
    mu.tags = std::move(tags);
    return mu;
}

DecodeResult decode_step(const StateMu& mu, const AgentWeights& w, const Vocabulary& vocab) {
    const int d = w.cfg.width;
    const int V = w.cfg.vocab;
    DecodeResult res;

    std::vector<float> emb = mu.emb.v;  // growing [T,d] buffer
    int T = mu.length();
    int prev = -1;
    bool pending_phi = false;

    auto hidden_last = [&]() {
        Tensor<float> e(NdArray<float>::from({T, d}, emb));
        auto h = agent_hidden(e, w, nullptr);
        NdArray<float> row({d});
        std::copy_n(h.val().v.data() + std::int64_t(T - 1) * d, d, row.v.data());
        return row;
    };
    auto push_token = [&](int id) {
        res.tokens.push_back(id);
        emb.insert(emb.end(), w.tok_emb->value->v.begin() + std::int64_t(id) * d,
                   w.tok_emb->value->v.begin() + std::int64_t(id + 1) * d);
        ++T;
        prev = id;
    };

    while (int(res.tokens.size()) < w.cfg.step_cap) {
        if (T >= w.cfg.max_seq) {
            res.truncated = true;
            break;
        }
        NdArray<float> h = hidden_last();
        if (pending_phi) {
            Tensor<float> hrow(h);
            res.phis.push_back(agent_phi(hrow, w, nullptr));
            res.mod_hidden.push_back(h);
            pending_phi = false;
            // the argmax emission at this position is discarded from code text
            push_token(Vocabulary::kPad);
            continue;
        }
        // greedy argmax over the token head at the last position
        int best = 0;
        {
            Tensor<float> hrow(h);
            auto logits = agent_logits(hrow, w, nullptr);
            const auto& lv = logits.val().v;
            for (int i = 1; i < V; ++i)
                if (lv[std::size_t(i)] > lv[std::size_t(best)]) best = i;
        }
        push_token(best);
        if (best == Vocabulary::kEosStep) break;
        if (best == Vocabulary::kMod) pending_phi = true;
    }
    if (!res.tokens.empty() && res.tokens.back() != Vocabulary::kEosStep && !res.truncated &&
        int(res.tokens.size()) >= w.cfg.step_cap)
        res.truncated = true;
    if (pending_phi && T < w.cfg.max_seq) {
        // cap interrupted the capture; the MOD contract still holds
        NdArray<float> h = hidden_last();
        Tensor<float> hrow(h);
        res.phis.push_back(agent_phi(hrow, w, nullptr));
        res.mod_hidden.push_back(h);
        res.truncated = true;
    }

    res.code_text = vocab.detokenize(res.tokens);
    if (!res.tokens.empty()) {
        res.eta_emb = NdArray<float>({int(res.tokens.size()), d});
        for (std::size_t i = 0; i < res.tokens.size(); ++i)
            std::copy_n(w.tok_emb->value->v.data() + std::int64_t(res.tokens[i]) * d, d,
                        res.eta_emb.v.data() + std::int64_t(i) * d);
    }
    return res;
}

StateMu append_feedback(const StateMu& mu, const NdArray<float>& eta, const NdArray<float>& z,
                        int max_seq) {
    const int d = mu.emb.ndim() == 2 ? mu.emb.dim(1) : 0;
    const int ne = eta.numel() ? eta.dim(0) : 0;
    const int nz = z.numel() ? z.dim(0) : 0;
    if ((ne && eta.dim(1) != d) || (nz && z.dim(1) != d))
        throw ShapeError("append_feedback: width mismatch");
    const int total = mu.length() + ne + nz;
    if (total > max_seq)
        throw StateOverflowError("state would exceed the sequence cap");

    StateMu out;
    out.emb = NdArray<float>({total, d});
    std::copy(mu.emb.v.begin(), mu.emb.v.end(), out.emb.v.begin());
    if (ne)
        std::copy(eta.v.begin(), eta.v.end(), out.emb.v.begin() + mu.emb.v.size());
    if (nz)
        std::copy(z.v.begin(), z.v.end(), out.emb.v.begin() + mu.emb.v.size() + eta.v.size());
    out.tags = mu.tags;
    out.tags.insert(out.tags.end(), std::size_t(ne), Provenance::Instruction);
    out.tags.insert(out.tags.end(), std::size_t(nz), Provenance::Feedback);
    return out;
}

}  // namespace voxa
