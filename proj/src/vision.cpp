#include "voxa/vision.hpp"

#include <cmath>

namespace voxa {

void NetConfig::validate() const {
    if (levels < 2) throw ShapeError("NetConfig: levels must be >= 2");
    if (top_channels <= 0 || deep_channels <= 0 || attn_dim <= 0 || summary_dim <= 0 ||
        phi_dim <= 0)
        throw ShapeError("NetConfig: all dimensions must be positive");
    if (top_channels % 4 != 0 || deep_channels % 4 != 0)
        throw ShapeError("NetConfig: channel counts must be divisible by the group size 4");
}

std::vector<Spacing> spacing_schedule(const Spacing& s0, int levels) {
    if (levels < 1) throw ShapeError("spacing_schedule: levels must be >= 1");
    std::vector<Spacing> out{s0};
    const double acquisition_sep = s0.s_sep;
    for (int n = 1; n < levels; ++n) {
        const Spacing& prev = out.back();
        const double inp = 2.0 * prev.s_inp;
        const double sep = prev.omega() > 2.0 ? acquisition_sep : inp;
        out.emplace_back(inp, sep);
    }
    return out;
}

namespace {

VisionLevelWeights make_level(ParamStore<float>& store, const std::string& prefix, int cin,
                              int cout, const NetConfig& cfg, std::mt19937_64& rng) {
    VisionLevelWeights lw;
    lw.conv_w = &store.add(prefix + ".conv.w",
                           kaiming_init<float>({cout, cin, 3, 3, 3}, std::int64_t(cin) * 27, rng));
    lw.conv_b = &store.add(prefix + ".conv.b", NdArray<float>({cout}));
    lw.mix_w = &store.add(prefix + ".mix.w",
                          kaiming_init<float>({cout, cout + cfg.phi_dim}, cout + cfg.phi_dim, rng));
    lw.mix_b = &store.add(prefix + ".mix.b", NdArray<float>({cout}));
    lw.wq = &store.add(prefix + ".attn.wq", kaiming_init<float>({cfg.attn_dim, cout}, cout, rng));
    lw.wk = &store.add(prefix + ".attn.wk", kaiming_init<float>({cfg.attn_dim, cout}, cout, rng));
    lw.wv = &store.add(prefix + ".attn.wv", kaiming_init<float>({cfg.attn_dim, cout}, cout, rng));
    lw.wf = &store.add(prefix + ".attn.wf",
                       normal_init<float>({cout, cfg.attn_dim}, 0.02, rng));
    lw.fb = &store.add(prefix + ".attn.fb", NdArray<float>({cout}));
    return lw;
}

Tensor<float> bindp(Tape<float>* tape, Parameter<float>& p) {
    return tape ? tape->param(p) : Tensor<float>(p.value);
}

// One shared level block: conv -> silu -> phi mix -> silu -> stream attention
// -> group norm.
Tensor<float> level_block(const Tensor<float>& x, const Tensor<float>& phi,
                          const VisionLevelWeights& lw, double omega, Tape<float>* tape) {
    auto conv = native_conv(x, bindp(tape, *lw.conv_w), bindp(tape, *lw.conv_b), omega);
    auto mixed = silu(phi_mix(silu(conv), phi, bindp(tape, *lw.mix_w), bindp(tape, *lw.mix_b)));
    auto attended = stream_attention(mixed, bindp(tape, *lw.wq), bindp(tape, *lw.wk),
                                     bindp(tape, *lw.wv), bindp(tape, *lw.wf),
                                     bindp(tape, *lw.fb));
    return group_norm(attended, 4);
}

Tensor<float> stack_phis(const std::vector<Tensor<float>>& phis, int streams, int phi_dim) {
    std::vector<Tensor<float>> rows;
    rows.reserve(std::size_t(streams));
    for (int s = 0; s < streams; ++s) {
        const Tensor<float>& p = phis.size() == 1 ? phis[0] : phis[std::size_t(s)];
        if (p.numel() != phi_dim) throw ShapeError("phi vector has wrong length");
        rows.push_back(reshape(p, {1, phi_dim}));
    }
    return streams == 1 ? rows[0] : concat(0, rows);
}

}  // namespace

VisionWeights make_vision_weights(ParamStore<float>& store, const NetConfig& cfg,
                                  std::mt19937_64& rng) {
    cfg.validate();
    VisionWeights w;
    w.cfg = cfg;
    for (int l = 0; l < cfg.levels; ++l) {
        const int cin = l == 0 ? 1 : cfg.channels(l - 1);
        w.enc.push_back(make_level(store, "enc" + std::to_string(l), cin, cfg.channels(l), cfg, rng));
    }
    for (int l = 0; l < cfg.levels - 1; ++l) {
        const int cin = cfg.channels(l + 1) + cfg.channels(l);  // upsampled + skip
        w.dec.push_back(make_level(store, "dec" + std::to_string(l), cin, cfg.channels(l), cfg, rng));
    }
    const int deep = cfg.channels(cfg.levels - 1);
    w.eps_w = &store.add("eps.w", kaiming_init<float>({cfg.summary_dim, deep}, deep, rng));
    w.eps_b = &store.add("eps.b", NdArray<float>({cfg.summary_dim}));
    w.out_w = &store.add("out.w",
                         kaiming_init<float>({1, cfg.top_channels, 3, 3, 3},
                                             std::int64_t(cfg.top_channels) * 27, rng));
    w.out_b = &store.add("out.b", NdArray<float>({1}));
    return w;
}

EncodingSet encode(const std::vector<VoxelGrid>& volumes,
                   const std::vector<Tensor<float>>& phis, const VisionWeights& w,
                   Tape<float>* tape) {
    if (volumes.empty()) throw DomainError("encode: no input volumes");
    const int S = int(volumes.size());
    if (int(phis.size()) != S) throw DomainError("encode: phi count != stream count");

    const VoxelGrid& ref = volumes[0];
    EncodingSet E;
    E.streams = S;
    E.ref_shape = ref.shape;
    E.ref_affine = ref.affine;
    E.schedule = spacing_schedule(ref.spacing(), w.cfg.levels);

    // Stack streams on the reference grid.
    NdArray<float> input({S, 1, ref.shape[0], ref.shape[1], ref.shape[2]});
    for (int s = 0; s < S; ++s) {
        const VoxelGrid* g = &volumes[std::size_t(s)];
        VoxelGrid aligned;
        if (!g->same_geometry(ref.shape, ref.affine)) {
            aligned = resample_onto(*g, ref.shape, ref.affine);
            g = &aligned;
        }
        std::copy(g->values.begin(), g->values.end(),
                  input.v.begin() + std::size_t(s) * std::size_t(g->numel()));
    }

    Tensor<float> phi = stack_phis(phis, S, w.cfg.phi_dim);
    Tensor<float> x = tape ? tape->leaf(std::move(input), false) : Tensor<float>(std::move(input));

    std::array<int, 3> shape = ref.shape;
    for (int l = 0; l < w.cfg.levels; ++l) {
        x = level_block(x, phi, w.enc[std::size_t(l)], E.schedule[std::size_t(l)].omega(), tape);
        E.levels.push_back(x);
        E.level_shapes.push_back(shape);
        if (l + 1 == w.cfg.levels) break;

        x = max_pool3d(x, {2, 2, 1});
        shape[0] = (shape[0] + 1) / 2;
        shape[1] = (shape[1] + 1) / 2;
        const double sep = E.schedule[std::size_t(l)].s_sep;
        const double nsep = E.schedule[std::size_t(l + 1)].s_sep;
        if (nsep != sep) {
            const int nz = std::max(1, int(std::ceil(double(shape[2]) * sep / nsep - 1e-9)));
            x = trilinear_resize(x, {shape[0], shape[1], nz}, {1.0, 1.0, nsep / sep});
            shape[2] = nz;
        }
    }

    auto eps_b = bindp(tape, *w.eps_b);
    E.pooled = linear(global_max3d(E.levels.back()), bindp(tape, *w.eps_w), &eps_b);
    return E;
}

GenOutput generate(const EncodingSet& enc, const std::vector<Tensor<float>>& phis,
                   const VisionWeights& w, Tape<float>* tape) {
    const int L = w.cfg.levels;
    if (int(enc.levels.size()) != L) throw ShapeError("generate: level count mismatch");
    const int S = enc.streams;
    if (phis.empty()) throw DomainError("generate: missing phi");

    Tensor<float> phi = stack_phis(phis, S, w.cfg.phi_dim);
    Tensor<float> x = enc.levels[std::size_t(L - 1)];

    for (int l = L - 2; l >= 0; --l) {
        const auto& tgt = enc.level_shapes[std::size_t(l)];
        const Spacing& cur = enc.schedule[std::size_t(l + 1)];
        const Spacing& up = enc.schedule[std::size_t(l)];
        x = trilinear_resize(x, tgt,
                             {up.s_inp / cur.s_inp, up.s_inp / cur.s_inp, up.s_sep / cur.s_sep});
        x = concat(1, std::vector<Tensor<float>>{x, enc.levels[std::size_t(l)]});
        x = level_block(x, phi, w.dec[std::size_t(l)], up.omega(), tape);
    }

    auto logits = conv3d(x, bindp(tape, *w.out_w), bindp(tape, *w.out_b));  // [S,1,X,Y,Z]
    Tensor<float> merged;
    if (S == 1) {
        merged = logits;
    } else {
        // mean of per-stream logit maps keeps the head stream-count agnostic
        const auto& ls = logits.shape();
        auto grouped = reshape(logits, {1, S, ls[2], ls[3], ls[4]});
        NdArray<float> avg({1, S}, 1.f / float(S));
        merged = channel_linear(grouped, Tensor<float>(std::move(avg)));
    }
    auto prob = sigmoid(reshape(merged, {enc.ref_shape[0], enc.ref_shape[1], enc.ref_shape[2]}));

    GenOutput out;
    out.prob = prob;
    out.prob_grid = VoxelGrid(enc.ref_shape, enc.ref_affine);
    out.prob_grid.values = prob.val().v;
    out.mask = BinaryMask::from_grid(out.prob_grid, 0.5f);
    return out;
}

}  // namespace voxa
