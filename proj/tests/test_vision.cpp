#include <doctest.h>

#include <cmath>
#include <random>

#include "voxa/losses.hpp"
#include "voxa/vision.hpp"

using namespace voxa;

TEST_CASE("spacing_schedule isotropic (1,1) doubles cleanly") {
    auto s = spacing_schedule(Spacing(1, 1), 4);
    REQUIRE(s.size() == 4);
    const double want[4][2] = {{1, 1}, {2, 2}, {4, 4}, {8, 8}};
    for (int i = 0; i < 4; ++i) {
        CHECK(s[std::size_t(i)].s_inp == want[i][0]);
        CHECK(s[std::size_t(i)].s_sep == want[i][1]);
    }
}

TEST_CASE("spacing_schedule (1,6) holds slice separation until omega <= 2") {
    auto s = spacing_schedule(Spacing(1, 6), 4);
    const double want[4][2] = {{1, 6}, {2, 6}, {4, 6}, {8, 8}};
    for (int i = 0; i < 4; ++i) {
        CHECK(s[std::size_t(i)].s_inp == want[i][0]);
        CHECK(s[std::size_t(i)].s_sep == want[i][1]);
    }
}

TEST_CASE("spacing_schedule (1,2): omega == 2 is not > 2, sep tracks immediately") {
    auto s = spacing_schedule(Spacing(1, 2), 3);
    const double want[3][2] = {{1, 2}, {2, 2}, {4, 4}};
    for (int i = 0; i < 3; ++i) {
        CHECK(s[std::size_t(i)].s_inp == want[i][0]);
        CHECK(s[std::size_t(i)].s_sep == want[i][1]);
    }
}

TEST_CASE("spacing_schedule properties: inp doubles, sep non-decreasing") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> di(0.4, 2.0), ds(1.0, 8.0);
    for (int t = 0; t < 50; ++t) {
        const Spacing s0(di(rng), ds(rng));
        auto sch = spacing_schedule(s0, 6);
        for (std::size_t i = 1; i < sch.size(); ++i) {
            CHECK(sch[i].s_inp == doctest::Approx(2.0 * sch[i - 1].s_inp));
            CHECK(sch[i].s_sep >= sch[i - 1].s_sep - 1e-12);
        }
    }
}

namespace {

// Independent slicewise oracle: for every z slice, a plain 2D convolution
// with the central through-plane slice of the 3D kernel.
NdArray<float> slicewise_oracle(const NdArray<float>& x, const NdArray<float>& w,
                                const NdArray<float>& b) {
    const int S = x.dim(0), Ci = x.dim(1), X = x.dim(2), Y = x.dim(3), Z = x.dim(4);
    const int Co = w.dim(0);
    NdArray<float> out({S, Co, X, Y, Z});
    auto xat = [&](int s, int c, int i, int j, int k) -> float {
        if (i < 0 || j < 0 || i >= X || j >= Y) return 0.f;
        return x.v[std::size_t((((std::int64_t(s) * Ci + c) * X + i) * Y + j) * Z + k)];
    };
    for (int s = 0; s < S; ++s)
        for (int co = 0; co < Co; ++co)
            for (int k = 0; k < Z; ++k)
                for (int i = 0; i < X; ++i)
                    for (int j = 0; j < Y; ++j) {
                        float acc = b.v[std::size_t(co)];
                        for (int ci = 0; ci < Ci; ++ci)
                            for (int dx = 0; dx < 3; ++dx)
                                for (int dy = 0; dy < 3; ++dy) {
                                    const float wk =
                                        w.v[std::size_t((((std::int64_t(co) * Ci + ci) * 3 + dx) * 3 +
                                                         dy) * 3 + 1)];
                                    acc += wk * xat(s, ci, i + dx - 1, j + dy - 1, k);
                                }
                        out.v[std::size_t((((std::int64_t(s) * Co + co) * X + i) * Y + j) * Z + k)] =
                            acc;
                    }
    return out;
}

NdArray<float> random_arr(std::vector<int> shape, std::uint64_t seed, double sd = 0.6) {
    std::mt19937_64 rng(seed);
    return normal_init<float>(std::move(shape), sd, rng);
}

}  // namespace

TEST_CASE("native_conv with omega <= 2 is exactly conv3d") {
    Tensor<float> x(random_arr({2, 3, 5, 4, 3}, 21));
    Tensor<float> w(random_arr({4, 3, 3, 3, 3}, 22));
    Tensor<float> b(random_arr({4}, 23));
    auto a = native_conv(x, w, b, 1.0);
    auto c = conv3d(x, w, b);
    CHECK(a.val().v == c.val().v);  // same code path, bit-for-bit
}

TEST_CASE("native_conv with omega > 2 equals the slicewise oracle") {
    Tensor<float> x(random_arr({1, 2, 6, 5, 4}, 31));
    Tensor<float> w(random_arr({3, 2, 3, 3, 3}, 32));
    Tensor<float> b(random_arr({3}, 33));
    for (double omega : {2.5, 3.0, 5.0}) {
        auto got = native_conv(x, w, b, omega);
        auto want = slicewise_oracle(x.val(), w.val(), b.val());
        REQUIRE(got.shape() == want.shape);
        for (std::size_t i = 0; i < want.v.size(); ++i)
            CHECK(std::abs(got.val().v[i] - want.v[i]) <= 1e-6);
    }
}

TEST_CASE("native_conv single-slice volume under omega > 2") {
    Tensor<float> x(random_arr({1, 2, 4, 4, 1}, 41));
    Tensor<float> w(random_arr({2, 2, 3, 3, 3}, 42));
    Tensor<float> b(random_arr({2}, 43));
    auto got = native_conv(x, w, b, 4.0);
    auto want = slicewise_oracle(x.val(), w.val(), b.val());
    for (std::size_t i = 0; i < want.v.size(); ++i)
        CHECK(std::abs(got.val().v[i] - want.v[i]) <= 1e-6);
}

TEST_CASE("phi_mix with zero projection weights yields zeros") {
    Tensor<float> x(random_arr({2, 4, 2, 2, 2}, 51));
    Tensor<float> phi(random_arr({2, 3}, 52));
    Tensor<float> w(NdArray<float>({4, 7}, 0.f));
    Tensor<float> b(NdArray<float>({4}, 0.f));
    auto out = phi_mix(x, phi, w, b);
    for (float v : out.val().v) CHECK(v == 0.f);
}

TEST_CASE("phi_mix with identity-on-features projection returns the features") {
    Tensor<float> x(random_arr({1, 4, 2, 2, 2}, 53));
    Tensor<float> phi(random_arr({1, 3}, 54));
    NdArray<float> w({4, 7}, 0.f);
    for (int i = 0; i < 4; ++i) w.v[std::size_t(i * 7 + i)] = 1.f;
    Tensor<float> b(NdArray<float>({4}, 0.f));
    auto out = phi_mix(x, Tensor<float>(phi), Tensor<float>(w), b);
    for (std::size_t i = 0; i < out.val().v.size(); ++i)
        CHECK(out.val().v[i] == doctest::Approx(x.val().v[i]));
}

TEST_CASE("phi receives gradient through phi_mix") {
    Tape<float> tape;
    auto x = tape.leaf(random_arr({1, 4, 2, 2, 2}, 55), false);
    auto phi = tape.leaf(random_arr({1, 3}, 56), true);
    auto w = tape.leaf(random_arr({4, 7}, 57), false);
    auto b = tape.leaf(random_arr({4}, 58), false);
    auto out = phi_mix(x, phi, w, b);
    tape.backward(sum_all(out));
    auto g = tape.grad_of(phi);
    double mag = 0;
    for (float v : g.v) mag += std::abs(v);
    CHECK(mag > 1e-4);
}

namespace {

struct AttnWeights {
    Tensor<float> wq, wk, wv, wf, fb;
};

AttnWeights small_attn(int c, int b, std::uint64_t seed) {
    return {Tensor<float>(random_arr({b, c}, seed)), Tensor<float>(random_arr({b, c}, seed + 1)),
            Tensor<float>(random_arr({b, c}, seed + 2)), Tensor<float>(random_arr({c, b}, seed + 3)),
            Tensor<float>(random_arr({c}, seed + 4))};
}

}  // namespace

TEST_CASE("stream_attention with S=1 reduces to f(V) + A") {
    const int c = 4, b = 3;
    auto W = small_attn(c, b, 61);
    Tensor<float> x(random_arr({1, c, 2, 1, 2}, 66));
    auto out = stream_attention(x, W.wq, W.wk, W.wv, W.wf, W.fb);

    // independent evaluation: single-stream softmax weight is exactly 1
    const int N = 4;
    for (int n = 0; n < N; ++n) {
        for (int ci = 0; ci < c; ++ci) {
            double v[8];
            for (int bi = 0; bi < b; ++bi) {
                v[bi] = 0;
                for (int cj = 0; cj < c; ++cj)
                    v[bi] += W.wv.val().v[std::size_t(bi * c + cj)] *
                             x.val().v[std::size_t(cj * N + n)];
            }
            double f = W.fb.val().v[std::size_t(ci)];
            for (int bi = 0; bi < b; ++bi)
                f += W.wf.val().v[std::size_t(ci * b + bi)] * v[bi];
            const double want = f + x.val().v[std::size_t(ci * N + n)];
            CHECK(out.val().v[std::size_t(ci * N + n)] == doctest::Approx(want).epsilon(1e-5));
        }
    }
}

TEST_CASE("stream_attention hand-computed S=2 case includes the b^-1/2 scale") {
    // one spatial voxel, c=2, b=2; every product is done by hand below
    const int c = 2, b = 2;
    NdArray<float> xa({2, c, 1, 1, 1});
    xa.v = {1.f, 2.f, -1.f, 0.5f};  // stream0 = (1,2), stream1 = (-1,0.5)
    NdArray<float> q({b, c}), k({b, c}), v({b, c}), f({c, b}), fb({c});
    q.v = {1.f, 0.f, 0.f, 1.f};       // Q = A
    k.v = {0.f, 1.f, 1.f, 0.f};       // K = swapped features
    v.v = {1.f, 1.f, 0.5f, -0.5f};    // V rows: sum and half-difference
    f.v = {1.f, 0.f, 0.f, 1.f};       // f = identity
    fb.v = {0.f, 0.f};

    auto out = stream_attention(Tensor<float>(xa), Tensor<float>(q), Tensor<float>(k),
                                Tensor<float>(v), Tensor<float>(f), Tensor<float>(fb));

    // by-hand evaluation of B = f(softmax(Q K^T b^-1/2) V) + A
    const double A[2][2] = {{1, 2}, {-1, 0.5}};
    double Q[2][2], K[2][2], V[2][2];
    for (int s = 0; s < 2; ++s) {
        Q[s][0] = A[s][0];
        Q[s][1] = A[s][1];
        K[s][0] = A[s][1];
        K[s][1] = A[s][0];
        V[s][0] = A[s][0] + A[s][1];
        V[s][1] = 0.5 * A[s][0] - 0.5 * A[s][1];
    }
    const double scale = 1.0 / std::sqrt(2.0);
    for (int s = 0; s < 2; ++s) {
        double score[2];
        for (int t = 0; t < 2; ++t)
            score[t] = (Q[s][0] * K[t][0] + Q[s][1] * K[t][1]) * scale;
        const double mx = std::max(score[0], score[1]);
        const double e0 = std::exp(score[0] - mx), e1 = std::exp(score[1] - mx);
        const double p0 = e0 / (e0 + e1), p1 = e1 / (e0 + e1);
        for (int ci = 0; ci < 2; ++ci) {
            const double mixed = p0 * V[0][ci] + p1 * V[1][ci];
            const double want = mixed + A[s][ci];
            CHECK(out.val().v[std::size_t(s * 2 + ci)] == doctest::Approx(want).epsilon(1e-5));
        }
    }
}

TEST_CASE("stream_attention is permutation equivariant for S in {2,3,4}") {
    const int c = 8, b = 4;
    auto W = small_attn(c, b, 71);
    std::mt19937_64 rng(77);
    for (int S : {2, 3, 4}) {
        Tensor<float> x(random_arr({S, c, 3, 2, 2}, 80 + std::uint64_t(S)));
        auto out = stream_attention(x, W.wq, W.wk, W.wv, W.wf, W.fb);

        std::vector<int> perm(static_cast<std::size_t>(S));
        for (int i = 0; i < S; ++i) perm[std::size_t(i)] = i;
        std::shuffle(perm.begin(), perm.end(), rng);
        if (perm[0] == 0 && S > 1) std::swap(perm[0], perm[1]);

        const std::int64_t block = x.numel() / S;
        NdArray<float> xp(x.shape());
        for (int s = 0; s < S; ++s)
            std::copy_n(x.val().v.data() + std::int64_t(perm[std::size_t(s)]) * block, block,
                        xp.v.data() + std::int64_t(s) * block);
        auto outp = stream_attention(Tensor<float>(xp), W.wq, W.wk, W.wv, W.wf, W.fb);

        for (int s = 0; s < S; ++s)
            for (std::int64_t i = 0; i < block; ++i) {
                const float a = outp.val().v[std::size_t(std::int64_t(s) * block + i)];
                const float bexp =
                    out.val().v[std::size_t(std::int64_t(perm[std::size_t(s)]) * block + i)];
                CHECK(std::abs(a - bexp) <= 1e-5);
            }
    }
}

namespace {

VoxelGrid iso_grid(std::array<int, 3> shape, std::uint64_t seed) {
    VoxelGrid g(shape, Mat4::identity());
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> d(0.f, 1.f);
    for (auto& v : g.values) v = d(rng);
    return g;
}

std::vector<Tensor<float>> zero_phis(int n, int dim) {
    std::vector<Tensor<float>> out;
    for (int i = 0; i < n; ++i) out.emplace_back(NdArray<float>({dim}, 0.f));
    return out;
}

}  // namespace

TEST_CASE("encode level grids halve per level on an isotropic 16^3x8 input") {
    NetConfig cfg = NetConfig::desk();
    ParamStore<float> store;
    std::mt19937_64 rng(5);
    auto w = make_vision_weights(store, cfg, rng);

    auto g = iso_grid({16, 16, 8}, 9);
    auto E = encode({g}, zero_phis(1, cfg.phi_dim), w, nullptr);
    REQUIRE(int(E.levels.size()) == cfg.levels);
    CHECK(E.level_shapes[0] == std::array<int, 3>{16, 16, 8});
    CHECK(E.level_shapes[1] == std::array<int, 3>{8, 8, 4});
    CHECK(E.level_shapes[2] == std::array<int, 3>{4, 4, 2});
    CHECK(E.level_shapes[3] == std::array<int, 3>{2, 2, 1});
    for (int l = 0; l < cfg.levels; ++l) {
        const auto& ls = E.levels[std::size_t(l)].shape();
        CHECK(ls[0] == 1);
        CHECK(ls[1] == cfg.channels(l));
        CHECK(ls[2] == E.level_shapes[std::size_t(l)][0]);
        CHECK(ls[3] == E.level_shapes[std::size_t(l)][1]);
        CHECK(ls[4] == E.level_shapes[std::size_t(l)][2]);
    }
}

TEST_CASE("encode/generate run for any stream count with one config") {
    NetConfig cfg = NetConfig::desk();
    ParamStore<float> store;
    std::mt19937_64 rng(6);
    auto w = make_vision_weights(store, cfg, rng);

    for (int S = 1; S <= 4; ++S) {
        std::vector<VoxelGrid> vols;
        for (int s = 0; s < S; ++s) vols.push_back(iso_grid({8, 8, 8}, 100 + std::uint64_t(s)));
        auto E = encode(vols, zero_phis(S, cfg.phi_dim), w, nullptr);
        CHECK(E.streams == S);
        CHECK(E.pooled.shape() == std::vector<int>{S, cfg.summary_dim});

        auto out = generate(E, zero_phis(1, cfg.phi_dim), w, nullptr);
        CHECK(out.prob_grid.shape == vols[0].shape);
        CHECK(out.prob_grid.affine.almost_equal(vols[0].affine));
        for (float p : out.prob.val().v) {
            CHECK(p > 0.f);
            CHECK(p < 1.f);
        }
    }
}

TEST_CASE("encode handles an anisotropic schedule with non-integer z catch-up") {
    NetConfig cfg = NetConfig::desk();
    ParamStore<float> store;
    std::mt19937_64 rng(8);
    auto w = make_vision_weights(store, cfg, rng);

    Mat4 a = Mat4::identity();
    a.at(2, 2) = 6.0;  // (1,6) spacing
    VoxelGrid g({16, 16, 6}, a);
    std::mt19937_64 vr(3);
    std::uniform_real_distribution<float> d(0.f, 1.f);
    for (auto& v : g.values) v = d(vr);

    auto E = encode({g}, zero_phis(1, cfg.phi_dim), w, nullptr);
    // schedule (1,6)->(2,6)->(4,6)->(8,8): z stays 6 until the last transition
    CHECK(E.level_shapes[0] == std::array<int, 3>{16, 16, 6});
    CHECK(E.level_shapes[1] == std::array<int, 3>{8, 8, 6});
    CHECK(E.level_shapes[2] == std::array<int, 3>{4, 4, 6});
    CHECK(E.level_shapes[3][2] == 5);  // ceil(6 * 6/8)

    auto out = generate(E, zero_phis(1, cfg.phi_dim), w, nullptr);
    CHECK(out.prob_grid.shape == g.shape);
}

TEST_CASE("soft dice gradient reaches encoder level-0 weights") {
    NetConfig cfg = NetConfig::desk();
    ParamStore<float> store;
    std::mt19937_64 rng(12);
    auto w = make_vision_weights(store, cfg, rng);

    Tape<float> tape;
    auto g = iso_grid({8, 8, 8}, 44);
    std::vector<Tensor<float>> phis{tape.leaf(random_arr({cfg.phi_dim}, 45, 0.5), true)};
    auto E = encode({g}, phis, w, &tape);
    auto out = generate(E, phis, w, &tape);

    NdArray<float> target({8, 8, 8}, 0.f);
    for (int i = 2; i < 6; ++i)
        for (int j = 2; j < 6; ++j)
            for (int k = 2; k < 6; ++k) target.v[std::size_t((i * 8 + j) * 8 + k)] = 1.f;
    auto loss = soft_dice_loss(out.prob, target);
    tape.backward(loss);

    double conv0 = 0, phi_g = 0;
    for (float v : w.enc[0].conv_w->grad.v) conv0 += std::abs(v);
    auto pg = tape.grad_of(phis[0]);
    for (float v : pg.v) phi_g += std::abs(v);
    CHECK(conv0 > 1e-7);
    CHECK(phi_g > 1e-7);
}
