#pragma once

#include "voxa/ops_spatial.hpp"
#include "voxa/voxel.hpp"

// Instructable multi-scale volume encoder and generator. Feature maps are
// laid out [S, C, X, Y, Z] with one stream per input volume; streams share
// weights and interact through per-voxel attention.

namespace voxa {

struct NetConfig {
    int levels = 4;
    int top_channels = 8;     // channels at the full-resolution level
    int deep_channels = 16;   // channels at every other level
    int attn_dim = 8;         // b
    int summary_dim = 64;     // d, must match the agent width
    int phi_dim = 8;

    static NetConfig desk() { return NetConfig{}; }
    static NetConfig paper() { return NetConfig{6, 32, 96, 32, 512, 32}; }

    int channels(int level) const { return level == 0 ? top_channels : deep_channels; }
    void validate() const;
};

// Per-level downsampling plan: in-plane spacing doubles; slice separation
// holds at the acquisition value while omega > 2, then tracks in-plane.
std::vector<Spacing> spacing_schedule(const Spacing& s0, int levels);

// omega > 2 -> per-slice 2D convolution with the central kernel slice,
// otherwise a full 3D convolution. Same 3^3 kernel either way.
template <class T>
Tensor<T> native_conv(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                      double omega) {
    return omega > 2.0 ? conv2d_slicewise(x, w, b) : conv3d(x, w, b);
}

// Channel-concatenate per-stream phi (broadcast over space) and project back
// to the feature channel count.
template <class T>
Tensor<T> phi_mix(const Tensor<T>& x, const Tensor<T>& phi, const Tensor<T>& w,
                  const Tensor<T>& b) {
    const auto& xs = x.shape();
    if (xs.size() != 5) throw ShapeError("phi_mix: [S,C,X,Y,Z] input required");
    auto pb = broadcast_channels(phi, {xs[2], xs[3], xs[4]});
    auto cat = concat(1, std::vector<Tensor<T>>{x, pb});
    return channel_linear(cat, w, &b);
}

// B = f(softmax(Q K^T b^{-1/2}) V) + A per spatial location, streams as the
// attention sequence. wq/wk/wv: [b,C] bias-free, wf: [C,b] with bias.
template <class T>
Tensor<T> stream_attention(const Tensor<T>& x, const Tensor<T>& wq, const Tensor<T>& wk,
                           const Tensor<T>& wv, const Tensor<T>& wf, const Tensor<T>& fb) {
    const auto xs = x.shape();
    if (xs.size() < 3) throw ShapeError("stream_attention: [S,C,spatial...] input required");
    const int S = xs[0], C = xs[1];
    const int b = wq.shape()[0];
    if (wf.shape() != std::vector<int>{C, b}) throw ShapeError("stream_attention: wf mismatch");
    std::int64_t sp = 1;
    for (std::size_t i = 2; i < xs.size(); ++i) sp *= xs[std::size_t(i)];
    const int N = int(sp);

    auto q = reshape(channel_linear(x, wq), {S, b, N});
    auto k = reshape(channel_linear(x, wk), {S, b, N});
    auto v = reshape(channel_linear(x, wv), {S, b, N});

    // [S,b,N] -> [N,S,b] so each voxel is one attention batch
    auto qp = permute(q, {2, 0, 1});
    auto kp = permute(k, {2, 0, 1});
    auto vp = permute(v, {2, 0, 1});

    auto scores = scale(bmm(qp, permute(kp, {0, 2, 1})), T(1.0 / std::sqrt(double(b))));
    auto attn = softmax(scores, 2);
    auto mixed = bmm(attn, vp);                       // [N,S,b]
    auto back = permute(mixed, {1, 2, 0});            // [S,b,N]
    auto proj = channel_linear(back, wf, &fb);        // [S,C,N]
    return add(x, reshape(proj, xs));
}

struct VisionLevelWeights {
    Parameter<float>*conv_w = nullptr, *conv_b = nullptr;
    Parameter<float>*mix_w = nullptr, *mix_b = nullptr;
    Parameter<float>*wq = nullptr, *wk = nullptr, *wv = nullptr;
    Parameter<float>*wf = nullptr, *fb = nullptr;
};

struct VisionWeights {
    NetConfig cfg;
    std::vector<VisionLevelWeights> enc;  // levels 0..L-1
    std::vector<VisionLevelWeights> dec;  // levels 0..L-2 (upsampling targets)
    Parameter<float>* eps_w = nullptr;    // [d, deep]
    Parameter<float>* eps_b = nullptr;
    Parameter<float>* out_w = nullptr;    // [1, top, 3,3,3]
    Parameter<float>* out_b = nullptr;
};

VisionWeights make_vision_weights(ParamStore<float>& store, const NetConfig& cfg,
                                  std::mt19937_64& rng);

// Per-stream multi-scale features plus the pooled per-volume summary.
struct EncodingSet {
    int streams = 0;
    std::vector<Tensor<float>> levels;            // [S, C_l, shape_l...]
    Tensor<float> pooled;                         // [S, d]
    std::vector<Spacing> schedule;
    std::vector<std::array<int, 3>> level_shapes;
    std::array<int, 3> ref_shape{};
    Mat4 ref_affine = Mat4::identity();
};

struct GenOutput {
    Tensor<float> prob;   // [X,Y,Z], stays on the tape during training
    VoxelGrid prob_grid;  // reference geometry
    BinaryMask mask;      // probability > 0.5
};

// Encoder arm. Volumes off the reference grid are resampled onto the first
// volume's grid. One phi per stream.
EncodingSet encode(const std::vector<VoxelGrid>& volumes,
                   const std::vector<Tensor<float>>& phis, const VisionWeights& w,
                   Tape<float>* tape);

// Generator arm mirroring the schedule in reverse with skip connections.
// A single phi is broadcast across streams.
GenOutput generate(const EncodingSet& enc, const std::vector<Tensor<float>>& phis,
                   const VisionWeights& w, Tape<float>* tape);

}  // namespace voxa
