#pragma once

#include "voxa/ops.hpp"
#include "voxa/vocab.hpp"

// Decoder-only language agent: learned absolute positions, RMS-normalized
// pre-norm blocks with SiLU feed-forward, a token head, and the phi head that
// projects hidden states following <MOD> into vision modulators.

namespace voxa {

struct StateOverflowError : std::runtime_error {
    explicit StateOverflowError(const std::string& msg) : std::runtime_error(msg) {}
};

struct AgentConfig {
    int layers = 2;
    int width = 64;    // d, matches the vision summary dim
    int heads = 4;
    int ff = 128;
    int max_seq = 1024;
    int step_cap = 128;  // per-step emitted token cap
    int vocab = 0;       // filled in from the built vocabulary
    int phi_dim = 8;

    static AgentConfig desk() { return AgentConfig{}; }
    static AgentConfig paper() { return AgentConfig{16, 512, 32, 2048, 1024, 128, 32000, 32}; }
    void validate() const;
};

struct AgentLayerWeights {
    Parameter<float>*wq, *wk, *wv, *wo;
    Parameter<float>* norm1;
    Parameter<float>*w1, *w2;
    Parameter<float>* norm2;
};

struct AgentWeights {
    AgentConfig cfg;
    Parameter<float>* tok_emb = nullptr;  // [V, d]
    Parameter<float>* pos_emb = nullptr;  // [max_seq, d]
    std::vector<AgentLayerWeights> layers;
    Parameter<float>* norm_f = nullptr;
    Parameter<float>* head_w = nullptr;  // [V, d]
    Parameter<float>* phi_w = nullptr;   // [phi_dim, d]
    Parameter<float>* phi_b = nullptr;
};

AgentWeights make_agent_weights(ParamStore<float>& store, const AgentConfig& cfg,
                                std::mt19937_64& rng);

enum class Provenance : std::uint8_t { Prompt, Metadata, Instruction, Feedback };

// Agent state: one d-dim embedding per position plus provenance tags.
// Embeddings are stored without positions; the transformer adds them by index.
struct StateMu {
    NdArray<float> emb;  // [T, d]
    std::vector<Provenance> tags;

    int length() const { return emb.shape.empty() ? 0 : emb.dim(0); }
};

struct VolumeMeta {
    std::string name;
    std::string modality;
    std::string date;
};

std::string metadata_line(const VolumeMeta& meta);

StateMu initial_state(const std::string& prompt, const std::vector<VolumeMeta>& metas,
                      const Vocabulary& vocab, const AgentWeights& w);

struct DecodeResult {
    std::vector<int> tokens;  // emitted stream incl. MOD / PAD placeholders and EOS
    std::string code_text;    // rendered program text, MOD slots as "<MOD>"
    std::vector<Tensor<float>> phis;
    std::vector<NdArray<float>> mod_hidden;  // hidden states behind each phi
    bool truncated = false;
    NdArray<float> eta_emb;  // [k, d] token embeddings of the emitted stream
};

// Greedy argmax decoding until EOS or the step cap. Pure in (weights, mu).
DecodeResult decode_step(const StateMu& mu, const AgentWeights& w, const Vocabulary& vocab);

// mu' = mu || eta || z. Throws StateOverflowError past the sequence cap.
StateMu append_feedback(const StateMu& mu, const NdArray<float>& eta, const NdArray<float>& z,
                        int max_seq);

// Shared transformer surfaces, tape-recordable for training.
Tensor<float> agent_hidden(const Tensor<float>& emb, const AgentWeights& w, Tape<float>* tape);
Tensor<float> agent_logits(const Tensor<float>& hidden, const AgentWeights& w, Tape<float>* tape);
Tensor<float> agent_phi(const Tensor<float>& hidden_rows, const AgentWeights& w,
                        Tape<float>* tape);

}  // namespace voxa
