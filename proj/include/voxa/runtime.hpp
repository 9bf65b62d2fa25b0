#pragma once

#include <memory>
#include <variant>

#include "voxa/agent.hpp"
#include "voxa/dsl.hpp"
#include "voxa/vision.hpp"

namespace voxa {

// --- environment values -------------------------------------------------

struct NumberVal {
    double value = 0.0;
    std::string unit;  // "mm3", "mm", or empty
};

struct TripleVal {
    std::array<double, 3> value{0, 0, 0};
    std::string unit;
};

struct TextVal {
    std::string text;
};

struct MaskVal {
    std::shared_ptr<BinaryMask> mask;
    std::shared_ptr<VoxelGrid> prob;  // retained probability map, may be null
};

using VolumePtr = std::shared_ptr<VoxelGrid>;
using VolumeList = std::vector<VolumePtr>;

struct EncodingsVal {
    std::shared_ptr<EncodingSet> enc;
};

using Value = std::variant<VolumePtr, VolumeList, EncodingsVal, MaskVal, NumberVal, TripleVal,
                           TextVal>;

std::string value_kind(const Value& v);
std::string render_value(const Value& v, bool with_unit);
std::string format_number(double v);  // one decimal place

// Insertion-ordered variable store; rebinding replaces in place.
class Env {
public:
    bool has(const std::string& name) const { return map_.count(name) > 0; }
    const Value& get(const std::string& name) const;
    void set(const std::string& name, Value v);
    const std::vector<std::string>& names() const { return order_; }
    std::size_t size() const { return order_.size(); }

private:
    std::vector<std::string> order_;
    std::unordered_map<std::string, Value> map_;
};

// --- models ---------------------------------------------------------------

struct ModelBundle {
    NetConfig net_cfg;
    AgentConfig agent_cfg;
    Vocabulary vocab;
    ParamStore<float> store;
    VisionWeights vision;
    AgentWeights agent;
};

std::unique_ptr<ModelBundle> make_models(const NetConfig& net_cfg, AgentConfig agent_cfg,
                                         Vocabulary vocab, std::uint64_t seed);

// --- execution --------------------------------------------------------------

struct FeedbackItem {
    std::string rendering;
    std::vector<Tensor<float>> vectors;  // filled for encoding reads
    bool is_encoding = false;
};

struct StepOutcome {
    bool ok = true;
    std::string error;
    std::vector<FeedbackItem> feedback;
    bool completed = false;
    std::string answer;
    std::vector<std::pair<std::string, MaskVal>> produced_masks;  // binding name, value
    std::vector<Tensor<float>> seg_probs;  // model-predicted maps, tape-linked in training
};

// Runs programs against one persistent Env. With a null model bundle (or
// substitute_masks), segment() pops oracle masks in order; encode() then
// yields zero summaries. Runtime failures become error outcomes, never
// exceptions, so the loop can feed them back.
class Executor {
public:
    Executor(Env& env, const ModelBundle* models, Tape<float>* tape, int width)
        : env_(env), models_(models), tape_(tape), width_(width) {}

    void provide_oracle_masks(std::vector<BinaryMask> masks, bool substitute);

    StepOutcome run(const Program& program, const std::vector<Tensor<float>>& phis);

    std::size_t oracle_cursor() const { return oracle_next_; }

private:
    Env& env_;
    const ModelBundle* models_;
    Tape<float>* tape_;
    int width_;
    std::vector<BinaryMask> oracle_masks_;
    bool substitute_masks_ = false;
    std::size_t oracle_next_ = 0;
};

// --- feedback -----------------------------------------------------------

struct FeedbackBlock {
    std::vector<Tensor<float>> vectors;  // one d-wide vector per row of z
    std::string rendering;
};

// Encoding reads pass their pooled summaries through unchanged; everything
// else is rendered to text, tokenized, and embedded with the token matrix.
FeedbackBlock embed_feedback(const std::vector<FeedbackItem>& items, const Vocabulary& vocab,
                             const AgentWeights* agent, Tape<float>* tape, int width);

// Canonical token stream of one program step: MOD followed by a PAD
// placeholder, EOS terminated. Shared by the scripted agent and training.
std::vector<int> program_step_tokens(const std::string& step_text, const Vocabulary& vocab);

// --- agent loop ------------------------------------------------------------

struct StepRecord {
    std::string code;
    int phi_count = 0;
    bool ok = true;
    std::string error;
    std::string feedback_rendering;
    bool truncated = false;
    int mu_before = 0, eta_len = 0, z_len = 0, mu_after = 0;
};

struct Transcript {
    std::string prompt;
    std::vector<std::string> volume_names;
    std::vector<StepRecord> steps;
    std::string answer;
    bool complete = false;
    std::vector<std::pair<std::string, BinaryMask>> masks;
};

class AgentPolicy {
public:
    virtual ~AgentPolicy() = default;
    virtual DecodeResult next(const StateMu& mu) = 0;
};

// Greedy neural policy over a model bundle.
class NeuralAgent : public AgentPolicy {
public:
    explicit NeuralAgent(const ModelBundle& models) : models_(models) {}
    DecodeResult next(const StateMu& mu) override;

private:
    const ModelBundle& models_;
};

// Replays a ground-truth program step by step; phi slots carry zeros.
class ScriptedAgent : public AgentPolicy {
public:
    ScriptedAgent(std::vector<std::string> steps, const Vocabulary& vocab,
                  const AgentWeights* emb_source, int width, int phi_dim = 8)
        : steps_(std::move(steps)), vocab_(vocab), emb_(emb_source), width_(width),
          phi_dim_(phi_dim) {}
    DecodeResult next(const StateMu& mu) override;

private:
    std::vector<std::string> steps_;
    const Vocabulary& vocab_;
    const AgentWeights* emb_;
    int width_;
    int phi_dim_;
    std::size_t cursor_ = 0;
};

struct LoopOptions {
    int max_steps = 8;
    std::vector<BinaryMask> oracle_masks;
    bool substitute_masks = false;
};

// conform + normalize, shared by every path that feeds volumes to models.
std::vector<VoxelGrid> prepare_volumes(const std::vector<VoxelGrid>& volumes);

Transcript agent_loop(const std::string& prompt, const std::vector<VoxelGrid>& volumes,
                      const std::vector<VolumeMeta>& metas, AgentPolicy& policy,
                      const ModelBundle* models, const Vocabulary& vocab,
                      const LoopOptions& opts);

std::string format_transcript(const Transcript& t);
Transcript parse_transcript(const std::string& text);

}  // namespace voxa
