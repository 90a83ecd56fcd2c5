#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tts/acoustic.hpp"
#include "tts/dsp.hpp"
#include "tts/flow.hpp"
#include "tts/params.hpp"
#include "tts/text.hpp"

namespace tts::pipeline {

struct AdamSettings {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-6;
    double grad_clip_norm = 1.0;

    nlohmann::ordered_json to_json() const;
    static AdamSettings from_json(const nlohmann::json& j);
};

struct AdamState {
    std::int64_t step = 0;
    std::int64_t rejected_nan = 0;
    std::unordered_map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments;
};

using NamedGrads = std::vector<std::pair<std::string, const std::vector<double>*>>;

/// One Adam update with global-norm gradient clipping. Gradients may only
/// name trainable parameters (anything else is a contract violation).
/// Returns false and leaves all state untouched when any gradient is not
/// finite; the rejection is counted in the state.
bool optimizer_step(params::ParameterArchive& archive, const NamedGrads& grads,
                    const AdamSettings& settings, AdamState& state);

/// Replace the single embedding table with a freshly initialized
/// [|vocab| x embed_dim] tensor; every other tensor is copied verbatim and
/// the archive's vocabulary metadata is updated.
params::ParameterArchive surgery_reset_embedding(const params::ParameterArchive& archive,
                                                 const text::Vocabulary& vocab,
                                                 std::uint64_t seed);

/// Clear the trainable flag on parameters matching any prefix, set it on
/// all other parameters. Statistics buffers (running_*) stay non-trainable.
/// Each prefix must match at least one parameter.
void apply_freeze(params::ParameterArchive& archive, const std::vector<std::string>& prefixes);

struct StopRule {
    std::int64_t max_steps = 100;
    std::int64_t plateau_window = 0;           // 0 disables the plateau rule
    double plateau_min_rel_improvement = 0.0;
    std::optional<double> convergence_loss;    // report-level convergence flag

    nlohmann::ordered_json to_json() const;
    static StopRule from_json(const nlohmann::json& j);
};

struct StagePlan {
    static constexpr int kSchemaVersion = 1;

    std::string stage; // english_pretrain | synthetic_pretrain | target_finetune
    std::string manifest;
    std::string init_archive;                // empty means training from scratch
    std::string surgery = "none";            // none | reset_embedding
    std::vector<std::string> freeze_prefixes;
    AdamSettings optimizer;
    StopRule stop;
    std::int64_t batch_size = 8;
    std::uint64_t seed = 1234;
    std::int64_t checkpoint_every = 0;       // 0: only the final checkpoint
    std::string out_archive;
    std::string report_path;                 // optional
    acoustic::AcousticConfig model;          // used only when init_archive is empty

    void validate() const;
    nlohmann::ordered_json to_json() const;
    static StagePlan from_json(const nlohmann::json& j);
    static StagePlan load(const std::string& path);
    void save(const std::string& path) const;
};

struct StageReport {
    std::string stage;
    std::int64_t steps = 0;
    std::string halt_reason; // max_steps | plateau
    bool converged = true;
    std::int64_t nan_steps = 0;
    double final_loss = 0.0;
    std::vector<std::pair<std::int64_t, double>> loss_curve;
    std::map<std::string, std::int64_t> param_deltas; // prefix -> changed tensor count

    nlohmann::ordered_json to_json() const;
};

struct StageResult {
    params::ParameterArchive archive;
    StageReport report;
};

/// Execute one training stage: resolve the vocabulary (building it or
/// reusing the checkpoint's), apply surgery and freeze directives, iterate
/// seeded length-bucketed mini-batches with pad-masked losses, checkpoint
/// atomically, stop per rule.
StageResult run_stage(const StagePlan& plan);

/// Run chained stages; each plan's init archive must be the previous
/// plan's output. Provenance accumulates in the archive metadata.
params::ParameterArchive run_recipe(const std::vector<StagePlan>& plans);

struct FlowTrainResult {
    flow::FlowModel model;
    std::vector<double> losses;
};

/// Likelihood training of the flow vocoder on (audio, mel) clips using
/// random fixed-length crops.
FlowTrainResult train_flow(const flow::FlowConfig& cfg,
                           const std::vector<std::pair<std::vector<double>,
                                                       dsp::MelSpectrogram>>& clips,
                           std::int64_t steps, std::int64_t crop_samples,
                           const AdamSettings& settings, std::uint64_t seed);

/// Masked batch loss: per-item squared errors and stop BCE are pooled over
/// true (unpadded) lengths only.
ad::TensorPtr batch_loss(const acoustic::AcousticModel& model,
                         const std::vector<acoustic::AcousticOutput>& outs,
                         const std::vector<ad::TensorPtr>& targets);

} // namespace tts::pipeline
