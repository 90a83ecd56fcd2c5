#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tts/ops.hpp"
#include "tts/params.hpp"
#include "tts/tensor.hpp"
#include "tts/text.hpp"

namespace tts::acoustic {

struct AcousticConfig {
    std::int64_t embed_dim = 512;
    std::int64_t enc_conv_layers = 3;
    std::int64_t enc_filters = 512;
    std::int64_t enc_kernel = 5;
    std::int64_t enc_blstm_units = 512; // total, half per direction
    std::int64_t prenet_units = 256;
    std::int64_t dec_lstm_units = 1024;
    std::int64_t attn_dim = 128;
    std::int64_t attn_location_filters = 32;
    std::int64_t attn_location_kernel = 31;
    std::int64_t postnet_layers = 5;
    std::int64_t postnet_filters = 512;
    std::int64_t postnet_kernel = 5;
    std::int64_t mel_channels = 80;
    std::int64_t max_decoder_steps = 1000;
    std::int64_t reduction_factor = 1;
    double stop_threshold = 0.5;
    double dropout = 0.5;
    double prenet_dropout = 0.5;
    double stop_pos_weight = 5.0;
    bool postnet_final_tanh = false;
    bool infer_feed_postnet = false;
    bool prenet_dropout_at_infer = true;

    void validate() const;
    nlohmann::ordered_json to_json() const;
    static AcousticConfig from_json(const nlohmann::json& j);

    /// Small configuration used by gradient checks and overfit experiments.
    static AcousticConfig shrunken();
};

struct AttentionState {
    ad::TensorPtr prev_weights; // [T]
    ad::TensorPtr cum_weights;  // [T]
    ad::TensorPtr context;      // [enc_dim]
};

struct DecoderState {
    ad::TensorPtr h1, c1, h2, c2;
};

enum class HaltReason { stop_token, max_steps, teacher_forced };

struct AcousticOutput {
    ad::TensorPtr pre_mel;     // [S x mel]
    ad::TensorPtr post_mel;    // [S x mel], pre + postnet residual
    ad::TensorPtr stop_logits; // [S]
    std::vector<double> attention; // row-major [S x T]
    std::int64_t steps = 0;
    std::int64_t enc_positions = 0;
    HaltReason halt = HaltReason::teacher_forced;
};

/// Spectrogram prediction network: grapheme encoder, location-sensitive
/// attention decoder with stop token head, and a residual post-net.
class AcousticModel {
public:
    AcousticConfig cfg;
    params::ParameterArchive store;

    static AcousticModel init(const AcousticConfig& cfg, const text::Vocabulary& vocab,
                              std::uint64_t seed);
    static AcousticModel from_archive(params::ParameterArchive archive);

    text::Vocabulary vocabulary() const;

    ad::TensorPtr encode_text(const std::vector<std::int64_t>& ids, bool training,
                              Rng& rng) const;

    /// One attention step: returns (weights [T], context [enc_dim]) and
    /// advances the state. enc_proj is the precomputed memory projection.
    std::pair<ad::TensorPtr, ad::TensorPtr> attention_step(const ad::TensorPtr& query,
                                                           const ad::TensorPtr& enc_states,
                                                           const ad::TensorPtr& enc_proj,
                                                           AttentionState& state) const;

    /// One decoder step from the previous mel frame. Returns (frame [mel],
    /// stop logit [1]) and advances both states.
    std::pair<ad::TensorPtr, ad::TensorPtr> decode_step(const ad::TensorPtr& prev_frame,
                                                        const ad::TensorPtr& enc_states,
                                                        const ad::TensorPtr& enc_proj,
                                                        AttentionState& attn,
                                                        DecoderState& dec, bool training,
                                                        Rng& rng) const;

    AcousticOutput forward_teacher_forced(const std::vector<std::int64_t>& ids,
                                          const ad::TensorPtr& target_mel, bool training,
                                          Rng& rng) const;

    /// MSE on both decoder and post-net outputs plus weighted stop BCE.
    ad::TensorPtr loss(const AcousticOutput& out, const ad::TensorPtr& target_mel) const;

    /// Autoregressive generation; halts on the stop token or the step cap.
    AcousticOutput infer(const std::vector<std::int64_t>& ids, Rng& rng) const;

    /// Post-net residual over a [S x mel] sequence.
    ad::TensorPtr postnet(const ad::TensorPtr& mel_seq, bool training, Rng& rng) const;

    static std::vector<double> stop_targets(std::int64_t steps);

private:
    AcousticModel() = default;
    ad::TensorPtr prenet(const ad::TensorPtr& frame, bool training, Rng& rng) const;
    bool component_trains(const std::string& witness, bool training) const;
};

} // namespace tts::acoustic
