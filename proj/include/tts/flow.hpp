#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "tts/audio.hpp"
#include "tts/dsp.hpp"
#include "tts/ops.hpp"
#include "tts/params.hpp"
#include "tts/tensor.hpp"

namespace tts::flow {

struct FlowConfig {
    std::int64_t n_flows = 4;
    std::int64_t n_group = 8;
    std::int64_t n_early_every = 2;
    std::int64_t n_early_size = 2;
    std::int64_t wn_layers = 4;
    std::int64_t wn_channels = 64;
    std::int64_t wn_kernel = 3;
    std::int64_t mel_channels = 80;
    std::int64_t hop = 192;
    double sigma = 1.0;

    void validate() const;
    nlohmann::ordered_json to_json() const;
    static FlowConfig from_json(const nlohmann::json& j);

    /// Channel count entering each flow step after early outputs.
    std::vector<std::int64_t> channel_schedule() const;
};

struct FlowForward {
    ad::TensorPtr z;       // [positions x n_group]
    ad::TensorPtr log_det; // scalar
};

/// Mel-conditioned invertible map between audio and a spherical Gaussian:
/// stacked (invertible 1x1 mixing, affine coupling) steps with early
/// outputs, trained by exact likelihood and inverted exactly for synthesis.
class FlowModel {
public:
    FlowConfig cfg;
    params::ParameterArchive store;

    static FlowModel init(const FlowConfig& cfg, std::uint64_t seed);
    static FlowModel from_archive(params::ParameterArchive archive);

    /// audio length must be divisible by n_group and covered by the mel.
    FlowForward forward(const std::vector<double>& audio,
                        const dsp::MelSpectrogram& mel) const;
    FlowForward forward_squeezed(const ad::TensorPtr& squeezed,
                                 const ad::TensorPtr& cond) const;

    /// Exact inverse of forward (values only, no trace).
    std::vector<double> inverse(const std::vector<double>& z,
                                const dsp::MelSpectrogram& mel) const;

    ad::TensorPtr nll(const FlowForward& out, double sigma) const;

    /// Sample z ~ N(0, sigma_infer^2 I) and invert; output length is
    /// mel.frames * hop.
    audio::Waveform synthesize(const dsp::MelSpectrogram& mel, double sigma_infer,
                               Rng& rng) const;

    /// Conditioning matrix for a given number of squeezed positions:
    /// nearest mel frame repeated hop/n_group times.
    ad::TensorPtr conditioning(const dsp::MelSpectrogram& mel, std::int64_t positions) const;

    /// True when every mixing matrix is invertible (|det| > 1e-8).
    bool mixing_invertible() const;

private:
    FlowModel() = default;
    // WN conditioning network; returns (log_s, shift), each [P x nb].
    std::pair<ad::TensorPtr, ad::TensorPtr> wn(std::int64_t k, const ad::TensorPtr& xa,
                                               const ad::TensorPtr& cond) const;
};

} // namespace tts::flow
