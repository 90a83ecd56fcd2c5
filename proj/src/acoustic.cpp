#include "tts/acoustic.hpp"

#include <cmath>
#include <stdexcept>

#include "tts/common.hpp"

namespace tts::acoustic {

using namespace tts::ad;

void AcousticConfig::validate() const {
    const std::int64_t extents[] = {embed_dim,        enc_conv_layers, enc_filters,
                                    enc_kernel,       enc_blstm_units, prenet_units,
                                    dec_lstm_units,   attn_dim,        attn_location_filters,
                                    attn_location_kernel, postnet_layers, postnet_filters,
                                    postnet_kernel,   mel_channels,    max_decoder_steps,
                                    reduction_factor};
    for (auto e : extents) {
        if (e <= 0) {
            throw std::invalid_argument("acoustic config: all extents must be positive");
        }
    }
    if (enc_kernel % 2 == 0 || postnet_kernel % 2 == 0 || attn_location_kernel % 2 == 0) {
        throw std::invalid_argument("acoustic config: kernel sizes must be odd");
    }
    if (enc_blstm_units % 2 != 0) {
        throw std::invalid_argument("acoustic config: enc_blstm_units must be even");
    }
    if (postnet_layers < 2) {
        throw std::invalid_argument("acoustic config: postnet needs at least 2 layers");
    }
    if (reduction_factor != 1) {
        throw std::invalid_argument("acoustic config: only reduction_factor 1 is supported");
    }
}

nlohmann::ordered_json AcousticConfig::to_json() const {
    nlohmann::ordered_json j;
    j["embed_dim"] = embed_dim;
    j["enc_conv_layers"] = enc_conv_layers;
    j["enc_filters"] = enc_filters;
    j["enc_kernel"] = enc_kernel;
    j["enc_blstm_units"] = enc_blstm_units;
    j["prenet_units"] = prenet_units;
    j["dec_lstm_units"] = dec_lstm_units;
    j["attn_dim"] = attn_dim;
    j["attn_location_filters"] = attn_location_filters;
    j["attn_location_kernel"] = attn_location_kernel;
    j["postnet_layers"] = postnet_layers;
    j["postnet_filters"] = postnet_filters;
    j["postnet_kernel"] = postnet_kernel;
    j["mel_channels"] = mel_channels;
    j["max_decoder_steps"] = max_decoder_steps;
    j["reduction_factor"] = reduction_factor;
    j["stop_threshold"] = stop_threshold;
    j["dropout"] = dropout;
    j["prenet_dropout"] = prenet_dropout;
    j["stop_pos_weight"] = stop_pos_weight;
    j["postnet_final_tanh"] = postnet_final_tanh;
    j["infer_feed_postnet"] = infer_feed_postnet;
    j["prenet_dropout_at_infer"] = prenet_dropout_at_infer;
    return j;
}

AcousticConfig AcousticConfig::from_json(const nlohmann::json& j) {
    AcousticConfig c;
    auto get = [&](const char* k, auto& field) {
        if (j.contains(k)) {
            field = j.at(k).get<std::decay_t<decltype(field)>>();
        }
    };
    get("embed_dim", c.embed_dim);
    get("enc_conv_layers", c.enc_conv_layers);
    get("enc_filters", c.enc_filters);
    get("enc_kernel", c.enc_kernel);
    get("enc_blstm_units", c.enc_blstm_units);
    get("prenet_units", c.prenet_units);
    get("dec_lstm_units", c.dec_lstm_units);
    get("attn_dim", c.attn_dim);
    get("attn_location_filters", c.attn_location_filters);
    get("attn_location_kernel", c.attn_location_kernel);
    get("postnet_layers", c.postnet_layers);
    get("postnet_filters", c.postnet_filters);
    get("postnet_kernel", c.postnet_kernel);
    get("mel_channels", c.mel_channels);
    get("max_decoder_steps", c.max_decoder_steps);
    get("reduction_factor", c.reduction_factor);
    get("stop_threshold", c.stop_threshold);
    get("dropout", c.dropout);
    get("prenet_dropout", c.prenet_dropout);
    get("stop_pos_weight", c.stop_pos_weight);
    get("postnet_final_tanh", c.postnet_final_tanh);
    get("infer_feed_postnet", c.infer_feed_postnet);
    get("prenet_dropout_at_infer", c.prenet_dropout_at_infer);
    c.validate();
    return c;
}

AcousticConfig AcousticConfig::shrunken() {
    AcousticConfig c;
    c.embed_dim = 16;
    c.enc_conv_layers = 2;
    c.enc_filters = 16;
    c.enc_kernel = 5;
    c.enc_blstm_units = 32;
    c.prenet_units = 16;
    c.dec_lstm_units = 32;
    c.attn_dim = 8;
    c.attn_location_filters = 4;
    c.attn_location_kernel = 7;
    c.postnet_layers = 2;
    c.postnet_filters = 16;
    c.postnet_kernel = 5;
    c.max_decoder_steps = 200;
    return c;
}

namespace {

void add_bn(params::ParameterArchive& store, const std::string& prefix, std::int64_t channels) {
    store.put(prefix + ".gamma", full({channels}, 1.0, true));
    store.put(prefix + ".beta", zeros({channels}, true));
    store.put(prefix + ".running_mean", zeros({channels}, false));
    store.put(prefix + ".running_var", full({channels}, 1.0, false));
    store.put(prefix + ".running_count", zeros({1}, false));
}

void add_lstm(params::ParameterArchive& store, const std::string& prefix, std::int64_t in_dim,
              std::int64_t h_dim, Rng& rng) {
    store.put(prefix + ".w_x", xavier_uniform({4 * h_dim, in_dim}, in_dim, 4 * h_dim, rng));
    store.put(prefix + ".w_h", xavier_uniform({4 * h_dim, h_dim}, h_dim, 4 * h_dim, rng));
    store.put(prefix + ".bias", zeros({4 * h_dim}, true));
}

} // namespace

AcousticModel AcousticModel::init(const AcousticConfig& cfg, const text::Vocabulary& vocab,
                                  std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    AcousticModel m;
    m.cfg = cfg;
    auto& s = m.store;

    const std::int64_t v_size = vocab.size();
    const std::int64_t h_dir = cfg.enc_blstm_units / 2;
    const std::int64_t enc_dim = cfg.enc_blstm_units;
    const std::int64_t dec_in = cfg.prenet_units + enc_dim;

    s.put("encoder.embedding.weight",
          xavier_uniform({v_size, cfg.embed_dim}, v_size, cfg.embed_dim, rng));
    std::int64_t in_ch = cfg.embed_dim;
    for (std::int64_t l = 0; l < cfg.enc_conv_layers; ++l) {
        const std::string p = "encoder.conv" + std::to_string(l);
        // no conv bias: batch normalization absorbs any constant shift
        s.put(p + ".weight", xavier_uniform({cfg.enc_filters, in_ch, cfg.enc_kernel},
                                            in_ch * cfg.enc_kernel,
                                            cfg.enc_filters * cfg.enc_kernel, rng));
        add_bn(s, p + ".bn", cfg.enc_filters);
        in_ch = cfg.enc_filters;
    }
    add_lstm(s, "encoder.blstm.fw", cfg.enc_filters, h_dir, rng);
    add_lstm(s, "encoder.blstm.bw", cfg.enc_filters, h_dir, rng);

    s.put("decoder.prenet.fc0.weight",
          xavier_uniform({cfg.prenet_units, cfg.mel_channels}, cfg.mel_channels, cfg.prenet_units,
                         rng));
    s.put("decoder.prenet.fc0.bias", zeros({cfg.prenet_units}, true));
    s.put("decoder.prenet.fc1.weight",
          xavier_uniform({cfg.prenet_units, cfg.prenet_units}, cfg.prenet_units, cfg.prenet_units,
                         rng));
    s.put("decoder.prenet.fc1.bias", zeros({cfg.prenet_units}, true));
    add_lstm(s, "decoder.lstm0", dec_in, cfg.dec_lstm_units, rng);
    add_lstm(s, "decoder.lstm1", cfg.dec_lstm_units, cfg.dec_lstm_units, rng);

    s.put("decoder.attention.query.weight",
          xavier_uniform({cfg.attn_dim, cfg.dec_lstm_units}, cfg.dec_lstm_units, cfg.attn_dim,
                         rng));
    s.put("decoder.attention.memory.weight",
          xavier_uniform({cfg.attn_dim, enc_dim}, enc_dim, cfg.attn_dim, rng));
    s.put("decoder.attention.location_conv.weight",
          xavier_uniform({cfg.attn_location_filters, 2, cfg.attn_location_kernel},
                         2 * cfg.attn_location_kernel,
                         cfg.attn_location_filters * cfg.attn_location_kernel, rng));
    s.put("decoder.attention.location_proj.weight",
          xavier_uniform({cfg.attn_dim, cfg.attn_location_filters}, cfg.attn_location_filters,
                         cfg.attn_dim, rng));
    s.put("decoder.attention.bias", zeros({cfg.attn_dim}, true));
    s.put("decoder.attention.v", xavier_uniform({cfg.attn_dim}, cfg.attn_dim, 1, rng));

    const std::int64_t proj_in = cfg.dec_lstm_units + enc_dim;
    s.put("decoder.frame_proj.weight",
          xavier_uniform({cfg.mel_channels, proj_in}, proj_in, cfg.mel_channels, rng));
    s.put("decoder.frame_proj.bias", zeros({cfg.mel_channels}, true));
    s.put("decoder.stop_proj.weight", xavier_uniform({1, proj_in}, proj_in, 1, rng));
    s.put("decoder.stop_proj.bias", zeros({1}, true));

    std::int64_t pc_in = cfg.mel_channels;
    for (std::int64_t l = 0; l < cfg.postnet_layers; ++l) {
        const bool last = (l == cfg.postnet_layers - 1);
        const std::int64_t pc_out = last ? cfg.mel_channels : cfg.postnet_filters;
        const std::string p = "postnet.conv" + std::to_string(l);
        s.put(p + ".weight",
              xavier_uniform({pc_out, pc_in, cfg.postnet_kernel}, pc_in * cfg.postnet_kernel,
                             pc_out * cfg.postnet_kernel, rng));
        if (last) {
            s.put(p + ".bias", zeros({pc_out}, true));
        } else {
            add_bn(s, p + ".bn", pc_out);
        }
        pc_in = pc_out;
    }

    s.metadata["kind"] = "acoustic";
    s.metadata["config"] = cfg.to_json();
    s.metadata["vocab"] = text::vocabulary_text(vocab);
    s.metadata["vocab_script"] = vocab.script;
    s.metadata["vocab_size"] = vocab.size();
    s.metadata["vocab_fingerprint"] = to_hex(text::vocabulary_fingerprint(vocab));
    s.metadata["seed"] = seed;
    s.metadata["steps"] = 0;
    return m;
}

AcousticModel AcousticModel::from_archive(params::ParameterArchive archive) {
    if (!archive.metadata.contains("kind") || archive.metadata["kind"] != "acoustic") {
        throw DataError("checkpoint is not an acoustic-model archive");
    }
    AcousticModel m;
    m.cfg = AcousticConfig::from_json(archive.metadata.at("config"));
    m.store = std::move(archive);
    const auto& emb = m.store.at("encoder.embedding.weight");
    const auto meta_size = m.store.metadata.at("vocab_size").get<std::int64_t>();
    if (emb->shape[0] != meta_size) {
        throw DataError("embedding rows (" + std::to_string(emb->shape[0]) +
                        ") do not match vocabulary size (" + std::to_string(meta_size) + ")");
    }
    return m;
}

text::Vocabulary AcousticModel::vocabulary() const {
    return text::vocabulary_from_text(store.metadata.at("vocab").get<std::string>());
}

bool AcousticModel::component_trains(const std::string& witness, bool training) const {
    return training && store.at(witness)->requires_grad;
}

ad::TensorPtr AcousticModel::encode_text(const std::vector<std::int64_t>& ids, bool training,
                                         Rng& rng) const {
    const auto& emb = store.at("encoder.embedding.weight");
    auto x = embedding(ids, emb); // throws on out-of-range ids
    for (std::int64_t l = 0; l < cfg.enc_conv_layers; ++l) {
        const std::string p = "encoder.conv" + std::to_string(l);
        const bool trains = component_trains(p + ".weight", training);
        auto y = conv1d(x, store.at(p + ".weight"), (cfg.enc_kernel - 1) / 2);
        y = batchnorm1d(y, store.at(p + ".bn.gamma"), store.at(p + ".bn.beta"),
                        store.at(p + ".bn.running_mean"), store.at(p + ".bn.running_var"),
                        store.at(p + ".bn.running_count"), trains);
        y = relu(y);
        x = dropout(y, cfg.dropout, trains, rng);
    }
    const std::int64_t t_len = x->rows();
    const std::int64_t h_dir = cfg.enc_blstm_units / 2;
    auto run_dir = [&](const std::string& p, bool reverse) {
        auto h = zeros({h_dir});
        auto c = zeros({h_dir});
        std::vector<TensorPtr> hs(static_cast<std::size_t>(t_len));
        for (std::int64_t i = 0; i < t_len; ++i) {
            const std::int64_t t = reverse ? t_len - 1 - i : i;
            auto [hn, cn] = lstm_cell(row(x, t), h, c, store.at(p + ".w_x"),
                                      store.at(p + ".w_h"), store.at(p + ".bias"));
            h = hn;
            c = cn;
            hs[static_cast<std::size_t>(t)] = hn;
        }
        return hs;
    };
    auto fw = run_dir("encoder.blstm.fw", false);
    auto bw = run_dir("encoder.blstm.bw", true);
    std::vector<TensorPtr> rows(static_cast<std::size_t>(t_len));
    for (std::int64_t t = 0; t < t_len; ++t) {
        rows[static_cast<std::size_t>(t)] =
            concat({fw[static_cast<std::size_t>(t)], bw[static_cast<std::size_t>(t)]}, 0);
    }
    return stack_rows(rows);
}

std::pair<ad::TensorPtr, ad::TensorPtr> AcousticModel::attention_step(
    const ad::TensorPtr& query, const ad::TensorPtr& enc_states, const ad::TensorPtr& enc_proj,
    AttentionState& state) const {
    if (enc_states->rows() < 1) {
        throw std::invalid_argument("attention_step: empty encoder sequence");
    }
    auto loc_in = stack_cols({state.prev_weights, state.cum_weights}); // [T x 2]
    auto loc_feat = conv1d(loc_in, store.at("decoder.attention.location_conv.weight"),
                           (cfg.attn_location_kernel - 1) / 2);
    auto loc_proj = linear(loc_feat, store.at("decoder.attention.location_proj.weight"));
    auto shift = add(matvec(store.at("decoder.attention.query.weight"), query),
                     store.at("decoder.attention.bias"));
    auto energies_in = tanh_op(add_rows(add(enc_proj, loc_proj), shift)); // [T x A]
    auto energies = matvec(energies_in, store.at("decoder.attention.v")); // [T]
    auto weights = softmax(energies, 0);
    auto context = vecmat(weights, enc_states);
    state.cum_weights = add(state.cum_weights, weights);
    state.prev_weights = weights;
    state.context = context;
    return {weights, context};
}

ad::TensorPtr AcousticModel::prenet(const ad::TensorPtr& frame, bool training, Rng& rng) const {
    // dropout stays on at inference by default; the sampling noise is part
    // of the autoregressive conditioning scheme
    const bool active = training || cfg.prenet_dropout_at_infer;
    auto h = relu(add(matvec(store.at("decoder.prenet.fc0.weight"), frame),
                      store.at("decoder.prenet.fc0.bias")));
    h = dropout(h, cfg.prenet_dropout, active, rng);
    h = relu(add(matvec(store.at("decoder.prenet.fc1.weight"), h),
                 store.at("decoder.prenet.fc1.bias")));
    return dropout(h, cfg.prenet_dropout, active, rng);
}

std::pair<ad::TensorPtr, ad::TensorPtr> AcousticModel::decode_step(
    const ad::TensorPtr& prev_frame, const ad::TensorPtr& enc_states,
    const ad::TensorPtr& enc_proj, AttentionState& attn, DecoderState& dec, bool training,
    Rng& rng) const {
    auto p = prenet(prev_frame, training, rng);
    auto x = concat({p, attn.context}, 0);
    auto [h1, c1] = lstm_cell(x, dec.h1, dec.c1, store.at("decoder.lstm0.w_x"),
                              store.at("decoder.lstm0.w_h"), store.at("decoder.lstm0.bias"));
    auto [h2, c2] = lstm_cell(h1, dec.h2, dec.c2, store.at("decoder.lstm1.w_x"),
                              store.at("decoder.lstm1.w_h"), store.at("decoder.lstm1.bias"));
    dec.h1 = h1;
    dec.c1 = c1;
    dec.h2 = h2;
    dec.c2 = c2;
    auto [weights, context] = attention_step(h2, enc_states, enc_proj, attn);
    (void)weights;
    auto cat = concat({h2, context}, 0);
    auto frame = add(matvec(store.at("decoder.frame_proj.weight"), cat),
                     store.at("decoder.frame_proj.bias"));
    auto stop = add(matvec(store.at("decoder.stop_proj.weight"), cat),
                    store.at("decoder.stop_proj.bias"));
    return {frame, stop};
}

ad::TensorPtr AcousticModel::postnet(const ad::TensorPtr& mel_seq, bool training,
                                     Rng& rng) const {
    (void)rng;
    auto x = mel_seq;
    for (std::int64_t l = 0; l < cfg.postnet_layers; ++l) {
        const bool last = (l == cfg.postnet_layers - 1);
        const std::string p = "postnet.conv" + std::to_string(l);
        const bool trains = component_trains(p + ".weight", training);
        auto y = conv1d(x, store.at(p + ".weight"), (cfg.postnet_kernel - 1) / 2);
        if (!last) {
            y = batchnorm1d(y, store.at(p + ".bn.gamma"), store.at(p + ".bn.beta"),
                            store.at(p + ".bn.running_mean"), store.at(p + ".bn.running_var"),
                            store.at(p + ".bn.running_count"), trains);
            y = tanh_op(y);
        } else {
            y = add_rows(y, store.at(p + ".bias"));
            if (cfg.postnet_final_tanh) {
                y = tanh_op(y);
            }
        }
        x = y;
    }
    return x;
}

AttentionState make_attention_state(std::int64_t t_len, std::int64_t enc_dim) {
    return AttentionState{zeros({t_len}), zeros({t_len}), zeros({enc_dim})};
}

AcousticOutput AcousticModel::forward_teacher_forced(const std::vector<std::int64_t>& ids,
                                                     const ad::TensorPtr& target_mel,
                                                     bool training, Rng& rng) const {
    if (target_mel->rank() != 2 || target_mel->cols() != cfg.mel_channels) {
        throw std::invalid_argument("forward_teacher_forced: target must be [S x " +
                                    std::to_string(cfg.mel_channels) + "], got " +
                                    shape_str(target_mel->shape));
    }
    const std::int64_t s_len = target_mel->rows();
    if (s_len < 1) {
        throw std::invalid_argument("forward_teacher_forced: empty target");
    }
    auto enc = encode_text(ids, training, rng);
    auto enc_proj = linear(enc, store.at("decoder.attention.memory.weight"));
    const std::int64_t t_len = enc->rows();

    AttentionState attn{zeros({t_len}), zeros({t_len}), zeros({cfg.enc_blstm_units})};
    DecoderState dec{zeros({cfg.dec_lstm_units}), zeros({cfg.dec_lstm_units}),
                     zeros({cfg.dec_lstm_units}), zeros({cfg.dec_lstm_units})};

    AcousticOutput out;
    out.steps = s_len;
    out.enc_positions = t_len;
    out.attention.reserve(static_cast<std::size_t>(s_len * t_len));
    std::vector<TensorPtr> frames;
    std::vector<TensorPtr> stops;
    frames.reserve(static_cast<std::size_t>(s_len));
    auto go_frame = zeros({cfg.mel_channels});
    for (std::int64_t t = 0; t < s_len; ++t) {
        auto prev = (t == 0) ? go_frame : row(target_mel, t - 1);
        auto [frame, stop] = decode_step(prev, enc, enc_proj, attn, dec, training, rng);
        frames.push_back(frame);
        stops.push_back(stop);
        out.attention.insert(out.attention.end(), attn.prev_weights->value.begin(),
                             attn.prev_weights->value.end());
    }
    out.pre_mel = stack_rows(frames);
    out.post_mel = add(out.pre_mel, postnet(out.pre_mel, training, rng));
    out.stop_logits = concat(stops, 0);
    out.halt = HaltReason::teacher_forced;
    return out;
}

std::vector<double> AcousticModel::stop_targets(std::int64_t steps) {
    std::vector<double> t(static_cast<std::size_t>(steps), 0.0);
    t.back() = 1.0;
    return t;
}

ad::TensorPtr AcousticModel::loss(const AcousticOutput& out,
                                  const ad::TensorPtr& target_mel) const {
    if (out.pre_mel->shape != target_mel->shape) {
        throw std::invalid_argument("loss: output shape " + shape_str(out.pre_mel->shape) +
                                    " does not match target " + shape_str(target_mel->shape));
    }
    auto total = add(mse(out.pre_mel, target_mel), mse(out.post_mel, target_mel));
    auto bce = bce_with_logits(out.stop_logits, stop_targets(out.steps), cfg.stop_pos_weight);
    return add(total, bce);
}

AcousticOutput AcousticModel::infer(const std::vector<std::int64_t>& ids, Rng& rng) const {
    NoGrad ng;
    auto enc = encode_text(ids, false, rng);
    auto enc_proj = linear(enc, store.at("decoder.attention.memory.weight"));
    const std::int64_t t_len = enc->rows();

    AttentionState attn{zeros({t_len}), zeros({t_len}), zeros({cfg.enc_blstm_units})};
    DecoderState dec{zeros({cfg.dec_lstm_units}), zeros({cfg.dec_lstm_units}),
                     zeros({cfg.dec_lstm_units}), zeros({cfg.dec_lstm_units})};

    const double stop_logit_threshold =
        std::log(cfg.stop_threshold / (1.0 - cfg.stop_threshold));
    AcousticOutput out;
    out.enc_positions = t_len;
    out.halt = HaltReason::max_steps;
    std::vector<TensorPtr> frames;
    std::vector<TensorPtr> stops;
    auto prev = zeros({cfg.mel_channels});
    for (std::int64_t t = 0; t < cfg.max_decoder_steps; ++t) {
        auto [frame, stop] = decode_step(prev, enc, enc_proj, attn, dec, false, rng);
        frames.push_back(frame);
        stops.push_back(stop);
        out.attention.insert(out.attention.end(), attn.prev_weights->value.begin(),
                             attn.prev_weights->value.end());
        if (stop->value[0] > stop_logit_threshold) {
            out.halt = HaltReason::stop_token;
            break;
        }
        if (cfg.infer_feed_postnet) {
            auto pre_so_far = stack_rows(frames);
            auto post = add(pre_so_far, postnet(pre_so_far, false, rng));
            prev = row(post, post->rows() - 1);
        } else {
            prev = frame;
        }
    }
    out.steps = static_cast<std::int64_t>(frames.size());
    out.pre_mel = stack_rows(frames);
    out.post_mel = add(out.pre_mel, postnet(out.pre_mel, false, rng));
    out.stop_logits = concat(stops, 0);
    return out;
}

} // namespace tts::acoustic
