#include "tts/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tts/common.hpp"
#include "tts/corpus.hpp"

namespace tts::pipeline {

using params::ParameterArchive;

nlohmann::ordered_json AdamSettings::to_json() const {
    nlohmann::ordered_json j;
    j["learning_rate"] = learning_rate;
    j["beta1"] = beta1;
    j["beta2"] = beta2;
    j["eps"] = eps;
    j["grad_clip_norm"] = grad_clip_norm;
    return j;
}

AdamSettings AdamSettings::from_json(const nlohmann::json& j) {
    AdamSettings s;
    s.learning_rate = j.value("learning_rate", s.learning_rate);
    s.beta1 = j.value("beta1", s.beta1);
    s.beta2 = j.value("beta2", s.beta2);
    s.eps = j.value("eps", s.eps);
    s.grad_clip_norm = j.value("grad_clip_norm", s.grad_clip_norm);
    return s;
}

bool optimizer_step(ParameterArchive& archive, const NamedGrads& grads,
                    const AdamSettings& settings, AdamState& state) {
    double norm_sq = 0.0;
    for (const auto& [name, grad] : grads) {
        const auto& t = archive.at(name);
        if (!t->requires_grad) {
            throw TrainError("optimizer_step: gradient supplied for frozen parameter '" + name +
                             "'");
        }
        if (static_cast<std::int64_t>(grad->size()) != t->size()) {
            throw TrainError("optimizer_step: gradient size mismatch for '" + name + "'");
        }
        for (double g : *grad) {
            if (!std::isfinite(g)) {
                state.rejected_nan++;
                return false;
            }
            norm_sq += g * g;
        }
    }
    const double norm = std::sqrt(norm_sq);
    const double scale = (settings.grad_clip_norm > 0 && norm > settings.grad_clip_norm)
                             ? settings.grad_clip_norm / norm
                             : 1.0;
    state.step++;
    const double bc1 = 1.0 - std::pow(settings.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(settings.beta2, static_cast<double>(state.step));
    for (const auto& [name, grad] : grads) {
        auto& t = archive.at(name);
        auto& [m, v] = state.moments[name];
        if (m.size() != grad->size()) {
            m.assign(grad->size(), 0.0);
            v.assign(grad->size(), 0.0);
        }
        for (std::size_t i = 0; i < grad->size(); ++i) {
            const double g = (*grad)[i] * scale;
            m[i] = settings.beta1 * m[i] + (1.0 - settings.beta1) * g;
            v[i] = settings.beta2 * v[i] + (1.0 - settings.beta2) * g * g;
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            t->value[i] -= settings.learning_rate * m_hat / (std::sqrt(v_hat) + settings.eps);
        }
    }
    return true;
}

ParameterArchive surgery_reset_embedding(const ParameterArchive& archive,
                                         const text::Vocabulary& vocab, std::uint64_t seed) {
    std::vector<std::string> embeddings;
    for (const auto& n : archive.order()) {
        if (n.ends_with("embedding.weight")) {
            embeddings.push_back(n);
        }
    }
    if (embeddings.size() != 1) {
        throw TrainError("surgery_reset_embedding: expected exactly one embedding tensor, found " +
                         std::to_string(embeddings.size()));
    }
    const std::string& emb_name = embeddings.front();
    const std::int64_t embed_dim = archive.at(emb_name)->shape.at(1);

    ParameterArchive out = archive.clone();
    Rng rng(seed);
    auto fresh = ad::xavier_uniform({vocab.size(), embed_dim}, vocab.size(), embed_dim, rng,
                                    archive.at(emb_name)->requires_grad);
    fresh->name = emb_name;
    out.at(emb_name) = fresh;
    out.metadata["vocab"] = text::vocabulary_text(vocab);
    out.metadata["vocab_script"] = vocab.script;
    out.metadata["vocab_size"] = vocab.size();
    out.metadata["vocab_fingerprint"] = to_hex(text::vocabulary_fingerprint(vocab));
    out.metadata["surgery"] = "reset_embedding";
    return out;
}

void apply_freeze(ParameterArchive& archive, const std::vector<std::string>& prefixes) {
    for (const auto& p : prefixes) {
        if (archive.names_with_prefix(p).empty()) {
            throw TrainError("freeze prefix '" + p + "' matches no parameters");
        }
    }
    for (const auto& n : archive.order()) {
        auto& t = archive.at(n);
        if (n.find(".running_") != std::string::npos) {
            t->requires_grad = false; // statistics buffers are never trainable
            continue;
        }
        bool frozen = false;
        for (const auto& p : prefixes) {
            if (n.rfind(p, 0) == 0) {
                frozen = true;
                break;
            }
        }
        t->requires_grad = !frozen;
    }
}

nlohmann::ordered_json StopRule::to_json() const {
    nlohmann::ordered_json j;
    j["max_steps"] = max_steps;
    j["plateau_window"] = plateau_window;
    j["plateau_min_rel_improvement"] = plateau_min_rel_improvement;
    if (convergence_loss) {
        j["convergence_loss"] = *convergence_loss;
    }
    return j;
}

StopRule StopRule::from_json(const nlohmann::json& j) {
    StopRule s;
    s.max_steps = j.value("max_steps", s.max_steps);
    s.plateau_window = j.value("plateau_window", s.plateau_window);
    s.plateau_min_rel_improvement =
        j.value("plateau_min_rel_improvement", s.plateau_min_rel_improvement);
    if (j.contains("convergence_loss") && !j["convergence_loss"].is_null()) {
        s.convergence_loss = j["convergence_loss"].get<double>();
    }
    return s;
}

void StagePlan::validate() const {
    if (stage != "english_pretrain" && stage != "synthetic_pretrain" &&
        stage != "target_finetune") {
        throw TrainError("stage plan: unknown stage id '" + stage + "'");
    }
    if (stage == "english_pretrain") {
        if (!init_archive.empty()) {
            throw TrainError("stage plan: english_pretrain trains from scratch and takes no "
                             "init archive");
        }
    } else if (init_archive.empty()) {
        throw TrainError("stage plan: stage '" + stage + "' requires an init archive");
    }
    if (surgery != "none" && surgery != "reset_embedding") {
        throw TrainError("stage plan: unknown surgery directive '" + surgery + "'");
    }
    if (surgery == "reset_embedding" && init_archive.empty()) {
        throw TrainError("stage plan: reset_embedding needs an init archive to operate on");
    }
    if (manifest.empty() || out_archive.empty()) {
        throw TrainError("stage plan: manifest and out_archive are required");
    }
    if (batch_size < 1 || stop.max_steps < 1) {
        throw TrainError("stage plan: batch_size and max_steps must be positive");
    }
}

nlohmann::ordered_json StagePlan::to_json() const {
    nlohmann::ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["stage"] = stage;
    j["manifest"] = manifest;
    if (!init_archive.empty()) {
        j["init_archive"] = init_archive;
    }
    j["surgery"] = surgery;
    j["freeze_prefixes"] = freeze_prefixes;
    j["optimizer"] = optimizer.to_json();
    j["stop"] = stop.to_json();
    j["batch_size"] = batch_size;
    j["seed"] = seed;
    j["checkpoint_every"] = checkpoint_every;
    j["out_archive"] = out_archive;
    if (!report_path.empty()) {
        j["report"] = report_path;
    }
    if (init_archive.empty()) {
        j["model"] = model.to_json();
    }
    return j;
}

StagePlan StagePlan::from_json(const nlohmann::json& j) {
    if (!j.contains("schema_version") || j["schema_version"].get<int>() != kSchemaVersion) {
        throw TrainError("stage plan: missing or unsupported schema_version");
    }
    StagePlan p;
    p.stage = j.at("stage").get<std::string>();
    p.manifest = j.at("manifest").get<std::string>();
    p.init_archive = j.value("init_archive", "");
    p.surgery = j.value("surgery", "none");
    if (j.contains("freeze_prefixes")) {
        p.freeze_prefixes = j["freeze_prefixes"].get<std::vector<std::string>>();
    }
    if (j.contains("optimizer")) {
        p.optimizer = AdamSettings::from_json(j["optimizer"]);
    }
    if (j.contains("stop")) {
        p.stop = StopRule::from_json(j["stop"]);
    }
    p.batch_size = j.value("batch_size", p.batch_size);
    p.seed = j.value("seed", p.seed);
    p.checkpoint_every = j.value("checkpoint_every", p.checkpoint_every);
    p.out_archive = j.at("out_archive").get<std::string>();
    p.report_path = j.value("report", "");
    if (j.contains("model")) {
        p.model = acoustic::AcousticConfig::from_json(j["model"]);
    }
    p.validate();
    return p;
}

StagePlan StagePlan::load(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw TrainError("stage plan " + path + ": " + e.what());
    }
    return from_json(j);
}

void StagePlan::save(const std::string& path) const {
    write_file(path, to_json().dump(2) + "\n");
}

nlohmann::ordered_json StageReport::to_json() const {
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["stage"] = stage;
    j["steps"] = steps;
    j["halt_reason"] = halt_reason;
    j["converged"] = converged;
    j["nan_steps"] = nan_steps;
    j["final_loss"] = final_loss;
    nlohmann::ordered_json curve = nlohmann::ordered_json::array();
    for (const auto& [step, loss] : loss_curve) {
        curve.push_back(nlohmann::ordered_json::array({step, loss}));
    }
    j["loss_curve"] = curve;
    nlohmann::ordered_json deltas;
    for (const auto& [prefix, count] : param_deltas) {
        deltas[prefix] = count;
    }
    j["param_deltas"] = deltas;
    return j;
}

ad::TensorPtr batch_loss(const acoustic::AcousticModel& model,
                         const std::vector<acoustic::AcousticOutput>& outs,
                         const std::vector<ad::TensorPtr>& targets) {
    if (outs.empty() || outs.size() != targets.size()) {
        throw TrainError("batch_loss: outputs and targets disagree");
    }
    std::int64_t total_frames = 0;
    ad::TensorPtr sq_total, bce_total;
    for (std::size_t i = 0; i < outs.size(); ++i) {
        const auto& out = outs[i];
        total_frames += out.steps;
        auto sq = ad::add(ad::sum_sq_err(out.pre_mel, targets[i]),
                          ad::sum_sq_err(out.post_mel, targets[i]));
        auto bce = ad::bce_with_logits_sum(out.stop_logits,
                                           acoustic::AcousticModel::stop_targets(out.steps),
                                           model.cfg.stop_pos_weight);
        sq_total = sq_total ? ad::add(sq_total, sq) : sq;
        bce_total = bce_total ? ad::add(bce_total, bce) : bce;
    }
    const double mel_norm = 1.0 / static_cast<double>(total_frames * model.cfg.mel_channels);
    const double stop_norm = 1.0 / static_cast<double>(total_frames);
    return ad::add(ad::scale(sq_total, mel_norm), ad::scale(bce_total, stop_norm));
}

namespace {

struct PreparedItem {
    std::vector<std::int64_t> ids;
    ad::TensorPtr mel;
};

std::uint64_t tensor_hash(const ad::TensorPtr& t) {
    return fnv1a64(t->value.data(), t->value.size() * sizeof(double));
}

NamedGrads collect_grads(const ParameterArchive& store) {
    NamedGrads grads;
    for (const auto& n : store.order()) {
        const auto& t = store.at(n);
        if (t->requires_grad && !t->grad.empty()) {
            grads.emplace_back(n, &t->grad);
        }
    }
    return grads;
}

void clear_grads(const ParameterArchive& store) {
    for (const auto& n : store.order()) {
        store.at(n)->grad.clear();
    }
}

} // namespace

StageResult run_stage(const StagePlan& plan) {
    plan.validate();
    auto manifest = corpus::load_manifest(plan.manifest);
    if (manifest.items.empty()) {
        throw TrainError("stage '" + plan.stage + "': manifest has no items");
    }

    // resolve model + vocabulary; checkpoint surgery happens here, before
    // any training
    acoustic::AcousticModel model = [&] {
        if (plan.init_archive.empty()) {
            auto vocab = text::build_vocabulary(manifest.texts(), manifest.script);
            return acoustic::AcousticModel::init(plan.model, vocab, plan.seed);
        }
        auto m = acoustic::AcousticModel::from_archive(params::load_archive(plan.init_archive));
        if (plan.surgery == "reset_embedding") {
            auto vocab = text::build_vocabulary(manifest.texts(), manifest.script);
            auto rebuilt = surgery_reset_embedding(m.store, vocab, plan.seed);
            return acoustic::AcousticModel::from_archive(std::move(rebuilt));
        }
        const auto vocab = m.vocabulary();
        if (vocab.script != manifest.script) {
            throw TrainError("stage '" + plan.stage + "': corpus script '" + manifest.script +
                             "' differs from checkpoint script '" + vocab.script +
                             "'; reset_embedding surgery is required");
        }
        for (const auto& t : manifest.texts()) {
            if (!vocab.covers(t)) {
                throw TrainError("stage '" + plan.stage +
                                 "': corpus text contains codepoints outside the checkpoint "
                                 "vocabulary; reset_embedding surgery is required");
            }
        }
        return m;
    }();
    apply_freeze(model.store, plan.freeze_prefixes);

    const auto vocab = model.vocabulary();
    const auto fb = dsp::make_mel_filterbank();
    std::vector<PreparedItem> items;
    items.reserve(manifest.items.size());
    for (std::size_t i = 0; i < manifest.items.size(); ++i) {
        PreparedItem it;
        it.ids = text::encode(manifest.items[i].text, vocab);
        auto wav = audio::load_wav(manifest.audio_path(i));
        auto mel = dsp::mel_spectrogram(wav, fb);
        it.mel = ad::make_tensor({mel.frames, mel.channels}, std::move(mel.data), false);
        items.push_back(std::move(it));
    }

    // snapshot for the parameter-delta summary
    std::unordered_map<std::string, std::uint64_t> initial_hash;
    for (const auto& n : model.store.order()) {
        initial_hash[n] = tensor_hash(model.store.at(n));
    }

    // length-bucketed batches, shuffled per epoch
    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return items[a].ids.size() < items[b].ids.size();
    });
    std::vector<std::vector<std::size_t>> buckets;
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(plan.batch_size)) {
        std::vector<std::size_t> b;
        for (std::size_t j = i;
             j < std::min(order.size(), i + static_cast<std::size_t>(plan.batch_size)); ++j) {
            b.push_back(order[j]);
        }
        buckets.push_back(std::move(b));
    }

    Rng master(plan.seed);
    StageReport report;
    report.stage = plan.stage;
    report.halt_reason = "max_steps";

    std::vector<std::size_t> batch_order;
    std::size_t batch_cursor = 0;
    std::uint64_t epoch = 0;
    AdamState adam;
    std::int64_t step = 0;
    while (step < plan.stop.max_steps) {
        if (batch_cursor == 0 || batch_cursor >= batch_order.size()) {
            batch_order.resize(buckets.size());
            std::iota(batch_order.begin(), batch_order.end(), 0);
            auto shuffle_rng = master.fork(epoch++);
            shuffle_rng.shuffle(batch_order);
            batch_cursor = 0;
        }
        const auto& batch = buckets[batch_order[batch_cursor++]];

        clear_grads(model.store);
        std::vector<acoustic::AcousticOutput> outs;
        std::vector<ad::TensorPtr> targets;
        for (auto idx : batch) {
            outs.push_back(model.forward_teacher_forced(items[idx].ids, items[idx].mel, true,
                                                        master));
            targets.push_back(items[idx].mel);
        }
        auto loss = batch_loss(model, outs, targets);
        const double loss_value = loss->scalar();
        if (!std::isfinite(loss_value)) {
            report.nan_steps++;
            ++step;
            continue;
        }
        ad::backward(loss);
        const auto grads = collect_grads(model.store);
        optimizer_step(model.store, grads, plan.optimizer, adam);
        report.nan_steps = adam.rejected_nan;
        ++step;
        report.loss_curve.emplace_back(step, loss_value);

        if (plan.checkpoint_every > 0 && step % plan.checkpoint_every == 0 &&
            step < plan.stop.max_steps) {
            model.store.metadata["stage"] = plan.stage;
            model.store.metadata["seed"] = plan.seed;
            model.store.metadata["steps"] = step;
            params::save_archive(model.store, plan.out_archive);
        }

        // plateau rule on windowed means
        const std::int64_t w = plan.stop.plateau_window;
        if (w > 0 && static_cast<std::int64_t>(report.loss_curve.size()) >= 2 * w) {
            double last = 0.0, prev = 0.0;
            const std::size_t n = report.loss_curve.size();
            for (std::int64_t i = 0; i < w; ++i) {
                last += report.loss_curve[n - 1 - static_cast<std::size_t>(i)].second;
                prev += report.loss_curve[n - 1 - static_cast<std::size_t>(w + i)].second;
            }
            last /= static_cast<double>(w);
            prev /= static_cast<double>(w);
            const double improvement = (prev - last) / std::max(std::fabs(prev), 1e-12);
            if (improvement < plan.stop.plateau_min_rel_improvement) {
                report.halt_reason = "plateau";
                break;
            }
        }
    }
    report.steps = step;
    if (!report.loss_curve.empty()) {
        report.final_loss = report.loss_curve.back().second;
    }
    if (plan.stop.convergence_loss) {
        const std::size_t w = std::min<std::size_t>(report.loss_curve.size(), 10);
        double mean = 0.0;
        for (std::size_t i = 0; i < w; ++i) {
            mean += report.loss_curve[report.loss_curve.size() - 1 - i].second;
        }
        mean = (w > 0) ? mean / static_cast<double>(w) : report.final_loss;
        report.converged = mean < *plan.stop.convergence_loss;
    }

    for (const char* prefix : {"encoder.", "decoder.", "postnet."}) {
        std::int64_t changed = 0;
        for (const auto& n : model.store.names_with_prefix(prefix)) {
            if (tensor_hash(model.store.at(n)) != initial_hash[n]) {
                ++changed;
            }
        }
        report.param_deltas[prefix] = changed;
    }

    model.store.metadata["stage"] = plan.stage;
    model.store.metadata["seed"] = plan.seed;
    model.store.metadata["steps"] = report.steps;
    nlohmann::ordered_json prov = nlohmann::ordered_json::array();
    if (model.store.metadata.contains("provenance")) {
        prov = model.store.metadata["provenance"];
    }
    nlohmann::ordered_json stamp;
    stamp["stage"] = plan.stage;
    stamp["steps"] = report.steps;
    stamp["id"] = to_hex(params::archive_content_id(model.store));
    prov.push_back(stamp);
    model.store.metadata["provenance"] = prov;

    params::save_archive(model.store, plan.out_archive);
    if (!plan.report_path.empty()) {
        write_file(plan.report_path, report.to_json().dump(2) + "\n");
    }
    return StageResult{std::move(model.store), std::move(report)};
}

params::ParameterArchive run_recipe(const std::vector<StagePlan>& plans) {
    if (plans.empty()) {
        throw TrainError("run_recipe: no stage plans");
    }
    for (std::size_t i = 0; i < plans.size(); ++i) {
        plans[i].validate();
        if (i > 0 && plans[i].init_archive != plans[i - 1].out_archive) {
            throw TrainError("run_recipe: stage " + std::to_string(i + 1) + " ('" +
                             plans[i].stage + "') must chain from the previous output '" +
                             plans[i - 1].out_archive + "', got '" + plans[i].init_archive + "'");
        }
    }
    StageResult last;
    for (const auto& plan : plans) {
        last = run_stage(plan);
    }
    return std::move(last.archive);
}

FlowTrainResult train_flow(const flow::FlowConfig& cfg,
                           const std::vector<std::pair<std::vector<double>,
                                                       dsp::MelSpectrogram>>& clips,
                           std::int64_t steps, std::int64_t crop_samples,
                           const AdamSettings& settings, std::uint64_t seed) {
    if (clips.empty()) {
        throw TrainError("train_flow: no clips");
    }
    if (crop_samples % cfg.n_group != 0) {
        throw TrainError("train_flow: crop length must be divisible by the group size");
    }
    FlowTrainResult result{flow::FlowModel::init(cfg, seed), {}};
    auto& model = result.model;
    Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
    AdamState adam;
    for (std::int64_t step = 0; step < steps; ++step) {
        const auto& [audio_samples, mel] =
            clips[static_cast<std::size_t>(rng.uniform_int(clips.size()))];
        const std::int64_t usable =
            std::min<std::int64_t>(static_cast<std::int64_t>(audio_samples.size()),
                                   mel.frames * cfg.hop);
        const std::int64_t crop = std::min(crop_samples, usable - usable % cfg.n_group);
        if (crop < cfg.n_group) {
            throw TrainError("train_flow: clip shorter than one group");
        }
        const std::int64_t max_off = usable - crop;
        std::int64_t offset = (max_off > 0)
                                  ? static_cast<std::int64_t>(rng.uniform_int(
                                        static_cast<std::uint64_t>(max_off / cfg.n_group + 1))) *
                                        cfg.n_group
                                  : 0;
        const std::int64_t positions = crop / cfg.n_group;
        // conditioning rows follow the absolute sample position of the crop
        std::vector<double> cond(static_cast<std::size_t>(positions * cfg.mel_channels));
        for (std::int64_t t = 0; t < positions; ++t) {
            const std::int64_t frame =
                std::min<std::int64_t>((offset + t * cfg.n_group) / cfg.hop, mel.frames - 1);
            std::copy_n(mel.data.data() + frame * mel.channels, cfg.mel_channels,
                        cond.data() + t * cfg.mel_channels);
        }
        auto squeezed = ad::make_tensor(
            {positions, cfg.n_group},
            std::vector<double>(audio_samples.begin() + offset,
                                audio_samples.begin() + offset + crop),
            false);
        auto cond_t = ad::make_tensor({positions, cfg.mel_channels}, std::move(cond), false);

        clear_grads(model.store);
        auto out = model.forward_squeezed(squeezed, cond_t);
        auto loss = model.nll(out, cfg.sigma);
        const double loss_value = loss->scalar();
        result.losses.push_back(loss_value);
        if (!std::isfinite(loss_value)) {
            adam.rejected_nan++;
            continue;
        }
        ad::backward(loss);
        optimizer_step(model.store, collect_grads(model.store), settings, adam);
    }
    model.store.metadata["steps"] = steps;
    return result;
}

} // namespace tts::pipeline
