// Command-line surface for the TTS training pipeline: corpus preparation,
// synthetic-corpus generation, staged training, checkpoint surgery,
// inference, plots, and MOS reports.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tts/acoustic.hpp"
#include "tts/audio.hpp"
#include "tts/common.hpp"
#include "tts/corpus.hpp"
#include "tts/dsp.hpp"
#include "tts/flow.hpp"
#include "tts/pipeline.hpp"
#include "tts/report.hpp"
#include "tts/text.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitTraining = 4;

std::vector<std::string> read_lines(const std::string& path) {
    const std::string body = tts::read_file(path);
    std::vector<std::string> lines;
    std::string cur;
    for (char c : body) {
        if (c == '\n') {
            if (!cur.empty()) {
                lines.push_back(cur);
            }
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    if (!cur.empty()) {
        lines.push_back(cur);
    }
    return lines;
}

tts::dsp::MelSpectrogram mel_from_acoustic(const tts::acoustic::AcousticOutput& out,
                                           std::int64_t channels) {
    tts::dsp::MelSpectrogram mel;
    mel.frames = out.steps;
    mel.channels = channels;
    mel.data = out.post_mel->value;
    return mel;
}

int run_infer(const std::string& ckpt, const std::string& text_arg, const std::string& vocoder,
              const std::string& out_wav, const std::string& plot_align_path,
              const std::string& plot_mel_path, const std::string& save_mel_path,
              const std::string& save_att_path, int gl_iters, double sigma, std::uint64_t seed) {
    auto model = tts::acoustic::AcousticModel::from_archive(tts::params::load_archive(ckpt));
    const auto vocab = model.vocabulary();
    const std::string normalized = tts::text::normalize(text_arg);
    std::int64_t dropped = 0;
    const auto ids = tts::text::encode(normalized, vocab, &dropped);
    if (dropped > 0) {
        std::cerr << "warning: dropped " << dropped
                  << " codepoint(s) outside the checkpoint vocabulary\n";
    }
    tts::Rng rng(seed);
    auto out = model.infer(ids, rng);
    std::cerr << "decoder emitted " << out.steps << " frames ("
              << (out.halt == tts::acoustic::HaltReason::stop_token ? "stop token"
                                                                    : "max steps reached")
              << ")\n";
    auto mel = mel_from_acoustic(out, model.cfg.mel_channels);

    tts::audio::Waveform wav;
    if (vocoder == "griffinlim") {
        const auto fb = tts::dsp::make_mel_filterbank();
        wav = tts::dsp::griffin_lim(mel, fb, gl_iters).waveform;
    } else if (vocoder.rfind("flow:", 0) == 0) {
        auto fm = tts::flow::FlowModel::from_archive(
            tts::params::load_archive(vocoder.substr(5)));
        wav = fm.synthesize(mel, sigma, rng);
    } else {
        std::cerr << "error: --vocoder must be 'griffinlim' or 'flow:<checkpoint>'\n";
        return kExitUsage;
    }
    tts::audio::save_wav(wav, out_wav);
    std::cerr << "wrote " << out_wav << " (" << wav.samples.size() << " samples)\n";

    if (!plot_align_path.empty()) {
        tts::report::plot_alignment(out.attention, out.steps, out.enc_positions, plot_align_path);
    }
    if (!plot_mel_path.empty()) {
        tts::report::plot_spectrogram(mel, plot_mel_path);
    }
    if (!save_mel_path.empty()) {
        tts::dsp::save_mel(mel, save_mel_path);
    }
    if (!save_att_path.empty()) {
        tts::dsp::MelSpectrogram att;
        att.frames = out.steps;
        att.channels = out.enc_positions;
        att.data = out.attention;
        tts::dsp::save_mel(att, save_att_path);
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale neural TTS training pipeline"};
    app.require_subcommand(1);
    std::uint64_t seed = 1234;
    app.add_option("--seed", seed, "global random seed");

    // prepare
    auto* prepare = app.add_subcommand("prepare", "ingest and canonicalize a raw corpus");
    std::string raw_dir, transcripts, out_dir, corpus_name = "corpus", script = "roman";
    prepare->add_option("--raw", raw_dir, "directory with raw audio")->required();
    prepare->add_option("--transcripts", transcripts, "TSV: relative_path<TAB>text")->required();
    prepare->add_option("--out", out_dir, "prepared corpus root")->required();
    prepare->add_option("--corpus", corpus_name, "corpus label");
    prepare->add_option("--script", script, "script label (roman, devanagari, ...)");

    // synth-corpus
    auto* synth = app.add_subcommand("synth-corpus", "generate a synthetic corpus via a TTS client");
    std::string texts_file, client_spec = "stub", voice = "default";
    synth->add_option("--texts", texts_file, "text file, one utterance per line")->required();
    synth->add_option("--client", client_spec, "'stub' or a base URL like http://host:port");
    synth->add_option("--out", out_dir, "prepared corpus root")->required();
    synth->add_option("--corpus", corpus_name, "corpus label");
    synth->add_option("--script", script, "script label");
    synth->add_option("--voice", voice, "voice id passed to the client");

    // train
    auto* train = app.add_subcommand("train", "run one training stage from a plan file");
    std::string plan_path;
    train->add_option("--plan", plan_path, "stage plan JSON")->required();

    // recipe
    auto* recipe = app.add_subcommand("recipe", "run chained training stages");
    std::vector<std::string> plan_paths;
    recipe->add_option("--plans", plan_paths, "stage plan JSON files, in order")
        ->required()
        ->expected(-1);

    // surgery
    auto* surgery = app.add_subcommand("surgery", "reset the embedding for a new vocabulary");
    std::string in_ckpt, vocab_path, out_ckpt;
    surgery->add_option("--in", in_ckpt, "input checkpoint")->required();
    surgery->add_option("--vocab", vocab_path, "vocabulary file")->required();
    surgery->add_option("--out", out_ckpt, "output checkpoint")->required();

    // infer
    auto* infer = app.add_subcommand("infer", "synthesize speech from text");
    std::string ckpt, text_arg, vocoder = "griffinlim", out_wav;
    std::string plot_align_path, plot_mel_path, save_mel_path, save_att_path;
    int gl_iters = 60;
    double sigma = 0.6;
    infer->add_option("--ckpt", ckpt, "acoustic checkpoint")->required();
    infer->add_option("--text", text_arg, "input text")->required();
    infer->add_option("--vocoder", vocoder, "'griffinlim' or 'flow:<checkpoint>'");
    infer->add_option("--out", out_wav, "output wav path")->required();
    infer->add_option("--plot-align", plot_align_path, "write attention alignment PGM");
    infer->add_option("--plot-mel", plot_mel_path, "write spectrogram PGM");
    infer->add_option("--save-mel", save_mel_path, "write predicted mel (MEL1)");
    infer->add_option("--save-att", save_att_path, "write attention matrix (MEL1)");
    infer->add_option("--gl-iters", gl_iters, "griffin-lim iterations");
    infer->add_option("--sigma", sigma, "flow sampling temperature");

    // train-flow
    auto* train_flow_cmd = app.add_subcommand("train-flow", "train the flow vocoder on a corpus");
    std::string flow_manifest, flow_out;
    std::int64_t flow_steps = 300, flow_crop = 4096;
    double flow_lr = 1e-3;
    tts::flow::FlowConfig flow_cfg;
    train_flow_cmd->add_option("--manifest", flow_manifest, "prepared corpus manifest")->required();
    train_flow_cmd->add_option("--out", flow_out, "output checkpoint")->required();
    train_flow_cmd->add_option("--steps", flow_steps, "training steps");
    train_flow_cmd->add_option("--crop", flow_crop, "crop length in samples");
    train_flow_cmd->add_option("--lr", flow_lr, "learning rate");
    train_flow_cmd->add_option("--flows", flow_cfg.n_flows, "number of flow steps");
    train_flow_cmd->add_option("--wn-channels", flow_cfg.wn_channels, "conditioning net width");
    train_flow_cmd->add_option("--wn-layers", flow_cfg.wn_layers, "conditioning net depth");

    // plots
    auto* plot_align = app.add_subcommand("plot-align", "render an attention matrix to PGM");
    std::string att_path, out_pgm;
    int pixel_scale = 1;
    plot_align->add_option("--att", att_path, "attention matrix (MEL1, steps x positions)")
        ->required();
    plot_align->add_option("--out", out_pgm, "output PGM")->required();
    plot_align->add_option("--scale", pixel_scale, "pixels per cell");

    auto* plot_mel = app.add_subcommand("plot-mel", "render a mel matrix to PGM");
    std::string mel_path;
    plot_mel->add_option("--mel", mel_path, "mel file (MEL1)")->required();
    plot_mel->add_option("--out", out_pgm, "output PGM")->required();
    plot_mel->add_option("--scale", pixel_scale, "pixels per cell");

    // mos-report
    auto* mos = app.add_subcommand("mos-report", "aggregate listener ratings per system");
    std::string ratings_path, mos_out;
    mos->add_option("--ratings", ratings_path, "CSV: utterance_id,listener_id,score,system")
        ->required();
    mos->add_option("--out", mos_out, "also write the report to this file");

    // validate
    auto* validate_cmd = app.add_subcommand("validate", "check a manifest's invariants");
    std::string val_manifest, val_vocab;
    validate_cmd->add_option("--manifest", val_manifest, "manifest to check")->required();
    validate_cmd->add_option("--vocab", val_vocab, "optional target vocabulary file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*prepare) {
            auto result = tts::corpus::ingest(raw_dir, transcripts, out_dir, corpus_name, script);
            std::cerr << "prepared " << result.manifest.items.size() << " items, skipped "
                      << result.skipped << "\n";
            for (const auto& line : result.skip_log) {
                std::cerr << "  skipped: " << line << "\n";
            }
            std::cout << (std::filesystem::path(out_dir) / corpus_name / "manifest.jsonl").string()
                      << "\n";
        } else if (*synth) {
            auto texts = read_lines(texts_file);
            auto client = tts::corpus::make_client(client_spec);
            auto result =
                tts::corpus::generate_synthetic(texts, *client, out_dir, corpus_name, script, voice);
            std::cerr << "generated " << result.manifest.items.size() << " items, "
                      << result.failures.size() << " failures\n";
            for (const auto& f : result.failures) {
                std::cerr << "  failed item " << f.index << ": " << f.error << "\n";
            }
            std::cout << (std::filesystem::path(out_dir) / corpus_name / "manifest.jsonl").string()
                      << "\n";
        } else if (*train) {
            auto plan = tts::pipeline::StagePlan::load(plan_path);
            auto result = tts::pipeline::run_stage(plan);
            std::cerr << "stage " << result.report.stage << ": " << result.report.steps
                      << " steps, halt=" << result.report.halt_reason
                      << ", final loss=" << result.report.final_loss << "\n";
            std::cout << plan.out_archive << "\n";
        } else if (*recipe) {
            std::vector<tts::pipeline::StagePlan> plans;
            for (const auto& p : plan_paths) {
                plans.push_back(tts::pipeline::StagePlan::load(p));
            }
            auto archive = tts::pipeline::run_recipe(plans);
            std::cerr << "recipe complete: " << plans.size() << " stages\n";
            std::cout << plans.back().out_archive << "\n";
        } else if (*surgery) {
            auto archive = tts::params::load_archive(in_ckpt);
            auto vocab = tts::text::load_vocabulary(vocab_path);
            auto rebuilt = tts::pipeline::surgery_reset_embedding(archive, vocab, seed);
            tts::params::save_archive(rebuilt, out_ckpt);
            std::cerr << "embedding reset to " << vocab.size() << " symbols\n";
            std::cout << out_ckpt << "\n";
        } else if (*infer) {
            return run_infer(ckpt, text_arg, vocoder, out_wav, plot_align_path, plot_mel_path,
                             save_mel_path, save_att_path, gl_iters, sigma, seed);
        } else if (*train_flow_cmd) {
            auto manifest = tts::corpus::load_manifest(flow_manifest);
            const auto fb = tts::dsp::make_mel_filterbank();
            std::vector<std::pair<std::vector<double>, tts::dsp::MelSpectrogram>> clips;
            for (std::size_t i = 0; i < manifest.items.size(); ++i) {
                auto w = tts::audio::load_wav(manifest.audio_path(i));
                auto mel = tts::dsp::mel_spectrogram(w, fb);
                clips.emplace_back(std::move(w.samples), std::move(mel));
            }
            tts::pipeline::AdamSettings settings;
            settings.learning_rate = flow_lr;
            auto result = tts::pipeline::train_flow(flow_cfg, clips, flow_steps, flow_crop,
                                                    settings, seed);
            tts::params::save_archive(result.model.store, flow_out);
            std::cerr << "flow trained for " << flow_steps << " steps, final nll "
                      << (result.losses.empty() ? 0.0 : result.losses.back()) << "\n";
            std::cout << flow_out << "\n";
        } else if (*plot_align) {
            auto att = tts::dsp::load_mel(att_path);
            tts::report::plot_alignment(att.data, att.frames, att.channels, out_pgm, pixel_scale);
            std::cout << out_pgm << "\n";
        } else if (*plot_mel) {
            auto mel = tts::dsp::load_mel(mel_path);
            tts::report::plot_spectrogram(mel, out_pgm, pixel_scale);
            std::cout << out_pgm << "\n";
        } else if (*mos) {
            auto ratings = tts::report::load_ratings(ratings_path);
            const auto block = tts::report::format_mos_report(tts::report::mos_report(ratings));
            std::cout << block;
            if (!mos_out.empty()) {
                tts::write_file(mos_out, block);
            }
        } else if (*validate_cmd) {
            auto manifest = tts::corpus::load_manifest(val_manifest);
            tts::text::Vocabulary vocab;
            const tts::text::Vocabulary* vocab_ptr = nullptr;
            if (!val_vocab.empty()) {
                vocab = tts::text::load_vocabulary(val_vocab);
                vocab_ptr = &vocab;
            }
            auto report = tts::corpus::validate(manifest, vocab_ptr);
            std::cout << report.to_json().dump(2) << "\n";
            if (!report.all_passed()) {
                return kExitData;
            }
        }
    } catch (const tts::TrainError& e) {
        std::cerr << "training error: " << e.what() << "\n";
        return kExitTraining;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitOk;
}
