// Command-line front end: gen-data, train, eval, gradcheck, export-attention.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "ifecf/io.hpp"

using namespace ifecf;
using json = nlohmann::json;

namespace {

// Exit codes.
constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

struct UsageError : Error {
    using Error::Error;
};

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

RunConfig load_run_config(const std::string& path) {
    RunConfig cfg = path.empty() ? RunConfig{} : RunConfig::load(path);
    cfg.apply_env_overrides();
    return cfg;
}

void check_dataset_shapes(const std::vector<Example>& examples, const ModelConfig& m) {
    for (const Example& e : examples) {
        if (e.eeg.shape() != Shape{m.eeg_channels, m.frames}) {
            throw UsageError("dataset EEG windows are " + shape_str(e.eeg.shape()) + " but the config expects " +
                             shape_str({m.eeg_channels, m.frames}));
        }
    }
}

// ---------------------------------------------------------------------------

struct GenDataOptions {
    std::string out;
    SynthConfig synth;
};

int cmd_gen_data(const GenDataOptions& o) {
    o.synth.validate();
    const Manifest m = write_synthetic_dataset(o.out, o.synth);
    std::size_t held = 0;
    for (const auto& e : m.entries) held += e.split == Split::held_out_subjects;
    std::cout << "wrote " << m.entries.size() << " pairs (" << o.synth.n_subjects << " subjects, "
              << held << " held-out-subject pairs) to " << o.out << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------

struct TrainOptions {
    std::string data, config, out, variant, log;
    bool with_optim = false;
};

int cmd_train(const TrainOptions& o) {
    RunConfig cfg = load_run_config(o.config);
    if (!o.variant.empty()) cfg.model.variant = parse_variant(o.variant);
    cfg.validate();
    const std::vector<Example> examples = load_dataset(o.data, cfg.mel);
    check_dataset_shapes(examples, cfg.model);

    const std::string log_path = o.log.empty() ? o.out + ".log.jsonl" : o.log;
    std::ofstream log(log_path, std::ios::trunc);
    if (!log) throw IoError("cannot open log file '" + log_path + "'");

    const auto params = ModelParams<float>::init(cfg.model, cfg.train.seed);
    const TrainResult r = train_loop(examples, params, cfg.train, [&](const LogRecord& rec) {
        log << log_record_json(rec) << "\n" << std::flush;
        if (rec.val_acc) {
            std::cout << "epoch " << rec.epoch << " step " << rec.step << " loss " << rec.loss
                      << " val_acc " << *rec.val_acc << "\n" << std::flush;
        }
    });
    Checkpoint ckpt{cfg, r.best, std::nullopt};
    if (o.with_optim) ckpt.optim = r.best_optim;
    save_checkpoint(o.out, ckpt);
    std::cout << "best epoch " << r.best_epoch << " val_acc " << r.best_val_acc << "; checkpoint " << o.out << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------

struct EvalOptions {
    std::string ckpt, data, out, variant, predictions;
    std::size_t bootstrap = 0;
};

std::vector<int> read_predictions(const std::string& path, std::size_t expected) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw UsageError(path + ": " + e.what());
    }
    if (!j.is_array() || j.size() != expected) {
        throw UsageError(path + ": expected a JSON array of " + std::to_string(expected) + " labels");
    }
    std::vector<int> out;
    for (const auto& v : j) {
        if (!v.is_number_integer() || (v.get<int>() != 0 && v.get<int>() != 1)) {
            throw UsageError(path + ": predictions must be 0 or 1");
        }
        out.push_back(v.get<int>());
    }
    return out;
}

// Percentile interval of the score under per-subject resampling of pairs.
std::pair<double, double> bootstrap_score(const std::vector<Example>& examples, const std::vector<int>& predicted,
                                          std::size_t rounds, std::uint64_t seed) {
    std::map<std::pair<int, std::size_t>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const Split s = examples[i].split;
        if (s == Split::held_out_subjects || s == Split::held_out_stories) {
            groups[{static_cast<int>(s), examples[i].subject}].push_back(i);
        }
    }
    SplitMix64 rng(seed);
    std::vector<double> scores;
    for (std::size_t b = 0; b < rounds; ++b) {
        std::vector<double> subj, story;
        for (const auto& [key, idx] : groups) {
            std::vector<std::pair<int, int>> draw;
            for (std::size_t k = 0; k < idx.size(); ++k) {
                const std::size_t i = idx[rng.below(idx.size())];
                draw.emplace_back(predicted[i], examples[i].label);
            }
            (key.first == static_cast<int>(Split::held_out_subjects) ? subj : story).push_back(subject_accuracy(draw));
        }
        scores.push_back(challenge_score(subj, story).score);
    }
    std::sort(scores.begin(), scores.end());
    const auto at = [&](double q) { return scores[static_cast<std::size_t>(q * static_cast<double>(scores.size() - 1))]; };
    return {at(0.025), at(0.975)};
}

int cmd_eval(const EvalOptions& o) {
    std::vector<Example> examples;
    std::vector<int> predicted;
    std::string method = "ifecf";
    std::uint64_t seed = 1;
    if (!o.predictions.empty()) {
        const Manifest m = load_manifest(o.data);
        for (const auto& e : m.entries) {
            Example ex;
            ex.label = e.label;
            ex.subject = e.subject_id;
            ex.trial = e.trial_id;
            ex.split = e.split;
            examples.push_back(std::move(ex));
        }
        predicted = read_predictions(o.predictions, examples.size());
        method = "fixed";
    } else {
        if (o.ckpt.empty()) throw UsageError("eval needs --ckpt or --predictions");
        const Checkpoint ckpt = load_checkpoint(o.ckpt);
        if (!o.variant.empty() && parse_variant(o.variant) != ckpt.config.model.variant) {
            throw UsageError("checkpoint was trained as variant " + to_string(ckpt.config.model.variant) +
                             ", not " + o.variant);
        }
        examples = load_dataset(o.data, ckpt.config.mel);
        check_dataset_shapes(examples, ckpt.config.model);
        predicted.assign(examples.size(), -1);
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < examples.size(); ++i) {
            if (examples[i].split == Split::held_out_subjects || examples[i].split == Split::held_out_stories) {
                idx.push_back(i);
            }
        }
        const std::vector<int> labels = predict_labels(ckpt.params, examples, idx, ckpt.config.train.batch_size);
        for (std::size_t i = 0; i < idx.size(); ++i) predicted[idx[i]] = labels[i];
        method = to_string(ckpt.config.model.variant);
        seed = ckpt.config.train.seed;
    }
    const EvalReport report = evaluate_predictions(examples, predicted);
    json j = json::parse(report_json(report));
    std::string text = report_text(report, method);
    if (o.bootstrap > 0) {
        const auto [lo, hi] = bootstrap_score(examples, predicted, o.bootstrap, seed);
        j["score_ci95"] = {lo, hi};
        std::ostringstream line;
        line << "\nScore 95% bootstrap interval (" << o.bootstrap << " rounds): [" << 100.0 * lo << ", "
             << 100.0 * hi << "]\n";
        text += line.str();
    }
    atomic_write(o.out + ".json", j.dump(2) + "\n");
    atomic_write(o.out + ".txt", text);
    std::cout << text;
    return kOk;
}

// ---------------------------------------------------------------------------

struct GradcheckOptions {
    double tol = 1e-4;
    std::string modules = "all";
    std::string variant = "ife_cf";
    std::size_t samples = 6;
};

int cmd_gradcheck(const GradcheckOptions& o) {
    GradcheckConfig cfg;
    cfg.tol = o.tol;
    cfg.samples_per_tensor = o.samples;
    cfg.variant = parse_variant(o.variant);
    std::stringstream list(o.modules);
    for (std::string m; std::getline(list, m, ',');) {
        const auto groups = gradcheck_groups_for_module(m);
        if (groups.empty()) {
            cfg.groups.clear();
            break;
        }
        cfg.groups.insert(cfg.groups.end(), groups.begin(), groups.end());
    }
    const GradcheckReport r = gradcheck(cfg);
    std::vector<std::string> offenders;
    for (const auto& g : r.groups) {
        std::cout << (g.pass ? "ok   " : "FAIL ") << std::left << std::setw(36) << g.name << " worst rel err "
                  << std::scientific << std::setprecision(3) << g.worst_rel_error << std::defaultfloat
                  << " (" << g.checked << " entries";
        if (g.refined > 0) std::cout << ", " << g.refined << " near a kink";
        std::cout << ")\n";
        if (!g.pass) offenders.push_back(g.name);
    }
    if (r.pass) {
        std::cout << "gradcheck passed: " << r.groups.size() << " groups within tol " << o.tol << "\n";
        return kOk;
    }
    std::cerr << "gradcheck failed for " << offenders.size() << " groups:";
    for (const auto& n : offenders) std::cerr << " " << n;
    std::cerr << "\n";
    return kFailure;
}

// ---------------------------------------------------------------------------

struct ExportOptions {
    std::string ckpt, data, pair, block, out;
};

void write_map_files(const std::string& prefix, const Tensor<double>& m) {
    atomic_write(prefix + ".csv", matrix_csv(m));
    atomic_write(prefix + ".pgm", matrix_pgm(m));
}

void export_maps(const std::string& prefix, const AttentionMap<double>& map) {
    const std::size_t heads = map.weights.dim(0);
    const std::size_t t = map.weights.dim(1);
    for (std::size_t h = 0; h < heads; ++h) {
        Tensor<double> one({t, t});
        std::copy_n(map.weights.data() + h * t * t, t * t, one.data());
        write_map_files(prefix + "_head" + std::to_string(h), one);
    }
    write_map_files(prefix + "_mean", map.head_average());
}

int cmd_export_attention(const ExportOptions& o) {
    std::size_t subject = 0, trial = 0;
    {
        char comma = 0;
        std::istringstream in(o.pair);
        if (!(in >> subject >> comma >> trial) || comma != ',' || !in.eof()) {
            throw UsageError("--pair must be SUBJECT,TRIAL");
        }
    }
    if (o.block != "smca" && o.block != "emca") throw UsageError("--block must be smca or emca");
    const Checkpoint ckpt = load_checkpoint(o.ckpt);
    const Manifest m = load_manifest(o.data);
    const auto it = std::find_if(m.entries.begin(), m.entries.end(), [&](const ManifestEntry& e) {
        return e.subject_id == subject && e.trial_id == trial && e.label == kMatch;
    });
    if (it == m.entries.end()) {
        throw InputError("no matched pair for subject " + std::to_string(subject) + ", trial " +
                         std::to_string(trial) + " in " + o.data);
    }
    const auto& cfg = ckpt.config;
    ModelParams<double> params = ModelParams<double>::create(cfg.model);
    {
        std::vector<const Tensor<float>*> src;
        ckpt.params.visit_params([&](const std::string&, const Tensor<float>& t) { src.push_back(&t); });
        std::size_t k = 0;
        params.visit_params([&](const std::string&, Tensor<double>& t) { t = src[k++]->cast<double>(); });
    }
    const Tensor<double> wav = load_tensor<double>(fs::path(o.data) / it->speech_path);
    const int rate = m.synth ? m.synth->sample_rate_hz : cfg.mel.sample_rate_hz;
    const Tensor<double> speech = speech_feature(SpeechWaveform{wav.values(), rate}, MelSpectrogram(cfg.mel));
    const Tensor<double> eeg = load_tensor<double>(fs::path(o.data) / it->eeg_path);
    require_shape(eeg, {cfg.model.eeg_channels, cfg.model.frames}, "export-attention EEG");
    const Tensor<double> x_ed = eeg_spatial_conv(eeg, params.eeg_weight, params.eeg_bias);

    const bool smca = o.block == "smca";
    const bool self = cfg.model.variant == Variant::ife_sf;
    const Tensor<double>& query = smca ? speech : x_ed;
    const Tensor<double>& kv = self ? query : (smca ? x_ed : speech);
    const AttentionParams<double>& ap = smca ? params.smca : params.emca;
    const MaskOrientation post_orientation = cfg.model.variant == Variant::no_m ? MaskOrientation::none
                                             : smca                              ? MaskOrientation::speech_lower
                                                                                 : MaskOrientation::eeg_upper;
    const std::size_t t = cfg.model.frames;
    const auto pre = crossmodal_attention(query, kv, ap, make_causal_mask(t, MaskOrientation::none), cfg.model.scale);
    const auto post = crossmodal_attention(query, kv, ap, make_causal_mask(t, post_orientation), cfg.model.scale);
    export_maps(o.out + "_pre", pre.map);
    export_maps(o.out + "_post", post.map);
    std::cout << "wrote " << 2 * (ap.heads + 1) << " heatmaps (csv + pgm) with prefix " << o.out << "\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"IFE-CF speech/EEG match-mismatch toolkit"};
    app.require_subcommand(1);

    GenDataOptions gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic speech/EEG dataset");
    gen_cmd->add_option("--out", gen.out, "Output directory")->required();
    gen_cmd->add_option("--subjects", gen.synth.n_subjects, "Number of subjects")->capture_default_str();
    gen_cmd->add_option("--trials", gen.synth.trials_per_subject, "Trials per subject")->capture_default_str();
    gen_cmd->add_option("--lag-frames", gen.synth.lag_frames, "EEG delay in frames")->capture_default_str();
    gen_cmd->add_option("--snr-db", gen.synth.snr_db, "EEG signal-to-noise ratio (inf disables noise)")
        ->capture_default_str();
    gen_cmd->add_option("--seed", gen.synth.seed, "Generator seed")->capture_default_str();
    gen_cmd->add_option("--channels", gen.synth.eeg_channels, "EEG channels D")->capture_default_str();
    gen_cmd->add_option("--frames", gen.synth.frames, "Frames per window T")->capture_default_str();
    gen_cmd->add_option("--responsive-channels", gen.synth.responsive_channels, "Channels carrying the envelope")
        ->capture_default_str();
    gen_cmd->add_option("--min-offset", gen.synth.mismatch_min_offset_frames,
                        "Minimum mismatch offset in frames")
        ->capture_default_str();

    TrainOptions train;
    auto* train_cmd = app.add_subcommand("train", "Train a model on a dataset directory");
    train_cmd->add_option("--data", train.data, "Dataset directory")->required();
    train_cmd->add_option("--config", train.config, "Run config JSON (defaults when omitted)");
    train_cmd->add_option("--out", train.out, "Checkpoint path")->required();
    train_cmd->add_option("--variant", train.variant, "ife_cf, ife_sf, no_d, no_t or no_m");
    train_cmd->add_option("--log", train.log, "Training log path (default CKPT.log.jsonl)");
    train_cmd->add_flag("--with-optim", train.with_optim, "Store the optimizer state in the checkpoint");

    EvalOptions eval;
    auto* eval_cmd = app.add_subcommand("eval", "Score held-out splits");
    eval_cmd->add_option("--ckpt", eval.ckpt, "Checkpoint path");
    eval_cmd->add_option("--data", eval.data, "Dataset directory")->required();
    eval_cmd->add_option("--out", eval.out, "Report prefix (writes PREFIX.json and PREFIX.txt)")->required();
    eval_cmd->add_option("--variant", eval.variant, "Expected variant of the checkpoint");
    eval_cmd->add_option("--predictions", eval.predictions,
                         "JSON array of predicted labels, one per manifest entry, instead of a model");
    eval_cmd->add_option("--bootstrap", eval.bootstrap, "Bootstrap rounds for a score interval");

    GradcheckOptions grad;
    auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
    grad_cmd->add_option("--tol", grad.tol, "Relative error tolerance")->capture_default_str();
    grad_cmd->add_option("--modules", grad.modules, "all or a comma list of features,crossmodal,fusion,head")
        ->capture_default_str();
    grad_cmd->add_option("--variant", grad.variant, "Model variant")->capture_default_str();
    grad_cmd->add_option("--samples", grad.samples, "Entries checked per tensor")->capture_default_str();

    ExportOptions exp;
    auto* exp_cmd = app.add_subcommand("export-attention", "Write attention heatmaps before and after masking");
    exp_cmd->add_option("--ckpt", exp.ckpt, "Checkpoint path")->required();
    exp_cmd->add_option("--data", exp.data, "Dataset directory")->required();
    exp_cmd->add_option("--pair", exp.pair, "SUBJECT,TRIAL")->required();
    exp_cmd->add_option("--block", exp.block, "smca or emca")->required();
    exp_cmd->add_option("--out", exp.out, "Output prefix")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << one_line(e.what()) << "\n";
        return kUsage;
    }

    try {
        if (*gen_cmd) return cmd_gen_data(gen);
        if (*train_cmd) return cmd_train(train);
        if (*eval_cmd) return cmd_eval(eval);
        if (*grad_cmd) return cmd_gradcheck(grad);
        if (*exp_cmd) return cmd_export_attention(exp);
    } catch (const UsageError& e) {
        std::cerr << "error: " << one_line(e.what()) << "\n";
        return kUsage;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << one_line(e.what()) << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << one_line(e.what()) << "\n";
        return kFailure;
    }
    return kUsage;
}
