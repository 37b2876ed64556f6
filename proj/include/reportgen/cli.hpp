#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "reportgen/checkpoint.hpp"
#include "reportgen/config.hpp"
#include "reportgen/data.hpp"
#include "reportgen/gradcheck.hpp"
#include "reportgen/generation.hpp"
#include "reportgen/metrics.hpp"
#include "reportgen/model.hpp"
#include "reportgen/training.hpp"

// Command implementations behind the CLI binary. Kept in the library so the
// acceptance suite can drive the exact pipeline the tool runs. Exit codes:
// 0 success, 1 check failure, 2 usage/config/data error, 3 numeric abort.

namespace reportgen::cli {

namespace detail {

inline std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// generate-data
// ---------------------------------------------------------------------------

struct GenerateDataOptions {
    std::size_t n = 100;
    std::uint64_t seed = 1;
    std::string out_dir;
};

inline int cmd_generate_data(const GenerateDataOptions& opt, std::ostream& out = std::cout) {
    namespace fs = std::filesystem;
    std::map<std::string, std::string> before;
    const fs::path manifest_path = fs::path(opt.out_dir) / "manifest.json";
    const bool existed = fs::exists(manifest_path);
    if (existed)
        for (const auto& entry : fs::recursive_directory_iterator(opt.out_dir))
            if (entry.is_regular_file())
                before[entry.path().string()] = detail::read_text_file(entry.path().string());

    const DatasetManifest manifest = generate_dataset(opt.n, opt.seed, opt.out_dir);

    bool unchanged = existed;
    if (existed)
        for (const auto& [path, bytes] : before)
            if (!fs::exists(path) || detail::read_text_file(path) != bytes) {
                unchanged = false;
                break;
            }

    out << "generated " << manifest.count << " cases under " << opt.out_dir << '\n';
    out << "train=" << manifest.splits.at("train").size()
        << " val=" << manifest.splits.at("val").size()
        << " test=" << manifest.splits.at("test").size() << '\n';
    out << "class distribution:";
    for (const auto& [label, count] : manifest.class_distribution)
        out << ' ' << label << '=' << count;
    out << '\n';
    if (unchanged) out << "unchanged (idempotent)\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOptions {
    std::string config_path;
    std::string profile;  // overrides the config file's profile when set
    std::string data_dir;
    std::string out_dir;
    std::string val_split = "val";
};

inline RunConfig load_cli_config(const std::string& config_path, const std::string& profile) {
    nlohmann::json j = nlohmann::json::object();
    if (!config_path.empty()) {
        std::ifstream is(config_path);
        if (!is) throw ConfigError("cannot open config file: " + config_path);
        try {
            is >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("malformed config JSON in " + config_path + ": " + e.what());
        }
    }
    if (!profile.empty()) j["profile"] = profile;
    return parse_run_config(j);
}

inline int cmd_train(const TrainOptions& opt, std::ostream& out = std::cout) {
    namespace fs = std::filesystem;
    RunConfig cfg = load_cli_config(opt.config_path, opt.profile);
    const std::string data_dir = opt.data_dir.empty() ? cfg.data_dir : opt.data_dir;
    const std::string out_dir = opt.out_dir.empty() ? cfg.out_dir : opt.out_dir;
    if (data_dir.empty()) throw ConfigError("no dataset directory (--data or config paths.data)");
    if (out_dir.empty()) throw ConfigError("no output directory (--out or config paths.out)");

    const auto train_cases = load_split(data_dir, "train");
    const auto val_cases = load_split(data_dir, opt.val_split);

    std::vector<std::string> corpus;
    for (const auto& item : train_cases) corpus.push_back(item.report);
    const Vocabulary vocab = build_vocab(corpus, 1);
    cfg.decoder.vocab_size = vocab.size();
    cfg.decoder.validate();
    cfg.train.validate();

    ReportModel model =
        ReportModel::build(cfg.encoder, cfg.decoder, cfg.encoder_kind, cfg.train.seed);
    out << "training " << encoder_kind_name(cfg.encoder_kind) << " model: "
        << model.registry.total_size() << " parameters, vocab " << vocab.size() << ", "
        << train_cases.size() << " train / " << val_cases.size() << " val cases\n";

    const TrainResult result =
        train(model, vocab, train_cases, val_cases, cfg.train, [&](const EpochStats& stats) {
            out << "epoch=" << stats.epoch << " train_loss=" << std::setprecision(6)
                << std::fixed << stats.train_loss << " val_loss=" << stats.val_loss
                << " lr=" << std::setprecision(8) << stats.learning_rate << '\n'
                << std::defaultfloat;
        });

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw DataError("cannot create output directory: " + out_dir);

    save_vocabulary((fs::path(out_dir) / "vocab.txt").string(), vocab);

    std::ostringstream history;
    history << "epoch,train_loss,val_loss,lr\n";
    for (const EpochStats& stats : result.history)
        history << stats.epoch << ',' << detail::format_double(stats.train_loss) << ','
                << detail::format_double(stats.val_loss) << ','
                << detail::format_double(stats.learning_rate) << '\n';
    reportgen::detail::write_file(fs::path(out_dir) / "history.csv", history.str());

    const std::string ckpt_path = (fs::path(out_dir) / "checkpoint.ckpt").string();
    save_checkpoint(ckpt_path, model.registry);
    save_meta(ckpt_path + ".meta",
              {{"format", "1"},
               {"config", run_config_to_json(cfg).dump()},
               {"vocab_file", "vocab.txt"},
               {"vocab_size", std::to_string(vocab.size())},
               {"epochs_run", std::to_string(result.history.size())},
               {"best_epoch", std::to_string(result.best_epoch)},
               {"best_val_loss", detail::format_double(result.best_val_loss)},
               {"seed", std::to_string(cfg.train.seed)}});

    out << "final train_loss=" << detail::format_double(result.history.back().train_loss)
        << " best_val_loss=" << detail::format_double(result.best_val_loss) << " (epoch "
        << result.best_epoch << ")\n";
    out << "checkpoint written to " << ckpt_path << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateOptions {
    std::string checkpoint;
    std::string data_dir;
    std::string split = "test";
    std::string out_path;
    std::optional<std::size_t> beam;
    std::optional<double> alpha;
    std::optional<std::size_t> max_len;
    bool greedy = false;
};

struct LoadedModel {
    RunConfig cfg;
    Vocabulary vocab;
    ReportModel model;
};

inline LoadedModel load_model_from_checkpoint(const std::string& checkpoint_path) {
    namespace fs = std::filesystem;
    const auto meta = load_meta(checkpoint_path + ".meta");
    LoadedModel loaded;
    try {
        loaded.cfg = parse_run_config(nlohmann::json::parse(meta_value(meta, "config")));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed config in checkpoint metadata: " + std::string(e.what()));
    }
    const fs::path vocab_path =
        fs::path(checkpoint_path).parent_path() / meta_value(meta, "vocab_file");
    loaded.vocab = load_vocabulary(vocab_path.string());
    if (std::to_string(loaded.vocab.size()) != meta_value(meta, "vocab_size"))
        throw DataError("vocabulary size does not match checkpoint metadata");
    loaded.cfg.decoder.vocab_size = loaded.vocab.size();
    loaded.model = ReportModel::build(loaded.cfg.encoder, loaded.cfg.decoder,
                                      loaded.cfg.encoder_kind, loaded.cfg.train.seed);
    load_checkpoint(checkpoint_path, loaded.model.registry);
    return loaded;
}

inline int cmd_generate(const GenerateOptions& opt, std::ostream& out = std::cout) {
    LoadedModel loaded = load_model_from_checkpoint(opt.checkpoint);
    const std::size_t beam = opt.beam.value_or(loaded.cfg.generation.beam);
    const double alpha = opt.alpha.value_or(loaded.cfg.generation.alpha);
    const std::size_t max_len = opt.max_len.value_or(loaded.cfg.generation.max_len);
    if (beam < 1) throw ConfigError("beam width must be at least 1");

    const auto cases = load_split(opt.data_dir, opt.split);
    std::ostringstream lines;
    for (const auto& item : cases) {
        const Tensor memory = loaded.model.encode_image(item.image);
        const GenerationResult result =
            opt.greedy
                ? greedy_decode(memory, loaded.model.decoder_cfg, loaded.model.decoder, max_len)
                : beam_search(memory, loaded.model.decoder_cfg, loaded.model.decoder, beam,
                              max_len, alpha);
        nlohmann::json record;
        record["id"] = item.id;
        record["report"] = decode(result.tokens, loaded.vocab);
        lines << record.dump() << '\n';
    }
    reportgen::detail::write_file(opt.out_path, lines.str());
    out << "wrote " << cases.size() << " generated reports to " << opt.out_path << " ("
        << (opt.greedy ? std::string("greedy") : "beam=" + std::to_string(beam)) << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateOptions {
    std::string generated_path;
    std::string truth_path;
    std::string out_dir;
    std::string row_label = "ac-bifpn";
};

inline std::map<std::string, std::string> read_report_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open: " + path);
    std::map<std::string, std::string> records;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        try {
            nlohmann::json record = nlohmann::json::parse(line);
            records[record.at("id").get<std::string>()] = record.at("report").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw DataError("malformed JSONL in " + path + ": " + e.what());
        }
    }
    if (records.empty()) throw DataError("no records in " + path);
    return records;
}

inline nlohmann::json metric_report_to_json(const MetricReport& report) {
    nlohmann::json j;
    j["corpus_size"] = report.corpus_size;
    j["bleu_1"] = report.bleu[0];
    j["bleu_2"] = report.bleu[1];
    j["bleu_3"] = report.bleu[2];
    j["bleu_4"] = report.bleu[3];
    j["meteor"] = report.meteor;
    j["rouge_l"] = report.rouge_l;
    j["cider"] = report.cider;
    j["cider_scale"] = "raw 0-10 (mean n-gram TF-IDF cosine x10); other metrics raw 0-1";
    j["cider_idf_degenerate"] = report.cider_idf_degenerate;
    nlohmann::json per_label;
    for (const auto& [label, scores] : report.classification.per_label)
        per_label[finding_label_name(label)] = {{"precision", scores.precision},
                                                {"recall", scores.recall},
                                                {"f1", scores.f1},
                                                {"support", scores.support}};
    j["classification"]["per_label"] = per_label;
    j["classification"]["micro"] = {{"precision", report.classification.micro.precision},
                                    {"recall", report.classification.micro.recall},
                                    {"f1", report.classification.micro.f1}};
    return j;
}

inline MetricReport evaluate_report_files(const std::string& generated_path,
                                          const std::string& truth_path) {
    const auto generated = read_report_jsonl(generated_path);
    const auto truth = read_report_jsonl(truth_path);
    std::vector<std::string> missing;
    for (const auto& [id, text] : generated)
        if (!truth.count(id)) missing.push_back(id + " (not in truth)");
    for (const auto& [id, text] : truth)
        if (!generated.count(id)) missing.push_back(id + " (not in generated)");
    if (!missing.empty()) {
        std::string joined;
        for (const auto& m : missing) joined += (joined.empty() ? "" : ", ") + m;
        throw DataError("id misalignment between corpora: " + joined);
    }
    std::vector<std::string> generated_texts, truth_texts;
    for (const auto& [id, text] : generated) {
        generated_texts.push_back(text);
        truth_texts.push_back(truth.at(id));
    }
    return evaluate_corpus(generated_texts, truth_texts);
}

inline int cmd_evaluate(const EvaluateOptions& opt, std::ostream& out = std::cout) {
    namespace fs = std::filesystem;
    const MetricReport report = evaluate_report_files(opt.generated_path, opt.truth_path);
    const std::string table = render_metric_table({{opt.row_label, report}});
    out << table;
    if (!opt.out_dir.empty()) {
        std::error_code ec;
        fs::create_directories(opt.out_dir, ec);
        if (ec) throw DataError("cannot create output directory: " + opt.out_dir);
        reportgen::detail::write_file(fs::path(opt.out_dir) / "metrics.json",
                                      metric_report_to_json(report).dump(2) + "\n");
        reportgen::detail::write_file(fs::path(opt.out_dir) / "metrics_table.txt", table);
        out << "metrics written to " << opt.out_dir << '\n';
    }
    return 0;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct GradcheckOptions {
    double tolerance = 1e-3;
    // test fixture: applies a deliberately wrong gradient rule so the
    // failure path is exercisable end to end
    bool corrupt_backward = false;
};

namespace detail {

/// Forward multiplies by c; backward deliberately applies 1.25c. Only used
/// by the gradcheck self-test.
inline Tensor corrupted_scale(const Tensor& x, double c) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * c;
    auto xn = x.node();
    return reportgen::detail::make_op_result(
        x.shape(), std::move(out), x.requires_grad(),
        [xn, c](reportgen::detail::TensorNode& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                xn->grad[i] += self.grad[i] * (1.25 * c);
        });
}

}  // namespace detail

inline int cmd_gradcheck(const GradcheckOptions& opt, std::ostream& out = std::cout) {
    EncoderConfig enc;
    enc.scales = {1.0, 0.5};
    enc.channels = 4;
    enc.blocks_per_scale = 2;
    enc.bifpn_depth = 1;
    enc.pool_grid = 2;
    DecoderConfig dec;
    dec.d_model = 8;
    dec.n_layers = 1;
    dec.n_heads = 2;
    dec.d_ff = 16;
    dec.max_len = 12;
    dec.vocab_size = 12;
    dec.dropout = 0.0;
    ReportModel model = ReportModel::build(enc, dec, EncoderKind::AcBifpn, 0xC0FFEE);

    const SyntheticCase sample = generate_case(12, "gradcheck-input");
    const std::vector<int> tokens{Vocabulary::kCls, 4, 7, 5, 9, Vocabulary::kSep};
    const TeacherForcedPair pair = teacher_forced(tokens);

    auto loss_fn = [&]() {
        Tensor memory = model.encode_image(sample.image);
        Tensor logits = model.logits(pair.inputs, memory, RunMode::eval());
        Tensor loss = cross_entropy(logits, pair.targets, pair.mask);
        return opt.corrupt_backward ? detail::corrupted_scale(loss, 1.0) : loss;
    };
    // step 1e-4: at 1e-5 the rounding-noise floor of central differences
    // (|loss|*ulp/2eps ~ 5e-11) swamps near-zero attention gradients
    const GradCheckReport report = grad_check(loss_fn, model.registry, 1e-4);

    bool all_ok = true;
    for (const auto& [name, err] : report.per_group) {
        const bool ok = err < opt.tolerance;
        all_ok = all_ok && ok;
        out << (ok ? "ok   " : "FAIL ") << std::left << std::setw(36) << name
            << " max_rel_err=" << detail::format_double(err) << '\n';
    }
    out << (all_ok ? "gradcheck passed" : "gradcheck FAILED") << ": worst group '"
        << report.worst_group << "' at " << detail::format_double(report.max_rel_error)
        << " (tolerance " << opt.tolerance << ")\n";
    return all_ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

struct CompareOptions {
    std::string config_path;
    std::string profile;
    std::string data_dir;
    std::string out_dir;  // optional: persists both runs' artifacts
};

inline int cmd_compare(const CompareOptions& opt, std::ostream& out = std::cout) {
    RunConfig base_cfg = load_cli_config(opt.config_path, opt.profile);
    const std::string data_dir = opt.data_dir.empty() ? base_cfg.data_dir : opt.data_dir;
    if (data_dir.empty()) throw ConfigError("no dataset directory (--data or config paths.data)");

    const auto train_cases = load_split(data_dir, "train");
    const auto val_cases = load_split(data_dir, "val");
    const auto test_cases = load_split(data_dir, "test");

    std::vector<std::string> corpus;
    for (const auto& item : train_cases) corpus.push_back(item.report);
    const Vocabulary vocab = build_vocab(corpus, 1);

    std::vector<std::pair<std::string, MetricReport>> rows;
    for (EncoderKind kind : {EncoderKind::Baseline, EncoderKind::AcBifpn}) {
        RunConfig cfg = base_cfg;
        cfg.encoder_kind = kind;
        cfg.decoder.vocab_size = vocab.size();
        cfg.decoder.validate();
        ReportModel model =
            ReportModel::build(cfg.encoder, cfg.decoder, kind, cfg.train.seed);
        out << "[compare] training " << encoder_kind_name(kind) << " ("
            << model.registry.total_size() << " parameters)\n";
        train(model, vocab, train_cases, val_cases, cfg.train);

        std::vector<std::string> generated_texts, truth_texts;
        for (const auto& item : test_cases) {
            const Tensor memory = model.encode_image(item.image);
            const GenerationResult result = greedy_decode(memory, model.decoder_cfg,
                                                          model.decoder, cfg.generation.max_len);
            generated_texts.push_back(decode(result.tokens, vocab));
            truth_texts.push_back(item.report);
        }
        rows.emplace_back(encoder_kind_name(kind), evaluate_corpus(generated_texts, truth_texts));
    }
    const std::string table = render_metric_table(rows);
    out << table;
    if (!opt.out_dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(opt.out_dir, ec);
        if (ec) throw DataError("cannot create output directory: " + opt.out_dir);
        reportgen::detail::write_file(std::filesystem::path(opt.out_dir) / "compare_table.txt",
                                      table);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// exit-code mapping
// ---------------------------------------------------------------------------

template <typename Fn>
int run_with_exit_codes(Fn&& fn, std::ostream& err = std::cerr) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return 2;
    } catch (const VocabularyError& e) {
        err << "vocabulary error: " << e.what() << '\n';
        return 2;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return 2;
    } catch (const DimensionError& e) {
        err << "dimension error: " << e.what() << '\n';
        return 2;
    } catch (const NumericError& e) {
        err << "numeric abort: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
}

}  // namespace reportgen::cli
