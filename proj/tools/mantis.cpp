// mantis - manifest-based Android malware classification pipeline.
//
// Subcommands: ingest, synth, build-vocab, train, eval, predict, fetch.
// Every command is deterministic given its flags and seeds; errors exit
// nonzero with a single machine-parsable line on stderr.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mantis/axml.hpp"
#include "mantis/checkpoint.hpp"
#include "mantis/clients.hpp"
#include "mantis/dataset.hpp"
#include "mantis/errors.hpp"
#include "mantis/metrics.hpp"
#include "mantis/model.hpp"
#include "mantis/sha256.hpp"
#include "mantis/text_clean.hpp"
#include "mantis/tokenizer.hpp"
#include "mantis/train.hpp"
#include "mantis/zip.hpp"

namespace fs = std::filesystem;
using namespace mantis;

namespace {

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
}

std::vector<uint8_t> read_binary_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    return std::vector<uint8_t>((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
}

CleaningConfig load_cleaning(const std::string& lexicon_path) {
    if (lexicon_path.empty()) return {};
    return load_lexicon(lexicon_path);
}

// "key = value" lines, '#' comments. Used by train --config.
std::map<std::string, std::string> load_key_values(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    std::map<std::string, std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            size_t b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string();
            size_t e = s.find_last_not_of(" \t\r");
            return s.substr(b, e - b + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (!key.empty()) out[key] = value;
    }
    return out;
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

struct IngestArgs {
    std::string apk_dir;
    std::string out_path;
    std::string labels_path;
    std::string lexicon_path;
};

int run_ingest(const IngestArgs& args) {
    CleaningConfig cleaning = load_cleaning(args.lexicon_path);

    // labels: index-format CSV (hash,verdict,category,filename)
    std::map<std::string, std::pair<std::string, std::string>> labels;
    {
        std::ifstream in(args.labels_path, std::ios::binary);
        if (!in) throw IoError("cannot open labels: " + args.labels_path);
        for (const auto& d : client_detail::parse_index(in, args.labels_path)) {
            labels[d.sha256] = {d.verdict.value_or(""), d.category.value_or("")};
        }
    }

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(args.apk_dir)) {
        if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());

    std::vector<DatasetRecord> records;
    size_t skipped = 0;
    for (const auto& path : files) {
        std::string hash;
        try {
            hash = sha256_file(path.string());
            auto it = labels.find(hash);
            if (it == labels.end() || it->second.first.empty()) {
                std::cerr << "warning: no verdict for " << path.filename().string()
                          << " (" << hash.substr(0, 12) << "...), skipped\n";
                ++skipped;
                continue;
            }
            ApkArchive archive = open_apk_file(path.string());
            std::vector<std::string> warnings;
            ManifestDocument doc = decode_axml(extract_manifest(archive), &warnings);
            for (const auto& w : warnings) {
                std::cerr << "warning: " << path.filename().string() << ": " << w
                          << "\n";
            }
            DatasetRecord r;
            r.id = hash;
            r.text = clean_text(doc.xml_text, cleaning);
            r.label = it->second.first == "malware" ? 1 : 0;
            r.category = r.label == 1 ? it->second.second : "";
            validate_record(r, records.size() + 1);
            records.push_back(std::move(r));
        } catch (const Error& e) {
            std::cerr << "warning: skipping " << path.filename().string() << ": "
                      << e.what() << "\n";
            ++skipped;
        }
    }
    write_dataset(args.out_path, records);
    std::cout << "ingested " << records.size() << " record(s), skipped "
              << skipped << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train / eval / predict
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string dataset;
    std::string task = "binary";
    std::string vocab_path;
    std::string out_path = "model.ckpt";
    std::string history_path;
    std::string config_path;
    double val_fraction = 0.1;
    uint64_t seed = 1;
    // desk-scale encoder defaults; the full 512-position encoder is
    // supported through --config / --max-seq at more cost
    int64_t layers = 2;
    int64_t hidden = 128;
    int64_t heads = 4;
    int64_t ffn = 512;
    int32_t max_seq = 128;
    double dropout = 0.1;
};

std::vector<DatasetRecord> task_records(std::vector<DatasetRecord> all, Task task) {
    if (task == Task::binary) return all;
    std::vector<DatasetRecord> malware;
    for (auto& r : all) {
        if (r.label == 1) malware.push_back(std::move(r));
    }
    return malware;
}

int run_train(const TrainArgs& args) {
    Task task = parse_task(args.task);
    auto records = task_records(read_dataset(args.dataset), task);
    if (records.empty()) throw EmptyDataset("no usable records in " + args.dataset);

    Vocab vocab = Vocab::load(args.vocab_path);

    TrainConfig tc;
    tc.task = task;
    tc.seed = args.seed;
    tc.max_seq_len = args.max_seq;
    tc.max_epochs = 10;

    EncoderConfig mc;
    mc.n_layers = args.layers;
    mc.hidden_size = args.hidden;
    mc.n_heads = args.heads;
    mc.ffn_size = args.ffn;
    mc.vocab_size = vocab.size();
    mc.max_positions = args.max_seq;
    mc.n_classes = task_classes(task);
    mc.dropout_rate = args.dropout;

    double val_fraction = args.val_fraction;
    uint64_t init_seed = args.seed;
    if (!args.config_path.empty()) {
        for (const auto& [key, value] : load_key_values(args.config_path)) {
            if (key == "learning_rate") tc.learning_rate = std::stod(value);
            else if (key == "batch_size") tc.batch_size = std::stoi(value);
            else if (key == "max_epochs") tc.max_epochs = std::stoi(value);
            else if (key == "patience") tc.patience = std::stoi(value);
            else if (key == "beta1") tc.beta1 = std::stod(value);
            else if (key == "beta2") tc.beta2 = std::stod(value);
            else if (key == "clip_norm") tc.clip_norm = std::stod(value);
            else if (key == "max_seq_len") {
                tc.max_seq_len = std::stoi(value);
                mc.max_positions = tc.max_seq_len;
            } else if (key == "layers") mc.n_layers = std::stoll(value);
            else if (key == "hidden_size") mc.hidden_size = std::stoll(value);
            else if (key == "n_heads") mc.n_heads = std::stoll(value);
            else if (key == "ffn_size") mc.ffn_size = std::stoll(value);
            else if (key == "dropout") mc.dropout_rate = std::stod(value);
            else if (key == "seed") tc.seed = init_seed = std::stoull(value);
            else if (key == "init_seed") init_seed = std::stoull(value);
            else if (key == "val_fraction") val_fraction = std::stod(value);
            else throw BadConfig("unknown config key: " + key);
        }
    }

    auto [train_set, val_set] = split_train_test(records, val_fraction,
                                                 Rng::mix(tc.seed, 0x7a11d8));
    if (val_set.empty()) {
        // tiny datasets: validate on the training set itself
        val_set = train_set;
    }

    EncoderModel model = init_model(mc, init_seed);
    std::cerr << "training " << task_name(task) << " model: "
              << model.parameter_count() << " parameters, "
              << train_set.size() << " train / " << val_set.size()
              << " val records\n";

    auto history = train(model, train_set, val_set, vocab, tc);
    for (size_t i = 0; i < history.epochs.size(); ++i) {
        const auto& e = history.epochs[i];
        std::cerr << "epoch " << (i + 1) << ": train_loss=" << e.train_loss
                  << " val_loss=" << e.val_loss << " val_acc=" << e.val_accuracy
                  << "\n";
    }
    std::cerr << "stopped: " << history.stopping_reason << "\n";

    std::map<std::string, std::string> extra;
    extra["task"] = task_name(task);
    extra["vocab_path"] = args.vocab_path;
    extra["vocab_sha256"] = sha256_file(args.vocab_path);
    save_checkpoint(args.out_path, model, extra);
    if (!args.history_path.empty()) write_history(args.history_path, history);
    std::cout << "saved " << args.out_path << "\n";
    return 0;
}

// Resolves the vocabulary for a checkpoint: the explicit flag wins, then the
// recorded path (relative to the checkpoint, then as-is). The content hash
// recorded at save time must match.
Vocab resolve_vocab(const LoadedCheckpoint& ckpt, const std::string& ckpt_path,
                    const std::string& vocab_flag) {
    std::string path;
    if (!vocab_flag.empty()) {
        path = vocab_flag;
    } else {
        auto it = ckpt.header.find("vocab_path");
        if (it == ckpt.header.end()) {
            throw VocabHashMismatch("checkpoint lacks a vocab reference; pass --vocab");
        }
        fs::path recorded(it->second);
        fs::path beside = fs::path(ckpt_path).parent_path() / recorded.filename();
        if (fs::exists(recorded)) path = recorded.string();
        else if (fs::exists(beside)) path = beside.string();
        else throw IoError("vocab not found at '" + it->second + "'; pass --vocab");
    }
    auto hash_it = ckpt.header.find("vocab_sha256");
    if (hash_it != ckpt.header.end()) {
        std::string actual = sha256_file(path);
        if (actual != hash_it->second) {
            throw VocabHashMismatch("vocab " + path +
                                    " does not match the hash recorded in the "
                                    "checkpoint");
        }
    }
    return Vocab::load(path);
}

struct EvalArgs {
    std::string dataset;
    std::string ckpt_path;
    std::string task;
    std::string report_path;
    std::string vocab_flag;
};

int run_eval(const EvalArgs& args) {
    auto ckpt = load_checkpoint(args.ckpt_path);
    std::string ckpt_task = ckpt.header.count("task") ? ckpt.header.at("task") : "";
    Task task;
    if (!args.task.empty()) {
        task = parse_task(args.task);
        if (!ckpt_task.empty() && parse_task(ckpt_task) != task) {
            throw BadConfig("checkpoint was trained for task '" + ckpt_task +
                            "', not '" + args.task + "'");
        }
    } else if (!ckpt_task.empty()) {
        task = parse_task(ckpt_task);
    } else {
        throw BadConfig("task not recorded in checkpoint; pass --task");
    }

    Vocab vocab = resolve_vocab(ckpt, args.ckpt_path, args.vocab_flag);
    auto records = task_records(read_dataset(args.dataset), task);
    if (records.empty()) throw EmptyDataset("no usable records in " + args.dataset);

    auto report = evaluate(ckpt.model, records, vocab, task,
                           static_cast<int32_t>(ckpt.model.config.max_positions));
    std::string table = report.to_table(task == Task::binary ? "binary" : "multi");
    std::cout << table;
    if (!args.report_path.empty()) {
        std::ofstream out(args.report_path);
        if (!out) throw IoError("cannot write report: " + args.report_path);
        out << table << "\n" << report.to_key_values();
    }
    return 0;
}

struct PredictArgs {
    std::string input;
    std::string ckpt_path;
    std::string vocab_flag;
    std::string lexicon_path;
};

int run_predict(const PredictArgs& args) {
    auto ckpt = load_checkpoint(args.ckpt_path);
    if (!ckpt.header.count("task")) {
        throw BadConfig("checkpoint lacks a task record");
    }
    Task task = parse_task(ckpt.header.at("task"));
    Vocab vocab = resolve_vocab(ckpt, args.ckpt_path, args.vocab_flag);
    CleaningConfig cleaning = load_cleaning(args.lexicon_path);

    // input may be an APK container, a decoded or binary manifest, or
    // already-cleaned text
    std::string text;
    auto bytes = read_binary_file(args.input);
    if (bytes.size() >= 4 && bytes[0] == 'P' && bytes[1] == 'K') {
        ApkArchive archive = open_apk(bytes, args.input);
        text = decode_axml(extract_manifest(archive)).xml_text;
    } else if (looks_like_binary_xml(bytes) || looks_like_plain_xml(bytes)) {
        text = decode_axml(bytes).xml_text;
    } else {
        text.assign(bytes.begin(), bytes.end());
    }

    auto p = predict(ckpt.model, text, vocab, task, cleaning,
                     static_cast<int32_t>(ckpt.model.config.max_positions));
    std::cout << "label: " << p.class_names[static_cast<size_t>(p.label)] << "\n";
    for (size_t c = 0; c < p.probabilities.size(); ++c) {
        std::cout << "p(" << p.class_names[c] << ") = " << p.probabilities[c]
                  << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// fetch
// ---------------------------------------------------------------------------

struct FetchArgs {
    std::string offline_dir;
    std::string base_url;
    std::string credential_env;
    std::string verdict;
    std::string category;
    size_t limit = 0;
    std::string store_dir;
    std::string out_path;
    std::string aliases_path;
    bool relabel = false;
    int rate_limit = 120;
};

int run_fetch(const FetchArgs& args) {
    ClientConfig cfg;
    cfg.offline_dir = args.offline_dir;
    cfg.base_url = args.base_url;
    cfg.credential_env = args.credential_env;
    cfg.rate_limit_per_min = args.rate_limit;

    RepositoryClient repo(cfg);
    SampleFilter filter;
    if (!args.verdict.empty()) filter.verdict = args.verdict;
    if (!args.category.empty()) filter.category = args.category;
    filter.limit = args.limit;
    auto descriptors = repo.fetch_sample_list(filter);

    if (args.relabel) {
        if (args.aliases_path.empty()) {
            throw BadConfig("--relabel needs --aliases");
        }
        ScannerClient scanner(cfg, AliasTable::load(args.aliases_path));
        for (auto& d : descriptors) {
            try {
                auto result = scanner.label_sample(d.sha256);
                d.verdict = result.verdict;
                if (result.category) d.category = *result.category;
                else d.category.reset();
            } catch (const Error& e) {
                std::cerr << "warning: label " << d.sha256.substr(0, 12)
                          << "...: " << e.what() << "\n";
            }
        }
    }

    if (!args.store_dir.empty()) {
        for (auto& d : descriptors) {
            try {
                std::string path = repo.download_sample(d, args.store_dir);
                d.fetch_status = "fetched";
                d.filename = fs::path(path).filename().string();
            } catch (const Error& e) {
                d.fetch_status = "failed";
                std::cerr << "warning: download " << d.sha256.substr(0, 12)
                          << "...: " << e.what() << "\n";
            }
        }
    }

    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!args.out_path.empty()) {
        file.open(args.out_path);
        if (!file) throw IoError("cannot write: " + args.out_path);
        out = &file;
    }
    *out << "hash,verdict,category,filename\n";
    for (const auto& d : descriptors) {
        *out << d.sha256 << "," << d.verdict.value_or("") << ","
             << d.category.value_or("") << "," << d.filename << "\n";
    }
    std::cerr << "listed " << descriptors.size() << " sample(s)\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"manifest-based Android malware classification pipeline"};
    app.require_subcommand(1);

    IngestArgs ingest_args;
    auto* ingest = app.add_subcommand(
            "ingest", "decode manifests from APKs and emit the 4-column dataset");
    ingest->add_option("apk-dir", ingest_args.apk_dir, "directory of APK files")
            ->required();
    ingest->add_option("--out", ingest_args.out_path, "output dataset CSV")
            ->required();
    ingest->add_option("--labels", ingest_args.labels_path,
                       "verdict index CSV (hash,verdict,category,filename)")
            ->required();
    ingest->add_option("--lexicon", ingest_args.lexicon_path,
                       "removal lexicon file");

    struct {
        int per_class = 100;
        double noise = 0.0;
        uint64_t seed = 1;
        std::string out;
    } synth_args;
    auto* synth = app.add_subcommand("synth", "generate the synthetic corpus");
    synth->add_option("--per-class", synth_args.per_class, "records per class")
            ->required();
    synth->add_option("--noise", synth_args.noise, "uniform-noise token rate");
    synth->add_option("--seed", synth_args.seed, "generator seed");
    synth->add_option("--out", synth_args.out, "output dataset CSV")->required();

    struct {
        std::string dataset;
        int32_t max_size = 30000;
        int32_t min_freq = 1;
        std::string out;
    } vocab_args;
    auto* build_vocab_cmd =
            app.add_subcommand("build-vocab", "build a vocabulary from a dataset");
    build_vocab_cmd->add_option("dataset", vocab_args.dataset, "dataset CSV")
            ->required();
    build_vocab_cmd->add_option("--max-size", vocab_args.max_size,
                                "maximum vocabulary size");
    build_vocab_cmd->add_option("--min-freq", vocab_args.min_freq,
                                "minimum token frequency");
    build_vocab_cmd->add_option("--out", vocab_args.out, "output vocab TSV")
            ->required();

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "fine-tune a classifier");
    train_cmd->add_option("dataset", train_args.dataset, "dataset CSV")->required();
    train_cmd->add_option("--task", train_args.task, "binary|multi");
    train_cmd->add_option("--vocab", train_args.vocab_path, "vocab TSV")
            ->required();
    train_cmd->add_option("--out", train_args.out_path, "checkpoint path");
    train_cmd->add_option("--history", train_args.history_path, "history log path");
    train_cmd->add_option("--config", train_args.config_path,
                          "key=value training config file");
    train_cmd->add_option("--seed", train_args.seed, "training + init seed");
    train_cmd->add_option("--val-fraction", train_args.val_fraction,
                          "validation share carved from the training data");
    train_cmd->add_option("--layers", train_args.layers, "encoder layers");
    train_cmd->add_option("--hidden", train_args.hidden, "hidden size");
    train_cmd->add_option("--heads", train_args.heads, "attention heads");
    train_cmd->add_option("--ffn", train_args.ffn, "feed-forward size");
    train_cmd->add_option("--max-seq", train_args.max_seq, "sequence length");
    train_cmd->add_option("--dropout", train_args.dropout, "dropout rate");

    EvalArgs eval_args;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    eval_cmd->add_option("dataset", eval_args.dataset, "dataset CSV")->required();
    eval_cmd->add_option("checkpoint", eval_args.ckpt_path, "model checkpoint")
            ->required();
    eval_cmd->add_option("--task", eval_args.task, "binary|multi");
    eval_cmd->add_option("--report", eval_args.report_path, "report output path");
    eval_cmd->add_option("--vocab", eval_args.vocab_flag, "vocab TSV override");

    PredictArgs predict_args;
    auto* predict_cmd =
            app.add_subcommand("predict", "classify one APK or manifest text");
    predict_cmd->add_option("input", predict_args.input,
                            "APK, manifest XML, or cleaned text file")
            ->required();
    predict_cmd->add_option("checkpoint", predict_args.ckpt_path,
                            "model checkpoint")
            ->required();
    predict_cmd->add_option("--vocab", predict_args.vocab_flag,
                            "vocab TSV override");
    predict_cmd->add_option("--lexicon", predict_args.lexicon_path,
                            "removal lexicon file");

    FetchArgs fetch_args;
    auto* fetch_cmd =
            app.add_subcommand("fetch", "list/download corpus samples");
    fetch_cmd->add_option("--offline-fixtures", fetch_args.offline_dir,
                          "fixture directory (offline mode)");
    fetch_cmd->add_option("--base-url", fetch_args.base_url, "live endpoint");
    fetch_cmd->add_option("--credential-env", fetch_args.credential_env,
                          "env var holding the API token");
    fetch_cmd->add_option("--verdict", fetch_args.verdict, "filter by verdict");
    fetch_cmd->add_option("--category", fetch_args.category,
                          "filter by category");
    fetch_cmd->add_option("--limit", fetch_args.limit, "maximum samples");
    fetch_cmd->add_option("--store", fetch_args.store_dir,
                          "download into this content-addressed store");
    fetch_cmd->add_option("--out", fetch_args.out_path,
                          "write the descriptor CSV here instead of stdout");
    fetch_cmd->add_option("--aliases", fetch_args.aliases_path,
                          "family alias table for --relabel");
    fetch_cmd->add_flag("--relabel", fetch_args.relabel,
                        "re-label samples through the scanner client");
    fetch_cmd->add_option("--rate-limit", fetch_args.rate_limit,
                          "requests per minute");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*ingest) return run_ingest(ingest_args);
        if (*synth) {
            auto records = synthesize_corpus(synth_args.per_class, SynthProfile{},
                                             synth_args.noise, synth_args.seed);
            write_dataset(synth_args.out, records);
            std::cout << "wrote " << records.size() << " records to "
                      << synth_args.out << "\n";
            return 0;
        }
        if (*build_vocab_cmd) {
            auto records = read_dataset(vocab_args.dataset);
            std::vector<std::string> texts;
            texts.reserve(records.size());
            for (const auto& r : records) texts.push_back(r.text);
            Vocab v = build_vocab(texts, vocab_args.max_size, vocab_args.min_freq);
            v.save(vocab_args.out);
            std::cout << "wrote " << v.size() << " tokens to " << vocab_args.out
                      << "\n";
            return 0;
        }
        if (*train_cmd) return run_train(train_args);
        if (*eval_cmd) return run_eval(eval_args);
        if (*predict_cmd) return run_predict(predict_args);
        if (*fetch_cmd) return run_fetch(fetch_args);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: Unhandled: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
