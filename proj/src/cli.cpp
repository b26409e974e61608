// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#include "addse/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <limits>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include "addse/checkpoint.hpp"
#include "addse/codec.hpp"
#include "addse/error.hpp"
#include "addse/pseudo_codec.hpp"
#include "addse/rqdit.hpp"
#include "addse/sampler.hpp"
#include "addse/training.hpp"
#include "addse/verify.hpp"
#include "addse/wav.hpp"

namespace addse::cli {
namespace {

namespace fs = std::filesystem;

// Substitution note carried in every metrics report: perceptual metrics need
// external pretrained models, so the harness measures codes instead.
constexpr const char* kMetricsNote =
    "perceptual metrics (DNSMOS, NISQA, etc.) are not computed; reported instead: token accuracy, "
    "latent-domain SNR of decoded codes, DCE and NFE";

struct Global {
    std::uint64_t seed = 0;
};

struct ModelArgs {
    std::string kind = "rqdit";
    std::string checkpoint;
    std::string codebooks;
};

struct CodebooksCmd {
    std::string out;
    std::size_t depth = 4;
    std::size_t codebook_size = 64;
    std::size_t latent_dim = 16;
    std::size_t n_sequences = 200;
    std::size_t frames = 200;
    double rho = 0.9;
    std::size_t iterations = 50;
};

struct DatasetCmd {
    std::string codebooks;
    std::string out;
    std::size_t n_pairs = 1000;
    std::size_t frames = 200;
    double rho = 0.9;
    double snr_min = -5.0;
    double snr_max = 15.0;
    std::optional<double> snr;
};

struct TrainCmd {
    std::string dataset;
    std::string codebooks;
    std::string out;
    std::size_t steps = 1000;
    std::size_t batch_size = 16;
    double lr = 1e-4;
    double clip_norm = 1.0;
    double weight_decay = 0.0;
    double lambda_min = 1e-3;
    std::size_t hidden_dim = 32;
    std::size_t n_layers = 2;
    std::size_t n_heads = 2;
    std::size_t mlp_ratio = 4;
};

struct EnhanceCmd {
    std::string input;
    std::string output;
    ModelArgs model;
    std::size_t n_steps = 64;
    std::string decode = "categorical";
    std::size_t frame_size = 320;
};

struct SampleCmd {
    std::string dataset;
    ModelArgs model;
    std::size_t index = 0;
    std::size_t n_steps = 64;
    std::string decode = "categorical";
    std::string out;
};

struct SweepCmd {
    std::string dataset;
    ModelArgs model;
    std::vector<std::size_t> steps_list = {1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024};
    std::size_t n_examples = 8;
    std::size_t n_lambda = 8;
    std::string out;
};

struct EvalCmd {
    std::string dataset;
    ModelArgs model;
    std::size_t n_lambda = 8;
    std::size_t n_steps = 64;
    std::size_t n_examples = 0;
    std::string out;
};

struct VerifyCmd {
    std::vector<std::string> suites = {"all"};
    std::string out;
    std::string checkpoint;
    std::string codebooks;
    std::string fixtures;
    std::string work_dir;
    std::optional<std::size_t> e2e_steps;
    std::optional<std::size_t> e2e_train_pairs;
    std::optional<std::size_t> e2e_hidden_dim;
    std::optional<std::size_t> e2e_latent_dim;
    std::optional<double> e2e_lr;
    bool quiet = false;
};

void require_file(const std::string& path, const std::string& what, const std::string& hint) {
    require(!path.empty(), ErrorKind::usage, "no " + what + " given; " + hint);
    require(fs::exists(path), ErrorKind::usage, "missing " + what + " '" + path + "'; " + hint);
}

const std::string kBooksHint = "create one with `addse train-codebooks --out DIR`";
const std::string kDatasetHint = "create one with `addse make-dataset --codebooks FILE --out DIR`";
const std::string kCheckpointHint = "create one with `addse train --dataset FILE --codebooks FILE --out DIR`";

void prepare_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    require(!ec && fs::is_directory(dir), ErrorKind::io, "cannot create directory '" + dir.string() + "'");
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::io, "cannot write '" + path.string() + "'");
    return f;
}

void write_snapshot(const fs::path& path, const Global& g, const CLI::App& sub) {
    auto f = open_out(path);
    f << "; addse " << ADDSE_VERSION << "\n";
    f << "; re-run with: addse --config " << path.filename().string() << " " << sub.get_name() << "\n";
    f << "seed=" << g.seed << "\n";
    f << "[" << sub.get_name() << "]\n";
    f << sub.config_to_str(true, false);
}

DecodeMode parse_decode(const std::string& s) { return s == "argmax" ? DecodeMode::argmax : DecodeMode::categorical; }

std::unique_ptr<ConditionalModel> load_model(const ModelArgs& m, std::size_t codebook_size) {
    if (m.kind == "uniform") {
        return std::make_unique<UniformModel>(codebook_size);
    }
    require_file(m.checkpoint, "checkpoint", kCheckpointHint);
    require_file(m.codebooks, "codebooks", kBooksHint);
    return std::make_unique<RQDiT>(load_checkpoint(m.checkpoint, load_codebooks(m.codebooks)));
}

void add_model_options(CLI::App* sub, ModelArgs& m) {
    sub->add_option("--model", m.kind, "Denoiser: rqdit (needs --checkpoint) or uniform")
        ->check(CLI::IsMember({"rqdit", "uniform"}));
    sub->add_option("--checkpoint", m.checkpoint, "RQDiT checkpoint manifest (model.json)");
    sub->add_option("--codebooks", m.codebooks, "RVQ codebooks (codebooks.json)");
}

PairedCodeDataset head(const PairedCodeDataset& d, std::size_t n) {
    PairedCodeDataset out = d;
    if (n == 0 || n >= d.size()) {
        return out;
    }
    out.clean.resize(n);
    out.noisy.resize(n);
    out.snr_db.resize(n);
    return out;
}

nlohmann::ordered_json grid_json(const CodeGrid& g) {
    auto rows = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < g.frames(); ++i) {
        auto row = nlohmann::ordered_json::array();
        for (std::size_t j = 0; j < g.depth(); ++j) {
            row.push_back(g(i, j));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_json(const fs::path& path, const nlohmann::ordered_json& doc) {
    auto f = open_out(path);
    f << doc.dump(2) << "\n";
}

int cmd_train_codebooks(const Global& g, const CodebooksCmd& c, const CLI::App& sub, std::ostream& out) {
    require(!c.out.empty(), ErrorKind::usage, "--out is required");
    prepare_dir(c.out);
    const auto latents = generate_clean_latents(c.n_sequences, c.frames, c.latent_dim, c.rho, derive_seed(g.seed, 1));
    CodebookTrainingOptions opts;
    opts.depth = c.depth;
    opts.codebook_size = c.codebook_size;
    opts.iterations = c.iterations;
    opts.seed = derive_seed(g.seed, 2);
    const CodebookSet books = train_codebooks(latents, opts);
    save_codebooks(fs::path(c.out) / "codebooks.json", books);

    nlohmann::ordered_json report;
    report["latent_source"] = "synthetic AR(1), unit variance";
    auto mse = nlohmann::ordered_json::array();
    for (std::size_t d = 1; d <= books.depth(); ++d) {
        const auto sub_books = books.truncated(d);
        double acc = 0.0;
        for (const auto& seq : latents) {
            acc += mean_squared_error(seq, rvq_decode(rvq_encode(seq, sub_books), sub_books));
        }
        mse.push_back(acc / static_cast<double>(latents.size()));
    }
    report["train_mse_by_depth"] = mse;
    write_json(fs::path(c.out) / "codebooks_report.json", report);
    write_snapshot(fs::path(c.out) / "config.ini", g, sub);
    out << "codebooks: D=" << books.depth() << " K=" << books.codebook_size() << " H=" << books.dim()
        << ", MSE at full depth " << mse.back().get<double>() << "\n";
    return kOk;
}

int cmd_make_dataset(const Global& g, const DatasetCmd& c, const CLI::App& sub, std::ostream& out) {
    require_file(c.codebooks, "codebooks", kBooksHint);
    require(!c.out.empty(), ErrorKind::usage, "--out is required");
    const CodebookSet books = load_codebooks(c.codebooks);
    PairGenConfig gen;
    gen.frames = c.frames;
    gen.rho = c.rho;
    gen.snr_min_db = c.snr_min;
    gen.snr_max_db = c.snr_max;
    gen.snr_override_db = c.snr;
    const auto data = generate_paired_dataset(gen, books, c.n_pairs, g.seed);
    prepare_dir(c.out);
    save_dataset(fs::path(c.out) / "dataset.json", data);
    write_snapshot(fs::path(c.out) / "config.ini", g, sub);
    double acc = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        acc += token_accuracy(data.noisy[i], data.clean[i]);
    }
    out << "dataset: " << data.size() << " pairs, L=" << data.frames << " D=" << data.depth
        << ", noisy token accuracy " << (data.size() ? acc / static_cast<double>(data.size()) : 0.0) << "\n";
    return kOk;
}

int cmd_train(const Global& g, const TrainCmd& c, const CLI::App& sub, std::ostream& out) {
    require_file(c.dataset, "dataset", kDatasetHint);
    require_file(c.codebooks, "codebooks", kBooksHint);
    require(!c.out.empty(), ErrorKind::usage, "--out is required");
    CodebookSet books = load_codebooks(c.codebooks);
    const auto data = load_dataset(c.dataset);
    require(data.depth == books.depth() && data.codebook_size == books.codebook_size(), ErrorKind::config,
            "dataset has D=" + std::to_string(data.depth) + " K=" + std::to_string(data.codebook_size) +
                " but codebooks have D=" + std::to_string(books.depth()) +
                " K=" + std::to_string(books.codebook_size()));

    RQDiTConfig mcfg;
    mcfg.hidden_dim = c.hidden_dim;
    mcfg.n_layers = c.n_layers;
    mcfg.n_heads = c.n_heads;
    mcfg.mlp_ratio = c.mlp_ratio;
    mcfg.codebook_size = books.codebook_size();
    mcfg.depth = books.depth();
    mcfg.latent_dim = books.dim();
    RQDiT model(mcfg, std::move(books), derive_seed(g.seed, 1));

    DCEConfig dcfg;
    dcfg.lambda_min = c.lambda_min;
    dcfg.batch_size = c.batch_size;
    dcfg.steps = c.steps;
    dcfg.lr = c.lr;
    dcfg.clip_norm = c.clip_norm;
    dcfg.weight_decay = c.weight_decay;
    dcfg.seed = g.seed;
    dcfg.validate();
    AdamWConfig acfg;
    acfg.lr = c.lr;
    acfg.clip_norm = c.clip_norm;
    acfg.weight_decay = c.weight_decay;
    AdamW opt(acfg);
    Rng rng(derive_seed(g.seed, 2));

    prepare_dir(c.out);
    auto metrics = open_out(fs::path(c.out) / "metrics.csv");
    write_metrics_header(metrics);
    TrainMetrics summary;
    if (c.steps > 0) {
        summary = train(model, data, dcfg, opt, rng, [&](const StepMetrics& m) { write_metrics_row(metrics, m); });
    }
    save_checkpoint(fs::path(c.out) / "model.json", model);

    nlohmann::ordered_json report;
    report["steps"] = summary.steps;
    report["mean_loss"] = summary.mean_loss;
    report["log_k"] = std::log(static_cast<double>(mcfg.codebook_size));
    auto deciles = nlohmann::ordered_json::array();
    for (std::size_t b = 0; b < 10; ++b) {
        if (summary.decile_count[b] > 0) {
            deciles.push_back(summary.decile_loss[b]);
        } else {
            deciles.push_back(nullptr);
        }
    }
    report["lambda_decile_loss"] = deciles;
    write_json(fs::path(c.out) / "train_summary.json", report);
    write_snapshot(fs::path(c.out) / "config.ini", g, sub);
    out << "trained " << summary.steps << " steps, mean loss " << summary.mean_loss << " (log K "
        << std::log(static_cast<double>(mcfg.codebook_size)) << ")\n";
    return kOk;
}

int cmd_enhance(const Global& g, const EnhanceCmd& c, const CLI::App& sub, std::ostream& out) {
    require_file(c.input, "input wav", "pass --input FILE.wav (16-bit PCM mono)");
    require(!c.output.empty(), ErrorKind::usage, "--output is required");
    require_file(c.model.codebooks, "codebooks", kBooksHint);
    CodebookSet books = load_codebooks(c.model.codebooks);
    const auto model = load_model(c.model, books.codebook_size());

    const Wave in = wav_read(c.input);
    PseudoCodec::Config pcfg;
    pcfg.frame_size = c.frame_size;
    pcfg.latent_dim = books.dim();
    pcfg.sample_rate = in.sample_rate;
    const PseudoCodec codec(pcfg);
    const CodeGrid noisy = rvq_encode(codec.analyze(in.samples), books);

    SamplerConfig scfg;
    scfg.n_steps = c.n_steps;
    scfg.decode_mode = parse_decode(c.decode);
    scfg.seed = g.seed;
    const auto [codes, trace] = sample(*model, noisy, scfg);
    auto wave = codec.synthesize(rvq_decode(codes, books));
    wave.resize(in.samples.size());

    const fs::path output(c.output);
    if (output.has_parent_path()) {
        prepare_dir(output.parent_path());
    }
    wav_write(output, wave, in.sample_rate);
    const fs::path stem = output.parent_path() / output.stem();
    {
        auto f = open_out(stem.string() + ".trace.jsonl");
        trace.write_jsonl(f);
    }
    write_snapshot(stem.string() + ".config.ini", g, sub);
    out << "enhanced " << noisy.frames() << " frames with " << trace.nfe << " model evaluations -> " << c.output
        << "\n";
    return kOk;
}

int cmd_sample(const Global& g, const SampleCmd& c, const CLI::App& sub, std::ostream& out) {
    require_file(c.dataset, "dataset", kDatasetHint);
    require(!c.out.empty(), ErrorKind::usage, "--out is required");
    const auto data = load_dataset(c.dataset);
    require(c.index < data.size(), ErrorKind::range,
            "--index " + std::to_string(c.index) + " outside dataset of " + std::to_string(data.size()) + " pairs");
    const auto model = load_model(c.model, data.codebook_size);

    SamplerConfig scfg;
    scfg.n_steps = c.n_steps;
    scfg.decode_mode = parse_decode(c.decode);
    scfg.seed = g.seed;
    const auto [codes, trace] = sample(*model, data.noisy[c.index], scfg);

    prepare_dir(c.out);
    nlohmann::ordered_json doc;
    doc["index"] = c.index;
    doc["n_steps"] = c.n_steps;
    doc["nfe"] = trace.nfe;
    doc["token_accuracy"] = token_accuracy(codes, data.clean[c.index]);
    doc["noisy_token_accuracy"] = token_accuracy(data.noisy[c.index], data.clean[c.index]);
    doc["generated"] = grid_json(codes);
    doc["noisy"] = grid_json(data.noisy[c.index]);
    doc["clean"] = grid_json(data.clean[c.index]);
    write_json(fs::path(c.out) / "sample.json", doc);
    {
        auto f = open_out(fs::path(c.out) / "trace.jsonl");
        trace.write_jsonl(f);
    }
    write_snapshot(fs::path(c.out) / "config.ini", g, sub);
    out << "sample " << c.index << ": nfe " << trace.nfe << ", token accuracy "
        << doc["token_accuracy"].get<double>() << " (noisy " << doc["noisy_token_accuracy"].get<double>() << ")\n";
    return kOk;
}

int cmd_sweep(const Global& g, const SweepCmd& c, const CLI::App& sub, std::ostream& out) {
    require_file(c.dataset, "dataset", kDatasetHint);
    require(!c.out.empty(), ErrorKind::usage, "--out is required");
    require(!c.steps_list.empty(), ErrorKind::usage, "--steps-list is empty");
    const auto data = head(load_dataset(c.dataset), c.n_examples);
    require(data.size() > 0, ErrorKind::usage, "dataset has no pairs");
    const auto model = load_model(c.model, data.codebook_size);

    DCEConfig dcfg;
    const double dce = eval_dce(*model, data, dcfg, c.n_lambda, derive_seed(g.seed, 1));

    prepare_dir(c.out);
    auto csv = open_out(fs::path(c.out) / "sweep.csv");
    csv << "n_steps,mean_nfe,max_nfe,dce,token_accuracy,noisy_token_accuracy\n";
    csv.precision(17);
    for (std::size_t n : c.steps_list) {
        require(n > 0, ErrorKind::usage, "--steps-list entries must be positive");
        double nfe = 0.0;
        std::size_t max_nfe = 0;
        double acc = 0.0;
        double noisy_acc = 0.0;
        // One derived stream per (n_steps, example) cell.
        for (std::size_t e = 0; e < data.size(); ++e) {
            SamplerConfig scfg;
            scfg.n_steps = n;
            scfg.seed = derive_seed(derive_seed(g.seed, 2 + n), e);
            const auto [codes, trace] = sample(*model, data.noisy[e], scfg);
            nfe += static_cast<double>(trace.nfe);
            max_nfe = std::max(max_nfe, trace.nfe);
            acc += token_accuracy(codes, data.clean[e]);
            noisy_acc += token_accuracy(data.noisy[e], data.clean[e]);
        }
        const double m = static_cast<double>(data.size());
        csv << n << "," << nfe / m << "," << max_nfe << "," << dce << "," << acc / m << "," << noisy_acc / m << "\n";
        out << "n_steps " << n << ": mean NFE " << nfe / m << ", token accuracy " << acc / m << "\n";
    }
    write_snapshot(fs::path(c.out) / "config.ini", g, sub);
    return kOk;
}

// SNR in dB of `estimate` against `reference`, pooled over all frames.
double pooled_snr_db(double signal, double error) {
    return error > 0.0 ? 10.0 * std::log10(signal / error) : std::numeric_limits<double>::infinity();
}

int cmd_eval(const Global& g, const EvalCmd& c, const CLI::App& sub, std::ostream& out) {
    require_file(c.dataset, "dataset", kDatasetHint);
    require(!c.out.empty(), ErrorKind::usage, "--out is required");
    const auto data = head(load_dataset(c.dataset), c.n_examples);
    require(data.size() > 0, ErrorKind::usage, "dataset has no pairs");
    const auto model = load_model(c.model, data.codebook_size);
    std::optional<CodebookSet> books;
    if (!c.model.codebooks.empty()) {
        require_file(c.model.codebooks, "codebooks", kBooksHint);
        books = load_codebooks(c.model.codebooks);
    }

    DCEConfig dcfg;
    const double dce = eval_dce(*model, data, dcfg, c.n_lambda, derive_seed(g.seed, 1));
    double acc = 0.0;
    double noisy_acc = 0.0;
    double nfe = 0.0;
    double signal = 0.0;
    double noisy_err = 0.0;
    double enhanced_err = 0.0;
    for (std::size_t e = 0; e < data.size(); ++e) {
        SamplerConfig scfg;
        scfg.n_steps = c.n_steps;
        scfg.seed = derive_seed(g.seed, 1000 + e);
        const auto [codes, trace] = sample(*model, data.noisy[e], scfg);
        acc += token_accuracy(codes, data.clean[e]);
        noisy_acc += token_accuracy(data.noisy[e], data.clean[e]);
        nfe += static_cast<double>(trace.nfe);
        if (books) {
            const auto ref = rvq_decode(data.clean[e], *books);
            const auto noisy_lat = rvq_decode(data.noisy[e], *books);
            const auto enh_lat = rvq_decode(codes, *books);
            for (std::size_t i = 0; i < ref.values.size(); ++i) {
                signal += ref.values[i] * ref.values[i];
                noisy_err += (ref.values[i] - noisy_lat.values[i]) * (ref.values[i] - noisy_lat.values[i]);
                enhanced_err += (ref.values[i] - enh_lat.values[i]) * (ref.values[i] - enh_lat.values[i]);
            }
        }
    }
    const double m = static_cast<double>(data.size());
    const double log_k = std::log(static_cast<double>(data.codebook_size));
    nlohmann::ordered_json doc;
    doc["model"] = model->name();
    doc["examples"] = data.size();
    doc["n_steps"] = c.n_steps;
    doc["dce"] = dce;
    doc["log_k"] = log_k;
    doc["dce_reduction_vs_uniform"] = 1.0 - dce / log_k;
    doc["token_accuracy"] = acc / m;
    doc["noisy_token_accuracy"] = noisy_acc / m;
    doc["mean_nfe"] = nfe / m;
    if (books) {
        // Quantized latents; null means an exact match.
        const double sn = pooled_snr_db(signal, noisy_err);
        const double se = pooled_snr_db(signal, enhanced_err);
        doc["latent_snr_noisy_db"] = sn;
        doc["latent_snr_enhanced_db"] = se;
        doc["latent_snr_improvement_db"] = se - sn;
    }
    doc["metrics_note"] = kMetricsNote;
    prepare_dir(c.out);
    write_json(fs::path(c.out) / "eval.json", doc);
    write_snapshot(fs::path(c.out) / "config.ini", g, sub);
    out << "DCE " << dce << " (log K " << log_k << "), token accuracy " << acc / m << " vs noisy " << noisy_acc / m
        << ", mean NFE " << nfe / m << "\n";
    return kOk;
}

int cmd_verify(const Global& g, const VerifyCmd& c, const CLI::App& sub, std::ostream& out) {
    verify::Options opts;
    opts.seed = g.seed;
    if (!c.fixtures.empty()) {
        opts.fixture_dir = c.fixtures;
    }
    if (!c.checkpoint.empty()) {
        require_file(c.checkpoint, "checkpoint", kCheckpointHint);
        opts.checkpoint = c.checkpoint;
    }
    if (!c.codebooks.empty()) {
        require_file(c.codebooks, "codebooks", kBooksHint);
        opts.codebooks = c.codebooks;
    }
    if (!c.work_dir.empty()) {
        prepare_dir(c.work_dir);
        opts.work_dir = c.work_dir;
    }
    auto& e2e = opts.end_to_end;
    const bool tuned = c.e2e_steps || c.e2e_train_pairs || c.e2e_hidden_dim || c.e2e_latent_dim || c.e2e_lr;
    e2e.steps = c.e2e_steps.value_or(e2e.steps);
    e2e.train_pairs = c.e2e_train_pairs.value_or(e2e.train_pairs);
    e2e.hidden_dim = c.e2e_hidden_dim.value_or(e2e.hidden_dim);
    e2e.latent_dim = c.e2e_latent_dim.value_or(e2e.latent_dim);
    e2e.lr = c.e2e_lr.value_or(e2e.lr);
    // Pinned regression values only describe the default configuration.
    if (!tuned) {
        e2e.reference = fs::path(ADDSE_SOURCE_DIR) / "tests" / "reference" / "end_to_end.json";
    }
    if (!c.quiet) {
        opts.log = [&out](const std::string& msg) { out << "  .. " << msg << std::endl; };
    }

    std::vector<std::string> names;
    for (const auto& s : c.suites) {
        if (s == "all") {
            const auto all = verify::default_suites();
            names.insert(names.end(), all.begin(), all.end());
        } else {
            names.push_back(s);
        }
    }
    const auto known = verify::all_suites();
    for (const auto& s : names) {
        if (std::find(known.begin(), known.end(), s) == known.end()) {
            verify::run_suite(s, opts);  // throws usage with the list of suites
        }
    }

    std::vector<verify::SuiteReport> reports;
    for (const auto& s : names) {
        out << "suite " << s << std::endl;
        reports.push_back(verify::run_suite(s, opts));
        for (const auto& check : reports.back().checks) {
            out << "  " << (check.passed ? "PASS " : "FAIL ") << check.name << ": " << check.value << " "
                << check.relation << " " << check.threshold;
            if (!check.detail.empty()) {
                out << "  [" << check.detail << "]";
            }
            out << "\n";
        }
    }
    if (!c.out.empty()) {
        prepare_dir(c.out);
        write_json(fs::path(c.out) / "report.json", verify::to_json(reports));
        write_snapshot(fs::path(c.out) / "config.ini", g, sub);
    }
    for (const auto& r : reports) {
        if (const auto* f = r.first_failure()) {
            out << "FAILED: " << r.suite << ": " << f->name;
            if (!f->detail.empty()) {
                out << " (" << f->detail << ")";
            }
            out << "\n";
            return kFailed;
        }
    }
    out << "all " << reports.size() << " suites passed\n";
    return kOk;
}

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::usage:
        case ErrorKind::config:
        case ErrorKind::io:
        case ErrorKind::format:
        case ErrorKind::invalid_input:
        case ErrorKind::range:
            return kUsage;
        default:
            return kFailed;
    }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app("Absorbing discrete diffusion speech enhancement on RVQ codes (desk-scale toolkit)", "addse");
    app.option_defaults()->always_capture_default();
    app.config_formatter(std::make_shared<CLI::ConfigINI>());
    app.set_config("--config", "", "INI config (key = value, [subcommand] sections); flags win over the file");
    app.set_version_flag("--version", ADDSE_VERSION);
    app.require_subcommand(1);

    Global g;
    app.add_option("--seed", g.seed, "Global seed; every artifact is a function of (config, seed)");

    CodebooksCmd cb;
    auto* s_cb = app.add_subcommand("train-codebooks", "Fit residual k-means codebooks on synthetic latents");
    s_cb->add_option("--out", cb.out, "Output directory")->required();
    s_cb->add_option("--depth", cb.depth, "Quantizer depth D")->check(CLI::PositiveNumber);
    s_cb->add_option("--codebook-size", cb.codebook_size, "Entries per codebook K")->check(CLI::PositiveNumber);
    s_cb->add_option("--latent-dim", cb.latent_dim, "Latent dimension H")->check(CLI::PositiveNumber);
    s_cb->add_option("--n-sequences", cb.n_sequences, "Training sequences")->check(CLI::PositiveNumber);
    s_cb->add_option("--frames", cb.frames, "Frames per sequence")->check(CLI::PositiveNumber);
    s_cb->add_option("--rho", cb.rho, "AR(1) coefficient of the synthetic latents")->check(CLI::Range(-0.999, 0.999));
    s_cb->add_option("--iterations", cb.iterations, "Lloyd iterations per stage");

    DatasetCmd ds;
    auto* s_ds = app.add_subcommand("make-dataset", "Generate a paired clean/noisy code dataset");
    s_ds->add_option("--codebooks", ds.codebooks, "Codebooks file")->required();
    s_ds->add_option("--out", ds.out, "Output directory")->required();
    s_ds->add_option("--n-pairs", ds.n_pairs, "Number of pairs");
    s_ds->add_option("--frames", ds.frames, "Frames per pair (L)")->check(CLI::PositiveNumber);
    s_ds->add_option("--rho", ds.rho, "AR(1) coefficient")->check(CLI::Range(-0.999, 0.999));
    s_ds->add_option("--snr-min", ds.snr_min, "Lowest latent SNR in dB");
    s_ds->add_option("--snr-max", ds.snr_max, "Highest latent SNR in dB");
    s_ds->add_option("--snr", ds.snr, "Fix every pair's latent SNR in dB");

    TrainCmd tr;
    auto* s_tr = app.add_subcommand("train", "Train the RQDiT denoiser with the DCE objective");
    s_tr->add_option("--dataset", tr.dataset, "Dataset manifest")->required();
    s_tr->add_option("--codebooks", tr.codebooks, "Codebooks file")->required();
    s_tr->add_option("--out", tr.out, "Output directory")->required();
    s_tr->add_option("--steps", tr.steps, "Optimizer steps");
    s_tr->add_option("--batch-size", tr.batch_size, "Batch size")->check(CLI::PositiveNumber);
    s_tr->add_option("--lr", tr.lr, "AdamW learning rate");
    s_tr->add_option("--clip-norm", tr.clip_norm, "Global gradient-norm clip (<= 0 disables)");
    s_tr->add_option("--weight-decay", tr.weight_decay, "Decoupled weight decay");
    s_tr->add_option("--lambda-min", tr.lambda_min, "Lower clamp of the sampled mask ratio")
        ->check(CLI::Range(1e-12, 1.0));
    s_tr->add_option("--hidden-dim", tr.hidden_dim, "Transformer width")->check(CLI::PositiveNumber);
    s_tr->add_option("--n-layers", tr.n_layers, "Blocks per stack")->check(CLI::PositiveNumber);
    s_tr->add_option("--n-heads", tr.n_heads, "Attention heads")->check(CLI::PositiveNumber);
    s_tr->add_option("--mlp-ratio", tr.mlp_ratio, "MLP expansion ratio")->check(CLI::PositiveNumber);

    EnhanceCmd en;
    auto* s_en = app.add_subcommand("enhance", "Enhance a 16-bit mono WAV: encode, sample clean codes, decode");
    s_en->add_option("--input", en.input, "Noisy input WAV")->required();
    s_en->add_option("--output", en.output, "Enhanced output WAV")->required();
    add_model_options(s_en, en.model);
    s_en->add_option("--n-steps", en.n_steps, "Reverse sampling steps")->check(CLI::PositiveNumber);
    s_en->add_option("--decode", en.decode, "Code choice per unmasked position")
        ->check(CLI::IsMember({"categorical", "argmax"}));
    s_en->add_option("--frame-size", en.frame_size, "Samples per codec frame")->check(CLI::PositiveNumber);

    SampleCmd sa;
    auto* s_sa = app.add_subcommand("sample", "Sample clean codes for one dataset pair");
    s_sa->add_option("--dataset", sa.dataset, "Dataset manifest")->required();
    add_model_options(s_sa, sa.model);
    s_sa->add_option("--index", sa.index, "Pair index");
    s_sa->add_option("--n-steps", sa.n_steps, "Reverse sampling steps")->check(CLI::PositiveNumber);
    s_sa->add_option("--decode", sa.decode, "Code choice per unmasked position")
        ->check(CLI::IsMember({"categorical", "argmax"}));
    s_sa->add_option("--out", sa.out, "Output directory")->required();

    SweepCmd sw;
    auto* s_sw = app.add_subcommand("sweep-steps", "NFE, DCE and token accuracy as functions of n_steps (CSV)");
    s_sw->add_option("--dataset", sw.dataset, "Dataset manifest")->required();
    add_model_options(s_sw, sw.model);
    s_sw->add_option("--steps-list", sw.steps_list, "Comma-separated n_steps values")->delimiter(',');
    s_sw->add_option("--n-examples", sw.n_examples, "Pairs used per n_steps (0 = all)");
    s_sw->add_option("--n-lambda", sw.n_lambda, "Mask ratios per example for DCE")->check(CLI::PositiveNumber);
    s_sw->add_option("--out", sw.out, "Output directory")->required();

    EvalCmd ev;
    auto* s_ev = app.add_subcommand("eval", "DCE, token accuracy, latent SNR and NFE on a dataset");
    s_ev->add_option("--dataset", ev.dataset, "Dataset manifest")->required();
    add_model_options(s_ev, ev.model);
    s_ev->add_option("--n-lambda", ev.n_lambda, "Mask ratios per example for DCE")->check(CLI::PositiveNumber);
    s_ev->add_option("--n-steps", ev.n_steps, "Reverse sampling steps")->check(CLI::PositiveNumber);
    s_ev->add_option("--n-examples", ev.n_examples, "Pairs evaluated (0 = all)");
    s_ev->add_option("--out", ev.out, "Output directory")->required();

    VerifyCmd vf;
    auto* s_vf = app.add_subcommand("verify", "Run oracle verification suites; exit 1 on any failed check");
    s_vf->add_option("--suite", vf.suites, "Suite name, repeatable; 'all' runs every suite except end-to-end");
    s_vf->add_option("--out", vf.out, "Write report.json here");
    s_vf->add_option("--checkpoint", vf.checkpoint, "Gradient-check this checkpoint instead of a random model");
    s_vf->add_option("--codebooks", vf.codebooks, "Codebooks for --checkpoint (random ones otherwise)");
    s_vf->add_option("--fixtures", vf.fixtures, "Fixture directory");
    s_vf->add_option("--work-dir", vf.work_dir, "Scratch directory for the reproducibility suite");
    s_vf->add_option("--e2e-steps", vf.e2e_steps, "end-to-end: optimizer steps");
    s_vf->add_option("--e2e-train-pairs", vf.e2e_train_pairs, "end-to-end: training pairs");
    s_vf->add_option("--e2e-hidden-dim", vf.e2e_hidden_dim, "end-to-end: model width");
    s_vf->add_option("--e2e-latent-dim", vf.e2e_latent_dim, "end-to-end: latent dimension H");
    s_vf->add_option("--e2e-lr", vf.e2e_lr, "end-to-end: learning rate");
    s_vf->add_flag("--quiet", vf.quiet, "Suppress progress lines");

    for (auto* sub : app.get_subcommands({})) {
        sub->fallthrough();
    }

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (s_cb->parsed()) {
            return cmd_train_codebooks(g, cb, *s_cb, out);
        }
        if (s_ds->parsed()) {
            return cmd_make_dataset(g, ds, *s_ds, out);
        }
        if (s_tr->parsed()) {
            return cmd_train(g, tr, *s_tr, out);
        }
        if (s_en->parsed()) {
            return cmd_enhance(g, en, *s_en, out);
        }
        if (s_sa->parsed()) {
            return cmd_sample(g, sa, *s_sa, out);
        }
        if (s_sw->parsed()) {
            return cmd_sweep(g, sw, *s_sw, out);
        }
        if (s_ev->parsed()) {
            return cmd_eval(g, ev, *s_ev, out);
        }
        return cmd_verify(g, vf, *s_vf, out);
    } catch (const Error& e) {
        err << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kFailed;
    }
}

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace addse::cli
