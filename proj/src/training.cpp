// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#include "addse/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "addse/diffusion.hpp"

namespace addse {
namespace {

void check_lambda(double lam) {
    require(lam > 0.0 && lam <= 1.0, ErrorKind::range, "DCE: lambda " + std::to_string(lam) + " outside (0, 1]");
}

void check_loss_inputs(const ConditionalProbs& rows, const CodeGrid& clean, const MaskedGrid& masked) {
    require(rows.matches(clean) && clean.same_shape(masked), ErrorKind::config, "DCE: shape mismatch");
}

std::size_t decile_of(double lam) {
    return std::min<std::size_t>(9, static_cast<std::size_t>(lam * 10.0));
}

std::vector<double> ar1_latents(Rng& rng, std::size_t frames, std::size_t dim, double rho) {
    std::vector<double> x(frames * dim);
    const double innovation = std::sqrt(1.0 - rho * rho);
    for (std::size_t h = 0; h < dim; ++h) {
        x[h] = rng.normal();
    }
    for (std::size_t i = 1; i < frames; ++i) {
        for (std::size_t h = 0; h < dim; ++h) {
            x[i * dim + h] = rho * x[(i - 1) * dim + h] + innovation * rng.normal();
        }
    }
    return x;
}

double mean_square(const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) {
        acc += x * x;
    }
    return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

}  // namespace

void DCEConfig::validate() const {
    require(lambda_min > 0.0 && lambda_min < 1.0, ErrorKind::config, "DCEConfig: lambda_min must lie in (0, 1)");
    require(batch_size >= 1, ErrorKind::config, "DCEConfig: batch_size must be >= 1");
    require(lr >= 0.0, ErrorKind::config, "DCEConfig: lr must be >= 0");
}

DCEValue dce_loss(const ConditionalProbs& probs, const CodeGrid& clean, const MaskedGrid& masked, double lam) {
    check_lambda(lam);
    check_loss_inputs(probs, clean, masked);
    DCEValue out;
    double nll = 0.0;
    for (std::size_t p = 0; p < masked.size(); ++p) {
        if (!masked.is_masked(p)) {
            continue;
        }
        ++out.masked;
        const double q = probs.row(p)[static_cast<std::size_t>(clean[p])];
        if (q <= 0.0) {
            out.infinite_positions.push_back(p);
            nll = std::numeric_limits<double>::infinity();
            continue;
        }
        nll -= std::log(q);
    }
    out.unnormalized = nll / lam;
    out.normalized = out.unnormalized / static_cast<double>(masked.size());
    return out;
}

DCEValue dce_loss_from_logits(const ConditionalProbs& logits, const CodeGrid& clean, const MaskedGrid& masked,
                              double lam, ConditionalProbs* dlogits) {
    check_lambda(lam);
    check_loss_inputs(logits, clean, masked);
    const double scale = 1.0 / (lam * static_cast<double>(masked.size()));
    if (dlogits) {
        *dlogits = ConditionalProbs(logits.frames, logits.depth, logits.codebook_size);
    }
    DCEValue out;
    double nll = 0.0;
    std::vector<double> q(logits.codebook_size);
    for (std::size_t p = 0; p < masked.size(); ++p) {
        if (!masked.is_masked(p)) {
            continue;
        }
        ++out.masked;
        const auto row = logits.row(p);
        const double top = *std::max_element(row.begin(), row.end());
        double total = 0.0;
        for (std::size_t k = 0; k < row.size(); ++k) {
            q[k] = std::exp(row[k] - top);
            total += q[k];
        }
        const auto target = static_cast<std::size_t>(clean[p]);
        const double log_q = row[target] - top - std::log(total);
        if (std::isinf(log_q)) {
            out.infinite_positions.push_back(p);
        }
        nll -= log_q;
        if (dlogits) {
            auto g = dlogits->row(p);
            for (std::size_t k = 0; k < row.size(); ++k) {
                g[k] = scale * (q[k] / total - (k == target ? 1.0 : 0.0));
            }
        }
    }
    out.unnormalized = nll / lam;
    out.normalized = out.unnormalized / static_cast<double>(masked.size());
    return out;
}

void PairedCodeDataset::validate() const {
    require(clean.size() == noisy.size() && snr_db.size() == clean.size(), ErrorKind::invalid_input,
            "PairedCodeDataset: clean/noisy/snr counts differ");
    for (std::size_t i = 0; i < clean.size(); ++i) {
        require(clean[i].frames() == frames && clean[i].depth() == depth && clean[i].codebook_size() == codebook_size &&
                    clean[i].same_shape(noisy[i]),
                ErrorKind::invalid_input, "PairedCodeDataset: pair " + std::to_string(i) + " has the wrong shape");
        clean[i].validate(false);
        noisy[i].validate(false);
    }
}

std::vector<LatentSeq> generate_clean_latents(std::size_t n_sequences, std::size_t frames, std::size_t dim,
                                              double rho, std::uint64_t seed) {
    require(rho > -1.0 && rho < 1.0, ErrorKind::config, "AR(1) coefficient must lie in (-1, 1)");
    std::vector<LatentSeq> out;
    out.reserve(n_sequences);
    for (std::size_t s = 0; s < n_sequences; ++s) {
        Rng rng(derive_seed(seed, s));
        LatentSeq seq(frames, dim);
        seq.values = ar1_latents(rng, frames, dim, rho);
        out.push_back(std::move(seq));
    }
    return out;
}

PairedCodeDataset generate_paired_dataset(const PairGenConfig& gen, const CodebookSet& books, std::size_t n_pairs,
                                          std::uint64_t seed) {
    require(n_pairs >= 1, ErrorKind::config, "generate_paired_dataset: n_pairs must be >= 1");
    require(gen.frames >= 1, ErrorKind::config, "generate_paired_dataset: frames must be >= 1");
    require(gen.rho > -1.0 && gen.rho < 1.0, ErrorKind::config, "AR(1) coefficient must lie in (-1, 1)");
    require(gen.snr_min_db <= gen.snr_max_db, ErrorKind::config, "generate_paired_dataset: snr_min > snr_max");
    PairedCodeDataset ds;
    ds.frames = gen.frames;
    ds.depth = books.depth();
    ds.codebook_size = books.codebook_size();
    ds.seed = seed;
    ds.rho = gen.rho;
    ds.snr_min_db = gen.snr_override_db.value_or(gen.snr_min_db);
    ds.snr_max_db = gen.snr_override_db.value_or(gen.snr_max_db);
    const std::size_t dim = books.dim();
    for (std::size_t p = 0; p < n_pairs; ++p) {
        Rng rng(derive_seed(seed, p));
        const double u = rng.uniform();
        const double snr = gen.snr_override_db ? *gen.snr_override_db
                                               : gen.snr_min_db + (gen.snr_max_db - gen.snr_min_db) * u;
        LatentSeq clean(gen.frames, dim);
        clean.values = ar1_latents(rng, gen.frames, dim, gen.rho);
        std::vector<double> noise(gen.frames * dim);
        for (double& v : noise) {
            v = rng.normal();
        }
        const double scale = std::sqrt(mean_square(clean.values) / (mean_square(noise) * std::pow(10.0, snr / 10.0)));
        LatentSeq noisy = clean;
        for (std::size_t i = 0; i < noise.size(); ++i) {
            noisy.values[i] += scale * noise[i];
        }
        ds.clean.push_back(rvq_encode(clean, books));
        ds.noisy.push_back(rvq_encode(noisy, books));
        ds.snr_db.push_back(snr);
    }
    return ds;
}

void save_dataset(const std::filesystem::path& manifest, const PairedCodeDataset& dataset) {
    dataset.validate();
    require(dataset.codebook_size <= 65535, ErrorKind::config, "save_dataset: K does not fit uint16 codes");
    auto payload = manifest;
    payload.replace_extension(".codes");
    nlohmann::ordered_json doc;
    doc["version"] = 1;
    doc["L"] = dataset.frames;
    doc["D"] = dataset.depth;
    doc["K"] = dataset.codebook_size;
    doc["n_pairs"] = dataset.size();
    doc["seed"] = dataset.seed;
    doc["rho"] = dataset.rho;
    doc["snr_domain"] = "latent";
    doc["snr_min_db"] = dataset.snr_min_db;
    doc["snr_max_db"] = dataset.snr_max_db;
    doc["snr_db"] = dataset.snr_db;
    doc["payload"] = payload.filename().string();
    doc["code_dtype"] = "uint16le";
    doc["payload_order"] = "pair -> [clean, noisy] -> frame -> depth";
    doc["index_convention"] = "codes are 0-indexed; the mask symbol is K";
    std::ofstream out(manifest);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write " + manifest.string());
    out << doc.dump(2) << '\n';

    std::string bytes;
    bytes.reserve(dataset.size() * 2 * dataset.frames * dataset.depth * 2);
    auto put = [&](const CodeGrid& g) {
        for (Code c : g.codes()) {
            const auto v = static_cast<std::uint16_t>(c);
            bytes.push_back(static_cast<char>(v & 0xff));
            bytes.push_back(static_cast<char>(v >> 8));
        }
    };
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        put(dataset.clean[i]);
        put(dataset.noisy[i]);
    }
    std::ofstream bin(payload, std::ios::binary);
    require(static_cast<bool>(bin), ErrorKind::io, "cannot write " + payload.string());
    bin.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

PairedCodeDataset load_dataset(const std::filesystem::path& manifest) {
    std::ifstream in(manifest);
    require(static_cast<bool>(in), ErrorKind::io, "cannot read " + manifest.string());
    PairedCodeDataset ds;
    std::filesystem::path payload;
    std::size_t n_pairs = 0;
    try {
        const auto doc = nlohmann::json::parse(in);
        ds.frames = doc.at("L").get<std::size_t>();
        ds.depth = doc.at("D").get<std::size_t>();
        ds.codebook_size = doc.at("K").get<std::size_t>();
        n_pairs = doc.at("n_pairs").get<std::size_t>();
        ds.seed = doc.at("seed").get<std::uint64_t>();
        ds.rho = doc.at("rho").get<double>();
        ds.snr_min_db = doc.at("snr_min_db").get<double>();
        ds.snr_max_db = doc.at("snr_max_db").get<double>();
        ds.snr_db = doc.at("snr_db").get<std::vector<double>>();
        payload = manifest.parent_path() / doc.at("payload").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::format, manifest.string() + ": " + e.what());
    }
    std::ifstream bin(payload, std::ios::binary);
    require(static_cast<bool>(bin), ErrorKind::io, "cannot read " + payload.string());
    const std::string bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
    const std::size_t per_grid = ds.frames * ds.depth;
    require(bytes.size() == n_pairs * 2 * per_grid * 2, ErrorKind::format,
            payload.string() + ": payload has " + std::to_string(bytes.size()) + " bytes, expected " +
                std::to_string(n_pairs * 2 * per_grid * 2));
    std::size_t at = 0;
    auto take = [&] {
        CodeGrid g(ds.frames, ds.depth, ds.codebook_size);
        for (std::size_t p = 0; p < per_grid; ++p, at += 2) {
            g[p] = static_cast<Code>(static_cast<unsigned char>(bytes[at]) |
                                     (static_cast<unsigned char>(bytes[at + 1]) << 8));
        }
        return g;
    };
    for (std::size_t i = 0; i < n_pairs; ++i) {
        ds.clean.push_back(take());
        ds.noisy.push_back(take());
    }
    ds.validate();
    return ds;
}

TrainMetrics train_epoch(TrainableModel& model, const PairedCodeDataset& dataset, const DCEConfig& cfg, AdamW& opt,
                         Rng& rng, const StepCallback& on_step, std::size_t max_steps) {
    cfg.validate();
    require(dataset.size() > 0, ErrorKind::invalid_input, "train_epoch: empty dataset");
    require(dataset.codebook_size == model.codebook_size(), ErrorKind::config,
            "train_epoch: dataset K=" + std::to_string(dataset.codebook_size) + " but model K=" +
                std::to_string(model.codebook_size()));

    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[static_cast<std::size_t>(rng.below(i))]);
    }

    TrainMetrics metrics;
    metrics.lambda_min = cfg.lambda_min;
    std::array<double, 10> decile_sum{};
    double loss_sum = 0.0;
    std::size_t examples = 0;
    ConditionalProbs dlogits;
    ParamStore& params = model.params();
    for (std::size_t start = 0; start < order.size() && metrics.steps < max_steps; start += cfg.batch_size) {
        const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
        const double inv_batch = 1.0 / static_cast<double>(stop - start);
        params.zero_grad();
        StepMetrics step;
        step.step = opt.steps_taken() + 1;
        std::array<double, 10> batch_decile_sum{};
        std::array<std::size_t, 10> batch_decile_count{};
        std::vector<double> lambdas;
        std::vector<MaskedGrid> masked;
        std::vector<CodeGrid> noisy;
        for (std::size_t b = start; b < stop; ++b) {
            const double lam = cfg.lambda_min + (1.0 - cfg.lambda_min) * rng.uniform();
            lambdas.push_back(lam);
            masked.push_back(forward_corrupt(dataset.clean[order[b]], lam, rng));
            noisy.push_back(dataset.noisy[order[b]]);
        }
        const auto logits = model.forward_logits_batch(masked, noisy);
        ConditionalProbs dbatch(logits.frames, logits.depth, logits.codebook_size);
        const std::size_t stride = dataset.frames * dataset.depth * dataset.codebook_size;
        ConditionalProbs slice(dataset.frames, dataset.depth, dataset.codebook_size);
        double batch_loss = 0.0;
        for (std::size_t b = 0; b < masked.size(); ++b) {
            const double lam = lambdas[b];
            std::copy_n(logits.values.begin() + static_cast<std::ptrdiff_t>(b * stride), stride, slice.values.begin());
            const auto value = dce_loss_from_logits(slice, dataset.clean[order[start + b]], masked[b], lam, &dlogits);
            if (std::isnan(value.normalized)) {
                std::ostringstream msg;
                msg << "NaN loss in batch " << (start / cfg.batch_size) << " (step " << step.step << ", example "
                    << order[start + b] << "); lambdas:";
                for (double l : lambdas) {
                    msg << ' ' << l;
                }
                fail(ErrorKind::training, msg.str());
            }
            std::transform(dlogits.values.begin(), dlogits.values.end(),
                           dbatch.values.begin() + static_cast<std::ptrdiff_t>(b * stride),
                           [&](double g) { return g * inv_batch; });
            batch_loss += value.normalized;
            const std::size_t dec = decile_of(lam);
            batch_decile_sum[dec] += value.normalized;
            ++batch_decile_count[dec];
            decile_sum[dec] += value.normalized;
            ++metrics.decile_count[dec];
        }
        model.backward_batch(dbatch);
        const auto stats = opt.step(params);
        step.loss = batch_loss * inv_batch;
        step.lr = opt.config().lr;
        step.grad_norm = stats.grad_norm;
        for (std::size_t d = 0; d < 10; ++d) {
            step.decile_loss[d] = batch_decile_count[d] > 0
                                      ? batch_decile_sum[d] / static_cast<double>(batch_decile_count[d])
                                      : std::numeric_limits<double>::quiet_NaN();
        }
        loss_sum += batch_loss;
        examples += stop - start;
        ++metrics.steps;
        if (on_step) {
            on_step(step);
        }
    }
    metrics.mean_loss = examples > 0 ? loss_sum / static_cast<double>(examples) : 0.0;
    for (std::size_t d = 0; d < 10; ++d) {
        metrics.decile_loss[d] = metrics.decile_count[d] > 0
                                     ? decile_sum[d] / static_cast<double>(metrics.decile_count[d])
                                     : std::numeric_limits<double>::quiet_NaN();
    }
    return metrics;
}

TrainMetrics train(TrainableModel& model, const PairedCodeDataset& dataset, const DCEConfig& cfg, AdamW& opt, Rng& rng,
                   const StepCallback& on_step) {
    TrainMetrics total;
    total.lambda_min = cfg.lambda_min;
    std::array<double, 10> decile_sum{};
    double loss_sum = 0.0;
    std::size_t examples = 0;
    while (total.steps < cfg.steps) {
        const auto epoch = train_epoch(model, dataset, cfg, opt, rng, on_step, cfg.steps - total.steps);
        total.steps += epoch.steps;
        std::size_t epoch_examples = 0;
        for (std::size_t d = 0; d < 10; ++d) {
            epoch_examples += epoch.decile_count[d];
            total.decile_count[d] += epoch.decile_count[d];
            if (epoch.decile_count[d] > 0) {
                decile_sum[d] += epoch.decile_loss[d] * static_cast<double>(epoch.decile_count[d]);
            }
        }
        loss_sum += epoch.mean_loss * static_cast<double>(epoch_examples);
        examples += epoch_examples;
    }
    total.mean_loss = examples > 0 ? loss_sum / static_cast<double>(examples) : 0.0;
    for (std::size_t d = 0; d < 10; ++d) {
        total.decile_loss[d] = total.decile_count[d] > 0 ? decile_sum[d] / static_cast<double>(total.decile_count[d])
                                                         : std::numeric_limits<double>::quiet_NaN();
    }
    return total;
}

double eval_dce(const ConditionalModel& model, const PairedCodeDataset& dataset, const DCEConfig& cfg,
                std::size_t n_lambda, std::uint64_t seed) {
    cfg.validate();
    require(n_lambda >= 1, ErrorKind::config, "eval_dce: n_lambda must be >= 1");
    require(dataset.size() > 0, ErrorKind::invalid_input, "eval_dce: empty dataset");
    double acc = 0.0;
    const double width = (1.0 - cfg.lambda_min) / static_cast<double>(n_lambda);
    for (std::size_t e = 0; e < dataset.size(); ++e) {
        Rng rng(derive_seed(seed, e));
        for (std::size_t b = 0; b < n_lambda; ++b) {
            const double lam = cfg.lambda_min + (static_cast<double>(b) + 0.5) * width;
            const MaskedGrid masked = forward_corrupt(dataset.clean[e], lam, rng);
            acc += dce_loss(model.predict(masked, dataset.noisy[e]), dataset.clean[e], masked, lam).normalized;
        }
    }
    return acc / static_cast<double>(dataset.size() * n_lambda);
}

void write_metrics_header(std::ostream& out) {
    out << "step,loss,lr,grad_norm";
    for (int d = 0; d < 10; ++d) {
        out << ",lambda_decile_" << d;
    }
    out << '\n';
}

void write_metrics_row(std::ostream& out, const StepMetrics& m) {
    out << m.step << ',' << std::setprecision(10) << m.loss << ',' << m.lr << ',' << m.grad_norm;
    for (double v : m.decile_loss) {
        out << ',';
        if (!std::isnan(v)) {
            out << v;
        }
    }
    out << '\n';
}

}  // namespace addse
