// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#include "addse/codec.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>

#include <json.hpp>

#include "addse/rng.hpp"

namespace addse {
namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t h = 0; h < a.size(); ++h) {
        const double d = a[h] - b[h];
        acc += d * d;
    }
    return acc;
}

// Smallest index wins ties.
std::size_t nearest(const double* point, const std::vector<double>& centroids, std::size_t count, std::size_t dim,
                    double* best_distance = nullptr) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < count; ++k) {
        const double d = squared_distance({point, dim}, {centroids.data() + k * dim, dim});
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    if (best_distance) {
        *best_distance = best_d;
    }
    return best;
}

std::size_t count_distinct(const std::vector<double>& points, std::size_t n, std::size_t dim) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        order[i] = i;
    }
    auto row_less = [&](std::size_t a, std::size_t b) {
        return std::lexicographical_compare(points.begin() + a * dim, points.begin() + (a + 1) * dim,
                                            points.begin() + b * dim, points.begin() + (b + 1) * dim);
    };
    std::sort(order.begin(), order.end(), row_less);
    std::size_t distinct = n > 0 ? 1 : 0;
    for (std::size_t i = 1; i < n; ++i) {
        if (row_less(order[i - 1], order[i])) {
            ++distinct;
        }
    }
    return distinct;
}

// Lloyd's algorithm with k-means++ seeding on n points of dimension dim.
std::vector<double> kmeans(const std::vector<double>& points, std::size_t n, std::size_t dim, std::size_t k,
                           std::size_t iterations, Rng& rng) {
    std::vector<double> centroids(k * dim, 0.0);

    // k-means++ seeding: first centre uniform, then proportional to D^2.
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    std::size_t first = static_cast<std::size_t>(rng.below(n));
    std::copy_n(points.begin() + first * dim, dim, centroids.begin());
    for (std::size_t c = 1; c < k; ++c) {
        const double* prev = centroids.data() + (c - 1) * dim;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], squared_distance({points.data() + i * dim, dim}, {prev, dim}));
        }
        const std::size_t pick = rng.categorical(d2);
        std::copy_n(points.begin() + pick * dim, dim, centroids.begin() + c * dim);
    }

    std::vector<std::size_t> assign(n, k);
    std::vector<double> dist(n, 0.0);
    std::vector<double> sums(k * dim);
    std::vector<std::size_t> counts(k);
    for (std::size_t it = 0; it < iterations; ++it) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t a = nearest(points.data() + i * dim, centroids, k, dim, &dist[i]);
            changed |= a != assign[i];
            assign[i] = a;
        }
        if (!changed && it > 0) {
            break;
        }
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++counts[assign[i]];
            for (std::size_t h = 0; h < dim; ++h) {
                sums[assign[i] * dim + h] += points[i * dim + h];
            }
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                // Re-seed from the point farthest from its current centroid.
                const auto far = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
                std::copy_n(points.begin() + far * dim, dim, centroids.begin() + c * dim);
                dist[far] = 0.0;
                continue;
            }
            for (std::size_t h = 0; h < dim; ++h) {
                centroids[c * dim + h] = sums[c * dim + h] / static_cast<double>(counts[c]);
            }
        }
    }
    return centroids;
}

void check_latent_dim(const LatentSeq& latents, const CodebookSet& books) {
    require(latents.dim == books.dim(), ErrorKind::config,
            "latent dimension " + std::to_string(latents.dim) + " does not match codebook dimension " +
                std::to_string(books.dim()));
    require(latents.values.size() == latents.frames * latents.dim, ErrorKind::config, "LatentSeq: inconsistent size");
}

}  // namespace

CodebookSet::CodebookSet(std::size_t depth, std::size_t codebook_size, std::size_t dim, std::vector<double> entries)
    : depth_(depth), codebook_size_(codebook_size), dim_(dim), entries_(std::move(entries)) {
    require(depth >= 1 && codebook_size >= 1 && dim >= 1, ErrorKind::config,
            "CodebookSet: need D >= 1, K >= 1, H >= 1");
    require(entries_.size() == depth * codebook_size * dim, ErrorKind::config,
            "CodebookSet: expected " + std::to_string(depth * codebook_size * dim) + " values, got " +
                std::to_string(entries_.size()));
    for (double v : entries_) {
        require(std::isfinite(v), ErrorKind::invalid_input, "CodebookSet: non-finite entry");
    }
    for (std::size_t j = 0; j < depth_; ++j) {
        if (count_distinct(std::vector<double>(entries_.begin() + j * codebook_size_ * dim_,
                                               entries_.begin() + (j + 1) * codebook_size_ * dim_),
                           codebook_size_, dim_) != codebook_size_) {
            fail(ErrorKind::invalid_input, "CodebookSet: codebook " + std::to_string(j) + " has duplicate entries");
        }
    }
}

CodebookSet CodebookSet::truncated(std::size_t depth) const {
    require(depth >= 1 && depth <= depth_, ErrorKind::config, "CodebookSet::truncated: depth out of range");
    return CodebookSet(depth, codebook_size_, dim_,
                       std::vector<double>(entries_.begin(), entries_.begin() + depth * codebook_size_ * dim_));
}

CodeGrid rvq_encode(const LatentSeq& latents, const CodebookSet& books, LatentSeq* residuals) {
    check_latent_dim(latents, books);
    const std::size_t dim = books.dim();
    CodeGrid codes(latents.frames, books.depth(), books.codebook_size());
    std::vector<double> residual(dim);
    if (residuals) {
        *residuals = LatentSeq(latents.frames, dim);
    }
    for (std::size_t i = 0; i < latents.frames; ++i) {
        auto h = latents.frame(i);
        std::copy(h.begin(), h.end(), residual.begin());
        for (std::size_t j = 0; j < books.depth(); ++j) {
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < books.codebook_size(); ++k) {
                const double d = squared_distance(residual, books.entry(j, k));
                if (d < best_d) {
                    best_d = d;
                    best = k;
                }
            }
            codes(i, j) = static_cast<Code>(best);
            auto e = books.entry(j, best);
            for (std::size_t h2 = 0; h2 < dim; ++h2) {
                residual[h2] -= e[h2];
            }
        }
        if (residuals) {
            std::copy(residual.begin(), residual.end(), residuals->frame(i).begin());
        }
    }
    return codes;
}

LatentSeq rvq_decode(const CodeGrid& codes, const CodebookSet& books) {
    require(codes.depth() == books.depth() && codes.codebook_size() == books.codebook_size(), ErrorKind::config,
            "rvq_decode: grid (D=" + std::to_string(codes.depth()) + ", K=" + std::to_string(codes.codebook_size()) +
                ") does not match codebooks (D=" + std::to_string(books.depth()) +
                ", K=" + std::to_string(books.codebook_size()) + ")");
    for (std::size_t p = 0; p < codes.size(); ++p) {
        require(!codes.is_masked(p), ErrorKind::invalid_input,
                "rvq_decode: position " + std::to_string(p) + " is masked; partially absorbed grids cannot be decoded");
    }
    codes.validate(false);
    LatentSeq out(codes.frames(), books.dim());
    for (std::size_t i = 0; i < codes.frames(); ++i) {
        auto dst = out.frame(i);
        for (std::size_t j = 0; j < codes.depth(); ++j) {
            auto e = books.entry(j, static_cast<std::size_t>(codes(i, j)));
            for (std::size_t h = 0; h < dst.size(); ++h) {
                dst[h] += e[h];
            }
        }
    }
    return out;
}

CodebookSet train_codebooks(std::span<const LatentSeq> dataset, const CodebookTrainingOptions& options) {
    require(options.depth >= 1 && options.codebook_size >= 1, ErrorKind::config,
            "train_codebooks: need D >= 1 and K >= 1");
    require(!dataset.empty(), ErrorKind::degenerate_data, "train_codebooks: empty dataset");
    const std::size_t dim = dataset.front().dim;
    std::size_t n = 0;
    for (const auto& seq : dataset) {
        require(seq.dim == dim, ErrorKind::config, "train_codebooks: inconsistent latent dimension");
        n += seq.frames;
    }
    require(n >= options.codebook_size, ErrorKind::degenerate_data,
            "train_codebooks: " + std::to_string(n) + " frames for K=" + std::to_string(options.codebook_size));

    std::vector<double> residuals;
    residuals.reserve(n * dim);
    for (const auto& seq : dataset) {
        residuals.insert(residuals.end(), seq.values.begin(), seq.values.end());
    }

    Rng rng(options.seed);
    std::vector<double> entries;
    entries.reserve(options.depth * options.codebook_size * dim);
    for (std::size_t j = 0; j < options.depth; ++j) {
        const std::size_t distinct = count_distinct(residuals, n, dim);
        require(distinct >= options.codebook_size, ErrorKind::degenerate_data,
                "train_codebooks: depth " + std::to_string(j) + " has " + std::to_string(distinct) +
                    " distinct residuals for K=" + std::to_string(options.codebook_size));
        auto centroids = kmeans(residuals, n, dim, options.codebook_size, options.iterations, rng);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t c = nearest(residuals.data() + i * dim, centroids, options.codebook_size, dim);
            for (std::size_t h = 0; h < dim; ++h) {
                residuals[i * dim + h] -= centroids[c * dim + h];
            }
        }
        entries.insert(entries.end(), centroids.begin(), centroids.end());
    }
    return CodebookSet(options.depth, options.codebook_size, dim, std::move(entries));
}

double mean_squared_error(const LatentSeq& a, const LatentSeq& b) {
    require(a.frames == b.frames && a.dim == b.dim, ErrorKind::config, "mean_squared_error: shape mismatch");
    if (a.values.empty()) {
        return 0.0;
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        const double d = a.values[i] - b.values[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.values.size());
}

void save_codebooks(const std::filesystem::path& path, const CodebookSet& books) {
    nlohmann::ordered_json doc;
    doc["version"] = 1;
    doc["D"] = books.depth();
    doc["K"] = books.codebook_size();
    doc["H"] = books.dim();
    doc["index_convention"] = "codes are 0-indexed; the mask symbol is K";
    auto entries = nlohmann::ordered_json::array();
    for (std::size_t j = 0; j < books.depth(); ++j) {
        auto book = nlohmann::ordered_json::array();
        for (std::size_t k = 0; k < books.codebook_size(); ++k) {
            auto e = books.entry(j, k);
            book.push_back(std::vector<double>(e.begin(), e.end()));
        }
        entries.push_back(std::move(book));
    }
    doc["entries"] = std::move(entries);
    std::ofstream out(path);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
    out << doc.dump() << '\n';
}

CodebookSet load_codebooks(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::io, "cannot read " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
        const auto depth = doc.at("D").get<std::size_t>();
        const auto k = doc.at("K").get<std::size_t>();
        const auto dim = doc.at("H").get<std::size_t>();
        const auto& entries = doc.at("entries");
        require(entries.size() == depth, ErrorKind::format, path.string() + ": entries does not have D books");
        std::vector<double> flat;
        flat.reserve(depth * k * dim);
        for (const auto& book : entries) {
            require(book.size() == k, ErrorKind::format, path.string() + ": codebook does not have K entries");
            for (const auto& e : book) {
                require(e.size() == dim, ErrorKind::format, path.string() + ": entry does not have H values");
                for (const auto& v : e) {
                    flat.push_back(v.get<double>());
                }
            }
        }
        return CodebookSet(depth, k, dim, std::move(flat));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::format, path.string() + ": " + e.what());
    }
}

}  // namespace addse
