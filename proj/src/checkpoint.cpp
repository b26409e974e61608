// Copyright 2026 The addse Authors
// SPDX-License-Identifier: Apache-2.0

#include "addse/checkpoint.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include <json.hpp>

namespace addse {
namespace {

nlohmann::json read_manifest(const std::filesystem::path& manifest) {
    std::ifstream in(manifest);
    require(static_cast<bool>(in), ErrorKind::io, "cannot read " + manifest.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::format, manifest.string() + ": " + e.what());
    }
}

std::string dims(std::size_t k, std::size_t d, std::size_t h) {
    return "K=" + std::to_string(k) + " D=" + std::to_string(d) + " H=" + std::to_string(h);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& manifest, const RQDiT& model) {
    const auto& cfg = model.config();
    auto payload = manifest;
    payload.replace_extension(".bin");
    nlohmann::ordered_json doc;
    doc["version"] = 1;
    doc["model"] = "rqdit";
    doc["config"] = {{"hidden_dim", cfg.hidden_dim}, {"n_layers", cfg.n_layers}, {"n_heads", cfg.n_heads},
                     {"mlp_ratio", cfg.mlp_ratio},   {"K", cfg.codebook_size},    {"D", cfg.depth},
                     {"H", cfg.latent_dim},          {"rope_base", cfg.rope_base}};
    doc["payload"] = payload.filename().string();
    doc["dtype"] = "float32le";
    auto tensors = nlohmann::ordered_json::array();
    for (const auto& t : model.params().tensors()) {
        tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", t.offset}, {"size", t.size}});
    }
    doc["tensors"] = std::move(tensors);

    std::string bytes;
    const auto values = model.params().values();
    bytes.reserve(values.size() * 4);
    for (double v : values) {
        const auto f = static_cast<float>(v);
        std::uint32_t bits = 0;
        std::memcpy(&bits, &f, 4);
        for (int s = 0; s < 32; s += 8) {
            bytes.push_back(static_cast<char>((bits >> s) & 0xff));
        }
    }
    std::ofstream out(manifest);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write " + manifest.string());
    out << doc.dump(2) << '\n';
    std::ofstream bin(payload, std::ios::binary);
    require(static_cast<bool>(bin), ErrorKind::io, "cannot write " + payload.string());
    bin.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

RQDiTConfig read_checkpoint_config(const std::filesystem::path& manifest) {
    const auto doc = read_manifest(manifest);
    try {
        const auto& c = doc.at("config");
        RQDiTConfig cfg;
        cfg.hidden_dim = c.at("hidden_dim").get<std::size_t>();
        cfg.n_layers = c.at("n_layers").get<std::size_t>();
        cfg.n_heads = c.at("n_heads").get<std::size_t>();
        cfg.mlp_ratio = c.at("mlp_ratio").get<std::size_t>();
        cfg.codebook_size = c.at("K").get<std::size_t>();
        cfg.depth = c.at("D").get<std::size_t>();
        cfg.latent_dim = c.at("H").get<std::size_t>();
        cfg.rope_base = c.at("rope_base").get<double>();
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::format, manifest.string() + ": " + e.what());
    }
}

RQDiT load_checkpoint(const std::filesystem::path& manifest, CodebookSet books) {
    const RQDiTConfig cfg = read_checkpoint_config(manifest);
    require(books.codebook_size() == cfg.codebook_size && books.depth() == cfg.depth && books.dim() == cfg.latent_dim,
            ErrorKind::config,
            "checkpoint " + manifest.string() + " has " + dims(cfg.codebook_size, cfg.depth, cfg.latent_dim) +
                " but codebooks have " + dims(books.codebook_size(), books.depth(), books.dim()));
    const auto doc = read_manifest(manifest);
    RQDiT model(cfg, std::move(books), 0);
    const auto payload = manifest.parent_path() / doc.value("payload", std::string());
    std::ifstream bin(payload, std::ios::binary);
    require(static_cast<bool>(bin), ErrorKind::io, "cannot read " + payload.string());
    const std::string bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
    auto& store = model.params();
    require(bytes.size() == store.size() * 4, ErrorKind::format,
            payload.string() + ": " + std::to_string(bytes.size()) + " bytes, expected " +
                std::to_string(store.size() * 4));
    const auto& entries = doc.at("tensors");
    require(entries.size() == store.tensors().size(), ErrorKind::format,
            manifest.string() + ": tensor count does not match the configured model");
    for (std::size_t t = 0; t < entries.size(); ++t) {
        const auto& expect = store.tensors()[t];
        const auto& e = entries[t];
        require(e.at("name").get<std::string>() == expect.name &&
                    e.at("shape").get<std::vector<std::size_t>>() == expect.shape &&
                    e.at("offset").get<std::size_t>() == expect.offset,
                ErrorKind::format, manifest.string() + ": tensor " + std::to_string(t) + " should be " + expect.name);
    }
    auto values = store.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint32_t bits = 0;
        for (int s = 0; s < 4; ++s) {
            bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + s])) << (8 * s);
        }
        float f = 0.0F;
        std::memcpy(&f, &bits, 4);
        require(std::isfinite(f), ErrorKind::format,
                manifest.string() + ": non-finite value in tensor " + store.owner(i));
        values[i] = static_cast<double>(f);
    }
    return model;
}

}  // namespace addse
