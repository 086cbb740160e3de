#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ridgeplan/nn/network.hpp"

namespace ridgeplan::nn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written as little-endian floats");

// Manifest path "x.json" pairs with blob "x.bin" next to it.
inline std::filesystem::path blob_path_for(const std::filesystem::path& manifest) {
    auto p = manifest;
    p.replace_extension(".bin");
    return p;
}

struct LoadedCheckpoint {
    QNetwork<float> net;
    nlohmann::json meta;
};

inline void save_checkpoint(QNetwork<float>& net, const std::filesystem::path& manifest,
                            const nlohmann::json& meta = nlohmann::json::object()) {
    const auto blob = blob_path_for(manifest);
    nlohmann::json tensors = nlohmann::json::array();
    std::ofstream bout(blob, std::ios::binary);
    if (!bout) throw Error("save_checkpoint: cannot open " + blob.string());
    std::uint64_t offset = 0;
    for (auto* p : net.params()) {
        bout.write(reinterpret_cast<const char*>(p->value.data()),
                   static_cast<std::streamsize>(p->value.size() * sizeof(float)));
        tensors.push_back({{"name", p->name},
                           {"shape", p->shape},
                           {"offset", offset},
                           {"len", p->value.size()}});
        offset += p->value.size();
    }
    if (!bout) throw Error("save_checkpoint: write failed for " + blob.string());
    nlohmann::json j{{"version", 1},
                     {"arch", arch_to_json(net.arch())},
                     {"tensors", tensors},
                     {"blob", blob.filename().string()},
                     {"meta", meta}};
    std::ofstream mout(manifest);
    if (!mout) throw Error("save_checkpoint: cannot open " + manifest.string());
    mout << j.dump(2) << '\n';
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& manifest) {
    std::ifstream min(manifest);
    if (!min) throw FormatError("load_checkpoint: cannot open " + manifest.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(min);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(manifest.string() + ": " + e.what());
    }
    if (!j.is_object() || j.value("version", 0) != 1 || !j.contains("arch") || !j.contains("tensors"))
        throw FormatError(manifest.string() + ": not a version-1 checkpoint manifest");

    LoadedCheckpoint out{QNetwork<float>(arch_from_json(j.at("arch"))), j.value("meta", nlohmann::json::object())};
    const auto blob = manifest.parent_path() / j.value("blob", blob_path_for(manifest).filename().string());

    std::ifstream bin(blob, std::ios::binary);
    if (!bin) throw FormatError("load_checkpoint: cannot open blob " + blob.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

    auto params = out.net.params();
    const auto& tensors = j.at("tensors");
    if (tensors.size() != params.size())
        throw FormatError(manifest.string() + ": expected " + std::to_string(params.size()) +
                          " tensors, manifest lists " + std::to_string(tensors.size()));
    std::uint64_t expected_total = 0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        const auto& t = tensors[k];
        const auto name = t.at("name").get<std::string>();
        const auto offset = t.at("offset").get<std::uint64_t>();
        const auto len = t.at("len").get<std::uint64_t>();
        if (name != params[k]->name || len != params[k]->value.size())
            throw FormatError(manifest.string() + ": tensor " + std::to_string(k) + " ('" + name +
                              "') does not match architecture");
        if ((offset + len) * sizeof(float) > bytes.size())
            throw FormatError(blob.string() + ": truncated blob (tensor '" + name + "')");
        std::memcpy(params[k]->value.data(), bytes.data() + offset * sizeof(float), len * sizeof(float));
        expected_total += len;
    }
    if (expected_total * sizeof(float) != bytes.size())
        throw FormatError(blob.string() + ": blob size does not match manifest");
    out.net.touch_params();
    return out;
}

// Loads and checks the stored architecture name.
inline LoadedCheckpoint load_checkpoint_expect(const std::filesystem::path& manifest,
                                               const std::string& arch_name) {
    LoadedCheckpoint ck = load_checkpoint(manifest);
    if (ck.net.arch().name != arch_name)
        throw CompatibilityError("checkpoint " + manifest.string() + " holds a '" +
                                 ck.net.arch().name + "' network, expected '" + arch_name + "'");
    return ck;
}

}  // namespace ridgeplan::nn
