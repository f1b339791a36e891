#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "longct/nn/model.hpp"

namespace longct {

/// Checkpoint file: "LCKP" magic, a JSON header holding the format version,
/// model config and tensor index, then the raw float32 data of every
/// parameter followed by every buffer, in index order.
template <typename T>
void save_checkpoint(const std::string& path, const FCDenseNet<T>& model) {
    nlohmann::ordered_json j;
    j["format_version"] = kCheckpointFormatVersion;
    nlohmann::ordered_json mc;
    to_json(mc, model.config());
    j["model"] = mc;
    j["tensors"] = nlohmann::ordered_json::array();
    for (const auto& p : model.parameters())
        j["tensors"].push_back({{"name", p.name},
                                {"shape", {p.value.n, p.value.c, p.value.h, p.value.w}},
                                {"dtype", "f32"}});
    j["buffers"] = nlohmann::ordered_json::array();
    for (const auto& b : model.buffers())
        j["buffers"].push_back({{"name", b.name}, {"size", b.value.size()}});
    const std::string header = j.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint: " + path);
    const char magic[4] = {'L', 'C', 'K', 'P'};
    out.write(magic, 4);
    const uint64_t len = header.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(header.data(), static_cast<std::streamsize>(len));
    auto write_f32 = [&](const T* data, size_t n) {
        std::vector<float> buf(n);
        for (size_t i = 0; i < n; ++i) buf[i] = static_cast<float>(data[i]);
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(n * 4));
    };
    for (const auto& p : model.parameters())
        write_f32(p.value.v.data(), p.value.v.size());
    for (const auto& b : model.buffers()) write_f32(b.value.data(), b.value.size());
    if (!out) throw Error("checkpoint write failed: " + path);
}

template <typename T = float>
FCDenseNet<T> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "LCKP", 4) != 0)
        throw Error("not a checkpoint file: " + path);
    uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 8);
    std::string header(len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(len));
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(header);
    } catch (const std::exception& e) {
        throw Error("bad checkpoint header in " + path + ": " + e.what());
    }
    if (j.at("format_version").get<int>() != kCheckpointFormatVersion)
        throw Error("unsupported checkpoint format version in " + path);

    FCDenseNet<T> model(model_config_from_json(j.at("model")), 0);
    auto read_f32 = [&](T* data, size_t n) {
        std::vector<float> buf(n);
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 4));
        for (size_t i = 0; i < n; ++i) data[i] = static_cast<T>(buf[i]);
    };
    const auto& tensors = j.at("tensors");
    LONGCT_REQUIRE(tensors.size() == model.parameters().size(),
                   "checkpoint tensor count does not match the model: " + path);
    for (size_t i = 0; i < model.parameters().size(); ++i) {
        auto& p = model.parameters()[i];
        LONGCT_REQUIRE(tensors[i].at("name").get<std::string>() == p.name,
                       "checkpoint tensor order mismatch at " + p.name);
        read_f32(p.value.v.data(), p.value.v.size());
    }
    const auto& bufs = j.at("buffers");
    LONGCT_REQUIRE(bufs.size() == model.buffers().size(),
                   "checkpoint buffer count does not match the model: " + path);
    for (size_t i = 0; i < model.buffers().size(); ++i)
        read_f32(model.buffers()[i].value.data(), model.buffers()[i].value.size());
    if (!in) throw Error("truncated checkpoint: " + path);
    return model;
}

}  // namespace longct
