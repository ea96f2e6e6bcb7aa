#pragma once

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "suds/model.hpp"

namespace suds::model {

// Model file container: 8-byte magic, little-endian uint32 header length, a
// JSON header (spec + tensor manifest with shapes and byte offsets), then a
// little-endian float32 payload. save(load(f)) is byte-identical to f.
inline constexpr char kModelMagic[8] = {'S', 'U', 'D', 'S', 'M', 'D', 'L', '1'};

inline nlohmann::json spec_to_json(const ModelSpec& sp) {
    nlohmann::json j;
    j["feature_dim"] = sp.feature_dim;
    nlohmann::json conv = nlohmann::json::array();
    for (const auto& c : sp.conv) conv.push_back({c.kernel, c.filters});
    j["conv"] = conv;
    j["se_reduction"] = sp.se_reduction;
    j["se_hidden"] = sp.se_hidden;
    j["lstm_cells"] = sp.lstm_cells;
    j["dense"] = sp.dense;
    j["num_classes"] = sp.num_classes;
    return j;
}

inline ModelSpec spec_from_json(const nlohmann::json& j) {
    ModelSpec sp;
    sp.feature_dim = j.at("feature_dim").get<int>();
    sp.conv.clear();
    for (const auto& c : j.at("conv")) {
        sp.conv.push_back({c.at(0).get<int>(), c.at(1).get<int>()});
    }
    sp.se_reduction = j.at("se_reduction").get<int>();
    sp.se_hidden = j.at("se_hidden").get<int>();
    sp.lstm_cells = j.at("lstm_cells").get<int>();
    sp.dense = j.at("dense").get<std::vector<int>>();
    sp.num_classes = j.at("num_classes").get<int>();
    sp.normalize();
    sp.validate();
    return sp;
}

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_f32_le(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32_le(out, bits);
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline std::string serialize_model(const ModelParams& params) {
    nlohmann::json header;
    header["version"] = params.version;
    header["spec"] = spec_to_json(params.spec);
    nlohmann::json manifest = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& it : params.w.items) {
        manifest.push_back({{"name", it.name},
                            {"shape", it.t.shape},
                            {"offset", offset},
                            {"count", it.t.size()}});
        offset += 4 * it.t.size();
    }
    header["tensors"] = manifest;
    const std::string hdr = header.dump();

    std::string out;
    out.reserve(12 + hdr.size() + offset);
    out.append(kModelMagic, 8);
    detail::put_u32_le(out, static_cast<std::uint32_t>(hdr.size()));
    out.append(hdr);
    for (const auto& it : params.w.items) {
        for (Real x : it.t.v) detail::put_f32_le(out, static_cast<float>(x));
    }
    return out;
}

inline ModelParams deserialize_model(const std::string& bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), kModelMagic, 8) != 0) {
        throw std::runtime_error("not a model file (bad magic)");
    }
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint32_t hdr_len = detail::get_u32_le(p + 8);
    if (bytes.size() < 12 + static_cast<std::size_t>(hdr_len)) {
        throw std::runtime_error("model file truncated header");
    }
    const nlohmann::json header = nlohmann::json::parse(bytes.substr(12, hdr_len));

    ModelParams params;
    params.version = header.at("version").get<int>();
    params.spec = spec_from_json(header.at("spec"));
    const std::size_t payload_base = 12 + hdr_len;
    for (const auto& entry : header.at("tensors")) {
        NamedTensor nt;
        nt.name = entry.at("name").get<std::string>();
        nt.t.shape = entry.at("shape").get<std::vector<int>>();
        const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
        const std::uint64_t count = entry.at("count").get<std::uint64_t>();
        if (payload_base + offset + 4 * count > bytes.size()) {
            throw std::runtime_error("model file truncated payload for " + nt.name);
        }
        nt.t.v.resize(count);
        for (std::uint64_t i = 0; i < count; ++i) {
            const std::uint32_t bits =
                detail::get_u32_le(p + payload_base + offset + 4 * i);
            float f;
            std::memcpy(&f, &bits, 4);
            nt.t.v[i] = static_cast<Real>(f);
        }
        params.w.items.push_back(std::move(nt));
    }
    // shape sanity against the spec's layout
    const auto layout = tensor_layout(params.spec);
    if (layout.size() != params.w.items.size()) {
        throw std::runtime_error("model file manifest does not match spec");
    }
    for (std::size_t i = 0; i < layout.size(); ++i) {
        if (layout[i].first != params.w.items[i].name ||
            layout[i].second != params.w.items[i].t.shape) {
            throw std::runtime_error("model file tensor mismatch at " + layout[i].first);
        }
    }
    return params;
}

inline void save_model(const std::string& path, const ModelParams& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write model file: " + path);
    const std::string bytes = serialize_model(params);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline ModelParams load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open model file: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_model(bytes);
}

}  // namespace suds::model
