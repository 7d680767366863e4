#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "jatp/models.hpp"

// Checkpoint container:
//   magic "JATP" | u32 version | arch id (u32 len + utf-8)
//   | u32 param count | per param: name (u32 len + utf-8), u32 rank, u32 dims...
//   | raw float32 little-endian blobs in manifest order
//   | u32 metadata length | metadata JSON (utf-8)
// All integers little-endian. The arch id carries a kind prefix
// ("target/..." or "preprocessor/...") so loading a checkpoint as the wrong
// model kind fails early.
namespace jatp::ckpt {

inline constexpr std::uint32_t kVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline void put_str(std::string& out, const std::string& s) {
    put_u32(out, std::uint32_t(s.size()));
    out.append(s);
}

inline std::string meta_json(const CheckpointMeta& meta) {
    nlohmann::json j;
    j["seed"] = meta.seed;
    j["epoch"] = meta.epoch;
    j["config_digest"] = meta.config_digest;
    j["clean_accuracy"] = meta.clean_accuracy;
    j["robust_accuracy"] = meta.robust_accuracy;
    return j.dump();
}

inline CheckpointMeta parse_meta(const std::string& text,
                                 const std::string& path) {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded())
        throw IngestionError("checkpoint '" + path + "': bad metadata JSON");
    CheckpointMeta meta;
    meta.seed = j.value("seed", std::uint64_t(0));
    meta.epoch = j.value("epoch", 0);
    meta.config_digest = j.value("config_digest", std::string());
    meta.clean_accuracy = j.value("clean_accuracy", -1.0);
    meta.robust_accuracy = j.value("robust_accuracy", -1.0);
    return meta;
}

inline std::string serialize(const nn::ParamStore<float>& params,
                             const std::string& tagged_arch_id,
                             const CheckpointMeta& meta) {
    std::string out = "JATP";
    put_u32(out, kVersion);
    put_str(out, tagged_arch_id);
    put_u32(out, std::uint32_t(params.count()));
    for (std::size_t i = 0; i < params.count(); ++i) {
        put_str(out, params.name(i));
        const auto& shape = params.param(i)->value.shape();
        put_u32(out, std::uint32_t(shape.size()));
        for (int d : shape) put_u32(out, std::uint32_t(d));
    }
    static_assert(sizeof(float) == 4);
    for (std::size_t i = 0; i < params.count(); ++i) {
        const auto& t = params.param(i)->value;
        out.append(reinterpret_cast<const char*>(t.data()), t.size() * 4);
    }
    put_str(out, meta_json(meta));
    return out;
}

inline void write_atomic(const std::string& path, const std::string& bytes) {
    namespace fs = std::filesystem;
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IngestionError("cannot open '" + tmp + "' for writing");
        f.write(bytes.data(), std::streamsize(bytes.size()));
        if (!f) throw IngestionError("short write to '" + tmp + "'");
    }
    fs::rename(tmp, path);
}

inline std::string read_all(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IngestionError("cannot open checkpoint '" + path + "'");
    return std::string((std::istreambuf_iterator<char>(f)),
                       std::istreambuf_iterator<char>());
}

}  // namespace detail

struct RawCheckpoint {
    std::string kind;     // "target" or "preprocessor"
    std::string arch_id;  // without the kind prefix
    std::vector<std::pair<std::string, Tensor<float>>> params;
    CheckpointMeta meta;
};

inline RawCheckpoint read_raw(const std::string& path) {
    const std::string bytes = detail::read_all(path);
    std::size_t pos = 0;
    auto u32 = [&]() {
        if (pos + 4 > bytes.size())
            throw IngestionError("checkpoint '" + path +
                                 "': truncated header at offset " +
                                 std::to_string(pos));
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= std::uint32_t(static_cast<unsigned char>(bytes[pos + i]))
                 << (8 * i);
        pos += 4;
        return v;
    };
    auto str = [&]() {
        const std::uint32_t n = u32();
        if (pos + n > bytes.size())
            throw IngestionError("checkpoint '" + path +
                                 "': truncated string at offset " +
                                 std::to_string(pos));
        std::string s = bytes.substr(pos, n);
        pos += n;
        return s;
    };

    if (bytes.size() < 4 || bytes.substr(0, 4) != "JATP")
        throw IngestionError("checkpoint '" + path + "': bad magic bytes");
    pos = 4;
    const std::uint32_t version = u32();
    if (version != kVersion)
        throw IngestionError("checkpoint '" + path + "': unsupported version " +
                             std::to_string(version));
    const std::string tagged = str();
    const auto slash = tagged.find('/');
    if (slash == std::string::npos)
        throw IngestionError("checkpoint '" + path + "': arch id '" + tagged +
                             "' missing kind tag");
    RawCheckpoint out;
    out.kind = tagged.substr(0, slash);
    out.arch_id = tagged.substr(slash + 1);

    const std::uint32_t count = u32();
    std::vector<std::string> names;
    std::vector<Shape> shapes;
    for (std::uint32_t i = 0; i < count; ++i) {
        names.push_back(str());
        const std::uint32_t rank = u32();
        Shape s;
        for (std::uint32_t d = 0; d < rank; ++d) s.push_back(int(u32()));
        shapes.push_back(std::move(s));
    }
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t n = shape_numel(shapes[i]);
        if (pos + n * 4 > bytes.size())
            throw IngestionError("checkpoint '" + path +
                                 "': truncated parameter blob for '" +
                                 names[i] + "' at offset " +
                                 std::to_string(pos));
        Tensor<float> t(shapes[i]);
        std::memcpy(t.data(), bytes.data() + pos, n * 4);
        pos += n * 4;
        out.params.emplace_back(names[i], std::move(t));
    }
    out.meta = detail::parse_meta(str(), path);
    return out;
}

inline void fill_params(const RawCheckpoint& raw, nn::ParamStore<float>& params,
                        const std::string& path) {
    if (raw.params.size() != params.count())
        throw IngestionError("checkpoint '" + path + "': has " +
                             std::to_string(raw.params.size()) +
                             " parameters, architecture expects " +
                             std::to_string(params.count()));
    for (std::size_t i = 0; i < params.count(); ++i) {
        const auto& [name, tensor] = raw.params[i];
        if (name != params.name(i))
            throw IngestionError("checkpoint '" + path + "': parameter '" +
                                 name + "' where '" + params.name(i) +
                                 "' expected");
        if (tensor.shape() != params.param(i)->value.shape())
            throw IngestionError("checkpoint '" + path + "': parameter '" +
                                 name + "' has shape " +
                                 shape_str(tensor.shape()) + ", expected " +
                                 shape_str(params.param(i)->value.shape()));
        params.param(i)->value = tensor;
    }
}

inline void save_target(const TargetModel& model, const std::string& path) {
    detail::write_atomic(path,
                         detail::serialize(model.params(),
                                           "target/" + model.arch_id(),
                                           model.meta));
}

inline void save_preprocessor(const Preprocessor& model,
                              const std::string& path) {
    detail::write_atomic(
        path, detail::serialize(model.params(),
                                "preprocessor/" + model.arch_id(), model.meta));
}

inline TargetModel load_target(const std::string& path) {
    RawCheckpoint raw = read_raw(path);
    if (raw.kind != "target")
        throw IngestionError("checkpoint '" + path + "' holds a '" + raw.kind +
                             "' model, not a target");
    TargetModel model = TargetModel::from_arch_id(raw.arch_id, 0);
    fill_params(raw, model.params(), path);
    model.meta = raw.meta;
    return model;
}

inline Preprocessor load_preprocessor(const std::string& path) {
    RawCheckpoint raw = read_raw(path);
    if (raw.kind != "preprocessor")
        throw IngestionError("checkpoint '" + path + "' holds a '" + raw.kind +
                             "' model, not a preprocessor");
    Preprocessor model = Preprocessor::from_arch_id(raw.arch_id, 0);
    fill_params(raw, model.params(), path);
    model.meta = raw.meta;
    return model;
}

}  // namespace jatp::ckpt
