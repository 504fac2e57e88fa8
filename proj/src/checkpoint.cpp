#include "tokcode/checkpoint.hpp"

#include <bit>
#include <cstring>

namespace tokcode {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian float32");

namespace {
constexpr char kMagic[8] = {'T', 'O', 'K', 'C', 'K', 'P', 'T', '1'};
}

const ArrayF32* CheckpointData::find(const std::string& name) const {
    for (const auto& a : arrays) {
        if (a.name == name) return &a;
    }
    return nullptr;
}

uint64_t CheckpointData::content_hash() const {
    uint64_t h = fnv1a64(kind);
    h = fnv1a64(config.dump(), h);
    for (const auto& arr : arrays) {
        h = fnv1a64(arr.name, h);
        h = fnv1a64(&arr.rows, sizeof(arr.rows), h);
        h = fnv1a64(&arr.cols, sizeof(arr.cols), h);
        h = fnv1a64(arr.data.data(), arr.data.size() * sizeof(float), h);
    }
    return h;
}

void save_checkpoint(const CheckpointData& ckpt, const std::string& path) {
    json table = json::array();
    size_t offset = 0;
    for (const auto& arr : ckpt.arrays) {
        table.push_back({{"name", arr.name},
                         {"rows", arr.rows},
                         {"cols", arr.cols},
                         {"offset", offset},
                         {"count", arr.data.size()}});
        offset += arr.data.size();
    }
    json header{{"kind", ckpt.kind},
                {"format_version", ckpt.format_version},
                {"config", ckpt.config},
                {"metadata", ckpt.metadata},
                {"arrays", table},
                {"content_hash", hash_hex(ckpt.content_hash())}};
    if (ckpt.kind == "lora") header["base_hash"] = hash_hex(ckpt.base_hash);
    const std::string header_str = header.dump();

    std::string out;
    out.reserve(sizeof(kMagic) + 8 + header_str.size() + offset * sizeof(float));
    out.append(kMagic, sizeof(kMagic));
    const uint64_t hlen = header_str.size();
    out.append(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.append(header_str);
    for (const auto& arr : ckpt.arrays) {
        out.append(reinterpret_cast<const char*>(arr.data.data()),
                   arr.data.size() * sizeof(float));
    }
    write_file(path, out);
}

CheckpointData load_checkpoint(const std::string& path) {
    const std::string bytes = read_file(path);
    if (bytes.size() < sizeof(kMagic) + 8 ||
        std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw IoError("checkpoint: bad magic in " + path);
    }
    uint64_t hlen = 0;
    std::memcpy(&hlen, bytes.data() + sizeof(kMagic), sizeof(hlen));
    const size_t header_start = sizeof(kMagic) + 8;
    if (bytes.size() < header_start + hlen) {
        throw IoError("checkpoint: truncated header in " + path);
    }
    json header;
    try {
        header = json::parse(bytes.substr(header_start, hlen));
    } catch (const json::exception& e) {
        throw IoError("checkpoint: malformed header in " + path + ": " + e.what());
    }

    CheckpointData ckpt;
    try {
        ckpt.kind = header.at("kind").get<std::string>();
        ckpt.format_version = header.at("format_version").get<int>();
        ckpt.config = header.at("config");
        ckpt.metadata = header.at("metadata");
        if (header.contains("base_hash")) {
            ckpt.base_hash = std::stoull(header.at("base_hash").get<std::string>(), nullptr, 16);
        }
        const size_t blob_start = header_start + hlen;
        for (const auto& e : header.at("arrays")) {
            ArrayF32 arr;
            arr.name = e.at("name").get<std::string>();
            arr.rows = e.at("rows").get<int>();
            arr.cols = e.at("cols").get<int>();
            const size_t offset = e.at("offset").get<size_t>();
            const size_t count = e.at("count").get<size_t>();
            if (blob_start + (offset + count) * sizeof(float) > bytes.size()) {
                throw IoError("checkpoint: truncated blob for array '" + arr.name + "'");
            }
            arr.data.resize(count);
            std::memcpy(arr.data.data(), bytes.data() + blob_start + offset * sizeof(float),
                        count * sizeof(float));
            ckpt.arrays.push_back(std::move(arr));
        }
        const std::string stored = header.at("content_hash").get<std::string>();
        if (stored != hash_hex(ckpt.content_hash())) {
            throw IoError("checkpoint: content hash mismatch in " + path + " (stored " + stored +
                          ", computed " + hash_hex(ckpt.content_hash()) + ")");
        }
    } catch (const json::exception& e) {
        throw IoError("checkpoint: invalid header field in " + path + ": " + e.what());
    }
    return ckpt;
}

json transformer_config_to_json(const TransformerConfig& cfg) {
    return json{{"layers", cfg.layers},   {"d_model", cfg.d_model},
                {"heads", cfg.heads},     {"d_ff", cfg.d_ff},
                {"max_len", cfg.max_len}, {"vocab_total", cfg.vocab_total},
                {"seed", cfg.seed}};
}

TransformerConfig transformer_config_from_json(const json& j) {
    TransformerConfig cfg;
    try {
        cfg.layers = j.at("layers").get<int>();
        cfg.d_model = j.at("d_model").get<int>();
        cfg.heads = j.at("heads").get<int>();
        cfg.d_ff = j.at("d_ff").get<int>();
        cfg.max_len = j.at("max_len").get<int>();
        cfg.vocab_total = j.at("vocab_total").get<int>();
        cfg.seed = j.at("seed").get<uint64_t>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("transformer config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

json vocab_config_to_json(const Vocabulary& v) {
    return json{{"size", v.size},
                {"pad_id", v.pad_id},
                {"eos_id", v.eos_id},
                {"sentinel_ids", v.sentinel_ids},
                {"seed", v.seed}};
}

Vocabulary vocab_config_from_json(const json& j) {
    Vocabulary v;
    try {
        v.size = j.at("size").get<int>();
        v.pad_id = j.at("pad_id").get<TokenId>();
        v.eos_id = j.at("eos_id").get<TokenId>();
        v.sentinel_ids = j.at("sentinel_ids").get<std::vector<TokenId>>();
        v.seed = j.at("seed").get<uint64_t>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("vocabulary config: ") + e.what());
    }
    return v;
}

}  // namespace tokcode
