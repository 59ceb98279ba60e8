#include "race/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "race/errors.hpp"
#include "race/rng.hpp"

namespace race {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'R', 'A', 'C', 'E', 'K', 'P', 'T', '1'};

template <class T>
void write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in, const char* what) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw ParseError(std::string("checkpoint: truncated while reading ") + what);
    return v;
}

void write_string(std::ostream& out, const std::string& s) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in, const char* what) {
    const uint32_t n = read_pod<uint32_t>(in, what);
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw ParseError(std::string("checkpoint: truncated while reading ") + what);
    return s;
}

json config_to_json(const ModelConfig& c) {
    return json{{"d_model", c.d_model},
                {"num_heads", c.num_heads},
                {"enc_layers", c.enc_layers},
                {"dec_layers", c.dec_layers},
                {"ffn_dim", c.ffn_dim},
                {"rel_clip", c.rel_clip},
                {"vocab_size", c.vocab_size},
                {"max_diff_len", c.max_diff_len},
                {"max_msg_len", c.max_msg_len},
                {"dropout", c.dropout},
                {"kind", model_kind_name(c.kind)},
                {"shared_encoders", c.shared_encoders},
                {"fuse_exemplar_message", c.fuse_exemplar_message},
                {"guider_bias", c.guider_bias}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.d_model = j.at("d_model").get<int>();
    c.num_heads = j.at("num_heads").get<int>();
    c.enc_layers = j.at("enc_layers").get<int>();
    c.dec_layers = j.at("dec_layers").get<int>();
    c.ffn_dim = j.at("ffn_dim").get<int>();
    c.rel_clip = j.at("rel_clip").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_diff_len = j.at("max_diff_len").get<int>();
    c.max_msg_len = j.at("max_msg_len").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.kind = model_kind_from_name(j.at("kind").get<std::string>());
    c.shared_encoders = j.at("shared_encoders").get<bool>();
    c.fuse_exemplar_message = j.at("fuse_exemplar_message").get<bool>();
    c.guider_bias = j.at("guider_bias").get<bool>();
    return c;
}

void read_header(std::istream& in, const std::string& path, ModelConfig& cfg, uint64_t& vocab_hash) {
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) throw ParseError("checkpoint: bad magic in " + path);
    const uint32_t version = read_pod<uint32_t>(in, "version");
    if (version != 1) throw ParseError("checkpoint: unsupported version " + std::to_string(version));
    vocab_hash = read_pod<uint64_t>(in, "vocab hash");
    const std::string cfg_json = read_string(in, "config");
    json j = json::parse(cfg_json, nullptr, false);
    if (j.is_discarded()) throw ParseError("checkpoint: malformed config JSON");
    cfg = config_from_json(j);
}

}  // namespace

template <class S>
void save_checkpoint(const std::string& path, RaceModel<S>& model, uint64_t vocab_hash) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write(kMagic, 8);
    write_pod<uint32_t>(out, 1);
    write_pod<uint64_t>(out, vocab_hash);
    write_string(out, config_to_json(model.config()).dump());
    auto named = model.named_params();
    write_pod<uint32_t>(out, static_cast<uint32_t>(named.size()));
    for (auto& [name, p] : named) {
        write_string(out, name);
        write_pod<uint32_t>(out, static_cast<uint32_t>(p->value.shape.size()));
        for (int d : p->value.shape) write_pod<int32_t>(out, d);
        for (S v : p->value.data) write_pod<double>(out, static_cast<double>(v));
    }
    if (!out) throw IoError("failed writing checkpoint: " + path);
}

CheckpointInfo peek_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint: " + path);
    CheckpointInfo info;
    read_header(in, path, info.config, info.vocab_hash);
    return info;
}

template <class S>
RaceModel<S> load_checkpoint(const std::string& path, uint64_t* vocab_hash_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint: " + path);
    ModelConfig cfg;
    uint64_t vocab_hash = 0;
    read_header(in, path, cfg, vocab_hash);
    if (vocab_hash_out) *vocab_hash_out = vocab_hash;
    RaceModel<S> model(cfg, 0);
    auto named = model.named_params();
    const uint32_t count = read_pod<uint32_t>(in, "param count");
    if (count != named.size())
        throw ValidationError("checkpoint: parameter count " + std::to_string(count) + " does not match model (" +
                              std::to_string(named.size()) + ")");
    for (auto& [name, p] : named) {
        const std::string got = read_string(in, "param name");
        if (got != name) throw ValidationError("checkpoint: expected parameter " + name + ", found " + got);
        const uint32_t ndim = read_pod<uint32_t>(in, "ndim");
        std::vector<int> shape(ndim);
        for (uint32_t i = 0; i < ndim; ++i) shape[i] = read_pod<int32_t>(in, "dim");
        if (shape != p->value.shape) throw ValidationError("checkpoint: shape mismatch for " + name);
        for (S& v : p->value.data) v = static_cast<S>(read_pod<double>(in, "value"));
    }
    return model;
}

uint64_t file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read file for hashing: " + path);
    uint64_t h = 0xcbf29ce484222325ULL;
    char buf[65536];
    while (in) {
        in.read(buf, sizeof(buf));
        h = fnv1a64_bytes(buf, static_cast<size_t>(in.gcount()), h);
    }
    return h;
}

std::string hash_hex(uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[i] = digits[h & 0xf];
        h >>= 4;
    }
    return s;
}

template void save_checkpoint<float>(const std::string&, RaceModel<float>&, uint64_t);
template void save_checkpoint<double>(const std::string&, RaceModel<double>&, uint64_t);
template RaceModel<float> load_checkpoint<float>(const std::string&, uint64_t*);
template RaceModel<double> load_checkpoint<double>(const std::string&, uint64_t*);

}  // namespace race
