#include "race/pipeline.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <unordered_map>

#include <json.hpp>

#include "race/checkpoint.hpp"
#include "race/corpus.hpp"
#include "race/errors.hpp"
#include "race/metrics.hpp"
#include "race/model.hpp"
#include "race/prep.hpp"
#include "race/retrieval.hpp"

namespace race {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct ExemplarRef {
    std::string id;
    double similarity = 0.0;
    std::vector<std::string> diff_tokens;
    std::vector<std::string> msg_tokens;
};

struct ExemplarSet {
    std::string id;
    std::vector<ExemplarRef> exemplars;
};

void save_exemplars(const std::string& path, const std::vector<ExemplarSet>& sets) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write exemplars file: " + path);
    for (const ExemplarSet& s : sets) {
        json ex = json::array();
        for (const ExemplarRef& e : s.exemplars)
            ex.push_back(json{{"id", e.id},
                              {"similarity", e.similarity},
                              {"diff_tokens", e.diff_tokens},
                              {"msg_tokens", e.msg_tokens}});
        out << json{{"id", s.id}, {"exemplars", ex}}.dump() << '\n';
    }
    if (!out) throw IoError("failed writing exemplars file: " + path);
}

std::vector<ExemplarSet> load_exemplars(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read exemplars file: " + path);
    std::vector<ExemplarSet> sets;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw ParseError(path + ":" + std::to_string(line_no) + ": malformed JSON");
        ExemplarSet s;
        try {
            s.id = j.at("id").get<std::string>();
            for (const json& e : j.at("exemplars")) {
                ExemplarRef r;
                r.id = e.at("id").get<std::string>();
                r.similarity = e.at("similarity").get<double>();
                r.diff_tokens = e.at("diff_tokens").get<std::vector<std::string>>();
                r.msg_tokens = e.at("msg_tokens").get<std::vector<std::string>>();
                s.exemplars.push_back(std::move(r));
            }
        } catch (const json::exception& e) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        sets.push_back(std::move(s));
    }
    return sets;
}

struct HypLine {
    std::string id;
    std::vector<std::string> tokens;
};

void save_hyps(const std::string& path, const std::vector<HypLine>& hyps) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write hypotheses file: " + path);
    for (const HypLine& h : hyps) out << json{{"id", h.id}, {"tokens", h.tokens}}.dump() << '\n';
    if (!out) throw IoError("failed writing hypotheses file: " + path);
}

// Accepts hypotheses files ({"id","tokens"}) and preprocessed files
// ({"id","msg_tokens",...}) interchangeably.
std::vector<HypLine> load_token_lines(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read file: " + path);
    std::vector<HypLine> lines;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw ParseError(path + ":" + std::to_string(line_no) + ": malformed JSON");
        HypLine h;
        try {
            h.id = j.value("id", std::string());
            if (j.contains("tokens"))
                h.tokens = j.at("tokens").get<std::vector<std::string>>();
            else if (j.contains("msg_tokens"))
                h.tokens = j.at("msg_tokens").get<std::vector<std::string>>();
            else
                throw ParseError(path + ":" + std::to_string(line_no) + ": no tokens/msg_tokens field");
        } catch (const json::exception& e) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        lines.push_back(std::move(h));
    }
    return lines;
}

void require_file(const std::string& path, const std::string& hint) {
    if (!fs::exists(path)) throw IoError("missing input " + path + " (" + hint + ")");
}

void stage_done(const std::string& name) {
    std::cout << json{{"event", "stage"}, {"name", name}, {"status", "done"}}.dump() << '\n';
}

}  // namespace

Pipeline::Pipeline(Config cfg) : cfg_(std::move(cfg)) {}

std::string Pipeline::workdir() const {
    std::string wd = cfg_.get_str("workdir", "");
    if (wd.empty()) {
        const char* env = std::getenv("RACE_WORKDIR");
        wd = env && *env ? env : "./race_work";
    }
    return wd;
}

std::string Pipeline::pre_path(const std::string& split) const {
    const std::string stem = cfg_.get_str("preprocess.out", workdir() + "/pre");
    return stem + "." + split + ".jsonl";
}
std::string Pipeline::vocab_path() const { return cfg_.get_str("vocab.out", workdir() + "/vocab.txt"); }
std::string Pipeline::retriever_ckpt_path() const {
    return cfg_.get_str("train_retriever.out", workdir() + "/retriever.ckpt");
}
std::string Pipeline::generator_ckpt_path() const {
    return cfg_.get_str("train_generator.out", workdir() + "/generator.ckpt");
}
std::string Pipeline::index_path() const { return cfg_.get_str("index.out", workdir() + "/index.bin"); }
std::string Pipeline::exemplars_path(const std::string& split) const {
    return workdir() + "/exemplars." + split + ".jsonl";
}
std::string Pipeline::hyps_path(const std::string& tag) const { return workdir() + "/hyps." + tag + ".jsonl"; }
std::string Pipeline::provenance_path() const {
    return cfg_.get_str("generate.provenance", workdir() + "/provenance.test.jsonl");
}
std::string Pipeline::report_path(const std::string& tag) const {
    return workdir() + "/report." + tag + ".json";
}

namespace {

ModelConfig model_config_from(const Config& cfg, const std::string& prefix, int vocab_size, ModelKind kind) {
    ModelConfig m;
    m.d_model = static_cast<int>(cfg.get_int(prefix + ".d_model", 128));
    m.num_heads = static_cast<int>(cfg.get_int(prefix + ".num_heads", 4));
    m.enc_layers = static_cast<int>(cfg.get_int(prefix + ".enc_layers", 2));
    m.dec_layers = static_cast<int>(cfg.get_int(prefix + ".dec_layers", 2));
    m.ffn_dim = static_cast<int>(cfg.get_int(prefix + ".ffn_dim", 512));
    m.rel_clip = static_cast<int>(cfg.get_int(prefix + ".rel_clip", 16));
    m.max_diff_len = static_cast<int>(cfg.get_int(prefix + ".max_diff_len", 200));
    m.max_msg_len = static_cast<int>(cfg.get_int(prefix + ".max_msg_len", 50));
    m.dropout = cfg.get_double(prefix + ".dropout", 0.1);
    m.shared_encoders = cfg.get_bool(prefix + ".shared_encoders", true);
    m.fuse_exemplar_message = cfg.get_bool(prefix + ".fuse_exemplar_message", true);
    m.guider_bias = cfg.get_bool(prefix + ".guider_bias", true);
    m.vocab_size = vocab_size;
    m.kind = kind;
    return m;
}

AdamWConfig optim_config_from(const Config& cfg, const std::string& stage_prefix) {
    AdamWConfig o;
    o.lr = cfg.get_double(stage_prefix + ".lr", cfg.get_double("optim.lr", 3e-4));
    o.beta1 = cfg.get_double("optim.beta1", 0.9);
    o.beta2 = cfg.get_double("optim.beta2", 0.999);
    o.eps = cfg.get_double("optim.eps", 1e-8);
    o.weight_decay = cfg.get_double("optim.weight_decay", 0.01);
    o.warmup_steps = static_cast<int>(cfg.get_int("optim.warmup_steps", 100));
    return o;
}

TokenIds encode_diff(const Vocab& vocab, const std::vector<std::string>& tokens, const ModelConfig& mc) {
    return vocab.encode(tokens, mc.max_diff_len, false);
}
TokenIds encode_msg_input(const Vocab& vocab, const std::vector<std::string>& tokens, const ModelConfig& mc) {
    return vocab.encode(tokens, mc.max_msg_len, false);
}
TokenIds encode_target(const Vocab& vocab, const std::vector<std::string>& tokens, const ModelConfig& mc) {
    return vocab.encode(tokens, mc.max_msg_len, true);
}

void train_model(RaceModel<float>& model, const std::vector<TrainExample>& examples, int epochs, int batch_size,
                 const AdamWConfig& ocfg, uint64_t seed, const std::string& stage, const std::string& log_path) {
    if (examples.empty()) throw ValidationError(stage + ": no usable training examples");
    if (epochs < 1 || batch_size < 1) throw ValidationError(stage + ": epochs and batch size must be positive");
    std::ofstream log(log_path, std::ios::binary);
    if (!log) throw IoError("cannot write training log: " + log_path);
    AdamW<float> opt(model.params(), ocfg);
    Rng root = Rng(seed).substream("train:" + stage);
    std::vector<size_t> order(examples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    int64_t gstep = 0;
    for (int epoch = 1; epoch <= epochs; ++epoch) {
        Rng shuffle_rng = root.substream("shuffle:epoch:" + std::to_string(epoch));
        shuffle_rng.shuffle(order);
        double total = 0.0;
        int steps = 0;
        for (size_t at = 0; at < order.size(); at += static_cast<size_t>(batch_size)) {
            std::vector<TrainExample> batch;
            for (size_t i = at; i < std::min(order.size(), at + static_cast<size_t>(batch_size)); ++i)
                batch.push_back(examples[order[i]]);
            Rng step_rng = root.substream("step:" + std::to_string(gstep));
            const double loss = model.training_step(batch, opt, step_rng);
            if (!std::isfinite(loss))
                throw NumericError(stage + ": non-finite loss at step " + std::to_string(gstep));
            total += loss;
            ++steps;
            ++gstep;
        }
        log << json{{"event", "epoch"}, {"stage", stage}, {"epoch", epoch}, {"loss", total / steps}}.dump() << '\n';
    }
}

json report_to_json(const EvalReport& r) {
    return json{{"metrics",
                 {{"bnorm_bleu", r.bnorm_bleu}, {"meteor", r.meteor}, {"rouge_l", r.rouge_l}, {"cider", r.cider}}},
                {"evaluated", r.evaluated},
                {"skipped", r.skipped},
                {"per_example",
                 {{"bnorm_bleu", r.per_bnorm},
                  {"meteor", r.per_meteor},
                  {"rouge_l", r.per_rouge},
                  {"cider", r.per_cider}}}};
}

}  // namespace

void Pipeline::run_preprocess() {
    fs::create_directories(workdir());
    const int max_diff = static_cast<int>(cfg_.get_int("filter.max_diff_tokens", 200));
    const int max_msg = static_cast<int>(cfg_.get_int("filter.max_msg_tokens", 50));
    const bool schema_check = cfg_.get_bool("corpus.schema_check", true);

    CorpusSplit split;
    if (cfg_.has("corpus.train")) {
        split.train = filter_records(load_corpus(cfg_.require_str("corpus.train"), schema_check), max_diff, max_msg);
        if (cfg_.has("corpus.valid"))
            split.validation =
                filter_records(load_corpus(cfg_.require_str("corpus.valid"), schema_check), max_diff, max_msg);
        if (cfg_.has("corpus.test"))
            split.test = filter_records(load_corpus(cfg_.require_str("corpus.test"), schema_check), max_diff, max_msg);
    } else {
        const std::string corpus_path = cfg_.require_str("corpus");
        require_file(corpus_path, "set the `corpus` key or --corpus");
        auto records = filter_records(load_corpus(corpus_path, schema_check), max_diff, max_msg);
        split = split_corpus(records, cfg_.get_double("split.train", 0.8), cfg_.get_double("split.valid", 0.1),
                             cfg_.get_double("split.test", 0.1), static_cast<uint64_t>(cfg_.get_int("seed", 0)));
    }

    auto emit = [&](const std::vector<CommitRecord>& records, const std::string& name) {
        std::vector<PreprocessedRecord> pre;
        pre.reserve(records.size());
        for (const CommitRecord& r : records) pre.push_back(preprocess_record(r));
        save_preprocessed(pre_path(name), pre);
    };
    emit(split.train, "train");
    emit(split.validation, "valid");
    emit(split.test, "test");
    stage_done("preprocess");
}

void Pipeline::run_vocab() {
    const std::string in = cfg_.get_str("vocab.in", pre_path("train"));
    require_file(in, "run `race preprocess` first");
    const auto records = load_preprocessed(in);
    std::vector<std::vector<std::string>> corpora;
    corpora.reserve(records.size() * 2);
    for (const PreprocessedRecord& r : records) {
        corpora.push_back(r.action_tokens);
        corpora.push_back(r.msg_tokens);
    }
    Vocab vocab = Vocab::build(corpora, static_cast<int>(cfg_.get_int("vocab.min_freq", 1)),
                               static_cast<int>(cfg_.get_int("vocab.max_size", 16384)));
    fs::create_directories(workdir());
    vocab.save(vocab_path());
    stage_done("vocab");
}

void Pipeline::run_train_retriever() {
    const std::string pre_file = cfg_.get_str("train_retriever.in", pre_path("train"));
    require_file(pre_file, "run `race preprocess` first");
    require_file(vocab_path(), "run `race vocab` first");
    const Vocab vocab = Vocab::load(vocab_path());
    const ModelConfig mc = model_config_from(cfg_, "retriever", vocab.size(), ModelKind::Plain);
    const uint64_t seed = static_cast<uint64_t>(cfg_.get_int("seed", 0));
    RaceModel<float> model(mc, Rng(seed).substream("model:retriever").seed());

    std::vector<TrainExample> examples;
    for (const PreprocessedRecord& r : load_preprocessed(pre_file)) {
        if (r.action_tokens.empty() || r.msg_tokens.empty()) continue;
        TrainExample ex;
        ex.diff = encode_diff(vocab, r.action_tokens, mc);
        ex.target = encode_target(vocab, r.msg_tokens, mc);
        examples.push_back(std::move(ex));
    }
    train_model(model, examples, static_cast<int>(cfg_.get_int("retriever.epochs", 10)),
                static_cast<int>(cfg_.get_int("retriever.batch_size", 32)), optim_config_from(cfg_, "retriever"),
                seed, "retriever", cfg_.get_str("train_retriever.log", workdir() + "/retriever.log.jsonl"));
    save_checkpoint(retriever_ckpt_path(), model, vocab.hash());
    stage_done("train-retriever");
}

void Pipeline::run_index() {
    const std::string ckpt = cfg_.get_str("index.checkpoint", retriever_ckpt_path());
    const std::string in = cfg_.get_str("index.in", pre_path("train"));
    require_file(ckpt, "run `race train-retriever` first");
    require_file(in, "run `race preprocess` first");
    require_file(vocab_path(), "run `race vocab` first");
    const Vocab vocab = Vocab::load(vocab_path());
    uint64_t ckpt_vocab_hash = 0;
    RaceModel<float> encoder = load_checkpoint<float>(ckpt, &ckpt_vocab_hash);
    RetrievalIndex index =
        build_index(encoder, load_preprocessed(in), vocab, ckpt_vocab_hash, hash_hex(file_hash(ckpt)));
    save_index(index_path(), index);
    stage_done("index");
}

void Pipeline::run_retrieve() {
    const std::string index_file = cfg_.get_str("retrieve.index", index_path());
    const std::string in = cfg_.get_str("retrieve.in", pre_path("test"));
    const std::string out = cfg_.get_str("retrieve.out", workdir() + "/exemplars.jsonl");
    const std::string ckpt = cfg_.get_str("retrieve.checkpoint", cfg_.get_str("index.checkpoint", retriever_ckpt_path()));
    const int k = static_cast<int>(cfg_.get_int("retrieve.k", cfg_.get_int("retrieval.k", 1)));
    const bool exclude_self = cfg_.get_bool("retrieve.exclude_self", false);
    require_file(index_file, "run `race index` first");
    require_file(in, "run `race preprocess` first");
    require_file(ckpt, "run `race train-retriever` first");

    const RetrievalIndex index = load_index(index_file);
    if (index.encoder_checkpoint_hash != hash_hex(file_hash(ckpt)))
        throw ValidationError("retrieve: checkpoint does not match the one the index was built with");
    uint64_t ckpt_vocab_hash = 0;
    RaceModel<float> encoder = load_checkpoint<float>(ckpt, &ckpt_vocab_hash);
    require_file(vocab_path(), "run `race vocab` first");
    const Vocab vocab = Vocab::load(vocab_path());
    if (vocab.hash() != ckpt_vocab_hash)
        throw ValidationError("retrieve: vocabulary does not match the checkpoint");

    std::vector<ExemplarSet> sets;
    for (const PreprocessedRecord& r : load_preprocessed(in)) {
        const auto probe = embed_diff(encoder, vocab, r.action_tokens);
        const auto hits =
            query(index, probe, k, exclude_self ? std::optional<std::string>(r.id) : std::nullopt);
        ExemplarSet s;
        s.id = r.id;
        for (const QueryHit& h : hits) {
            const IndexEntry& e = index.entries[h.entry];
            s.exemplars.push_back(ExemplarRef{e.id, h.similarity, e.diff_tokens, e.msg_tokens});
        }
        sets.push_back(std::move(s));
    }
    save_exemplars(out, sets);
    stage_done("retrieve");
}

void Pipeline::run_train_generator() {
    const std::string pre_file = cfg_.get_str("train_generator.in", pre_path("train"));
    const std::string ex_file = cfg_.get_str("train_generator.exemplars", exemplars_path("train"));
    require_file(pre_file, "run `race preprocess` first");
    require_file(ex_file, "run `race retrieve --exclude-self` over the training split first");
    require_file(vocab_path(), "run `race vocab` first");
    const Vocab vocab = Vocab::load(vocab_path());
    const bool use_guider = cfg_.get_bool("generator.use_guider", true);
    const ModelConfig mc = model_config_from(cfg_, "generator", vocab.size(),
                                             use_guider ? ModelKind::Full : ModelKind::NoGuider);
    const int k = static_cast<int>(cfg_.get_int("retrieval.k", 1));
    if (k < 1) throw ValidationError("retrieval.k must be >= 1");
    const uint64_t seed = static_cast<uint64_t>(cfg_.get_int("seed", 0));
    RaceModel<float> model(mc, Rng(seed).substream("model:generator").seed());

    std::unordered_map<std::string, ExemplarSet> by_id;
    for (ExemplarSet& s : load_exemplars(ex_file)) by_id[s.id] = std::move(s);

    std::vector<TrainExample> examples;
    for (const PreprocessedRecord& r : load_preprocessed(pre_file)) {
        if (r.action_tokens.empty() || r.msg_tokens.empty()) continue;
        auto it = by_id.find(r.id);
        if (it == by_id.end() || it->second.exemplars.empty())
            throw ValidationError("train-generator: no exemplars for record id " + r.id);
        TrainExample ex;
        ex.diff = encode_diff(vocab, r.action_tokens, mc);
        ex.target = encode_target(vocab, r.msg_tokens, mc);
        const auto& pool = it->second.exemplars;
        for (int i = 0; i < std::min<int>(k, static_cast<int>(pool.size())); ++i) {
            ex.exemplar_diffs.push_back(encode_diff(vocab, pool[i].diff_tokens, mc));
            ex.exemplar_msgs.push_back(encode_msg_input(vocab, pool[i].msg_tokens, mc));
        }
        examples.push_back(std::move(ex));
    }
    train_model(model, examples, static_cast<int>(cfg_.get_int("generator.epochs", 10)),
                static_cast<int>(cfg_.get_int("generator.batch_size", 32)), optim_config_from(cfg_, "generator"),
                seed, "generator", cfg_.get_str("train_generator.log", workdir() + "/generator.log.jsonl"));
    save_checkpoint(generator_ckpt_path(), model, vocab.hash());
    stage_done("train-generator");
}

void Pipeline::run_generate() {
    const std::string ckpt = cfg_.get_str("generate.checkpoint", generator_ckpt_path());
    const std::string in = cfg_.get_str("generate.in", pre_path("test"));
    const std::string hyp_out = cfg_.get_str("generate.out", hyps_path("test"));
    require_file(ckpt, "run `race train-generator` first");
    require_file(in, "run `race preprocess` first");
    require_file(vocab_path(), "run `race vocab` first");
    const Vocab vocab = Vocab::load(vocab_path());
    uint64_t ckpt_vocab_hash = 0;
    RaceModel<float> model = load_checkpoint<float>(ckpt, &ckpt_vocab_hash);
    if (vocab.hash() != ckpt_vocab_hash) throw ValidationError("generate: vocabulary does not match the checkpoint");
    const ModelConfig& mc = model.config();

    DecodeOptions opts;
    const std::string strategy = cfg_.get_str("decode.strategy", "greedy");
    if (strategy == "greedy")
        opts.strategy = DecodeOptions::Strategy::Greedy;
    else if (strategy == "beam")
        opts.strategy = DecodeOptions::Strategy::Beam;
    else
        throw ValidationError("decode.strategy must be greedy or beam");
    opts.beam_width = static_cast<int>(cfg_.get_int("decode.beam_width", 5));
    opts.max_len = static_cast<int>(cfg_.get_int("decode.max_len", mc.max_msg_len));

    std::unordered_map<std::string, ExemplarSet> by_id;
    const int k = static_cast<int>(cfg_.get_int("retrieval.k", 1));
    if (mc.kind != ModelKind::Plain) {
        const std::string ex_file = cfg_.get_str("generate.exemplars", exemplars_path("test"));
        require_file(ex_file, "run `race retrieve` over this split first");
        for (ExemplarSet& s : load_exemplars(ex_file)) by_id[s.id] = std::move(s);
    }

    const auto records = load_preprocessed(in);
    std::vector<HypLine> hyps;
    std::ofstream prov(provenance_path(), std::ios::binary);
    if (!prov) throw IoError("cannot write provenance file: " + provenance_path());
    for (const PreprocessedRecord& r : records) {
        GenInput gi;
        gi.diff = encode_diff(vocab, r.action_tokens, mc);
        json prov_ex = json::array();
        if (mc.kind != ModelKind::Plain) {
            auto it = by_id.find(r.id);
            if (it == by_id.end() || it->second.exemplars.empty())
                throw ValidationError("generate: no exemplars for record id " + r.id);
            const auto& pool = it->second.exemplars;
            for (int i = 0; i < std::min<int>(k, static_cast<int>(pool.size())); ++i) {
                gi.exemplar_diffs.push_back(encode_diff(vocab, pool[i].diff_tokens, mc));
                gi.exemplar_msgs.push_back(encode_msg_input(vocab, pool[i].msg_tokens, mc));
            }
        }
        GenResult res = model.generate(gi, opts);
        if (mc.kind != ModelKind::Plain) {
            const auto& pool = by_id[r.id].exemplars;
            for (size_t i = 0; i < gi.exemplar_diffs.size(); ++i) {
                json e{{"id", pool[i].id}, {"similarity", pool[i].similarity}};
                if (i < res.lambdas.size()) e["lambda"] = res.lambdas[i];
                prov_ex.push_back(e);
            }
        }
        prov << json{{"id", r.id}, {"exemplars", prov_ex}}.dump() << '\n';
        hyps.push_back(HypLine{r.id, vocab.decode_ids(res.ids)});
    }
    save_hyps(hyp_out, hyps);

    if (cfg_.get_bool("eval.baselines", false)) {
        const std::string train_file = cfg_.get_str("generate.train", pre_path("train"));
        require_file(train_file, "baselines need the preprocessed training split");
        const auto train = load_preprocessed(train_file);
        const int nngen_k = static_cast<int>(cfg_.get_int("baselines.nngen_k", 5));
        std::vector<HypLine> nngen_hyps, tfidf_hyps;
        for (const PreprocessedRecord& r : records) {
            nngen_hyps.push_back(HypLine{r.id, nngen_retrieve(train, r.action_tokens, nngen_k)});
            tfidf_hyps.push_back(HypLine{r.id, tfidf_retrieve(train, r.action_tokens)});
        }
        save_hyps(hyps_path("nngen.test"), nngen_hyps);
        save_hyps(hyps_path("tfidf.test"), tfidf_hyps);
    }
    stage_done("generate");
}

void Pipeline::run_eval() {
    const std::string hyp = cfg_.get_str("eval.hyp", hyps_path("test"));
    const std::string ref = cfg_.get_str("eval.ref", pre_path("test"));
    const std::string out = cfg_.get_str("eval.out", report_path("test"));
    require_file(hyp, "run `race generate` first");
    require_file(ref, "run `race preprocess` first");

    auto evaluate_files = [&](const std::string& hyp_file, const std::string& out_file) {
        const auto hyps = load_token_lines(hyp_file);
        const auto refs = load_token_lines(ref);
        if (hyps.size() != refs.size())
            throw ValidationError("eval: " + hyp_file + " and " + ref + " differ in length");
        std::vector<TokenSeq> cand_tokens, ref_tokens;
        for (size_t i = 0; i < hyps.size(); ++i) {
            if (!hyps[i].id.empty() && !refs[i].id.empty() && hyps[i].id != refs[i].id)
                throw ValidationError("eval: id mismatch at line " + std::to_string(i + 1) + ": " + hyps[i].id +
                                      " vs " + refs[i].id);
            cand_tokens.push_back(hyps[i].tokens);
            ref_tokens.push_back(refs[i].tokens);
        }
        const EvalReport report = evaluate_all(cand_tokens, ref_tokens);
        std::ofstream o(out_file, std::ios::binary);
        if (!o) throw IoError("cannot write report: " + out_file);
        o << report_to_json(report).dump(2) << '\n';
    };
    evaluate_files(hyp, out);
    if (cfg_.get_bool("eval.baselines", false)) {
        if (fs::exists(hyps_path("nngen.test"))) evaluate_files(hyps_path("nngen.test"), report_path("nngen.test"));
        if (fs::exists(hyps_path("tfidf.test"))) evaluate_files(hyps_path("tfidf.test"), report_path("tfidf.test"));
    }
    stage_done("eval");
}

void Pipeline::run_all() {
    run_preprocess();
    run_vocab();
    run_train_retriever();
    run_index();

    // exemplars for training (self-excluded) and for the test split
    Config saved = cfg_;
    cfg_.set("retrieve.in", pre_path("train"));
    cfg_.set("retrieve.out", exemplars_path("train"));
    cfg_.set("retrieve.exclude_self", "true");
    cfg_.set("retrieve.k", std::to_string(cfg_.get_int("retrieval.k", 1)));
    run_retrieve();
    cfg_ = saved;
    cfg_.set("retrieve.in", pre_path("test"));
    cfg_.set("retrieve.out", exemplars_path("test"));
    cfg_.set("retrieve.exclude_self", "false");
    cfg_.set("retrieve.k", std::to_string(cfg_.get_int("retrieval.k", 1)));
    run_retrieve();
    cfg_ = saved;

    run_train_generator();
    run_generate();
    run_eval();
}

}  // namespace race
