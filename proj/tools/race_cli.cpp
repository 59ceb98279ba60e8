// Pipeline CLI. All work happens behind the C API in librace; this binary
// only maps flags onto config keys and stage calls.

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "race.h"

namespace {

struct PipelineHandle {
    race_pipeline* p = race_pipeline_new();
    ~PipelineHandle() { race_pipeline_free(p); }
};

struct PendingKey {
    std::string key;
    std::string value;
};

int finish(race_pipeline* p, race_status status) {
    if (status != RACE_OK) std::fprintf(stderr, "race: %s\n", race_pipeline_last_error(p));
    return static_cast<int>(status);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"race: retrieval-augmented commit message generation pipeline"};
    app.require_subcommand(1);

    PipelineHandle handle;
    if (!handle.p) {
        std::fprintf(stderr, "race: out of memory\n");
        return 1;
    }

    std::string config_path, workdir, seed;
    std::vector<PendingKey> keys;
    app.add_option("--config", config_path, "config file with key = value lines");
    app.add_option("--workdir", workdir, "working directory (default $RACE_WORKDIR or ./race_work)");
    app.add_option("--seed", seed, "root random seed");

    auto opt = [&keys](CLI::App* cmd, const std::string& flag, const std::string& key, const std::string& help) {
        auto holder = std::make_shared<std::string>();
        cmd->add_option_function<std::string>(
               flag, [&keys, key, holder](const std::string& v) { keys.push_back({key, v}); }, help)
            ->expected(1);
    };
    auto flag_true = [&keys](CLI::App* cmd, const std::string& flag, const std::string& key, const std::string& value,
                             const std::string& help) {
        cmd->add_flag_callback(flag, [&keys, key, value]() { keys.push_back({key, value}); }, help);
    };

    CLI::App* preprocess = app.add_subcommand("preprocess", "tokenize, diff and split the corpus");
    opt(preprocess, "--corpus", "corpus", "corpus JSONL file");
    opt(preprocess, "--out", "preprocess.out", "output stem (<stem>.train/valid/test.jsonl)");

    CLI::App* vocab = app.add_subcommand("vocab", "build the vocabulary");
    opt(vocab, "--in", "vocab.in", "preprocessed JSONL (default <workdir>/pre.train.jsonl)");
    opt(vocab, "--out", "vocab.out", "vocabulary file (default <workdir>/vocab.txt)");

    CLI::App* train_ret = app.add_subcommand("train-retriever", "train the stage-I encoder-decoder");
    opt(train_ret, "--in", "train_retriever.in", "preprocessed training JSONL");
    opt(train_ret, "--out", "train_retriever.out", "checkpoint path");
    opt(train_ret, "--epochs", "retriever.epochs", "training epochs");
    opt(train_ret, "--batch-size", "retriever.batch_size", "batch size");
    opt(train_ret, "--lr", "retriever.lr", "learning rate");

    CLI::App* index = app.add_subcommand("index", "embed the training split into a similarity index");
    opt(index, "--checkpoint", "index.checkpoint", "stage-I checkpoint");
    opt(index, "--in", "index.in", "preprocessed training JSONL");
    opt(index, "--out", "index.out", "index file");

    CLI::App* retrieve = app.add_subcommand("retrieve", "query the index for exemplars");
    opt(retrieve, "--index", "retrieve.index", "index file");
    opt(retrieve, "--in", "retrieve.in", "preprocessed JSONL of probes");
    opt(retrieve, "--k", "retrieve.k", "exemplars per probe");
    opt(retrieve, "--checkpoint", "retrieve.checkpoint", "encoder checkpoint (defaults to the index's)");
    opt(retrieve, "--out", "retrieve.out", "exemplars JSONL");
    flag_true(retrieve, "--exclude-self", "retrieve.exclude_self", "true",
              "drop hits whose id equals the probe id");

    CLI::App* train_gen = app.add_subcommand("train-generator", "train the stage-II generator");
    opt(train_gen, "--in", "train_generator.in", "preprocessed training JSONL");
    opt(train_gen, "--exemplars", "train_generator.exemplars", "self-excluded exemplars for the training split");
    opt(train_gen, "--out", "train_generator.out", "checkpoint path");
    opt(train_gen, "--epochs", "generator.epochs", "training epochs");
    opt(train_gen, "--batch-size", "generator.batch_size", "batch size");
    opt(train_gen, "--lr", "generator.lr", "learning rate");
    opt(train_gen, "--k", "retrieval.k", "exemplars consumed per item");
    flag_true(train_gen, "--no-guider", "generator.use_guider", "false", "ablation: concatenate without the guider");

    CLI::App* generate = app.add_subcommand("generate", "decode messages for a split");
    opt(generate, "--checkpoint", "generate.checkpoint", "generator checkpoint");
    opt(generate, "--in", "generate.in", "preprocessed JSONL of the split");
    opt(generate, "--exemplars", "generate.exemplars", "exemplars JSONL for the split");
    opt(generate, "--out", "generate.out", "hypotheses JSONL");
    opt(generate, "--strategy", "decode.strategy", "greedy or beam");
    opt(generate, "--beam-width", "decode.beam_width", "beam width");
    opt(generate, "--max-len", "decode.max_len", "generation cap");
    opt(generate, "--k", "retrieval.k", "exemplars consumed per item");
    flag_true(generate, "--baselines", "eval.baselines", "true", "also emit NNGen and TF-IDF hypotheses");

    CLI::App* eval = app.add_subcommand("eval", "score hypotheses against references");
    opt(eval, "--hyp", "eval.hyp", "hypotheses JSONL");
    opt(eval, "--ref", "eval.ref", "references (preprocessed or hypotheses JSONL)");
    opt(eval, "--out", "eval.out", "report JSON");
    flag_true(eval, "--baselines", "eval.baselines", "true", "also score baseline hypothesis files");

    CLI::App* pipeline = app.add_subcommand("pipeline", "run every stage in order");
    opt(pipeline, "--corpus", "corpus", "corpus JSONL file");
    opt(pipeline, "--k", "retrieval.k", "exemplars per item");
    flag_true(pipeline, "--no-guider", "generator.use_guider", "false", "ablation: concatenate without the guider");
    flag_true(pipeline, "--baselines", "eval.baselines", "true", "also emit and score IR baselines");

    CLI11_PARSE(app, argc, argv);

    if (!config_path.empty()) {
        const race_status st = race_pipeline_load_config(handle.p, config_path.c_str());
        if (st != RACE_OK) return finish(handle.p, st);
    }
    if (!workdir.empty()) race_pipeline_set(handle.p, "workdir", workdir.c_str());
    if (!seed.empty()) race_pipeline_set(handle.p, "seed", seed.c_str());
    for (const PendingKey& kv : keys) race_pipeline_set(handle.p, kv.key.c_str(), kv.value.c_str());

    if (preprocess->parsed()) return finish(handle.p, race_run_preprocess(handle.p));
    if (vocab->parsed()) return finish(handle.p, race_run_vocab(handle.p));
    if (train_ret->parsed()) return finish(handle.p, race_run_train_retriever(handle.p));
    if (index->parsed()) return finish(handle.p, race_run_index(handle.p));
    if (retrieve->parsed()) return finish(handle.p, race_run_retrieve(handle.p));
    if (train_gen->parsed()) return finish(handle.p, race_run_train_generator(handle.p));
    if (generate->parsed()) return finish(handle.p, race_run_generate(handle.p));
    if (eval->parsed()) return finish(handle.p, race_run_eval(handle.p));
    if (pipeline->parsed()) return finish(handle.p, race_run_pipeline(handle.p));
    return 1;
}
