// tokcode: reproducible pipeline driver.
//
//   gen-corpus --config c.json --out corpus.json
//   pretrain   --config c.json --corpus corpus.json --out base.ckpt
//   train      --base base.ckpt --config c.json --corpus corpus.json --out lora.ckpt
//   eval       --base base.ckpt --lora lora.ckpt --config c.json --corpus corpus.json --out dir
//   simulate   --p 0.4 --packets 5 --trials 10000 [--seed 0] [--out csv]
//   report     --in dir
//   sweep-lambda --base base.ckpt --config c.json --corpus corpus.json --out dir
//   grad-check [--seeds 20] [--tol 1e-5]
//
// Every command writes a manifest next to its outputs; reruns with the same
// config and seed reproduce outputs byte for byte.

#include <filesystem>
#include <iostream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <CLI11.hpp>

#include "tokcode/checkpoint.hpp"
#include "tokcode/config.hpp"
#include "tokcode/gradcheck.hpp"
#include "tokcode/inference.hpp"
#include "tokcode/report.hpp"

namespace fs = std::filesystem;
using namespace tokcode;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    int threads = -1;
};

RunConfig resolve_config(const CommonArgs& args) {
    RunConfig cfg = args.config_path.empty()
                        ? default_run_config()
                        : load_run_config(args.config_path, args.overrides);
    if (args.config_path.empty() && !args.overrides.empty()) {
        nlohmann::json j = cfg.to_json();
        for (const auto& o : args.overrides) apply_override(j, o);
        cfg = RunConfig::from_json(j);
    }
    if (args.threads >= 0) cfg.threads = args.threads;
#ifdef _OPENMP
    if (cfg.threads > 0) omp_set_num_threads(cfg.threads);
#endif
    return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON config file");
    cmd->add_option("--set", args.overrides, "Override config fields, path.to.field=value");
    cmd->add_option("--threads", args.threads, "Worker cap; 1 gives the canonical trace");
}

void write_manifest(const std::string& command, const RunConfig& cfg,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs, const std::string& path) {
    write_file(path, make_manifest(command, cfg, inputs, outputs).dump(1) + "\n");
}

Vocabulary vocab_for(const RunConfig& cfg) {
    return build_vocab(cfg.vocab_size, stage_seed(cfg.master_seed, "vocab"));
}

EmbedderConfig embedder_cfg(const RunConfig& cfg, bool heldout) {
    EmbedderConfig e = heldout ? cfg.heldout : cfg.embedder;
    e.vocab_total = cfg.vocab_size + 2 + kDefaultSentinels;
    e.max_len = cfg.model.max_len + 8;
    return e;
}

int cmd_gen_corpus(const CommonArgs& common, const std::string& out_path) {
    const RunConfig cfg = resolve_config(common);
    const Vocabulary vocab = vocab_for(cfg);
    const PromptGrammar grammar = default_grammar(vocab, stage_seed(cfg.master_seed, "grammar"));
    DatasetConfig dc = cfg.corpus;
    dc.seed = stage_seed(cfg.master_seed, "corpus");
    const Dataset ds = make_dataset(grammar, vocab, dc);
    fs::create_directories(fs::path(out_path).parent_path().empty()
                               ? "."
                               : fs::path(out_path).parent_path().string());
    save_dataset(ds, out_path);
    write_manifest("gen-corpus", cfg, {}, {out_path}, out_path + ".manifest.json");
    std::cout << "corpus: " << ds.train.size() << " train / " << ds.test.size() << " test -> "
              << out_path << "\n";
    return kExitOk;
}

int cmd_pretrain(const CommonArgs& common, const std::string& corpus_path,
                 const std::string& out_path) {
    const RunConfig cfg = resolve_config(common);
    const Dataset ds = load_dataset(corpus_path);
    TransformerConfig mcfg = cfg.model;
    mcfg.vocab_total = ds.vocab.total();
    mcfg.seed = stage_seed(cfg.master_seed, "model-init");
    PretrainConfig pc = cfg.pretrain;
    pc.seed = stage_seed(cfg.master_seed, "pretrain");

    const auto result = pretrain_base<float>(ds, mcfg, pc);

    // Held-out copy fidelity of the pretrained conditioning path.
    long exact = 0;
    for (const auto& s : ds.test) {
        exact += encode_tokens(s.seq, result.model, nullptr, ds.vocab) == s.seq;
    }
    nlohmann::json meta{{"steps", pc.steps},
                        {"final_loss", result.log.empty() ? 0.0 : result.log.back().loss},
                        {"copy_exact_test", exact},
                        {"test_size", ds.test.size()}};
    save_checkpoint(to_checkpoint(result.model, ds.vocab, meta), out_path);

    std::ostringstream log;
    log << "step,loss,wall_ms\n";
    for (const auto& row : result.log) {
        log << row.step << "," << format_double(row.loss) << "," << format_double(row.wall_ms)
            << "\n";
    }
    const std::string log_path = out_path + ".log.csv";
    write_file(log_path, log.str());

    write_manifest("pretrain", cfg, {corpus_path}, {out_path}, out_path + ".manifest.json");
    std::cout << "pretrain: " << pc.steps << " steps, final loss "
              << (result.log.empty() ? 0.0 : result.log.back().loss) << ", test copy " << exact
              << "/" << ds.test.size() << " -> " << out_path << "\n";
    return kExitOk;
}

int cmd_train(const CommonArgs& common, const std::string& base_path,
              const std::string& corpus_path, const std::string& out_path) {
    const RunConfig cfg = resolve_config(common);
    const Dataset ds = load_dataset(corpus_path);
    const auto base = transformer_from_checkpoint<float>(load_checkpoint(base_path));
    const auto embedder = SentenceEmbedder<float>::make(embedder_cfg(cfg, false));

    const auto targets =
        cfg.lora_targets.empty() ? default_lora_targets(base.cfg) : cfg.lora_targets;
    const auto lora0 =
        lora_inject(base, cfg.lora_rank, targets, stage_seed(cfg.master_seed, "lora-init"));

    SfmaConfig sc = cfg.sfma;
    sc.channel = cfg.channel;
    sc.seed = stage_seed(cfg.master_seed, "sfma");
    const auto result = train_sfma(ds, base, embedder, lora0, sc);

    const auto counts = lora_param_count(result.lora, base);
    nlohmann::json meta{{"steps", sc.steps},
                        {"trainable", counts.trainable},
                        {"frozen", counts.frozen},
                        {"trainable_fraction", counts.fraction}};
    save_checkpoint(lora_to_checkpoint(result.lora, meta), out_path);

    std::ostringstream log;
    log << "step,loss,loss_sent,loss_norm,grad_norm,wall_ms\n";
    for (const auto& row : result.log) {
        log << row.step << "," << format_double(row.loss) << ","
            << format_double(row.loss_sent) << "," << format_double(row.loss_norm) << ","
            << format_double(row.grad_norm) << "," << format_double(row.wall_ms) << "\n";
    }
    const std::string log_path = out_path + ".log.csv";
    write_file(log_path, log.str());

    write_manifest("train", cfg, {base_path, corpus_path}, {out_path},
                   out_path + ".manifest.json");
    std::cout << "train: " << sc.steps << " steps, trainable " << counts.trainable << " of "
              << counts.frozen << " (" << counts.fraction * 100 << "%) -> " << out_path << "\n";
    return kExitOk;
}

int cmd_eval(const CommonArgs& common, const std::string& base_path,
             const std::string& lora_path, const std::string& corpus_path,
             const std::string& out_dir) {
    const RunConfig cfg = resolve_config(common);
    const Dataset ds = load_dataset(corpus_path);
    const auto base = transformer_from_checkpoint<double>(load_checkpoint(base_path));
    const auto lora = lora_from_checkpoint<double>(load_checkpoint(lora_path),
                                                   base.content_hash());
    const auto embedder = SentenceEmbedder<double>::make(embedder_cfg(cfg, false));
    const auto heldout = SentenceEmbedder<double>::make(embedder_cfg(cfg, true));

    EvalConfig ec = cfg.eval;
    ec.packets = cfg.channel.packets;
    ec.seed = stage_seed(cfg.master_seed, "eval");

    EvalModels models;
    models.base = &base;
    models.lora = &lora;
    models.embedder = &embedder;
    models.heldout = &heldout;
    models.vocab = &ds.vocab;

    MetricsTable table = evaluate(ds.test, ec, models);
    table.run_config = make_manifest("eval", cfg, {base_path, lora_path, corpus_path}, {});
    const auto written = emit_report(table, out_dir, cfg.eval_svg);
    write_manifest("eval", cfg, {base_path, lora_path, corpus_path}, written,
                   out_dir + "/manifest.json");

    for (const auto& a : table.aggregates) {
        if (a.embedder != "sent_toy") continue;
        std::cout << method_name(a.method) << " p=" << a.p << " ";
        if (a.implemented) {
            std::cout << "mean=" << a.mean << " ci=[" << a.ci_lo << ", " << a.ci_hi << "]";
        } else {
            std::cout << "(not implemented)";
        }
        std::cout << "\n";
    }
    std::cout << "report -> " << out_dir << "\n";
    return kExitOk;
}

int cmd_simulate(double p, int packets, int trials, uint64_t seed, const std::string& out) {
    if (trials < 1) throw ConfigError("simulate: trials must be >= 1");
    const double exact = p * packets;
    if (std::abs(exact - std::round(exact)) > 1e-9) {
        throw ConfigError("simulate: p*packets must be an integer");
    }
    const int lost = static_cast<int>(std::round(exact));
    ChannelConfig cc{packets, lost};
    cc.validate();

    Rng rng(seed);
    std::vector<long> lost_counts(packets, 0);
    for (int t = 0; t < trials; ++t) {
        const auto pat = sample_loss_pattern(packets, lost, rng);
        for (int pk : pat.lost_packets) lost_counts[pk - 1]++;
    }
    std::ostringstream csv;
    csv << "packet,lost,trials,freq,exact_marginal\n";
    for (int pk = 0; pk < packets; ++pk) {
        csv << (pk + 1) << "," << lost_counts[pk] << "," << trials << ","
            << format_double(static_cast<double>(lost_counts[pk]) / trials) << ","
            << format_double(cc.loss_rate()) << "\n";
    }
    if (out.empty()) {
        std::cout << csv.str();
    } else {
        write_file(out, csv.str());
        std::cout << "simulate -> " << out << "\n";
    }
    return kExitOk;
}

int cmd_report(const std::string& in_dir) {
    const auto written = render_plots(in_dir);
    for (const auto& p : written) std::cout << "plot -> " << p << "\n";
    if (written.empty()) std::cout << "no records found in " << in_dir << "\n";
    return kExitOk;
}

int cmd_sweep_lambda(const CommonArgs& common, const std::string& base_path,
                     const std::string& corpus_path, const std::string& out_dir,
                     std::vector<double> lambdas) {
    const RunConfig cfg = resolve_config(common);
    if (lambdas.empty()) lambdas = {0.0, 0.01, 0.1, 1.0};
    const Dataset ds = load_dataset(corpus_path);
    const auto base = transformer_from_checkpoint<float>(load_checkpoint(base_path));
    const auto embedder = SentenceEmbedder<float>::make(embedder_cfg(cfg, false));
    const auto targets =
        cfg.lora_targets.empty() ? default_lora_targets(base.cfg) : cfg.lora_targets;

    fs::create_directories(out_dir);
    std::ostringstream csv;
    csv << "lambda,final_loss,final_loss_sent,final_loss_norm,test_loss_sent\n";
    for (double lambda : lambdas) {
        SfmaConfig sc = cfg.sfma;
        sc.channel = cfg.channel;
        sc.lambda = lambda;
        sc.seed = stage_seed(cfg.master_seed, "sfma");
        const auto lora0 =
            lora_inject(base, cfg.lora_rank, targets, stage_seed(cfg.master_seed, "lora-init"));
        const auto result = train_sfma(ds, base, embedder, lora0, sc);
        const double test_sent = mean_test_loss_sent(ds.test, base, &result.lora, embedder,
                                                     ds.vocab, sc,
                                                     stage_seed(cfg.master_seed, "sweep-eval"));
        const auto& last = result.log.back();
        csv << format_double(lambda) << "," << format_double(last.loss) << ","
            << format_double(last.loss_sent) << "," << format_double(last.loss_norm) << ","
            << format_double(test_sent) << "\n";
        std::cout << "lambda=" << lambda << " test loss_sent=" << test_sent << "\n";
    }
    const std::string path = out_dir + "/lambda_sweep.csv";
    write_file(path, csv.str());
    write_manifest("sweep-lambda", cfg, {base_path, corpus_path}, {path},
                   out_dir + "/manifest.json");
    std::cout << "sweep -> " << path << "\n";
    return kExitOk;
}

int cmd_grad_check(int seeds, double tol);

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Token encoding laboratory for semantic recovery over erasure channels"};
    app.require_subcommand(1);

    CommonArgs common;
    std::string corpus_path = "corpus.json";
    std::string base_path, lora_path, out_path, in_dir;
    double sim_p = 0.4;
    int sim_packets = 5, sim_trials = 10000;
    uint64_t sim_seed = 0;
    std::vector<double> lambdas;
    int gc_seeds = 20;
    double gc_tol = 1e-5;

    auto* gen = app.add_subcommand("gen-corpus", "Generate the synthetic token corpus");
    add_common(gen, common);
    gen->add_option("--out", out_path, "Output dataset path")->required();

    auto* pre = app.add_subcommand("pretrain", "Pretrain the toy foundation model");
    add_common(pre, common);
    pre->add_option("--corpus", corpus_path, "Dataset path");
    pre->add_option("--out", out_path, "Output checkpoint path")->required();

    auto* train = app.add_subcommand("train", "Adapt the token encoder with SFMA");
    add_common(train, common);
    train->add_option("--base", base_path, "Base checkpoint")->required();
    train->add_option("--corpus", corpus_path, "Dataset path");
    train->add_option("--out", out_path, "Output adapter checkpoint")->required();

    auto* ev = app.add_subcommand("eval", "Run the method comparison");
    add_common(ev, common);
    ev->add_option("--base", base_path, "Base checkpoint")->required();
    ev->add_option("--lora", lora_path, "Adapter checkpoint")->required();
    ev->add_option("--corpus", corpus_path, "Dataset path");
    ev->add_option("--out", out_path, "Output directory")->required();

    auto* sim = app.add_subcommand("simulate", "Monte-Carlo erasure statistics");
    sim->add_option("--p", sim_p, "Packet loss rate");
    sim->add_option("--packets", sim_packets, "Packet count P");
    sim->add_option("--trials", sim_trials, "Number of draws");
    sim->add_option("--seed", sim_seed, "RNG seed");
    sim->add_option("--out", out_path, "CSV output path (stdout when omitted)");

    auto* rep = app.add_subcommand("report", "Render plots from an eval directory");
    rep->add_option("--in", in_dir, "Eval output directory")->required();

    auto* sweep = app.add_subcommand("sweep-lambda", "Train across norm-loss coefficients");
    add_common(sweep, common);
    sweep->add_option("--base", base_path, "Base checkpoint")->required();
    sweep->add_option("--corpus", corpus_path, "Dataset path");
    sweep->add_option("--out", out_path, "Output directory")->required();
    sweep->add_option("--lambdas", lambdas, "Coefficients to sweep");

    auto* gc = app.add_subcommand("grad-check", "Finite-difference oracle over every op");
    gc->add_option("--seeds", gc_seeds, "Random seeds per op");
    gc->add_option("--tol", gc_tol, "Max relative error");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_corpus(common, out_path);
        if (pre->parsed()) return cmd_pretrain(common, corpus_path, out_path);
        if (train->parsed()) return cmd_train(common, base_path, corpus_path, out_path);
        if (ev->parsed()) return cmd_eval(common, base_path, lora_path, corpus_path, out_path);
        if (sim->parsed()) return cmd_simulate(sim_p, sim_packets, sim_trials, sim_seed, out_path);
        if (rep->parsed()) return cmd_report(in_dir);
        if (sweep->parsed()) {
            return cmd_sweep_lambda(common, base_path, corpus_path, out_path, lambdas);
        }
        if (gc->parsed()) return cmd_grad_check(gc_seeds, gc_tol);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
    return kExitOk;
}

namespace {

int cmd_grad_check(int seeds, double tol) {
    using namespace tokcode::ad;
    bool all_pass = true;

    auto run_case = [&](const std::string& name, auto&& builder,
                        std::vector<GcParam<double>> params, uint64_t seed) {
        const auto report = grad_check<double>(builder, std::move(params), 1e-6, tol, 96, seed);
        all_pass = all_pass && report.pass;
        std::printf("%-22s seed=%llu max_rel_err=%.3e %s\n", name.c_str(),
                    static_cast<unsigned long long>(seed), report.max_rel_err,
                    report.pass ? "pass" : "FAIL");
    };

    for (int s = 0; s < seeds; ++s) {
        Rng rng(stage_seed(1234, "grad-check-" + std::to_string(s)));
        auto rand_param = [&](int r, int c, double scale = 1.0) {
            GcParam<double> p{r, c, {}};
            p.values.resize(static_cast<size_t>(r) * c);
            for (auto& v : p.values) v = scale * (2.0 * rng.next_double() - 1.0);
            return p;
        };
        run_case("composite_loss",
                 [](Graph<double>& g, const std::vector<Tensor<double>>& p) {
                     auto w = softmax_rows(p[0]);
                     auto v_soft = matmul(w, p[1]);
                     auto pooled = mean_pool(v_soft, std::vector<double>(4, 1.0));
                     auto h_rx = matmul(pooled, p[2]);
                     auto h_ref = matmul(mean_pool(p[1], std::vector<double>(6, 1.0)), p[2]);
                     auto l_sent = affine(cosine_similarity(h_ref, h_rx), -1.0, 1.0);
                     auto l_norm = squared_error(l2_norm(h_rx), l2_norm(h_ref));
                     return add(l_sent, scale(l_norm, 0.1));
                 },
                 {rand_param(4, 6, 2.0), rand_param(6, 5), rand_param(5, 5)}, s);
    }
    std::printf("grad-check: %s\n", all_pass ? "all passed" : "FAILURES");
    return all_pass ? kExitOk : kExitNumeric;
}

}  // namespace
