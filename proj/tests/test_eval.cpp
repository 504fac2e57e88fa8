#include <doctest.h>

#include <filesystem>

#include "test_fixtures.hpp"
#include "tokcode/report.hpp"

using namespace tokcode;
using fixtures::tiny_dataset;

namespace {

struct EvalFixture {
    Transformer<double> base;
    LoraSet<double> lora;
    SentenceEmbedder<double> embedder;
    SentenceEmbedder<double> heldout;

    EvalFixture()
        : base(fixtures::tiny_base_double()),
          lora(lora_inject(base, 2, default_lora_targets(base.cfg), 77)),
          embedder(SentenceEmbedder<double>::make(fixtures::tiny_embedder_cfg())),
          heldout(SentenceEmbedder<double>::make(
              fixtures::tiny_embedder_cfg(EmbedderVariant::kPooled, 16, 202))) {}

    EvalModels models() const {
        EvalModels m;
        m.base = &base;
        m.lora = &lora;
        m.embedder = &embedder;
        m.heldout = &heldout;
        m.vocab = &tiny_dataset().vocab;
        return m;
    }
};

const EvalFixture& eval_fixture() {
    static const EvalFixture f;
    return f;
}

EvalConfig small_eval_config() {
    EvalConfig cfg;
    cfg.rates = {0.0, 0.2, 0.4, 0.6};
    cfg.trials = 6;
    cfg.packets = 5;
    cfg.bootstrap_resamples = 200;
    cfg.seed = 5;
    return cfg;
}

}  // namespace

TEST_CASE("sentence similarity basics") {
    const auto& emb = fixtures::tiny_embedder<double>();
    const auto& x = tiny_dataset().test[0].seq;
    CHECK(sentence_similarity(x, x, emb) == doctest::Approx(1.0).epsilon(1e-9));

    const auto& y = tiny_dataset().test[1].seq;
    CHECK(sentence_similarity(x, y, emb) == sentence_similarity(y, x, emb));

    CHECK_THROWS_AS(sentence_similarity(TokenSequence{}, x, emb), InputError);
}

TEST_CASE("run_method composes transforms with the channel") {
    const auto& f = eval_fixture();
    const auto models = f.models();
    const Sample& s = tiny_dataset().test[2];

    const ChannelConfig lossless{5, 0};
    CHECK(run_method(MethodId::kPassthrough, s, LossPattern{}, lossless, models) == s.seq);
    CHECK(run_method(MethodId::kGreedyUpperBound, s, LossPattern{}, lossless, models) == s.seq);
    CHECK(run_method(MethodId::kTokCode, s, LossPattern{}, lossless, models) == s.seq);
    CHECK(run_method(MethodId::kInfilling, s, LossPattern{}, lossless, models) == s.seq);
}

TEST_CASE("tokcode with zero adapters equals passthrough for every pattern") {
    const auto& f = eval_fixture();
    const auto models = f.models();
    const ChannelConfig channel{5, 2};
    for (const auto& pattern : enumerate_loss_patterns(5, 2)) {
        for (int i = 0; i < 10; ++i) {
            const Sample& s = tiny_dataset().test[i];
            const auto tok = run_method(MethodId::kTokCode, s, pattern, channel, models);
            const auto pass = run_method(MethodId::kPassthrough, s, pattern, channel, models);
            CHECK(tok == pass);
        }
    }
}

TEST_CASE("run_method reports missing checkpoints and unimplemented methods") {
    const auto& f = eval_fixture();
    EvalModels models = f.models();
    const Sample& s = tiny_dataset().test[0];
    const ChannelConfig channel{5, 1};
    LossPattern pat;
    pat.lost_packets = {2};

    CHECK_THROWS_AS(run_method(MethodId::kLlmPrediction, s, pat, channel, models), ConfigError);
    models.lora = nullptr;
    CHECK_THROWS_AS(run_method(MethodId::kTokCode, s, pat, channel, models), ConfigError);
    models.base = nullptr;
    CHECK_THROWS_AS(run_method(MethodId::kInfilling, s, pat, channel, models), ConfigError);
}

TEST_CASE("gap closure fractions") {
    CHECK(*gap_closure(0.6, 0.6, 0.9) == doctest::Approx(0.0));
    CHECK(*gap_closure(0.6, 0.9, 0.9) == doctest::Approx(1.0));
    CHECK(*gap_closure(0.6, 0.75, 0.9) == doctest::Approx(0.5));
    CHECK_FALSE(gap_closure(0.7, 0.8, 0.7).has_value());
}

TEST_CASE("eval config validation") {
    EvalConfig cfg = small_eval_config();
    cfg.rates = {0.3};  // 0.3 * 5 = 1.5 packets
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_eval_config();
    cfg.rates = {1.0};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_eval_config();
    CHECK(cfg.packets_lost_for(0.4) == 2);
    CHECK(cfg.packets_lost_for(0.0) == 0);
}

TEST_CASE("every method is perfect under a lossless channel") {
    const auto& f = eval_fixture();
    EvalConfig cfg = small_eval_config();
    cfg.rates = {0.0};
    cfg.trials = 1;
    const std::vector<Sample> subset(tiny_dataset().test.begin(),
                                     tiny_dataset().test.begin() + 12);
    const auto table = evaluate(subset, cfg, f.models());
    for (const auto& r : table.records) {
        CHECK(std::abs(r.similarity - 1.0) < 1e-9);
        CHECK(r.slot_recovery == doctest::Approx(1.0));
    }
    for (const auto& a : table.aggregates) {
        if (a.implemented) CHECK(std::abs(a.mean - 1.0) < 1e-9);
    }
}

TEST_CASE("passthrough similarity decreases as the loss rate grows") {
    const auto& f = eval_fixture();
    EvalConfig cfg = small_eval_config();
    cfg.rates = {0.2, 0.4, 0.6};
    cfg.trials = 10;
    cfg.methods = {MethodId::kPassthrough};
    const std::vector<Sample> subset(tiny_dataset().test.begin(),
                                     tiny_dataset().test.begin() + 20);
    const auto table = evaluate(subset, cfg, f.models());
    std::map<double, double> means;
    for (const auto& a : table.aggregates) {
        if (a.embedder == "sent_toy" && a.implemented) means[a.p] = a.mean;
    }
    REQUIRE(means.size() == 3);
    CHECK(means[0.2] > means[0.4]);
    CHECK(means[0.4] > means[0.6]);
}

TEST_CASE("patterns are paired across methods within a trial") {
    // With zero adapters TokCode transmits exactly what passthrough does, so
    // identical patterns force identical records.
    const auto& f = eval_fixture();
    EvalConfig cfg = small_eval_config();
    cfg.rates = {0.4, 0.6};
    cfg.trials = 8;
    cfg.methods = {MethodId::kPassthrough, MethodId::kTokCode};
    const std::vector<Sample> subset(tiny_dataset().test.begin(),
                                     tiny_dataset().test.begin() + 10);
    const auto table = evaluate(subset, cfg, f.models());
    std::map<std::tuple<int, int, double, std::string>, double> pass_sim;
    for (const auto& r : table.records) {
        if (r.method == MethodId::kPassthrough) {
            pass_sim[{r.sample_id, r.trial, r.p, r.embedder}] = r.similarity;
        }
    }
    int checked = 0;
    for (const auto& r : table.records) {
        if (r.method == MethodId::kTokCode) {
            CHECK(r.similarity == pass_sim.at({r.sample_id, r.trial, r.p, r.embedder}));
            ++checked;
        }
    }
    CHECK(checked == 10 * 8 * 2 * 2);
}

TEST_CASE("evaluation is deterministic for a fixed seed") {
    const auto& f = eval_fixture();
    EvalConfig cfg = small_eval_config();
    cfg.rates = {0.4};
    cfg.trials = 4;
    const std::vector<Sample> subset(tiny_dataset().test.begin(),
                                     tiny_dataset().test.begin() + 8);
    const auto a = evaluate(subset, cfg, f.models());
    const auto b = evaluate(subset, cfg, f.models());
    REQUIRE(a.records.size() == b.records.size());
    for (size_t i = 0; i < a.records.size(); ++i) {
        CHECK(a.records[i].similarity == b.records[i].similarity);
    }
}

TEST_CASE("emit_report writes parseable, byte-stable tables") {
    namespace fs = std::filesystem;
    const auto& f = eval_fixture();
    EvalConfig cfg = small_eval_config();
    cfg.trials = 3;
    const std::vector<Sample> subset(tiny_dataset().test.begin(),
                                     tiny_dataset().test.begin() + 6);
    MetricsTable table = evaluate(subset, cfg, f.models());
    table.run_config = {{"note", "test"}};

    const std::string dir_a = "/tmp/tokcode_eval_a";
    const std::string dir_b = "/tmp/tokcode_eval_b";
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
    const auto written = emit_report(table, dir_a, true);
    emit_report(table, dir_b, true);

    // 4 methods x 4 rates x 2 embedders implemented + llm rows.
    const auto parsed = parse_metrics_csv(dir_a + "/metrics.csv");
    REQUIRE(parsed.size() == table.aggregates.size());
    CHECK(parsed.size() >= 12);
    for (size_t i = 0; i < parsed.size(); ++i) {
        CHECK(parsed[i].method == table.aggregates[i].method);
        CHECK(parsed[i].p == table.aggregates[i].p);
        CHECK(parsed[i].mean == table.aggregates[i].mean);
        CHECK(parsed[i].ci_lo == table.aggregates[i].ci_lo);
        CHECK(parsed[i].ci_hi == table.aggregates[i].ci_hi);
        CHECK(parsed[i].n == table.aggregates[i].n);
        CHECK(parsed[i].implemented == table.aggregates[i].implemented);
    }
    const auto recs = parse_records_csv(dir_a + "/records.csv");
    REQUIRE(recs.size() == table.records.size());
    for (size_t i = 0; i < recs.size(); ++i) {
        CHECK(recs[i].similarity == table.records[i].similarity);
        CHECK(recs[i].slot_recovery == table.records[i].slot_recovery);
    }

    CHECK(read_file(dir_a + "/metrics.csv") == read_file(dir_b + "/metrics.csv"));
    CHECK(read_file(dir_a + "/records.csv") == read_file(dir_b + "/records.csv"));
    CHECK(read_file(dir_a + "/gap_closure.csv") == read_file(dir_b + "/gap_closure.csv"));

    // The llm row is present but empty.
    bool llm_seen = false;
    for (const auto& a : parsed) {
        if (a.method == MethodId::kLlmPrediction) {
            llm_seen = true;
            CHECK_FALSE(a.implemented);
            CHECK(a.n == 0);
        }
    }
    CHECK(llm_seen);

    // Plots render from the records file alone.
    const auto plots = render_plots(dir_a);
    CHECK(plots.size() == 2);
    for (const auto& p : plots) {
        const std::string svg = read_file(p);
        CHECK(svg.find("<svg") != std::string::npos);
        CHECK(svg.find("tokcode") != std::string::npos);
    }
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
}

TEST_CASE("gap rows cover the configured methods") {
    const auto& f = eval_fixture();
    EvalConfig cfg = small_eval_config();
    cfg.rates = {0.4};
    cfg.trials = 4;
    const std::vector<Sample> subset(tiny_dataset().test.begin(),
                                     tiny_dataset().test.begin() + 8);
    const auto table = evaluate(subset, cfg, f.models());
    bool tokcode_seen = false;
    for (const auto& g : table.gaps) {
        if (g.method == MethodId::kTokCode && g.embedder == "sent_toy") {
            tokcode_seen = true;
        }
        if (g.method == MethodId::kPassthrough && g.closure.has_value()) {
            CHECK(*g.closure == doctest::Approx(0.0));
        }
        if (g.method == MethodId::kGreedyUpperBound && g.closure.has_value()) {
            CHECK(*g.closure == doctest::Approx(1.0));
        }
    }
    CHECK(tokcode_seen);
}
