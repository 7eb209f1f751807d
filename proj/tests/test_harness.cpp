#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "maskdiff/config.hpp"
#include "maskdiff/corpus.hpp"
#include "maskdiff/metrics.hpp"
#include "maskdiff/teacher.hpp"

using namespace maskdiff;

namespace {

ModelConfig tiny_model(int vocab, int len = 8) {
    ModelConfig cfg;
    cfg.vocab_size = vocab;
    cfg.max_len = len;
    cfg.dim = 16;
    cfg.blocks = 1;
    cfg.heads = 2;
    return cfg;
}

}  // namespace

TEST_CASE("uniform evaluator gives perplexity K-1") {
    const int kk = 9;
    const NoiseSchedule sched = NoiseSchedule::parse("linear");
    DenoiserModel eval(tiny_model(kk, 16), RngStream(100, 0));
    for (Parameter* p : eval.parameters())
        if (p->name == "out_w" || p->name == "out_b")
            for (auto& x : p->tensor.data()) x = 0.0;

    RngStream rng(101, 0);
    std::vector<TokenSequence> samples;
    for (int i = 0; i < 16; ++i) {
        TokenSequence x(16);
        for (int& tok : x) tok = static_cast<int>(rng.uniform() * (kk - 1));
        samples.push_back(x);
    }
    const double ppl = generative_perplexity(samples, eval, sched);
    CHECK(std::fabs(ppl - (kk - 1)) < 0.05 * (kk - 1));
}

TEST_CASE("trained scorer beats untrained scorer on held-out text") {
    std::string text = make_synthetic_corpus(30000, 17);
    Dataset ds = ingest_corpus_text(text, 16, 64, 0.1);
    ModelConfig mc = tiny_model(ds.vocab.size(), 16);
    mc.dim = 32;
    TeacherConfig tc;
    tc.total_steps = 250;
    tc.warmup_steps = 25;
    tc.batch_size = 8;
    tc.lr = 2e-3;
    tc.eval_interval = 250;
    tc.seed = 5;
    auto trained = train_teacher(tc, ds, mc);
    DenoiserModel untrained(mc, RngStream(555, 0));

    std::vector<TokenSequence> held_out(ds.valid.begin(),
                                        ds.valid.begin() + std::min<std::size_t>(8, ds.valid.size()));
    const NoiseSchedule sched = NoiseSchedule::parse("linear");
    const double ppl_trained = generative_perplexity(held_out, *trained, sched);
    const double ppl_untrained = generative_perplexity(held_out, untrained, sched);
    CHECK(ppl_trained < ppl_untrained);
}

TEST_CASE("token entropy") {
    Vocabulary v;
    v.chars = "ab";
    const int a = 0, b = 1;

    // single repeated token: zero entropy
    std::vector<TokenSequence> rep = {{a, a, a, a}};
    CHECK(token_entropy(rep) == 0.0);

    // "aabb": ln 2
    std::vector<TokenSequence> aabb = {{a, a, b, b}};
    CHECK(token_entropy(aabb) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // uniform usage of V tokens: ln V
    std::vector<TokenSequence> uni = {{0, 1, 2, 3, 4, 5}};
    CHECK(token_entropy(uni) == doctest::Approx(std::log(6.0)).epsilon(1e-12));

    // per-position mode: identical samples have zero predictive entropy
    std::vector<TokenSequence> same = {{a, b, a, b}, {a, b, a, b}};
    CHECK(token_entropy(same, EntropyMode::per_position) == 0.0);
    CHECK(token_entropy(same, EntropyMode::per_sample) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("evaluate grid: cell count and determinism") {
    const ModelConfig mc = tiny_model(6, 8);
    DenoiserModel student(mc, RngStream(102, 0));
    DenoiserModel evalm(mc, RngStream(103, 0));
    DiscriminatorModel disc(mc, RngStream(104, 0));
    const NoiseSchedule sched = NoiseSchedule::parse("linear");

    EvalConfig cfg;
    cfg.nfe_list = {1};
    cfg.num_samples = 4;
    cfg.ppl_grid = 8;
    cfg.sampler.h_max = 2.0;
    cfg.sampler.rerank_candidates = 2;

    const auto cells = evaluate(student, &disc, evalm, cfg, sched, 8);
    REQUIRE(cells.size() == 2);  // exactly one AS and one RGAS cell
    CHECK(cells[0].mode == "as");
    CHECK(cells[1].mode == "rgas");

    const auto cells2 = evaluate(student, &disc, evalm, cfg, sched, 8);
    for (std::size_t i = 0; i < cells.size(); ++i) {
        CHECK(cells[i].ppl == cells2[i].ppl);
        CHECK(cells[i].entropy == cells2[i].entropy);
    }
}

TEST_CASE("kv config parsing") {
    KvConfig kv = KvConfig::from_text(
        "# comment line\n"
        "alpha = 1.5\n"
        "name = hello world\n"
        "flag = true\n"
        "list = 4, 8, 16\n"
        "count = 42   # trailing comment\n");
    CHECK(kv.get_double("alpha", 0.0) == 1.5);
    CHECK(kv.get_string("name", "") == "hello world");
    CHECK(kv.get_bool("flag", false));
    CHECK(kv.get_int("count", 0) == 42);
    CHECK(kv.get_int_list("list", {}) == std::vector<int>{4, 8, 16});
    CHECK(kv.get_int("missing", 7) == 7);
    kv.reject_unknown_keys();

    KvConfig kv2 = KvConfig::from_text("known = 1\nmystery_key = 2\n");
    (void)kv2.get_int("known", 0);
    CHECK_THROWS_WITH_AS(kv2.reject_unknown_keys(),
                         doctest::Contains("mystery_key"), std::runtime_error);

    CHECK_THROWS(KvConfig::from_text("a = 1\na = 2\n"));
    CHECK_THROWS(KvConfig::from_text("not a pair\n"));

    // canonical form is sorted and stable
    KvConfig kv3 = KvConfig::from_text("b = 2\na = 1\n");
    CHECK(kv3.canonical() == "a=1\nb=2\n");
}

TEST_CASE("run config assembly from key families") {
    KvConfig kv = KvConfig::from_text(
        "seed = 9\n"
        "model_dim = 32\n"
        "teacher_total_steps = 123\n"
        "distill_group_size = 4\n"
        "distill_pi_family = uniform\n"
        "sampler_h_max = 12.5\n"
        "eval_nfe_list = 2, 4\n");
    RunConfig rc = RunConfig::from_kv(kv);
    CHECK(rc.seed == 9);
    CHECK(rc.model.dim == 32);
    CHECK(rc.teacher.total_steps == 123);
    CHECK(rc.teacher.seed == 9);
    CHECK(rc.distill.group_size == 4);
    CHECK(rc.distill.pi_family == "uniform");
    CHECK(rc.sampler.h_max == 12.5);
    CHECK(rc.eval.nfe_list == std::vector<int>{2, 4});
    CHECK(rc.eval.sampler.h_max == 12.5);

    KvConfig bad = KvConfig::from_text("model_dmi = 32\n");  // typo
    CHECK_THROWS(RunConfig::from_kv(bad));
}

TEST_CASE("metrics writer emits schema-valid json lines with monotone wallclock") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "maskdiff_metrics_test";
    fs::create_directories(dir);
    const std::string path = (dir / "metrics.jsonl").string();
    fs::remove(path);
    {
        MetricsWriter w(path, "run42", "train");
        for (int i = 0; i < 5; ++i) w.write(i, "loss", 1.0 / (i + 1));
    }
    std::ifstream in(path);
    std::string line;
    double prev_wallclock = -1.0;
    int count = 0;
    while (std::getline(in, line)) {
        const auto rec = nlohmann::json::parse(line);
        CHECK(rec.at("run_id").is_string());
        CHECK(rec.at("phase").is_string());
        CHECK(rec.at("step").is_number_integer());
        CHECK(rec.at("metric").is_string());
        CHECK(rec.at("value").is_number());
        CHECK(rec.at("wallclock").is_number());
        const double wc = rec.at("wallclock").get<double>();
        CHECK(wc >= prev_wallclock);
        prev_wallclock = wc;
        ++count;
    }
    CHECK(count == 5);
    fs::remove_all(dir);
}

TEST_CASE("manifest generation") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "maskdiff_manifest_test";
    fs::remove_all(dir);
    write_manifest(dir.string(), "pretrain-teacher", "a=1\nb=2\n", 77);
    std::ifstream in(dir / "manifest.json");
    REQUIRE(in.good());
    const auto m = nlohmann::json::parse(in);
    CHECK(m.at("command") == "pretrain-teacher");
    CHECK(m.at("seed") == 77);
    CHECK(m.at("config_hash") == fnv1a_hash("a=1\nb=2\n"));
    CHECK(m.at("code_version").is_string());
    fs::remove_all(dir);
}
