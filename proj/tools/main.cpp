// Command-line surface: corpus generation, teacher pretraining, adversarial
// distillation, sampling, evaluation, oracle self-checks and checkpoint
// inspection. Every run writes a manifest next to its outputs; reruns with
// the same manifest reproduce all logged metrics bitwise.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <json.hpp>

#include "maskdiff/checkpoint.hpp"
#include "maskdiff/config.hpp"
#include "maskdiff/corpus.hpp"
#include "maskdiff/distill.hpp"
#include "maskdiff/metrics.hpp"
#include "maskdiff/oracle.hpp"
#include "maskdiff/sampler.hpp"
#include "maskdiff/teacher.hpp"

namespace fs = std::filesystem;
using namespace maskdiff;

namespace {

struct CommonOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
};

RunConfig load_run_config(const CommonOpts& opts, std::string* canonical) {
    KvConfig kv = opts.config_path.empty() ? KvConfig()
                                           : KvConfig::from_file(opts.config_path);
    if (canonical) *canonical = kv.canonical();
    RunConfig rc = RunConfig::from_kv(kv);
    if (opts.seed) {
        rc.seed = *opts.seed;
        rc.teacher.seed = *opts.seed;
        rc.distill.seed = *opts.seed;
        rc.eval.seed = *opts.seed;
    }
    return rc;
}

std::string render_sequence(const Vocabulary& vocab, const TokenSequence& tokens) {
    std::string out;
    for (int tok : tokens) out += vocab.render(tok);
    return out;
}

int run_oracle_check(const std::string& which, std::uint64_t seed) {
    const NoiseSchedule sched = NoiseSchedule::parse("linear");
    const OmegaFn one = [](double) { return 1.0; };
    bool pass = true;

    if (which == "marginal") {
        TabularDenoiser model(3, 2, RngStream(seed, 0), 0.7);
        StateDistribution dist = exact_generator_marginal(model, 2, sched, 2);
        RngStream rng(seed, 1);
        const int n = 1000000;
        std::vector<int> counts(dist.p.size(), 0);
        for (int i = 0; i < n; ++i)
            ++counts[dist.index_of(ancestral_sample(model, 2, sched, 2, rng))];
        double worst_sigma = 0.0;
        for (std::size_t s = 0; s < dist.p.size(); ++s) {
            const double p = dist.p[s];
            const double freq = static_cast<double>(counts[s]) / n;
            const double sigma = std::sqrt(std::max(p * (1.0 - p), 1e-12) / n);
            worst_sigma = std::max(worst_sigma, std::fabs(freq - p) / sigma);
        }
        pass = worst_sigma < 3.5 && std::fabs(dist.total() - 1.0) < 1e-12;
        std::cout << (pass ? "PASS" : "FAIL") << " marginal: worst |freq-p|/sigma = "
                  << worst_sigma << " over " << dist.p.size() << " states, mass deviation "
                  << std::fabs(dist.total() - 1.0) << "\n";
    } else if (which == "ikl") {
        TabularDenoiser teacher(3, 1, RngStream(seed, 0), 0.8);
        TabularDenoiser student(3, 1, RngStream(seed + 1, 0), 0.8);
        const double ikl = exact_ikl(student, teacher, sched, one, 2, 1);
        auto same = teacher.clone();
        const double zero = exact_ikl(*same, teacher, sched, one, 2, 1);
        pass = ikl >= 0.0 && std::fabs(zero) < 1e-14;
        std::cout << (pass ? "PASS" : "FAIL") << " ikl: value " << ikl
                  << " (>= 0), self-distance " << zero << " (〜 0)\n";
    } else if (which == "discriminator") {
        TabularDenoiser teacher(3, 2, RngStream(seed, 0), 0.7);
        TabularDenoiser student(3, 2, RngStream(seed + 1, 0), 0.7);
        const auto gs = exact_generator_marginal(student, 2, sched, 2);
        const auto gt = exact_generator_marginal(teacher, 2, sched, 2);
        const auto cs = exact_corrupted_marginal(gs, 0.5, sched);
        const auto ct = exact_corrupted_marginal(gt, 0.5, sched);
        const auto d = exact_optimal_discriminator(cs, ct);
        const auto d_swapped = exact_optimal_discriminator(ct, cs);
        double worst = 0.0;
        for (std::size_t s = 0; s < d.size(); ++s) {
            if (std::isnan(d[s])) continue;
            const double lo = std::log(d[s] / (1.0 - d[s]));
            const double lo_sw = std::log(d_swapped[s] / (1.0 - d_swapped[s]));
            worst = std::max(worst, std::fabs(lo + lo_sw));
            const double ratio = cs.p[s] / ct.p[s];
            worst = std::max(worst, std::fabs(std::exp(lo) - ratio));
        }
        pass = worst < 1e-12;
        std::cout << (pass ? "PASS" : "FAIL")
                  << " discriminator: max |antisymmetry / ratio defect| = " << worst << "\n";
    } else if (which == "gradient") {
        TabularDenoiser teacher(3, 2, RngStream(seed, 0), 0.6);
        auto student = teacher.clone();
        const auto g0 = exact_student_gradient(*student, teacher, sched, one, 2);
        double norm = 0.0;
        for (double g : g0) norm += g * g;
        norm = std::sqrt(norm);
        pass = norm < 1e-8;
        std::cout << (pass ? "PASS" : "FAIL")
                  << " gradient: |grad| at student = teacher is " << norm << " (< 1e-8)\n";
    } else {
        std::cerr << "unknown oracle case: " << which << "\n";
        return 2;
    }
    return pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"masked diffusion language model distillation toolkit"};
    app.require_subcommand(1);

    CommonOpts common;

    // gen-corpus
    auto* gen = app.add_subcommand("gen-corpus", "write a synthetic character-level corpus");
    std::string gen_out = "corpus.txt";
    std::uint64_t gen_seed = 1;
    std::size_t gen_bytes = 1 << 20;
    gen->add_option("--out", gen_out, "output text file");
    gen->add_option("--bytes", gen_bytes, "approximate size in bytes");
    gen->add_option("--seed", gen_seed, "generator seed");

    // pretrain-teacher
    auto* pre = app.add_subcommand("pretrain-teacher", "train the many-step denoiser");
    std::string pre_corpus, pre_out = "teacher.ckpt";
    pre->add_option("--config", common.config_path, "flat key = value config file");
    pre->add_option("--corpus", pre_corpus, "plain-text training corpus")->required();
    pre->add_option("--out", pre_out, "checkpoint path");
    std::uint64_t seed_flag = 0;
    bool seed_set = false;
    pre->add_option("--seed", seed_flag, "override the config seed")
        ->each([&](const std::string&) { seed_set = true; });

    // distill
    auto* dis = app.add_subcommand("distill", "distill the teacher into a few-step student");
    std::string dis_teacher, dis_out = "distill_out";
    dis->add_option("--config", common.config_path, "flat key = value config file");
    dis->add_option("--teacher", dis_teacher, "teacher checkpoint")->required();
    dis->add_option("--out", dis_out, "output directory");
    dis->add_option("--seed", seed_flag, "override the config seed")
        ->each([&](const std::string&) { seed_set = true; });

    // sample
    auto* smp = app.add_subcommand("sample", "generate text");
    std::string smp_student, smp_disc, smp_out = "samples.txt", smp_mode = "as";
    int smp_nfe = 8, smp_count = 16;
    bool smp_trace = false;
    std::uint64_t smp_seed = 7;
    smp->add_option("--student", smp_student, "student (or teacher) checkpoint")->required();
    smp->add_option("--disc", smp_disc, "discriminator checkpoint (needed for rgas)");
    smp->add_option("--nfe", smp_nfe, "denoiser evaluations per sample");
    smp->add_option("--mode", smp_mode, "as | rgas")->check(CLI::IsMember({"as", "rgas"}));
    smp->add_option("--num-samples", smp_count, "number of samples");
    smp->add_option("--out", smp_out, "output text file, one sample per line");
    smp->add_flag("--trace", smp_trace, "also write a per-step JSONL trace");
    smp->add_option("--seed", smp_seed, "sampling seed");
    smp->add_option("--config", common.config_path, "config for sampler settings");

    // eval
    auto* evl = app.add_subcommand("eval", "PPL/entropy over the NFE x mode grid");
    std::string evl_student, evl_disc, evl_evaluator, evl_out = "eval_out";
    evl->add_option("--config", common.config_path, "flat key = value config file");
    evl->add_option("--student", evl_student, "student checkpoint")->required();
    evl->add_option("--disc", evl_disc, "discriminator checkpoint");
    evl->add_option("--evaluator", evl_evaluator, "frozen scorer checkpoint")->required();
    evl->add_option("--out", evl_out, "output directory");
    evl->add_option("--seed", seed_flag, "override the config seed")
        ->each([&](const std::string&) { seed_set = true; });

    // oracle-check
    auto* orc = app.add_subcommand("oracle-check", "exact-enumeration self checks");
    std::string orc_case = "marginal";
    std::uint64_t orc_seed = 1;
    orc->add_option("--case", orc_case, "marginal | ikl | discriminator | gradient")
        ->check(CLI::IsMember({"marginal", "ikl", "discriminator", "gradient"}));
    orc->add_option("--seed", orc_seed, "instance seed");

    // inspect-ckpt
    auto* ins = app.add_subcommand("inspect-ckpt", "print checkpoint contents");
    std::string ins_path;
    ins->add_option("path", ins_path, "checkpoint file")->required();

    CLI11_PARSE(app, argc, argv);
    if (seed_set) common.seed = seed_flag;

    try {
        if (gen->parsed()) {
            const std::string text = make_synthetic_corpus(gen_bytes, gen_seed);
            std::ofstream out(gen_out, std::ios::binary);
            if (!out) throw std::runtime_error("cannot open " + gen_out);
            out << text;
            std::cout << "wrote " << text.size() << " bytes to " << gen_out << "\n";
            return 0;
        }

        if (pre->parsed()) {
            std::string canonical;
            RunConfig rc = load_run_config(common, &canonical);
            Dataset data = ingest_corpus(pre_corpus, rc.model.max_len, rc.vocab_cap);
            rc.model.vocab_size = data.vocab.size();
            const fs::path out_dir = fs::absolute(pre_out).parent_path();
            fs::create_directories(out_dir);
            write_manifest(out_dir.string(), "pretrain-teacher", canonical, rc.teacher.seed);
            MetricsWriter metrics(pre_out + ".metrics.jsonl",
                                  "seed" + std::to_string(rc.teacher.seed), "pretrain");
            if (data.unk_replacements > 0)
                std::cout << "note: " << data.unk_replacements
                          << " characters fell outside the vocab cap (mapped to UNK)\n";
            auto model = train_teacher(
                rc.teacher, data, rc.model,
                [&](std::uint64_t step, const std::string& metric, double value) {
                    metrics.write(static_cast<std::int64_t>(step), metric, value);
                    std::cout << "step " << step << " " << metric << " " << value << "\n";
                });
            save_denoiser(pre_out, *model, data.vocab);
            std::cout << "saved teacher to " << pre_out << "\n";
            return 0;
        }

        if (dis->parsed()) {
            std::string canonical;
            RunConfig rc = load_run_config(common, &canonical);
            Vocabulary vocab;
            auto teacher = load_denoiser(dis_teacher, &vocab);
            fs::create_directories(dis_out);
            write_manifest(dis_out, "distill", canonical, rc.distill.seed);
            MetricsWriter metrics((fs::path(dis_out) / "metrics.jsonl").string(),
                                  "seed" + std::to_string(rc.distill.seed), "distill");
            DistillTrainer trainer(rc.distill, std::move(teacher), vocab);
            try {
                trainer.run([&](std::uint64_t iter, const std::string& metric, double value) {
                    metrics.write(static_cast<std::int64_t>(iter), metric, value);
                    if (metric == "disc_loss")
                        std::cout << "iter " << iter << " disc_loss " << value << "\n";
                });
            } catch (const DistillAbort& abort) {
                std::ofstream snap(fs::path(dis_out) / "abort_snapshot.json");
                snap << abort.snapshot << "\n";
                save_denoiser((fs::path(dis_out) / "student.partial.ckpt").string(),
                              trainer.student(), vocab);
                save_discriminator((fs::path(dis_out) / "disc.partial.ckpt").string(),
                                   trainer.discriminator(), vocab);
                std::cerr << "aborted: " << abort.what()
                          << " (snapshot + partial checkpoints written)\n";
                return 1;
            }
            save_denoiser((fs::path(dis_out) / "student.ckpt").string(), trainer.student(),
                          vocab);
            save_discriminator((fs::path(dis_out) / "disc.ckpt").string(),
                               trainer.discriminator(), vocab);
            std::cout << "saved student and discriminator under " << dis_out << "\n";
            return 0;
        }

        if (smp->parsed()) {
            std::string canonical;
            RunConfig rc = load_run_config(common, &canonical);
            Vocabulary vocab;
            auto student = load_denoiser(smp_student, &vocab);
            std::unique_ptr<DiscriminatorModel> disc;
            if (!smp_disc.empty()) disc = load_discriminator(smp_disc);
            if (smp_mode == "rgas" && !disc)
                throw std::runtime_error("rgas sampling needs --disc");
            const NoiseSchedule sched = NoiseSchedule::parse(rc.distill.schedule_kind);
            const fs::path out_dir = fs::absolute(smp_out).parent_path();
            fs::create_directories(out_dir);
            write_manifest(out_dir.string(), "sample", canonical, smp_seed);
            std::ofstream out(smp_out);
            if (!out) throw std::runtime_error("cannot open " + smp_out);
            std::ofstream trace_out;
            if (smp_trace) {
                trace_out.open(smp_out + ".trace.jsonl");
                if (!trace_out) throw std::runtime_error("cannot open trace file");
            }
            RngStream base(smp_seed, 0x5A3E);
            const int length = student->config().max_len;
            for (int i = 0; i < smp_count; ++i) {
                RngStream rng = base.split("sample", static_cast<std::uint64_t>(i));
                TokenSequence tokens;
                if (smp_mode == "as") {
                    tokens = ancestral_sample(*student, smp_nfe, sched, length, rng);
                } else {
                    SamplerConfig sc = rc.sampler;
                    sc.nfe = smp_nfe;
                    RgasResult res = rgas_sample(*student, *disc, sc, sched, length, rng);
                    tokens = res.tokens;
                    if (smp_trace) {
                        for (const RgasStepTrace& st : res.trace) {
                            nlohmann::json rec = {
                                {"sample", i},
                                {"step", st.step},
                                {"t_from", st.t_from},
                                {"t_to", st.t_to},
                                {"h", st.h},
                                {"rerank_phase", st.rerank_phase},
                                {"masked_before", st.masked_before},
                                {"masked_after", st.masked_after},
                                {"selected", st.selected_candidate},
                                {"state", render_sequence(vocab, st.state_after)},
                            };
                            trace_out << rec.dump() << "\n";
                        }
                    }
                }
                out << render_sequence(vocab, tokens) << "\n";
            }
            std::cout << "wrote " << smp_count << " samples to " << smp_out << "\n";
            return 0;
        }

        if (evl->parsed()) {
            std::string canonical;
            RunConfig rc = load_run_config(common, &canonical);
            Vocabulary vocab;
            auto student = load_denoiser(evl_student, &vocab);
            auto evaluator = load_denoiser(evl_evaluator);
            std::unique_ptr<DiscriminatorModel> disc;
            if (!evl_disc.empty()) disc = load_discriminator(evl_disc);
            const NoiseSchedule sched = NoiseSchedule::parse(rc.distill.schedule_kind);
            fs::create_directories(evl_out);
            write_manifest(evl_out, "eval", canonical, rc.eval.seed);
            MetricsWriter metrics((fs::path(evl_out) / "metrics.jsonl").string(),
                                  "seed" + std::to_string(rc.eval.seed), "eval");
            const auto cells = evaluate(*student, disc.get(), *evaluator, rc.eval, sched,
                                        student->config().max_len, &metrics);
            for (const EvalCell& c : cells)
                std::cout << "nfe " << c.nfe << " " << c.mode << ": ppl " << c.ppl
                          << " entropy " << c.entropy << "\n";
            return 0;
        }

        if (orc->parsed()) return run_oracle_check(orc_case, orc_seed);

        if (ins->parsed()) {
            const CheckpointInfo info = inspect_checkpoint(ins_path);
            std::cout << "kind: " << info.kind << "\nconfig: " << info.config.describe()
                      << "\nvocab size: " << info.vocab_size
                      << "\ntotal parameters: " << info.total_params << "\n";
            for (const std::string& s : info.tensor_summaries) std::cout << "  " << s << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
