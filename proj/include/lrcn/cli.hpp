#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lrcn/checkpoint.hpp"
#include "lrcn/config.hpp"
#include "lrcn/data.hpp"
#include "lrcn/decoding.hpp"
#include "lrcn/evaluation.hpp"
#include "lrcn/fixtures.hpp"
#include "lrcn/model.hpp"
#include "lrcn/training.hpp"

namespace lrcn {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3 };

namespace cli {

/// Examples plus whatever the task needs beyond them.
struct LoadedData {
    std::vector<Example> examples;
    Vocabulary vocab;
    CaptionData captions;  // caption / perstep_decode only
};

inline LoadedData load_task_data(Task task, const std::filesystem::path& dir) {
    LoadedData d;
    switch (task) {
        case Task::classify: d.examples = load_classify_data(dir); break;
        case Task::caption:
        case Task::perstep_decode:
            d.captions = load_caption_data(dir);
            d.vocab = d.captions.vocab;
            d.examples = d.captions.examples();
            break;
        case Task::encode_decode: {
            auto s = load_seq2seq_data(dir);
            d.vocab = std::move(s.vocab);
            d.examples = std::move(s.examples);
            break;
        }
        case Task::tag: throw DomainError("the tag task has no on-disk format");
    }
    if (d.examples.empty()) throw DataError(dir.string() + ": dataset is empty");
    return d;
}

/// Fills data-dependent fields the config leaves open and reshapes inputs to the extractor shape.
inline ModelSpec complete_spec(ModelSpec s, LoadedData& d) {
    const std::size_t dim = d.examples.front().inputs.front().size();
    if (s.extractor.input_shape.empty()) s.extractor.input_shape = {dim};
    if (s.extractor.input_size() != dim)
        throw DataError("inputs have " + std::to_string(dim) + " values but extractor.input_shape is " +
                        shape_str(s.extractor.input_shape));
    for (auto& ex : d.examples)
        for (auto& x : ex.inputs) {
            if (x.size() != dim) throw DataError("inputs have inconsistent dimensions");
            x = x.reshaped(s.extractor.input_shape);
        }
    if (s.uses_tokens()) s.vocab = d.vocab;
    if (s.task == Task::classify && s.num_classes == 0) {
        std::size_t mx = 0;
        for (const auto& ex : d.examples) mx = std::max(mx, ex.labels.at(0));
        s.num_classes = mx + 1;
    }
    if (s.task == Task::perstep_decode && s.crf_blocks.empty()) s.crf_blocks = {dim};
    s.validate();
    return s;
}

inline std::vector<std::size_t> strip_eos(const Vocabulary& v, const std::vector<std::size_t>& ids) {
    std::vector<std::size_t> out;
    for (std::size_t id : ids) {
        if (id == v.eos) break;
        out.push_back(id);
    }
    return out;
}

inline std::string join_words(const std::vector<std::string>& words) {
    std::string s;
    for (std::size_t i = 0; i < words.size(); ++i) s += (i ? " " : "") + words[i];
    return s;
}

struct TrainArgs {
    std::string task, config, data, out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    std::optional<double> learning_rate;
    std::vector<std::string> overrides;
};

inline int run_train(const TrainArgs& a, std::ostream& out) {
    Config c = a.config.empty() ? Config{} : Config::load(a.config);
    for (const auto& kv : a.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0) throw DataError("--set expects key=value, got '" + kv + "'");
        c.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!a.task.empty()) c.set("task", a.task);
    if (a.seed) c.set("seed", std::to_string(*a.seed));
    if (a.epochs) c.set("epochs", std::to_string(*a.epochs));
    if (a.learning_rate) c.set("learning_rate", format_double(*a.learning_rate));
    if (!c.has("task")) throw DataError("no task given (--task or task= in the config)");
    c.reject_unknown(known_config_keys());

    ModelSpec spec = spec_from_config(c);
    const TrainConfig tc = train_config_from(c);
    tc.validate();
    LoadedData d = load_task_data(spec.task, a.data);
    spec = complete_spec(spec, d);

    Rng rng(tc.seed);
    Checkpoint ck{Model::initialized(spec, rng), {}, 0};
    for (std::size_t e = 1; e <= tc.epochs; ++e) {
        const auto t0 = std::chrono::steady_clock::now();
        const LossReport r = train_epoch(ck.model, d.examples, tc, rng);
        const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
        ck.step += (d.examples.size() + tc.batch_size - 1) / tc.batch_size;
        out << "epoch " << e << " loss " << std::setprecision(6) << r.mean_nll << " time "
            << std::fixed << std::setprecision(3) << dt.count() << "s" << std::defaultfloat << '\n';
    }
    ck.rng_state = rng.state();
    save_checkpoint(a.out, ck);
    return kExitOk;
}

struct EvalArgs {
    std::string metric, checkpoint, data;
    std::size_t width = 1;
    std::size_t max_len = 20;
    std::size_t max_n = 4;
};

inline Hypothesis best_decode(const Model& m, const std::vector<Tensor>& inputs, std::size_t width,
                              std::size_t max_len) {
    DecodeSource src(m, inputs);
    return width == 1 ? greedy_decode(src, max_len) : beam_search(src, width, max_len).front();
}

inline int run_eval(const EvalArgs& a, std::ostream& out) {
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const Model& m = ck.model;
    LoadedData d = load_task_data(m.spec.task, a.data);
    if (m.spec.uses_tokens()) {
        // Re-encode with the checkpoint's vocabulary so ids agree with the model.
        const Vocabulary data_vocab = d.vocab;
        d.vocab = m.spec.vocab;
        if (m.spec.task == Task::encode_decode) {
            for (auto& ex : d.examples)
                ex.labels = encode_caption(m.spec.vocab, decode_caption(data_vocab, ex.labels));
        } else {
            d.captions.vocab = m.spec.vocab;
            d.examples = d.captions.examples();
        }
    }
    for (auto& ex : d.examples)
        for (auto& x : ex.inputs) x = x.reshaped(m.spec.extractor.input_shape);

    if (a.metric == "accuracy") {
        std::size_t hits = 0;
        for (const auto& ex : d.examples) {
            if (m.spec.task == Task::classify) {
                hits += argmax(classify_sequence(m, ex.inputs)) == ex.labels.at(0);
            } else {
                const Hypothesis h = best_decode(m, ex.inputs, a.width, a.max_len);
                hits += h.tokens == ex.labels;
            }
        }
        write_metric(out, "accuracy", static_cast<double>(hits) / static_cast<double>(d.examples.size()));
        return kExitOk;
    }
    if (!m.spec.uses_tokens()) throw DomainError(a.metric + " needs a token-emitting model");
    if (a.metric == "bleu") {
        std::vector<std::vector<std::size_t>> cands;
        std::vector<std::vector<std::vector<std::size_t>>> refs;
        if (m.spec.task == Task::encode_decode) {
            for (const auto& ex : d.examples) {
                cands.push_back(strip_eos(m.spec.vocab, best_decode(m, ex.inputs, a.width, a.max_len).tokens));
                refs.push_back({strip_eos(m.spec.vocab, ex.labels)});
            }
        } else {
            // One candidate per distinct image; all of its paired captions are references.
            std::map<std::size_t, std::vector<std::vector<std::size_t>>> by_row;
            for (const auto& p : d.captions.pairs)
                by_row[p.feature_row].push_back(
                    strip_eos(m.spec.vocab, encode_caption(m.spec.vocab, d.captions.captions.at(p.caption_line))));
            for (const auto& [row, r] : by_row) {
                const Tensor x = d.captions.features.at(row).reshaped(m.spec.extractor.input_shape);
                cands.push_back(strip_eos(m.spec.vocab, best_decode(m, {x}, a.width, a.max_len).tokens));
                refs.push_back(r);
            }
        }
        for (auto& c : cands)
            if (c.empty()) c.push_back(m.spec.vocab.eos);  // empty output scores zero
        write_metric(out, "bleu" + std::to_string(a.max_n), corpus_bleu(cands, refs, a.max_n));
        return kExitOk;
    }
    if (a.metric == "retrieval") {
        if (m.spec.task == Task::encode_decode) throw DomainError("retrieval needs a caption dataset");
        std::vector<std::size_t> rows;
        for (const auto& p : d.captions.pairs)
            if (std::find(rows.begin(), rows.end(), p.feature_row) == rows.end()) rows.push_back(p.feature_row);
        std::vector<Tensor> images;
        for (std::size_t r : rows) images.push_back(d.captions.features.at(r).reshaped(m.spec.extractor.input_shape));
        std::vector<std::vector<std::size_t>> caps;
        for (const auto& c : d.captions.captions) caps.push_back(encode_caption(m.spec.vocab, c));
        ScoreMatrix s = score_pairs(m, images, caps);
        s.correct.resize(rows.size());
        for (std::size_t q = 0; q < rows.size(); ++q) {
            std::set<std::vector<std::string>> texts;
            for (const auto& p : d.captions.pairs)
                if (p.feature_row == rows[q]) texts.insert(d.captions.captions.at(p.caption_line));
            for (std::size_t j = 0; j < d.captions.captions.size(); ++j)
                if (texts.count(d.captions.captions[j])) s.correct[q].push_back(j);
        }
        const RetrievalReport r = retrieval_metrics(s, {1, 5, 10});
        for (const auto& [k, v] : r.recall_at) write_metric(out, "R@" + std::to_string(k), v);
        write_metric(out, "medr", r.median_rank);
        return kExitOk;
    }
    throw DomainError("unknown metric '" + a.metric + "'");
}

struct GenerateArgs {
    std::string strategy = "beam", checkpoint, input;
    std::size_t width = 1, n = 1, max_len = 20;
    double tau = 1.0;
    std::uint64_t seed = 0;
};

inline int run_generate(const GenerateArgs& a, std::ostream& out) {
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const Model& m = ck.model;
    if (!m.spec.uses_tokens()) throw DomainError("generate needs a token-emitting model");
    std::vector<Tensor> rows = read_features(a.input);
    for (auto& x : rows) x = x.reshaped(m.spec.extractor.input_shape);
    std::vector<std::vector<Tensor>> jobs;
    if (m.spec.task == Task::encode_decode)
        jobs.push_back(rows);
    else
        for (auto& x : rows) jobs.push_back({x});
    DecodeConfig cfg;
    cfg.strategy = a.strategy == "sample" ? DecodeConfig::Strategy::sample : DecodeConfig::Strategy::beam;
    cfg.width = a.strategy == "sample" ? a.n : a.width;
    cfg.tau = a.tau;
    cfg.max_len = a.max_len;
    cfg.seed = a.seed;
    for (const auto& job : jobs) {
        const Hypothesis h = decode(DecodeSource(m, job), cfg);
        out << join_words(decode_caption(m.spec.vocab, h.tokens)) << '\n';
    }
    return kExitOk;
}

struct GradcheckArgs {
    std::string task = "all", variant = "all";
    std::uint64_t seed = 1;
    double tol = 1e-4;
};

inline int run_gradcheck(const GradcheckArgs& a, std::ostream& out) {
    std::vector<std::string> names;
    for (const auto& n : fixture_names()) {
        const bool is_caption = n.rfind("caption_", 0) == 0;
        const std::string task = is_caption ? "caption" : n;
        if (a.task != "all" && a.task != task) continue;
        if (is_caption && a.variant != "all" && n != "caption_" + a.variant) continue;
        names.push_back(n);
    }
    if (names.empty()) throw DomainError("no topology matches --task " + a.task + " --variant " + a.variant);
    bool ok = true;
    for (const auto& n : names) {
        const Fixture f = make_fixture(n, a.seed);
        const GradCheckReport r = gradient_check(f.model, f.batch, 1e-5, a.tol, 1e-7);
        for (const auto& b : r.blocks)
            out << n << ' ' << b.name << " max_abs " << std::setprecision(3) << b.max_abs_err << " max_rel "
                << b.max_rel_err << (b.passed ? " ok" : " FAIL") << '\n';
        ok = ok && r.passed;
    }
    out << (ok ? "gradcheck passed" : "gradcheck FAILED") << '\n';
    return ok ? kExitOk : kExitNumeric;
}

struct SynthArgs {
    std::string task, out;
    std::uint64_t seed = 0;
    std::size_t count = 0;
    std::size_t vocab = 6, length = 3;
    double noise = 0.0;
};

inline int run_synth(const SynthArgs& a, std::ostream& out) {
    if (a.task == "copy") {
        save_seq2seq_data(a.out, gen_copy_task(a.seed, a.vocab, a.length, a.count));
    } else if (a.task == "caption") {
        const ToyCaptionDataset t = gen_toy_captioning(a.seed, a.count, a.noise);
        CaptionData d;
        d.vocab = t.vocab;
        for (std::size_t i = 0; i < t.examples.size(); ++i) {
            d.features.push_back(t.examples[i].inputs[0]);
            d.captions.push_back(decode_caption(t.vocab, t.examples[i].labels));
            d.pairs.push_back({i, i});
        }
        save_caption_data(a.out, d);
    } else if (a.task == "order") {
        save_classify_data(a.out, gen_order_task(a.seed, a.count));
    } else {
        throw DomainError("unknown synth task '" + a.task + "'");
    }
    out << "wrote " << a.count << " " << a.task << " examples to " << a.out << '\n';
    return kExitOk;
}

}  // namespace cli

/// Command-line entry point. Exit codes: 0 ok, 1 usage, 2 data, 3 numeric failure.
inline int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Recurrent sequence models over visual features", "lrcn"};
    app.require_subcommand(1);

    cli::TrainArgs train;
    auto* t = app.add_subcommand("train", "Train a model and write a checkpoint");
    t->add_option("--task", train.task, "classify|caption|encode_decode|perstep_decode");
    t->add_option("--config", train.config, "key=value config file")->check(CLI::ExistingFile);
    t->add_option("--data", train.data, "dataset directory")->required();
    t->add_option("--out", train.out, "checkpoint path")->required();
    t->add_option("--seed", train.seed);
    t->add_option("--epochs", train.epochs);
    t->add_option("--lr", train.learning_rate);
    t->add_option("--set", train.overrides, "config override key=value (repeatable)");

    cli::EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Score a checkpoint on a dataset");
    e->add_option("--metric", ev.metric)->required()->check(CLI::IsMember({"bleu", "retrieval", "accuracy"}));
    e->add_option("--checkpoint", ev.checkpoint)->required();
    e->add_option("--data", ev.data)->required();
    e->add_option("--width", ev.width, "beam width for decoding");
    e->add_option("--max-len", ev.max_len);
    e->add_option("--max-n", ev.max_n, "largest BLEU n-gram order")->check(CLI::PositiveNumber);

    cli::GenerateArgs gen;
    auto* g = app.add_subcommand("generate", "Decode token sequences from a feature file");
    g->add_option("--strategy", gen.strategy)->check(CLI::IsMember({"beam", "sample"}));
    g->add_option("--width", gen.width);
    g->add_option("--n", gen.n, "samples drawn");
    g->add_option("--tau", gen.tau, "logit scale");
    g->add_option("--max-len", gen.max_len);
    g->add_option("--seed", gen.seed);
    g->add_option("--checkpoint", gen.checkpoint)->required();
    g->add_option("--input", gen.input, "feature file")->required();

    cli::GradcheckArgs gc;
    auto* c = app.add_subcommand("gradcheck", "Compare analytic gradients with finite differences");
    c->add_option("--task", gc.task)->check(
        CLI::IsMember({"all", "classify", "caption", "encode_decode", "perstep_decode"}));
    c->add_option("--variant", gc.variant, "caption variant")->check(CLI::IsMember({"all", "1u", "2u", "2f"}));
    c->add_option("--seed", gc.seed);
    c->add_option("--tol", gc.tol);

    cli::SynthArgs sy;
    auto* s = app.add_subcommand("synth", "Write a synthetic dataset");
    s->add_option("--task", sy.task)->required()->check(CLI::IsMember({"copy", "caption", "order"}));
    s->add_option("--seed", sy.seed);
    s->add_option("--count", sy.count)->required();
    s->add_option("--out", sy.out)->required();
    s->add_option("--vocab", sy.vocab, "copy: symbol count");
    s->add_option("--length", sy.length, "copy: sequence length");
    s->add_option("--noise", sy.noise, "caption: feature noise");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& ex) {
        err << "error: " << ex.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    try {
        if (*t) return cli::run_train(train, out);
        if (*e) return cli::run_eval(ev, out);
        if (*g) return cli::run_generate(gen, out);
        if (*c) return cli::run_gradcheck(gc, out);
        return cli::run_synth(sy, out);
    } catch (const NumericError& ex) {
        err << "numeric failure: " << ex.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << '\n';
        return kExitData;
    }
}

}  // namespace lrcn
