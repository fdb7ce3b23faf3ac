// Command-line front end: training, analysis, benchmarks and the HTTP server.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cohere/coherence.hpp"
#include "cohere/corpus.hpp"
#include "cohere/embeddings.hpp"
#include "cohere/errors.hpp"
#include "cohere/eval.hpp"
#include "cohere/insights.hpp"
#include "cohere/model_io.hpp"
#include "cohere/position_model.hpp"
#include "cohere/service.hpp"
#include "cohere/synthetic.hpp"

// After Eigen: resolv.h defines _res.
#include <httplib.h>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cohere;

namespace {

struct CorpusArgs {
  std::string path;
  std::string format = "jsonl";
};

struct ModelArgs {
  std::string model;
  std::string vectors;
};

struct TrainArgs {
  std::string out;
  int q = 15;
  std::vector<int> widths = {256, 256};
  std::vector<double> dropouts = {0.5, 0.25};
  int l_max = 25;
  int epochs = 10;
  int batch_size = 32;
  double learning_rate = 0.002;
  std::size_t vocab_size = 10000;
  std::uint64_t seed = 0;
  double validation_fraction = 0.0;
};

void add_corpus_options(CLI::App* cmd, CorpusArgs& args, const char* flag = "--in") {
  cmd->add_option(flag, args.path, "Corpus file or directory")->required();
  cmd->add_option("--format", args.format, "jsonl, lines or dir")->capture_default_str();
}

void add_model_options(CLI::App* cmd, ModelArgs& args) {
  cmd->add_option("--model", args.model, "Model file")->required();
  cmd->add_option("--vectors", args.vectors, "Word vectors (default: <model>.vec)");
}

void add_train_options(CLI::App* cmd, TrainArgs& args) {
  cmd->add_option("--q", args.q, "Position quantiles")->capture_default_str();
  cmd->add_option("--widths", args.widths, "Hidden units per direction, one per layer")->delimiter(',');
  cmd->add_option("--dropouts", args.dropouts, "Dropout per layer")->delimiter(',');
  cmd->add_option("--l-max", args.l_max, "Tokens kept per sentence")->capture_default_str();
  cmd->add_option("--epochs", args.epochs)->capture_default_str();
  cmd->add_option("--batch-size", args.batch_size)->capture_default_str();
  cmd->add_option("--lr", args.learning_rate, "Adamax learning rate")->capture_default_str();
  cmd->add_option("--vocab-size", args.vocab_size)->capture_default_str();
  cmd->add_option("--seed", args.seed)->capture_default_str();
}

std::vector<Document> read_corpus(const CorpusArgs& args) {
  auto result = load_corpus(args.path, parse_corpus_format(args.format));
  for (const auto& s : result.skipped) {
    std::cerr << "skipped " << s.source << ':' << s.line << ": " << s.reason << '\n';
  }
  return std::move(result.documents);
}

std::string sidecar_vectors(const std::string& model_path) { return model_path + ".vec"; }

struct Bundle {
  LoadedModel loaded;
  VectorStore vectors;
};

Bundle open_model(const ModelArgs& args) {
  Bundle b;
  b.loaded = load_model(args.model);
  const auto vpath = args.vectors.empty() ? sidecar_vectors(args.model) : args.vectors;
  if (!fs::exists(vpath)) throw IoError("no vectors given and " + vpath + " does not exist");
  b.vectors = load_vectors(vpath);
  check_compatible(b.loaded, b.vectors);
  return b;
}

ModelConfig model_config(const TrainArgs& args, std::size_t vector_dim) {
  ModelConfig cfg;
  cfg.q = args.q;
  cfg.layer_widths = args.widths;
  cfg.layer_dropouts = args.dropouts;
  if (cfg.layer_dropouts.size() < cfg.layer_widths.size()) cfg.layer_dropouts.resize(cfg.layer_widths.size(), 0.0);
  cfg.layer_dropouts.resize(cfg.layer_widths.size());
  cfg.input_dim = static_cast<int>(3 * vector_dim);
  cfg.l_max = args.l_max;
  cfg.seed = args.seed;
  cfg.validate();
  return cfg;
}

TrainConfig train_config(const TrainArgs& args, bool verbose) {
  TrainConfig tc;
  tc.epochs = args.epochs;
  tc.batch_size = args.batch_size;
  tc.optimizer.learning_rate = args.learning_rate;
  tc.shuffle_seed = args.seed;
  if (verbose) {
    tc.on_epoch = [](int epoch, const EpochStats& s) {
      std::cerr << "epoch " << epoch + 1 << " loss " << s.train_loss << " acc " << s.train_accuracy;
      if (s.validation_accuracy) std::cerr << " val_loss " << *s.validation_loss << " val_acc " << *s.validation_accuracy;
      std::cerr << '\n';
    };
  }
  return tc;
}

struct Trained {
  PositionModel model;
  Vocab vocab;
  TrainHistory history;
};

Trained train_on(std::span<const Document> train_docs, std::span<const Document> val_docs, const VectorStore& store,
                 const TrainArgs& args, bool verbose) {
  Trained t;
  t.vocab = build_vocab(train_docs, args.vocab_size);
  const auto cfg = model_config(args, store.dim());
  const auto l_max = static_cast<std::size_t>(cfg.l_max);
  const auto data = build_dataset(train_docs, store, t.vocab, cfg.q, l_max);
  const auto val = build_dataset(val_docs, store, t.vocab, cfg.q, l_max);
  auto result = train(init_model(cfg), data, train_config(args, verbose), val);
  t.model = std::move(result.model);
  t.history = std::move(result.history);
  return t;
}

class OwnedPpdSource final : public PpdSource {
 public:
  OwnedPpdSource(Trained trained, const VectorStore& store) : t_(std::move(trained)), store_(store) {}
  PpdSequence predict(const Document& doc) const override { return ppd_sequence(t_.model, doc, store_, t_.vocab); }

 private:
  Trained t_;
  const VectorStore& store_;
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << text;
}

// Stores the vectors of every vocabulary token next to the model so later
// commands can run without --vectors.
void write_sidecar(const std::string& model_path, const VectorStore& store, const Vocab& vocab) {
  std::vector<std::string> tokens;
  for (const auto& t : vocab.tokens()) {
    if (store.contains(t)) tokens.push_back(t);
  }
  save_vectors(store, tokens, sidecar_vectors(model_path));
}

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sentence position distributions: train, analyze and evaluate document coherence."};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a position model");
  CorpusArgs train_corpus;
  TrainArgs train_args;
  std::string train_vectors;
  add_corpus_options(train_cmd, train_corpus, "--corpus");
  train_cmd->add_option("--vectors", train_vectors, "Word vectors (text format)")->required();
  train_cmd->add_option("--out", train_args.out, "Output model file")->required();
  train_cmd->add_option("--validation", train_args.validation_fraction, "Held-out fraction for validation")
      ->check(CLI::Range(0.0, 0.9));
  add_train_options(train_cmd, train_args);

  // analyze
  auto* analyze_cmd = app.add_subcommand("analyze", "Heatmap JSON (or SVG) for each document");
  ModelArgs analyze_model;
  CorpusArgs analyze_corpus;
  std::string analyze_text, svg_out;
  InsightOptions insight;
  double drop_delta = 0;
  add_model_options(analyze_cmd, analyze_model);
  auto* in_opt = analyze_cmd->add_option("--in", analyze_corpus.path, "Corpus file or directory");
  analyze_cmd->add_option("--format", analyze_corpus.format)->capture_default_str();
  auto* text_opt = analyze_cmd->add_option("--text", analyze_text, "Raw text to analyze");
  in_opt->excludes(text_opt);
  analyze_cmd->add_option("--svg", svg_out, "Write an SVG heatmap of the first document here");
  analyze_cmd->add_option("--n-summary", insight.n_summary)->capture_default_str();
  analyze_cmd->add_option("--jsd-threshold", insight.jsd_threshold)->capture_default_str();
  analyze_cmd->add_option("--drop-delta", drop_delta, "Subsection drop (default q/3)");

  // reorder
  auto* reorder_cmd = app.add_subcommand("reorder", "Print the induced sentence order of each document");
  ModelArgs reorder_model;
  CorpusArgs reorder_corpus;
  add_model_options(reorder_cmd, reorder_model);
  add_corpus_options(reorder_cmd, reorder_corpus);

  // discriminate
  auto* disc_cmd = app.add_subcommand("discriminate", "Order discrimination accuracy");
  ModelArgs disc_model;
  CorpusArgs disc_corpus;
  std::size_t disc_k = 20;
  std::uint64_t disc_seed = 0;
  add_model_options(disc_cmd, disc_model);
  add_corpus_options(disc_cmd, disc_corpus);
  disc_cmd->add_option("--permutations", disc_k)->capture_default_str();
  disc_cmd->add_option("--seed", disc_seed)->capture_default_str();

  // summarize
  auto* sum_cmd = app.add_subcommand("summarize", "First-quantile extractive summaries");
  ModelArgs sum_model;
  CorpusArgs sum_corpus;
  std::size_t sum_n = 3;
  add_model_options(sum_cmd, sum_model);
  add_corpus_options(sum_cmd, sum_corpus);
  sum_cmd->add_option("--n", sum_n, "Sentences per summary")->capture_default_str()->check(CLI::PositiveNumber);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Benchmark report");
  ModelArgs eval_model;
  CorpusArgs eval_corpus;
  std::string eval_task;
  BenchmarkParams bench;
  bool eval_table = false;
  bool eval_retrain = false;
  TrainArgs eval_train;
  add_model_options(eval_cmd, eval_model);
  add_corpus_options(eval_cmd, eval_corpus);
  eval_cmd->add_option("--task", eval_task, "discrimination, reordering or summarization")
      ->required()
      ->check(CLI::IsMember({"discrimination", "reordering", "summarization"}));
  eval_cmd->add_option("--permutations", bench.permutations)->capture_default_str();
  eval_cmd->add_option("--cv", bench.cv_folds, "Discrimination folds");
  eval_cmd->add_flag("--retrain", eval_retrain, "With --cv: train a fresh model per fold (uses --vectors)");
  eval_cmd->add_option("--n", bench.summary_sentences, "Summary sentences")->capture_default_str();
  eval_cmd->add_option("--reference-key", bench.reference_key)->capture_default_str();
  eval_cmd->add_option("--name", bench.model_name, "Model name in the report")->capture_default_str();
  eval_cmd->add_flag("--table", eval_table, "Print the fixed-column table instead of JSON");
  add_train_options(eval_cmd, eval_train);

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP API");
  std::string data_dir = env_or("COHERE_DATA_DIR", "cohere-data");
  int port = std::atoi(env_or("COHERE_PORT", "8080").c_str());
  std::string host = "127.0.0.1";
  std::string static_dir;
  serve_cmd->add_option("--data-dir", data_dir, "Registry directory (COHERE_DATA_DIR)")->capture_default_str();
  serve_cmd->add_option("--port", port, "Port (COHERE_PORT)")->capture_default_str();
  serve_cmd->add_option("--host", host)->capture_default_str();
  serve_cmd->add_option("--static", static_dir, "Directory served at /");

  // register
  auto* reg_cmd = app.add_subcommand("register", "Add a model or corpus to the registry");
  reg_cmd->require_subcommand(1);
  reg_cmd->add_option("--data-dir", data_dir, "Registry directory (COHERE_DATA_DIR)")->capture_default_str();
  auto* reg_model = reg_cmd->add_subcommand("model", "Register a model file");
  std::string reg_id, reg_path, reg_vectors, reg_tag, reg_format = "jsonl";
  reg_model->add_option("--id", reg_id)->required();
  reg_model->add_option("--model", reg_path)->required();
  reg_model->add_option("--vectors", reg_vectors, "Word vectors (default: <model>.vec)");
  reg_model->add_option("--tag", reg_tag, "Corpus tag");
  auto* reg_corpus = reg_cmd->add_subcommand("corpus", "Register a training corpus");
  reg_corpus->add_option("--id", reg_id)->required();
  reg_corpus->add_option("--corpus", reg_path)->required();
  reg_corpus->add_option("--format", reg_format)->capture_default_str();
  reg_corpus->add_option("--vectors", reg_vectors)->required();

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic corpus and vectors");
  SyntheticCorpusOptions synth;
  std::string synth_corpus, synth_vectors;
  synth_cmd->add_option("--corpus", synth_corpus, "Output JSONL")->required();
  synth_cmd->add_option("--vectors", synth_vectors, "Output vectors")->required();
  synth_cmd->add_option("--documents", synth.documents)->capture_default_str();
  synth_cmd->add_option("--sentences", synth.sentences_per_document)->capture_default_str();
  synth_cmd->add_option("--noise", synth.marker_noise)->capture_default_str();
  synth_cmd->add_option("--dim", synth.vector_dim)->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n";
    const CLI::App* failing = &app;
    for (auto* sub : app.get_subcommands()) failing = sub;
    std::cerr << failing->help();
    return 2;
  }

  try {
    if (train_cmd->parsed()) {
      const auto docs = read_corpus(train_corpus);
      if (docs.empty()) throw EmptyDocument("corpus has no usable documents");
      const auto store = load_vectors(train_vectors);
      std::vector<Document> train_docs = docs, val_docs;
      if (train_args.validation_fraction > 0) {
        const auto split = split_corpus(docs, train_args.validation_fraction, 0.0, train_args.seed);
        train_docs = select_documents(docs, split.train);
        val_docs = select_documents(docs, split.validation);
      }
      auto t = train_on(train_docs, val_docs, store, train_args, true);
      save_model(t.model, t.vocab, store.dim(), train_args.out);
      write_sidecar(train_args.out, store, t.vocab);
      std::cout << json{{"model", train_args.out}, {"history", t.history.to_json()}}.dump() << '\n';
    } else if (analyze_cmd->parsed()) {
      if (analyze_corpus.path.empty() && analyze_text.empty()) {
        std::cerr << "analyze: one of --in or --text is required\n\n" << analyze_cmd->help();
        return 2;
      }
      if (analyze_cmd->count("--drop-delta")) insight.drop_delta = drop_delta;
      const auto b = open_model(analyze_model);
      std::vector<Document> docs;
      if (!analyze_text.empty()) {
        Document d;
        d.id = "text";
        d.sentences = segment_sentences(analyze_text);
        docs.push_back(std::move(d));
      } else {
        docs = read_corpus(analyze_corpus);
      }
      for (std::size_t i = 0; i < docs.size(); ++i) {
        const auto seq = ppd_sequence(b.loaded.model, docs[i], b.vectors, b.loaded.vocab);
        const auto data = analyze_insights(seq, docs[i], insight);
        if (!svg_out.empty() && i == 0) write_text(svg_out, render_heatmap_svg(data));
        auto j = heatmap_to_json(data);
        j["id"] = docs[i].id;
        j["coherence"] = {{"tau", coherence_score(seq).tau}, {"n", seq.size()}};
        j["ordering"] = reorder(seq).permutation;
        std::cout << j.dump() << '\n';
      }
    } else if (reorder_cmd->parsed()) {
      const auto b = open_model(reorder_model);
      for (const auto& doc : read_corpus(reorder_corpus)) {
        const auto ord = reorder(ppd_sequence(b.loaded.model, doc, b.vectors, b.loaded.vocab));
        std::cout << json{{"id", doc.id}, {"ordering", ord.permutation}}.dump() << '\n';
      }
    } else if (disc_cmd->parsed()) {
      const auto b = open_model(disc_model);
      const auto docs = read_corpus(disc_corpus);
      const ModelPpdSource source(b.loaded.model, b.vectors, b.loaded.vocab);
      const auto m = discrimination_accuracy(source, docs, disc_k, disc_seed);
      std::cout << json{{"accuracy", m.accuracy},
                        {"trials", m.trials},
                        {"correct", m.correct},
                        {"documents", m.documents},
                        {"excluded", m.excluded}}
                       .dump()
                << '\n';
    } else if (sum_cmd->parsed()) {
      const auto b = open_model(sum_model);
      for (const auto& doc : read_corpus(sum_corpus)) {
        const auto sel = summarize(ppd_sequence(b.loaded.model, doc, b.vectors, b.loaded.vocab), sum_n);
        json texts = json::array();
        for (auto i : sel.selected) texts.push_back(doc.sentences[i].text);
        std::cout << json{{"id", doc.id}, {"summary", sel.selected}, {"sentences", texts}}.dump() << '\n';
      }
    } else if (eval_cmd->parsed()) {
      const auto docs = read_corpus(eval_corpus);
      bench.seed = eval_train.seed;
      const auto task = parse_benchmark_task(eval_task);
      BenchmarkReport report;
      if (eval_retrain) {
        if (task != BenchmarkTask::discrimination || bench.cv_folds < 2) {
          std::cerr << "eval: --retrain needs --task discrimination and --cv >= 2\n";
          return 2;
        }
        const auto store = load_vectors(eval_model.vectors.empty() ? sidecar_vectors(eval_model.model)
                                                                   : eval_model.vectors);
        report = cross_validate_discrimination(
            docs,
            [&](std::span<const Document> fold_train) -> std::unique_ptr<PpdSource> {
              return std::make_unique<OwnedPpdSource>(train_on(fold_train, {}, store, eval_train, false), store);
            },
            bench);
      } else {
        const auto b = open_model(eval_model);
        const ModelPpdSource source(b.loaded.model, b.vectors, b.loaded.vocab);
        report = run_benchmark(task, source, docs, bench);
      }
      std::cout << (eval_table ? report.table : report.json.dump(2) + "\n");
    } else if (serve_cmd->parsed()) {
      ServiceOptions opts;
      opts.data_dir = data_dir;
      Service service(opts);
      httplib::Server server;
      install_routes(server, service, static_dir);
      std::cerr << "listening on " << host << ':' << port << " (data " << data_dir << ")\n";
      if (!server.listen(host, port)) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
    } else if (reg_cmd->parsed()) {
      Registry registry(data_dir);
      if (reg_model->parsed()) {
        const auto vectors = reg_vectors.empty() ? sidecar_vectors(reg_path) : reg_vectors;
        std::cout << registry.register_model(reg_id, reg_path, vectors, reg_tag).to_json().dump() << '\n';
      } else {
        CorpusRegistryEntry e{reg_id, reg_path, reg_format, reg_vectors};
        registry.register_corpus(e);
        std::cout << e.to_json().dump() << '\n';
      }
    } else if (synth_cmd->parsed()) {
      const auto corpus = make_synthetic_corpus(synth);
      save_jsonl(corpus.documents, synth_corpus);
      save_vectors(corpus.vectors, corpus.tokens, synth_vectors);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
