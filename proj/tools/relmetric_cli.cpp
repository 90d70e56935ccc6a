// relmetric: train, predict, evaluate, inspect and k-fold driver.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error
// (corpus, checkpoint, alignment), 3 numeric failure during training.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "relmetric/relmetric.hpp"

namespace fs = std::filesystem;
using namespace relmetric;
using nlohmann::json;

namespace {

constexpr int kUsage = 1, kData = 2, kNumeric = 3;

// --config FILE plus one --<key> flag per TrainConfig field.
struct ConfigFlags {
  std::string file;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App* app) {
    app->add_option("--config", file, "key = value configuration file");
    for (const auto& key : config_keys()) options[key] = app->add_option("--" + key, values[key], "override '" + key + "'");
  }

  // flags > file > defaults
  TrainConfig resolve() const {
    TrainConfig c = file.empty() ? TrainConfig{} : load_config_file(file);
    // paths inside a config file are relative to that file
    if (!file.empty() && !c.word_embeddings.empty() && fs::path(c.word_embeddings).is_relative())
      c.word_embeddings = (fs::path(file).parent_path() / c.word_embeddings).lexically_normal().string();
    for (const auto& [key, opt] : options)
      if (opt->count()) set_config_value(c, key, values.at(key));
    c.validate();
    return c;
  }
};

struct DataFlags {
  std::string format = "canonical";
  std::string alignment = "repair";
  bool skip_bad = false;

  void attach(CLI::App* app) {
    app->add_option("--format", format, "corpus format: canonical, conll04 or ade")->capture_default_str();
    app->add_option("--alignment", alignment, "unaligned entities: repair, skip or abort")->capture_default_str();
    app->add_flag("--skip-bad-records", skip_bad, "log and skip malformed records instead of failing");
  }

  IngestOptions options() const {
    IngestOptions o;
    if (alignment == "repair") o.alignment = AlignmentPolicy::repair;
    else if (alignment == "skip") o.alignment = AlignmentPolicy::skip;
    else if (alignment == "abort") o.alignment = AlignmentPolicy::abort;
    else throw ConfigError("unknown alignment policy '" + alignment + "' (expected repair, skip or abort)");
    o.skip_bad_records = skip_bad;
    return o;
  }
};

std::vector<SentenceExample> load(const std::string& path, const std::string& parses, const DataFlags& data) {
  if (path.empty()) return {};
  auto examples = parse_corpus(path, parse_corpus_format(data.format), data.options());
  if (!parses.empty()) {
    attach_parses(examples, read_parse_sidecar(parses));
  } else {
    log::info(path, ": no parse sidecar, dependency tables hold the null relation");
  }
  log::info(path, ": ", examples.size(), " sentences");
  return examples;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write '" + path.string() + "'");
  out << text;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ", ") + s;
  return "[" + out + "]";
}

// Words of later corpora covered by the pretrained vectors join the vocabulary.
std::vector<std::string> embedding_covered_words(const TrainConfig& c, const std::vector<const std::vector<SentenceExample>*>& corpora) {
  if (c.word_embeddings.empty()) return {};
  const auto file_words = embedding_file_words(c.word_embeddings);
  const std::set<std::string> known(file_words.begin(), file_words.end());
  std::vector<std::string> out;
  for (const auto* corpus : corpora)
    for (const auto& ex : *corpus)
      for (const auto& t : ex.tokens)
        if (known.count(t.text) || known.count(to_lower(t.text))) out.push_back(t.text);
  return out;
}

json prediction_record(const SentenceExample& ex) {
  json rec{{"kind", "sentence"}, {"id", ex.id}, {"text", ex.text}};
  rec["tokens"] = json::array();
  for (const auto& t : ex.tokens) rec["tokens"].push_back({t.start, t.end});
  rec["entities"] = json::array();
  for (const auto& e : ex.entities) {
    const auto [s, t] = ex.char_span(e);
    rec["entities"].push_back({{"type", e.type}, {"start", s}, {"end", t}, {"token_start", e.start}, {"token_end", e.end + 1}});
  }
  rec["relations"] = json::array();
  auto index_of = [&](const Entity& e) {
    return static_cast<std::size_t>(std::find(ex.entities.begin(), ex.entities.end(), e) - ex.entities.begin());
  };
  for (const auto& r : ex.relations)
    rec["relations"].push_back({{"subject", index_of(r.subject)}, {"object", index_of(r.object)}, {"type", r.predicate}});
  return rec;
}

void print_scores(const std::string& name, const ScoreReport& r) {
  std::cout << name << ": NER P/R/F1 " << r.ner.precision() << " " << r.ner.recall() << " " << r.ner.f1()
            << " | RE P/R/F1 " << r.re.precision() << " " << r.re.recall() << " " << r.re.f1() << '\n';
}

struct RunSummary {
  ScoreReport train, dev, test;
  bool has_dev = false, has_test = false;
  std::size_t best_epoch = 0;
};

// One training run into `out`: effective config, metrics log, best checkpoint.
RunSummary train_run(const TrainConfig& c, const LabelSpace& labels, const std::vector<SentenceExample>& train,
                     const std::vector<SentenceExample>& dev, const std::vector<SentenceExample>& test,
                     const fs::path& out, unsigned threads) {
  fs::create_directories(out);
  write_text(out / "effective_config.cfg", config_to_text(c));
  std::ofstream metrics(out / "metrics.jsonl");
  if (!metrics) throw IngestionError("cannot write '" + (out / "metrics.jsonl").string() + "'");
  const auto extra = embedding_covered_words(c, {&dev, &test});
  TrainResult result = train_model(c, labels, train, dev, &metrics, extra);
  save_checkpoint(result.best, (out / "model.ckpt").string());

  RunSummary s;
  s.best_epoch = result.best_epoch;
  const RelationMetricModel& model = result.best.model;
  s.train = evaluate(predict_corpus(model, train, threads), train);
  json final_rec{{"kind", "final"}, {"best_epoch", result.best_epoch}, {"train", s.train.to_json()}};
  if (!dev.empty()) {
    s.dev = evaluate(predict_corpus(model, dev, threads), dev);
    s.has_dev = true;
    final_rec["dev"] = s.dev.to_json();
  }
  if (!test.empty()) {
    s.test = evaluate(predict_corpus(model, test, threads), test);
    s.has_test = true;
    final_rec["test"] = s.test.to_json();
  }
  metrics << final_rec.dump() << '\n';
  return s;
}

LabelSpace labels_of(const std::vector<const std::vector<SentenceExample>*>& corpora) {
  std::vector<SentenceExample> all;
  for (const auto* c : corpora) all.insert(all.end(), c->begin(), c->end());
  return infer_label_space(all);
}

// Annotations in the corpus must use the checkpoint's label inventory.
void check_labels(const LabelSpace& model, const std::vector<SentenceExample>& corpus) {
  const LabelSpace seen = infer_label_space(corpus);
  bool ok = true;
  for (const auto& t : seen.entity_types()) ok = ok && model.entity_type_index(t).has_value();
  for (const auto& t : seen.relation_types()) ok = ok && model.relation_type_index(t).has_value();
  if (!ok) {
    throw IngestionError("label space mismatch: checkpoint has entity types " + join(model.entity_types()) +
                         " and relation types " + join(model.relation_types()) + "; corpus has entity types " +
                         join(seen.entity_types()) + " and relation types " + join(seen.relation_types()));
  }
}

void reject_unknown_flags(const CLI::App* sub) {
  for (const auto& extra : sub->remaining()) {
    if (extra.rfind("--", 0) == 0) {
      throw ConfigError("unknown option '" + extra + "'; valid config keys: " + join(config_keys()));
    }
    throw CLI::ExtrasError({extra});
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint entity and relation extraction with table-shaped metric features"};
  app.require_subcommand(1);
  bool verbose = false, quiet = false;
  app.add_flag("-v,--verbose", verbose, "log progress");
  app.add_flag("-q,--quiet", quiet, "log errors only");
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--threads", threads, "prediction threads");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model");
  ConfigFlags train_cfg;
  DataFlags train_data;
  std::string train_path, dev_path, test_path, train_parses, dev_parses, test_parses, out_dir = "run";
  std::size_t runs = 1;
  train_cfg.attach(train_cmd);
  train_data.attach(train_cmd);
  train_cmd->add_option("--train", train_path, "training corpus")->required();
  train_cmd->add_option("--dev", dev_path, "development corpus (model selection)");
  train_cmd->add_option("--test", test_path, "test corpus scored with the selected model");
  train_cmd->add_option("--train-parses", train_parses, "dependency sidecar for --train");
  train_cmd->add_option("--dev-parses", dev_parses, "dependency sidecar for --dev");
  train_cmd->add_option("--test-parses", test_parses, "dependency sidecar for --test");
  train_cmd->add_option("--out", out_dir, "output directory")->capture_default_str();
  train_cmd->add_option("--runs", runs, "independent runs with seeds seed, seed+1, ...")->check(CLI::PositiveNumber);
  train_cmd->allow_extras();

  // predict
  auto* predict_cmd = app.add_subcommand("predict", "decode a corpus with a trained model");
  DataFlags predict_data;
  std::string model_path, input_path, input_parses, output_path = "-";
  predict_data.attach(predict_cmd);
  predict_cmd->add_option("--model", model_path, "checkpoint")->required();
  predict_cmd->add_option("--input", input_path, "corpus to decode")->required();
  predict_cmd->add_option("--parses", input_parses, "dependency sidecar for --input");
  predict_cmd->add_option("--output", output_path, "prediction file ('-' for stdout)")->capture_default_str();

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "strict-match scores of predictions against gold");
  DataFlags gold_data;
  std::string pred_path, gold_path, scheme, eval_out;
  std::vector<double> bins;
  gold_data.attach(eval_cmd);
  eval_cmd->add_option("--pred", pred_path, "prediction file (canonical records)")->required();
  eval_cmd->add_option("--gold", gold_path, "gold corpus")->required();
  eval_cmd->add_option("--partition", scheme, "length, entity_distance or relation_type");
  eval_cmd->add_option("--bins", bins, "thresholds (length) or edges (entity_distance)")->delimiter(',');
  eval_cmd->add_option("--output", eval_out, "also write the JSON report here");

  // inspect
  auto* inspect_cmd = app.add_subcommand("inspect", "per-layer heatmaps of the pooling stack for one sentence");
  DataFlags inspect_data;
  std::string inspect_model, sentence, inspect_input, inspect_parses, sentence_id, heat_dir = "heatmaps";
  bool images = false;
  inspect_data.attach(inspect_cmd);
  inspect_cmd->add_option("--model", inspect_model, "checkpoint")->required();
  auto* sentence_opt = inspect_cmd->add_option("--sentence", sentence, "raw sentence text");
  auto* input_opt = inspect_cmd->add_option("--input", inspect_input, "corpus holding the sentence");
  inspect_cmd->add_option("--parses", inspect_parses, "dependency sidecar for --input");
  inspect_cmd->add_option("--id", sentence_id, "sentence id within --input (default: first)");
  inspect_cmd->add_option("--out", heat_dir, "output directory")->capture_default_str();
  inspect_cmd->add_flag("--images", images, "also write greyscale PGM renderings");
  sentence_opt->excludes(input_opt);

  // folds
  auto* folds_cmd = app.add_subcommand("folds", "k-fold cross-validation driver");
  ConfigFlags folds_cfg;
  DataFlags folds_data;
  std::string folds_path, folds_parses, folds_out = "folds";
  std::size_t k = 10;
  std::uint64_t fold_seed = 0;
  std::vector<std::size_t> only;
  bool assign_only = false;
  folds_cfg.attach(folds_cmd);
  folds_data.attach(folds_cmd);
  folds_cmd->add_option("--data", folds_path, "corpus")->required();
  folds_cmd->add_option("--parses", folds_parses, "dependency sidecar");
  folds_cmd->add_option("-k,--k", k, "number of folds")->capture_default_str();
  folds_cmd->add_option("--fold-seed", fold_seed, "seed of the fold assignment")->capture_default_str();
  folds_cmd->add_option("--fold", only, "run only these folds (0-based)");
  folds_cmd->add_option("--out", folds_out, "output directory")->capture_default_str();
  folds_cmd->add_flag("--assign-only", assign_only, "write the fold assignment and stop");
  folds_cmd->allow_extras();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }
  log::set_level(quiet ? log::Level::error : verbose ? log::Level::info : log::Level::warn);

  try {
    if (*train_cmd) {
      reject_unknown_flags(train_cmd);
      const TrainConfig base = train_cfg.resolve();
      const auto train = load(train_path, train_parses, train_data);
      const auto dev = load(dev_path, dev_parses, train_data);
      const auto test = load(test_path, test_parses, train_data);
      if (train.empty()) throw IngestionError("training corpus '" + train_path + "' holds no sentences");
      const LabelSpace labels = labels_of({&train, &dev, &test});
      std::cout << "label space: " << labels.size() << " tags, entity types " << join(labels.entity_types())
                << ", relation types " << join(labels.relation_types()) << '\n';
      std::vector<double> dev_f1, test_f1;
      for (std::size_t r = 0; r < runs; ++r) {
        TrainConfig c = base;
        c.seed = base.seed + r;
        const fs::path dir = runs == 1 ? fs::path(out_dir) : fs::path(out_dir) / ("run_" + std::to_string(r));
        const RunSummary s = train_run(c, labels, train, dev, test, dir, threads);
        std::cout << "run " << r << " (seed " << c.seed << "), best epoch " << s.best_epoch << ", checkpoint "
                  << (dir / "model.ckpt").string() << '\n';
        print_scores("  train", s.train);
        if (s.has_dev) print_scores("  dev", s.dev), dev_f1.push_back(s.dev.re.f1());
        if (s.has_test) print_scores("  test", s.test), test_f1.push_back(s.test.re.f1());
      }
      if (runs > 1) {
        json summary{{"kind", "summary"}, {"runs", runs}};
        auto add = [&](const char* name, const std::vector<double>& v) {
          if (v.empty()) return;
          const Interval ci = confidence_interval(v);
          summary[name] = {{"re_f1", v}, {"mean", ci.mean}, {"ci95_half_width", ci.half_width}};
          std::cout << name << " RE F1 over " << ci.runs << " runs: " << ci.mean << " +- " << ci.half_width << '\n';
        };
        add("dev", dev_f1);
        add("test", test_f1);
        write_text(fs::path(out_dir) / "summary.json", summary.dump(2) + "\n");
      }
    } else if (*predict_cmd) {
      const TrainingState state = load_checkpoint(model_path);
      const auto input = load(input_path, input_parses, predict_data);
      check_labels(state.model.labels(), input);
      const auto t0 = std::chrono::steady_clock::now();
      const auto predictions = predict_corpus(state.model, input, threads);
      const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::ofstream file;
      if (output_path != "-") {
        file.open(output_path);
        if (!file) throw IngestionError("cannot write '" + output_path + "'");
      }
      std::ostream& out = output_path == "-" ? std::cout : file;
      out << json{{"kind", "run"},
                  {"model", model_path},
                  {"input", input_path},
                  {"sentences", predictions.size()},
                  {"inference_seconds", seconds},
                  {"config", config_to_json(state.model.config())}}
                 .dump()
          << '\n';
      for (const auto& p : predictions) out << prediction_record(p).dump() << '\n';
      if (output_path != "-") {
        std::cout << "wrote " << predictions.size() << " predictions to " << output_path << " (inference " << seconds
                  << " s)\n";
      }
    } else if (*eval_cmd) {
      const auto gold = load(gold_path, "", gold_data);
      const auto pred = parse_corpus(pred_path, CorpusFormat::canonical, IngestOptions{AlignmentPolicy::abort, false});
      json report = evaluate(pred, gold).to_json();
      {
        // carry the producing run's configuration along when the file has one
        std::ifstream in(pred_path);
        std::string first;
        std::getline(in, first);
        const json head = json::parse(first, nullptr, false);
        if (head.is_object() && head.value("kind", "") == "run" && head.contains("config")) {
          report["config"] = head["config"];
          report["model"] = head.value("model", "");
        }
      }
      if (!scheme.empty()) {
        json rows = json::array();
        for (const auto& row : partition_analysis(pred, gold, parse_partition_scheme(scheme), bins))
          rows.push_back({{"bin", row.label}, {"items", row.items}, {"scores", row.report.to_json()}});
        report["partition"] = {{"scheme", scheme}, {"rows", rows}};
      }
      std::cout << report.dump(2) << '\n';
      if (!eval_out.empty()) write_text(eval_out, report.dump(2) + "\n");
    } else if (*inspect_cmd) {
      const TrainingState state = load_checkpoint(inspect_model);
      SentenceExample ex;
      if (!inspect_input.empty()) {
        const auto corpus = load(inspect_input, inspect_parses, inspect_data);
        auto it = std::find_if(corpus.begin(), corpus.end(),
                               [&](const SentenceExample& e) { return sentence_id.empty() || e.id == sentence_id; });
        if (it == corpus.end()) throw IngestionError("no sentence '" + sentence_id + "' in '" + inspect_input + "'");
        ex = *it;
      } else {
        if (sentence.find_first_not_of(" \t\r\n") == std::string::npos) throw ContractError("inspect: empty sentence");
        ex.id = "sentence";
        ex.text = sentence;
        ex.tokens = tokenize(sentence);
      }
      const Heatmaps h = compute_heatmaps(state.model, ex);
      const auto files = write_heatmaps(h, heat_dir, images);
      write_text(fs::path(heat_dir) / "effective_config.cfg", config_to_text(state.model.config()));
      for (const auto& f : files) std::cout << f << '\n';
    } else if (*folds_cmd) {
      reject_unknown_flags(folds_cmd);
      const TrainConfig c = folds_cfg.resolve();
      const auto data = load(folds_path, folds_parses, folds_data);
      if (data.empty()) throw IngestionError("corpus '" + folds_path + "' holds no sentences");
      const auto assignment = assign_folds(data, k, fold_seed);
      fs::create_directories(folds_out);
      {
        std::ofstream a(fs::path(folds_out) / "assignment.jsonl");
        for (std::size_t i = 0; i < data.size(); ++i) a << json{{"id", data[i].id}, {"fold", assignment[i]}}.dump() << '\n';
      }
      if (assign_only) {
        std::cout << "wrote " << (fs::path(folds_out) / "assignment.jsonl").string() << '\n';
        return 0;
      }
      if (only.empty())
        for (std::size_t f = 0; f < k; ++f) only.push_back(f);
      const LabelSpace labels = infer_label_space(data);
      std::vector<double> ner_f1, re_f1;
      json summary{{"kind", "summary"}, {"k", k}, {"fold_seed", fold_seed}, {"folds", json::array()}};
      for (std::size_t f : only) {
        const CorpusSplit split = fold_split(data, k, f, fold_seed);
        const RunSummary s =
            train_run(c, labels, split.train, {}, split.test, fs::path(folds_out) / ("fold_" + std::to_string(f)), threads);
        print_scores("fold " + std::to_string(f), s.test);
        ner_f1.push_back(s.test.ner.f1());
        re_f1.push_back(s.test.re.f1());
        summary["folds"].push_back({{"fold", f}, {"test", s.test.to_json()}});
      }
      const Interval ner = confidence_interval(ner_f1), re = confidence_interval(re_f1);
      summary["ner_f1_mean"] = ner.mean;
      summary["re_f1_mean"] = re.mean;
      write_text(fs::path(folds_out) / "summary.json", summary.dump(2) + "\n");
      std::cout << "mean over " << only.size() << " folds: NER F1 " << ner.mean << ", RE F1 " << re.mean << '\n';
    }
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "error: training aborted: " << e.what() << '\n';
    return kNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return 0;
}
