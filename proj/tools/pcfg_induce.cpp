// Command-line front end: vocabulary building, training, zero-shot parsing,
// evaluation, analyses and synthetic data generation.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pcfg/errors.hpp"
#include "pcfg/pipeline.hpp"

namespace fs = std::filesystem;
using namespace pcfg;

namespace {

constexpr int kExitData = 1;
constexpr int kExitConfig = 2;

// Settings shared by the config-driven subcommands. Explicit flags become
// overrides applied after --set.
struct ConfigArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, std::string>> flags;
};

void add_config_options(CLI::App *cmd, ConfigArgs &args) {
  cmd->add_option("--config", args.config_path, "JSON experiment configuration");
  cmd->add_option("--set", args.sets, "Override a configuration key (dotted, e.g. training.alpha=0.5)");
}

void add_flag_override(CLI::App *cmd, ConfigArgs &args, const std::string &flag, const std::string &key,
                       const std::string &help) {
  cmd->add_option_function<std::string>(
      flag, [&args, key](const std::string &v) { args.flags.emplace_back(key, v); }, help);
}

ExperimentConfig resolve_config(const ConfigArgs &args) {
  nlohmann::json j;
  if (args.config_path.empty()) {
    j = to_json(ExperimentConfig{});
  } else {
    std::ifstream in(args.config_path);
    if (!in) throw ConfigError("cannot open config " + args.config_path);
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception &e) {
      throw ConfigError(args.config_path + ": " + e.what());
    }
    nlohmann::json base = to_json(ExperimentConfig{});
    base.merge_patch(j);
    j = base;
  }
  for (const auto &s : args.sets) apply_override(j, s);
  for (const auto &[key, value] : args.flags) apply_override(j, key + "=" + value);
  return config_from_json(j);
}

std::string output_dir(const std::string &flag) {
  if (const char *env = std::getenv("PCFG_OUTPUT_DIR"); env != nullptr && *env != '\0') return env;
  return flag;
}

TokenCorpus load_tokens(const std::string &path, const std::string &format) {
  if (!fs::exists(path)) throw ConfigError("corpus not found: " + path);
  if (format == "treebank") {
    TokenCorpus out;
    for (const auto &e : read_treebank(path).entries) out.push_back(e.tokens);
    return out;
  }
  if (format != "text") throw ConfigError("format must be text or treebank");
  return read_token_lines(path).tokens;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Neural PCFG induction, zero-shot parsing and analysis"};
  app.require_subcommand(1);

  // build-vocab
  std::string bv_corpus, bv_format = "text", bv_out = "vocab.tsv";
  int bv_cap = 10000;
  bool bv_lower = false;
  CLI::App *build_vocab = app.add_subcommand("build-vocab", "Build a frequency-ranked vocabulary");
  build_vocab->add_option("--corpus", bv_corpus, "Corpus file")->required();
  build_vocab->add_option("--format", bv_format, "text or treebank");
  build_vocab->add_option("--cap", bv_cap, "Maximum number of word types");
  build_vocab->add_flag("--lowercase", bv_lower, "Lowercase tokens");
  build_vocab->add_option("--out", bv_out, "Output vocabulary file");

  // train
  ConfigArgs train_args;
  CLI::App *train_cmd = app.add_subcommand("train", "Train a grammar");
  add_config_options(train_cmd, train_args);
  add_flag_override(train_cmd, train_args, "--train", "train_path", "Training corpus");
  add_flag_override(train_cmd, train_args, "--train-format", "train_format", "text or treebank");
  add_flag_override(train_cmd, train_args, "--dev", "dev_path", "Development treebank");
  add_flag_override(train_cmd, train_args, "--images", "image_path", "Image vectors (.tsv or .bin with .ids)");
  add_flag_override(train_cmd, train_args, "--embeddings", "embeddings_path", "Pretrained word vectors");
  add_flag_override(train_cmd, train_args, "--output-dir", "output_dir", "Output directory");
  add_flag_override(train_cmd, train_args, "--resume", "resume_from", "Checkpoint to resume from");
  add_flag_override(train_cmd, train_args, "--alpha", "training.alpha", "Grounding loss weight");
  add_flag_override(train_cmd, train_args, "--epochs", "training.max_epochs", "Number of epochs");
  add_flag_override(train_cmd, train_args, "--model-seed", "training.model_seed", "Model seed");
  add_flag_override(train_cmd, train_args, "--data-seed", "training.data_seed", "Data-order seed");
  add_flag_override(train_cmd, train_args, "--max-length", "max_length", "Keep sentences shorter than this");

  // parse
  ConfigArgs parse_args;
  std::string parse_ckpt;
  CLI::App *parse_cmd = app.add_subcommand("parse", "Parse a target corpus with a trained grammar");
  add_config_options(parse_cmd, parse_args);
  parse_cmd->add_option("--checkpoint", parse_ckpt, "Checkpoint file")->required();
  add_flag_override(parse_cmd, parse_args, "--test", "test_path", "Target corpus");
  add_flag_override(parse_cmd, parse_args, "--test-format", "test_format", "text or treebank");
  add_flag_override(parse_cmd, parse_args, "--strategy", "strategy", "direct, random, unknown or standard");
  add_flag_override(parse_cmd, parse_args, "--decoder", "decoder", "mbr or viterbi");
  add_flag_override(parse_cmd, parse_args, "--embeddings", "embeddings_path", "Pretrained word vectors");
  add_flag_override(parse_cmd, parse_args, "--selection-seed", "selection_seed", "Seed for random rows");
  add_flag_override(parse_cmd, parse_args, "--output-dir", "output_dir", "Output directory");

  // evaluate
  std::string ev_pred, ev_gold, ev_out = "out";
  std::optional<std::uint64_t> ev_perm;
  CLI::App *evaluate = app.add_subcommand("evaluate", "Score predictions against gold trees");
  evaluate->add_option("--pred", ev_pred, "predictions.jsonl")->required();
  evaluate->add_option("--gold", ev_gold, "Gold treebank or span file")->required();
  evaluate->add_option("--output-dir", ev_out, "Output directory");
  evaluate->add_option("--perm-seed", ev_perm, "Also score the length-matched permutation baseline");

  // analyze-overlap
  std::string ov_train, ov_test, ov_out = "out", ov_vocab;
  CLI::App *overlap = app.add_subcommand("analyze-overlap", "Factor overlap between two treebanks");
  overlap->add_option("--train", ov_train, "Training treebank")->required();
  overlap->add_option("--test", ov_test, "Test treebank")->required();
  overlap->add_option("--vocab", ov_vocab, "Map words outside this vocabulary to <unk>");
  overlap->add_option("--output-dir", ov_out, "Output directory");

  // analyze-errors
  std::string er_pred, er_gold, er_out = "out";
  int er_width = 3;
  CLI::App *errors = app.add_subcommand("analyze-errors", "Recognized/unrecognized span ratios by length bucket");
  errors->add_option("--pred", er_pred, "predictions.jsonl")->required();
  errors->add_option("--gold", er_gold, "Gold treebank or span file")->required();
  errors->add_option("--bucket-width", er_width, "Length bucket width");
  errors->add_option("--output-dir", er_out, "Output directory");

  // significance-test
  std::string sg_csv, sg_a, sg_b, sg_out = "out";
  CLI::App *signif = app.add_subcommand("significance-test", "Paired t-test over two CSV columns");
  signif->add_option("--csv", sg_csv, "CSV file with a header row")->required();
  signif->add_option("--a", sg_a, "First column")->required();
  signif->add_option("--b", sg_b, "Second column")->required();
  signif->add_option("--output-dir", sg_out, "Output directory");

  // sample-corpus
  int sc_count = 1000, sc_min = 2, sc_max = 12;
  std::uint64_t sc_seed = 0, sc_grammar_seed = 7, sc_image_seed = 13;
  double sc_noise = 0.1;
  std::string sc_out = "synthetic";
  CLI::App *sample = app.add_subcommand("sample-corpus", "Sample sentences, trees and images from the toy grammar");
  sample->add_option("--count", sc_count, "Number of sentences");
  sample->add_option("--min-length", sc_min, "Minimum sentence length");
  sample->add_option("--max-length", sc_max, "Maximum sentence length");
  sample->add_option("--seed", sc_seed, "Sampling seed");
  sample->add_option("--grammar-seed", sc_grammar_seed, "Lexical probability seed");
  sample->add_option("--image-seed", sc_image_seed, "Image noise seed");
  sample->add_option("--noise", sc_noise, "Image noise scale");
  sample->add_option("--output-dir", sc_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*build_vocab) {
      const Vocabulary v = Vocabulary::build(load_tokens(bv_corpus, bv_format), bv_cap, bv_lower);
      v.write(bv_out);
      std::cout << "wrote " << v.size() << " entries to " << bv_out << '\n';
    } else if (*train_cmd) {
      const ExperimentConfig cfg = resolve_config(train_args);
      const TrainRun run = run_train(cfg, &std::cerr);
      std::cout << "checkpoint " << run.checkpoint_path << '\n';
    } else if (*parse_cmd) {
      const ExperimentConfig cfg = resolve_config(parse_args);
      const ParseRun run = run_parse(cfg, parse_ckpt);
      std::cout << "parsed " << run.predictions.size() << " sentences into "
                << (fs::path(resolve_output_dir(cfg)) / "predictions.jsonl").string() << '\n';
    } else if (*evaluate) {
      const EvaluateRun run = run_evaluate(ev_pred, ev_gold, output_dir(ev_out), ev_perm);
      std::cout << "sentences " << run.metrics.sentences << " S-F1 " << run.metrics.sentence_f1 << " C-F1 "
                << run.metrics.corpus_f1 << '\n';
      if (run.perm_metrics)
        std::cout << "perm S-F1 " << run.perm_metrics->sentence_f1 << " C-F1 " << run.perm_metrics->corpus_f1 << '\n';
    } else if (*overlap) {
      std::optional<Vocabulary> vocab;
      if (!ov_vocab.empty()) vocab = Vocabulary::read(ov_vocab);
      const OverlapReport rep = run_analyze_overlap(ov_train, ov_test, output_dir(ov_out), vocab ? &*vocab : nullptr);
      for (const auto &[k, r] : rep) std::cout << k << " type " << r.type_rate << " instance " << r.instance_rate << '\n';
    } else if (*errors) {
      const ErrorBucketTable t = run_analyze_errors(er_pred, er_gold, er_width, output_dir(er_out));
      std::cout << "buckets " << t.rows.size() << '\n';
    } else if (*signif) {
      const PairedTestResult r = run_significance(sg_csv, sg_a, sg_b, output_dir(sg_out));
      std::cout << "n " << r.n << " mean_diff " << r.mean_diff << " t " << r.t_stat << " p " << r.p_value << '\n';
    } else if (*sample) {
      const SyntheticGrammar g = toy_grammar(sc_grammar_seed);
      const SyntheticCorpus c = sample_corpus(g, sc_count, sc_min, sc_max, sc_seed);
      const std::string dir = output_dir(sc_out);
      fs::create_directories(dir);
      std::ofstream text((fs::path(dir) / "sentences.txt").string());
      std::vector<std::string> ids;
      for (std::size_t k = 0; k < c.samples.size(); ++k) {
        const auto &toks = c.samples[k].sentence.raw_tokens;
        for (std::size_t t = 0; t < toks.size(); ++t) text << (t ? " " : "") << toks[t];
        text << '\n';
        ids.push_back(std::to_string(k));
      }
      write_treebank((fs::path(dir) / "trees.mrg").string(), c.trees);
      write_image_vectors((fs::path(dir) / "images.tsv").string(), synthetic_images(g, c, sc_noise, sc_image_seed, ids));
      std::cout << "wrote " << c.samples.size() << " samples to " << dir << '\n';
    }
  } catch (const ConfigError &e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError &e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const DegenerateInputError &e) {
    std::cerr << "degenerate input: " << e.what() << '\n';
    return kExitData;
  } catch (const DegenerateTestError &e) {
    std::cerr << "degenerate test: " << e.what() << '\n';
    return kExitData;
  } catch (const StructuralError &e) {
    std::cerr << "structural error: " << e.what() << '\n';
    return kExitData;
  } catch (const NoParseError &e) {
    std::cerr << "no parse: " << e.what() << '\n';
    return kExitData;
  } catch (const TrainingFault &e) {
    std::cerr << "training fault: " << e.what() << '\n';
    return kExitData;
  }
  return 0;
}
