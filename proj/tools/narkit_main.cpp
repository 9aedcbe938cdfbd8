// Command-line entry point: corpus generation, training, distillation,
// decoding, evaluation, and the AR-head-depth ablation. Every command is
// reproducible from (arguments, config file, seed) alone.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "narkit/config.hpp"
#include "narkit/data.hpp"
#include "narkit/metrics.hpp"
#include "narkit/train.hpp"

namespace {

using namespace narkit;

std::vector<TokenLine> load_token_lines(const std::string& path) {
  std::ifstream is(path);
  detail::require(is.good(), "cannot open " + path);
  std::vector<TokenLine> lines;
  std::string line;
  while (std::getline(is, line)) lines.push_back(split_tokens(line));
  return lines;
}

void write_token_lines(const std::vector<TokenLine>& lines, const std::string& path) {
  std::ofstream os(path);
  detail::require(os.good(), "cannot open " + path + " for writing");
  for (const auto& l : lines) os << join_tokens(l) << "\n";
}

std::vector<long> parse_int_list(const std::string& csv) {
  std::vector<long> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stol(item));
  }
  return out;
}

Config load_config(const std::string& path, const std::vector<std::string>& overrides) {
  Config cfg;
  if (!path.empty()) cfg.parse_file(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    detail::require(eq != std::string::npos, "--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

int cmd_gen_data(const std::string& task, int vocab_size, int n, int len_min, int len_max,
                 std::uint64_t seed, const std::string& out, const std::string& split) {
  SyntheticTaskSpec spec;
  spec.task = parse_task(task);
  spec.vocab_size = vocab_size;
  spec.n_pairs = n;
  spec.len_min = len_min;
  spec.len_max = len_max;
  spec.seed = seed;
  const ParallelCorpus corpus = generate(spec);
  if (split.empty()) {
    save_corpus(corpus, out + ".src", out + ".tgt");
    std::cout << "wrote " << corpus.size() << " pairs to " << out << ".{src,tgt}\n";
    return 0;
  }
  const std::vector<long> counts = parse_int_list(split);
  detail::require(counts.size() == 3, "--split expects train,dev,test counts");
  detail::require(counts[0] + counts[1] + counts[2] <= static_cast<long>(corpus.size()),
                  "--split asks for more pairs than generated");
  const char* names[] = {"train", "dev", "test"};
  std::size_t at = 0;
  for (int part = 0; part < 3; ++part) {
    ParallelCorpus slice;
    for (long i = 0; i < counts[static_cast<std::size_t>(part)]; ++i, ++at) {
      slice.src.push_back(corpus.src[at]);
      slice.tgt.push_back(corpus.tgt[at]);
    }
    save_corpus(slice, out + "." + names[part] + ".src", out + "." + names[part] + ".tgt");
    std::cout << "wrote " << slice.size() << " pairs to " << out << "." << names[part]
              << ".{src,tgt}\n";
  }
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_prefix,
              const std::string& out_dir, const std::vector<std::string>& overrides) {
  const Config cfg = load_config(config_path, overrides);
  const TrainResult res = train_from_files(cfg, data_prefix, out_dir);
  std::cout << "final checkpoint: " << res.final_path << "\n";
  std::cout << "averaged best-" << res.kept_paths.size() << ": " << res.averaged_path << "\n";
  std::cout << "best dev BLEU: " << res.best_dev_bleu << "\n";
  if (res.skipped_samples > 0)
    std::cout << "skipped unrepresentable samples: " << res.skipped_samples << "\n";
  return 0;
}

int cmd_distill(const std::string& teacher_path, const std::string& data_prefix, int beam,
                const std::string& out) {
  const Checkpoint teacher = load_checkpoint(teacher_path);
  const ParallelCorpus corpus = load_corpus(data_prefix + ".src", data_prefix + ".tgt");
  const ParallelCorpus distilled = distill(teacher, corpus, beam);
  save_corpus(distilled, out + ".src", out + ".tgt");
  std::cout << "wrote " << distilled.size() << " distilled pairs to " << out << ".{src,tgt}\n";
  return 0;
}

int cmd_decode(const std::string& ckpt_path, const std::string& src_path, const std::string& mode,
               int beam_size, const std::string& out) {
  detail::require(mode == "greedy" || mode == "beam", "--mode must be greedy or beam");
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const std::vector<TokenLine> src = load_token_lines(src_path);
  const std::vector<TokenLine> hyps =
      decode_lines(ckpt, src, mode == "beam" ? DecodeMode::beam : DecodeMode::greedy, beam_size);
  write_token_lines(hyps, out);
  std::cout << "wrote " << hyps.size() << " hypotheses to " << out << "\n";
  return 0;
}

int cmd_eval(const std::string& hyp_path, const std::string& ref_path, const std::string& report,
             const std::string& out) {
  const std::vector<TokenLine> hyps = load_token_lines(hyp_path);
  const std::vector<TokenLine> refs = load_token_lines(ref_path);
  std::ostringstream os;
  std::stringstream parts(report);
  std::string metric;
  while (std::getline(parts, metric, ',')) {
    if (metric == "bleu") {
      os << "metric=bleu value=" << bleu(hyps, refs) << " n_sentences=" << refs.size() << "\n";
    } else if (metric == "repetition") {
      os << "metric=repetition value=" << repetition_rate(hyps) << " n_sentences=" << refs.size()
         << "\n";
    } else if (metric == "length-buckets") {
      for (const LengthBucket& b : length_bucket_report(hyps, refs))
        os << "metric=bleu bucket=" << b.label() << " value=" << b.bleu
           << " n_sentences=" << b.n_sentences << "\n";
    } else {
      detail::fail("unknown report '" + metric + "' (bleu, repetition, length-buckets)");
    }
  }
  std::cout << os.str();
  if (!out.empty()) {
    std::ofstream f(out);
    detail::require(f.good(), "cannot open " + out + " for writing");
    f << os.str();
  }
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& data_prefix,
               const std::string& depths_csv, const std::string& out_dir,
               const std::vector<std::string>& overrides) {
  const std::vector<long> depths = parse_int_list(depths_csv);
  detail::require(!depths.empty(), "--depths expects a comma-separated list, e.g. 1,3,6");
  std::filesystem::create_directories(out_dir);
  std::ofstream report(out_dir + "/ablation.log");
  detail::require(report.good(), "cannot open " + out_dir + "/ablation.log");
  for (long depth : depths) {
    Config cfg = load_config(config_path, overrides);
    cfg.set("mtl.enabled", "true");
    cfg.set("mtl.ar_head_depth", std::to_string(depth));
    const std::string run_dir = out_dir + "/depth" + std::to_string(depth);
    const TrainResult res = train_from_files(cfg, data_prefix, run_dir);
    report << "depth=" << depth << " best_dev_bleu=" << res.best_dev_bleu
           << " ckpt=" << res.averaged_path << "\n";
    report.flush();
    std::cout << "depth " << depth << ": best dev BLEU " << res.best_dev_bleu << "\n";
  }
  std::cout << "report: " << out_dir << "/ablation.log\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"narkit: weak-AR-head multi-task training for NAR translation models"};
  app.require_subcommand(1);

  // gen-data
  std::string task = "copy", gen_out, split;
  int vocab_size = 32, n_pairs = 1000, len_min = 4, len_max = 16;
  std::uint64_t seed = 0;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic parallel corpus");
  gen->add_option("--task", task, "copy | reverse | two_mode_reorder | toy_translation");
  gen->add_option("--vocab-size", vocab_size, "total vocab including reserved ids");
  gen->add_option("--n", n_pairs, "number of pairs");
  gen->add_option("--len-min", len_min);
  gen->add_option("--len-max", len_max);
  gen->add_option("--seed", seed);
  gen->add_option("--out", gen_out, "output prefix")->required();
  gen->add_option("--split", split, "train,dev,test counts (writes <out>.<part>.{src,tgt})");

  // train
  std::string config_path, data_prefix, out_dir;
  std::vector<std::string> overrides;
  auto* train_cmd = app.add_subcommand("train", "train a model (variant from config)");
  train_cmd->add_option("--config", config_path, "config file (section.key = value)");
  train_cmd->add_option("--data", data_prefix, "prefix with .train/.dev .src/.tgt files")->required();
  train_cmd->add_option("--out", out_dir, "output directory")->required();
  train_cmd->add_option("--set", overrides, "override, e.g. --set mtl.enabled=true");

  // distill
  std::string teacher_path, distill_data, distill_out;
  int distill_beam = 5;
  auto* dis = app.add_subcommand("distill", "replace targets with teacher beam outputs");
  dis->add_option("--teacher", teacher_path, "teacher checkpoint")->required();
  dis->add_option("--data", distill_data, "corpus prefix (.src/.tgt)")->required();
  dis->add_option("--beam", distill_beam);
  dis->add_option("--out", distill_out, "output corpus prefix")->required();

  // decode
  std::string ckpt_path, src_path, mode = "greedy", decode_out;
  int beam_size = 20;
  auto* dec = app.add_subcommand("decode", "decode a source file (AR heads stripped on load)");
  dec->add_option("--ckpt", ckpt_path)->required();
  dec->add_option("--src", src_path)->required();
  dec->add_option("--mode", mode, "greedy | beam");
  dec->add_option("--beam-size", beam_size);
  dec->add_option("--out", decode_out)->required();

  // eval
  std::string hyp_path, ref_path, report = "bleu", eval_out;
  auto* ev = app.add_subcommand("eval", "score hypotheses against references");
  ev->add_option("--hyp", hyp_path)->required();
  ev->add_option("--ref", ref_path)->required();
  ev->add_option("--report", report, "comma list: bleu,repetition,length-buckets");
  ev->add_option("--out", eval_out, "also write the report here");

  // ablate-ar-depth
  std::string depths = "1,3,6";
  std::string ablate_config, ablate_data, ablate_out;
  std::vector<std::string> ablate_overrides;
  auto* ab = app.add_subcommand("ablate-ar-depth", "train once per AR-head depth");
  ab->add_option("--config", ablate_config);
  ab->add_option("--data", ablate_data)->required();
  ab->add_option("--depths", depths);
  ab->add_option("--out", ablate_out)->required();
  ab->add_option("--set", ablate_overrides, "config override");

  // show-config
  std::string show_path;
  auto* show = app.add_subcommand("show-config", "print every effective config value");
  show->add_option("--config", show_path, "optional config file to merge");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_gen_data(task, vocab_size, n_pairs, len_min, len_max, seed, gen_out, split);
    if (train_cmd->parsed()) return cmd_train(config_path, data_prefix, out_dir, overrides);
    if (dis->parsed()) return cmd_distill(teacher_path, distill_data, distill_beam, distill_out);
    if (dec->parsed()) return cmd_decode(ckpt_path, src_path, mode, beam_size, decode_out);
    if (ev->parsed()) return cmd_eval(hyp_path, ref_path, report, eval_out);
    if (ab->parsed())
      return cmd_ablate(ablate_config, ablate_data, depths, ablate_out, ablate_overrides);
    if (show->parsed()) {
      Config cfg;
      if (!show_path.empty()) cfg.parse_file(show_path);
      cfg.dump(std::cout);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
