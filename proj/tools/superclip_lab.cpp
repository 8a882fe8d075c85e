// superclip-lab: one entry point wiring data generation, training,
// evaluation, corpus statistics, FLOPs reports and ablation suites.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "sclab/eval.hpp"
#include "sclab/flops.hpp"
#include "sclab/training.hpp"

namespace fs = std::filesystem;
using namespace sclab;

namespace {

std::string output_root() {
  const char* env = std::getenv("SUPERCLIP_LAB_OUT");
  return env && *env ? env : "out";
}

std::string resolve_out(const std::string& flag, const std::string& def_name) {
  if (!flag.empty()) return flag;
  return output_root() + "/" + def_name;
}

void finish_manifest(cfg::RunManifest& m, const std::string& dir) {
  m.finished_at = cfg::now_iso8601();
  cfg::write_manifest((fs::path(dir) / "run.manifest").string(), m);
}

// ---- gen-data -------------------------------------------------------------

int cmd_gen_data(const std::string& config_path, std::int64_t seed_flag,
                 const std::string& out_flag) {
  cfg::KvConfig kv = config_path.empty() ? cfg::KvConfig()
                                         : cfg::KvConfig::parse_file(config_path);
  if (seed_flag >= 0) kv.set("seed", std::to_string(seed_flag));
  const worlds::WorldSpec spec = worlds::WorldSpec::from_config(kv);
  kv.reject_unknown();

  const std::string out = resolve_out(out_flag, "dataset");
  cfg::RunManifest m;
  m.command = "gen-data";
  m.config_echo = spec.echo();
  m.seed = spec.seed;
  m.input_hash = fnv1a(spec.echo());
  m.started_at = cfg::now_iso8601();

  worlds::build_dataset(spec, out);
  m.artifacts = {out + "/train", out + "/eval", out + "/manifest"};
  finish_manifest(m, out);
  std::cout << "dataset written to " << out << " (train " << spec.n_train
            << ", eval " << spec.n_eval << ")\n";
  return 0;
}

// ---- train ----------------------------------------------------------------

int cmd_train(const std::string& config_path, std::int64_t seed_flag,
              const std::string& out_flag) {
  if (config_path.empty()) throw ParseError("train: --config is required");
  cfg::KvConfig kv = cfg::KvConfig::parse_file(config_path);
  if (seed_flag >= 0) kv.set("seed", std::to_string(seed_flag));
  const std::string data_dir = kv.require_string("data");
  const train::TrainConfig cfg = train::TrainConfig::from_config(kv);
  kv.reject_unknown();

  const worlds::Dataset dataset = worlds::load_dataset(data_dir + "/train");
  const std::string out = resolve_out(out_flag, "train");
  fs::create_directories(out);

  cfg::RunManifest m;
  m.command = "train";
  m.config_echo = kv.echo();
  m.seed = cfg.seed;
  m.input_hash = kv.content_hash();
  m.started_at = cfg::now_iso8601();

  const train::TrainResult r = train::run_training(cfg, dataset);

  enc::save_checkpoint(out + "/checkpoint", r.params);
  text::save_vocab(out + "/checkpoint/vocab.txt", r.vocab);
  {
    std::ofstream metrics(out + "/metrics.csv");
    if (!metrics) throw IoError("cannot write metrics.csv in " + out);
    train::write_metrics_csv(metrics, r.metrics);
  }
  {
    // document frequency over the classification-route captions
    std::vector<std::string> class_captions;
    for (const auto& s : dataset.samples)
      class_captions.push_back(train::route_captions(s, cfg.caption_mode).classification);
    const text::DfTable df = text::document_frequency(class_captions, r.vocab);
    std::ofstream idf(out + "/df_idf.csv");
    text::write_df_idf_csv(idf, r.vocab, df, r.idf);
  }
  m.artifacts = {out + "/checkpoint", out + "/metrics.csv", out + "/df_idf.csv"};
  finish_manifest(m, out);
  std::cout << "trained " << train::objective_name(cfg.objective) << " for "
            << cfg.steps << " steps; final l_total " << r.metrics.back().l_total
            << "\n";
  return 0;
}

// ---- eval -----------------------------------------------------------------

struct EvalOutcome {
  double zeroshot = 0.0;
  eval::RecallReport recall;
  std::map<std::string, double> pair_acc;
};

EvalOutcome evaluate_model(const enc::ModelParams& params,
                           const text::Vocabulary& vocab,
                           const worlds::Dataset& data, std::size_t n_pairs,
                           std::uint64_t seed,
                           const std::vector<std::string>& axes) {
  EvalOutcome out;
  const Tensor img = eval::embed_images(params, data);

  std::vector<std::string> captions;
  std::vector<std::size_t> labels;
  for (const auto& s : data.samples) {
    captions.push_back(s.short_caption);
    labels.push_back(s.scene.object);
  }
  const Tensor txt = eval::embed_texts(params, vocab, captions);

  std::vector<std::size_t> ks;
  for (std::size_t k : {1ul, 5ul, 10ul})
    if (k <= data.samples.size()) ks.push_back(k);
  out.recall = eval::retrieval_recall(img, txt, ks);
  out.zeroshot =
      eval::zero_shot_classify(params, vocab, data.inv.objects, img, labels)
          .accuracy;

  worlds::WorldSpec pair_spec;
  pair_spec.inv = data.inv;
  pair_spec.image_size = data.image_size;
  pair_spec.attribute_rate = 1.0;
  pair_spec.seed = seed;
  const worlds::World world(pair_spec);
  std::vector<worlds::ContrastPair> pairs;
  for (const auto& axis : axes) {
    const auto p = world.contrast_pairs(axis, n_pairs, seed);
    pairs.insert(pairs.end(), p.begin(), p.end());
  }
  out.pair_acc = eval::pair_discrimination(params, vocab, pairs);
  return out;
}

int cmd_eval(const std::string& checkpoint_dir, const std::string& data_dir,
             std::int64_t seed_flag, const std::string& out_flag,
             std::size_t n_pairs, std::uint64_t min_freq) {
  if (checkpoint_dir.empty() || data_dir.empty())
    throw ParseError("eval: --checkpoint and --data are required");
  const std::uint64_t seed = seed_flag >= 0 ? static_cast<std::uint64_t>(seed_flag) : 0;

  const enc::ModelParams params = enc::load_checkpoint(checkpoint_dir);
  const text::Vocabulary vocab = text::load_vocab(checkpoint_dir + "/vocab.txt");
  const worlds::Dataset data = worlds::load_dataset(data_dir + "/eval");
  if (data.image_size != params.config.image_size)
    throw ShapeError("eval: checkpoint image size " +
                     std::to_string(params.config.image_size) +
                     " does not match dataset " + std::to_string(data.image_size));

  const std::string out = resolve_out(out_flag, "eval");
  fs::create_directories(out);
  cfg::RunManifest m;
  m.command = "eval";
  m.config_echo = "checkpoint = " + checkpoint_dir + "\ndata = " + data_dir + "\n";
  m.seed = seed;
  m.input_hash = fnv1a(m.config_echo);
  m.started_at = cfg::now_iso8601();

  const std::vector<std::string> axes = {"object", "color", "state", "relation",
                                         "context"};
  const EvalOutcome o = evaluate_model(params, vocab, data, n_pairs, seed, axes);
  const eval::WordSimStats ws =
      eval::word_image_similarity(params, vocab, data, min_freq);

  {
    std::ofstream f(out + "/eval_summary.txt");
    if (!f) throw IoError("cannot write eval_summary.txt in " + out);
    f.precision(10);
    f << "zeroshot_acc: " << o.zeroshot << "\n";
    for (const auto& [k, r] : o.recall.image_to_text)
      f << "recall@" << k << "_image_to_text: " << r << "\n";
    for (const auto& [k, r] : o.recall.text_to_image)
      f << "recall@" << k << "_text_to_image: " << r << "\n";
    for (const auto& [axis, acc] : o.pair_acc)
      f << "pair_disc_" << axis << ": " << acc << "\n";
    eval::write_wordsim_summary(f, ws);
  }
  {
    std::ofstream f(out + "/wordsim.csv");
    eval::write_wordsim_csv(f, ws);
  }
  m.artifacts = {out + "/eval_summary.txt", out + "/wordsim.csv"};
  finish_manifest(m, out);
  std::cout << "zeroshot_acc " << o.zeroshot << "; reports in " << out << "\n";
  return 0;
}

// ---- ablate ---------------------------------------------------------------

struct AblateRun {
  std::string variant;
  std::uint64_t seed = 0;
  train::TrainConfig cfg;
};

struct AblateRow {
  std::string variant;
  std::uint64_t seed = 0;
  double zeroshot = 0.0;
  double pair_state = 0.0;
  double pair_relation = 0.0;
  double recall1 = 0.0;
  double final_l_total = 0.0;
};

int cmd_ablate(const std::string& suite, const std::string& config_path,
               std::int64_t seed_flag, const std::string& out_flag,
               std::size_t jobs, std::size_t n_seeds) {
  if (config_path.empty()) throw ParseError("ablate: --config is required");
  if (jobs < 1) throw ParseError("ablate: --jobs must be >= 1");
  if (n_seeds < 1) throw ParseError("ablate: need at least one seed");

  cfg::KvConfig kv = cfg::KvConfig::parse_file(config_path);
  if (seed_flag >= 0) kv.set("seed", std::to_string(seed_flag));
  const std::string data_dir = kv.require_string("data");
  const train::TrainConfig base = train::TrainConfig::from_config(kv);
  kv.reject_unknown();

  std::vector<AblateRun> runs;
  auto add = [&](const std::string& variant, auto mutate) {
    for (std::size_t s = 0; s < n_seeds; ++s) {
      AblateRun r;
      r.variant = variant;
      r.seed = base.seed + s;
      r.cfg = base;
      r.cfg.seed = r.seed;
      mutate(r.cfg);
      runs.push_back(std::move(r));
    }
  };
  if (suite == "lambda") {
    for (double lam : {0.4, 0.6, 1.0, 1.4, 1.6}) {
      std::ostringstream name;
      name << "lambda_" << lam;
      add(name.str(), [lam](train::TrainConfig& c) {
        c.objective = train::Objective::kSuperClip;
        c.lambda = lam;
      });
    }
  } else if (suite == "idf") {
    add("idf_on", [](train::TrainConfig& c) {
      c.objective = train::Objective::kSuperClip;
      c.use_idf = true;
    });
    add("idf_off", [](train::TrainConfig& c) {
      c.objective = train::Objective::kSuperClip;
      c.use_idf = false;
    });
  } else if (suite == "batch_size") {
    for (std::size_t bs : {8ul, 32ul, 128ul, 512ul})
      for (train::Objective o :
           {train::Objective::kClip, train::Objective::kSuperClip})
        add(train::objective_name(o) + "_b" + std::to_string(bs),
            [bs, o](train::TrainConfig& c) {
              c.objective = o;
              c.batch_size = bs;
            });
  } else {
    throw ParseError("ablate: unknown suite '" + suite +
                     "' (expected lambda|idf|batch_size)");
  }

  const worlds::Dataset train_data = worlds::load_dataset(data_dir + "/train");
  const worlds::Dataset eval_data = worlds::load_dataset(data_dir + "/eval");

  const std::string out = resolve_out(out_flag, "ablate_" + suite);
  fs::create_directories(out);
  cfg::RunManifest m;
  m.command = "ablate " + suite;
  m.config_echo = kv.echo();
  m.seed = base.seed;
  m.input_hash = kv.content_hash();
  m.started_at = cfg::now_iso8601();

  std::vector<AblateRow> rows(runs.size());
  std::mutex log_mutex;
  std::size_t next = 0;
  std::mutex next_mutex;
  std::exception_ptr first_error;
  auto worker_body = [&]() {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard<std::mutex> lock(next_mutex);
        if (next >= runs.size()) return;
        i = next++;
      }
      const AblateRun& r = runs[i];
      const train::TrainResult t = train::run_training(r.cfg, train_data);
      // each run gets an isolated output directory
      const std::string run_dir =
          out + "/runs/" + r.variant + "_s" + std::to_string(r.seed);
      fs::create_directories(run_dir);
      {
        std::ofstream metrics(run_dir + "/metrics.csv");
        if (!metrics) throw IoError("cannot write metrics.csv in " + run_dir);
        train::write_metrics_csv(metrics, t.metrics);
      }
      const EvalOutcome o = evaluate_model(t.params, t.vocab, eval_data, 32,
                                           r.seed, {"state", "relation"});
      AblateRow row;
      row.variant = r.variant;
      row.seed = r.seed;
      row.zeroshot = o.zeroshot;
      row.pair_state = o.pair_acc.at("state");
      row.pair_relation = o.pair_acc.at("relation");
      row.recall1 = o.recall.image_to_text.at(1);
      row.final_l_total = t.metrics.back().l_total;
      rows[i] = row;
      std::lock_guard<std::mutex> lock(log_mutex);
      std::cout << r.variant << " seed " << r.seed << ": zeroshot "
                << row.zeroshot << ", pair state " << row.pair_state << "\n";
    }
  };
  auto worker = [&]() {
    try {
      worker_body();
    } catch (...) {
      std::lock_guard<std::mutex> lock(next_mutex);
      if (!first_error) first_error = std::current_exception();
      next = runs.size();  // stop handing out work
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  {
    std::ofstream f(out + "/runs.csv");
    if (!f) throw IoError("cannot write runs.csv in " + out);
    f.precision(17);
    f << "suite,variant,seed,zeroshot,pair_state,pair_relation,recall1,final_l_total\n";
    for (const auto& r : rows)
      f << suite << ',' << r.variant << ',' << r.seed << ',' << r.zeroshot << ','
        << r.pair_state << ',' << r.pair_relation << ',' << r.recall1 << ','
        << r.final_l_total << '\n';
  }
  {
    std::ofstream f(out + "/summary.csv");
    f.precision(17);
    f << "suite,variant,metric,mean,std\n";
    std::vector<std::string> variants;
    for (const auto& r : rows)
      if (std::find(variants.begin(), variants.end(), r.variant) == variants.end())
        variants.push_back(r.variant);
    auto emit = [&](const std::string& variant, const std::string& metric,
                    auto getter) {
      double mean = 0.0;
      std::size_t n = 0;
      for (const auto& r : rows)
        if (r.variant == variant) {
          mean += getter(r);
          ++n;
        }
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (const auto& r : rows)
        if (r.variant == variant)
          var += (getter(r) - mean) * (getter(r) - mean);
      f << suite << ',' << variant << ',' << metric << ',' << mean << ','
        << std::sqrt(var / static_cast<double>(n)) << '\n';
    };
    for (const auto& v : variants) {
      emit(v, "zeroshot", [](const AblateRow& r) { return r.zeroshot; });
      emit(v, "pair_state", [](const AblateRow& r) { return r.pair_state; });
      emit(v, "pair_relation", [](const AblateRow& r) { return r.pair_relation; });
      emit(v, "recall1", [](const AblateRow& r) { return r.recall1; });
      emit(v, "final_l_total", [](const AblateRow& r) { return r.final_l_total; });
    }
  }
  m.artifacts = {out + "/runs.csv", out + "/summary.csv"};
  finish_manifest(m, out);
  std::cout << "suite " << suite << ": " << runs.size() << " runs; results in "
            << out << "\n";
  return 0;
}

// ---- corpus-stats ---------------------------------------------------------

int cmd_corpus_stats(const std::vector<std::string>& corpora,
                     const std::string& query_path, bool idf_mode,
                     std::size_t max_vocab, const std::string& out_flag) {
  if (corpora.empty()) throw ParseError("corpus-stats: need at least one corpus file");
  if (idf_mode == !query_path.empty())
    throw ParseError("corpus-stats: pass exactly one of --query or --idf");

  std::ostringstream table;
  if (idf_mode) {
    std::vector<std::string> all;
    for (const auto& path : corpora) {
      const auto shard = text::read_caption_shard(path);
      all.insert(all.end(), shard.begin(), shard.end());
    }
    const text::Vocabulary vocab = text::build_vocab(all, max_vocab);
    const text::DfTable df = text::df_sharded(corpora, vocab);
    const text::IdfTable idf = text::idf_weights(df);
    text::write_df_idf_csv(table, vocab, df, idf);
  } else {
    const text::CooccurrenceQuery query = text::parse_query_file(query_path);
    if (query.groups.empty())
      throw ParseError("corpus-stats: query file has no groups: " + query_path);
    const text::CooccurrenceResult r = text::cooccurrence_sharded(corpora, query);
    table.precision(17);
    table << "matches,corpus_size,percentage\n";
    table << r.matches << ',' << r.corpus_size << ',' << r.percentage << '\n';
  }

  std::cout << table.str();
  if (!out_flag.empty()) {
    fs::create_directories(out_flag);
    const std::string file =
        out_flag + (idf_mode ? "/df_idf.csv" : "/cooccurrence.csv");
    std::ofstream f(file);
    if (!f) throw IoError("cannot write " + file);
    f << table.str();
  }
  return 0;
}

// ---- flops ----------------------------------------------------------------

int cmd_flops(const std::string& size, std::uint64_t batch,
              std::int64_t vocab_override, std::int64_t embed_override,
              const std::string& out_flag) {
  flops::ModelDims dims;
  if (size == "B")
    dims = flops::model_b();
  else if (size == "L")
    dims = flops::model_l();
  else
    throw ParseError("flops: --size must be B or L");
  if (vocab_override >= 0) dims.vocab = static_cast<std::size_t>(vocab_override);
  if (embed_override >= 0) {
    dims.embed_dim = static_cast<std::size_t>(embed_override);
    dims.vision.proj_dim = dims.embed_dim;
    dims.text.proj_dim = dims.embed_dim;
  }
  const flops::FlopsReport r = flops::report(dims, batch);
  flops::write_report_text(std::cout, r);
  if (!out_flag.empty()) {
    fs::create_directories(out_flag);
    std::ofstream txt(out_flag + "/flops.txt"), csv(out_flag + "/flops.csv");
    flops::write_report_text(txt, r);
    flops::write_report_csv(csv, r);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"superclip-lab: contrastive + token-classification training laboratory"};
  app.require_subcommand(1);

  std::string config_path, out_flag, checkpoint_dir, data_dir, suite, query_path;
  std::vector<std::string> corpora;
  std::int64_t seed_flag = -1, vocab_override = -1, embed_override = -1;
  std::size_t jobs = 1, n_seeds = 5, n_pairs = 50;
  std::uint64_t min_freq = 20, batch = 16384;
  std::size_t max_vocab = 4096;
  bool idf_mode = false;
  std::string size = "L";

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--config", config_path, "world spec file");
  gen->add_option("--seed", seed_flag, "seed override");
  gen->add_option("--out", out_flag, "output directory");

  auto* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--config", config_path, "training config file");
  tr->add_option("--seed", seed_flag, "seed override");
  tr->add_option("--out", out_flag, "output directory");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--checkpoint", checkpoint_dir, "checkpoint directory");
  ev->add_option("--data", data_dir, "dataset root directory");
  ev->add_option("--seed", seed_flag, "seed for contrast pairs");
  ev->add_option("--out", out_flag, "output directory");
  ev->add_option("--pairs", n_pairs, "contrast pairs per axis");
  ev->add_option("--min-freq", min_freq, "word frequency filter");

  auto* ab = app.add_subcommand("ablate", "run an ablation suite");
  ab->add_option("--suite", suite, "lambda | idf | batch_size")->required();
  ab->add_option("--config", config_path, "base training config file");
  ab->add_option("--seed", seed_flag, "base seed override");
  ab->add_option("--jobs", jobs, "concurrent runs");
  ab->add_option("--seeds", n_seeds, "seeds per variant");
  ab->add_option("--out", out_flag, "output directory");

  auto* cs = app.add_subcommand("corpus-stats", "corpus statistics");
  cs->add_option("corpus", corpora, "caption shard file(s)");
  cs->add_option("--query", query_path, "co-occurrence query file");
  cs->add_flag("--idf", idf_mode, "emit the df/idf table");
  cs->add_option("--max-vocab", max_vocab, "vocabulary cap for --idf");
  cs->add_option("--out", out_flag, "output directory");

  auto* fl = app.add_subcommand("flops", "analytic cost report");
  fl->add_option("--size", size, "model size: B or L");
  fl->add_option("--batch", batch, "batch size B");
  fl->add_option("--vocab", vocab_override, "vocabulary size C override");
  fl->add_option("--embed", embed_override, "embedding dim D override");
  fl->add_option("--out", out_flag, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config_path, seed_flag, out_flag);
    if (tr->parsed()) return cmd_train(config_path, seed_flag, out_flag);
    if (ev->parsed())
      return cmd_eval(checkpoint_dir, data_dir, seed_flag, out_flag, n_pairs,
                      min_freq);
    if (ab->parsed())
      return cmd_ablate(suite, config_path, seed_flag, out_flag, jobs, n_seeds);
    if (cs->parsed())
      return cmd_corpus_stats(corpora, query_path, idf_mode, max_vocab, out_flag);
    if (fl->parsed())
      return cmd_flops(size, batch, vocab_override, embed_override, out_flag);
    std::cerr << "error: no subcommand\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
