#define DOCTEST_CONFIG_IMPLEMENT
#include <CLI11.hpp>
#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "maaf/config.hpp"
#include "maaf/eval.hpp"
#include "maaf/training.hpp"
#include "maaf/verify.hpp"

namespace fs = std::filesystem;

namespace {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

maaf::RunConfig load_cfg(const std::string& path,
                         const std::vector<std::string>& sets) {
  try {
    std::ifstream in(path);
    if (!in) throw maaf::Error("config: cannot open " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw maaf::Error("config: parse error in " + path + ": " + e.what());
    }
    for (const auto& s : sets) maaf::apply_override(j, s);
    return maaf::run_config_from_json(j);
  } catch (const maaf::Error& e) {
    throw ConfigError(e.what());
  }
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

int cmd_gen_data(const std::string& out, std::size_t n_train,
                 std::size_t n_test, std::uint64_t seed) {
  maaf::gen_dataset(n_train, n_test, seed, out);
  nlohmann::ordered_json j;
  j["out_dir"] = out;
  j["train"] = n_train;
  j["test"] = n_test;
  j["seed"] = seed;
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_train(const std::string& config_path,
              const std::vector<std::string>& sets,
              const std::string& resume, std::int64_t seed_override) {
  maaf::RunConfig cfg;
  maaf::Model model;
  maaf::OptimizerState opt;
  maaf::Rng rng(0);
  int start_step = 0;
  if (!resume.empty()) {
    maaf::LoadedCheckpoint lc = maaf::load_checkpoint(resume);
    cfg = lc.run_cfg;
    if (!sets.empty()) {
      try {
        nlohmann::json j = maaf::run_config_to_json(cfg);
        for (const auto& s : sets) maaf::apply_override(j, s);
        cfg = maaf::run_config_from_json(j);
      } catch (const maaf::Error& e) {
        throw ConfigError(e.what());
      }
    }
    model = std::move(lc.model);
    opt = std::move(lc.opt);
    rng = lc.rng;
    start_step = lc.step;
  } else {
    if (config_path.empty()) throw ConfigError("config: --config required");
    cfg = load_cfg(config_path, sets);
    if (seed_override >= 0)
      cfg.train.seed = static_cast<std::uint64_t>(seed_override);
    const fs::path vocab_path =
        fs::path(cfg.data.train_manifest).parent_path() / "vocab.txt";
    maaf::Vocabulary vocab = maaf::Vocabulary::load(vocab_path.string());
    rng.reseed(cfg.train.seed);
    model = maaf::build_model(cfg.model, vocab, rng);
    opt = maaf::make_optimizer_state(model);
  }

  maaf::DatasetManifest data = maaf::load_manifest(cfg.data.train_manifest);
  fs::create_directories(cfg.data.out_dir);
  const std::string metrics =
      (fs::path(cfg.data.out_dir) / "metrics.jsonl").string();
  const std::string ckpt =
      (fs::path(cfg.data.out_dir) / "model.ckpt").string();

  maaf::TrainStatus st =
      maaf::train(model, opt, rng, data, cfg.train, start_step, metrics);
  maaf::save_checkpoint(ckpt, model, opt, cfg, st.step, rng);

  nlohmann::ordered_json j;
  j["steps"] = st.step;
  j["last_loss"] = st.last_loss;
  j["checkpoint"] = ckpt;
  j["metrics"] = metrics;
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, std::string manifest,
             std::vector<int> ks, const std::string& json_out) {
  maaf::LoadedCheckpoint lc = maaf::load_checkpoint(ckpt);
  if (manifest.empty()) manifest = lc.run_cfg.data.eval_manifest;
  if (manifest.empty()) throw ConfigError("config: no eval manifest given");
  if (ks.empty()) ks = {1, 5, 10, 50};
  maaf::DatasetManifest data = maaf::load_manifest(manifest);
  maaf::RecallReport rep = maaf::evaluate_model(
      lc.model, data, ks, nullptr,
      maaf::config_hash(maaf::run_config_to_json(lc.run_cfg)));
  std::cout << maaf::recall_report_table(rep);
  if (!json_out.empty()) {
    std::ofstream out(json_out);
    if (!out) throw maaf::Error("cannot open " + json_out);
    out << maaf::recall_report_json(rep).dump(2) << "\n";
  }
  return 0;
}

int cmd_search(const std::string& ckpt, const std::string& image,
               const std::vector<std::string>& texts,
               const std::string& catalog_dir, int k) {
  maaf::LoadedCheckpoint lc = maaf::load_checkpoint(ckpt);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(catalog_dir)) {
    if (e.path().extension() == ".ppm")
      names.push_back(e.path().filename().string());
  }
  if (names.empty()) throw maaf::Error("no .ppm files in " + catalog_dir);
  std::sort(names.begin(), names.end());

  std::string caption;
  for (const auto& t : texts) {
    if (!caption.empty()) caption += " + ";
    caption += t;
  }
  maaf::FusionCtx ctx;
  maaf::TokenizedCaption tc = maaf::tokenize(caption, lc.model.vocab);
  maaf::Tensor q =
      maaf::embed_query(lc.model, maaf::read_ppm(image), tc, ctx);

  std::vector<std::pair<maaf::real, std::size_t>> ranked;
  for (std::size_t i = 0; i < names.size(); ++i) {
    maaf::Tensor e = maaf::embed_catalog_image(
        lc.model, maaf::read_ppm((fs::path(catalog_dir) / names[i]).string()),
        ctx);
    ranked.emplace_back(maaf::similarity(q, e), i);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) {
                     if (a.first != b.first) return a.first > b.first;
                     return a.second < b.second;
                   });
  const std::size_t n =
      std::min<std::size_t>(std::max(k, 0), ranked.size());
  for (std::size_t i = 0; i < n; ++i) {
    nlohmann::ordered_json j;
    j["rank"] = i + 1;
    j["id"] = names[ranked[i].second];
    j["similarity"] = ranked[i].first;
    std::cout << j.dump() << "\n";
  }
  return 0;
}

int cmd_viz_attn(const std::string& ckpt, const std::string& manifest,
                 const std::string& word, const std::string& group_name,
                 const std::string& mode, const std::string& out_path,
                 int limit) {
  maaf::LoadedCheckpoint lc = maaf::load_checkpoint(ckpt);
  maaf::DatasetManifest data = maaf::load_manifest(manifest);
  maaf::ImageCache cache(data.root);
  const maaf::TokenGroup group = group_name == "fine"
                                     ? maaf::TokenGroup::FineImage
                                     : maaf::TokenGroup::CoarseImage;
  std::vector<std::vector<maaf::real>> grids;
  std::vector<maaf::ImageTensor> images;
  std::size_t gh = 0, gw = 0;
  for (const auto& rec : data.records) {
    if (static_cast<int>(grids.size()) >= limit) break;
    maaf::TokenizedCaption tc = maaf::tokenize(rec.caption, lc.model.vocab);
    if (std::find(tc.words.begin(), tc.words.end(), word) == tc.words.end())
      continue;
    maaf::AttentionCapture cap;
    maaf::FusionCtx ctx;
    ctx.capture = &cap;
    maaf::QueryTrace trace;
    const maaf::ImageTensor img = cache.get(rec.query);
    maaf::embed_query(lc.model, img, tc, ctx, &trace);
    const maaf::HeadWeights& hw = maaf::full_sequence_record(cap, trace);
    for (const auto& m :
         maaf::extract_word_maps(hw, trace, group, tc.words)) {
      if (m.word != word) continue;
      gh = m.h;
      gw = m.w;
      grids.push_back(m.grid);
      images.push_back(img);
    }
  }
  if (grids.empty()) {
    throw maaf::Error("viz-attn: no captions containing \"" + word + "\"");
  }
  const std::size_t H = images[0].height, W = images[0].width;
  if (mode == "modulated") {
    std::vector<std::vector<maaf::real>> up;
    for (const auto& g : grids)
      up.push_back(maaf::upsample_bilinear(g, gh, gw, H, W));
    maaf::ImageTensor img = maaf::modulated_mean_image(up, images);
    maaf::write_ppm_normalized(img, out_path);
  } else {
    std::vector<maaf::real> g = maaf::mean_grid(grids);
    maaf::write_pgm_normalized(maaf::upsample_bilinear(g, gh, gw, H, W), H, W,
                               out_path);
  }
  nlohmann::ordered_json j;
  j["word"] = word;
  j["examples"] = grids.size();
  j["mode"] = mode;
  j["out"] = out_path;
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_gradcheck(int d, int blocks, int heads, int coords) {
  bool ok = maaf::run_gradcheck_ops(std::cout);
  ok = maaf::run_gradcheck_model(std::cout, d, blocks, heads,
                                 static_cast<std::size_t>(coords)) &&
       ok;
  if (!ok) throw maaf::Error("gradcheck failed");
  return 0;
}

int cmd_selftest(int argc, char** argv) {
  doctest::Context ctx;
  ctx.applyCommandLine(argc, argv);
  const int res = ctx.run();
  if (res != 0) throw maaf::Error("selftest failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"image+text retrieval with attention fusion"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker cap (env MAAF_THREADS)")
      ->envname("MAAF_THREADS");

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  std::string gen_out = "data";
  std::size_t n_train = 2000, n_test = 500;
  std::uint64_t gen_seed = 1;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--train", n_train, "training triples");
  gen->add_option("--test", n_test, "test triples");
  gen->add_option("--seed", gen_seed, "generator seed");

  auto* train = app.add_subcommand("train", "train a model");
  std::string config_path, resume;
  std::vector<std::string> sets;
  std::int64_t seed_override = -1;
  train->add_option("--config", config_path, "JSON config file");
  train->add_option("--set", sets, "override, e.g. train.max_steps=100");
  train->add_option("--resume", resume, "checkpoint to resume from");
  train->add_option("--seed", seed_override, "override train.seed");

  auto* ev = app.add_subcommand("eval", "recall report on a manifest");
  std::string ev_ckpt, ev_manifest, ev_json;
  std::vector<int> ev_ks;
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--manifest", ev_manifest, "defaults to the config's eval split");
  ev->add_option("--ks", ev_ks, "recall cutoffs (default 1 5 10 50)");
  ev->add_option("--json-out", ev_json, "also write the report as JSON");

  auto* search = app.add_subcommand("search", "rank a catalog for one query");
  std::string s_ckpt, s_image, s_catalog;
  std::vector<std::string> s_texts;
  int s_k = 10;
  search->add_option("--checkpoint", s_ckpt)->required();
  search->add_option("--image", s_image)->required();
  search->add_option("--text", s_texts, "modifying caption (repeatable)")
      ->required();
  search->add_option("--catalog", s_catalog, "directory of .ppm images")
      ->required();
  search->add_option("-k", s_k, "results to return");

  auto* viz = app.add_subcommand("viz-attn", "aggregated word attention maps");
  std::string v_ckpt, v_manifest, v_word, v_group = "coarse",
                                          v_mode = "mean", v_out;
  int v_limit = 200;
  viz->add_option("--checkpoint", v_ckpt)->required();
  viz->add_option("--manifest", v_manifest)->required();
  viz->add_option("--word", v_word)->required();
  viz->add_option("--group", v_group)
      ->check(CLI::IsMember({"coarse", "fine"}));
  viz->add_option("--mode", v_mode)
      ->check(CLI::IsMember({"mean", "modulated"}));
  viz->add_option("--out", v_out)->required();
  viz->add_option("--limit", v_limit, "max examples to aggregate");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference verification");
  int gc_d = 64, gc_blocks = 2, gc_heads = 8, gc_coords = 4;
  gc->add_option("--d", gc_d);
  gc->add_option("--blocks", gc_blocks);
  gc->add_option("--heads", gc_heads);
  gc->add_option("--coords", gc_coords, "sampled coordinates per tensor");

  auto* st = app.add_subcommand("selftest", "run the built-in oracle suites");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  if (threads < 0) {
    std::cerr << "error: --threads must be nonnegative\n";
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_out, n_train, n_test, gen_seed);
    if (train->parsed())
      return cmd_train(config_path, sets, resume, seed_override);
    if (ev->parsed()) return cmd_eval(ev_ckpt, ev_manifest, ev_ks, ev_json);
    if (search->parsed())
      return cmd_search(s_ckpt, s_image, s_texts, s_catalog, s_k);
    if (viz->parsed())
      return cmd_viz_attn(v_ckpt, v_manifest, v_word, v_group, v_mode, v_out,
                          v_limit);
    if (gc->parsed()) return cmd_gradcheck(gc_d, gc_blocks, gc_heads, gc_coords);
    if (st->parsed()) return cmd_selftest(1, argv);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}
