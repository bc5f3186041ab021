#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "maaf/training.hpp"

using namespace maaf;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model_config() {
  ModelConfig mc;
  mc.fusion.d = 8;
  mc.fusion.heads = 2;
  mc.fusion.num_blocks = 1;
  mc.fusion.ffn_width = 16;
  mc.fusion.dropout = 0;
  mc.use_fine_tokens = false;
  mc.image_size = 48;
  return mc;
}

DatasetManifest fake_manifest(std::size_t n) {
  DatasetManifest m;
  const char* cats[] = {"make", "remove", "add"};
  for (std::size_t i = 0; i < n; ++i) {
    TripletRecord r;
    r.query = "q" + std::to_string(i);
    r.target = "t" + std::to_string(i);
    r.caption = "x";
    r.category = cats[i % 3];
    m.records.push_back(r);
  }
  return m;
}

}  // namespace

TEST_CASE("learning rate decays by ten at each boundary") {
  TrainConfig cfg;
  cfg.decay_steps = 2000;
  CHECK(learning_rate(real(0.01), cfg, 0) == doctest::Approx(0.01));
  CHECK(learning_rate(real(0.01), cfg, 1999) == doctest::Approx(0.01));
  CHECK(learning_rate(real(0.01), cfg, 2000) == doctest::Approx(0.001));
  CHECK(learning_rate(real(0.01), cfg, 3999) == doctest::Approx(0.001));
  CHECK(learning_rate(real(0.01), cfg, 4000) == doctest::Approx(0.0001));

  cfg.schedule = "half";
  CHECK(learning_rate(real(0.01), cfg, 0) == doctest::Approx(0.005));
  CHECK(learning_rate(real(0.01), cfg, 2000) == doctest::Approx(0.0005));

  cfg.schedule = "half+warmup5000";
  cfg.warmup_steps = 5000;
  CHECK(learning_rate(real(0.01), cfg, 0) == doctest::Approx(0.005));
  CHECK(learning_rate(real(0.01), cfg, 4999) ==
        doctest::Approx(0.5 * 0.01 / 100));
  CHECK(learning_rate(real(0.01), cfg, 5000) == doctest::Approx(0.01 / 100));
}

TEST_CASE("batch loss equals ln n when all targets look alike") {
  Tensor q = tensor({3, 2}, {1, 0, 0, 1, -1, 0});
  Tensor t = tensor({3, 2}, {1, 1, 1, 1, 1, 1});
  Tensor loss = batch_loss(q, t);
  CHECK(loss->values[0] == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("batch loss matches the softmax cross entropy on the diagonal") {
  // orthonormal embeddings: logits are the identity matrix
  Tensor q = tensor({4, 4}, {1, 0, 0, 0, 0, 1, 0, 0,
                             0, 0, 1, 0, 0, 0, 0, 1});
  Tensor loss = batch_loss(q, q);
  const double expect = -std::log(std::exp(1.0) / (std::exp(1.0) + 3.0));
  CHECK(loss->values[0] == doctest::Approx(expect).epsilon(1e-12));
  CHECK_THROWS_AS(batch_loss(q, tensor({2, 4}, std::vector<real>(8, 0))),
                  Error);
  Tensor one = tensor({1, 2}, {1, 0});
  CHECK_THROWS_AS(batch_loss(one, one), Error);
}

TEST_CASE("batches are deterministic and cover an epoch without repeats") {
  DatasetManifest data = fake_manifest(12);
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.seed = 9;
  CHECK(make_batch(data, cfg, 5) == make_batch(data, cfg, 5));

  // 3 steps per epoch; together they enumerate all 12 records
  std::set<std::size_t> seen;
  for (int step = 0; step < 3; ++step)
    for (std::size_t i : make_batch(data, cfg, step)) seen.insert(i);
  CHECK(seen.size() == 12);

  // the next epoch reshuffles
  bool differs = false;
  for (int step = 0; step < 3; ++step)
    if (make_batch(data, cfg, step) != make_batch(data, cfg, step + 3))
      differs = true;
  CHECK(differs);

  TrainConfig other = cfg;
  other.seed = 10;
  CHECK(make_batch(data, cfg, 0) != make_batch(data, other, 0));
}

TEST_CASE("per-category batching cycles categories in sorted order") {
  DatasetManifest data = fake_manifest(30);
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.per_category_batching = true;
  const std::vector<std::string> order{"add", "make", "remove"};
  for (int step = 0; step < 9; ++step) {
    auto batch = make_batch(data, cfg, step);
    REQUIRE(batch.size() == 4);
    for (std::size_t i : batch)
      CHECK(data.records[i].category == order[step % 3]);
  }
}

TEST_CASE("pools smaller than a batch sample with replacement") {
  DatasetManifest data = fake_manifest(3);
  TrainConfig cfg;
  cfg.batch_size = 8;
  auto batch = make_batch(data, cfg, 0);
  REQUIRE(batch.size() == 8);
  for (std::size_t i : batch) CHECK(i < 3);
  CHECK(batch == make_batch(data, cfg, 0));
  CHECK_THROWS_AS(make_batch(DatasetManifest{}, cfg, 0), Error);
}

TEST_CASE("sgd applies momentum and per-group learning rates") {
  Rng rng(1);
  Vocabulary vocab({"x"});
  Model m = build_model(tiny_model_config(), vocab, rng);
  OptimizerState opt = make_optimizer_state(m);

  TrainConfig cfg;
  cfg.lr_image = real(0.001);
  cfg.lr_other = real(0.01);
  cfg.momentum = real(0.9);

  // pick one parameter from each rate group
  const ParamEntry* img = nullptr;
  const ParamEntry* other = nullptr;
  for (const auto& e : m.params.entries()) {
    if (!img && e.group == ParamGroup::Image) img = &e;
    if (!other && e.group == ParamGroup::Other) other = &e;
  }
  REQUIRE(img != nullptr);
  REQUIRE(other != nullptr);

  m.params.zero_grads();
  img->value->ensure_grad();
  other->value->ensure_grad();
  img->value->grad[0] = 1;
  other->value->grad[0] = 1;
  const real i0 = img->value->values[0];
  const real i1 = img->value->values[1];
  const real o0 = other->value->values[0];
  sgd_step(m, opt, cfg, 0);
  CHECK(img->value->values[0] == doctest::Approx(i0 - 0.001).epsilon(1e-12));
  CHECK(other->value->values[0] == doctest::Approx(o0 - 0.01).epsilon(1e-12));

  // same gradient again: velocity is 0.9 * 1 + 1
  sgd_step(m, opt, cfg, 0);
  CHECK(img->value->values[0] ==
        doctest::Approx(i0 - 0.001 - 0.001 * 1.9).epsilon(1e-12));
  // coordinates with zero gradient stay put
  CHECK(img->value->values[1] == i1);
}

TEST_CASE("checkpoints round-trip weights, momentum, step, and rng") {
  Rng rng(2);
  Vocabulary vocab({"make", "red"});
  RunConfig rc;
  rc.model = tiny_model_config();
  Model m = build_model(rc.model, vocab, rng);
  OptimizerState opt = make_optimizer_state(m);
  Rng noise(3);
  for (auto& buf : opt.momentum)
    for (auto& v : buf) v = static_cast<real>(noise.uniform(-1, 1));
  Rng train_rng(77);
  train_rng.next_u64();

  const auto path =
      (fs::temp_directory_path() / "maaf_ckpt_test.ckpt").string();
  save_checkpoint(path, m, opt, rc, 123, train_rng);
  LoadedCheckpoint lc = load_checkpoint(path);

  CHECK(lc.step == 123);
  CHECK(lc.rng.state() == train_rng.state());
  CHECK(lc.run_cfg.model.fusion.d == 8);
  CHECK(lc.model.vocab.words() == vocab.words());
  const auto& a = m.params.entries();
  const auto& b = lc.model.params.entries();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(a[i].value->values == b[i].value->values);
    CHECK(opt.momentum[i] == lc.opt.momentum[i]);
  }
  fs::remove(path);
}

TEST_CASE("corrupt checkpoints are rejected with a diagnostic") {
  const fs::path dir = fs::temp_directory_path();
  const auto bad = (dir / "maaf_bad.ckpt").string();
  {
    std::ofstream out(bad, std::ios::binary);
    out << "NOTACKPTxxxxxxxxxxxxxxxx";
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(bad),
                       doctest::Contains("bad magic"), Error);

  Rng rng(4);
  Vocabulary vocab({"x"});
  RunConfig rc;
  rc.model = tiny_model_config();
  Model m = build_model(rc.model, vocab, rng);
  OptimizerState opt = make_optimizer_state(m);
  const auto good = (dir / "maaf_trunc.ckpt").string();
  save_checkpoint(good, m, opt, rc, 0, rng);
  auto bytes = read_file_bytes(good);
  {
    std::ofstream out(good, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(good),
                       doctest::Contains("truncated"), Error);
  fs::remove(bad);
  fs::remove(good);
}

TEST_CASE("training is deterministic and resumes bit-exactly") {
  const fs::path dir = fs::temp_directory_path() / "maaf_train_test";
  fs::remove_all(dir);
  DatasetManifest data = gen_dataset(8, 2, 5, dir.string());

  RunConfig rc;
  rc.model = tiny_model_config();
  rc.train.batch_size = 4;
  rc.train.max_steps = 4;
  rc.train.log_interval = 1;
  rc.train.seed = 6;
  Vocabulary vocab = Vocabulary::load((dir / "vocab.txt").string());

  auto run_full = [&]() {
    Rng init(rc.train.seed);
    Model m = build_model(rc.model, vocab, init);
    OptimizerState opt = make_optimizer_state(m);
    Rng rng(rc.train.seed);
    train(m, opt, rng, data, rc.train, 0, "");
    return m;
  };
  Model a = run_full();
  Model b = run_full();
  const auto& ea = a.params.entries();
  const auto& eb = b.params.entries();
  for (std::size_t i = 0; i < ea.size(); ++i)
    CHECK(ea[i].value->values == eb[i].value->values);

  // train 2 steps, checkpoint, resume for 2 more: identical to 4 straight
  Rng init(rc.train.seed);
  Model c = build_model(rc.model, vocab, init);
  OptimizerState opt = make_optimizer_state(c);
  Rng rng(rc.train.seed);
  TrainConfig first = rc.train;
  first.max_steps = 2;
  train(c, opt, rng, data, first, 0, "");
  const auto ckpt = (dir / "mid.ckpt").string();
  save_checkpoint(ckpt, c, opt, rc, 2, rng);

  LoadedCheckpoint lc = load_checkpoint(ckpt);
  train(lc.model, lc.opt, lc.rng, data, rc.train, lc.step, "");
  const auto& ec = lc.model.params.entries();
  for (std::size_t i = 0; i < ea.size(); ++i)
    CHECK(ea[i].value->values == ec[i].value->values);
  fs::remove_all(dir);
}

TEST_CASE("training reports a decreasing loss on a small fixed set") {
  const fs::path dir = fs::temp_directory_path() / "maaf_train_loss";
  fs::remove_all(dir);
  DatasetManifest data = gen_dataset(4, 2, 8, dir.string());
  RunConfig rc;
  rc.model = tiny_model_config();
  rc.train.batch_size = 4;
  rc.train.max_steps = 200;
  rc.train.log_interval = 1;
  rc.train.lr_other = real(0.02);
  rc.train.lr_image = real(0.002);
  rc.train.momentum = 0;
  Vocabulary vocab = Vocabulary::load((dir / "vocab.txt").string());
  Rng init(1);
  Model m = build_model(rc.model, vocab, init);
  OptimizerState opt = make_optimizer_state(m);
  Rng rng(1);
  const auto metrics = (dir / "metrics.jsonl").string();
  TrainStatus st = train(m, opt, rng, data, rc.train, 0, metrics);
  CHECK(st.step == 200);
  CHECK(std::isfinite(st.last_loss));

  std::ifstream in(metrics);
  std::string line;
  int lines = 0;
  double min_loss = 1e9;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    CHECK(j.contains("step"));
    CHECK(j.contains("lr_image"));
    const double loss = j["loss"].get<double>();
    CHECK(std::isfinite(loss));
    min_loss = std::min(min_loss, loss);
    ++lines;
  }
  CHECK(lines == 200);
  // chance level on a 4-way batch is ln 4; the model memorizes 4 triplets
  CHECK(min_loss < 0.5 * std::log(4.0));
  fs::remove_all(dir);
}
