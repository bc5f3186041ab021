#include "maaf/verify.hpp"

#include <iomanip>
#include <ostream>

#include "maaf/css.hpp"
#include "maaf/gradcheck.hpp"
#include "maaf/training.hpp"

namespace maaf {

namespace {

Tensor rand_tensor(std::vector<std::size_t> shape, Rng& rng, real lo = -1,
                   real hi = 1) {
  std::vector<real> v(shape_product(shape));
  for (auto& x : v) x = static_cast<real>(rng.uniform(lo, hi));
  return tensor(std::move(shape), std::move(v), true);
}

bool report_line(std::ostream& out, const std::string& name,
                 const GradCheckReport& rep) {
  out << "gradcheck " << std::left << std::setw(24) << name << " max_rel_err="
      << std::scientific << std::setprecision(3) << rep.max_rel_err
      << " checked=" << rep.checked << " excluded=" << rep.excluded << " "
      << (rep.pass ? "pass" : "FAIL") << "\n";
  return rep.pass;
}

struct OpCheck {
  std::string name;
  std::function<GradCheckReport(Rng&)> run;
};

GradCheckReport check(const std::function<Tensor()>& f,
                      const std::vector<Tensor>& leaves, Rng& rng,
                      std::size_t coords = 20) {
  return gradcheck(f, leaves, real(1e-3), real(1e-4), coords, rng);
}

}  // namespace

bool run_gradcheck_ops(std::ostream& out) {
  std::vector<OpCheck> checks;
  auto add_check = [&](const std::string& name,
                       std::function<GradCheckReport(Rng&)> run) {
    checks.push_back({name, std::move(run)});
  };

  add_check("add", [](Rng& r) {
    Tensor a = rand_tensor({3, 4}, r), b = rand_tensor({3, 4}, r);
    return check([=] { return add(a, b); }, {a, b}, r);
  });
  add_check("add_bias", [](Rng& r) {
    Tensor x = rand_tensor({3, 4}, r), b = rand_tensor({4}, r);
    return check([=] { return add_bias(x, b); }, {x, b}, r);
  });
  add_check("sub", [](Rng& r) {
    Tensor a = rand_tensor({3, 4}, r), b = rand_tensor({3, 4}, r);
    return check([=] { return sub(a, b); }, {a, b}, r);
  });
  add_check("mul", [](Rng& r) {
    Tensor a = rand_tensor({3, 4}, r), b = rand_tensor({3, 4}, r);
    return check([=] { return mul(a, b); }, {a, b}, r);
  });
  add_check("scale_by", [](Rng& r) {
    Tensor x = rand_tensor({3, 4}, r), s = rand_tensor({1}, r);
    return check([=] { return scale_by(x, s); }, {x, s}, r);
  });
  add_check("scale_const", [](Rng& r) {
    Tensor x = rand_tensor({3, 4}, r);
    return check([=] { return scale_const(x, real(2.5)); }, {x}, r);
  });
  add_check("matmul", [](Rng& r) {
    Tensor a = rand_tensor({3, 4}, r), b = rand_tensor({4, 5}, r);
    return check([=] { return matmul(a, b); }, {a, b}, r);
  });
  add_check("matmul_ta", [](Rng& r) {
    Tensor a = rand_tensor({4, 3}, r), b = rand_tensor({4, 5}, r);
    return check([=] { return matmul(a, b, true, false); }, {a, b}, r);
  });
  add_check("matmul_tb", [](Rng& r) {
    Tensor a = rand_tensor({3, 4}, r), b = rand_tensor({5, 4}, r);
    return check([=] { return matmul(a, b, false, true); }, {a, b}, r);
  });
  add_check("matmul_ta_tb", [](Rng& r) {
    Tensor a = rand_tensor({4, 3}, r), b = rand_tensor({5, 4}, r);
    return check([=] { return matmul(a, b, true, true); }, {a, b}, r);
  });
  add_check("concat_rows", [](Rng& r) {
    Tensor a = rand_tensor({2, 3}, r), b = rand_tensor({4, 3}, r);
    return check([=] { return concat_rows({a, b}); }, {a, b}, r);
  });
  add_check("concat_cols", [](Rng& r) {
    Tensor a = rand_tensor({2, 3}, r), b = rand_tensor({2, 4}, r);
    return check([=] { return concat_cols({a, b}); }, {a, b}, r);
  });
  add_check("slice_rows", [](Rng& r) {
    Tensor x = rand_tensor({5, 3}, r);
    return check([=] { return slice_rows(x, 1, 3); }, {x}, r);
  });
  add_check("slice_cols", [](Rng& r) {
    Tensor x = rand_tensor({3, 6}, r);
    return check([=] { return slice_cols(x, 2, 3); }, {x}, r);
  });
  add_check("reshape", [](Rng& r) {
    Tensor x = rand_tensor({2, 6}, r);
    return check([=] { return reshape(x, {3, 4}); }, {x}, r);
  });
  add_check("softmax_rows", [](Rng& r) {
    Tensor x = rand_tensor({3, 5}, r);
    return check([=] { return softmax_rows(x); }, {x}, r);
  });
  add_check("layer_norm", [](Rng& r) {
    Tensor x = rand_tensor({3, 4}, r);
    Tensor g = rand_tensor({4}, r, real(0.5), real(1.5));
    Tensor b = rand_tensor({4}, r);
    return check([=] { return layer_norm(x, g, b); }, {x, g, b}, r);
  });
  add_check("relu", [](Rng& r) {
    Tensor x = rand_tensor({3, 4}, r);
    return check([=] { return relu(x); }, {x}, r);
  });
  add_check("sigmoid", [](Rng& r) {
    Tensor x = rand_tensor({3, 4}, r);
    return check([=] { return sigmoid(x); }, {x}, r);
  });
  add_check("tanh", [](Rng& r) {
    Tensor x = rand_tensor({3, 4}, r);
    return check([=] { return tanh(x); }, {x}, r);
  });
  add_check("dropout_p0", [](Rng& r) {
    Tensor x = rand_tensor({3, 4}, r);
    Rng dr(5);
    return check([=]() mutable { return dropout(x, 0, dr, true); }, {x}, r);
  });
  add_check("embedding_lookup", [](Rng& r) {
    Tensor table = rand_tensor({4, 5}, r);
    std::vector<int> ids{1, 0, 2, 1};
    return check([=] { return embedding_lookup(ids, table); }, {table}, r);
  });
  add_check("mean_rows", [](Rng& r) {
    Tensor x = rand_tensor({4, 3}, r);
    return check([=] { return mean_rows(x); }, {x}, r);
  });
  add_check("mean_all", [](Rng& r) {
    Tensor x = rand_tensor({4, 3}, r);
    return check([=] { return mean_all(x); }, {x}, r);
  });
  add_check("sum_all", [](Rng& r) {
    Tensor x = rand_tensor({4, 3}, r);
    return check([=] { return sum_all(x); }, {x}, r);
  });
  add_check("l2_normalize_rows", [](Rng& r) {
    Tensor x = rand_tensor({3, 4}, r, real(0.2), real(1.2));
    return check([=] { return l2_normalize_rows(x); }, {x}, r);
  });
  add_check("log", [](Rng& r) {
    Tensor x = rand_tensor({3, 4}, r, real(0.5), real(2));
    return check([=] { return log(x); }, {x}, r);
  });
  add_check("exp", [](Rng& r) {
    Tensor x = rand_tensor({3, 4}, r);
    return check([=] { return exp(x); }, {x}, r);
  });
  add_check("conv2d", [](Rng& r) {
    Tensor x = rand_tensor({2, 8, 8}, r);
    Tensor w = rand_tensor({3, 2, 3, 3}, r);
    Tensor b = rand_tensor({3}, r);
    return check([=] { return conv2d(x, w, b, 2, 1); }, {x, w, b}, r);
  });
  add_check("maxpool2d", [](Rng& r) {
    Tensor x = rand_tensor({2, 6, 6}, r);
    return check([=] { return maxpool2d(x, 2, 2); }, {x}, r);
  });
  add_check("batch_softmax_ce", [](Rng& r) {
    Tensor x = rand_tensor({3, 3}, r);
    return check([=] { return batch_softmax_ce(x); }, {x}, r);
  });
  add_check("attention_softmax", [](Rng& r) {
    Tensor q = rand_tensor({3, 8}, r), kv = rand_tensor({4, 8}, r);
    AttnParams p{rand_tensor({8, 8}, r), rand_tensor({8, 8}, r),
                 rand_tensor({8, 8}, r), rand_tensor({8, 8}, r)};
    return check(
        [=] {
          return multi_head_attention(FKind::Softmax, q, kv, p, 2, true,
                                      nullptr);
        },
        {q, kv, p.wq, p.wk, p.wv, p.wo}, r);
  });
  add_check("attention_identity", [](Rng& r) {
    Tensor q = rand_tensor({3, 8}, r), kv = rand_tensor({4, 8}, r);
    AttnParams p{rand_tensor({8, 8}, r), rand_tensor({8, 8}, r),
                 rand_tensor({8, 8}, r), rand_tensor({8, 8}, r)};
    return check(
        [=] {
          return multi_head_attention(FKind::Identity, q, kv, p, 2, false,
                                      nullptr);
        },
        {q, kv, p.wq, p.wk, p.wv, p.wo}, r);
  });
  add_check("pool", [](Rng& r) {
    TokenSequence seq;
    seq.tokens = rand_tensor({7, 6}, r, real(0.1), real(1));
    seq.groups = {TokenGroup::CoarseImage, TokenGroup::CoarseImage,
                  TokenGroup::CoarseImage, TokenGroup::FineImage,
                  TokenGroup::FineImage,   TokenGroup::Text,
                  TokenGroup::Text};
    seq.positions.assign(7, {0, 0});
    Tensor s = rand_tensor({1}, r, real(2), real(5));
    PoolingConfig cfg;
    return check([=] { return pool(seq, cfg, s); }, {seq.tokens, s}, r);
  });
  add_check("lstm_encode", [](Rng& r) {
    TextEncoderParams p;
    p.d = 6;
    p.variant = TextVariant::Lstm;
    p.embedding = rand_tensor({5, 6}, r);
    p.lstm_wx = rand_tensor({6, 24}, r);
    p.lstm_wh = rand_tensor({6, 24}, r);
    p.lstm_b = rand_tensor({24}, r);
    TokenizedCaption tc;
    tc.indices = {1, 3, 0, 2};
    tc.words = {"a", "b", "c", "d"};
    return check([=] { return encode_text(tc, p).tokens; },
                 {p.embedding, p.lstm_wx, p.lstm_wh, p.lstm_b}, r);
  });

  bool all = true;
  std::uint64_t seed = 90;
  for (const auto& c : checks) {
    Rng rng(seed++);
    all = report_line(out, c.name, c.run(rng)) && all;
  }
  return all;
}

bool run_gradcheck_model(std::ostream& out, int d, int blocks, int heads,
                         std::size_t coords_per_leaf) {
  Vocabulary vocab;
  for (const char* w : {"make", "remove", "add", "red", "blue", "sphere",
                        "cube", "large", "small", "topleft", "to", "+"})
    vocab.add(w);

  ModelConfig cfg;
  cfg.fusion.d = d;
  cfg.fusion.heads = heads;
  cfg.fusion.num_blocks = blocks;
  cfg.fusion.dropout = 0;
  cfg.image_size = 48;
  Rng init(7);
  Model m = build_model(cfg, vocab, init);

  Rng scene_rng(21);
  std::vector<Tensor> queries, targets;
  for (int i = 0; i < 2; ++i) {
    queries.push_back(image_to_tensor(render(gen_scene(scene_rng), 48)));
    targets.push_back(image_to_tensor(render(gen_scene(scene_rng), 48)));
  }
  TokenizedCaption cap0 = tokenize("make red sphere large", vocab);
  TokenizedCaption cap1 = tokenize("remove topleft", vocab);

  auto f = [&] {
    FusionCtx ctx;
    std::vector<Tensor> q_embs, t_embs;
    q_embs.push_back(embed_query(m, queries[0], cap0, ctx));
    q_embs.push_back(embed_query(m, queries[1], cap1, ctx));
    for (const auto& t : targets)
      t_embs.push_back(embed_catalog_image(m, t, ctx));
    return batch_loss(concat_rows(q_embs), concat_rows(t_embs));
  };

  std::vector<Tensor> leaves;
  for (const auto& e : m.params.entries()) leaves.push_back(e.value);
  Rng rng(11);
  GradCheckReport rep =
      gradcheck(f, leaves, real(1e-3), real(1e-4), coords_per_leaf, rng);
  return report_line(out, "full_model", rep);
}

}  // namespace maaf
