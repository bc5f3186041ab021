#include "maaf/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace maaf {

Tensor batch_loss(const Tensor& queries, const Tensor& targets) {
  if (queries->shape != targets->shape) {
    throw Error("batch_loss: shape mismatch " + shape_str(queries->shape) +
                " vs " + shape_str(targets->shape));
  }
  if (queries->shape[0] < 2) {
    throw Error("batch_loss: batch size must be >= 2");
  }
  Tensor logits = matmul(queries, targets, false, true);
  return batch_softmax_ce(logits);
}

real learning_rate(real base, const TrainConfig& cfg, int step) {
  real factor = 1;
  if (cfg.schedule == "half") {
    factor = real(0.5);
  } else if (cfg.schedule == "half+warmup5000") {
    factor = step < cfg.warmup_steps ? real(0.5) : real(1);
  }
  real rate = base * factor;
  for (int i = 0; i < step / cfg.decay_steps; ++i) rate /= real(10);
  return rate;
}

namespace {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix-style combination for derived streams
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// without-replacement epoch scheme over a fixed index pool; falls back to
// with-replacement when the pool is smaller than the batch
std::vector<std::size_t> batch_from_pool(const std::vector<std::size_t>& pool,
                                         const TrainConfig& cfg, int step,
                                         std::uint64_t stream) {
  const std::size_t b = static_cast<std::size_t>(cfg.batch_size);
  std::vector<std::size_t> out;
  if (pool.size() < b) {
    Rng rng(mix_seed(cfg.seed, mix_seed(stream, 0x5A5A + step)));
    for (std::size_t i = 0; i < b; ++i)
      out.push_back(pool[rng.below(pool.size())]);
    return out;
  }
  const std::size_t steps_per_epoch = pool.size() / b;
  const std::size_t epoch = static_cast<std::size_t>(step) / steps_per_epoch;
  const std::size_t pos =
      (static_cast<std::size_t>(step) % steps_per_epoch) * b;
  std::vector<std::size_t> perm = pool;
  Rng rng(mix_seed(cfg.seed, mix_seed(stream, epoch)));
  for (std::size_t i = perm.size() - 1; i > 0; --i)
    std::swap(perm[i], perm[rng.below(i + 1)]);
  for (std::size_t i = 0; i < b; ++i) out.push_back(perm[pos + i]);
  return out;
}

}  // namespace

std::vector<std::size_t> make_batch(const DatasetManifest& data,
                                    const TrainConfig& cfg, int step) {
  if (data.records.empty()) throw Error("make_batch: empty dataset");
  if (!cfg.per_category_batching) {
    std::vector<std::size_t> pool(data.records.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    return batch_from_pool(pool, cfg, step, 0);
  }
  // round-robin over sorted category names
  std::map<std::string, std::vector<std::size_t>> by_cat;
  for (std::size_t i = 0; i < data.records.size(); ++i)
    by_cat[data.records[i].category].push_back(i);
  std::vector<const std::vector<std::size_t>*> cats;
  for (const auto& [name, idxs] : by_cat) cats.push_back(&idxs);
  const std::size_t c = static_cast<std::size_t>(step) % cats.size();
  const int sub_step = step / static_cast<int>(cats.size());
  return batch_from_pool(*cats[c], cfg, sub_step, c + 1);
}

OptimizerState make_optimizer_state(const Model& m) {
  OptimizerState s;
  for (const auto& e : m.params.entries())
    s.momentum.emplace_back(e.value->size(), real(0));
  return s;
}

void sgd_step(Model& m, OptimizerState& opt, const TrainConfig& cfg,
              int step) {
  const real lr_img = learning_rate(cfg.lr_image, cfg, step);
  const real lr_other = learning_rate(cfg.lr_other, cfg, step);
  const auto& entries = m.params.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (!e.value->requires_grad) continue;
    e.value->ensure_grad();
    const real lr = e.group == ParamGroup::Image ? lr_img : lr_other;
    auto& mom = opt.momentum[i];
    for (std::size_t k = 0; k < mom.size(); ++k) {
      mom[k] = cfg.momentum * mom[k] + e.value->grad[k];
      e.value->values[k] -= lr * mom[k];
    }
  }
}

TrainStatus train(Model& m, OptimizerState& opt, Rng& rng,
                  const DatasetManifest& data, const TrainConfig& cfg,
                  int start_step, const std::string& metrics_path,
                  ImageCache* cache) {
  std::optional<ImageCache> local_cache;
  if (cache == nullptr) {
    local_cache.emplace(data.root);
    cache = &*local_cache;
  }
  std::ofstream metrics;
  if (!metrics_path.empty()) {
    metrics.open(metrics_path, start_step == 0 ? std::ios::trunc
                                               : std::ios::app);
    if (!metrics) throw Error("train: cannot open " + metrics_path);
  }

  TrainStatus status;
  Tape tape;
  for (int step = start_step; step < cfg.max_steps; ++step) {
    const auto batch = make_batch(data, cfg, step);
    Tensor loss;
    {
      TapeScope scope(tape);
      FusionCtx ctx;
      ctx.rng = &rng;
      ctx.training = true;
      std::vector<Tensor> q_embs, t_embs;
      for (std::size_t idx : batch) {
        const auto& rec = data.records[idx];
        TokenizedCaption tc = tokenize(rec.caption, m.vocab);
        q_embs.push_back(embed_query(m, cache->get(rec.query), tc, ctx));
        t_embs.push_back(embed_catalog_image(m, cache->get(rec.target), ctx));
      }
      loss = batch_loss(concat_rows(q_embs), concat_rows(t_embs));
      if (!std::isfinite(loss->values[0])) {
        std::ostringstream os;
        os << "train: non-finite loss at step " << step << "; batch:";
        for (std::size_t idx : batch)
          os << " " << data.records[idx].query;
        throw Error(os.str());
      }
      m.params.zero_grads();
      tape.backward(loss);
    }
    sgd_step(m, opt, cfg, step);
    tape.clear();

    status.step = step + 1;
    status.last_loss = loss->values[0];
    if (metrics.is_open() &&
        (cfg.log_interval > 0 && (step % cfg.log_interval == 0 ||
                                  step + 1 == cfg.max_steps))) {
      nlohmann::ordered_json j;
      j["step"] = step;
      j["loss"] = loss->values[0];
      j["lr_image"] = learning_rate(cfg.lr_image, cfg, step);
      j["lr_other"] = learning_rate(cfg.lr_other, cfg, step);
      metrics << j.dump() << "\n";
      metrics.flush();
    }
  }
  return status;
}

// ---- checkpoint -----------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'M', 'A', 'A', 'F', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = (v >> (8 * i)) & 0xff;
  out.write(reinterpret_cast<char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = (v >> (8 * i)) & 0xff;
  out.write(reinterpret_cast<char*>(b), 8);
}

std::uint32_t take_u32(const std::vector<std::uint8_t>& buf,
                       std::size_t& pos) {
  if (pos + 4 > buf.size()) throw Error("checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(buf[pos + i]) << (8 * i);
  pos += 4;
  return v;
}

std::uint64_t take_u64(const std::vector<std::uint8_t>& buf,
                       std::size_t& pos) {
  if (pos + 8 > buf.size()) throw Error("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(buf[pos + i]) << (8 * i);
  pos += 8;
  return v;
}

std::string u64_hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(v));
  return buf;
}

void write_reals_le(std::ostream& out, const std::vector<real>& vals) {
  for (real v : vals) {
    unsigned char b[sizeof(real)];
    std::memcpy(b, &v, sizeof(real));
    out.write(reinterpret_cast<char*>(b), sizeof(real));
  }
}

void read_reals_le(const std::vector<std::uint8_t>& buf, std::size_t offset,
                   std::vector<real>& vals) {
  if (offset + vals.size() * sizeof(real) > buf.size()) {
    throw Error("checkpoint: truncated tensor payload");
  }
  std::memcpy(vals.data(), buf.data() + offset, vals.size() * sizeof(real));
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& m,
                     const OptimizerState& opt, const RunConfig& run_cfg,
                     int step, const Rng& rng) {
  nlohmann::ordered_json header;
  header["config"] = run_config_to_json(run_cfg);
  header["vocab"] = m.vocab.words();
  header["step"] = step;
  {
    std::vector<std::string> st;
    for (auto w : rng.state()) st.push_back(u64_hex(w));
    header["rng"] = st;
  }
  header["dtype"] = sizeof(real) == 8 ? "f64" : "f32";

  nlohmann::ordered_json dir = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  const auto& entries = m.params.entries();
  auto add_entry = [&](const std::string& name,
                       const std::vector<std::size_t>& shape,
                       std::size_t count) {
    nlohmann::ordered_json t;
    t["name"] = name;
    t["shape"] = shape;
    t["offset"] = offset;
    dir.push_back(t);
    offset += count * sizeof(real);
  };
  for (const auto& e : entries) add_entry(e.name, e.value->shape, e.value->size());
  for (std::size_t i = 0; i < entries.size(); ++i)
    add_entry("opt:" + entries[i].name, entries[i].value->shape,
              opt.momentum[i].size());
  header["tensors"] = dir;

  const std::string header_str = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("save_checkpoint: cannot open " + path);
  out.write(kMagic, 8);
  put_u32(out, kVersion);
  put_u64(out, header_str.size());
  out.write(header_str.data(),
            static_cast<std::streamsize>(header_str.size()));
  for (const auto& e : entries) write_reals_le(out, e.value->values);
  for (const auto& mom : opt.momentum) write_reals_le(out, mom);
  if (!out) throw Error("save_checkpoint: write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  const auto buf = read_file_bytes(path);
  if (buf.size() < 20 || std::memcmp(buf.data(), kMagic, 8) != 0) {
    throw Error("load_checkpoint: bad magic in " + path);
  }
  std::size_t pos = 8;
  const std::uint32_t version = take_u32(buf, pos);
  if (version != kVersion) {
    throw Error("load_checkpoint: unsupported version " +
                std::to_string(version));
  }
  const std::uint64_t header_len = take_u64(buf, pos);
  if (pos + header_len > buf.size()) {
    throw Error("checkpoint: truncated header");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(buf.begin() + pos,
                                   buf.begin() + pos + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("load_checkpoint: bad header: ") + e.what());
  }
  pos += header_len;
  const std::string dtype = header.at("dtype").get<std::string>();
  const std::string want = sizeof(real) == 8 ? "f64" : "f32";
  if (dtype != want) {
    throw Error("load_checkpoint: payload dtype " + dtype +
                " does not match this build (" + want + ")");
  }

  LoadedCheckpoint lc;
  lc.run_cfg = run_config_from_json(header.at("config"));
  Vocabulary vocab(header.at("vocab").get<std::vector<std::string>>());
  lc.step = header.at("step").get<int>();
  {
    std::array<std::uint64_t, 4> st{};
    const auto arr = header.at("rng").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < 4; ++i)
      st[i] = std::stoull(arr.at(i), nullptr, 16);
    lc.rng.set_state(st);
  }

  Rng throwaway(0);
  lc.model = build_model(lc.run_cfg.model, vocab, throwaway);
  lc.opt = make_optimizer_state(lc.model);

  std::unordered_map<std::string, std::uint64_t> offsets;
  for (const auto& t : header.at("tensors"))
    offsets[t.at("name").get<std::string>()] =
        pos + t.at("offset").get<std::uint64_t>();

  const auto& entries = lc.model.params.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto it = offsets.find(entries[i].name);
    if (it == offsets.end()) {
      throw Error("load_checkpoint: missing tensor " + entries[i].name);
    }
    read_reals_le(buf, it->second, entries[i].value->values);
    auto mit = offsets.find("opt:" + entries[i].name);
    if (mit == offsets.end()) {
      throw Error("load_checkpoint: missing momentum for " + entries[i].name);
    }
    read_reals_le(buf, mit->second, lc.opt.momentum[i]);
  }
  return lc;
}

}  // namespace maaf
