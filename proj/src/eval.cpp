#include "maaf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_map>

namespace maaf {

namespace {

real cosine(const std::vector<real>& a, const std::vector<real>& b) {
  real dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na <= 0 || nb <= 0) throw Error("recall: zero-norm embedding");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

RecallReport recall_at_k(const std::vector<std::vector<real>>& query_embs,
                         const std::vector<std::string>& target_ids,
                         const std::vector<std::string>& catalog_ids,
                         const std::vector<std::vector<real>>& catalog_embs,
                         const std::vector<int>& ks,
                         const std::vector<std::string>& categories) {
  if (query_embs.size() != target_ids.size()) {
    throw Error("recall: query/target count mismatch");
  }
  if (catalog_ids.size() != catalog_embs.size()) {
    throw Error("recall: catalog id/embedding count mismatch");
  }
  if (!categories.empty() && categories.size() != query_embs.size()) {
    throw Error("recall: category count mismatch");
  }
  if (ks.empty()) throw Error("recall: no k values");

  std::unordered_map<std::string, std::size_t> catalog_index;
  for (std::size_t i = 0; i < catalog_ids.size(); ++i)
    catalog_index.emplace(catalog_ids[i], i);

  RecallReport r;
  r.ks = ks;
  r.recall.assign(ks.size(), 0);
  r.num_queries = query_embs.size();
  r.catalog_size = catalog_ids.size();

  std::map<std::string, std::vector<real>> cat_hits;
  for (std::size_t q = 0; q < query_embs.size(); ++q) {
    auto it = catalog_index.find(target_ids[q]);
    if (it == catalog_index.end()) {
      throw Error("recall: target id \"" + target_ids[q] +
                  "\" not in catalog");
    }
    const std::size_t t = it->second;
    const real sim_t = cosine(query_embs[q], catalog_embs[t]);
    // rank of the target under descending similarity, ties broken by
    // ascending catalog index
    std::size_t rank = 1;
    for (std::size_t j = 0; j < catalog_embs.size(); ++j) {
      if (j == t) continue;
      const real s = cosine(query_embs[q], catalog_embs[j]);
      if (s > sim_t || (s == sim_t && j < t)) ++rank;
    }
    const std::string cat = categories.empty() ? "" : categories[q];
    if (!cat.empty() && !cat_hits.count(cat)) {
      cat_hits[cat].assign(ks.size(), 0);
      r.category_counts[cat] = 0;
    }
    if (!cat.empty()) ++r.category_counts[cat];
    for (std::size_t ki = 0; ki < ks.size(); ++ki) {
      if (rank <= static_cast<std::size_t>(ks[ki])) {
        r.recall[ki] += 1;
        if (!cat.empty()) cat_hits[cat][ki] += 1;
      }
    }
  }
  for (auto& v : r.recall) v /= real(r.num_queries);
  for (auto& [cat, hits] : cat_hits) {
    std::vector<real> vals(hits);
    for (auto& v : vals) v /= real(r.category_counts[cat]);
    r.per_category[cat] = vals;
  }

  int i10 = -1, i50 = -1;
  for (std::size_t ki = 0; ki < ks.size(); ++ki) {
    if (ks[ki] == 10) i10 = static_cast<int>(ki);
    if (ks[ki] == 50) i50 = static_cast<int>(ki);
  }
  if (i10 >= 0 && i50 >= 0) {
    r.composite = (r.recall[i10] + r.recall[i50]) / 2;
  }
  return r;
}

RecallReport evaluate_model(Model& m, const DatasetManifest& data,
                            const std::vector<int>& ks, ImageCache* cache,
                            const std::string& cfg_hash) {
  std::optional<ImageCache> local_cache;
  if (cache == nullptr) {
    local_cache.emplace(data.root);
    cache = &*local_cache;
  }
  std::vector<std::string> catalog_ids;
  std::unordered_map<std::string, std::size_t> seen;
  for (const auto& rec : data.records) {
    if (seen.emplace(rec.target, catalog_ids.size()).second)
      catalog_ids.push_back(rec.target);
  }

  FusionCtx ctx;
  std::vector<std::vector<real>> catalog_embs;
  for (const auto& id : catalog_ids) {
    Tensor e = embed_catalog_image(m, cache->get(id), ctx);
    catalog_embs.push_back(e->values);
  }
  std::vector<std::vector<real>> query_embs;
  std::vector<std::string> target_ids, categories;
  for (const auto& rec : data.records) {
    TokenizedCaption tc = tokenize(rec.caption, m.vocab);
    Tensor e = embed_query(m, cache->get(rec.query), tc, ctx);
    query_embs.push_back(e->values);
    target_ids.push_back(rec.target);
    categories.push_back(rec.category);
  }
  RecallReport r = recall_at_k(query_embs, target_ids, catalog_ids,
                               catalog_embs, ks, categories);
  r.config_hash = cfg_hash;
  return r;
}

nlohmann::ordered_json recall_report_json(const RecallReport& r) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json rec;
  for (std::size_t ki = 0; ki < r.ks.size(); ++ki)
    rec["R" + std::to_string(r.ks[ki])] = r.recall[ki];
  j["recall"] = rec;
  j["composite_r10_r50"] = r.composite;
  nlohmann::ordered_json cats;
  for (const auto& [cat, vals] : r.per_category) {
    nlohmann::ordered_json c;
    for (std::size_t ki = 0; ki < r.ks.size(); ++ki)
      c["R" + std::to_string(r.ks[ki])] = vals[ki];
    c["count"] = r.category_counts.at(cat);
    cats[cat] = c;
  }
  j["per_category"] = cats;
  j["num_queries"] = r.num_queries;
  j["catalog_size"] = r.catalog_size;
  j["config_hash"] = r.config_hash;
  return j;
}

std::string recall_report_table(const RecallReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << std::left << std::setw(16) << "category";
  for (int k : r.ks) os << std::right << std::setw(9) << ("R" + std::to_string(k));
  os << std::right << std::setw(9) << "n" << "\n";
  auto row = [&](const std::string& name, const std::vector<real>& vals,
                 std::size_t n) {
    os << std::left << std::setw(16) << name;
    for (real v : vals) os << std::right << std::setw(9) << v;
    os << std::right << std::setw(9) << n << "\n";
  };
  for (const auto& [cat, vals] : r.per_category)
    row(cat, vals, r.category_counts.at(cat));
  row("all", r.recall, r.num_queries);
  os << "composite (R10,R50): " << r.composite << "\n";
  return os.str();
}

std::string config_hash(const nlohmann::ordered_json& cfg) {
  const std::string s = cfg.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

// ---- embedding export -----------------------------------------------------

void save_embeddings(const std::string& base, const EmbeddingSet& set) {
  if (set.data.size() != set.ids.size() * set.dim) {
    throw Error("save_embeddings: data size does not match ids x dim");
  }
  {
    std::ofstream out(base + ".bin", std::ios::binary);
    if (!out) throw Error("save_embeddings: cannot open " + base + ".bin");
    out.write(reinterpret_cast<const char*>(set.data.data()),
              static_cast<std::streamsize>(set.data.size() * sizeof(float)));
    if (!out) throw Error("save_embeddings: write failed");
  }
  nlohmann::ordered_json j;
  j["dim"] = set.dim;
  j["count"] = set.ids.size();
  j["scale"] = set.scale;
  j["ids"] = set.ids;
  std::ofstream out(base + ".json");
  if (!out) throw Error("save_embeddings: cannot open " + base + ".json");
  out << j.dump(2) << "\n";
}

EmbeddingSet load_embeddings(const std::string& base) {
  std::ifstream in(base + ".json");
  if (!in) throw Error("load_embeddings: cannot open " + base + ".json");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("load_embeddings: bad sidecar: ") + e.what());
  }
  EmbeddingSet set;
  set.dim = j.at("dim").get<std::size_t>();
  set.scale = j.at("scale").get<real>();
  set.ids = j.at("ids").get<std::vector<std::string>>();
  const std::size_t count = j.at("count").get<std::size_t>();
  if (count != set.ids.size()) {
    throw Error("load_embeddings: count does not match ids");
  }
  const auto bytes = read_file_bytes(base + ".bin");
  if (bytes.size() != count * set.dim * sizeof(float)) {
    throw Error("load_embeddings: matrix size mismatch in " + base + ".bin");
  }
  set.data.resize(count * set.dim);
  std::memcpy(set.data.data(), bytes.data(), bytes.size());
  return set;
}

// ---- attention maps -------------------------------------------------------

std::vector<real> attention_row(const HeadWeights& rec, std::size_t q_index,
                                std::size_t k_start, std::size_t k_len) {
  if (q_index >= rec.nq || k_start + k_len > rec.nk) {
    throw Error("attention_row: index out of range");
  }
  if (rec.heads.empty()) throw Error("attention_row: no heads captured");
  std::vector<real> out(k_len, 0);
  for (const auto& h : rec.heads) {
    for (std::size_t k = 0; k < k_len; ++k)
      out[k] += h[q_index * rec.nk + k_start + k];
  }
  for (auto& v : out) v /= real(rec.heads.size());
  return out;
}

std::vector<WordAttentionMap> extract_word_maps(
    const HeadWeights& rec, const QueryTrace& trace, TokenGroup group,
    const std::vector<std::string>& words) {
  const auto [t_start, t_len] = trace.fused.range(TokenGroup::Text);
  if (t_len == 0) throw Error("extract_word_maps: no text tokens");
  const auto [g_start, g_len] = trace.fused.range(group);
  if (g_len == 0) throw Error("extract_word_maps: image group absent");
  const std::size_t gh =
      group == TokenGroup::CoarseImage ? trace.coarse_h : trace.fine_h;
  const std::size_t gw =
      group == TokenGroup::CoarseImage ? trace.coarse_w : trace.fine_w;
  if (gh * gw != g_len) {
    throw Error("extract_word_maps: grid dims do not match group length");
  }
  std::vector<WordAttentionMap> maps;
  for (std::size_t i = 0; i < t_len; ++i) {
    WordAttentionMap m;
    const int wi = trace.fused.positions[t_start + i].second;
    m.word = wi >= 0 && static_cast<std::size_t>(wi) < words.size()
                 ? words[wi]
                 : "word" + std::to_string(i);
    m.h = gh;
    m.w = gw;
    m.grid = attention_row(rec, t_start + i, g_start, g_len);
    maps.push_back(std::move(m));
  }
  return maps;
}

const HeadWeights& full_sequence_record(const AttentionCapture& cap,
                                        const QueryTrace& trace) {
  const std::size_t n = trace.fused.length();
  for (auto it = cap.records.rbegin(); it != cap.records.rend(); ++it) {
    if (it->nq == n && it->nk == n) return *it;
  }
  throw Error("full_sequence_record: no full self-attention record");
}

std::vector<real> upsample_bilinear(const std::vector<real>& grid,
                                    std::size_t gh, std::size_t gw,
                                    std::size_t out_h, std::size_t out_w) {
  if (grid.size() != gh * gw || gh == 0 || gw == 0) {
    throw Error("upsample_bilinear: bad grid");
  }
  std::vector<real> out(out_h * out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    // map output pixel centers to source coordinates
    real sy = (real(y) + real(0.5)) * real(gh) / real(out_h) - real(0.5);
    sy = std::min(std::max(sy, real(0)), real(gh - 1));
    const std::size_t y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, gh - 1);
    const real fy = sy - real(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      real sx = (real(x) + real(0.5)) * real(gw) / real(out_w) - real(0.5);
      sx = std::min(std::max(sx, real(0)), real(gw - 1));
      const std::size_t x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, gw - 1);
      const real fx = sx - real(x0);
      const real top = grid[y0 * gw + x0] * (1 - fx) + grid[y0 * gw + x1] * fx;
      const real bot = grid[y1 * gw + x0] * (1 - fx) + grid[y1 * gw + x1] * fx;
      out[y * out_w + x] = top * (1 - fy) + bot * fy;
    }
  }
  return out;
}

std::vector<real> mean_grid(const std::vector<std::vector<real>>& grids) {
  if (grids.empty()) throw Error("mean_grid: empty group");
  std::vector<real> out(grids[0].size(), 0);
  for (const auto& g : grids) {
    if (g.size() != out.size()) throw Error("mean_grid: shape mismatch");
    for (std::size_t i = 0; i < g.size(); ++i) out[i] += g[i];
  }
  for (auto& v : out) v /= real(grids.size());
  return out;
}

ImageTensor modulated_mean_image(const std::vector<std::vector<real>>& maps,
                                 const std::vector<ImageTensor>& images) {
  if (maps.empty() || maps.size() != images.size()) {
    throw Error("modulated_mean_image: empty group or count mismatch");
  }
  const std::size_t h = images[0].height, w = images[0].width;
  ImageTensor out = image_zeros(h, w);
  ImageTensor mean = image_zeros(h, w);
  for (std::size_t i = 0; i < maps.size(); ++i) {
    if (images[i].height != h || images[i].width != w ||
        maps[i].size() != h * w) {
      throw Error("modulated_mean_image: size mismatch");
    }
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          out.at(c, y, x) += (1 - maps[i][y * w + x]) * images[i].at(c, y, x);
          mean.at(c, y, x) += images[i].at(c, y, x);
        }
  }
  const real n = real(maps.size());
  for (std::size_t i = 0; i < out.values.size(); ++i)
    out.values[i] = out.values[i] / n - mean.values[i] / n;
  return out;
}

}  // namespace maaf
