#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "maaf/css.hpp"
#include "maaf/image_cache.hpp"
#include "maaf/model.hpp"

namespace maaf {

struct RecallReport {
  std::vector<int> ks;
  std::vector<real> recall;  // aligned with ks
  real composite = 0;        // mean of R10 and R50 when both requested
  std::map<std::string, std::vector<real>> per_category;
  std::map<std::string, std::size_t> category_counts;
  std::size_t num_queries = 0;
  std::size_t catalog_size = 0;
  std::string config_hash;
};

// Rank the catalog by cosine similarity, descending; ties broken by
// ascending catalog index. recall@k = fraction of queries whose target
// appears in the top k.
RecallReport recall_at_k(const std::vector<std::vector<real>>& query_embs,
                         const std::vector<std::string>& target_ids,
                         const std::vector<std::string>& catalog_ids,
                         const std::vector<std::vector<real>>& catalog_embs,
                         const std::vector<int>& ks,
                         const std::vector<std::string>& categories = {});

// Embeds queries and the catalog of unique target images (first-seen
// order) from a manifest, then scores. Attention runs in inference mode.
RecallReport evaluate_model(Model& m, const DatasetManifest& data,
                            const std::vector<int>& ks,
                            ImageCache* cache = nullptr,
                            const std::string& config_hash = "");

nlohmann::ordered_json recall_report_json(const RecallReport& r);
std::string recall_report_table(const RecallReport& r);

std::string config_hash(const nlohmann::ordered_json& cfg);

// ---- embedding export -----------------------------------------------------

// Rows of a little-endian float32 matrix in <base>.bin with a JSON
// sidecar <base>.json holding {dim, count, scale, ids}.
struct EmbeddingSet {
  std::size_t dim = 0;
  real scale = 0;
  std::vector<std::string> ids;
  std::vector<float> data;  // count x dim row-major
};

void save_embeddings(const std::string& base, const EmbeddingSet& set);
EmbeddingSet load_embeddings(const std::string& base);

// ---- attention maps -------------------------------------------------------

// Head-averaged attention row of one query token, restricted to a
// contiguous key span, reshaped by the caller (keys follow the
// flatten_tokens order for image groups).
std::vector<real> attention_row(const HeadWeights& rec, std::size_t q_index,
                                std::size_t k_start, std::size_t k_len);

struct WordAttentionMap {
  std::string word;
  std::size_t h = 0, w = 0;
  std::vector<real> grid;  // row-major, h*w
};

// Per-word spatial attention from one captured full-sequence attention
// record: for each text token, the head-averaged row over the chosen
// image group, reshaped to that group's feature grid.
std::vector<WordAttentionMap> extract_word_maps(
    const HeadWeights& rec, const QueryTrace& trace, TokenGroup group,
    const std::vector<std::string>& words);

// Picks the last captured record whose query length matches the fused
// sequence (the final full self-attention pass).
const HeadWeights& full_sequence_record(const AttentionCapture& cap,
                                        const QueryTrace& trace);

std::vector<real> upsample_bilinear(const std::vector<real>& grid,
                                    std::size_t gh, std::size_t gw,
                                    std::size_t out_h, std::size_t out_w);

// Elementwise mean of same-shaped grids.
std::vector<real> mean_grid(const std::vector<std::vector<real>>& grids);

// Mean over examples of (1 - attention) applied pixelwise to the matching
// image, minus the plain mean image. Maps must already be upsampled to
// the image size.
ImageTensor modulated_mean_image(const std::vector<std::vector<real>>& maps,
                                 const std::vector<ImageTensor>& images);

}  // namespace maaf
