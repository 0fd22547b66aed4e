// Copyright 2026 The colakg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Forward model: semantic adapters, ID/semantic fusion, attention-weighted
// neighbor augmentation over the item-item graph, LightGCN propagation with
// layer averaging, and inner-product scoring.
//
// Node layout for propagation: users occupy rows [0, n_users), items occupy
// rows [n_users, n_users + n_items).

#pragma once

#include <array>
#include <cmath>
#include <random>

#include "colakg/data.hpp"
#include "colakg/embedding.hpp"

namespace colakg {

struct ModelConfig {
  std::size_t dim = 64;            // d
  std::size_t attention_dim = 64;  // d_a
  std::size_t layers = 3;          // L
  double leaky_slope = 0.2;
};

struct Ablation {
  bool no_item_semantic = false;  // h_v = e_v
  bool no_user_semantic = false;  // h_u = e_u
  bool no_neighbor_aug = false;   // h'_v = h_v
  bool no_second_order = false;   // consumed when rendering prompts
};

template <typename T>
struct ModelState {
  Matrix<T> user_emb;  // |U| x d
  Matrix<T> item_emb;  // |V| x d
  Matrix<T> w_item;    // d x d_s, item adapter
  Matrix<T> w_user;    // d x d_s, user adapter
  Matrix<T> w_att;     // d_a x d_s, attention projection of frozen s_v
  Matrix<T> a_att;     // 1 x 2 d_a, attention vector

  static ModelState zeros(std::size_t n_users, std::size_t n_items, std::size_t semantic_dim,
                          const ModelConfig& cfg) {
    ModelState s;
    s.user_emb = Matrix<T>(n_users, cfg.dim);
    s.item_emb = Matrix<T>(n_items, cfg.dim);
    s.w_item = Matrix<T>(cfg.dim, semantic_dim);
    s.w_user = Matrix<T>(cfg.dim, semantic_dim);
    s.w_att = Matrix<T>(cfg.attention_dim, semantic_dim);
    s.a_att = Matrix<T>(1, 2 * cfg.attention_dim);
    return s;
  }

  /// Embeddings ~ N(0, 0.1); matrices Xavier-uniform.
  static ModelState initialized(std::size_t n_users, std::size_t n_items,
                                std::size_t semantic_dim, const ModelConfig& cfg,
                                std::uint64_t seed) {
    auto s = zeros(n_users, n_items, semantic_dim, cfg);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 0.1);
    for (auto* m : {&s.user_emb, &s.item_emb})
      for (auto& x : m->flat()) x = static_cast<T>(normal(rng));
    for (auto* m : {&s.w_item, &s.w_user, &s.w_att, &s.a_att}) {
      const double bound = std::sqrt(6.0 / double(m->rows() + m->cols()));
      std::uniform_real_distribution<double> uni(-bound, bound);
      for (auto& x : m->flat()) x = static_cast<T>(uni(rng));
    }
    return s;
  }

  std::size_t n_users() const { return user_emb.rows(); }
  std::size_t n_items() const { return item_emb.rows(); }
  std::size_t dim() const { return user_emb.cols(); }
  std::size_t semantic_dim() const { return w_item.cols(); }
  std::size_t attention_dim() const { return w_att.rows(); }

  /// Fixed table order shared by the optimizer and the checkpoint format.
  std::array<Matrix<T>*, 6> tables() {
    return {&user_emb, &item_emb, &w_item, &w_user, &w_att, &a_att};
  }
  std::array<const Matrix<T>*, 6> tables() const {
    return {&user_emb, &item_emb, &w_item, &w_user, &w_att, &a_att};
  }

  bool all_finite() const {
    for (const auto* m : tables())
      for (T x : m->flat())
        if (!std::isfinite(x)) return false;
    return true;
  }

  bool operator==(const ModelState&) const = default;
};

// ---------------------------------------------------------------------------
// Elementary pieces

template <typename T>
T elu(T x) {
  return x > 0 ? x : std::expm1(x);
}

/// d ELU / dx expressed through the pre-activation.
template <typename T>
T elu_grad(T x) {
  return x > 0 ? T(1) : std::exp(x);
}

template <typename T>
T leaky_relu(T x, double slope) {
  return x > 0 ? x : static_cast<T>(slope) * x;
}

/// ELU(W s), W given as d x d_s.
template <typename T, typename S>
std::vector<T> adapter_forward(std::span<const S> s, const Matrix<T>& w) {
  std::vector<T> out(w.rows());
  for (std::size_t r = 0; r < w.rows(); ++r) out[r] = elu(dot(w.row(r), s));
  return out;
}

template <typename T>
std::vector<T> fuse(std::span<const T> id_emb, std::span<const T> semantic) {
  std::vector<T> out(id_emb.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(0.5) * (id_emb[i] + semantic[i]);
  return out;
}

/// Softmax over logits with max-subtraction.
template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
  if (logits.empty()) return {};
  const T mx = *std::max_element(logits.begin(), logits.end());
  std::vector<T> out(logits.size());
  T total = 0;
  for (std::size_t j = 0; j < logits.size(); ++j) total += out[j] = std::exp(logits[j] - mx);
  for (auto& x : out) x /= total;
  return out;
}

/// alpha_ij = softmax_j LeakyReLU(a . [W_att s_i || W_att s_j]) over the
/// neighbor list. Reads only frozen semantics and attention parameters.
template <typename T>
std::vector<T> attention_weights(const Matrix<T>& w_att, const Matrix<T>& a_att,
                                 const Matrix<float>& item_semantic, ItemId item,
                                 std::span<const ItemId> neighbors, double slope = 0.2) {
  if (neighbors.empty()) return {};
  const std::size_t da = w_att.rows();
  auto project = [&](ItemId v) {
    std::vector<T> z(da);
    for (std::size_t r = 0; r < da; ++r) z[r] = dot(w_att.row(r), item_semantic.row(v));
    return z;
  };
  auto a = a_att.row(0);
  const auto zi = project(item);
  const T src = dot(a.subspan(0, da), std::span<const T>(zi));
  std::vector<T> logits;
  for (ItemId j : neighbors) {
    const auto zj = project(j);
    logits.push_back(leaky_relu(src + dot(a.subspan(da, da), std::span<const T>(zj)), slope));
  }
  return softmax<T>(logits);
}

/// ELU(0.5 (h_i + sum_j alpha_j h_j)); an empty neighbor set returns h_i.
template <typename T>
std::vector<T> augment_item(std::span<const T> self, std::span<const std::vector<T>> neighbors,
                            std::span<const T> alpha) {
  std::vector<T> out(self.begin(), self.end());
  if (neighbors.empty()) return out;
  for (std::size_t c = 0; c < out.size(); ++c) {
    T agg = 0;
    for (std::size_t j = 0; j < neighbors.size(); ++j) agg += alpha[j] * neighbors[j][c];
    out[c] = elu(T(0.5) * (self[c] + agg));
  }
  return out;
}

template <typename T>
T predict(std::span<const T> user, std::span<const T> item) {
  return dot(user, item);
}

// ---------------------------------------------------------------------------
// Graph structure

/// Symmetric-normalized bipartite adjacency built from training edges.
struct NormalizedAdjacency {
  struct Entry {
    std::uint32_t node;  // item id in user lists, user id in item lists
    double coef;         // 1 / sqrt(|M_u| |M_v|)
  };
  std::vector<std::vector<Entry>> user_rows;
  std::vector<std::vector<Entry>> item_rows;

  std::size_t n_users() const { return user_rows.size(); }
  std::size_t n_items() const { return item_rows.size(); }

  static NormalizedAdjacency from_dataset(const InteractionDataset& ds) {
    NormalizedAdjacency a;
    a.user_rows.resize(ds.n_users);
    a.item_rows.resize(ds.n_items);
    for (const auto& e : ds.train) {
      const double c = 1.0 / std::sqrt(double(ds.user_items[e.user].size()) *
                                       double(ds.item_users[e.item].size()));
      a.user_rows[e.user].push_back({e.item, c});
      a.item_rows[e.item].push_back({e.user, c});
    }
    return a;
  }
};

/// out = A_hat * in over the stacked [users; items] layout.
template <typename T>
void propagate_once(const NormalizedAdjacency& adj, const Matrix<T>& in, Matrix<T>& out,
                    unsigned threads) {
  const std::size_t nu = adj.n_users();
  const std::size_t d = in.cols();
  parallel_for(in.rows(), threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t r = lo; r < hi; ++r) {
      auto dst = out.row(r);
      std::fill(dst.begin(), dst.end(), T(0));
      const auto& entries = r < nu ? adj.user_rows[r] : adj.item_rows[r - nu];
      const std::size_t offset = r < nu ? nu : 0;
      for (const auto& e : entries) {
        auto src = in.row(offset + e.node);
        const T c = static_cast<T>(e.coef);
        for (std::size_t k = 0; k < d; ++k) dst[k] += c * src[k];
      }
    }
  });
}

/// Mean of layers 0..L of repeated propagation, no dropout.
template <typename T>
Matrix<T> lightgcn_propagate(const NormalizedAdjacency& adj, const Matrix<T>& h0,
                             std::size_t layers, unsigned threads = 1) {
  Matrix<T> acc = h0;
  Matrix<T> cur = h0, next(h0.rows(), h0.cols());
  for (std::size_t l = 0; l < layers; ++l) {
    propagate_once(adj, cur, next, threads);
    std::swap(cur, next);
    auto a = acc.flat();
    auto c = cur.flat();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += c[i];
  }
  const T inv = T(1) / static_cast<T>(layers + 1);
  for (auto& x : acc.flat()) x *= inv;
  return acc;
}

// ---------------------------------------------------------------------------
// Full forward

using NeighborLists = std::vector<std::vector<ItemId>>;

struct ModelInputs {
  const NormalizedAdjacency* adjacency = nullptr;
  const Matrix<float>* item_semantic = nullptr;  // |V| x d_s, frozen
  const Matrix<float>* user_semantic = nullptr;  // |U| x d_s, frozen
  const NeighborLists* neighbors = nullptr;      // N_k(v) per item
  Ablation ablation;
  ModelConfig config;
  unsigned threads = 1;

  bool item_semantic_on() const { return !ablation.no_item_semantic; }
  bool user_semantic_on() const { return !ablation.no_user_semantic; }
  bool augmentation_on() const {
    if (ablation.no_neighbor_aug || neighbors == nullptr) return false;
    return std::any_of(neighbors->begin(), neighbors->end(),
                       [](const auto& l) { return !l.empty(); });
  }

  /// Throws kMissingStage when an enabled path lacks its artifact.
  void validate(std::size_t n_users, std::size_t n_items, std::size_t semantic_dim) const {
    if (adjacency == nullptr) throw Error(ErrorKind::kInternal, "no adjacency");
    if (adjacency->n_users() != n_users || adjacency->n_items() != n_items)
      throw Error(ErrorKind::kInternal, "adjacency shape does not match model");
    const bool need_items = item_semantic_on() || augmentation_on();
    if (need_items && (item_semantic == nullptr || item_semantic->rows() != n_items ||
                       item_semantic->cols() != semantic_dim))
      throw Error(ErrorKind::kMissingStage, "item semantic embeddings missing or misshapen");
    if (user_semantic_on() && (user_semantic == nullptr || user_semantic->rows() != n_users ||
                               user_semantic->cols() != semantic_dim))
      throw Error(ErrorKind::kMissingStage, "user semantic embeddings missing or misshapen");
    if (augmentation_on()) {
      if (neighbors->size() != n_items)
        throw Error(ErrorKind::kMissingStage, "item-item graph does not cover all items");
      for (std::size_t i = 0; i < n_items; ++i)
        for (ItemId j : (*neighbors)[i])
          if (j >= n_items || j == i)
            throw Error(ErrorKind::kInput, "invalid neighbor " + std::to_string(j) +
                                               " of item " + std::to_string(i));
    }
  }
};

/// Inverted dropout applied to layer 0 (embedding dropout) and to every
/// propagated layer (message dropout). Training only.
struct DropoutSpec {
  double rate = 0.0;
  std::uint64_t seed = 0;
};

/// Every activation the backward pass needs.
template <typename T>
struct ForwardTrace {
  Matrix<T> item_pre;   // W1 s_v            (empty when item semantic off)
  Matrix<T> user_pre;   // W2 s_u            (empty when user semantic off)
  Matrix<T> item_fused; // h_v
  Matrix<T> user_fused; // h_u
  // Attention, flattened over (item, neighbor) pairs; offsets has |V|+1 entries.
  Matrix<T> att_proj;                // W_att s_v, |V| x d_a
  std::vector<std::size_t> offsets;
  std::vector<T> att_pre;            // a . [z_i || z_j] before LeakyReLU
  std::vector<T> alpha;
  Matrix<T> item_aug_pre;            // 0.5 (h_i + sum alpha h_j)
  std::vector<char> augmented;       // per item: augmentation applied
  std::vector<Matrix<T>> layers;     // H^(0..L), after dropout
  std::vector<Matrix<T>> masks;      // dropout scale per layer, empty if none
  Matrix<T> final_rep;               // mean of layers

  std::span<const T> user(std::size_t u) const { return final_rep.row(u); }
  std::span<const T> item(std::size_t v) const { return final_rep.row(user_fused.rows() + v); }
};

template <typename T>
ForwardTrace<T> forward(const ModelState<T>& st, const ModelInputs& in,
                        const DropoutSpec* dropout = nullptr) {
  const std::size_t nu = st.n_users(), nv = st.n_items(), d = st.dim();
  in.validate(nu, nv, st.semantic_dim());
  const unsigned threads = in.threads;
  ForwardTrace<T> tr;

  // Adapters and fusion.
  tr.item_fused = st.item_emb;
  if (in.item_semantic_on()) {
    tr.item_pre = Matrix<T>(nv, d);
    parallel_for(nv, threads, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t v = lo; v < hi; ++v) {
        auto s = in.item_semantic->row(v);
        for (std::size_t r = 0; r < d; ++r) {
          const T q = dot(st.w_item.row(r), s);
          tr.item_pre(v, r) = q;
          tr.item_fused(v, r) = T(0.5) * (st.item_emb(v, r) + elu(q));
        }
      }
    });
  }
  tr.user_fused = st.user_emb;
  if (in.user_semantic_on()) {
    tr.user_pre = Matrix<T>(nu, d);
    parallel_for(nu, threads, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t u = lo; u < hi; ++u) {
        auto s = in.user_semantic->row(u);
        for (std::size_t r = 0; r < d; ++r) {
          const T q = dot(st.w_user.row(r), s);
          tr.user_pre(u, r) = q;
          tr.user_fused(u, r) = T(0.5) * (st.user_emb(u, r) + elu(q));
        }
      }
    });
  }

  // Neighbor augmentation, attention computed from frozen s_v only.
  Matrix<T> item_out = tr.item_fused;
  tr.augmented.assign(nv, 0);
  tr.offsets.assign(nv + 1, 0);
  if (in.augmentation_on()) {
    const std::size_t da = st.attention_dim();
    const auto& nbrs = *in.neighbors;
    tr.att_proj = Matrix<T>(nv, da);
    parallel_for(nv, threads, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t v = lo; v < hi; ++v)
        for (std::size_t r = 0; r < da; ++r)
          tr.att_proj(v, r) = dot(st.w_att.row(r), in.item_semantic->row(v));
    });
    for (std::size_t i = 0; i < nv; ++i) tr.offsets[i + 1] = tr.offsets[i] + nbrs[i].size();
    tr.att_pre.resize(tr.offsets[nv]);
    tr.alpha.resize(tr.offsets[nv]);
    tr.item_aug_pre = Matrix<T>(nv, d);
    auto a_src = st.a_att.row(0).subspan(0, da);
    auto a_dst = st.a_att.row(0).subspan(da, da);
    std::vector<T> src_score(nv), dst_score(nv);
    for (std::size_t v = 0; v < nv; ++v) {
      src_score[v] = dot(a_src, std::span<const T>(tr.att_proj.row(v)));
      dst_score[v] = dot(a_dst, std::span<const T>(tr.att_proj.row(v)));
    }
    parallel_for(nv, threads, [&](std::size_t lo, std::size_t hi) {
      std::vector<T> logits;
      for (std::size_t i = lo; i < hi; ++i) {
        if (nbrs[i].empty()) continue;
        logits.clear();
        for (std::size_t n = 0; n < nbrs[i].size(); ++n) {
          const T t = src_score[i] + dst_score[nbrs[i][n]];
          tr.att_pre[tr.offsets[i] + n] = t;
          logits.push_back(leaky_relu(t, in.config.leaky_slope));
        }
        auto alpha = softmax<T>(logits);
        std::copy(alpha.begin(), alpha.end(), tr.alpha.begin() + tr.offsets[i]);
        for (std::size_t c = 0; c < d; ++c) {
          T agg = 0;
          for (std::size_t n = 0; n < nbrs[i].size(); ++n)
            agg += alpha[n] * tr.item_fused(nbrs[i][n], c);
          const T p = T(0.5) * (tr.item_fused(i, c) + agg);
          tr.item_aug_pre(i, c) = p;
          item_out(i, c) = elu(p);
        }
        tr.augmented[i] = 1;
      }
    });
  }

  // Layer 0 and propagation.
  const std::size_t layers = in.config.layers;
  const std::size_t n = nu + nv;
  Matrix<T> h0(n, d);
  for (std::size_t u = 0; u < nu; ++u)
    std::copy(tr.user_fused.row(u).begin(), tr.user_fused.row(u).end(), h0.row(u).begin());
  for (std::size_t v = 0; v < nv; ++v)
    std::copy(item_out.row(v).begin(), item_out.row(v).end(), h0.row(nu + v).begin());

  const bool drop = dropout != nullptr && dropout->rate > 0;
  std::mt19937_64 rng(drop ? dropout->seed : 0);
  auto apply_mask = [&](Matrix<T>& h) {
    Matrix<T> mask(h.rows(), h.cols());
    std::bernoulli_distribution keep(1.0 - dropout->rate);
    const T scale = static_cast<T>(1.0 / (1.0 - dropout->rate));
    auto m = mask.flat();
    auto x = h.flat();
    for (std::size_t i = 0; i < m.size(); ++i) {
      m[i] = keep(rng) ? scale : T(0);
      x[i] *= m[i];
    }
    tr.masks.push_back(std::move(mask));
  };

  if (drop) apply_mask(h0);
  tr.layers.push_back(std::move(h0));
  for (std::size_t l = 0; l < layers; ++l) {
    Matrix<T> next(n, d);
    propagate_once(*in.adjacency, tr.layers.back(), next, threads);
    if (drop) apply_mask(next);
    tr.layers.push_back(std::move(next));
  }
  tr.final_rep = Matrix<T>(n, d);
  auto acc = tr.final_rep.flat();
  for (const auto& h : tr.layers) {
    auto x = h.flat();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += x[i];
  }
  const T inv = T(1) / static_cast<T>(layers + 1);
  for (auto& x : acc) x *= inv;
  return tr;
}

// ---------------------------------------------------------------------------
// Checkpoints

/// "CLKM", u32 version, u32 n_users, n_items, d, d_s, d_a, then the tables of
/// ModelState::tables() order as little-endian f32.
template <typename T>
std::string format_checkpoint(const ModelState<T>& st) {
  std::string out = "CLKM";
  for (std::uint32_t v : {1u, std::uint32_t(st.n_users()), std::uint32_t(st.n_items()),
                          std::uint32_t(st.dim()), std::uint32_t(st.semantic_dim()),
                          std::uint32_t(st.attention_dim())})
    detail::put_le(out, v);
  for (const auto* m : st.tables())
    for (T x : m->flat()) detail::put_f32(out, static_cast<float>(x));
  return out;
}

template <typename T>
ModelState<T> parse_checkpoint(std::string_view in) {
  if (in.substr(0, 4) != "CLKM") throw Error(ErrorKind::kInput, "bad checkpoint magic");
  std::size_t pos = 4;
  if (detail::get_le<std::uint32_t>(in, pos) != 1)
    throw Error(ErrorKind::kInput, "unsupported checkpoint version");
  const auto nu = detail::get_le<std::uint32_t>(in, pos);
  const auto nv = detail::get_le<std::uint32_t>(in, pos);
  ModelConfig cfg;
  cfg.dim = detail::get_le<std::uint32_t>(in, pos);
  const auto ds = detail::get_le<std::uint32_t>(in, pos);
  cfg.attention_dim = detail::get_le<std::uint32_t>(in, pos);
  auto st = ModelState<T>::zeros(nu, nv, ds, cfg);
  for (auto* m : st.tables())
    for (auto& x : m->flat()) x = static_cast<T>(detail::get_f32(in, pos));
  if (pos != in.size()) throw Error(ErrorKind::kInput, "trailing bytes in checkpoint");
  return st;
}

template <typename T>
void save_checkpoint(const ModelState<T>& st, const std::string& path) {
  write_file(path, format_checkpoint(st));
}

template <typename T>
ModelState<T> load_checkpoint(const std::string& path) {
  return parse_checkpoint<T>(read_file(path));
}

}  // namespace colakg
