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

// BPR training with negative sampling, reverse-mode gradients through the
// whole forward model, and Adam.

#pragma once

#include <chrono>
#include <functional>
#include <set>

#include "colakg/eval.hpp"
#include "colakg/model.hpp"

namespace colakg {

struct Triplet {
  UserId user;
  ItemId pos;
  ItemId neg;
  bool operator==(const Triplet&) const = default;
};

/// (u, v+) uniform over training edges, v- uniform over V \ M_u by rejection.
/// Users who interacted with every item are skipped.
template <typename Rng>
std::vector<Triplet> sample_training_batch(const InteractionDataset& ds,
                                           const std::vector<std::vector<ItemId>>& sorted_items,
                                           std::size_t batch_size, Rng& rng,
                                           std::vector<std::string>* warnings = nullptr) {
  if (ds.train.empty()) throw Error(ErrorKind::kInput, "no training edges");
  std::uniform_int_distribution<std::size_t> pick_edge(0, ds.train.size() - 1);
  std::uniform_int_distribution<ItemId> pick_item(0, static_cast<ItemId>(ds.n_items - 1));
  std::vector<Triplet> out;
  out.reserve(batch_size);
  std::size_t skipped = 0;
  const std::size_t max_skips = 10 * batch_size + 100;
  while (out.size() < batch_size && skipped < max_skips) {
    const Edge& e = ds.train[pick_edge(rng)];
    const auto& mine = sorted_items[e.user];
    if (mine.size() >= ds.n_items) {
      if (warnings && skipped == 0)
        warnings->push_back("user " + std::to_string(e.user) +
                            " interacted with every item; no negative available");
      ++skipped;
      continue;
    }
    ItemId neg;
    do {
      neg = pick_item(rng);
    } while (std::binary_search(mine.begin(), mine.end(), neg));
    out.push_back({e.user, e.item, neg});
  }
  return out;
}

/// -ln sigmoid(x), computed without overflow.
inline double neg_log_sigmoid(double x) {
  return x >= 0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double z = std::exp(x);
  return z / (1.0 + z);
}

/// Sum over pairs of -ln sigmoid(pos - neg).
inline double bpr_pair_loss(std::span<const double> pos, std::span<const double> neg) {
  if (pos.size() != neg.size()) throw Error(ErrorKind::kInternal, "score lists differ in length");
  double total = 0;
  for (std::size_t i = 0; i < pos.size(); ++i) total += neg_log_sigmoid(pos[i] - neg[i]);
  return total;
}

/// Parameters the L2 term covers: ID embeddings of the batch's distinct users
/// and items, plus every weight matrix on an active path.
struct RegularizedSet {
  std::vector<UserId> users;
  std::vector<ItemId> items;
  bool w_item = false, w_user = false, attention = false;

  static RegularizedSet of(std::span<const Triplet> batch, const ModelInputs& in) {
    RegularizedSet r;
    std::set<UserId> us;
    std::set<ItemId> is;
    for (const auto& t : batch) {
      us.insert(t.user);
      is.insert(t.pos);
      is.insert(t.neg);
    }
    r.users.assign(us.begin(), us.end());
    r.items.assign(is.begin(), is.end());
    r.w_item = in.item_semantic_on();
    r.w_user = in.user_semantic_on();
    r.attention = in.augmentation_on();
    return r;
  }
};

template <typename T>
double l2_penalty(const ModelState<T>& st, const RegularizedSet& r) {
  auto sq = [](std::span<const T> xs) {
    double acc = 0;
    for (T x : xs) acc += double(x) * double(x);
    return acc;
  };
  double total = 0;
  for (UserId u : r.users) total += sq(st.user_emb.row(u));
  for (ItemId v : r.items) total += sq(st.item_emb.row(v));
  if (r.w_item) total += sq(st.w_item.flat());
  if (r.w_user) total += sq(st.w_user.flat());
  if (r.attention) total += sq(st.w_att.flat()) + sq(st.a_att.flat());
  return total;
}

template <typename T>
void batch_scores(const ForwardTrace<T>& tr, std::span<const Triplet> batch,
                  std::vector<double>& pos, std::vector<double>& neg) {
  pos.resize(batch.size());
  neg.resize(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    pos[i] = static_cast<double>(predict(tr.user(batch[i].user), tr.item(batch[i].pos)));
    neg[i] = static_cast<double>(predict(tr.user(batch[i].user), tr.item(batch[i].neg)));
  }
}

/// BPR loss plus lambda * ||Theta||^2 for a batch under a given trace.
template <typename T>
double batch_loss(const ModelState<T>& st, const ForwardTrace<T>& tr,
                  std::span<const Triplet> batch, double lambda, const ModelInputs& in) {
  std::vector<double> pos, neg;
  batch_scores(tr, batch, pos, neg);
  return bpr_pair_loss(pos, neg) + lambda * l2_penalty(st, RegularizedSet::of(batch, in));
}

namespace detail {

/// out(r, :) = sum_i upstream(i, r) * input(i, :), parallel over r.
template <typename T>
void accumulate_weight_grad(const Matrix<T>& upstream, const Matrix<float>& input, Matrix<T>& out,
                            unsigned threads) {
  parallel_for(out.rows(), threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t r = lo; r < hi; ++r) {
      auto dst = out.row(r);
      for (std::size_t i = 0; i < upstream.rows(); ++i) {
        const T g = upstream(i, r);
        if (g == T(0)) continue;
        auto src = input.row(i);
        for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += g * static_cast<T>(src[c]);
      }
    }
  });
}

}  // namespace detail

/// Gradient of batch_loss w.r.t. every trainable table. Frozen semantic
/// vectors are inputs only and receive nothing.
template <typename T>
ModelState<T> backward(const ModelState<T>& st, const ForwardTrace<T>& tr,
                       std::span<const Triplet> batch, double lambda, const ModelInputs& in) {
  const std::size_t nu = st.n_users(), nv = st.n_items(), d = st.dim();
  const std::size_t n = nu + nv;
  const unsigned threads = in.threads;
  ModelConfig shape = in.config;
  shape.dim = d;
  shape.attention_dim = st.attention_dim();
  auto grad = ModelState<T>::zeros(nu, nv, st.semantic_dim(), shape);

  // d loss / d final representation.
  Matrix<T> dfinal(n, d);
  for (const auto& t : batch) {
    auto fu = tr.user(t.user);
    auto fp = tr.item(t.pos);
    auto fn = tr.item(t.neg);
    const double x = double(predict(fu, fp)) - double(predict(fu, fn));
    const T g = static_cast<T>(-sigmoid(-x));
    auto du = dfinal.row(t.user);
    auto dp = dfinal.row(nu + t.pos);
    auto dn = dfinal.row(nu + t.neg);
    for (std::size_t c = 0; c < d; ++c) {
      du[c] += g * (fp[c] - fn[c]);
      dp[c] += g * fu[c];
      dn[c] -= g * fu[c];
    }
  }

  // Layer averaging and propagation, in reverse. A_hat is symmetric.
  const std::size_t layers = tr.layers.size() - 1;
  const T inv = T(1) / static_cast<T>(layers + 1);
  const bool masked = !tr.masks.empty();
  Matrix<T> g_layer(n, d);
  {
    auto gl = g_layer.flat();
    auto df = dfinal.flat();
    for (std::size_t i = 0; i < gl.size(); ++i) gl[i] = df[i] * inv;
  }
  Matrix<T> scratch(n, d);
  for (std::size_t l = layers; l >= 1; --l) {
    if (masked) {
      auto gl = g_layer.flat();
      auto m = tr.masks[l].flat();
      for (std::size_t i = 0; i < gl.size(); ++i) gl[i] *= m[i];
    }
    propagate_once(*in.adjacency, g_layer, scratch, threads);
    auto s = scratch.flat();
    auto df = dfinal.flat();
    for (std::size_t i = 0; i < s.size(); ++i) s[i] += df[i] * inv;
    std::swap(g_layer, scratch);
  }
  if (masked) {
    auto gl = g_layer.flat();
    auto m = tr.masks[0].flat();
    for (std::size_t i = 0; i < gl.size(); ++i) gl[i] *= m[i];
  }

  // Users: h_u = e_u, or 0.5 (e_u + ELU(W2 s_u)).
  if (in.user_semantic_on()) {
    Matrix<T> dpre(nu, d);
    for (std::size_t u = 0; u < nu; ++u) {
      for (std::size_t c = 0; c < d; ++c) {
        const T dh = g_layer(u, c);
        grad.user_emb(u, c) = T(0.5) * dh;
        dpre(u, c) = T(0.5) * dh * elu_grad(tr.user_pre(u, c));
      }
    }
    detail::accumulate_weight_grad(dpre, *in.user_semantic, grad.w_user, threads);
  } else {
    for (std::size_t u = 0; u < nu; ++u)
      std::copy(g_layer.row(u).begin(), g_layer.row(u).end(), grad.user_emb.row(u).begin());
  }

  // Items: back through augmentation to the fused embeddings h_v.
  Matrix<T> dfused(nv, d);
  const bool aug = in.augmentation_on();
  const std::size_t da = st.attention_dim();
  std::vector<T> dsrc(nv, T(0)), ddst(nv, T(0));
  for (std::size_t i = 0; i < nv; ++i) {
    auto dout = g_layer.row(nu + i);
    if (!aug || !tr.augmented[i]) {
      auto dst = dfused.row(i);
      for (std::size_t c = 0; c < d; ++c) dst[c] += dout[c];
      continue;
    }
    const auto& nbrs = (*in.neighbors)[i];
    const std::size_t off = tr.offsets[i];
    std::vector<T> dp(d);
    for (std::size_t c = 0; c < d; ++c) dp[c] = dout[c] * elu_grad(tr.item_aug_pre(i, c));
    for (std::size_t c = 0; c < d; ++c) dfused(i, c) += T(0.5) * dp[c];
    std::vector<T> dalpha(nbrs.size());
    T weighted = 0;
    for (std::size_t k = 0; k < nbrs.size(); ++k) {
      const T a = tr.alpha[off + k];
      auto hj = tr.item_fused.row(nbrs[k]);
      T acc = 0;
      for (std::size_t c = 0; c < d; ++c) {
        dfused(nbrs[k], c) += T(0.5) * a * dp[c];
        acc += dp[c] * hj[c];
      }
      dalpha[k] = T(0.5) * acc;
      weighted += a * dalpha[k];
    }
    for (std::size_t k = 0; k < nbrs.size(); ++k) {
      const T dlogit = tr.alpha[off + k] * (dalpha[k] - weighted);
      const T t = tr.att_pre[off + k];
      const T dt = dlogit * (t > 0 ? T(1) : static_cast<T>(in.config.leaky_slope));
      dsrc[i] += dt;
      ddst[nbrs[k]] += dt;
    }
  }
  if (aug) {
    auto a_src = st.a_att.row(0).subspan(0, da);
    auto a_dst = st.a_att.row(0).subspan(da, da);
    auto ga = grad.a_att.row(0);
    Matrix<T> dz(nv, da);
    for (std::size_t v = 0; v < nv; ++v) {
      auto z = tr.att_proj.row(v);
      for (std::size_t r = 0; r < da; ++r) {
        ga[r] += dsrc[v] * z[r];
        ga[da + r] += ddst[v] * z[r];
        dz(v, r) = dsrc[v] * a_src[r] + ddst[v] * a_dst[r];
      }
    }
    detail::accumulate_weight_grad(dz, *in.item_semantic, grad.w_att, threads);
  }
  if (in.item_semantic_on()) {
    Matrix<T> dpre(nv, d);
    for (std::size_t v = 0; v < nv; ++v) {
      for (std::size_t c = 0; c < d; ++c) {
        const T dh = dfused(v, c);
        grad.item_emb(v, c) = T(0.5) * dh;
        dpre(v, c) = T(0.5) * dh * elu_grad(tr.item_pre(v, c));
      }
    }
    detail::accumulate_weight_grad(dpre, *in.item_semantic, grad.w_item, threads);
  } else {
    grad.item_emb = dfused;
  }

  // L2 term.
  if (lambda != 0) {
    const auto reg = RegularizedSet::of(batch, in);
    const T two_l = static_cast<T>(2 * lambda);
    auto add = [two_l](std::span<T> g, std::span<const T> x) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += two_l * x[i];
    };
    for (UserId u : reg.users) add(grad.user_emb.row(u), st.user_emb.row(u));
    for (ItemId v : reg.items) add(grad.item_emb.row(v), st.item_emb.row(v));
    if (reg.w_item) add(grad.w_item.flat(), st.w_item.flat());
    if (reg.w_user) add(grad.w_user.flat(), st.w_user.flat());
    if (reg.attention) {
      add(grad.w_att.flat(), st.w_att.flat());
      add(grad.a_att.flat(), st.a_att.flat());
    }
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Adam

template <typename T>
struct AdamState {
  ModelState<T> m;
  ModelState<T> v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_model(const ModelState<T>& st) {
    AdamState a;
    a.m = st;
    a.v = st;
    for (auto* t : a.m.tables()) t->fill(T(0));
    for (auto* t : a.v.tables()) t->fill(T(0));
    return a;
  }
};

/// Bias-corrected Adam. Throws without touching anything when a gradient
/// component is not finite.
template <typename T>
void adam_step(ModelState<T>& st, AdamState<T>& opt, const ModelState<T>& grad, double lr) {
  static constexpr const char* kNames[] = {"user_emb", "item_emb", "w_item",
                                           "w_user",   "w_att",    "a_att"};
  const auto gt = grad.tables();
  for (std::size_t t = 0; t < gt.size(); ++t)
    for (std::size_t i = 0; i < gt[t]->size(); ++i)
      if (!std::isfinite(gt[t]->flat()[i]))
        throw Error(ErrorKind::kInternal, std::string("non-finite gradient in ") + kNames[t] +
                                              " at flat index " + std::to_string(i) +
                                              " (step " + std::to_string(opt.step + 1) + ")");
  ++opt.step;
  const double c1 = 1.0 - std::pow(opt.beta1, double(opt.step));
  const double c2 = 1.0 - std::pow(opt.beta2, double(opt.step));
  auto pt = st.tables();
  auto mt = opt.m.tables();
  auto vt = opt.v.tables();
  for (std::size_t t = 0; t < pt.size(); ++t) {
    auto p = pt[t]->flat();
    auto m = mt[t]->flat();
    auto v = vt[t]->flat();
    auto g = gt[t]->flat();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = opt.beta1 * double(m[i]) + (1 - opt.beta1) * gi;
      const double vi = opt.beta2 * double(v[i]) + (1 - opt.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + opt.eps);
      p[i] = static_cast<T>(double(p[i]) - update);
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  double learning_rate = 0.001;
  std::size_t batch_size = 1024;
  std::size_t max_epochs = 200;
  std::size_t max_steps = 0;  // 0 = unlimited
  double l2 = 1e-4;
  double dropout = 0.2;
  std::uint64_t seed = 2024;
  std::size_t patience = 20;
  std::size_t eval_k = 20;
  ModelConfig model;
  Ablation ablation;
  unsigned threads = 1;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0;  // mean per pair, including the L2 term
  double val_recall = 0;
  double val_ndcg = 0;
  double elapsed_ms = 0;
  bool aborted = false;
  std::string diagnostic;
};

inline std::string format_epoch_log(const EpochLog& e, std::size_t k = 20) {
  nlohmann::ordered_json j;
  j["epoch"] = e.epoch;
  j["train_loss"] = e.train_loss;
  j["val_recall@" + std::to_string(k)] = e.val_recall;
  j["val_ndcg@" + std::to_string(k)] = e.val_ndcg;
  j["elapsed_ms"] = e.elapsed_ms;
  if (e.aborted) j["aborted"] = e.diagnostic;
  return j.dump();
}

/// Read-only artifacts that feed the model: adjacency, frozen semantics and
/// the neighbor lists.
struct TrainingArtifacts {
  NormalizedAdjacency adjacency;
  Matrix<float> item_semantic;
  Matrix<float> user_semantic;
  NeighborLists neighbors;

  std::size_t semantic_dim() const {
    if (!item_semantic.empty()) return item_semantic.cols();
    if (!user_semantic.empty()) return user_semantic.cols();
    return 1;
  }

  ModelInputs inputs(const Ablation& ablation, const ModelConfig& cfg, unsigned threads) const {
    ModelInputs in;
    in.adjacency = &adjacency;
    in.item_semantic = item_semantic.empty() ? nullptr : &item_semantic;
    in.user_semantic = user_semantic.empty() ? nullptr : &user_semantic;
    in.neighbors = neighbors.empty() ? nullptr : &neighbors;
    in.ablation = ablation;
    in.config = cfg;
    in.threads = threads;
    return in;
  }
};

template <typename T>
UserScorer trace_scorer(const ForwardTrace<T>& tr) {
  return [&tr](UserId u, std::span<double> out) {
    auto hu = tr.user(u);
    for (std::size_t v = 0; v < out.size(); ++v) out[v] = static_cast<double>(predict(hu, tr.item(v)));
  };
}

template <typename T>
struct TrainResult {
  ModelState<T> best;
  ModelState<T> last;
  std::vector<EpochLog> history;
  std::size_t best_epoch = 0;
  double best_val_recall = -1;
  std::size_t steps = 0;
};

/// Epochs of ceil(|train| / batch) sampled BPR steps. Validation Recall@k
/// after every epoch selects the best state; training stops after `patience`
/// epochs without improvement, or at max_epochs / max_steps.
template <typename T>
TrainResult<T> train(const InteractionDataset& ds, const TrainingArtifacts& art,
                     const TrainConfig& cfg,
                     const std::function<void(const EpochLog&, const ModelState<T>&, bool)>&
                         on_epoch = {}) {
  if (!(cfg.learning_rate >= 0) || cfg.l2 < 0 || cfg.dropout < 0 || cfg.dropout >= 1)
    throw Error(ErrorKind::kInput, "invalid training configuration");
  const auto in = art.inputs(cfg.ablation, cfg.model, cfg.threads);
  TrainResult<T> res;
  res.last = ModelState<T>::initialized(ds.n_users, ds.n_items, art.semantic_dim(), cfg.model,
                                        cfg.seed);
  in.validate(ds.n_users, ds.n_items, art.semantic_dim());
  res.best = res.last;
  auto opt = AdamState<T>::for_model(res.last);
  const auto sorted_items = ds.sorted_user_items();
  const auto val_targets = EvalTargets::from_dataset(ds, EvalSplit::kValidation);
  const bool has_val = !ds.val.empty();
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x7472));
  const std::size_t batch = std::max<std::size_t>(1, cfg.batch_size);
  const std::size_t steps_per_epoch = (ds.train.size() + batch - 1) / batch;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochLog log;
    log.epoch = epoch;
    double loss_sum = 0;
    std::size_t pairs = 0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      if (cfg.max_steps && res.steps >= cfg.max_steps) break;
      auto triplets = sample_training_batch(ds, sorted_items, batch, rng);
      if (triplets.empty()) break;
      DropoutSpec drop{cfg.dropout, rng()};
      auto tr = forward(res.last, in, &drop);
      loss_sum += batch_loss(res.last, tr, triplets, cfg.l2, in);
      pairs += triplets.size();
      auto grad = backward(res.last, tr, triplets, cfg.l2, in);
      try {
        adam_step(res.last, opt, grad, cfg.learning_rate);
      } catch (const Error& e) {
        log.aborted = true;
        log.diagnostic = e.what();
        break;
      }
      ++res.steps;
    }
    log.train_loss = pairs ? loss_sum / double(pairs) : 0.0;

    bool improved = false;
    if (has_val) {
      auto tr = forward(res.last, in);
      auto rep = evaluate(trace_scorer(tr), ds.n_items, val_targets, {cfg.eval_k}, cfg.threads);
      log.val_recall = rep.overall.recall[0];
      log.val_ndcg = rep.overall.ndcg[0];
      improved = log.val_recall > res.best_val_recall;
    } else {
      improved = true;
    }
    if (improved) {
      res.best = res.last;
      res.best_epoch = epoch;
      res.best_val_recall = log.val_recall;
      since_best = 0;
    } else {
      ++since_best;
    }
    log.elapsed_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    res.history.push_back(log);
    if (on_epoch) on_epoch(log, res.last, improved);
    if (cfg.patience && since_best >= cfg.patience) break;
    if (cfg.max_steps && res.steps >= cfg.max_steps) break;
  }
  return res;
}

}  // namespace colakg
