#include "duc/train.hpp"

#include "duc/error.hpp"
#include "duc/rng.hpp"
#include "nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace duc {

namespace {

#ifdef __GLIBC__
// Training allocates the same multi-megabyte temporaries every step; keeping
// them on the heap avoids an mmap/munmap and page-fault cycle per matrix.
const int kHeapTuning = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return 0;
}();
#endif

template <typename Scalar>
struct NormCache {
  RowMatrix<Scalar> xhat;
  Vector<Scalar> rstd;
};

template <typename Scalar>
RowMatrix<Scalar> norm_forward(const RowMatrix<Scalar>& x, const RowMatrix<Scalar>& g, const RowMatrix<Scalar>& b,
                               NormCache<Scalar>& c) {
  detail::normalize_rows(x, c.xhat, c.rstd, kNormEps);
  RowMatrix<Scalar> y = (c.xhat.array().rowwise() * g.row(0).array()).matrix();
  y.rowwise() += b.row(0);
  return y;
}

// Accumulates gain/bias gradients and returns the input gradient.
template <typename Scalar>
RowMatrix<Scalar> norm_backward(const RowMatrix<Scalar>& dy, const RowMatrix<Scalar>& g, const NormCache<Scalar>& c,
                                RowMatrix<Scalar>& dg, RowMatrix<Scalar>& db) {
  dg += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  db += dy.colwise().sum();
  const RowMatrix<Scalar> dxhat = (dy.array().rowwise() * g.row(0).array()).matrix();
  const Scalar inv_n = Scalar(1) / Scalar(dy.cols());
  RowMatrix<Scalar> dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const Scalar mean_d = dxhat.row(r).sum() * inv_n;
    const Scalar mean_dx = dxhat.row(r).dot(c.xhat.row(r)) * inv_n;
    dx.row(r) = c.rstd(r) * (dxhat.row(r).array() - mean_d - c.xhat.row(r).array() * mean_dx).matrix();
  }
  return dx;
}

template <typename Scalar>
struct LayerCache {
  NormCache<Scalar> n1, n2;
  RowMatrix<Scalar> h, qkv, att, h2, u, t, g;
  std::vector<RowMatrix<Scalar>> probs;  // per (sequence, head)
};

}  // namespace

template <typename Scalar>
Scalar loss_and_grad(const ModelParams<Scalar>& p, const std::vector<TokenSeq>& batch, ModelParams<Scalar>* grad) {
  const ModelConfig& c = p.config;
  const int D = c.d_model, H = c.n_heads, hd = c.head_dim(), V = c.vocab_size;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(hd));

  std::vector<int> offset, length;
  int rows = 0;
  for (const auto& s : batch) {
    const int L = static_cast<int>(s.size()) - 1;
    if (L < 1) throw ParameterError("training sequences need at least 2 tokens");
    if (L > c.max_seq) throw LengthError("training sequence longer than max_seq + 1");
    offset.push_back(rows);
    length.push_back(L);
    rows += L;
  }
  if (rows == 0) throw ParameterError("empty training batch");

  std::vector<TokenId> inputs(static_cast<std::size_t>(rows)), targets(static_cast<std::size_t>(rows));
  std::vector<int> positions(static_cast<std::size_t>(rows));
  for (std::size_t b = 0; b < batch.size(); ++b)
    for (int i = 0; i < length[b]; ++i) {
      const auto r = static_cast<std::size_t>(offset[b] + i);
      inputs[r] = batch[b][static_cast<std::size_t>(i)];
      targets[r] = batch[b][static_cast<std::size_t>(i + 1)];
      positions[r] = i;
      if (inputs[r] < 0 || inputs[r] >= V || targets[r] < 0 || targets[r] >= V)
        throw ParameterError("token id outside vocabulary");
    }

  RowMatrix<Scalar> x(rows, D);
  for (int r = 0; r < rows; ++r)
    x.row(r) = p.tok_emb.row(inputs[static_cast<std::size_t>(r)]) + p.pos_emb.row(positions[static_cast<std::size_t>(r)]);

  std::vector<LayerCache<Scalar>> cache(static_cast<std::size_t>(c.n_layers));
  for (int l = 0; l < c.n_layers; ++l) {
    const auto& bp = p.blocks[static_cast<std::size_t>(l)];
    auto& lc = cache[static_cast<std::size_t>(l)];
    lc.h = norm_forward(x, bp.ln1_g, bp.ln1_b, lc.n1);
    lc.qkv.noalias() = lc.h * bp.w_qkv;
    lc.qkv.rowwise() += bp.b_qkv.row(0);
    lc.att.resize(rows, D);
    lc.probs.resize(batch.size() * static_cast<std::size_t>(H));
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const int o = offset[b], L = length[b];
      for (int hh = 0; hh < H; ++hh) {
        RowMatrix<Scalar> P = lc.qkv.block(o, hh * hd, L, hd) * lc.qkv.block(o, D + hh * hd, L, hd).transpose();
        for (int i = 0; i < L; ++i) {
          auto row = P.row(i).head(i + 1);
          row *= scale;
          const Scalar m = row.maxCoeff();
          row = (row.array() - m).exp().matrix();
          row /= row.sum();
          P.row(i).tail(L - i - 1).setZero();
        }
        lc.att.block(o, hh * hd, L, hd).noalias() = P * lc.qkv.block(o, 2 * D + hh * hd, L, hd);
        lc.probs[b * static_cast<std::size_t>(H) + static_cast<std::size_t>(hh)] = std::move(P);
      }
    }
    x.noalias() += lc.att * bp.w_o;
    x.rowwise() += bp.b_o.row(0);
    lc.h2 = norm_forward(x, bp.ln2_g, bp.ln2_b, lc.n2);
    lc.u.noalias() = lc.h2 * bp.w_fc;
    lc.u.rowwise() += bp.b_fc.row(0);
    lc.g = detail::gelu(lc.u, lc.t);
    x.noalias() += lc.g * bp.w_proj;
    x.rowwise() += bp.b_proj.row(0);
  }
  NormCache<Scalar> nf;
  const RowMatrix<Scalar> hf = norm_forward(x, p.lnf_g, p.lnf_b, nf);
  RowMatrix<Scalar> logits(rows, V);
  logits.noalias() = hf * p.tok_emb.transpose();

  // Softmax in place; loss summed in row order.
  double loss = 0;
  for (int r = 0; r < rows; ++r) {
    auto row = logits.row(r);
    const Scalar m = row.maxCoeff();
    row = (row.array() - m).exp().matrix();
    const Scalar z = row.sum();
    row /= z;
    loss -= std::log(static_cast<double>(row(targets[static_cast<std::size_t>(r)])));
  }
  loss /= rows;
  if (!grad) return static_cast<Scalar>(loss);

  ModelParams<Scalar>& gp = *grad;
  if (gp.blocks.size() != p.blocks.size()) gp = zeros_like(p);
  else gp.for_each([](const std::string&, RowMatrix<Scalar>& t) { t.setZero(); });

  RowMatrix<Scalar>& dlogits = logits;  // probabilities become gradients
  for (int r = 0; r < rows; ++r) dlogits(r, targets[static_cast<std::size_t>(r)]) -= Scalar(1);
  dlogits /= static_cast<Scalar>(rows);
  gp.tok_emb.noalias() += dlogits.transpose() * hf;
  RowMatrix<Scalar> dx = norm_backward(RowMatrix<Scalar>(dlogits * p.tok_emb), p.lnf_g, nf, gp.lnf_g, gp.lnf_b);

  for (int l = c.n_layers - 1; l >= 0; --l) {
    const auto& bp = p.blocks[static_cast<std::size_t>(l)];
    auto& gb = gp.blocks[static_cast<std::size_t>(l)];
    const auto& lc = cache[static_cast<std::size_t>(l)];

    gb.w_proj.noalias() += lc.g.transpose() * dx;
    gb.b_proj += dx.colwise().sum();
    RowMatrix<Scalar> du(rows, c.d_ff);
    du.noalias() = dx * bp.w_proj.transpose();
    du.array() *= detail::gelu_grad(lc.u, lc.t).array();
    gb.w_fc.noalias() += lc.h2.transpose() * du;
    gb.b_fc += du.colwise().sum();
    dx += norm_backward(RowMatrix<Scalar>(du * bp.w_fc.transpose()), bp.ln2_g, lc.n2, gb.ln2_g, gb.ln2_b);

    gb.w_o.noalias() += lc.att.transpose() * dx;
    gb.b_o += dx.colwise().sum();
    RowMatrix<Scalar> datt(rows, D);
    datt.noalias() = dx * bp.w_o.transpose();
    RowMatrix<Scalar> dqkv(rows, 3 * D);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const int o = offset[b], L = length[b];
      for (int hh = 0; hh < H; ++hh) {
        const RowMatrix<Scalar>& P = lc.probs[b * static_cast<std::size_t>(H) + static_cast<std::size_t>(hh)];
        const auto q = lc.qkv.block(o, hh * hd, L, hd);
        const auto k = lc.qkv.block(o, D + hh * hd, L, hd);
        const auto v = lc.qkv.block(o, 2 * D + hh * hd, L, hd);
        const auto da = datt.block(o, hh * hd, L, hd);
        RowMatrix<Scalar> dP = da * v.transpose();
        dqkv.block(o, 2 * D + hh * hd, L, hd).noalias() = P.transpose() * da;
        const Vector<Scalar> inner = (dP.array() * P.array()).rowwise().sum().matrix();
        RowMatrix<Scalar> dS = (P.array() * (dP.array().colwise() - inner.array())).matrix() * scale;
        dqkv.block(o, hh * hd, L, hd).noalias() = dS * k;
        dqkv.block(o, D + hh * hd, L, hd).noalias() = dS.transpose() * q;
      }
    }
    gb.w_qkv.noalias() += lc.h.transpose() * dqkv;
    gb.b_qkv += dqkv.colwise().sum();
    dx += norm_backward(RowMatrix<Scalar>(dqkv * bp.w_qkv.transpose()), bp.ln1_g, lc.n1, gb.ln1_g, gb.ln1_b);
  }
  for (int r = 0; r < rows; ++r) {
    gp.tok_emb.row(inputs[static_cast<std::size_t>(r)]) += dx.row(r);
    gp.pos_emb.row(positions[static_cast<std::size_t>(r)]) += dx.row(r);
  }
  return static_cast<Scalar>(loss);
}

template float loss_and_grad<float>(const ModelParams<float>&, const std::vector<TokenSeq>&, ModelParams<float>*);
template double loss_and_grad<double>(const ModelParams<double>&, const std::vector<TokenSeq>&, ModelParams<double>*);

std::vector<TokenSeq> document_windows(const std::vector<TokenSeq>& documents, int length) {
  std::vector<TokenSeq> out;
  for (std::size_t d = 0; d < documents.size(); ++d) {
    TokenSeq w;
    for (std::size_t e = d; e < documents.size() && static_cast<int>(w.size()) < length; ++e)
      w.insert(w.end(), documents[e].begin(), documents[e].end());
    if (static_cast<int>(w.size()) > length) w.resize(static_cast<std::size_t>(length));
    if (w.size() >= 2) out.push_back(std::move(w));
  }
  return out;
}

namespace {

bool decays(const std::string& name) {
  const auto dot = name.rfind('.');
  const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
  return leaf == "tok_emb" || leaf.rfind("w_", 0) == 0;
}

double heldout_loss(const ModelParams<float>& p, const std::vector<TokenSeq>& windows) {
  double total = 0;
  long count = 0;
  for (const auto& w : windows) {
    const double l = loss_and_grad<float>(p, {w}, nullptr);
    total += l * static_cast<double>(w.size() - 1);
    count += static_cast<long>(w.size() - 1);
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

}  // namespace

ModelParams<float> train_lm(const ModelConfig& config, const std::vector<TokenSeq>& documents,
                            const LmTrainConfig& train, LmTrainReport* report,
                            const std::function<void(int, double)>& progress) {
  config.validate();
  if (train.steps < 1) throw ParameterError("steps must be at least 1");
  if (train.batch < 1) throw ParameterError("batch must be at least 1");
  if (documents.size() < 2) throw EmptyCorpusError("need at least two training documents");

  const auto n_held = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(train.heldout_fraction * static_cast<double>(documents.size()))), 1,
      documents.size() - 1);
  const std::vector<TokenSeq> train_docs(documents.begin(), documents.end() - static_cast<long>(n_held));
  const std::vector<TokenSeq> held_docs(documents.end() - static_cast<long>(n_held), documents.end());
  const auto train_windows = document_windows(train_docs, config.max_seq + 1);
  auto held_windows = document_windows(held_docs, config.max_seq + 1);
  if (static_cast<int>(held_windows.size()) > train.heldout_windows)
    held_windows.resize(static_cast<std::size_t>(train.heldout_windows));
  if (train_windows.empty()) throw EmptyCorpusError("no training windows");

  ModelParams<float> p = init_params<float>(config);
  ModelParams<float> g = zeros_like(p), m = zeros_like(p), v = zeros_like(p);
  std::vector<bool> decay;
  p.for_each([&](const std::string& name, const RowMatrixf&) { decay.push_back(decays(name)); });

  LmTrainReport local;
  local.initial_heldout_loss = heldout_loss(p, held_windows);

  Rng rng(derive_seed(train.seed, 0x7a1));
  const double b1 = 0.9, b2 = 0.95, eps = 1e-8;
  std::vector<TokenSeq> batch(static_cast<std::size_t>(train.batch));
  for (int s = 1; s <= train.steps; ++s) {
    for (auto& b : batch) b = train_windows[rng.below(train_windows.size())];
    const double loss = loss_and_grad<float>(p, batch, &g);
    if (!std::isfinite(loss)) throw TrainingError("training loss is not finite", s);
    local.train_loss.push_back(loss);

    double norm2 = 0;
    g.for_each([&](const std::string&, const RowMatrixf& t) { norm2 += static_cast<double>(t.squaredNorm()); });
    const double norm = std::sqrt(norm2);
    if (!std::isfinite(norm)) throw TrainingError("gradient is not finite", s);
    const float clip = norm > train.grad_clip ? static_cast<float>(train.grad_clip / norm) : 1.0f;

    double lr = train.lr;
    if (s <= train.warmup) {
      lr = train.lr * s / std::max(1, train.warmup);
    } else {
      const double t = static_cast<double>(s - train.warmup) / std::max(1, train.steps - train.warmup);
      lr = train.lr * (train.min_lr_fraction + (1 - train.min_lr_fraction) * 0.5 * (1 + std::cos(std::numbers::pi * t)));
    }
    const float bc1 = static_cast<float>(1 - std::pow(b1, s)), bc2 = static_cast<float>(1 - std::pow(b2, s));

    std::vector<RowMatrixf*> gs, ms, vs;
    g.for_each([&](const std::string&, RowMatrixf& t) { gs.push_back(&t); });
    m.for_each([&](const std::string&, RowMatrixf& t) { ms.push_back(&t); });
    v.for_each([&](const std::string&, RowMatrixf& t) { vs.push_back(&t); });
    std::size_t i = 0;
    p.for_each([&](const std::string&, RowMatrixf& w) {
      auto gr = (gs[i]->array() * clip).eval();
      ms[i]->array() = static_cast<float>(b1) * ms[i]->array() + static_cast<float>(1 - b1) * gr;
      vs[i]->array() = static_cast<float>(b2) * vs[i]->array() + static_cast<float>(1 - b2) * gr.square();
      if (decay[i]) w.array() *= static_cast<float>(1 - lr * train.weight_decay);
      w.array() -= static_cast<float>(lr) * (ms[i]->array() / bc1) /
                   ((vs[i]->array() / bc2).sqrt() + static_cast<float>(eps));
      ++i;
    });
    if (progress) progress(s, loss);
  }
  local.final_heldout_loss = heldout_loss(p, held_windows);
  if (report) *report = std::move(local);
  return p;
}

std::vector<TokenSeq> build_lm_documents(const std::vector<RawSample>& corpus, const Vocabulary& vocab,
                                         const LmCorpusOptions& options) {
  if (corpus.empty()) throw EmptyCorpusError("empty corpus");
  Rng rng(derive_seed(options.seed, 0xd0c));
  const TokenId eot = vocab.eot_id();
  std::vector<TokenSeq> docs;
  for (const auto& s : corpus) {
    TokenSeq q = vocab.encode(tokenize(s.question));
    TokenSeq a = vocab.encode(tokenize(s.answer));
    q.insert(q.end(), a.begin(), a.end());
    q.push_back(eot);
    docs.push_back(std::move(q));
  }

  auto count = [&](double fraction) {
    return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(corpus.size())));
  };
  for (std::size_t i = 0, n = count(options.token_repetition_fraction); i < n; ++i) {
    const auto& s = corpus[rng.below(corpus.size())];
    TokenSeq q = vocab.encode(tokenize(s.question));
    const TokenSeq a = vocab.encode(tokenize(s.answer));
    const int len = static_cast<int>(a.size());
    const int group = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::min(5, len))));
    const int start = static_cast<int>(rng.below(static_cast<std::uint64_t>(len - group + 1)));
    const TokenSeq r = make_token_repetition<TokenId>(a, start, group);
    q.insert(q.end(), r.begin(), r.end());
    q.push_back(eot);
    docs.push_back(std::move(q));
  }
  for (std::size_t i = 0, n = count(options.paragraph_repetition_fraction); i < n; ++i) {
    const auto& s = corpus[rng.below(corpus.size())];
    TokenSeq q = vocab.encode(tokenize(s.question));
    const TokenSeq r =
        make_paragraph_repetition<TokenId>(vocab.encode(tokenize(s.answer)), 2 + static_cast<int>(rng.below(4)));
    q.insert(q.end(), r.begin(), r.end());
    q.push_back(eot);
    docs.push_back(std::move(q));
  }
  // Random words from the vocabulary (reserved ids excluded): a free prefix,
  // then a group cycled for the rest of the document.
  const auto words = static_cast<std::uint64_t>(vocab.size() - 2);
  for (std::size_t i = 0, n = count(options.induction_fraction); i < n; ++i) {
    const int prefix = static_cast<int>(rng.below(16));
    const int group = 2 + static_cast<int>(rng.below(9));
    const int total = prefix + group * (2 + static_cast<int>(rng.below(6)));
    TokenSeq seq;
    for (int k = 0; k < prefix + group; ++k) seq.push_back(static_cast<TokenId>(2 + rng.below(words)));
    seq.resize(static_cast<std::size_t>(total));
    TokenSeq doc = make_token_repetition<TokenId>(seq, prefix, group);
    doc.push_back(eot);
    docs.push_back(std::move(doc));
  }
  rng.shuffle(docs.begin(), docs.end());
  return docs;
}

}  // namespace duc
