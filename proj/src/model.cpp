#include "duc/model.hpp"

#include "duc/error.hpp"
#include "duc/rng.hpp"
#include "duc/tensor_io.hpp"
#include "nn_ops.hpp"

#include <algorithm>
#include <cmath>

namespace duc {

void ModelConfig::validate() const {
  if (n_layers < 1) throw ParameterError("n_layers must be positive");
  if (d_model < 1) throw ParameterError("d_model must be positive");
  if (n_heads < 1) throw ParameterError("n_heads must be positive");
  if (d_model % n_heads != 0) throw ParameterError("d_model must be divisible by n_heads");
  if (d_ff < 1) throw ParameterError("d_ff must be positive");
  if (vocab_size < 2) throw ParameterError("vocab_size must be at least 2");
  if (max_seq < 1) throw ParameterError("max_seq must be positive");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers}, {"d_model", c.d_model},       {"n_heads", c.n_heads},  {"d_ff", c.d_ff},
          {"vocab_size", c.vocab_size}, {"max_seq", c.max_seq}, {"rng_seed", c.rng_seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_seq = j.at("max_seq").get<int>();
  c.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  return c;
}

template <typename Scalar>
long ModelParams<Scalar>::parameter_count() const {
  long n = 0;
  for_each([&](const std::string&, const RowMatrix<Scalar>& t) { n += static_cast<long>(t.size()); });
  return n;
}

template <typename Scalar>
ModelParams<Scalar> init_params(const ModelConfig& config) {
  config.validate();
  const int D = config.d_model, F = config.d_ff;
  ModelParams<Scalar> p;
  p.config = config;
  p.tok_emb.resize(config.vocab_size, D);
  p.pos_emb.resize(config.max_seq, D);
  p.blocks.resize(static_cast<std::size_t>(config.n_layers));
  for (auto& b : p.blocks) {
    b.ln1_g = RowMatrix<Scalar>::Ones(1, D);
    b.ln1_b = RowMatrix<Scalar>::Zero(1, D);
    b.w_qkv.resize(D, 3 * D);
    b.b_qkv = RowMatrix<Scalar>::Zero(1, 3 * D);
    b.w_o.resize(D, D);
    b.b_o = RowMatrix<Scalar>::Zero(1, D);
    b.ln2_g = RowMatrix<Scalar>::Ones(1, D);
    b.ln2_b = RowMatrix<Scalar>::Zero(1, D);
    b.w_fc.resize(D, F);
    b.b_fc = RowMatrix<Scalar>::Zero(1, F);
    b.w_proj.resize(F, D);
    b.b_proj = RowMatrix<Scalar>::Zero(1, D);
  }
  p.lnf_g = RowMatrix<Scalar>::Ones(1, D);
  p.lnf_b = RowMatrix<Scalar>::Zero(1, D);

  Rng rng(derive_seed(config.rng_seed, 0x1417));
  const double out_std = 0.02 / std::sqrt(2.0 * config.n_layers);
  auto fill = [&](RowMatrix<Scalar>& m, double stddev) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(stddev * rng.normal());
  };
  fill(p.tok_emb, 0.02);
  fill(p.pos_emb, 0.01);
  for (auto& b : p.blocks) {
    fill(b.w_qkv, 0.02);
    fill(b.w_o, out_std);
    fill(b.w_fc, 0.02);
    fill(b.w_proj, out_std);
  }
  return p;
}

template <typename Scalar>
ModelParams<Scalar> zeros_like(const ModelParams<Scalar>& p) {
  ModelParams<Scalar> z = p;
  z.for_each([](const std::string&, RowMatrix<Scalar>& t) { t.setZero(); });
  return z;
}

template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& p) {
  ModelParams<To> out;
  out.config = p.config;
  out.blocks.resize(p.blocks.size());
  std::vector<const RowMatrix<From>*> src;
  p.for_each([&](const std::string&, const RowMatrix<From>& t) { src.push_back(&t); });
  std::size_t i = 0;
  out.for_each([&](const std::string&, RowMatrix<To>& t) { t = src[i++]->template cast<To>(); });
  return out;
}

void save_model(const ModelParams<float>& params, const std::string& path) {
  TensorFile file;
  file.config = {{"kind", "tinylm"}, {"model", to_json(params.config)}};
  params.for_each([&](const std::string& name, const RowMatrixf& t) {
    file.tensors.push_back({name, {t.rows(), t.cols()}, std::vector<float>(t.data(), t.data() + t.size())});
  });
  write_tensor_file(path, file);
}

ModelParams<float> load_model(const std::string& path) {
  const TensorFile file = read_tensor_file(path);
  ModelConfig config;
  try {
    if (file.config.value("kind", "") != "tinylm") throw ParseError(path + ": not a tinylm weights file");
    config = model_config_from_json(file.config.at("model"));
    config.validate();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": bad model config: " + e.what());
  } catch (const ParameterError& e) {
    throw ParseError(path + ": bad model config: " + e.what());
  }
  ModelParams<float> p = zeros_like(init_params<float>(config));
  p.for_each([&](const std::string& name, RowMatrixf& t) {
    const Tensor& src = file.get(name, {t.rows(), t.cols()});
    std::copy(src.data.begin(), src.data.end(), t.data());
  });
  return p;
}

template <typename Scalar>
RowMatrix<Scalar> layer_norm(const RowMatrix<Scalar>& x, const RowMatrix<Scalar>& g, const RowMatrix<Scalar>& b) {
  RowMatrix<Scalar> xhat;
  Vector<Scalar> rstd;
  detail::normalize_rows(x, xhat, rstd, kNormEps);
  RowMatrix<Scalar> y = (xhat.array().rowwise() * g.row(0).array()).matrix();
  y.rowwise() += b.row(0);
  return y;
}

template <typename Scalar>
RowMatrix<Scalar> final_norm(const ModelParams<Scalar>& p, const RowMatrix<Scalar>& residual) {
  if (residual.cols() != p.config.d_model)
    throw DimensionError("residual width " + std::to_string(residual.cols()) + " does not match d_model " +
                         std::to_string(p.config.d_model));
  return layer_norm(residual, p.lnf_g, p.lnf_b);
}

template <typename Scalar>
KvCache<Scalar>::KvCache(const ModelConfig& c) {
  k.assign(static_cast<std::size_t>(c.n_layers), RowMatrix<Scalar>::Zero(c.max_seq, c.d_model));
  v.assign(static_cast<std::size_t>(c.n_layers), RowMatrix<Scalar>::Zero(c.max_seq, c.d_model));
}

template <typename Scalar>
RowMatrix<Scalar> step(const ModelParams<Scalar>& p, KvCache<Scalar>& cache, const TokenSeq& tokens,
                       const HookSet<Scalar>& hooks, ResidualTrace<Scalar>* trace, const std::vector<int>& ablated) {
  const ModelConfig& c = p.config;
  const int n = static_cast<int>(tokens.size());
  const int start = cache.length;
  if (start + n > c.max_seq)
    throw LengthError("sequence of " + std::to_string(start + n) + " tokens exceeds max_seq " +
                      std::to_string(c.max_seq));
  for (const auto& h : hooks)
    if (h.layer < 0 || h.layer >= c.n_layers) throw ParameterError("hook layer " + std::to_string(h.layer) + " out of range");
  const int D = c.d_model, H = c.n_heads, hd = c.head_dim();
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(hd));

  RowMatrix<Scalar> x(n, D);
  for (int i = 0; i < n; ++i) {
    const TokenId t = tokens[static_cast<std::size_t>(i)];
    if (t < 0 || t >= c.vocab_size) throw ParameterError("token id " + std::to_string(t) + " outside vocabulary");
    x.row(i) = p.tok_emb.row(t) + p.pos_emb.row(start + i);
  }
  if (trace) {
    trace->residual.assign(static_cast<std::size_t>(c.n_layers), RowMatrix<Scalar>());
    trace->final_norm_applied = false;
  }

  RowMatrix<Scalar> scores;
  for (int l = 0; l < c.n_layers; ++l) {
    const auto& b = p.blocks[static_cast<std::size_t>(l)];
    const bool skip = std::find(ablated.begin(), ablated.end(), l) != ablated.end();

    RowMatrix<Scalar> h = layer_norm(x, b.ln1_g, b.ln1_b);
    RowMatrix<Scalar> qkv = h * b.w_qkv;
    qkv.rowwise() += b.b_qkv.row(0);
    auto& K = cache.k[static_cast<std::size_t>(l)];
    auto& V = cache.v[static_cast<std::size_t>(l)];
    K.middleRows(start, n) = qkv.middleCols(D, D);
    V.middleRows(start, n) = qkv.middleCols(2 * D, D);

    RowMatrix<Scalar> att(n, D);
    for (int hh = 0; hh < H; ++hh) {
      const int t_end = start + n;
      // Scores for all new rows against all visible keys; future entries masked below.
      scores.noalias() = qkv.middleCols(hh * hd, hd) * K.block(0, hh * hd, t_end, hd).transpose();
      for (int i = 0; i < n; ++i) {
        const int visible = start + i + 1;
        auto row = scores.row(i).head(visible);
        row *= scale;
        const Scalar m = row.maxCoeff();
        row = (row.array() - m).exp().matrix();
        row /= row.sum();
        scores.row(i).tail(t_end - visible).setZero();
      }
      att.middleCols(hh * hd, hd).noalias() = scores * V.block(0, hh * hd, t_end, hd);
    }
    if (!skip) {
      RowMatrix<Scalar> a = att * b.w_o;
      a.rowwise() += b.b_o.row(0);
      x += a;
    }

    RowMatrix<Scalar> h2 = layer_norm(x, b.ln2_g, b.ln2_b);
    RowMatrix<Scalar> u = h2 * b.w_fc;
    u.rowwise() += b.b_fc.row(0);
    RowMatrix<Scalar> t;
    const RowMatrix<Scalar> g = detail::gelu(u, t);
    if (!skip) {
      RowMatrix<Scalar> m = g * b.w_proj;
      m.rowwise() += b.b_proj.row(0);
      x += m;
    }

    for (const auto& hk : hooks)
      if (hk.layer == l) hk.fn(x, start);
    if (trace) trace->residual[static_cast<std::size_t>(l)] = x;
  }
  cache.length = start + n;
  return final_norm(p, x) * p.tok_emb.transpose();
}

template <typename Scalar>
ForwardResult<Scalar> forward(const ModelParams<Scalar>& p, const TokenSeq& tokens, const HookSet<Scalar>& hooks,
                              const std::vector<int>& ablated) {
  KvCache<Scalar> cache(p.config);
  ForwardResult<Scalar> r;
  r.logits = step(p, cache, tokens, hooks, &r.trace, ablated);
  return r;
}

#define DUC_INSTANTIATE(S)                                                                                          \
  template struct ModelParams<S>;                                                                                   \
  template ModelParams<S> init_params<S>(const ModelConfig&);                                                      \
  template ModelParams<S> zeros_like<S>(const ModelParams<S>&);                                                    \
  template RowMatrix<S> layer_norm<S>(const RowMatrix<S>&, const RowMatrix<S>&, const RowMatrix<S>&);              \
  template RowMatrix<S> final_norm<S>(const ModelParams<S>&, const RowMatrix<S>&);                                 \
  template struct KvCache<S>;                                                                                       \
  template RowMatrix<S> step<S>(const ModelParams<S>&, KvCache<S>&, const TokenSeq&, const HookSet<S>&,            \
                                ResidualTrace<S>*, const std::vector<int>&);                                        \
  template ForwardResult<S> forward<S>(const ModelParams<S>&, const TokenSeq&, const HookSet<S>&,                  \
                                       const std::vector<int>&);

DUC_INSTANTIATE(float)
DUC_INSTANTIATE(double)
#undef DUC_INSTANTIATE

template ModelParams<double> cast_params<double, float>(const ModelParams<float>&);
template ModelParams<float> cast_params<float, double>(const ModelParams<double>&);

}  // namespace duc
