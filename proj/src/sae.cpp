#include "duc/sae.hpp"

#include "duc/error.hpp"
#include "duc/parallel.hpp"
#include "duc/rng.hpp"
#include "duc/tensor_io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace duc {

template <typename Scalar>
void SaeParams<Scalar>::validate() const {
  const auto F = w_enc.rows(), D = w_enc.cols();
  if (F < 1 || D < 1) throw DimensionError("empty SAE");
  if (b_enc.rows() != 1 || b_enc.cols() != F || w_dec.rows() != F || w_dec.cols() != D || b_dec.rows() != 1 ||
      b_dec.cols() != D)
    throw DimensionError("inconsistent SAE shapes");
}

namespace {

constexpr double kEncoderInitScale = 0.1;

template <typename Scalar>
void check_width(const SaeParams<Scalar>& sae, Eigen::Index d, const char* what) {
  if (d != sae.w_enc.cols())
    throw DimensionError(std::string(what) + " has width " + std::to_string(d) + ", SAE expects " +
                         std::to_string(sae.w_enc.cols()));
}

}  // namespace

template <typename Scalar>
Vector<Scalar> encode(const SaeParams<Scalar>& sae, const Vector<Scalar>& x) {
  check_width(sae, x.size(), "input");
  return (sae.w_enc * x + sae.b_enc.row(0).transpose()).cwiseMax(Scalar(0));
}

template <typename Scalar>
Vector<Scalar> decode(const SaeParams<Scalar>& sae, const Vector<Scalar>& f) {
  if (f.size() != sae.w_dec.rows())
    throw DimensionError("feature vector has " + std::to_string(f.size()) + " entries, SAE has " +
                         std::to_string(sae.w_dec.rows()) + " features");
  return sae.w_dec.transpose() * f + sae.b_dec.row(0).transpose();
}

template <typename Scalar>
RowMatrix<Scalar> encode_rows(const SaeParams<Scalar>& sae, const RowMatrix<Scalar>& x) {
  check_width(sae, x.cols(), "input");
  RowMatrix<Scalar> pre(x.rows(), sae.w_enc.rows());
  pre.noalias() = x * sae.w_enc.transpose();
  pre.rowwise() += sae.b_enc.row(0);
  return pre.cwiseMax(Scalar(0));
}

template <typename Scalar>
RowMatrix<Scalar> decode_rows(const SaeParams<Scalar>& sae, const RowMatrix<Scalar>& f) {
  if (f.cols() != sae.w_dec.rows()) throw DimensionError("feature rows do not match the SAE feature count");
  RowMatrix<Scalar> out(f.rows(), sae.w_dec.cols());
  out.noalias() = f * sae.w_dec;
  out.rowwise() += sae.b_dec.row(0);
  return out;
}

template <typename Scalar>
Vector<Scalar> feature_activation(const SaeParams<Scalar>& sae, int feature, const Eigen::Ref<const RowMatrix<Scalar>>& x) {
  if (feature < 0 || feature >= sae.features()) throw ParameterError("feature index " + std::to_string(feature) + " out of range");
  check_width(sae, x.cols(), "input");
  return ((x * sae.w_enc.row(feature).transpose()).array() + sae.b_enc(0, feature)).cwiseMax(Scalar(0)).matrix();
}

template <typename Scalar>
SaeLoss sae_loss(const SaeParams<Scalar>& sae, const Vector<Scalar>& x, double beta) {
  const Vector<Scalar> f = encode(sae, x);
  const Vector<Scalar> r = x - decode(sae, f);
  SaeLoss l;
  l.recon = static_cast<double>(r.squaredNorm());
  l.sparsity = static_cast<double>(f.sum());
  l.total = l.recon + beta * l.sparsity;
  return l;
}

void SaeTrainConfig::validate() const {
  if (beta < 0) throw ParameterError("beta must be nonnegative");
  if (expansion < 1) throw ParameterError("expansion must be at least 1");
  if (steps < 1) throw ParameterError("steps must be at least 1");
  if (batch < 1) throw ParameterError("batch must be at least 1");
  if (!(lr > 0)) throw ParameterError("lr must be positive");
  if (!(heldout_fraction > 0 && heldout_fraction < 1)) throw ParameterError("heldout_fraction must lie in (0, 1)");
}

SaeEval evaluate_sae(const SaeParams<float>& sae, const RowMatrixf& rows) {
  SaeEval e;
  if (rows.rows() == 0) return e;
  const Eigen::Index chunk = 4096;
  double rel = 0, active = 0;
  for (Eigen::Index start = 0; start < rows.rows(); start += chunk) {
    const Eigen::Index n = std::min(chunk, rows.rows() - start);
    const RowMatrixf x = rows.middleRows(start, n);
    const RowMatrixf f = encode_rows(sae, x);
    const RowMatrixf r = decode_rows(sae, f) - x;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double xn = x.row(i).norm();
      rel += xn > 0 ? r.row(i).norm() / xn : 0.0;
      active += static_cast<double>((f.row(i).array() > 0.0f).count()) / static_cast<double>(f.cols());
    }
  }
  e.rel_error = rel / static_cast<double>(rows.rows());
  e.active_fraction = active / static_cast<double>(rows.rows());
  return e;
}

SaeParams<float> train_sae(const SaeTrainConfig& cfg, const RowMatrixf& activations, int layer, SaeTrainReport* report,
                           const std::function<void(int, double)>& progress) {
  cfg.validate();
  const int D = static_cast<int>(activations.cols());
  const int F = cfg.expansion * D;
  if (activations.rows() < 10L * F)
    throw ParameterError("need at least " + std::to_string(10L * F) + " activation vectors, got " +
                         std::to_string(activations.rows()));

  std::vector<Eigen::Index> order(static_cast<std::size_t>(activations.rows()));
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(derive_seed(cfg.rng_seed, 0x5a1));
  split_rng.shuffle(order.begin(), order.end());
  const auto n_held = static_cast<Eigen::Index>(std::llround(cfg.heldout_fraction * static_cast<double>(order.size())));
  const auto n_train = activations.rows() - n_held;
  RowMatrixf train(n_train, D), held(n_held, D);
  for (Eigen::Index i = 0; i < n_train; ++i) train.row(i) = activations.row(order[static_cast<std::size_t>(i)]);
  for (Eigen::Index i = 0; i < n_held; ++i) held.row(i) = activations.row(order[static_cast<std::size_t>(n_train + i)]);

  double norm_sum = 0;
  for (Eigen::Index i = 0; i < n_train; ++i) norm_sum += train.row(i).norm();
  const double scale = norm_sum / static_cast<double>(n_train);
  if (!(scale > 0)) throw ParameterError("activations are all zero");
  train /= static_cast<float>(scale);

  // Tied initialization with unit decoder rows and the data mean as decoder bias.
  Rng rng(derive_seed(cfg.rng_seed, 0x5ae));
  SaeParams<float> s;
  s.layer = layer;
  s.w_dec.resize(F, D);
  for (Eigen::Index i = 0; i < s.w_dec.size(); ++i) s.w_dec.data()[i] = static_cast<float>(rng.normal());
  s.w_dec.rowwise().normalize();
  s.w_enc = s.w_dec * static_cast<float>(kEncoderInitScale);
  s.b_enc = RowMatrixf::Zero(1, F);
  s.b_dec = train.colwise().mean();

  // Training encodes x - b_dec; folding gives the plain form
  // ReLU(W_enc x + b_enc') with b_enc' = b_enc - W_enc b_dec, then undoes the input scale.
  auto folded = [&](const SaeParams<float>& p) {
    SaeParams<float> out = p;
    out.b_enc = (p.b_enc - p.b_dec * p.w_enc.transpose()) * static_cast<float>(scale);
    out.b_dec *= static_cast<float>(scale);
    return out;
  };

  SaeTrainReport local;
  local.input_scale = scale;
  local.train_rows = n_train;
  local.heldout_rows = n_held;
  local.initial_rel_error = evaluate_sae(folded(s), held).rel_error;

  SaeParams<float> m{RowMatrixf::Zero(F, D), RowMatrixf::Zero(1, F), RowMatrixf::Zero(F, D), RowMatrixf::Zero(1, D), layer};
  SaeParams<float> v = m;
  const float b1 = 0.9f, b2 = 0.999f, eps = 1e-8f;
  const int B = cfg.batch;
  RowMatrixf x(B, D), pre(B, F), xhat(B, D), df(B, F);
  RowMatrixf g_wenc(F, D), g_wdec(F, D), g_benc(1, F), g_bdec(1, D);
  float lr = static_cast<float>(cfg.lr);
  auto adam = [&](RowMatrixf& w, RowMatrixf& mm, RowMatrixf& vv, const RowMatrixf& g, float bc1, float bc2) {
    mm = b1 * mm + (1 - b1) * g;
    vv.array() = b2 * vv.array() + (1 - b2) * g.array().square();
    w.array() -= lr * (mm.array() / bc1) / ((vv.array() / bc2).sqrt() + eps);
  };
  // Constant rate, then linear decay to zero over the last fifth of training.
  const int decay_start = cfg.steps - cfg.steps / 5;

  for (int step = 1; step <= cfg.steps; ++step) {
    if (step > decay_start)
      lr = static_cast<float>(cfg.lr * (cfg.steps - step + 1) / std::max(1, cfg.steps - decay_start));
    for (int b = 0; b < B; ++b) x.row(b) = train.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n_train))));
    const RowMatrixf xc = x.rowwise() - s.b_dec.row(0);
    pre.noalias() = xc * s.w_enc.transpose();
    pre.rowwise() += s.b_enc.row(0);
    const RowMatrixf f = pre.cwiseMax(0.0f);
    xhat.noalias() = f * s.w_dec;
    xhat.rowwise() += s.b_dec.row(0);
    const RowMatrixf r = xhat - x;
    const double loss = (static_cast<double>(r.squaredNorm()) + cfg.beta * static_cast<double>(f.sum())) / B;
    if (!std::isfinite(loss)) throw TrainingError("SAE loss is not finite", step);
    local.loss.push_back(loss);

    const RowMatrixf dxhat = r * (2.0f / static_cast<float>(B));
    g_wdec.noalias() = f.transpose() * dxhat;
    g_bdec = dxhat.colwise().sum();
    df.noalias() = dxhat * s.w_dec.transpose();
    df.array() += static_cast<float>(cfg.beta / B);
    df = (pre.array() > 0.0f).select(df, 0.0f);
    g_wenc.noalias() = df.transpose() * xc;
    g_benc = df.colwise().sum();
    g_bdec -= df.colwise().sum() * s.w_enc;

    const float bc1 = 1 - std::pow(b1, static_cast<float>(step)), bc2 = 1 - std::pow(b2, static_cast<float>(step));
    adam(s.w_enc, m.w_enc, v.w_enc, g_wenc, bc1, bc2);
    adam(s.b_enc, m.b_enc, v.b_enc, g_benc, bc1, bc2);
    adam(s.w_dec, m.w_dec, v.w_dec, g_wdec, bc1, bc2);
    adam(s.b_dec, m.b_dec, v.b_dec, g_bdec, bc1, bc2);
    s.w_dec.rowwise().normalize();
    if (progress) progress(step, loss);
  }

  SaeParams<float> out = folded(s);
  const SaeEval e = evaluate_sae(out, held);
  local.final_rel_error = e.rel_error;
  local.active_fraction = e.active_fraction;
  if (report) *report = std::move(local);
  return out;
}

FeatureStats calibrate(const SaeParams<float>& sae, const RowMatrixf& activations) {
  if (activations.rows() == 0) throw ParameterError("calibration needs at least one activation vector");
  const int F = sae.features();
  FeatureStats st;
  st.max_activation.assign(static_cast<std::size_t>(F), 0.0);
  st.activation_rate.assign(static_cast<std::size_t>(F), 0.0);
  std::vector<long> fired(static_cast<std::size_t>(F), 0);
  const Eigen::Index chunk = 4096;
  for (Eigen::Index start = 0; start < activations.rows(); start += chunk) {
    const Eigen::Index n = std::min(chunk, activations.rows() - start);
    const RowMatrixf f = encode_rows(sae, RowMatrixf(activations.middleRows(start, n)));
    for (Eigen::Index i = 0; i < n; ++i)
      for (int j = 0; j < F; ++j) {
        const double a = f(i, j);
        if (a > 0) {
          ++fired[static_cast<std::size_t>(j)];
          st.max_activation[static_cast<std::size_t>(j)] = std::max(st.max_activation[static_cast<std::size_t>(j)], a);
        }
      }
  }
  st.samples = activations.rows();
  for (int j = 0; j < F; ++j)
    st.activation_rate[static_cast<std::size_t>(j)] =
        static_cast<double>(fired[static_cast<std::size_t>(j)]) / static_cast<double>(st.samples);
  return st;
}

nlohmann::json to_json(const FeatureStats& s) {
  return {{"max_activation", s.max_activation}, {"activation_rate", s.activation_rate}, {"samples", s.samples}};
}

FeatureStats feature_stats_from_json(const nlohmann::json& j) {
  FeatureStats s;
  try {
    s.max_activation = j.at("max_activation").get<std::vector<double>>();
    s.activation_rate = j.at("activation_rate").get<std::vector<double>>();
    s.samples = j.at("samples").get<long>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad feature stats: ") + e.what());
  }
  if (s.max_activation.size() != s.activation_rate.size()) throw ParseError("feature stats arrays differ in length");
  return s;
}

void save_sae(const SaeParams<float>& sae, const std::string& path) {
  sae.validate();
  TensorFile file;
  file.config = {{"kind", "sae"}, {"layer", sae.layer}, {"features", sae.features()}, {"width", sae.width()}};
  auto put = [&](const char* name, const RowMatrixf& t) {
    file.tensors.push_back({name, {t.rows(), t.cols()}, std::vector<float>(t.data(), t.data() + t.size())});
  };
  put("w_enc", sae.w_enc);
  put("b_enc", sae.b_enc);
  put("w_dec", sae.w_dec);
  put("b_dec", sae.b_dec);
  write_tensor_file(path, file);
}

SaeParams<float> load_sae(const std::string& path) {
  const TensorFile file = read_tensor_file(path);
  SaeParams<float> s;
  std::int64_t F = 0, D = 0;
  try {
    if (file.config.value("kind", "") != "sae") throw ParseError(path + ": not an SAE file");
    s.layer = file.config.at("layer").get<int>();
    F = file.config.at("features").get<std::int64_t>();
    D = file.config.at("width").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": bad SAE config: " + e.what());
  }
  auto take = [&](const char* name, std::int64_t r, std::int64_t c) {
    const Tensor& t = file.get(name, {r, c});
    return RowMatrixf(Eigen::Map<const RowMatrixf>(t.data.data(), r, c));
  };
  s.w_enc = take("w_enc", F, D);
  s.b_enc = take("b_enc", 1, F);
  s.w_dec = take("w_dec", F, D);
  s.b_dec = take("b_dec", 1, D);
  return s;
}

std::vector<RowMatrixf> collect_activations(const ModelParams<float>& model, const std::vector<TokenSeq>& windows,
                                            const std::vector<int>& layers) {
  for (int l : layers)
    if (l < 0 || l >= model.config.n_layers) throw ParameterError("layer " + std::to_string(l) + " out of range");
  std::vector<Eigen::Index> offset(windows.size() + 1, 0);
  for (std::size_t i = 0; i < windows.size(); ++i)
    offset[i + 1] = offset[i] + static_cast<Eigen::Index>(windows[i].size());
  std::vector<RowMatrixf> out(layers.size(), RowMatrixf(offset.back(), model.config.d_model));
  parallel_for(windows.size(), [&](std::size_t i) {
    if (windows[i].empty()) return;
    const auto r = forward(model, windows[i]);
    for (std::size_t k = 0; k < layers.size(); ++k)
      out[k].middleRows(offset[i], static_cast<Eigen::Index>(windows[i].size())) =
          r.trace.residual[static_cast<std::size_t>(layers[k])];
  });
  return out;
}

void save_activations(const RowMatrixf& acts, int layer, const std::string& path) {
  TensorFile file;
  file.config = {{"kind", "activations"}, {"layer", layer}};
  file.tensors.push_back({"acts", {acts.rows(), acts.cols()}, std::vector<float>(acts.data(), acts.data() + acts.size())});
  write_tensor_file(path, file);
}

RowMatrixf load_activations(const std::string& path, int* layer) {
  const TensorFile file = read_tensor_file(path);
  if (file.config.value("kind", "") != "activations" || file.tensors.size() != 1 || file.tensors[0].shape.size() != 2)
    throw ParseError(path + ": not an activation dump");
  if (layer) *layer = file.config.value("layer", 0);
  const Tensor& t = file.tensors[0];
  return RowMatrixf(Eigen::Map<const RowMatrixf>(t.data.data(), t.shape[0], t.shape[1]));
}

#define DUC_INSTANTIATE(S)                                                                                     \
  template struct SaeParams<S>;                                                                                \
  template Vector<S> encode<S>(const SaeParams<S>&, const Vector<S>&);                                         \
  template Vector<S> decode<S>(const SaeParams<S>&, const Vector<S>&);                                         \
  template RowMatrix<S> encode_rows<S>(const SaeParams<S>&, const RowMatrix<S>&);                              \
  template RowMatrix<S> decode_rows<S>(const SaeParams<S>&, const RowMatrix<S>&);                              \
  template Vector<S> feature_activation<S>(const SaeParams<S>&, int, const Eigen::Ref<const RowMatrix<S>>&);   \
  template SaeLoss sae_loss<S>(const SaeParams<S>&, const Vector<S>&, double);

DUC_INSTANTIATE(float)
DUC_INSTANTIATE(double)
#undef DUC_INSTANTIATE

}  // namespace duc
