#pragma once

#include "duc/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace duc {

// f = ReLU(W_enc x + b_enc), x_hat = b_dec + sum_i f_i W_dec,i.
// Rows of w_enc and w_dec are indexed by feature.
template <typename Scalar>
struct SaeParams {
  RowMatrix<Scalar> w_enc;  // F x D
  RowMatrix<Scalar> b_enc;  // 1 x F
  RowMatrix<Scalar> w_dec;  // F x D
  RowMatrix<Scalar> b_dec;  // 1 x D
  int layer = 0;

  int features() const { return static_cast<int>(w_enc.rows()); }
  int width() const { return static_cast<int>(w_enc.cols()); }
  void validate() const;
};

template <typename Scalar>
Vector<Scalar> encode(const SaeParams<Scalar>& sae, const Vector<Scalar>& x);
template <typename Scalar>
Vector<Scalar> decode(const SaeParams<Scalar>& sae, const Vector<Scalar>& f);

// Batched forms over position rows.
template <typename Scalar>
RowMatrix<Scalar> encode_rows(const SaeParams<Scalar>& sae, const RowMatrix<Scalar>& x);
template <typename Scalar>
RowMatrix<Scalar> decode_rows(const SaeParams<Scalar>& sae, const RowMatrix<Scalar>& f);

// Activation of a single feature on every row.
template <typename Scalar>
Vector<Scalar> feature_activation(const SaeParams<Scalar>& sae, int feature, const Eigen::Ref<const RowMatrix<Scalar>>& x);

struct SaeLoss {
  double total = 0;
  double recon = 0;     // ||x - x_hat||^2
  double sparsity = 0;  // sum_i f_i
};

template <typename Scalar>
SaeLoss sae_loss(const SaeParams<Scalar>& sae, const Vector<Scalar>& x, double beta);

struct SaeTrainConfig {
  double beta = 5e-4;
  double lr = 1e-3;
  int steps = 4000;
  int batch = 512;
  int expansion = 8;
  double heldout_fraction = 0.1;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

struct SaeTrainReport {
  double initial_rel_error = 0;  // held-out mean ||x - x_hat|| / ||x||
  double final_rel_error = 0;
  double active_fraction = 0;  // held-out mean fraction of features with f_i > 0
  double input_scale = 1;      // training ran on x / input_scale
  long train_rows = 0;
  long heldout_rows = 0;
  std::vector<double> loss;  // one entry per step
};

// Rows are split into train and held-out parts by a seeded shuffle. Inputs
// are divided by their mean norm during training and the scale is folded
// back into the returned parameters, so encode/decode operate on raw
// activations. Decoder rows are renormalized to unit length after every step.
SaeParams<float> train_sae(const SaeTrainConfig& cfg, const RowMatrixf& activations, int layer,
                           SaeTrainReport* report = nullptr, const std::function<void(int, double)>& progress = {});

// Mean relative reconstruction error and active fraction over rows.
struct SaeEval {
  double rel_error = 0;
  double active_fraction = 0;
};
SaeEval evaluate_sae(const SaeParams<float>& sae, const RowMatrixf& rows);

struct FeatureStats {
  std::vector<double> max_activation;
  std::vector<double> activation_rate;
  long samples = 0;
};

FeatureStats calibrate(const SaeParams<float>& sae, const RowMatrixf& activations);

nlohmann::json to_json(const FeatureStats& s);
FeatureStats feature_stats_from_json(const nlohmann::json& j);

void save_sae(const SaeParams<float>& sae, const std::string& path);
SaeParams<float> load_sae(const std::string& path);

// Post-block residual rows of the given layers for every position of every
// window; one matrix per requested layer.
std::vector<RowMatrixf> collect_activations(const ModelParams<float>& model, const std::vector<TokenSeq>& windows,
                                            const std::vector<int>& layers);

void save_activations(const RowMatrixf& acts, int layer, const std::string& path);
RowMatrixf load_activations(const std::string& path, int* layer = nullptr);

}  // namespace duc
