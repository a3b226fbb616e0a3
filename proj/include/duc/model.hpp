#pragma once

#include "duc/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace duc {

struct ModelConfig {
  int n_layers = 4;
  int d_model = 128;
  int n_heads = 4;
  int d_ff = 512;
  int vocab_size = 0;
  int max_seq = 128;
  std::uint64_t rng_seed = 0;

  int head_dim() const { return d_model / n_heads; }
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Every tensor is a row-major matrix; biases and norm gains are 1 x n.
template <typename Scalar>
struct BlockParams {
  RowMatrix<Scalar> ln1_g, ln1_b;
  RowMatrix<Scalar> w_qkv, b_qkv;  // D x 3D, columns ordered q | k | v
  RowMatrix<Scalar> w_o, b_o;      // D x D
  RowMatrix<Scalar> ln2_g, ln2_b;
  RowMatrix<Scalar> w_fc, b_fc;      // D x F
  RowMatrix<Scalar> w_proj, b_proj;  // F x D
};

// Pre-norm GPT block stack with learned positions and an unembedding tied
// to the token embedding: logits = final_norm(x) * tok_emb^T.
template <typename Scalar>
struct ModelParams {
  ModelConfig config;
  RowMatrix<Scalar> tok_emb;  // V x D
  RowMatrix<Scalar> pos_emb;  // max_seq x D
  std::vector<BlockParams<Scalar>> blocks;
  RowMatrix<Scalar> lnf_g, lnf_b;

  // Visits every tensor in a fixed order with a stable name.
  template <typename F>
  void for_each(F&& f) {
    f("tok_emb", tok_emb);
    f("pos_emb", pos_emb);
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      auto& b = blocks[l];
      const std::string p = "blocks." + std::to_string(l) + ".";
      f(p + "ln1_g", b.ln1_g);
      f(p + "ln1_b", b.ln1_b);
      f(p + "w_qkv", b.w_qkv);
      f(p + "b_qkv", b.b_qkv);
      f(p + "w_o", b.w_o);
      f(p + "b_o", b.b_o);
      f(p + "ln2_g", b.ln2_g);
      f(p + "ln2_b", b.ln2_b);
      f(p + "w_fc", b.w_fc);
      f(p + "b_fc", b.b_fc);
      f(p + "w_proj", b.w_proj);
      f(p + "b_proj", b.b_proj);
    }
    f("lnf_g", lnf_g);
    f("lnf_b", lnf_b);
  }
  template <typename F>
  void for_each(F&& f) const {
    const_cast<ModelParams*>(this)->for_each([&](const std::string& name, RowMatrix<Scalar>& t) {
      f(name, static_cast<const RowMatrix<Scalar>&>(t));
    });
  }

  long parameter_count() const;
};

// N(0, 0.02) weights, output projections scaled by 1/sqrt(2 n_layers), unit norm gains.
template <typename Scalar>
ModelParams<Scalar> init_params(const ModelConfig& config);

// Same architecture with all tensors zeroed (gradient accumulators).
template <typename Scalar>
ModelParams<Scalar> zeros_like(const ModelParams<Scalar>& p);

template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& p);

void save_model(const ModelParams<float>& params, const std::string& path);
// Parse and shape errors name the file.
ModelParams<float> load_model(const std::string& path);

inline constexpr double kNormEps = 1e-5;

// Row-wise layer norm with gain and bias.
template <typename Scalar>
RowMatrix<Scalar> layer_norm(const RowMatrix<Scalar>& x, const RowMatrix<Scalar>& g, const RowMatrix<Scalar>& b);

// Applies the model's final normalization.
template <typename Scalar>
RowMatrix<Scalar> final_norm(const ModelParams<Scalar>& p, const RowMatrix<Scalar>& residual);

// Residual-stream intercept: called with the post-block residual rows of
// `layer` for the positions processed in this pass (first row at
// `first_position`), before the next block reads them.
template <typename Scalar>
struct Hook {
  int layer = 0;
  std::function<void(Eigen::Ref<RowMatrix<Scalar>> rows, int first_position)> fn;
};

template <typename Scalar>
using HookSet = std::vector<Hook<Scalar>>;

// Post-block residuals with hooks already applied, one matrix per layer.
// final_norm_applied is false: stored rows are raw residuals.
template <typename Scalar>
struct ResidualTrace {
  std::vector<RowMatrix<Scalar>> residual;
  bool final_norm_applied = false;
};

// Keys and values of every processed position, per layer.
template <typename Scalar>
struct KvCache {
  std::vector<RowMatrix<Scalar>> k, v;  // max_seq x D each
  int length = 0;

  explicit KvCache(const ModelConfig& c);
};

// Processes `tokens` as the next positions after those already in `cache`
// and returns their logits (rows x V). Blocks listed in `ablated` contribute
// nothing to the residual stream. Throws LengthError past max_seq.
template <typename Scalar>
RowMatrix<Scalar> step(const ModelParams<Scalar>& p, KvCache<Scalar>& cache, const TokenSeq& tokens,
                       const HookSet<Scalar>& hooks = {}, ResidualTrace<Scalar>* trace = nullptr,
                       const std::vector<int>& ablated = {});

template <typename Scalar>
struct ForwardResult {
  RowMatrix<Scalar> logits;  // positions x V
  ResidualTrace<Scalar> trace;
};

template <typename Scalar>
ForwardResult<Scalar> forward(const ModelParams<Scalar>& p, const TokenSeq& tokens, const HookSet<Scalar>& hooks = {},
                              const std::vector<int>& ablated = {});

}  // namespace duc
