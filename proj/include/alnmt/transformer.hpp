#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "alnmt/rng.hpp"
#include "alnmt/tape.hpp"

namespace alnmt {

/// Shape of the encoder-decoder model. Attention and per-head output widths
/// are both d / heads.
struct ModelConfig {
  std::size_t d = 64;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t ffn_width = 256;
  std::size_t src_vocab = 0;
  std::size_t trg_vocab = 0;
  std::size_t max_length = 60;
  bool scale_attention = true;  // divide attention logits by sqrt(d_a)
  bool tie_weights = true;      // output projection = target embedding^T
  bool positional = true;       // add sinusoidal position encodings

  std::size_t head_width() const { return heads == 0 ? 0 : d / heads; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Token ids of one sentence. Sources end in eos; target-side inputs start
/// with bos.
struct EncodedSentence {
  std::vector<int> ids;
  bool truncated = false;

  std::size_t length() const { return ids.size(); }
};

/// Source ids followed by eos, truncated so the result fits `max_length`.
EncodedSentence encode_source(std::span<const int> tokens, std::size_t max_length);
/// Teacher-forcing views of a target: decoder input (bos + tokens) and gold
/// output (tokens + eos), truncated to `max_length`.
struct TargetSides {
  std::vector<int> input;
  std::vector<int> output;
  bool truncated = false;
};
TargetSides encode_target(std::span<const int> tokens, std::size_t max_length);

template <typename T>
struct AttentionHead {
  Parameter<T> query;  // A: d x d_a
  Parameter<T> key;    // B: d x d_a
  Parameter<T> value;  // C: d x d_o
};

template <typename T>
struct LayerNormParams {
  Parameter<T> gain;
  Parameter<T> bias;
};

template <typename T>
struct FeedForwardParams {
  Parameter<T> w1;
  Parameter<T> b1;
  Parameter<T> w2;
  Parameter<T> b2;
};

template <typename T>
struct EncoderLayerParams {
  std::vector<AttentionHead<T>> self_attention;
  LayerNormParams<T> norm;
  FeedForwardParams<T> ffn;
};

template <typename T>
struct DecoderLayerParams {
  std::vector<AttentionHead<T>> self_attention;
  std::vector<AttentionHead<T>> cross_attention;
  LayerNormParams<T> norm;
  FeedForwardParams<T> ffn;
};

/// All learnable tensors. With tying enabled the output projection is the
/// target embedding itself (no separate storage).
template <typename T>
struct ParamSet {
  Parameter<T> src_embedding;
  Parameter<T> trg_embedding;
  Parameter<T> output_projection;  // V x d, only used when untied
  std::vector<EncoderLayerParams<T>> encoder;
  std::vector<DecoderLayerParams<T>> decoder;
  bool tied = true;

  /// Output projection as a V x d matrix (logits = H * W^T).
  Parameter<T>& output_weights() { return tied ? trg_embedding : output_projection; }
  const Parameter<T>& output_weights() const { return tied ? trg_embedding : output_projection; }

  std::vector<Parameter<T>*> all();
  std::vector<const Parameter<T>*> all() const;
  void zero_grad();
};

/// Zero-initialized parameters with the right shapes.
template <typename T>
ParamSet<T> make_params(const ModelConfig& config);
/// Xavier-uniform matrices; layer-norm gains 1, biases 0.
template <typename T>
void xavier_init(ParamSet<T>& params, std::uint64_t seed);

/// Everything cached by a forward pass; mostly for inspection and tests.
template <typename T>
struct ForwardTrace {
  std::vector<std::vector<Tensor<T>>> encoder_heads;  // per layer, per head H^(h)
  std::vector<Tensor<T>> encoder_concat;              // H
  std::vector<Tensor<T>> encoder_residual;            // H'
  std::vector<Tensor<T>> encoder_output;              // H^(enc)
  std::vector<Tensor<T>> decoder_residual;            // H'
  std::vector<Tensor<T>> decoder_cross;               // Z
  std::vector<Tensor<T>> decoder_output;              // H^(dec)
  Tensor<T> logits;
};

template <typename T>
class Transformer {
 public:
  Transformer(ModelConfig config, ParamSet<T> params);
  Transformer(ModelConfig config, std::uint64_t init_seed);

  const ModelConfig& config() const { return config_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  /// Dropout probability used when a dropout generator is passed.
  void set_dropout(double p) { dropout_ = p; }
  double dropout() const { return dropout_; }

  /// Encoder stack; returns H^(enc) (l_x x d). `dropout_rng` null = eval mode.
  Var<T> encode(Tape<T>& tape, std::span<const int> src, Rng* dropout_rng = nullptr,
                ForwardTrace<T>* trace = nullptr);
  /// Decoder stack over a teacher-forced input; returns logits (l_y x V).
  Var<T> decode(Tape<T>& tape, Var<T> encoded, std::span<const int> trg_input,
                Rng* dropout_rng = nullptr, ForwardTrace<T>* trace = nullptr);

  /// Next-token distribution after `prefix` (which starts with bos),
  /// recomputing the full forward pass in eval mode.
  std::vector<T> decode_step(std::span<const int> src, std::span<const int> prefix);

  /// Per-position output distributions for a whole teacher-forced prefix.
  Tensor<T> distributions(std::span<const int> src, std::span<const int> trg_input);

  /// Sum of label-smoothed token losses for one pair, divided by
  /// `normalizer`, recorded on `tape`.
  Var<T> pair_loss(Tape<T>& tape, std::span<const int> src, const TargetSides& target,
                   T smoothing, T normalizer, Rng* dropout_rng = nullptr);

  /// Label-smoothed cross entropy averaged over all target tokens of the
  /// batch (eval mode, no gradients).
  double sequence_loss(std::span<const std::vector<int>> sources,
                       std::span<const std::vector<int>> targets, double smoothing);

  /// Same loss, but also accumulates d(loss)/d(param) into the parameter
  /// gradients. Returns the loss value.
  double accumulate_gradients(std::span<const std::vector<int>> sources,
                              std::span<const std::vector<int>> targets, double smoothing,
                              Rng* dropout_rng);

  /// Incremental decoding state: per-layer cached keys/values.
  struct DecoderState {
    std::vector<std::vector<Tensor<T>>> self_keys;    // [layer][head] t x d_a
    std::vector<std::vector<Tensor<T>>> self_values;  // [layer][head] t x d_o
    std::size_t position = 0;
    std::vector<T> log_probs;  // distribution after the last fed token
  };
  struct EncoderCache {
    std::vector<std::vector<Tensor<T>>> cross_keys;    // [layer][head] l_x x d_a
    std::vector<std::vector<Tensor<T>>> cross_values;  // [layer][head] l_x x d_o
  };

  EncoderCache prepare_encoder(std::span<const int> src) const;
  /// Feeds one target token and refreshes `state.log_probs`.
  void advance(const EncoderCache& cache, DecoderState& state, int token) const;
  DecoderState start_state(const EncoderCache& cache) const;

  const Tensor<T>& position_table() const { return positions_; }

 private:
  Var<T> embed(Tape<T>& tape, Var<T> table, std::span<const int> ids, Rng* rng);
  Var<T> attention(Tape<T>& tape, std::vector<AttentionHead<T>>& heads, Var<T> queries_from,
                   Var<T> keys_from, bool causal, Rng* rng, std::vector<Tensor<T>>* per_head);
  Var<T> feed_forward(Tape<T>& tape, FeedForwardParams<T>& ffn, Var<T> x, Rng* rng);
  Var<T> dropout(Var<T> x, Rng* rng);
  Tensor<T> encode_eval(std::span<const int> src) const;

  ModelConfig config_;
  ParamSet<T> params_;
  Tensor<T> positions_;
  double dropout_ = 0.0;
};

/// Sinusoidal position table (max_length x d).
template <typename T>
Tensor<T> sinusoidal_positions(std::size_t max_length, std::size_t d);

inline constexpr double kLayerNormEps = 1e-6;

/// Binary checkpoint: see docs/checkpoint_format.md.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                     const ParamSet<T>& params);
template <typename T>
Transformer<T> load_checkpoint(const std::filesystem::path& path);
ModelConfig read_checkpoint_config(const std::filesystem::path& path);

extern template class Transformer<float>;
extern template class Transformer<double>;

}  // namespace alnmt
