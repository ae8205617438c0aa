#include "alnmt/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "alnmt/bpe.hpp"

namespace alnmt {

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ContractError("invalid model config: " + what); };
  if (d == 0 || heads == 0 || layers == 0 || ffn_width == 0 || max_length < 2)
    fail("all extents must be positive (max_length >= 2)");
  if (d % heads != 0) fail("d=" + std::to_string(d) + " not divisible by heads=" + std::to_string(heads));
  if (src_vocab <= bpe::Vocabulary::kSpecials || trg_vocab <= bpe::Vocabulary::kSpecials)
    fail("vocabularies must contain more than the special tokens");
}

EncodedSentence encode_source(std::span<const int> tokens, std::size_t max_length) {
  EncodedSentence out;
  const std::size_t keep = std::min(tokens.size(), max_length - 1);
  out.truncated = keep < tokens.size();
  out.ids.assign(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(keep));
  out.ids.push_back(bpe::Vocabulary::kEos);
  return out;
}

TargetSides encode_target(std::span<const int> tokens, std::size_t max_length) {
  TargetSides out;
  const std::size_t keep = std::min(tokens.size(), max_length - 1);
  out.truncated = keep < tokens.size();
  out.input.push_back(bpe::Vocabulary::kBos);
  out.input.insert(out.input.end(), tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(keep));
  out.output.assign(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(keep));
  out.output.push_back(bpe::Vocabulary::kEos);
  return out;
}

template <typename T>
Tensor<T> sinusoidal_positions(std::size_t max_length, std::size_t d) {
  Tensor<T> table(max_length, d);
  for (std::size_t pos = 0; pos < max_length; ++pos) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(d));
      table(pos, i) = static_cast<T>(std::sin(static_cast<double>(pos) * freq));
      if (i + 1 < d) table(pos, i + 1) = static_cast<T>(std::cos(static_cast<double>(pos) * freq));
    }
  }
  return table;
}

namespace {

template <typename T>
Parameter<T> zeros(std::string name, std::size_t rows, std::size_t cols) {
  return Parameter<T>(std::move(name), Tensor<T>(rows, cols));
}

template <typename T>
std::vector<AttentionHead<T>> make_heads(const std::string& prefix, const ModelConfig& c) {
  std::vector<AttentionHead<T>> heads;
  const std::size_t w = c.head_width();
  for (std::size_t h = 0; h < c.heads; ++h) {
    const std::string p = prefix + "." + std::to_string(h) + ".";
    heads.push_back({zeros<T>(p + "A", c.d, w), zeros<T>(p + "B", c.d, w), zeros<T>(p + "C", c.d, w)});
  }
  return heads;
}

template <typename T>
LayerNormParams<T> make_norm(const std::string& prefix, std::size_t d) {
  return {zeros<T>(prefix + ".gain", 1, d), zeros<T>(prefix + ".bias", 1, d)};
}

template <typename T>
FeedForwardParams<T> make_ffn(const std::string& prefix, const ModelConfig& c) {
  return {zeros<T>(prefix + ".w1", c.d, c.ffn_width), zeros<T>(prefix + ".b1", 1, c.ffn_width),
          zeros<T>(prefix + ".w2", c.ffn_width, c.d), zeros<T>(prefix + ".b2", 1, c.d)};
}

template <typename T, typename P>
void collect_heads(std::vector<P*>& out, auto& heads) {
  for (auto& h : heads) {
    out.push_back(&h.query);
    out.push_back(&h.key);
    out.push_back(&h.value);
  }
}

template <typename T, typename P, typename Set>
std::vector<P*> collect(Set& s) {
  std::vector<P*> out;
  out.push_back(&s.src_embedding);
  out.push_back(&s.trg_embedding);
  if (!s.tied) out.push_back(&s.output_projection);
  for (auto& l : s.encoder) {
    collect_heads<T, P>(out, l.self_attention);
    out.push_back(&l.norm.gain);
    out.push_back(&l.norm.bias);
    out.push_back(&l.ffn.w1);
    out.push_back(&l.ffn.b1);
    out.push_back(&l.ffn.w2);
    out.push_back(&l.ffn.b2);
  }
  for (auto& l : s.decoder) {
    collect_heads<T, P>(out, l.self_attention);
    collect_heads<T, P>(out, l.cross_attention);
    out.push_back(&l.norm.gain);
    out.push_back(&l.norm.bias);
    out.push_back(&l.ffn.w1);
    out.push_back(&l.ffn.b1);
    out.push_back(&l.ffn.w2);
    out.push_back(&l.ffn.b2);
  }
  return out;
}

template <typename T>
void add_bias_rows(Tensor<T>& x, const Tensor<T>& bias) {
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) x(r, c) += bias[c];
}

template <typename T>
Tensor<T> append_row(const Tensor<T>& m, const Tensor<T>& row) {
  Tensor<T> out(m.rows() + 1, row.cols());
  std::copy(m.values().begin(), m.values().end(), out.data());
  std::copy(row.values().begin(), row.values().end(), out.data() + m.size());
  return out;
}

template <typename T>
Tensor<T> layer_norm_eval(const Tensor<T>& x, const LayerNormParams<T>& ln) {
  Tensor<T> out = kernels::normalize_rows(x, static_cast<T>(kLayerNormEps), static_cast<std::vector<T>*>(nullptr));
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c)
      out(r, c) = out(r, c) * ln.gain.value[c] + ln.bias.value[c];
  return out;
}

template <typename T>
Tensor<T> ffn_eval(const Tensor<T>& x, const FeedForwardParams<T>& f) {
  Tensor<T> h = kernels::matmul(x, f.w1.value);
  add_bias_rows(h, f.b1.value);
  for (auto& v : h.values()) v = v > T(0) ? v : T(0);
  Tensor<T> out = kernels::matmul(h, f.w2.value);
  add_bias_rows(out, f.b2.value);
  return out;
}

/// Attention of `queries_from` rows over precomputed keys/values, one head.
template <typename T>
Tensor<T> attend_eval(const Tensor<T>& q, const Tensor<T>& keys, const Tensor<T>& values, T scale,
                      bool causal) {
  Tensor<T> s = kernels::matmul_nt(q, keys);
  for (auto& v : s.values()) v *= scale;
  if (causal) {
    for (std::size_t r = 0; r < s.rows(); ++r)
      for (std::size_t c = r + 1; c < s.cols(); ++c) s(r, c) = masked_logit<T>();
  }
  kernels::softmax_rows(s);
  return kernels::matmul(s, values);
}

template <typename T>
void set_cols(Tensor<T>& dst, const Tensor<T>& src, std::size_t offset) {
  for (std::size_t r = 0; r < src.rows(); ++r)
    for (std::size_t c = 0; c < src.cols(); ++c) dst(r, offset + c) = src(r, c);
}

}  // namespace

template <typename T>
std::vector<Parameter<T>*> ParamSet<T>::all() {
  return collect<T, Parameter<T>>(*this);
}

template <typename T>
std::vector<const Parameter<T>*> ParamSet<T>::all() const {
  return collect<T, const Parameter<T>>(*this);
}

template <typename T>
void ParamSet<T>::zero_grad() {
  for (auto* p : all()) p->zero_grad();
}

template <typename T>
ParamSet<T> make_params(const ModelConfig& c) {
  c.validate();
  ParamSet<T> p;
  p.tied = c.tie_weights;
  p.src_embedding = zeros<T>("src_embedding", c.src_vocab, c.d);
  p.trg_embedding = zeros<T>("trg_embedding", c.trg_vocab, c.d);
  if (!p.tied) p.output_projection = zeros<T>("output_projection", c.trg_vocab, c.d);
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string e = "encoder." + std::to_string(l);
    p.encoder.push_back({make_heads<T>(e + ".self", c), make_norm<T>(e + ".norm", c.d),
                         make_ffn<T>(e + ".ffn", c)});
    const std::string d = "decoder." + std::to_string(l);
    p.decoder.push_back({make_heads<T>(d + ".self", c), make_heads<T>(d + ".cross", c),
                         make_norm<T>(d + ".norm", c.d), make_ffn<T>(d + ".ffn", c)});
  }
  for (auto* param : p.all()) {
    if (param->name.ends_with(".gain")) param->value.fill(T(1));
  }
  return p;
}

template <typename T>
void xavier_init(ParamSet<T>& params, std::uint64_t seed) {
  Rng rng(seed);
  for (auto* p : params.all()) {
    const bool is_matrix = p->value.rows() > 1 && p->value.cols() > 1;
    if (!is_matrix) continue;
    const double limit = std::sqrt(6.0 / static_cast<double>(p->value.rows() + p->value.cols()));
    for (auto& v : p->value.values()) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * limit);
  }
}

template <typename T>
Transformer<T>::Transformer(ModelConfig config, ParamSet<T> params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  if (params_.tied != config_.tie_weights) throw ContractError("parameter tying does not match config");
  positions_ = sinusoidal_positions<T>(config_.max_length, config_.d);
}

template <typename T>
Transformer<T>::Transformer(ModelConfig config, std::uint64_t init_seed)
    : Transformer(config, make_params<T>(config)) {
  xavier_init(params_, init_seed);
}

template <typename T>
Var<T> Transformer<T>::dropout(Var<T> x, Rng* rng) {
  if (rng == nullptr || dropout_ <= 0.0) return x;
  const Tensor<T>& v = x.value();
  Tensor<T> mask(v.shape(), std::vector<T>(v.size(), T(0)));
  const T keep_scale = static_cast<T>(1.0 / (1.0 - dropout_));
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng->uniform() < dropout_ ? T(0) : keep_scale;
  return ops::apply_mask(x, std::move(mask));
}

template <typename T>
Var<T> Transformer<T>::embed(Tape<T>& tape, Var<T> table, std::span<const int> ids, Rng* rng) {
  if (ids.size() > config_.max_length) {
    throw ContractError("sequence of length " + std::to_string(ids.size()) + " exceeds max_length " +
                        std::to_string(config_.max_length));
  }
  Var<T> x = ops::scale(ops::embedding_lookup(table, ids), static_cast<T>(std::sqrt(static_cast<double>(config_.d))));
  if (config_.positional) {
    Tensor<T> pos(ids.size(), config_.d);
    std::copy(positions_.data(), positions_.data() + pos.size(), pos.data());
    x = ops::add(x, tape.constant(std::move(pos)));
  }
  return dropout(x, rng);
}

template <typename T>
Var<T> Transformer<T>::attention(Tape<T>& tape, std::vector<AttentionHead<T>>& heads,
                                 Var<T> queries_from, Var<T> keys_from, bool causal, Rng* rng,
                                 std::vector<Tensor<T>>* per_head) {
  const T scale = config_.scale_attention
                      ? static_cast<T>(1.0 / std::sqrt(static_cast<double>(config_.head_width())))
                      : T(1);
  std::vector<Var<T>> outputs;
  outputs.reserve(heads.size());
  for (auto& head : heads) {
    Var<T> q = ops::matmul(queries_from, tape.parameter(head.query));
    Var<T> k = ops::matmul(keys_from, tape.parameter(head.key));
    Var<T> v = ops::matmul(keys_from, tape.parameter(head.value));
    Var<T> scores = ops::matmul_nt(q, k);
    if (scale != T(1)) scores = ops::scale(scores, scale);
    if (causal) {
      const std::size_t rows = scores.value().rows();
      const std::size_t cols = scores.value().cols();
      std::vector<bool> mask(rows * cols, false);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = r + 1; c < cols; ++c) mask[r * cols + c] = true;
      scores = ops::masked_fill(scores, mask);
    }
    Var<T> weights = dropout(ops::rowwise_softmax(scores), rng);
    Var<T> h = ops::matmul(weights, v);
    if (per_head) per_head->push_back(h.value());
    outputs.push_back(h);
  }
  return ops::concat<T>(outputs);
}

template <typename T>
Var<T> Transformer<T>::feed_forward(Tape<T>& tape, FeedForwardParams<T>& ffn, Var<T> x, Rng* rng) {
  Var<T> h = ops::relu(ops::add_row(ops::matmul(x, tape.parameter(ffn.w1)), tape.parameter(ffn.b1)));
  h = dropout(h, rng);
  return ops::add_row(ops::matmul(h, tape.parameter(ffn.w2)), tape.parameter(ffn.b2));
}

template <typename T>
Var<T> Transformer<T>::encode(Tape<T>& tape, std::span<const int> src, Rng* rng,
                              ForwardTrace<T>* trace) {
  if (src.empty()) throw ContractError("encode: empty source");
  Var<T> x = embed(tape, tape.parameter(params_.src_embedding), src, rng);
  const T eps = static_cast<T>(kLayerNormEps);
  for (auto& layer : params_.encoder) {
    std::vector<Tensor<T>> heads;
    Var<T> h = attention(tape, layer.self_attention, x, x, false, rng, trace ? &heads : nullptr);
    Var<T> h_res = ops::add(
        ops::layer_norm(h, tape.parameter(layer.norm.gain), tape.parameter(layer.norm.bias), eps), x);
    Var<T> out = ops::add(feed_forward(tape, layer.ffn, h_res, rng), h_res);
    if (trace) {
      trace->encoder_heads.push_back(std::move(heads));
      trace->encoder_concat.push_back(h.value());
      trace->encoder_residual.push_back(h_res.value());
      trace->encoder_output.push_back(out.value());
    }
    x = out;
  }
  return x;
}

template <typename T>
Var<T> Transformer<T>::decode(Tape<T>& tape, Var<T> encoded, std::span<const int> trg_input,
                              Rng* rng, ForwardTrace<T>* trace) {
  if (trg_input.empty()) throw ContractError("decode: empty target prefix");
  Var<T> y = embed(tape, tape.parameter(params_.trg_embedding), trg_input, rng);
  const T eps = static_cast<T>(kLayerNormEps);
  for (auto& layer : params_.decoder) {
    Var<T> h = attention(tape, layer.self_attention, y, y, true, rng, nullptr);
    Var<T> h_res = ops::add(h, y);
    Var<T> z = attention(tape, layer.cross_attention, h_res, encoded, false, rng, nullptr);
    Var<T> normed = ops::layer_norm(ops::add(h_res, z), tape.parameter(layer.norm.gain),
                                    tape.parameter(layer.norm.bias), eps);
    Var<T> out = feed_forward(tape, layer.ffn, normed, rng);
    if (trace) {
      trace->decoder_residual.push_back(h_res.value());
      trace->decoder_cross.push_back(z.value());
      trace->decoder_output.push_back(out.value());
    }
    y = out;
  }
  Var<T> logits = ops::matmul_nt(y, tape.parameter(params_.output_weights()));
  if (trace) trace->logits = logits.value();
  return logits;
}

template <typename T>
Tensor<T> Transformer<T>::distributions(std::span<const int> src, std::span<const int> trg_input) {
  Tape<T> tape(false);
  Var<T> enc = encode(tape, src);
  Tensor<T> probs = decode(tape, enc, trg_input).value();
  kernels::softmax_rows(probs);
  return probs;
}

template <typename T>
std::vector<T> Transformer<T>::decode_step(std::span<const int> src, std::span<const int> prefix) {
  if (prefix.empty() || prefix.front() != bpe::Vocabulary::kBos)
    throw ContractError("decode_step: prefix must start with bos");
  if (prefix.size() > config_.max_length)
    throw ContractError("decode_step: prefix longer than max_length");
  Tensor<T> probs = distributions(src, prefix);
  auto last = probs.row(probs.rows() - 1);
  return {last.begin(), last.end()};
}

template <typename T>
Var<T> Transformer<T>::pair_loss(Tape<T>& tape, std::span<const int> src, const TargetSides& target,
                                 T smoothing, T normalizer, Rng* rng) {
  Var<T> enc = encode(tape, src, rng);
  Var<T> logits = decode(tape, enc, target.input, rng);
  return ops::smoothed_cross_entropy(logits, std::span<const int>(target.output), smoothing, normalizer);
}

namespace {

template <typename T>
std::size_t count_target_tokens(std::span<const std::vector<int>> targets, std::size_t max_length) {
  std::size_t n = 0;
  for (const auto& t : targets) n += std::min(t.size(), max_length - 1) + 1;
  return n;
}

}  // namespace

template <typename T>
double Transformer<T>::sequence_loss(std::span<const std::vector<int>> sources,
                                     std::span<const std::vector<int>> targets, double smoothing) {
  if (sources.size() != targets.size()) throw ContractError("sequence_loss: batch size mismatch");
  const std::size_t n = count_target_tokens<T>(targets, config_.max_length);
  if (n == 0) throw ContractError("sequence_loss: batch has no target tokens");
  double total = 0;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    Tape<T> tape(false);
    const EncodedSentence src = encode_source(sources[i], config_.max_length);
    const TargetSides trg = encode_target(targets[i], config_.max_length);
    total += pair_loss(tape, src.ids, trg, static_cast<T>(smoothing), static_cast<T>(n)).value()[0];
  }
  return total;
}

template <typename T>
double Transformer<T>::accumulate_gradients(std::span<const std::vector<int>> sources,
                                            std::span<const std::vector<int>> targets,
                                            double smoothing, Rng* rng) {
  if (sources.size() != targets.size()) throw ContractError("accumulate_gradients: batch size mismatch");
  const std::size_t n = count_target_tokens<T>(targets, config_.max_length);
  if (n == 0) throw ContractError("accumulate_gradients: batch has no target tokens");
  double total = 0;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    Tape<T> tape;
    const EncodedSentence src = encode_source(sources[i], config_.max_length);
    const TargetSides trg = encode_target(targets[i], config_.max_length);
    Var<T> loss = pair_loss(tape, src.ids, trg, static_cast<T>(smoothing), static_cast<T>(n), rng);
    total += loss.value()[0];
    tape.backward(loss);
  }
  return total;
}

template <typename T>
Tensor<T> Transformer<T>::encode_eval(std::span<const int> src) const {
  if (src.empty()) throw ContractError("encode: empty source");
  if (src.size() > config_.max_length) throw ContractError("source exceeds max_length");
  const std::size_t d = config_.d;
  const T emb_scale = static_cast<T>(std::sqrt(static_cast<double>(d)));
  const T scale = config_.scale_attention
                      ? static_cast<T>(1.0 / std::sqrt(static_cast<double>(config_.head_width())))
                      : T(1);
  Tensor<T> x(src.size(), d);
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto row = params_.src_embedding.value.row(static_cast<std::size_t>(src[i]));
    for (std::size_t c = 0; c < d; ++c)
      x(i, c) = row[c] * emb_scale + (config_.positional ? positions_(i, c) : T(0));
  }
  const std::size_t w = config_.head_width();
  for (const auto& layer : params_.encoder) {
    Tensor<T> h(src.size(), d);
    for (std::size_t k = 0; k < layer.self_attention.size(); ++k) {
      const auto& head = layer.self_attention[k];
      Tensor<T> q = kernels::matmul(x, head.query.value);
      Tensor<T> keys = kernels::matmul(x, head.key.value);
      Tensor<T> vals = kernels::matmul(x, head.value.value);
      set_cols(h, attend_eval(q, keys, vals, scale, false), k * w);
    }
    Tensor<T> h_res = layer_norm_eval(h, layer.norm);
    kernels::accumulate(h_res, x);
    Tensor<T> out = ffn_eval(h_res, layer.ffn);
    kernels::accumulate(out, h_res);
    x = std::move(out);
  }
  return x;
}

template <typename T>
typename Transformer<T>::EncoderCache Transformer<T>::prepare_encoder(std::span<const int> src) const {
  const Tensor<T> enc = encode_eval(src);
  EncoderCache cache;
  for (const auto& layer : params_.decoder) {
    std::vector<Tensor<T>> keys;
    std::vector<Tensor<T>> vals;
    for (const auto& head : layer.cross_attention) {
      keys.push_back(kernels::matmul(enc, head.key.value));
      vals.push_back(kernels::matmul(enc, head.value.value));
    }
    cache.cross_keys.push_back(std::move(keys));
    cache.cross_values.push_back(std::move(vals));
  }
  return cache;
}

template <typename T>
typename Transformer<T>::DecoderState Transformer<T>::start_state(const EncoderCache& cache) const {
  DecoderState state;
  const std::size_t w = config_.head_width();
  state.self_keys.assign(cache.cross_keys.size(), std::vector<Tensor<T>>(config_.heads, Tensor<T>(0, w)));
  state.self_values.assign(cache.cross_keys.size(), std::vector<Tensor<T>>(config_.heads, Tensor<T>(0, w)));
  advance(cache, state, bpe::Vocabulary::kBos);
  return state;
}

template <typename T>
void Transformer<T>::advance(const EncoderCache& cache, DecoderState& state, int token) const {
  if (state.position >= config_.max_length) throw ContractError("decoder prefix exceeds max_length");
  const std::size_t d = config_.d;
  const std::size_t w = config_.head_width();
  const T emb_scale = static_cast<T>(std::sqrt(static_cast<double>(d)));
  const T scale = config_.scale_attention ? static_cast<T>(1.0 / std::sqrt(static_cast<double>(w))) : T(1);

  Tensor<T> y(1, d);
  const auto row = params_.trg_embedding.value.row(static_cast<std::size_t>(token));
  for (std::size_t c = 0; c < d; ++c)
    y(0, c) = row[c] * emb_scale + (config_.positional ? positions_(state.position, c) : T(0));

  for (std::size_t l = 0; l < params_.decoder.size(); ++l) {
    const auto& layer = params_.decoder[l];
    Tensor<T> h(1, d);
    for (std::size_t k = 0; k < layer.self_attention.size(); ++k) {
      const auto& head = layer.self_attention[k];
      Tensor<T> q = kernels::matmul(y, head.query.value);
      state.self_keys[l][k] = append_row(state.self_keys[l][k], kernels::matmul(y, head.key.value));
      state.self_values[l][k] = append_row(state.self_values[l][k], kernels::matmul(y, head.value.value));
      set_cols(h, attend_eval(q, state.self_keys[l][k], state.self_values[l][k], scale, false), k * w);
    }
    kernels::accumulate(h, y);  // H' = H + Y
    Tensor<T> z(1, d);
    for (std::size_t k = 0; k < layer.cross_attention.size(); ++k) {
      Tensor<T> q = kernels::matmul(h, layer.cross_attention[k].query.value);
      set_cols(z, attend_eval(q, cache.cross_keys[l][k], cache.cross_values[l][k], scale, false), k * w);
    }
    kernels::accumulate(z, h);
    y = ffn_eval(layer_norm_eval(z, layer.norm), layer.ffn);
  }
  Tensor<T> logits = kernels::matmul_nt(y, params_.output_weights().value);
  kernels::log_softmax_rows(logits);
  state.log_probs.assign(logits.values().begin(), logits.values().end());
  ++state.position;
}

#define ALNMT_INSTANTIATE_TRANSFORMER(T)                                       \
  template struct ParamSet<T>;                                                 \
  template ParamSet<T> make_params<T>(const ModelConfig&);                     \
  template void xavier_init<T>(ParamSet<T>&, std::uint64_t);                   \
  template Tensor<T> sinusoidal_positions<T>(std::size_t, std::size_t);        \
  template class Transformer<T>;

ALNMT_INSTANTIATE_TRANSFORMER(float)
ALNMT_INSTANTIATE_TRANSFORMER(double)
#undef ALNMT_INSTANTIATE_TRANSFORMER

}  // namespace alnmt
