#pragma once

// Encoder-decoder building blocks: embeddings, GRUs, the bidirectional
// context encoder, the entity encoder, the attentive two-GRU decoder step
// with pointer softmax and the session-level recurrence.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "acg/autograd.hpp"
#include "acg/rng.hpp"
#include "acg/textcorpus.hpp"

namespace acg::net {

struct HyperParams {
  int d_emb = 64;
  int d_hid = 128;
  int d_att = 128;
  double dropout = 0.3;
  // Embeddings start uniform in [-embed_scale, embed_scale]; every other
  // matrix uses [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  double embed_scale = 0.1;
  std::uint64_t seed = 1;

  bool operator==(const HyperParams&) const = default;
};

/// Throws ConfigError for non-positive sizes or a rate outside [0, 1).
void validate(const HyperParams& hp);
nlohmann::ordered_json to_json(const HyperParams& hp);
HyperParams hyper_from_json(const nlohmann::json& j);

/// A context as seen by the network. Out-of-vocabulary source words get
/// extended ids |V|, |V|+1, ... so the pointer can still produce them.
struct SourceSequence {
  std::vector<int> embed_ids;    // vocabulary ids, UNK for unknown words
  std::vector<int> pointer_ids;  // extended ids
  std::vector<std::string> oov_words;
  int vocab_size = 0;

  int length() const { return static_cast<int>(embed_ids.size()); }
  int extended_size() const { return vocab_size + static_cast<int>(oov_words.size()); }
  /// Extended id of a target word: vocabulary id, else its source copy id,
  /// else UNK.
  int target_id(const text::Vocab& vocab, const std::string& word) const;
  /// Inverse of target_id for decoded ids.
  std::string word(const text::Vocab& vocab, int extended_id) const;
};

SourceSequence make_source(const text::Vocab& vocab, const std::vector<std::string>& tokens);

template <typename Scalar>
class Network {
 public:
  struct Gru {
    std::size_t W, U_zr, U_n, b;
    int input = 0;
    int hidden = 0;
  };

  Network(const HyperParams& hp, int vocab_size);

  const HyperParams& hyper() const { return hp_; }
  int vocab_size() const { return vocab_size_; }
  ad::ParameterSet<Scalar>& params() { return params_; }
  const ad::ParameterSet<Scalar>& params() const { return params_; }
  ad::Parameter<Scalar>& param(std::size_t index) { return *pointers_[index]; }

  std::size_t embedding = 0;
  Gru enc_fwd{}, enc_bwd{}, entity{}, dec1{}, dec2{}, session{};
  std::size_t att_query = 0, att_key = 0, att_bias = 0, att_score = 0;
  std::size_t short_hidden = 0, short_hidden_bias = 0, short_out = 0, short_out_bias = 0;
  std::size_t switch_hidden = 0, switch_hidden_bias = 0, switch_out = 0, switch_out_bias = 0;
  std::size_t init_proj = 0, init_bias = 0, query_proj = 0, query_bias = 0;

 private:
  std::size_t add(const std::string& name, ad::Matrix<Scalar> init);
  std::size_t add_uniform(const std::string& name, int rows, int cols, double bound, Rng& rng);
  Gru add_gru(const std::string& prefix, int input, int hidden, Rng& rng);

  HyperParams hp_;
  int vocab_size_ = 0;
  ad::ParameterSet<Scalar> params_;
  std::vector<ad::Parameter<Scalar>*> pointers_;
};

/// Overrides embedding rows from a whitespace-separated text file of
/// "word v1 ... v_d" lines; returns the number of rows replaced.
template <typename Scalar>
int load_embeddings(Network<Scalar>& net, const text::Vocab& vocab, const std::string& path);

template <typename Scalar>
struct EncodedContext {
  ad::Tensor<Scalar> states;  // 2*d_hid x N, column t = <h_f^t, h_b^t>
  ad::Tensor<Scalar> keys;    // attention key projections of every column
  ad::Tensor<Scalar> last;    // h_e^N
  const SourceSequence* source = nullptr;

  int length() const { return static_cast<int>(states.cols()); }
};

template <typename Scalar>
struct StepOutput {
  ad::Tensor<Scalar> p;       // over the extended vocabulary of the source
  ad::Tensor<Scalar> alpha;   // N x 1
  ad::Tensor<Scalar> gate;    // 1 x 1 switch value s
  ad::Tensor<Scalar> hidden;  // h_d2 before dropout
};

/// p = s * p_s (zero-padded to `extended_size`) + (1 - s) * p_c, where p_c
/// accumulates alpha onto the pointer ids.
template <typename Scalar>
ad::Tensor<Scalar> pointer_mixture(const ad::Tensor<Scalar>& p_short, const ad::Tensor<Scalar>& alpha,
                                   const ad::Tensor<Scalar>& gate, std::span<const int> pointer_ids,
                                   int extended_size);

/// Binds a network to one graph. Parameters enter the graph on first use.
template <typename Scalar>
class Forward {
 public:
  using T = ad::Tensor<Scalar>;

  Forward(Network<Scalar>& net, ad::Graph<Scalar>& graph, bool training = false, Rng* rng = nullptr);

  ad::Graph<Scalar>& graph() { return g_; }
  Network<Scalar>& net() { return net_; }
  bool training() const { return training_; }

  T param(std::size_t index);

  /// One GRU step on an input vector x.
  T gru_cell(const typename Network<Scalar>::Gru& cell, const T& x, const T& h);
  /// Runs a GRU over the columns of `inputs` (optionally right to left);
  /// states are returned in input-column order.
  std::vector<T> gru_run(const typename Network<Scalar>::Gru& cell, const T& inputs, const T& h0, bool reverse);

  EncodedContext<Scalar> encode_context(const SourceSequence& source);
  /// Entity GRU over the encoder columns start..end inclusive.
  T encode_entity(const EncodedContext<Scalar>& enc, int start, int end);
  /// The entity slot used by the ACG task.
  T acg_entity_vector();

  /// Initial decoder state tanh(W h_e^N + b).
  T initial_state(const EncodedContext<Scalar>& enc);
  /// First session input q^1, projected from h_e^N.
  T first_query(const EncodedContext<Scalar>& enc);

  StepOutput<Scalar> decoder_step(const EncodedContext<Scalar>& enc, const T& entity, int prev_token, const T& h_prev);
  T session_step(const T& session_prev, const T& q);

  T zeros(int rows);

 private:
  T linear(std::size_t weight, std::size_t bias, const T& x);
  T embed(int extended_id);

  Network<Scalar>& net_;
  ad::Graph<Scalar>& g_;
  bool training_;
  Rng* rng_;
  std::vector<std::optional<T>> bound_;
};

extern template class Network<double>;
extern template class Forward<double>;
extern template class Network<long double>;
extern template class Forward<long double>;

}  // namespace acg::net
