#include "acg/network.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "acg/errors.hpp"

namespace acg::net {

void validate(const HyperParams& hp) {
  if (hp.d_emb <= 0 || hp.d_hid <= 0 || hp.d_att <= 0) throw ConfigError("network sizes must be positive");
  if (!(hp.dropout >= 0.0 && hp.dropout < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
  if (!(hp.embed_scale > 0.0)) throw ConfigError("embedding init scale must be positive");
}

nlohmann::ordered_json to_json(const HyperParams& hp) {
  nlohmann::ordered_json j;
  j["d_emb"] = hp.d_emb;
  j["d_hid"] = hp.d_hid;
  j["d_att"] = hp.d_att;
  j["dropout"] = hp.dropout;
  j["embed_scale"] = hp.embed_scale;
  j["seed"] = hp.seed;
  return j;
}

HyperParams hyper_from_json(const nlohmann::json& j) {
  HyperParams hp;
  hp.d_emb = j.at("d_emb").get<int>();
  hp.d_hid = j.at("d_hid").get<int>();
  hp.d_att = j.at("d_att").get<int>();
  hp.dropout = j.at("dropout").get<double>();
  hp.embed_scale = j.at("embed_scale").get<double>();
  hp.seed = j.at("seed").get<std::uint64_t>();
  validate(hp);
  return hp;
}

SourceSequence make_source(const text::Vocab& vocab, const std::vector<std::string>& tokens) {
  SourceSequence s;
  s.vocab_size = vocab.size();
  for (const auto& t : tokens) {
    const int id = vocab.id(t);
    s.embed_ids.push_back(id);
    if (id != text::Vocab::kUnk || t == "<unk>") {
      s.pointer_ids.push_back(id);
      continue;
    }
    int ext = -1;
    for (std::size_t k = 0; k < s.oov_words.size(); ++k) {
      if (s.oov_words[k] == t) ext = s.vocab_size + static_cast<int>(k);
    }
    if (ext < 0) {
      ext = s.vocab_size + static_cast<int>(s.oov_words.size());
      s.oov_words.push_back(t);
    }
    s.pointer_ids.push_back(ext);
  }
  return s;
}

int SourceSequence::target_id(const text::Vocab& vocab, const std::string& w) const {
  if (vocab.contains(w)) return vocab.id(w);
  for (std::size_t k = 0; k < oov_words.size(); ++k) {
    if (oov_words[k] == w) return vocab_size + static_cast<int>(k);
  }
  return text::Vocab::kUnk;
}

std::string SourceSequence::word(const text::Vocab& vocab, int extended_id) const {
  if (extended_id >= 0 && extended_id < vocab_size) return vocab.word(extended_id);
  const int k = extended_id - vocab_size;
  if (k >= 0 && k < static_cast<int>(oov_words.size())) return oov_words[static_cast<std::size_t>(k)];
  throw ContractError("extended id out of range: " + std::to_string(extended_id));
}

template <typename Scalar>
Network<Scalar>::Network(const HyperParams& hp, int vocab_size) : hp_(hp), vocab_size_(vocab_size) {
  validate(hp);
  if (vocab_size <= text::Vocab::kSpecialCount - 1) throw ConfigError("vocabulary too small for a network");
  Rng rng(hp.seed, 0x6e6574);
  const int h = hp.d_hid;
  const int features = h + 2 * h + hp.d_emb;

  embedding = add_uniform("embedding", vocab_size, hp.d_emb, hp.embed_scale, rng);
  enc_fwd = add_gru("enc_fwd", hp.d_emb, h, rng);
  enc_bwd = add_gru("enc_bwd", hp.d_emb, h, rng);
  entity = add_gru("entity", 2 * h, h, rng);
  dec1 = add_gru("dec1", hp.d_emb, h, rng);
  dec2 = add_gru("dec2", 2 * h, h, rng);
  session = add_gru("session", h, h, rng);

  auto fan = [](int n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
  att_query = add_uniform("att.query", hp.d_att, 2 * h, fan(4 * h), rng);
  att_key = add_uniform("att.key", hp.d_att, 2 * h, fan(4 * h), rng);
  att_bias = add("att.bias", ad::Matrix<Scalar>::Zero(hp.d_att, 1));
  att_score = add_uniform("att.score", 1, hp.d_att, fan(hp.d_att), rng);

  short_hidden = add_uniform("shortlist.hidden", h, features, fan(features), rng);
  short_hidden_bias = add("shortlist.hidden_bias", ad::Matrix<Scalar>::Zero(h, 1));
  short_out = add_uniform("shortlist.out", vocab_size, h, fan(h), rng);
  short_out_bias = add("shortlist.out_bias", ad::Matrix<Scalar>::Zero(vocab_size, 1));

  switch_hidden = add_uniform("switch.hidden", h, features, fan(features), rng);
  switch_hidden_bias = add("switch.hidden_bias", ad::Matrix<Scalar>::Zero(h, 1));
  switch_out = add_uniform("switch.out", 1, h, fan(h), rng);
  switch_out_bias = add("switch.out_bias", ad::Matrix<Scalar>::Zero(1, 1));

  init_proj = add_uniform("init.proj", h, 2 * h, fan(2 * h), rng);
  init_bias = add("init.bias", ad::Matrix<Scalar>::Zero(h, 1));
  query_proj = add_uniform("query.proj", h, 2 * h, fan(2 * h), rng);
  query_bias = add("query.bias", ad::Matrix<Scalar>::Zero(h, 1));
}

template <typename Scalar>
std::size_t Network<Scalar>::add(const std::string& name, ad::Matrix<Scalar> init) {
  pointers_.push_back(&params_.add(name, std::move(init)));
  return pointers_.size() - 1;
}

template <typename Scalar>
std::size_t Network<Scalar>::add_uniform(const std::string& name, int rows, int cols, double bound, Rng& rng) {
  ad::Matrix<Scalar> m(rows, cols);
  for (ad::Index j = 0; j < m.cols(); ++j) {
    for (ad::Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<Scalar>(rng.uniform(-bound, bound));
  }
  return add(name, std::move(m));
}

template <typename Scalar>
typename Network<Scalar>::Gru Network<Scalar>::add_gru(const std::string& prefix, int input, int hidden, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(input + hidden));
  Gru g;
  g.input = input;
  g.hidden = hidden;
  g.W = add_uniform(prefix + ".W", 3 * hidden, input, bound, rng);
  g.U_zr = add_uniform(prefix + ".U_zr", 2 * hidden, hidden, bound, rng);
  g.U_n = add_uniform(prefix + ".U_n", hidden, hidden, bound, rng);
  g.b = add(prefix + ".b", ad::Matrix<Scalar>::Zero(3 * hidden, 1));
  return g;
}

template <typename Scalar>
int load_embeddings(Network<Scalar>& net, const text::Vocab& vocab, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embedding file: " + path);
  auto& table = net.param(net.embedding).value;
  std::string line;
  int replaced = 0;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word)) continue;
    std::vector<double> values;
    std::string field;
    while (ls >> field) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(field, &used));
        if (used != field.size()) throw std::invalid_argument(field);
      } catch (const std::exception&) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": bad number '" + field + "'");
      }
    }
    if (static_cast<int>(values.size()) != net.hyper().d_emb) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(net.hyper().d_emb) +
                       " values, got " + std::to_string(values.size()));
    }
    if (!vocab.contains(word)) continue;
    const int id = vocab.id(word);
    for (int k = 0; k < net.hyper().d_emb; ++k) table(id, k) = static_cast<Scalar>(values[static_cast<std::size_t>(k)]);
    ++replaced;
  }
  return replaced;
}

template <typename Scalar>
ad::Tensor<Scalar> pointer_mixture(const ad::Tensor<Scalar>& p_short, const ad::Tensor<Scalar>& alpha,
                                   const ad::Tensor<Scalar>& gate, std::span<const int> pointer_ids,
                                   int extended_size) {
  if (p_short.cols() != 1 || p_short.rows() > extended_size) {
    throw DimensionError("pointer_mixture: shortlist " + p_short.shape().str() + " exceeds extended size " +
                         std::to_string(extended_size));
  }
  auto& g = p_short.graph();
  ad::Tensor<Scalar> padded = p_short;
  if (p_short.rows() < extended_size) {
    padded = ad::concat({p_short, g.constant(ad::Matrix<Scalar>::Zero(extended_size - p_short.rows(), 1))}, 0);
  }
  const auto copy = ad::scatter_add(alpha, pointer_ids, extended_size);
  return ad::add(ad::scalar_mul(gate, padded), ad::scalar_mul(ad::affine(gate, Scalar(-1), Scalar(1)), copy));
}

template <typename Scalar>
Forward<Scalar>::Forward(Network<Scalar>& net, ad::Graph<Scalar>& graph, bool training, Rng* rng)
    : net_(net), g_(graph), training_(training), rng_(rng), bound_(net.params().size()) {
  if (training && net.hyper().dropout > 0.0 && rng == nullptr) {
    throw ContractError("training with dropout needs a random generator");
  }
}

template <typename Scalar>
ad::Tensor<Scalar> Forward<Scalar>::param(std::size_t index) {
  auto& slot = bound_.at(index);
  if (!slot) slot = g_.parameter(net_.param(index));
  return *slot;
}

template <typename Scalar>
ad::Tensor<Scalar> Forward<Scalar>::zeros(int rows) {
  return g_.constant(ad::Matrix<Scalar>::Zero(rows, 1));
}

template <typename Scalar>
ad::Tensor<Scalar> Forward<Scalar>::linear(std::size_t weight, std::size_t bias, const T& x) {
  return ad::add(ad::matmul(param(weight), x), param(bias));
}

namespace {

template <typename Scalar>
void require_width(const char* what, const ad::Tensor<Scalar>& v, int width) {
  if (v.cols() != 1 || v.rows() != width) {
    throw DimensionError(std::string(what) + ": expected " + std::to_string(width) + "x1, got " + v.shape().str());
  }
}

// One GRU update given the precomputed input projection W x + b.
template <typename Scalar>
ad::Tensor<Scalar> gru_update(const ad::Tensor<Scalar>& wx, const ad::Tensor<Scalar>& h,
                              const ad::Tensor<Scalar>& U_zr, const ad::Tensor<Scalar>& U_n, int hidden) {
  const auto zr = ad::sigmoid(ad::add(ad::rows(wx, 0, 2 * hidden), ad::matmul(U_zr, h)));
  const auto z = ad::rows(zr, 0, hidden);
  const auto r = ad::rows(zr, hidden, hidden);
  const auto n = ad::tanh(ad::add(ad::rows(wx, 2 * hidden, hidden), ad::matmul(U_n, ad::mul(r, h))));
  return ad::add(h, ad::mul(z, ad::sub(n, h)));
}

}  // namespace

template <typename Scalar>
ad::Tensor<Scalar> Forward<Scalar>::gru_cell(const typename Network<Scalar>::Gru& cell, const T& x, const T& h) {
  require_width("gru input", x, cell.input);
  require_width("gru state", h, cell.hidden);
  const auto wx = linear(cell.W, cell.b, x);
  return gru_update(wx, h, param(cell.U_zr), param(cell.U_n), cell.hidden);
}

template <typename Scalar>
std::vector<ad::Tensor<Scalar>> Forward<Scalar>::gru_run(const typename Network<Scalar>::Gru& cell, const T& inputs,
                                                         const T& h0, bool reverse) {
  if (inputs.rows() != cell.input) {
    throw DimensionError("gru inputs: expected " + std::to_string(cell.input) + " rows, got " + inputs.shape().str());
  }
  require_width("gru state", h0, cell.hidden);
  const auto wx = ad::broadcast_add(ad::matmul(param(cell.W), inputs), param(cell.b));
  const auto U_zr = param(cell.U_zr);
  const auto U_n = param(cell.U_n);
  const auto n = static_cast<std::size_t>(inputs.cols());
  std::vector<T> states(n);
  T h = h0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t t = reverse ? n - 1 - k : k;
    h = gru_update(ad::column(wx, static_cast<ad::Index>(t)), h, U_zr, U_n, cell.hidden);
    states[t] = h;
  }
  return states;
}

template <typename Scalar>
EncodedContext<Scalar> Forward<Scalar>::encode_context(const SourceSequence& source) {
  if (source.length() == 0) throw ContractError("encode_context: empty context");
  if (source.vocab_size != net_.vocab_size()) throw ContractError("encode_context: source built for another vocabulary");
  const int h = net_.hyper().d_hid;
  const auto x = ad::lookup(param(net_.embedding), std::span<const int>(source.embed_ids));
  const auto fwd = gru_run(net_.enc_fwd, x, zeros(h), false);
  const auto bwd = gru_run(net_.enc_bwd, x, zeros(h), true);
  const auto states = ad::concat({ad::concat(std::span<const T>(fwd), 1), ad::concat(std::span<const T>(bwd), 1)}, 0);
  EncodedContext<Scalar> enc;
  enc.states = states;
  enc.keys = ad::matmul(param(net_.att_key), states);
  enc.last = ad::column(states, states.cols() - 1);
  enc.source = &source;
  return enc;
}

template <typename Scalar>
ad::Tensor<Scalar> Forward<Scalar>::encode_entity(const EncodedContext<Scalar>& enc, int start, int end) {
  if (start < 0 || end < start || end >= enc.length()) {
    throw ContractError("entity span [" + std::to_string(start) + ", " + std::to_string(end) + "] outside context of " +
                        std::to_string(enc.length()) + " tokens");
  }
  const auto span = ad::block(enc.states, 0, start, enc.states.rows(), end - start + 1);
  return gru_run(net_.entity, span, zeros(net_.hyper().d_hid), false).back();
}

template <typename Scalar>
ad::Tensor<Scalar> Forward<Scalar>::acg_entity_vector() {
  return zeros(net_.hyper().d_hid);
}

template <typename Scalar>
ad::Tensor<Scalar> Forward<Scalar>::initial_state(const EncodedContext<Scalar>& enc) {
  return ad::tanh(linear(net_.init_proj, net_.init_bias, enc.last));
}

template <typename Scalar>
ad::Tensor<Scalar> Forward<Scalar>::first_query(const EncodedContext<Scalar>& enc) {
  return linear(net_.query_proj, net_.query_bias, enc.last);
}

template <typename Scalar>
ad::Tensor<Scalar> Forward<Scalar>::embed(int extended_id) {
  if (extended_id < 0) throw ContractError("negative token id");
  const int id = extended_id < net_.vocab_size() ? extended_id : text::Vocab::kUnk;
  return ad::lookup(param(net_.embedding), std::span<const int>(&id, 1));
}

template <typename Scalar>
StepOutput<Scalar> Forward<Scalar>::decoder_step(const EncodedContext<Scalar>& enc, const T& entity, int prev_token,
                                                 const T& h_prev) {
  if (enc.source == nullptr || enc.length() == 0) throw ContractError("decoder_step: empty context");
  const int h = net_.hyper().d_hid;
  require_width("decoder state", h_prev, h);
  require_width("entity vector", entity, h);

  const auto x = embed(prev_token);
  const auto h1 = gru_cell(net_.dec1, x, h_prev);

  const auto query = linear(net_.att_query, net_.att_bias, ad::concat({h1, entity}, 0));
  const auto scores = ad::matmul(param(net_.att_score), ad::tanh(ad::broadcast_add(enc.keys, query)));
  const auto alpha = ad::softmax(ad::transpose(scores));
  const auto context = ad::matmul(enc.states, alpha);

  const auto h2 = gru_cell(net_.dec2, context, h1);
  const auto dropped = training_ ? ad::dropout(h2, net_.hyper().dropout, true, *rng_) : h2;
  const auto features = ad::concat({dropped, context, x}, 0);

  const auto p_short = ad::softmax(
      linear(net_.short_out, net_.short_out_bias, ad::tanh(linear(net_.short_hidden, net_.short_hidden_bias, features))));
  const auto gate = ad::sigmoid(linear(net_.switch_out, net_.switch_out_bias,
                                       ad::tanh(linear(net_.switch_hidden, net_.switch_hidden_bias, features))));
  const auto p = pointer_mixture(p_short, alpha, gate, std::span<const int>(enc.source->pointer_ids),
                                 enc.source->extended_size());
  return {p, alpha, gate, h2};
}

template <typename Scalar>
ad::Tensor<Scalar> Forward<Scalar>::session_step(const T& session_prev, const T& q) {
  return gru_cell(net_.session, q, session_prev);
}

#define ACG_INSTANTIATE(S)                                                                               \
  template class Network<S>;                                                                             \
  template class Forward<S>;                                                                             \
  template int load_embeddings<S>(Network<S>&, const text::Vocab&, const std::string&);                 \
  template ad::Tensor<S> pointer_mixture<S>(const ad::Tensor<S>&, const ad::Tensor<S>&, const ad::Tensor<S>&, \
                                            std::span<const int>, int);

ACG_INSTANTIATE(double)
ACG_INSTANTIATE(long double)
#undef ACG_INSTANTIATE

}  // namespace acg::net
