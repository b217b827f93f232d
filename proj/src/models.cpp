#include "acg/models.hpp"

#include <algorithm>
#include <cctype>

#include "acg/errors.hpp"

namespace acg::models {

std::string to_string(Architecture arch) {
  switch (arch) {
    case Architecture::PS_BS: return "PS_BS";
    case Architecture::HRED_PS: return "HRED_PS";
    case Architecture::PS_CAT: return "PS_CAT";
  }
  return "?";
}

Architecture parse_architecture(std::string_view name) {
  std::string key;
  for (char c : name) {
    if (c == '+' || c == '-' || c == ' ') c = '_';
    key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  if (key == "ps_bs" || key == "bs") return Architecture::PS_BS;
  if (key == "hred_ps" || key == "hred") return Architecture::HRED_PS;
  if (key == "ps_cat" || key == "cat") return Architecture::PS_CAT;
  throw ConfigError("unknown architecture: " + std::string(name));
}

std::vector<std::vector<std::string>> linearize_targets(const std::vector<std::string>& commands, Architecture arch) {
  std::vector<std::string> sorted = commands;
  std::sort(sorted.begin(), sorted.end());
  const auto& specials = text::Vocab::special_tokens();
  const std::string& eos = specials[text::Vocab::kEos];
  std::vector<std::vector<std::string>> out;
  if (arch == Architecture::PS_CAT) {
    std::vector<std::string> seq;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      if (i > 0) seq.push_back(specials[text::Vocab::kSep]);
      for (auto& t : text::tokenize(sorted[i])) seq.push_back(std::move(t));
    }
    seq.push_back(eos);
    out.push_back(std::move(seq));
    return out;
  }
  for (const auto& c : sorted) {
    auto seq = text::tokenize(c);
    seq.push_back(eos);
    out.push_back(std::move(seq));
  }
  if (arch == Architecture::HRED_PS) out.push_back({specials[text::Vocab::kEndOfSet]});
  return out;
}

TrainingInstance make_instance(const text::DataPoint& point, const text::Vocab& vocab, Architecture arch) {
  TrainingInstance inst;
  inst.arch = arch;
  inst.source = net::make_source(vocab, point.context);
  if (point.task == text::Task::ACGE) {
    if (point.entities.size() != 1) throw ConsistencyError(point.state_id + ": ACGE point needs exactly one entity");
    inst.entity = std::make_pair(point.entities[0].start, point.entities[0].end);
  }
  const auto& specials = text::Vocab::special_tokens();
  for (const auto& seq : linearize_targets(point.commands, arch)) {
    std::vector<int> ids;
    for (const auto& w : seq) {
      const bool special = std::find(specials.begin(), specials.end(), w) != specials.end();
      const int id = special ? vocab.id(w) : inst.source.target_id(vocab, w);
      if (id == text::Vocab::kUnk) ++inst.unknown_targets;
      ids.push_back(id);
    }
    inst.targets.push_back(std::move(ids));
  }
  return inst;
}

std::size_t target_tokens(const TrainingInstance& inst) {
  std::size_t n = 0;
  for (const auto& t : inst.targets) n += t.size();
  return n;
}

template <typename Scalar>
Encoded<Scalar> encode(net::Forward<Scalar>& f, const TrainingInstance& inst) {
  Encoded<Scalar> enc{f.encode_context(inst.source), {}};
  enc.entity = inst.entity ? f.encode_entity(enc.context, inst.entity->first, inst.entity->second) : f.acg_entity_vector();
  return enc;
}

template <typename Scalar>
ad::Tensor<Scalar> sequence_loss(net::Forward<Scalar>& f, const Encoded<Scalar>& enc, const ad::Tensor<Scalar>& h0,
                                 const std::vector<int>& target, ad::Tensor<Scalar>* final_hidden) {
  if (target.empty()) throw ContractError("sequence_loss: empty target");
  std::vector<ad::Tensor<Scalar>> terms;
  terms.reserve(target.size());
  ad::Tensor<Scalar> h = h0;
  int prev = text::Vocab::kBos;
  for (int y : target) {
    const auto out = f.decoder_step(enc.context, enc.entity, prev, h);
    terms.push_back(ad::nll_loss(out.p, y));
    h = out.hidden;
    prev = y;
  }
  if (final_hidden != nullptr) *final_hidden = h;
  return ad::sum_all(std::span<const ad::Tensor<Scalar>>(terms));
}

template <typename Scalar>
ad::Tensor<Scalar> loss_ps_bs(net::Forward<Scalar>& f, const Encoded<Scalar>& enc, const std::vector<int>& command) {
  return sequence_loss(f, enc, f.initial_state(enc.context), command);
}

template <typename Scalar>
ad::Tensor<Scalar> loss_hred(net::Forward<Scalar>& f, const Encoded<Scalar>& enc,
                             const std::vector<std::vector<int>>& targets) {
  if (targets.empty() || targets.back() != std::vector<int>{text::Vocab::kEndOfSet}) {
    throw ContractError("loss_hred: targets must end with the end-of-set step");
  }
  std::vector<ad::Tensor<Scalar>> terms;
  auto session = f.zeros(f.net().hyper().d_hid);
  auto q = f.first_query(enc.context);
  for (const auto& target : targets) {
    session = f.session_step(session, q);
    terms.push_back(sequence_loss(f, enc, session, target, &q));
  }
  return ad::sum_all(std::span<const ad::Tensor<Scalar>>(terms));
}

template <typename Scalar>
ad::Tensor<Scalar> loss_cat(net::Forward<Scalar>& f, const Encoded<Scalar>& enc, const std::vector<int>& target) {
  return sequence_loss(f, enc, f.initial_state(enc.context), target);
}

template <typename Scalar>
std::optional<ad::Tensor<Scalar>> instance_loss(net::Forward<Scalar>& f, const TrainingInstance& inst) {
  if (inst.targets.empty()) return std::nullopt;
  const auto enc = encode(f, inst);
  switch (inst.arch) {
    case Architecture::PS_BS: {
      std::vector<ad::Tensor<Scalar>> terms;
      const auto h0 = f.initial_state(enc.context);
      for (const auto& t : inst.targets) terms.push_back(sequence_loss(f, enc, h0, t));
      return ad::sum_all(std::span<const ad::Tensor<Scalar>>(terms));
    }
    case Architecture::HRED_PS: return loss_hred(f, enc, inst.targets);
    case Architecture::PS_CAT: return loss_cat(f, enc, inst.targets.front());
  }
  return std::nullopt;
}

#define ACG_INSTANTIATE(S)                                                                                      \
  template Encoded<S> encode<S>(net::Forward<S>&, const TrainingInstance&);                                    \
  template ad::Tensor<S> sequence_loss<S>(net::Forward<S>&, const Encoded<S>&, const ad::Tensor<S>&,           \
                                          const std::vector<int>&, ad::Tensor<S>*);                             \
  template ad::Tensor<S> loss_ps_bs<S>(net::Forward<S>&, const Encoded<S>&, const std::vector<int>&);          \
  template ad::Tensor<S> loss_hred<S>(net::Forward<S>&, const Encoded<S>&, const std::vector<std::vector<int>>&); \
  template ad::Tensor<S> loss_cat<S>(net::Forward<S>&, const Encoded<S>&, const std::vector<int>&);            \
  template std::optional<ad::Tensor<S>> instance_loss<S>(net::Forward<S>&, const TrainingInstance&);

ACG_INSTANTIATE(double)
ACG_INSTANTIATE(long double)
#undef ACG_INSTANTIATE

}  // namespace acg::models
