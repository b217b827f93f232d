#pragma once

// The three command-set architectures and their teacher-forced objectives.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "acg/network.hpp"
#include "acg/textcorpus.hpp"

namespace acg::models {

enum class Architecture { PS_BS, HRED_PS, PS_CAT };

std::string to_string(Architecture arch);
/// Accepts ps_bs, hred_ps, ps_cat in any case, with '+' or '_' and the
/// short forms bs, hred, cat.
Architecture parse_architecture(std::string_view name);

/// Sorted token sequences, one per target: each command followed by <eos>
/// (PS_BS, HRED_PS; HRED adds a final [<eocs>]), or a single
/// "c1 <sep> c2 ... <eos>" sequence (PS_CAT).
std::vector<std::vector<std::string>> linearize_targets(const std::vector<std::string>& commands, Architecture arch);

struct TrainingInstance {
  net::SourceSequence source;
  std::optional<std::pair<int, int>> entity;
  std::vector<std::vector<int>> targets;  // extended ids
  Architecture arch = Architecture::PS_CAT;
  int unknown_targets = 0;  // target tokens in neither vocabulary nor context
};

TrainingInstance make_instance(const text::DataPoint& point, const text::Vocab& vocab, Architecture arch);

template <typename Scalar>
struct Encoded {
  net::EncodedContext<Scalar> context;
  ad::Tensor<Scalar> entity;
};

template <typename Scalar>
Encoded<Scalar> encode(net::Forward<Scalar>& f, const TrainingInstance& inst);

/// Teacher-forced -sum log p(y_t | y_<t) for one sequence from state h0,
/// starting from <bos>. The final decoder state is written to `final_hidden`.
template <typename Scalar>
ad::Tensor<Scalar> sequence_loss(net::Forward<Scalar>& f, const Encoded<Scalar>& enc, const ad::Tensor<Scalar>& h0,
                                 const std::vector<int>& target, ad::Tensor<Scalar>* final_hidden = nullptr);

/// One command of a PS_BS instance.
template <typename Scalar>
ad::Tensor<Scalar> loss_ps_bs(net::Forward<Scalar>& f, const Encoded<Scalar>& enc, const std::vector<int>& command);

/// Session-threaded loss over targets in the given order; the last target
/// must be the [<eocs>] step.
template <typename Scalar>
ad::Tensor<Scalar> loss_hred(net::Forward<Scalar>& f, const Encoded<Scalar>& enc,
                             const std::vector<std::vector<int>>& targets);

template <typename Scalar>
ad::Tensor<Scalar> loss_cat(net::Forward<Scalar>& f, const Encoded<Scalar>& enc, const std::vector<int>& target);

/// Total loss of an instance with one encoder pass. PS_BS sums its
/// per-command losses; an instance without targets has no loss.
template <typename Scalar>
std::optional<ad::Tensor<Scalar>> instance_loss(net::Forward<Scalar>& f, const TrainingInstance& inst);

/// Number of predicted tokens, the normalizer reported in training logs.
std::size_t target_tokens(const TrainingInstance& inst);

}  // namespace acg::models
