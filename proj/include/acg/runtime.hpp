#pragma once

// Training, checkpoints and inference.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "acg/models.hpp"
#include "acg/network.hpp"
#include "acg/textcorpus.hpp"

namespace acg::runtime {

// ---------------------------------------------------------------------------
// Decoding

struct BeamOptions {
  int width = 1;
  int max_len = 10;
  bool length_normalize = false;
};

template <typename State>
struct BeamHypothesis {
  std::vector<int> tokens;  // includes the final <eos> when finished
  double score = 0.0;       // sum of token log-probabilities
  State state{};
  bool finished = false;
};

template <typename State>
struct StepResult {
  Eigen::VectorXd log_probs;
  State next;
};

/// Ranking value of a hypothesis under `opt`.
template <typename State>
double ranking_score(const BeamHypothesis<State>& h, const BeamOptions& opt) {
  if (!opt.length_normalize || h.tokens.empty()) return h.score;
  return h.score / static_cast<double>(h.tokens.size());
}

/// Beam search over an arbitrary step function
///   StepResult<State> step(const State& state, int previous_token).
/// Hypotheses ending in `eos` are frozen. Each step keeps the best
/// width - |finished| expansions (ties broken by parent rank, then token id)
/// until `width` hypotheses have finished or max_len tokens were produced;
/// unfinished hypotheses fill the result only when fewer than `width`
/// finished. If `key` is given, hypotheses rendering to the same key are
/// merged, keeping the best. The result is sorted by ranking score.
template <typename State, typename StepFn>
std::vector<BeamHypothesis<State>> beam_search(const State& init, int bos, int eos, StepFn&& step,
                                               const BeamOptions& opt,
                                               const std::function<std::string(const std::vector<int>&)>& key = {}) {
  if (opt.width < 1) throw ContractError("beam_search: width must be >= 1");
  if (opt.max_len < 1) throw ContractError("beam_search: max_len must be >= 1");
  using Hyp = BeamHypothesis<State>;
  std::vector<Hyp> live(1);
  live[0].state = init;
  std::vector<Hyp> finished;
  struct Candidate {
    double score;
    std::size_t parent;
    int token;
  };
  for (int t = 0; t < opt.max_len && !live.empty(); ++t) {
    const std::size_t slots = static_cast<std::size_t>(opt.width) - finished.size();
    std::vector<StepResult<State>> outs;
    outs.reserve(live.size());
    std::vector<Candidate> cands;
    for (std::size_t i = 0; i < live.size(); ++i) {
      const int prev = live[i].tokens.empty() ? bos : live[i].tokens.back();
      outs.push_back(step(live[i].state, prev));
      const auto& lp = outs.back().log_probs;
      for (Eigen::Index y = 0; y < lp.size(); ++y) {
        cands.push_back({live[i].score + lp(y), i, static_cast<int>(y)});
      }
    }
    const std::size_t keep = std::min(slots, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.token < b.token;
                      });
    std::vector<Hyp> next;
    for (std::size_t c = 0; c < keep; ++c) {
      const Candidate& cand = cands[c];
      Hyp h;
      h.tokens = live[cand.parent].tokens;
      h.tokens.push_back(cand.token);
      h.score = cand.score;
      h.state = outs[cand.parent].next;
      h.finished = cand.token == eos;
      (h.finished ? finished : next).push_back(std::move(h));
    }
    live = std::move(next);
    if (finished.size() >= static_cast<std::size_t>(opt.width)) break;
  }
  std::vector<Hyp> out = std::move(finished);
  if (out.size() < static_cast<std::size_t>(opt.width)) {
    for (auto& h : live) out.push_back(std::move(h));
  }
  std::stable_sort(out.begin(), out.end(), [&](const Hyp& a, const Hyp& b) {
    return ranking_score(a, opt) > ranking_score(b, opt);
  });
  if (key) {
    std::set<std::string> seen;
    std::vector<Hyp> unique;
    for (auto& h : out) {
      if (seen.insert(key(h.tokens)).second) unique.push_back(std::move(h));
    }
    out = std::move(unique);
  }
  if (out.size() > static_cast<std::size_t>(opt.width)) out.resize(static_cast<std::size_t>(opt.width));
  return out;
}

template <typename State>
struct GreedyResult {
  std::vector<int> tokens;  // includes the stop token when one was produced
  State state{};            // state after the last step
  bool truncated = false;   // max_len reached without a stop token
};

/// Arg-max decoding (lowest id on ties) until a token in `stops` or max_len.
template <typename State, typename StepFn>
GreedyResult<State> greedy_decode(const State& init, int bos, std::span<const int> stops, StepFn&& step,
                                  int max_len) {
  GreedyResult<State> r;
  r.state = init;
  int prev = bos;
  for (int t = 0; t < max_len; ++t) {
    auto out = step(r.state, prev);
    Eigen::Index best = 0;
    out.log_probs.maxCoeff(&best);
    prev = static_cast<int>(best);
    r.tokens.push_back(prev);
    r.state = std::move(out.next);
    if (std::find(stops.begin(), stops.end(), prev) != stops.end()) return r;
  }
  r.truncated = true;
  return r;
}

// ---------------------------------------------------------------------------
// Models

struct Model {
  std::unique_ptr<net::Network<double>> net;
  text::Vocab vocab;
  models::Architecture arch = models::Architecture::PS_CAT;
  int epoch = 0;
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
};

Model make_model(const net::HyperParams& hp, const text::Vocab& vocab, models::Architecture arch);

/// Throws ConsistencyError unless the model was trained on `vocab`.
void require_vocab(const Model& model, const text::Vocab& vocab);

/// Serialized form: magic, version, JSON header (architecture, epoch,
/// hyperparameters, vocabulary and its hash, parameter names and shapes,
/// meta), raw little-endian doubles, FNV-1a checksum of everything before.
std::string checkpoint_bytes(const Model& model);
/// Validates the whole buffer before building anything; ParseError on any
/// corruption.
Model parse_checkpoint(std::string_view bytes, const std::string& origin);
void save_checkpoint(const std::string& path, const Model& model);
Model load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// Inference

struct DecodeConfig {
  int beam_width = 30;
  int top_k = 11;
  int max_len = 10;   // tokens per command
  int max_cmds = 30;  // commands per state
  bool length_normalize = false;
};

/// Beam settings per task: (k=11, W=30) for ACG, (k=3, W=10) for ACGE.
DecodeConfig default_decode(text::Task task);
void validate(const DecodeConfig& cfg);

struct Prediction {
  std::vector<std::string> commands;
  bool truncated = false;
};

/// Renders extended ids (specials included) as a space-joined string.
std::string render(const text::Vocab& vocab, const net::SourceSequence& source, std::span<const int> ids);

/// Splits a PS_CAT output on <sep>, stripping the final <eos>; drops empty
/// and duplicate commands.
std::vector<std::string> split_commands(const text::Vocab& vocab, const net::SourceSequence& source,
                                        std::span<const int> ids);

/// Top-k of a width-W beam from the initial decoder state.
Prediction predict_ps_bs(Model& model, const text::DataPoint& point, int k, int width, int max_len,
                         bool length_normalize = false);
/// Session loop (HRED_PS) or one <sep>-delimited sequence (PS_CAT).
Prediction predict_multi(Model& model, const text::DataPoint& point, int max_cmds, int max_len);
/// Dispatches on the model architecture.
Prediction predict(Model& model, const text::DataPoint& point, const DecodeConfig& cfg);
std::vector<Prediction> predict_all(Model& model, const std::vector<text::DataPoint>& points, const DecodeConfig& cfg);

/// The decoder of one encoded data point as a step function for
/// beam_search and greedy_decode. Owns the inference graph.
class DecoderSession {
 public:
  DecoderSession(Model& model, const text::DataPoint& point);
  ~DecoderSession();
  DecoderSession(const DecoderSession&) = delete;
  DecoderSession& operator=(const DecoderSession&) = delete;

  using State = ad::Tensor<double>;
  State initial_state();
  StepResult<State> step(const State& h, int prev);
  // Session recurrence used by HRED_PS.
  State zero_session();
  State first_query();
  State session_step(const State& session, const State& q);
  const net::SourceSequence& source() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// ---------------------------------------------------------------------------
// Training

enum class Optimizer { Sgd, Adam };
Optimizer parse_optimizer(std::string_view name);
std::string to_string(Optimizer opt);

struct TrainConfig {
  int epochs = 10;
  double lr = 1e-3;
  Optimizer optimizer = Optimizer::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip = 5.0;
  std::uint64_t seed = 1;
  int patience = 3;  // epochs without validation improvement; 0 disables
  std::size_t valid_limit = 0;  // decode only the first n validation points; 0 = all
  DecodeConfig decode;
  std::string checkpoint_path;  // best checkpoint; empty = keep in memory only
  std::string metrics_path;     // JSON-Lines; empty = none
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
};

void validate(const TrainConfig& cfg);

/// Scales all gradients so their joint L2 norm is at most `max_norm`;
/// returns the norm before scaling.
double clip_global_norm(ad::ParameterSet<double>& params, double max_norm);

/// Adam or SGD; parameters whose gradient was never touched are skipped and
/// keep their own step counts.
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, ad::ParameterSet<double>& params);
  /// Clips, updates and zeroes gradients; returns the pre-clip norm.
  double step();

 private:
  struct Slot {
    ad::Matrix<double> m, v;
    long t = 0;
  };
  TrainConfig cfg_;
  ad::ParameterSet<double>& params_;
  std::vector<Slot> slots_;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;       // mean per instance
  double train_token_loss = 0.0;  // mean per target token
  std::size_t instances = 0;
  double valid_precision = 0.0;
  double valid_recall = 0.0;
  double valid_f1 = 0.0;
  double best_f1 = 0.0;
  bool improved = false;
  double seconds = 0.0;
};

nlohmann::ordered_json to_json(const EpochMetrics& m);

struct TrainResult {
  std::vector<EpochMetrics> history;
  int best_epoch = 0;
  double best_f1 = 0.0;
  bool stopped_early = false;
};

/// Trains `model` from epoch model.epoch + 1 to cfg.epochs. On return the
/// model holds the best parameters by validation F1 (the last epoch's when
/// there is no validation data).
TrainResult train(Model& model, const std::vector<text::DataPoint>& train_points,
                  const std::vector<text::DataPoint>& valid_points, const TrainConfig& cfg,
                  const std::function<void(const EpochMetrics&)>& on_epoch = {});

/// Mean instance loss with dropout off.
double mean_loss(Model& model, const std::vector<text::DataPoint>& points);

}  // namespace acg::runtime
