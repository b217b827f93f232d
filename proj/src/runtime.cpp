#include "acg/runtime.hpp"

#include <chrono>
#include <fstream>

#include "acg/errors.hpp"
#include "acg/eval.hpp"
#include "acg/rng.hpp"

namespace acg::runtime {

using models::Architecture;
using text::Vocab;

Model make_model(const net::HyperParams& hp, const Vocab& vocab, Architecture arch) {
  net::validate(hp);
  Model m;
  m.net = std::make_unique<net::Network<double>>(hp, vocab.size());
  m.vocab = vocab;
  m.arch = arch;
  return m;
}

void require_vocab(const Model& model, const Vocab& vocab) {
  if (model.vocab.hash() != vocab.hash()) {
    throw ConsistencyError("vocabulary mismatch: model " + text::hex64(model.vocab.hash()) + ", data " +
                           text::hex64(vocab.hash()));
  }
}

// ---------------------------------------------------------------------------
// Inference

DecodeConfig default_decode(text::Task task) {
  DecodeConfig cfg;
  if (task == text::Task::ACGE) {
    cfg.top_k = 3;
    cfg.beam_width = 10;
  }
  return cfg;
}

void validate(const DecodeConfig& cfg) {
  if (cfg.beam_width < 1) throw ConfigError("beam width must be >= 1");
  if (cfg.top_k < 1 || cfg.top_k > cfg.beam_width) throw ConfigError("top-k must lie in [1, beam width]");
  if (cfg.max_len < 1) throw ConfigError("max decode length must be >= 1");
  if (cfg.max_cmds < 1) throw ConfigError("max commands must be >= 1");
}

std::string render(const Vocab& vocab, const net::SourceSequence& source, std::span<const int> ids) {
  std::string out;
  for (int id : ids) {
    if (!out.empty()) out.push_back(' ');
    out += source.word(vocab, id);
  }
  return out;
}

namespace {

void add_unique(std::vector<std::string>& commands, std::string c) {
  if (c.empty()) return;
  if (std::find(commands.begin(), commands.end(), c) == commands.end()) commands.push_back(std::move(c));
}

std::span<const int> strip_stop(std::span<const int> ids, int stop) {
  if (!ids.empty() && ids.back() == stop) return ids.first(ids.size() - 1);
  return ids;
}

}  // namespace

std::vector<std::string> split_commands(const Vocab& vocab, const net::SourceSequence& source,
                                        std::span<const int> ids) {
  ids = strip_stop(ids, Vocab::kEos);
  std::vector<std::string> out;
  std::size_t begin = 0;
  for (std::size_t i = 0; i <= ids.size(); ++i) {
    if (i == ids.size() || ids[i] == Vocab::kSep) {
      add_unique(out, render(vocab, source, ids.subspan(begin, i - begin)));
      begin = i + 1;
    }
  }
  return out;
}

struct DecoderSession::Impl {
  Impl(Model& model, const text::DataPoint& point) : f(*model.net, g) {
    g.set_grad_enabled(false);
    inst.arch = model.arch;
    inst.source = net::make_source(model.vocab, point.context);
    if (point.task == text::Task::ACGE) {
      if (point.entities.size() != 1) throw ConsistencyError(point.state_id + ": ACGE point needs exactly one entity");
      inst.entity = std::make_pair(point.entities[0].start, point.entities[0].end);
    }
    enc = models::encode(f, inst);
  }

  ad::Graph<double> g;
  net::Forward<double> f;
  models::TrainingInstance inst;
  models::Encoded<double> enc;
};

DecoderSession::DecoderSession(Model& model, const text::DataPoint& point)
    : impl_(std::make_unique<Impl>(model, point)) {}
DecoderSession::~DecoderSession() = default;

DecoderSession::State DecoderSession::initial_state() { return impl_->f.initial_state(impl_->enc.context); }

StepResult<DecoderSession::State> DecoderSession::step(const State& h, int prev) {
  auto out = impl_->f.decoder_step(impl_->enc.context, impl_->enc.entity, prev, h);
  StepResult<State> r;
  r.log_probs = out.p.value().col(0).array().max(1e-300).log().matrix();
  r.next = out.hidden;
  return r;
}

const net::SourceSequence& DecoderSession::source() const { return impl_->inst.source; }

DecoderSession::State DecoderSession::zero_session() { return impl_->f.zeros(impl_->f.net().hyper().d_hid); }
DecoderSession::State DecoderSession::first_query() { return impl_->f.first_query(impl_->enc.context); }
DecoderSession::State DecoderSession::session_step(const State& session, const State& q) {
  return impl_->f.session_step(session, q);
}

Prediction predict_ps_bs(Model& model, const text::DataPoint& point, int k, int width, int max_len,
                         bool length_normalize) {
  if (k < 1 || k > width) throw ContractError("predict_ps_bs: need 1 <= k <= W");
  DecoderSession s(model, point);
  const auto step = [&](const DecoderSession::State& h, int prev) { return s.step(h, prev); };
  const auto key = [&](const std::vector<int>& ids) {
    return render(model.vocab, s.source(), strip_stop(ids, Vocab::kEos));
  };
  const auto beams =
      beam_search(s.initial_state(), Vocab::kBos, Vocab::kEos, step, BeamOptions{width, max_len, length_normalize}, key);
  Prediction p;
  for (std::size_t i = 0; i < beams.size() && i < static_cast<std::size_t>(k); ++i) {
    add_unique(p.commands, key(beams[i].tokens));
    p.truncated |= !beams[i].finished;
  }
  return p;
}

Prediction predict_multi(Model& model, const text::DataPoint& point, int max_cmds, int max_len) {
  if (model.arch == Architecture::PS_BS) throw ContractError("predict_multi needs an HRED_PS or PS_CAT model");
  DecoderSession s(model, point);
  const auto step = [&](const DecoderSession::State& h, int prev) { return s.step(h, prev); };
  Prediction p;
  if (model.arch == Architecture::PS_CAT) {
    const int eos[] = {Vocab::kEos};
    const auto r = greedy_decode(s.initial_state(), Vocab::kBos, eos, step, max_len * max_cmds);
    p.commands = split_commands(model.vocab, s.source(), r.tokens);
    p.truncated = r.truncated;
    if (p.commands.size() > static_cast<std::size_t>(max_cmds)) {
      p.commands.resize(static_cast<std::size_t>(max_cmds));
      p.truncated = true;
    }
    return p;
  }
  const int stops[] = {Vocab::kEos, Vocab::kEndOfSet};
  auto session = s.zero_session();
  auto q = s.first_query();
  for (int m = 0;; ++m) {
    if (m == max_cmds) {
      p.truncated = true;
      break;
    }
    session = s.session_step(session, q);
    const auto r = greedy_decode(session, Vocab::kBos, stops, step, max_len);
    p.truncated |= r.truncated;
    if (r.tokens.front() == Vocab::kEndOfSet) break;
    const bool last = r.tokens.back() == Vocab::kEndOfSet;
    add_unique(p.commands, render(model.vocab, s.source(), strip_stop(strip_stop(r.tokens, Vocab::kEos), Vocab::kEndOfSet)));
    if (last) break;
    q = r.state;
  }
  return p;
}

Prediction predict(Model& model, const text::DataPoint& point, const DecodeConfig& cfg) {
  validate(cfg);
  if (model.arch == Architecture::PS_BS) {
    return predict_ps_bs(model, point, cfg.top_k, cfg.beam_width, cfg.max_len, cfg.length_normalize);
  }
  return predict_multi(model, point, cfg.max_cmds, cfg.max_len);
}

std::vector<Prediction> predict_all(Model& model, const std::vector<text::DataPoint>& points, const DecodeConfig& cfg) {
  std::vector<Prediction> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(predict(model, p, cfg));
  return out;
}

// ---------------------------------------------------------------------------
// Training

Optimizer parse_optimizer(std::string_view name) {
  if (name == "adam") return Optimizer::Adam;
  if (name == "sgd") return Optimizer::Sgd;
  throw ConfigError("unknown optimizer: " + std::string(name));
}

std::string to_string(Optimizer opt) { return opt == Optimizer::Adam ? "adam" : "sgd"; }

void validate(const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw ConfigError("epochs must be positive");
  if (!(cfg.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(cfg.clip > 0.0)) throw ConfigError("gradient clip norm must be positive");
  if (cfg.patience < 0) throw ConfigError("patience must be >= 0");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0 && cfg.eps > 0.0)) {
    throw ConfigError("invalid Adam constants");
  }
  validate(cfg.decode);
}

double clip_global_norm(ad::ParameterSet<double>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (p.touched) sq += p.grad.squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& p : params) {
      if (p.touched) p.grad *= scale;
    }
  }
  return norm;
}

Trainer::Trainer(const TrainConfig& cfg, ad::ParameterSet<double>& params) : cfg_(cfg), params_(params) {
  validate(cfg_);
  for (const auto& p : params_) {
    Slot s;
    if (cfg_.optimizer == Optimizer::Adam) {
      s.m.setZero(p.value.rows(), p.value.cols());
      s.v.setZero(p.value.rows(), p.value.cols());
    }
    slots_.push_back(std::move(s));
  }
}

double Trainer::step() {
  const double norm = clip_global_norm(params_, cfg_.clip);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  std::size_t i = 0;
  for (auto& p : params_) {
    Slot& s = slots_[i++];
    if (!p.touched) continue;
    if (cfg_.optimizer == Optimizer::Sgd) {
      p.value.noalias() -= cfg_.lr * p.grad;
    } else {
      ++s.t;
      s.m = cfg_.beta1 * s.m + (1.0 - cfg_.beta1) * p.grad;
      s.v = cfg_.beta2 * s.v + (1.0 - cfg_.beta2) * p.grad.cwiseAbs2();
      const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t));
      const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t));
      p.value.array() -= cfg_.lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + cfg_.eps);
    }
    p.zero_grad();
  }
  return norm;
}

nlohmann::ordered_json to_json(const EpochMetrics& m) {
  nlohmann::ordered_json j;
  j["epoch"] = m.epoch;
  j["train_loss"] = m.train_loss;
  j["train_token_loss"] = m.train_token_loss;
  j["instances"] = m.instances;
  j["valid_precision"] = m.valid_precision;
  j["valid_recall"] = m.valid_recall;
  j["valid_f1"] = m.valid_f1;
  j["best_f1"] = m.best_f1;
  j["improved"] = m.improved;
  j["wall_seconds"] = m.seconds;
  return j;
}

namespace {

std::vector<models::TrainingInstance> make_instances(const std::vector<text::DataPoint>& points, const Model& model,
                                                     std::vector<std::string>* ids) {
  std::vector<models::TrainingInstance> out;
  for (const auto& p : points) {
    auto inst = models::make_instance(p, model.vocab, model.arch);
    if (inst.targets.empty()) continue;
    out.push_back(std::move(inst));
    if (ids != nullptr) ids->push_back(p.key());
  }
  return out;
}

std::vector<ad::Matrix<double>> snapshot(const net::Network<double>& net) {
  std::vector<ad::Matrix<double>> out;
  for (const auto& p : net.params()) out.push_back(p.value);
  return out;
}

void restore(net::Network<double>& net, const std::vector<ad::Matrix<double>>& values) {
  std::size_t i = 0;
  for (auto& p : net.params()) p.value = values[i++];
}

}  // namespace

double mean_loss(Model& model, const std::vector<text::DataPoint>& points) {
  const auto instances = make_instances(points, model, nullptr);
  if (instances.empty()) return 0.0;
  double total = 0.0;
  for (const auto& inst : instances) {
    ad::Graph<double> g;
    g.set_grad_enabled(false);
    net::Forward<double> f(*model.net, g);
    total += models::instance_loss(f, inst)->item();
  }
  return total / static_cast<double>(instances.size());
}

TrainResult train(Model& model, const std::vector<text::DataPoint>& train_points,
                  const std::vector<text::DataPoint>& valid_points, const TrainConfig& cfg,
                  const std::function<void(const EpochMetrics&)>& on_epoch) {
  validate(cfg);
  std::vector<std::string> ids;
  const auto instances = make_instances(train_points, model, &ids);
  if (instances.empty()) throw ConfigError("training set has no trainable instances");
  std::vector<text::DataPoint> valid = valid_points;
  if (cfg.valid_limit > 0 && valid.size() > cfg.valid_limit) valid.resize(cfg.valid_limit);
  std::vector<std::vector<std::string>> valid_gold;
  for (const auto& p : valid) valid_gold.push_back(p.commands);

  std::ofstream metrics;
  if (!cfg.metrics_path.empty()) {
    const bool resume = model.epoch > 0;
    metrics.open(cfg.metrics_path, resume ? std::ios::app : std::ios::trunc);
    if (!metrics) throw IoError("cannot write metrics log " + cfg.metrics_path);
    if (!resume) metrics << nlohmann::ordered_json{{"_meta", cfg.meta}}.dump() << '\n';
  }

  Trainer opt(cfg, model.net->params());
  model.net->params().zero_grad();
  TrainResult result;
  result.best_f1 = model.meta.contains("valid_f1") ? model.meta["valid_f1"].get<double>() : -1.0;
  result.best_epoch = model.epoch;
  auto best = snapshot(*model.net);
  int since_best = 0;
  for (int epoch = model.epoch + 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(instances.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffler(cfg.seed, 0x7368756600000000ull + static_cast<std::uint64_t>(epoch));
    shuffler.shuffle(std::span<std::size_t>(order));
    Rng dropout(cfg.seed, 0x64726f7000000000ull + static_cast<std::uint64_t>(epoch));

    EpochMetrics m;
    m.epoch = epoch;
    std::size_t tokens = 0;
    std::size_t step = 0;
    for (std::size_t idx : order) {
      ++step;
      const auto where = [&] {
        return " at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) + " on instance " + ids[idx];
      };
      double value = 0.0;
      try {
        ad::Graph<double> g;
        net::Forward<double> f(*model.net, g, true, &dropout);
        const auto loss = *models::instance_loss(f, instances[idx]);
        value = loss.item();
        if (!std::isfinite(value)) throw NumericError("non-finite loss");
        g.backward(loss);
        opt.step();
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + where());
      }
      m.train_loss += value;
      tokens += models::target_tokens(instances[idx]);
    }
    m.instances = instances.size();
    m.train_token_loss = tokens > 0 ? m.train_loss / static_cast<double>(tokens) : 0.0;
    m.train_loss /= static_cast<double>(instances.size());
    model.epoch = epoch;

    if (!valid.empty()) {
      std::vector<std::vector<std::string>> preds;
      for (auto& p : predict_all(model, valid, cfg.decode)) preds.push_back(std::move(p.commands));
      const auto report = eval::evaluate(preds, valid_gold, {});
      m.valid_precision = report.precision;
      m.valid_recall = report.recall;
      m.valid_f1 = report.f1;
      m.improved = report.f1 > result.best_f1;
    } else {
      m.improved = true;
    }
    if (m.improved) {
      result.best_f1 = m.valid_f1;
      result.best_epoch = epoch;
      best = snapshot(*model.net);
      since_best = 0;
      model.meta = cfg.meta;
      model.meta["valid_f1"] = m.valid_f1;
      if (!cfg.checkpoint_path.empty()) save_checkpoint(cfg.checkpoint_path, model);
    } else {
      ++since_best;
    }
    m.best_f1 = std::max(result.best_f1, 0.0);
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back(m);
    if (metrics.is_open()) metrics << to_json(m).dump() << '\n' << std::flush;
    if (on_epoch) on_epoch(m);
    if (cfg.patience > 0 && since_best >= cfg.patience) {
      result.stopped_early = epoch < cfg.epochs;
      break;
    }
  }
  restore(*model.net, best);
  model.epoch = result.best_epoch;
  result.best_f1 = std::max(result.best_f1, 0.0);
  return result;
}

}  // namespace acg::runtime
