#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "qacts/adam.hpp"
#include "qacts/metrics.hpp"
#include "qacts/pipeline.hpp"

namespace qacts {

struct TrainConfig {
  double learning_rate = 5e-5;  // reference fine-tuning rate
  size_t batch_size = 4;        // reference setting uses 3 or 4
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  size_t max_epochs = 30;
  uint64_t seed = 1;
  bool shuffle = true;
  size_t patience = 3;  // epochs without held-out EM improvement
  double stage2_lr = 0.0;  // 0 inherits learning_rate
  size_t stage2_freeze_encoder_epochs = 0;
  bool verbose = false;

  void validate() const {
    if (learning_rate <= 0.0) throw ValidationError("train config: learning_rate must be > 0");
    if (batch_size < 1) throw ValidationError("train config: batch_size must be >= 1");
    if (max_epochs < 1) throw ValidationError("train config: max_epochs must be >= 1");
  }
};

inline nlohmann::ordered_json train_config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["adam_eps"] = c.adam_eps;
  j["max_epochs"] = c.max_epochs;
  j["seed"] = c.seed;
  j["shuffle"] = c.shuffle;
  j["patience"] = c.patience;
  j["stage2_lr"] = c.stage2_lr;
  j["stage2_freeze_encoder_epochs"] = c.stage2_freeze_encoder_epochs;
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.seed = j.value("seed", c.seed);
  c.shuffle = j.value("shuffle", c.shuffle);
  c.patience = j.value("patience", c.patience);
  c.stage2_lr = j.value("stage2_lr", c.stage2_lr);
  c.stage2_freeze_encoder_epochs = j.value("stage2_freeze_encoder_epochs", c.stage2_freeze_encoder_epochs);
  return c;
}

// Line-delimited JSON training log.
class TrainLogger {
 public:
  explicit TrainLogger(const std::string& path) {
    if (!path.empty()) {
      out_.open(path, std::ios::trunc);
      if (!out_) throw IoError("cannot open training log " + path);
    }
  }

  void record(int stage, size_t epoch, size_t step, double loss, double lr) {
    if (!out_.is_open()) return;
    nlohmann::ordered_json j;
    j["stage"] = stage;
    j["epoch"] = epoch;
    j["step"] = step;
    j["loss"] = loss;
    j["lr"] = lr;
    j["timestamp"] = utc_timestamp();
    out_ << j.dump() << '\n';
  }

 private:
  std::ofstream out_;
};

inline uint64_t params_hash(const ParamList& params, const std::string& prefix = "") {
  uint64_t h = 1469598103934665603ULL;
  for (const auto& p : params) {
    if (!prefix.empty() && p.name.rfind(prefix, 0) != 0) continue;
    h = fnv1a64(p.name.data(), p.name.size(), h);
    h = fnv1a64(p.tensor->data.data(), p.tensor->data.size() * sizeof(double), h);
  }
  return h;
}

namespace detail {

struct PreparedInstance {
  const Instance* src = nullptr;
  std::u32string query, paragraph;
  TagSequence query_tags, paragraph_tags;  // populated when the channel is on
  size_t input_len = 0;
};

inline std::vector<PreparedInstance> prepare_instances(const Dataset& ds, bool entity_channel,
                                                       const EntityTagger* tagger,
                                                       const TagScheme& scheme, size_t max_len) {
  std::vector<PreparedInstance> out;
  out.reserve(ds.size());
  for (const auto& inst : ds.instances) {
    PreparedInstance p;
    p.src = &inst;
    p.query = utf8_decode(inst.query);
    p.paragraph = utf8_decode(inst.paragraph);
    p.input_len = p.query.size() + p.paragraph.size() + 3;
    if (p.input_len > max_len) {
      throw ValidationError("instance " + inst.id + ": input length " +
                            std::to_string(p.input_len) + " exceeds encoder max_len " +
                            std::to_string(max_len));
    }
    if (entity_channel) {
      p.query_tags = tag_to_bieos(p.query, *tagger, scheme);
      p.paragraph_tags = tag_to_bieos(p.paragraph, *tagger, scheme);
    }
    out.push_back(std::move(p));
  }
  return out;
}

// Length-bucketed batches: shuffle, stable-sort by length, chunk, then
// shuffle batch order. Padding within a batch goes to the batch max.
inline std::vector<std::vector<size_t>> make_batches(const std::vector<PreparedInstance>& data,
                                                     size_t batch_size, bool do_shuffle,
                                                     Rng& rng) {
  std::vector<size_t> order(data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (do_shuffle) shuffle(order, rng);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return data[a].input_len < data[b].input_len; });
  std::vector<std::vector<size_t>> batches;
  for (size_t i = 0; i < order.size(); i += batch_size) {
    batches.emplace_back(order.begin() + static_cast<long>(i),
                         order.begin() + static_cast<long>(std::min(i + batch_size, order.size())));
  }
  if (do_shuffle) shuffle(batches, rng);
  return batches;
}

struct LoopSettings {
  int stage = 1;
  double lr = 5e-5;
  std::set<std::string> frozen;
  size_t unfreeze_after_epoch = 0;  // frozen set cleared after this epoch
};

// Shared epoch loop for both stages. Keeps the best-on-dev parameter
// snapshot; without a dev set it runs max_epochs and returns the final
// parameters.
inline Checkpoint run_training_loop(SpanModel& model, const Vocabulary& vocab,
                                    const TagScheme& scheme,
                                    std::shared_ptr<EntityTagger> tagger, const Dataset& train,
                                    const Dataset* dev, const TrainConfig& tcfg,
                                    const LoopSettings& settings, TrainLogger* logger) {
  auto prepared = prepare_instances(train, model.mcfg.entity_channel, tagger.get(), scheme,
                                    model.ecfg.max_len);
  ParamList params = model.params();
  Adam adam(settings.lr, tcfg.beta1, tcfg.beta2, tcfg.adam_eps);
  Rng shuffle_rng(derive_seed(tcfg.seed, "shuffle"));
  Rng dropout_rng(derive_seed(tcfg.seed, "dropout"));
  std::set<std::string> frozen = settings.frozen;

  auto snapshot = [&]() {
    return checkpoint_from_model(model, vocab, scheme, settings.stage,
                                 {dropout_rng.state(), shuffle_rng.state()});
  };

  Pipeline view{model, vocab, scheme, tagger};
  Checkpoint best = snapshot();
  double best_em = -1.0;
  size_t no_improve = 0;
  size_t global_step = 0;

  for (size_t epoch = 1; epoch <= tcfg.max_epochs; ++epoch) {
    if (settings.unfreeze_after_epoch > 0 && epoch == settings.unfreeze_after_epoch + 1) {
      frozen.clear();
    }
    auto batches = make_batches(prepared, tcfg.batch_size, tcfg.shuffle, shuffle_rng);
    double epoch_loss = 0.0;
    for (const auto& batch : batches) {
      size_t pad_to = 0;
      for (size_t idx : batch) pad_to = std::max(pad_to, prepared[idx].input_len);
      Tape tape(true);
      TensorPtr total;
      for (size_t idx : batch) {
        const auto& p = prepared[idx];
        TokenizedInput layout = build_input(p.query, p.paragraph, vocab, model.ecfg.max_len,
                                            pad_to);
        TensorPtr entity_onehot;
        if (model.mcfg.entity_channel) {
          entity_onehot = merge_channels(p.query_tags, p.paragraph_tags, layout, scheme);
        }
        SpanScores scores = model.forward(tape, layout, entity_onehot, true, &dropout_rng);
        GoldSpan gold = gold_span_for(layout, p.src->answer_start_char, p.src->answer_end_char);
        TensorPtr loss = span_loss(tape, scores, gold);
        total = total ? tape.add(total, loss) : loss;
      }
      TensorPtr mean = tape.scale(total, 1.0 / static_cast<double>(batch.size()));
      double loss_value = mean->data[0];
      if (!std::isfinite(loss_value)) {
        throw DivergenceError("training diverged: non-finite loss at stage " +
                              std::to_string(settings.stage) + " epoch " +
                              std::to_string(epoch) + " step " + std::to_string(global_step));
      }
      tape.backward(mean);
      adam.step(params, frozen);
      zero_grads(params);
      ++global_step;
      epoch_loss += loss_value;
      if (logger) logger->record(settings.stage, epoch, global_step, loss_value, settings.lr);
    }
    epoch_loss /= static_cast<double>(batches.size());

    if (dev && !dev->empty()) {
      EvalResult r = evaluate(view.predictor(), *dev);
      if (tcfg.verbose) {
        std::cerr << "[stage " << settings.stage << "] epoch " << epoch << " loss " << epoch_loss
                  << " dev_em " << r.overall_em << "\n";
      }
      if (r.overall_em > best_em) {
        best_em = r.overall_em;
        best = snapshot();
        no_improve = 0;
      } else {
        ++no_improve;
        if (no_improve >= tcfg.patience) break;
      }
    } else {
      if (tcfg.verbose) {
        std::cerr << "[stage " << settings.stage << "] epoch " << epoch << " loss " << epoch_loss
                  << "\n";
      }
      best = snapshot();
    }
  }
  return best;
}

}  // namespace detail

// Stage 1: encoder plus a span head over V_s alone, no entity channel.
inline Checkpoint train_stage1(const Dataset& train, const Dataset* dev,
                               EncoderConfig ecfg, const ModelConfig& mcfg_base,
                               const TrainConfig& tcfg, const TagScheme& scheme,
                               const std::string& log_path = "") {
  tcfg.validate();
  if (train.empty()) throw ValidationError("train_stage1: empty dataset");
  std::vector<std::u32string> texts;
  texts.reserve(train.size() * 2);
  for (const auto& inst : train.instances) {
    texts.push_back(utf8_decode(inst.query));
    texts.push_back(utf8_decode(inst.paragraph));
  }
  Vocabulary vocab = Vocabulary::build(texts);
  ecfg.vocab_size = vocab.size();

  SpanModel model;
  model.ecfg = ecfg;
  model.mcfg = mcfg_base;
  model.mcfg.entity_channel = false;
  model.init(derive_seed(tcfg.seed, "stage1-init"), scheme.one_hot_dim());

  detail::LoopSettings settings;
  settings.stage = 1;
  settings.lr = tcfg.learning_rate;
  TrainLogger logger(log_path);
  return detail::run_training_loop(model, vocab, scheme, nullptr, train, dev, tcfg, settings,
                                   &logger);
}

// Stage 2: rebuild the model with the entity channel, load stage-1 encoder
// weights bit-exactly, initialize the projection and a fresh head, retrain.
inline Checkpoint train_stage2(const Dataset& train, const Dataset* dev,
                               const Checkpoint& stage1, const ModelConfig& mcfg_base,
                               const TrainConfig& tcfg, std::shared_ptr<EntityTagger> tagger,
                               const std::string& log_path = "") {
  tcfg.validate();
  if (train.empty()) throw ValidationError("train_stage2: empty dataset");
  if (!tagger) throw ValidationError("train_stage2: tagger required");

  EncoderConfig ecfg;
  Vocabulary vocab;
  TagScheme scheme;
  try {
    ecfg = encoder_config_from_json(stage1.config.at("encoder"));
    std::vector<char32_t> chars;
    for (uint32_t c : stage1.config.at("vocab_chars").get<std::vector<uint32_t>>()) {
      chars.push_back(static_cast<char32_t>(c));
    }
    vocab = Vocabulary::from_chars(std::move(chars));
    scheme.entity_types = stage1.config.at("entity_types").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("stage-1 checkpoint config is incomplete: ") + e.what());
  }

  SpanModel model;
  model.ecfg = ecfg;
  model.mcfg = mcfg_base;
  model.mcfg.entity_channel = true;
  model.init(derive_seed(tcfg.seed, "stage2-init"), scheme.one_hot_dim());

  // encoder transfer, bit-exact
  Checkpoint encoder_only;
  for (const auto& e : stage1.tensors) {
    if (e.name.rfind("encoder.", 0) == 0) encoder_only.tensors.push_back(e);
  }
  ParamList params = model.params();
  std::vector<std::string> missing;
  for (const auto& p : params) {
    if (p.name.rfind("encoder.", 0) == 0 && !encoder_only.find(p.name)) {
      missing.push_back(p.name);
    }
  }
  if (!missing.empty()) {
    std::string msg = "stage-1 checkpoint is missing encoder parameters:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw ValidationError(msg);
  }
  encoder_only.assign_to(params);

  detail::LoopSettings settings;
  settings.stage = 2;
  settings.lr = tcfg.stage2_lr > 0.0 ? tcfg.stage2_lr : tcfg.learning_rate;
  if (tcfg.stage2_freeze_encoder_epochs > 0) {
    for (const auto& p : params) {
      if (p.name.rfind("encoder.", 0) == 0) settings.frozen.insert(p.name);
    }
    settings.unfreeze_after_epoch = tcfg.stage2_freeze_encoder_epochs;
  }
  TrainLogger logger(log_path);
  return detail::run_training_loop(model, vocab, scheme, std::move(tagger), train, dev, tcfg,
                                   settings, &logger);
}

// Continue training a full stage-2 model (e.g. fine-tune a mixed-data
// checkpoint on one query type).
inline Checkpoint train_stage2_continue(const Dataset& train, const Dataset* dev,
                                        const Checkpoint& stage2, const TrainConfig& tcfg,
                                        std::shared_ptr<EntityTagger> tagger,
                                        const std::string& log_path = "") {
  tcfg.validate();
  if (train.empty()) throw ValidationError("train_stage2_continue: empty dataset");
  if (stage2.stage != 2) {
    throw ValidationError("train_stage2_continue: checkpoint is not stage 2");
  }
  Pipeline p = pipeline_from_checkpoint(stage2, tagger);
  detail::LoopSettings settings;
  settings.stage = 2;
  settings.lr = tcfg.stage2_lr > 0.0 ? tcfg.stage2_lr : tcfg.learning_rate;
  TrainLogger logger(log_path);
  return detail::run_training_loop(p.model, p.vocab, p.scheme, std::move(tagger), train, dev,
                                   tcfg, settings, &logger);
}

}  // namespace qacts
