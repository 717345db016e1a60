#pragma once

#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "qacts/checkpoint.hpp"
#include "qacts/corpus.hpp"
#include "qacts/model.hpp"

namespace qacts {

inline nlohmann::ordered_json encoder_config_to_json(const EncoderConfig& c) {
  nlohmann::ordered_json j;
  j["num_layers"] = c.num_layers;
  j["hidden_dim"] = c.hidden_dim;
  j["num_heads"] = c.num_heads;
  j["ffn_dim"] = c.ffn_dim;
  j["max_len"] = c.max_len;
  j["dropout_rate"] = c.dropout_rate;
  j["vocab_size"] = c.vocab_size;
  j["layer_norm_eps"] = c.layer_norm_eps;
  return j;
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.num_layers = j.value("num_layers", c.num_layers);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.num_heads = j.value("num_heads", c.num_heads);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  c.max_len = j.value("max_len", c.max_len);
  c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.layer_norm_eps = j.value("layer_norm_eps", c.layer_norm_eps);
  return c;
}

inline nlohmann::ordered_json model_config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["entity_channel"] = c.entity_channel;
  j["entity_proj_dim"] = c.entity_proj_dim;
  j["raw_onehot"] = c.raw_onehot;
  j["head_hidden"] = c.head_hidden;
  j["max_span_len"] = c.max_span_len;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.entity_channel = j.value("entity_channel", c.entity_channel);
  c.entity_proj_dim = j.value("entity_proj_dim", c.entity_proj_dim);
  c.raw_onehot = j.value("raw_onehot", c.raw_onehot);
  c.head_hidden = j.value("head_hidden", c.head_hidden);
  c.max_span_len = j.value("max_span_len", c.max_span_len);
  return c;
}

// Everything needed to rebuild the model from a checkpoint alone.
inline nlohmann::ordered_json pipeline_config_json(const EncoderConfig& ecfg,
                                                   const ModelConfig& mcfg,
                                                   const Vocabulary& vocab,
                                                   const TagScheme& scheme) {
  nlohmann::ordered_json j;
  j["encoder"] = encoder_config_to_json(ecfg);
  j["model"] = model_config_to_json(mcfg);
  std::vector<uint32_t> chars;
  chars.reserve(vocab.chars().size());
  for (char32_t c : vocab.chars()) chars.push_back(static_cast<uint32_t>(c));
  j["vocab_chars"] = chars;
  j["entity_types"] = scheme.entity_types;
  return j;
}

// End-to-end predictor: tokenize, tag, encode, decode. Parameters are
// shared with the owning model, so this is a cheap read-only view.
struct Pipeline {
  SpanModel model;
  Vocabulary vocab;
  TagScheme scheme;
  std::shared_ptr<EntityTagger> tagger;
  bool zero_entity_channel = false;  // ablation: feed all-zero rows as I_n

  SpanPrediction predict(const Instance& inst) const {
    std::u32string query = utf8_decode(inst.query);
    std::u32string para = utf8_decode(inst.paragraph);
    TokenizedInput layout = build_input(query, para, vocab, model.ecfg.max_len);
    TensorPtr entity_onehot;
    if (model.mcfg.entity_channel) {
      if (zero_entity_channel) {
        entity_onehot = tensor({layout.size(), scheme.one_hot_dim()}, 0.0, false);
      } else {
        if (!tagger) throw ValidationError("pipeline: entity channel enabled but no tagger set");
        entity_onehot = merge_channels(tag_to_bieos(query, *tagger, scheme),
                                       tag_to_bieos(para, *tagger, scheme), layout, scheme);
      }
    }
    Tape tape(false);
    SpanScores scores = model.forward(tape, layout, entity_onehot, false, nullptr);
    return decode_span(scores, layout, para, model.mcfg.max_span_len);
  }

  std::optional<std::string> predict_answer(const Instance& inst) const {
    try {
      return predict(inst).answer_text;
    } catch (const ValidationError&) {
      return std::nullopt;
    }
  }

  std::function<std::optional<std::string>(const Instance&)> predictor() const {
    return [this](const Instance& inst) { return predict_answer(inst); };
  }
};

inline Checkpoint checkpoint_from_model(const SpanModel& model, const Vocabulary& vocab,
                                        const TagScheme& scheme, int stage,
                                        std::vector<uint64_t> rng_state) {
  Checkpoint ck = Checkpoint::from_params(model.params());
  ck.stage = stage;
  ck.config = pipeline_config_json(model.ecfg, model.mcfg, vocab, scheme);
  ck.rng_state = std::move(rng_state);
  return ck;
}

inline Pipeline pipeline_from_checkpoint(const Checkpoint& ck,
                                         std::shared_ptr<EntityTagger> tagger) {
  Pipeline p;
  try {
    p.model.ecfg = encoder_config_from_json(ck.config.at("encoder"));
    p.model.mcfg = model_config_from_json(ck.config.at("model"));
    std::vector<char32_t> chars;
    for (uint32_t c : ck.config.at("vocab_chars").get<std::vector<uint32_t>>()) {
      chars.push_back(static_cast<char32_t>(c));
    }
    p.vocab = Vocabulary::from_chars(std::move(chars));
    p.scheme.entity_types = ck.config.at("entity_types").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("checkpoint config is incomplete: ") + e.what());
  }
  p.model.init(0, p.scheme.one_hot_dim());
  ParamList params = p.model.params();
  if (ck.tensors.size() != params.size()) {
    std::string msg = "checkpoint/model parameter sets differ:";
    for (const auto& e : params) {
      if (!ck.find(e.name)) msg += "\n  " + e.name + " (missing in checkpoint)";
    }
    for (const auto& e : ck.tensors) {
      if (!find_param(params, e.name)) msg += "\n  " + e.name + " (unexpected in checkpoint)";
    }
    throw ValidationError(msg);
  }
  ck.assign_to(params);
  p.tagger = std::move(tagger);
  return p;
}

}  // namespace qacts
