#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "qacts/trainer.hpp"

namespace qacts {

struct PlanRow {
  std::string label;
  std::vector<QueryType> train_types;
  bool mixed_pretrain = false;  // start from the mixed-data stage-2 model
};

struct PlanTable {
  std::string title;
  std::vector<PlanRow> rows;
};

// Declarative experiment description: which subsets to train on, whether to
// start from mixed-data pretrained parameters, and the shared configs.
struct ExperimentPlan {
  uint64_t seed = 1;
  std::string train_path;
  std::string test_path;
  double dev_fraction = 0.1;
  EncoderConfig encoder;
  ModelConfig model;
  TrainConfig train;
  std::vector<PlanTable> tables;

  void validate() const {
    if (tables.empty()) throw ValidationError("experiment plan: no tables");
    for (const auto& t : tables) {
      if (t.rows.empty()) throw ValidationError("experiment plan: table with no rows");
      for (const auto& r : t.rows) {
        if (r.label.empty()) throw ValidationError("experiment plan: row without label");
        if (r.train_types.empty()) {
          throw ValidationError("experiment plan: row " + r.label + " trains on no types");
        }
      }
    }
    if (train_path.empty() || test_path.empty()) {
      throw ValidationError("experiment plan: train_path and test_path are required");
    }
  }
};

inline ExperimentPlan plan_from_json(const nlohmann::json& j) {
  ExperimentPlan p;
  p.seed = j.value("seed", p.seed);
  p.train_path = j.value("train_data", std::string());
  p.test_path = j.value("test_data", std::string());
  p.dev_fraction = j.value("dev_fraction", p.dev_fraction);
  if (j.contains("encoder")) p.encoder = encoder_config_from_json(j.at("encoder"));
  if (j.contains("model")) p.model = model_config_from_json(j.at("model"));
  if (j.contains("train")) p.train = train_config_from_json(j.at("train"));
  for (const auto& tj : j.value("tables", nlohmann::json::array())) {
    PlanTable table;
    table.title = tj.value("title", std::string());
    for (const auto& rj : tj.at("rows")) {
      PlanRow row;
      row.label = rj.at("label").get<std::string>();
      for (const auto& t : rj.at("train_types")) {
        row.train_types.push_back(query_type_from_name(t.get<std::string>()));
      }
      row.mixed_pretrain = rj.value("mixed_pretrain", false);
      table.rows.push_back(std::move(row));
    }
    p.tables.push_back(std::move(table));
  }
  p.validate();
  return p;
}

// The canonical two-table plan mirroring the data-integration analysis:
// three pure rows plus the mixed row, with and without mixed pretraining.
inline nlohmann::ordered_json default_plan_json(const std::string& train_path,
                                                const std::string& test_path, uint64_t seed) {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["train_data"] = train_path;
  j["test_data"] = test_path;
  j["dev_fraction"] = 0.1;
  j["encoder"] = encoder_config_to_json(EncoderConfig{});
  j["model"] = model_config_to_json(ModelConfig{});
  j["train"] = train_config_to_json(TrainConfig{});
  auto rows_for = [](bool pretrain) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (QueryType t : all_query_types()) {
      nlohmann::ordered_json r;
      r["label"] = "Pure " + query_type_display(t);
      r["train_types"] = {query_type_name(t)};
      r["mixed_pretrain"] = pretrain;
      rows.push_back(std::move(r));
    }
    nlohmann::ordered_json mixed;
    mixed["label"] = "Mixed Data";
    nlohmann::ordered_json all = nlohmann::ordered_json::array();
    for (QueryType t : all_query_types()) all.push_back(query_type_name(t));
    mixed["train_types"] = all;
    mixed["mixed_pretrain"] = false;
    rows.push_back(std::move(mixed));
    return rows;
  };
  nlohmann::ordered_json tables = nlohmann::ordered_json::array();
  nlohmann::ordered_json t1;
  t1["title"] = "Without mixed-data pretrained parameters";
  t1["rows"] = rows_for(false);
  tables.push_back(std::move(t1));
  nlohmann::ordered_json t2;
  t2["title"] = "Using mixed-data pretrained parameters";
  t2["rows"] = rows_for(true);
  tables.push_back(std::move(t2));
  j["tables"] = std::move(tables);
  return j;
}

struct CellResult {
  double em = 0.0;
  double f1 = 0.0;
};

struct RowResult {
  std::string label;
  bool failed = false;
  std::string failure;
  std::map<std::string, CellResult> cells;  // keyed by query type name
};

struct TableResult {
  std::string title;
  std::vector<RowResult> rows;
};

struct ExperimentResult {
  uint64_t seed = 0;
  std::vector<TableResult> tables;
};

namespace detail {

// Rows are independent: every row derives its seeds from the root seed and
// its own label, so results do not depend on row order. Identical rows
// (same label and spec) are cached and computed once.
class ExperimentRunner {
 public:
  ExperimentRunner(const ExperimentPlan& plan, const Dataset& train, const Dataset& test)
      : plan_(plan), train_(train), test_(test) {}

  RowResult run_row(const PlanRow& row) {
    std::string key = row_key(row);
    auto it = row_cache_.find(key);
    if (it != row_cache_.end()) return it->second;
    RowResult result;
    result.label = row.label;
    try {
      Checkpoint ck = train_row(row);
      Pipeline pipe = pipeline_from_checkpoint(ck, make_reference_tagger());
      EvalResult r = evaluate(pipe.predictor(), test_);
      for (QueryType t : all_query_types()) {
        auto found = r.per_type.find(query_type_name(t));
        if (found != r.per_type.end()) {
          result.cells[found->first] = {found->second.em, found->second.f1};
        }
      }
    } catch (const DivergenceError& e) {
      result.failed = true;
      result.failure = e.what();
    }
    row_cache_[key] = result;
    return result;
  }

 private:
  std::string row_key(const PlanRow& row) const {
    std::string key = row.label + "|";
    for (QueryType t : row.train_types) key += query_type_name(t) + ",";
    key += row.mixed_pretrain ? "|pretrain" : "|scratch";
    return key;
  }

  Checkpoint two_stage(const Dataset& subset, uint64_t seed) const {
    auto [tr, dev] = split_train_dev(subset, plan_.dev_fraction, seed);
    TrainConfig tc = plan_.train;
    tc.seed = seed;
    Checkpoint ck1 = train_stage1(tr, &dev, plan_.encoder, plan_.model, tc,
                                  TagScheme::reference());
    return train_stage2(tr, &dev, ck1, plan_.model, tc, make_reference_tagger());
  }

  const Checkpoint& mixed_base() {
    if (!mixed_base_) {
      Dataset all = split_by_type(
          train_, {QueryType::kTumorSize, QueryType::kProximalMargin, QueryType::kDistalMargin});
      mixed_base_ = std::make_unique<Checkpoint>(
          two_stage(all, derive_seed(plan_.seed, "mixed-pretrain")));
    }
    return *mixed_base_;
  }

  Checkpoint train_row(const PlanRow& row) {
    uint64_t row_seed = derive_seed(plan_.seed, row.label);
    Dataset subset = split_by_type(train_, row.train_types);
    if (!row.mixed_pretrain) return two_stage(subset, row_seed);
    auto [tr, dev] = split_train_dev(subset, plan_.dev_fraction, row_seed);
    TrainConfig tc = plan_.train;
    tc.seed = row_seed;
    return train_stage2_continue(tr, &dev, mixed_base(), tc, make_reference_tagger());
  }

  const ExperimentPlan& plan_;
  const Dataset& train_;
  const Dataset& test_;
  std::map<std::string, RowResult> row_cache_;
  std::unique_ptr<Checkpoint> mixed_base_;
};

}  // namespace detail

inline ExperimentResult run_experiment(const ExperimentPlan& plan) {
  plan.validate();
  Dataset train = load_dataset(plan.train_path, "train");
  Dataset test = load_dataset(plan.test_path, "test");
  if (train.empty() || test.empty()) {
    throw ValidationError("experiment: train and test datasets must be non-empty");
  }
  detail::ExperimentRunner runner(plan, train, test);
  ExperimentResult out;
  out.seed = plan.seed;
  for (const auto& table : plan.tables) {
    TableResult tr;
    tr.title = table.title;
    for (const auto& row : table.rows) tr.rows.push_back(runner.run_row(row));
    out.tables.push_back(std::move(tr));
  }
  return out;
}

inline nlohmann::ordered_json experiment_to_json(const ExperimentResult& result) {
  nlohmann::ordered_json j;
  j["seed"] = result.seed;
  nlohmann::ordered_json tables = nlohmann::ordered_json::array();
  for (const auto& t : result.tables) {
    nlohmann::ordered_json tj;
    tj["title"] = t.title;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& r : t.rows) {
      nlohmann::ordered_json rj;
      rj["label"] = r.label;
      rj["failed"] = r.failed;
      if (r.failed) rj["failure"] = r.failure;
      nlohmann::ordered_json cells;
      for (QueryType qt : all_query_types()) {
        auto it = r.cells.find(query_type_name(qt));
        if (it == r.cells.end()) continue;
        nlohmann::ordered_json c;
        c["em"] = it->second.em;
        c["f1"] = it->second.f1;
        c["em_pct"] = format_pct(it->second.em);
        c["f1_pct"] = format_pct(it->second.f1);
        cells[it->first] = std::move(c);
      }
      rj["cells"] = std::move(cells);
      rows.push_back(std::move(rj));
    }
    tj["rows"] = std::move(rows);
    tables.push_back(std::move(tj));
  }
  j["tables"] = std::move(tables);
  return j;
}

// Aligned text rendering in the 4-row x (3 types x EM/F1) layout.
inline std::string render_experiment_tables(const ExperimentResult& result) {
  std::string out;
  char line[256];
  const int label_w = 34;
  for (const auto& t : result.tables) {
    out += t.title + "\n";
    std::string header1(label_w, ' ');
    std::string header2(label_w, ' ');
    for (QueryType qt : all_query_types()) {
      std::snprintf(line, sizeof(line), "  %-25s", query_type_display(qt).c_str());
      header1 += line;
      std::snprintf(line, sizeof(line), "  %-11s %-12s", "EM-score", "F1-score");
      header2 += line;
    }
    out += header1 + "\n" + header2 + "\n";
    out += std::string(header2.size(), '-') + "\n";
    for (const auto& r : t.rows) {
      std::snprintf(line, sizeof(line), "%-*s", label_w, r.label.c_str());
      std::string row_str(line);
      if (r.failed) {
        row_str += "  (training diverged; row skipped)";
      } else {
        for (QueryType qt : all_query_types()) {
          auto it = r.cells.find(query_type_name(qt));
          if (it == r.cells.end()) {
            std::snprintf(line, sizeof(line), "  %-11s %-12s", "-", "-");
          } else {
            std::snprintf(line, sizeof(line), "  %-11s %-12s", format_pct(it->second.em).c_str(),
                          format_pct(it->second.f1).c_str());
          }
          row_str += line;
        }
      }
      out += row_str + "\n";
    }
    out += "\n";
  }
  return out;
}

}  // namespace qacts
