// Command-line driver: corpus generation, two-stage training, evaluation,
// and the data-integration experiment.

#include <filesystem>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>

#include "qacts/qacts.hpp"

namespace {

struct ConfigBundle {
  qacts::EncoderConfig encoder;
  qacts::ModelConfig model;
  qacts::TrainConfig train;
};

ConfigBundle load_config_bundle(const std::string& path) {
  ConfigBundle b;
  if (path.empty()) return b;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(qacts::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw qacts::ValidationError("config " + path + ": " + e.what());
  }
  if (j.contains("encoder")) b.encoder = qacts::encoder_config_from_json(j.at("encoder"));
  if (j.contains("model")) b.model = qacts::model_config_from_json(j.at("model"));
  if (j.contains("train")) b.train = qacts::train_config_from_json(j.at("train"));
  return b;
}

std::shared_ptr<qacts::EntityTagger> make_tagger(const std::string& lexicon_path,
                                                 const std::string& patterns_path) {
  auto lexicon = lexicon_path.empty() ? qacts::reference_lexicon()
                                      : qacts::parse_lexicon(qacts::read_file(lexicon_path));
  auto patterns = patterns_path.empty() ? qacts::reference_patterns()
                                        : qacts::parse_patterns(qacts::read_file(patterns_path));
  return std::make_shared<qacts::DictRegexTagger>(std::move(lexicon), std::move(patterns));
}

int run(int argc, char** argv) {
  CLI::App app{"Extractive QA over clinical-style text with an entity feature channel"};
  app.require_subcommand(1);

  // generate-data --------------------------------------------------------
  auto* gen_cmd = app.add_subcommand("generate-data", "Generate a synthetic dataset (JSONL)");
  size_t gen_n = 1000;
  uint64_t gen_seed = 1;
  std::string gen_out, lexicon_out, patterns_out;
  gen_cmd->add_option("--n", gen_n, "Number of instances")->required();
  gen_cmd->add_option("--seed", gen_seed, "Generator seed")->required();
  gen_cmd->add_option("--out", gen_out, "Output JSONL path")->required();
  gen_cmd->add_option("--lexicon-out", lexicon_out, "Also write the entity lexicon (TSV)");
  gen_cmd->add_option("--patterns-out", patterns_out, "Also write the entity patterns (JSON)");

  // train ----------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "Train stage 1 or stage 2");
  int stage = 1;
  std::string train_data, eval_data, config_path, ckpt_in, ckpt_out, log_path;
  std::string lexicon_path, patterns_path;
  uint64_t train_seed = 0;
  double stage2_lr = 0.0;
  size_t freeze_epochs = 0;
  train_cmd->add_option("--stage", stage, "Training stage")->required()->check(CLI::Range(1, 2));
  train_cmd->add_option("--data", train_data, "Training dataset (JSONL)")->required();
  train_cmd->add_option("--eval-data", eval_data,
                        "Held-out dataset for early stopping on EM");
  train_cmd->add_option("--config", config_path, "JSON config: {encoder, model, train}");
  train_cmd->add_option("--ckpt-in", ckpt_in, "Stage-1 checkpoint (required for stage 2)");
  train_cmd->add_option("--ckpt-out", ckpt_out, "Output checkpoint path")->required();
  train_cmd->add_option("--log", log_path, "Training log path (JSONL)");
  train_cmd->add_option("--seed", train_seed, "Overrides the config seed");
  train_cmd->add_option("--stage2-lr", stage2_lr, "Learning-rate override for stage 2");
  train_cmd->add_option("--stage2-freeze-encoder-epochs", freeze_epochs,
                        "Freeze encoder parameters for the first N stage-2 epochs");
  train_cmd->add_option("--lexicon", lexicon_path, "Entity lexicon override (TSV)");
  train_cmd->add_option("--patterns", patterns_path, "Entity patterns override (JSON)");

  // eval -----------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint: EM and macro-F1");
  std::string eval_ckpt, eval_dataset, report_path, table_path;
  std::string eval_lexicon, eval_patterns;
  bool zero_entities = false;
  eval_cmd->add_option("--ckpt", eval_ckpt, "Checkpoint path")->required();
  eval_cmd->add_option("--data", eval_dataset, "Dataset to evaluate (JSONL)")->required();
  eval_cmd->add_option("--report", report_path, "Write the JSON report here")->required();
  eval_cmd->add_option("--table", table_path, "Also write the plain-text table here");
  eval_cmd->add_flag("--zero-entities", zero_entities,
                     "Feed an all-zero entity channel (ablation)");
  eval_cmd->add_option("--lexicon", eval_lexicon, "Entity lexicon override (TSV)");
  eval_cmd->add_option("--patterns", eval_patterns, "Entity patterns override (JSON)");

  // experiment -----------------------------------------------------------
  auto* exp_cmd = app.add_subcommand("experiment", "Run a data-integration experiment plan");
  std::string plan_path, out_dir, default_plan_out, dp_train, dp_test;
  uint64_t dp_seed = 1;
  exp_cmd->add_option("--plan", plan_path, "Experiment plan (JSON)");
  exp_cmd->add_option("--out", out_dir, "Output directory for results.json and tables.txt");
  exp_cmd->add_option("--write-default-plan", default_plan_out,
                      "Write the canonical two-table plan here and exit");
  exp_cmd->add_option("--train-data", dp_train, "Train path for the default plan");
  exp_cmd->add_option("--test-data", dp_test, "Test path for the default plan");
  exp_cmd->add_option("--seed", dp_seed, "Seed for the default plan");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  if (gen_cmd->parsed()) {
    qacts::Dataset ds = qacts::generate(gen_n, gen_seed);
    qacts::save_dataset(ds, gen_out);
    std::cout << "wrote " << ds.size() << " instances to " << gen_out << "\n";
    if (!lexicon_out.empty()) {
      qacts::write_file(lexicon_out, qacts::serialize_lexicon(qacts::reference_lexicon()));
      std::cout << "wrote lexicon to " << lexicon_out << "\n";
    }
    if (!patterns_out.empty()) {
      qacts::write_file(patterns_out, qacts::serialize_patterns(qacts::reference_patterns()));
      std::cout << "wrote patterns to " << patterns_out << "\n";
    }
    return 0;
  }

  if (train_cmd->parsed()) {
    ConfigBundle cfg = load_config_bundle(config_path);
    if (train_cmd->count("--seed")) cfg.train.seed = train_seed;
    if (stage2_lr > 0.0) cfg.train.stage2_lr = stage2_lr;
    if (freeze_epochs > 0) cfg.train.stage2_freeze_encoder_epochs = freeze_epochs;
    cfg.train.verbose = true;
    qacts::Dataset train = qacts::load_dataset(train_data, "train");
    qacts::Dataset dev;
    const qacts::Dataset* dev_ptr = nullptr;
    if (!eval_data.empty()) {
      dev = qacts::load_dataset(eval_data, "dev");
      dev_ptr = &dev;
    }
    qacts::Checkpoint ck;
    if (stage == 1) {
      if (!ckpt_in.empty()) {
        throw qacts::ValidationError("--ckpt-in is only used by stage 2");
      }
      ck = qacts::train_stage1(train, dev_ptr, cfg.encoder, cfg.model, cfg.train,
                               qacts::TagScheme::reference(), log_path);
    } else {
      if (ckpt_in.empty()) {
        throw qacts::ValidationError("stage 2 requires --ckpt-in (the stage-1 checkpoint)");
      }
      qacts::Checkpoint prev = qacts::Checkpoint::load(ckpt_in);
      auto tagger = make_tagger(lexicon_path, patterns_path);
      if (prev.stage == 2) {
        ck = qacts::train_stage2_continue(train, dev_ptr, prev, cfg.train, tagger, log_path);
      } else {
        ck = qacts::train_stage2(train, dev_ptr, prev, cfg.model, cfg.train, tagger, log_path);
      }
    }
    ck.save(ckpt_out);
    std::cout << "saved stage-" << ck.stage << " checkpoint to " << ckpt_out << "\n";
    return 0;
  }

  if (eval_cmd->parsed()) {
    qacts::Checkpoint ck = qacts::Checkpoint::load(eval_ckpt);
    qacts::Pipeline pipe =
        qacts::pipeline_from_checkpoint(ck, make_tagger(eval_lexicon, eval_patterns));
    pipe.zero_entity_channel = zero_entities;
    qacts::Dataset data = qacts::load_dataset(eval_dataset, "test");
    qacts::EvalResult r = qacts::evaluate(pipe.predictor(), data);
    qacts::write_file(report_path, qacts::eval_to_json(r).dump(2) + "\n");
    std::string table = qacts::render_eval_table(r);
    if (!table_path.empty()) qacts::write_file(table_path, table);
    std::cout << table;
    return 0;
  }

  if (exp_cmd->parsed()) {
    if (!default_plan_out.empty()) {
      if (dp_train.empty() || dp_test.empty()) {
        throw qacts::ValidationError(
            "--write-default-plan requires --train-data and --test-data");
      }
      qacts::write_file(default_plan_out,
                        qacts::default_plan_json(dp_train, dp_test, dp_seed).dump(2) + "\n");
      std::cout << "wrote default plan to " << default_plan_out << "\n";
      return 0;
    }
    if (plan_path.empty() || out_dir.empty()) {
      throw qacts::ValidationError("experiment requires --plan and --out");
    }
    nlohmann::json plan_json;
    try {
      plan_json = nlohmann::json::parse(qacts::read_file(plan_path));
    } catch (const nlohmann::json::exception& e) {
      throw qacts::ValidationError("plan " + plan_path + ": " + e.what());
    }
    qacts::ExperimentPlan plan = qacts::plan_from_json(plan_json);
    qacts::ExperimentResult result = qacts::run_experiment(plan);
    std::filesystem::create_directories(out_dir);
    qacts::write_file(out_dir + "/results.json",
                      qacts::experiment_to_json(result).dump(2) + "\n");
    std::string tables = qacts::render_experiment_tables(result);
    qacts::write_file(out_dir + "/tables.txt", tables);
    std::cout << tables;
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const qacts::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "fatal: " << e.what() << "\n";
    return 2;
  }
}
