// gcl: generate data, pre-train, fine-tune, evaluate, analyze and compare.
//
// Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "gcl/data.hpp"
#include "gcl/experiment.hpp"
#include "gcl/metrics.hpp"
#include "gcl/training.hpp"

namespace fs = std::filesystem;
using namespace gcl;

namespace {

/// Raised for problems the user can fix by changing flags, paths or config.
struct UsageFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GenOptions {
  SyntheticSpec spec;
  std::string out = "data.csv";
};

struct LossOptions {
  std::string loss = "mse+cl";
  std::string sim = "cos";
  double alpha = 1.0;
  double epsilon = 1e-2;
  double sim_floor = 1e-6;
};

struct TrainOptions {
  int batch_size = 8;
  double lr = 0.001;
  int epochs = 100;
  double eta_min = 0.0;
};

struct DataOptions {
  std::string data = "data.csv";
  std::vector<double> split{0.543, 0.247, 0.210};
  std::string label_mode = "threshold";
  double tau = 0.05;
};

struct ModelOptions {
  std::vector<Index> encoder_widths{64, 32, 16};
  std::string activation = "relu";
  std::string pooling = "mean";
  std::vector<Index> classifier_hidden{32};
};

struct PretrainOptions {
  DataOptions data;
  LossOptions loss;
  TrainOptions train;
  ModelOptions model;
  std::string out = "pretrain.gcck";
  std::string best_out;
  std::string trace;
};

struct FinetuneOptions {
  std::string data = "data.csv";
  std::string checkpoint;
  std::string out = "finetune.gcck";
  std::string trace;
  std::string metrics = "metrics";
  TrainOptions train;
  ModelOptions model;
  bool freeze_encoder = true;
};

struct EvalOptions {
  std::string data = "data.csv";
  std::string checkpoint;
  std::string metrics = "metrics";
  std::string split = "test";
  ModelOptions model;
};

struct AnalyzeOptions {
  std::string data = "data.csv";
  std::string checkpoint;
  std::string out = "profile.tsv";
  std::string split = "test";
  std::size_t sample_size = 2000;
};

struct CompareOptions {
  DataOptions data;
  LossOptions loss;
  TrainOptions train;
  ModelOptions model;
  int finetune_epochs = 100;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::string out = "compare_report.txt";
  std::string checkpoint_dir;
  std::size_t sample_size = 2000;
};

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw UsageFailure(std::string(what) + " path is required");
  if (!fs::is_regular_file(path)) throw UsageFailure(std::string(what) + " not found: " + path);
}

void require_writable_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty() && !fs::is_directory(parent))
    throw UsageFailure("output directory does not exist: " + parent.string());
}

LossConfig to_loss(const LossOptions& o) {
  LossConfig c;
  c.mode = parse_loss_mode(o.loss);
  c.similarity = parse_similarity(o.sim);
  c.alpha = o.alpha;
  c.epsilon = o.epsilon;
  c.sim_floor = o.sim_floor;
  return c;
}

TrainConfig to_train(const TrainOptions& o, std::uint64_t seed) {
  TrainConfig c;
  c.batch_size = o.batch_size;
  c.lr = o.lr;
  c.epochs = o.epochs;
  c.eta_min = o.eta_min;
  c.seed = seed;
  return c;
}

ModelConfig to_model(const ModelOptions& o) {
  ModelConfig m;
  m.encoder_widths = o.encoder_widths;
  m.activation = parse_activation(o.activation);
  m.pooling = parse_pooling(o.pooling);
  m.classifier_hidden = o.classifier_hidden;
  return m;
}

SplitFractions to_fractions(const std::vector<double>& v) {
  if (v.size() != 3) throw ConfigError("--split takes exactly three fractions (train,val,test)");
  SplitFractions f;
  f.values = {v[0], v[1], v[2]};
  return f;
}

LabelConfig to_labels(const DataOptions& o) { return {parse_label_mode(o.label_mode), o.tau}; }

std::string hex32(std::uint32_t v) {
  std::ostringstream out;
  out << std::hex << std::setw(8) << std::setfill('0') << v;
  return out.str();
}

std::uint32_t encoder_checksum(const EncoderParams& enc) {
  Checkpoint ck;
  store_encoder(ck, enc);
  const auto bytes = serialize_checkpoint(ck);
  // The serialized form ends with its own CRC; hash only the body.
  return crc32_of(std::string_view(bytes).substr(0, bytes.size() - 4));
}

const std::vector<ScanRecord>& pick_scans(const PreparedData& d, const std::string& split) {
  if (split == "train") return d.train_scans;
  if (split == "val") return d.val_scans;
  if (split == "test") return d.test_scans;
  throw ConfigError("unknown split '" + split + "' (expected train, val or test)");
}

const std::vector<PairExample>& pick_pairs(const PreparedData& d, const std::string& split) {
  if (split == "train") return d.train_pairs;
  if (split == "val") return d.val_pairs;
  if (split == "test") return d.test_pairs;
  throw ConfigError("unknown split '" + split + "' (expected train, val or test)");
}

std::string default_trace(const std::string& checkpoint) {
  return (fs::path(checkpoint).replace_extension(".trace.jsonl")).string();
}

void print_metrics(const MetricsReport& m) {
  std::cout << "accuracy: " << m.accuracy << "\nmacro_f1: " << m.macro_f1 << "\nn_examples: " << m.n_examples << '\n';
}

int cmd_gen_data(const GenOptions& o) {
  if (o.out.empty()) throw UsageFailure("--out is required");
  require_writable_parent(o.out);
  const auto data = generate_synthetic(o.spec);
  save_dataset(data, o.out);
  std::cout << "records: " << data.scan_count() << "\npairs: " << data.pair_count() << '\n';
  return 0;
}

int cmd_pretrain(const PretrainOptions& o, std::uint64_t seed) {
  require_file(o.data.data, "dataset");
  require_writable_parent(o.out);
  TrainConfig config = to_train(o.train, seed);
  config.loss = to_loss(o.loss);
  config.validate();
  const auto model = to_model(o.model);
  const auto data = load_dataset(o.data.data);
  const auto prepared = prepare_data(data, to_fractions(o.data.split), seed, to_labels(o.data));

  auto result = pretrain(prepared.train_scans, prepared.val_scans, config, model);
  store_data_config(result.final_checkpoint, prepared.config);
  store_data_config(result.best_checkpoint, prepared.config);
  save_checkpoint(result.final_checkpoint, o.out);
  if (!o.best_out.empty()) save_checkpoint(result.best_checkpoint, o.best_out);
  write_trace(result.trace, o.trace.empty() ? default_trace(o.out) : o.trace);

  const auto& first = result.trace.front();
  const auto& last_epoch = result.trace[result.trace.size() - 2];
  std::cout << "loss_mode: " << to_string(config.loss.mode) << "\nbatch_size: " << config.batch_size
            << "\nepochs: " << config.epochs << "\nlr_start: " << first.lr << "\nlr_end: " << result.trace.back().lr
            << "\nfinal_loss: " << *last_epoch.loss << "\nbest_epoch: " << result.best_epoch << '\n';
  if (result.trace.back().val_mse) std::cout << "val_mse: " << *result.trace.back().val_mse << '\n';
  return 0;
}

int cmd_finetune(const FinetuneOptions& o, std::uint64_t seed) {
  require_file(o.data, "dataset");
  require_file(o.checkpoint, "checkpoint");
  require_writable_parent(o.out);
  TrainConfig config = to_train(o.train, seed);
  config.freeze_encoder = o.freeze_encoder;
  config.validate();
  const auto model = to_model(o.model);
  const auto pretrained = load_checkpoint(o.checkpoint);
  if (!pretrained.find("meta.data_config")) throw ConfigError("checkpoint lacks data configuration: " + o.checkpoint);
  const auto prepared = prepare_data(load_dataset(o.data), load_data_config(pretrained));

  auto result = finetune(pretrained, prepared.train_pairs, prepared.val_pairs, config, model);
  save_checkpoint(result.best_checkpoint, o.out);
  write_trace(result.trace, o.trace.empty() ? default_trace(o.out) : o.trace);

  const auto best = load_encoder(result.best_checkpoint);
  const auto metrics = evaluate_pairs(best, load_classifier(result.best_checkpoint), prepared.test_pairs);
  write_metrics(metrics, o.metrics);
  std::cout << "encoder_checksum_before: " << hex32(encoder_checksum(load_encoder(pretrained)))
            << "\nencoder_checksum_after: " << hex32(encoder_checksum(best)) << "\nbest_epoch: " << result.best_epoch
            << '\n';
  print_metrics(metrics);
  return 0;
}

int cmd_eval(const EvalOptions& o, std::uint64_t seed) {
  require_file(o.data, "dataset");
  require_file(o.checkpoint, "checkpoint");
  const auto ck = load_checkpoint(o.checkpoint);
  if (!ck.find("meta.data_config")) throw ConfigError("checkpoint lacks data configuration: " + o.checkpoint);
  const auto prepared = prepare_data(load_dataset(o.data), load_data_config(ck));
  const auto encoder = load_encoder(ck);
  ClassifierHead head;
  if (has_classifier(ck)) {
    head = load_classifier(ck);
  } else {
    std::cerr << "warning: checkpoint has no classifier; evaluating an untrained head\n";
    head = init_classifier_head(encoder.embedding_dim(), to_model(o.model).classifier_hidden, derive_seed(seed, 3),
                                parse_activation(o.model.activation));
  }
  const auto& pairs = pick_pairs(prepared, o.split);
  if (pairs.empty()) throw ConfigError("split '" + o.split + "' has no pairs");
  const auto metrics = evaluate_pairs(encoder, head, pairs);
  write_metrics(metrics, o.metrics);
  print_metrics(metrics);
  return 0;
}

int cmd_analyze(const AnalyzeOptions& o, std::uint64_t seed) {
  require_file(o.data, "dataset");
  require_file(o.checkpoint, "checkpoint");
  require_writable_parent(o.out);
  const auto ck = load_checkpoint(o.checkpoint);
  if (!ck.find("meta.data_config")) throw ConfigError("checkpoint lacks data configuration: " + o.checkpoint);
  const auto prepared = prepare_data(load_dataset(o.data), load_data_config(ck));
  const auto& scans = pick_scans(prepared, o.split);
  const auto profile = embedding_spread(load_encoder(ck), scans, o.sample_size, seed);
  if (profile.capped > 0)
    std::cerr << "warning: --sample-size " << o.sample_size << " exceeds the " << profile.points.size()
              << " available pairs; using all of them\n";
  export_profile(profile, o.out);
  std::cout << "pairs: " << profile.points.size() << "\ndistance_std: " << profile.distance_std
            << "\nspearman_rho: " << profile.rho << "\ndegenerate: " << (profile.degenerate ? 1 : 0) << '\n';
  return 0;
}

int cmd_compare(const CompareOptions& o) {
  require_file(o.data.data, "dataset");
  require_writable_parent(o.out);
  if (o.seeds.empty()) throw ConfigError("--seeds needs at least one seed");
  if (!o.checkpoint_dir.empty() && !fs::is_directory(o.checkpoint_dir))
    throw UsageFailure("checkpoint directory does not exist: " + o.checkpoint_dir);

  CompareConfig config;
  config.pipeline.pretrain = to_train(o.train, 0);
  config.pipeline.pretrain.loss = to_loss(o.loss);
  config.pipeline.finetune = to_train(o.train, 0);
  config.pipeline.finetune.epochs = o.finetune_epochs;
  config.pipeline.pretrain.validate();
  config.pipeline.finetune.validate();
  config.pipeline.model = to_model(o.model);
  config.pipeline.spread_sample = o.sample_size;
  config.fractions = to_fractions(o.data.split);
  config.labels = to_labels(o.data);
  if (!o.checkpoint_dir.empty()) config.checkpoint_dir = fs::path(o.checkpoint_dir);

  const auto report = run_compare(load_dataset(o.data.data), o.seeds, config);
  const auto text = report_to_text(report);
  {
    std::ofstream out(o.out, std::ios::binary);
    if (!out) throw Error("cannot write report '" + o.out + "'");
    out << text;
  }
  {
    std::ofstream out(fs::path(o.out).replace_extension(".json"), std::ios::binary);
    out << report_to_json(report).dump(2) << '\n';
  }
  std::cout << text;
  for (const auto& r : report.rows)
    if (!r.ok) std::cerr << "seed " << r.seed << " " << to_string(r.mode) << " failed: " << r.error << '\n';
  return 0;
}

void add_data_options(CLI::App* cmd, DataOptions& o) {
  cmd->add_option("--data", o.data, "Dataset file (CSV)")->capture_default_str();
  cmd->add_option("--split", o.split, "Train,val,test patient fractions")->delimiter(',')->expected(3);
  cmd->add_option("--label-mode", o.label_mode, "Change labels: threshold or bin")->capture_default_str();
  cmd->add_option("--tau", o.tau, "Normalized change counted as improvement/deterioration")->capture_default_str();
}

void add_loss_options(CLI::App* cmd, LossOptions& o) {
  cmd->add_option("--loss", o.loss, "mse, mse+cl or mse+wcl")->capture_default_str();
  cmd->add_option("--sim", o.sim, "Similarity: cos or l2")->capture_default_str();
  cmd->add_option("--alpha", o.alpha, "Weight of the contrastive term")->capture_default_str();
  cmd->add_option("--epsilon", o.epsilon, "Distance offset in the weighted loss")->capture_default_str();
  cmd->add_option("--sim-floor", o.sim_floor, "Lower clamp of the similarity")->capture_default_str();
}

void add_train_options(CLI::App* cmd, TrainOptions& o) {
  cmd->add_option("--batch-size", o.batch_size, "Batch size")->capture_default_str();
  cmd->add_option("--lr", o.lr, "Initial learning rate")->capture_default_str();
  cmd->add_option("--epochs", o.epochs, "Epochs (cosine annealing period)")->capture_default_str();
  cmd->add_option("--eta-min", o.eta_min, "Final learning rate")->capture_default_str();
}

void add_model_options(CLI::App* cmd, ModelOptions& o, bool encoder) {
  if (encoder) {
    cmd->add_option("--encoder-widths", o.encoder_widths, "Encoder widths after the input")->delimiter(',');
    cmd->add_option("--activation", o.activation, "relu or tanh")->capture_default_str();
    cmd->add_option("--pooling", o.pooling, "Sequence pooling: mean or last")->capture_default_str();
  }
  cmd->add_option("--classifier-hidden", o.classifier_hidden, "Classifier hidden widths")->delimiter(',');
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive pre-training for fine-grained change detection"};
  app.set_config("--config", "", "Config file (TOML/INI); flags take precedence");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Seed for all randomness")->capture_default_str();

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic longitudinal dataset");
  gen_cmd->add_option("--patients", gen.spec.n_patients, "Number of patients")->capture_default_str();
  gen_cmd->add_option("--scans-per-patient", gen.spec.scans_per_patient, "Scans per patient")->capture_default_str();
  gen_cmd->add_option("--features", gen.spec.features, "Feature width F")->capture_default_str();
  gen_cmd->add_option("--latent-dim", gen.spec.latent_dim, "Latent state size")->capture_default_str();
  gen_cmd->add_option("--noise", gen.spec.noise, "Feature noise standard deviation")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output dataset path")->capture_default_str();

  PretrainOptions pre;
  auto* pre_cmd = app.add_subcommand("pretrain", "Regression pre-training with optional contrastive loss");
  add_data_options(pre_cmd, pre.data);
  add_loss_options(pre_cmd, pre.loss);
  add_train_options(pre_cmd, pre.train);
  add_model_options(pre_cmd, pre.model, true);
  pre_cmd->add_option("--out", pre.out, "Final checkpoint path")->capture_default_str();
  pre_cmd->add_option("--best-out", pre.best_out, "Best (lowest validation MSE) checkpoint path");
  pre_cmd->add_option("--trace", pre.trace, "Per-epoch trace (JSON lines)");

  FinetuneOptions fine;
  auto* fine_cmd = app.add_subcommand("finetune", "Train the 3-way change classifier");
  fine_cmd->add_option("--data", fine.data, "Dataset file (CSV)")->capture_default_str();
  fine_cmd->add_option("--checkpoint", fine.checkpoint, "Pre-trained checkpoint");
  fine_cmd->add_option("--out", fine.out, "Output checkpoint (best validation macro-F1)")->capture_default_str();
  fine_cmd->add_option("--trace", fine.trace, "Per-epoch trace (JSON lines)");
  fine_cmd->add_option("--metrics", fine.metrics, "Test metrics output stem (.txt and .json)")->capture_default_str();
  fine_cmd->add_flag("--freeze-encoder,!--no-freeze-encoder", fine.freeze_encoder, "Keep encoder weights fixed")
      ->capture_default_str();
  add_train_options(fine_cmd, fine.train);
  add_model_options(fine_cmd, fine.model, false);

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a classifier checkpoint");
  eval_cmd->add_option("--data", ev.data, "Dataset file (CSV)")->capture_default_str();
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint to evaluate");
  eval_cmd->add_option("--metrics", ev.metrics, "Metrics output stem (.txt and .json)")->capture_default_str();
  eval_cmd->add_option("--split", ev.split, "train, val or test")->capture_default_str();
  add_model_options(eval_cmd, ev.model, false);

  AnalyzeOptions an;
  auto* an_cmd = app.add_subcommand("analyze", "Embedding cosine-distance spread profile");
  an_cmd->add_option("--data", an.data, "Dataset file (CSV)")->capture_default_str();
  an_cmd->add_option("--checkpoint", an.checkpoint, "Checkpoint with an encoder");
  an_cmd->add_option("--out", an.out, "Profile output (TSV)")->capture_default_str();
  an_cmd->add_option("--split", an.split, "train, val or test")->capture_default_str();
  an_cmd->add_option("--sample-size", an.sample_size, "Number of scan pairs")->capture_default_str();

  CompareOptions cmp;
  auto* cmp_cmd = app.add_subcommand("compare", "MSE vs MSE+CL vs MSE+wCL over several seeds");
  add_data_options(cmp_cmd, cmp.data);
  add_loss_options(cmp_cmd, cmp.loss);
  add_train_options(cmp_cmd, cmp.train);
  add_model_options(cmp_cmd, cmp.model, true);
  cmp_cmd->add_option("--finetune-epochs", cmp.finetune_epochs, "Fine-tuning epochs")->capture_default_str();
  cmp_cmd->add_option("--seeds", cmp.seeds, "Comma-separated seeds")->delimiter(',');
  cmp_cmd->add_option("--out", cmp.out, "Report path (.json written alongside)")->capture_default_str();
  cmp_cmd->add_option("--checkpoint-dir", cmp.checkpoint_dir, "Directory for per-run checkpoints");
  cmp_cmd->add_option("--sample-size", cmp.sample_size, "Pairs for the spread analysis")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen_cmd) {
      gen.spec.seed = seed;
      return cmd_gen_data(gen);
    }
    if (*pre_cmd) return cmd_pretrain(pre, seed);
    if (*fine_cmd) return cmd_finetune(fine, seed);
    if (*eval_cmd) return cmd_eval(ev, seed);
    if (*an_cmd) return cmd_analyze(an, seed);
    if (*cmp_cmd) return cmd_compare(cmp);
  } catch (const UsageFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
