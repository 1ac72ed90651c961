#include "gcl/experiment.hpp"

#include <charconv>
#include <sstream>

namespace gcl {

namespace {

std::vector<ScanRecord> normalized_scans(const Dataset& split, const NormalizationStats& stats) {
  return normalize_hs(split.scans(), stats);
}

std::string fixed(double v, int digits) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(digits);
  out << v;
  return out.str();
}

}  // namespace

PreparedData prepare_data(const Dataset& data, const DataConfig& config) {
  PreparedData out;
  out.config = config;
  out.raw = split_patients(data, config.fractions, config.split_seed);
  const auto& stats = config.stats;
  out.train_scans = normalized_scans(out.raw.train, stats);
  out.val_scans = normalized_scans(out.raw.val, stats);
  out.test_scans = normalized_scans(out.raw.test, stats);
  out.train_pairs = make_pairs(out.raw.train, stats, config.labels);
  out.val_pairs = make_pairs(out.raw.val, stats, config.labels);
  out.test_pairs = make_pairs(out.raw.test, stats, config.labels);
  return out;
}

PreparedData prepare_data(const Dataset& data, const SplitFractions& fractions, std::uint64_t split_seed,
                          const LabelConfig& labels) {
  DataConfig config;
  config.fractions = fractions;
  config.split_seed = split_seed;
  config.labels = labels;
  config.stats = compute_stats(split_patients(data, fractions, split_seed).train);
  return prepare_data(data, config);
}

PipelineResult run_pipeline(const PreparedData& data, const PipelineConfig& config) {
  PipelineResult out;
  out.pretrain = pretrain(data.train_scans, data.val_scans, config.pretrain, config.model);
  Checkpoint pretrained = out.pretrain.best_checkpoint;
  store_data_config(pretrained, data.config);
  out.finetune = finetune(pretrained, data.train_pairs, data.val_pairs, config.finetune, config.model);

  const auto best = out.finetune.best_checkpoint;
  const auto encoder = load_encoder(best);
  const auto head = load_classifier(best);
  if (!data.test_pairs.empty()) out.test = evaluate_pairs(encoder, head, data.test_pairs);
  if (data.test_scans.size() >= 2)
    out.spread = embedding_spread(encoder, data.test_scans, config.spread_sample, config.pretrain.seed);
  return out;
}

CompareReport run_compare(const Dataset& data, const std::vector<std::uint64_t>& seeds, const CompareConfig& config) {
  CompareReport report;
  for (std::uint64_t seed : seeds) {
    std::optional<PreparedData> prepared;
    std::string prep_error;
    try {
      prepared = prepare_data(data, config.fractions, seed, config.labels);
    } catch (const std::exception& e) {
      prep_error = e.what();
    }
    for (LossMode mode : config.modes) {
      CompareRow row;
      row.seed = seed;
      row.mode = mode;
      if (!prepared) {
        row.error = prep_error;
        report.rows.push_back(row);
        continue;
      }
      try {
        PipelineConfig pc = config.pipeline;
        pc.pretrain.seed = seed;
        pc.pretrain.loss.mode = mode;
        pc.finetune.seed = seed;
        auto result = run_pipeline(*prepared, pc);
        row.ok = true;
        row.accuracy = result.test.accuracy;
        row.macro_f1 = result.test.macro_f1;
        row.distance_std = result.spread.distance_std;
        row.rho = result.spread.rho;
        if (config.checkpoint_dir) {
          const auto stem = "seed" + std::to_string(seed) + "_" + to_string(mode);
          Checkpoint pre = result.pretrain.final_checkpoint;
          store_data_config(pre, prepared->config);
          save_checkpoint(pre, *config.checkpoint_dir / (stem + "_pretrain.gcck"));
          save_checkpoint(result.finetune.final_checkpoint, *config.checkpoint_dir / (stem + "_finetune.gcck"));
        }
      } catch (const std::exception& e) {
        row.error = e.what();
      }
      report.rows.push_back(row);
    }
  }

  for (LossMode mode : config.modes) {
    CompareSummary s;
    s.mode = mode;
    std::vector<double> acc, f1, sd, rho;
    for (const auto& r : report.rows)
      if (r.mode == mode && r.ok) {
        acc.push_back(r.accuracy);
        f1.push_back(r.macro_f1);
        sd.push_back(r.distance_std);
        rho.push_back(r.rho);
      }
    s.runs = static_cast<int>(acc.size());
    if (s.runs > 0) {
      s.accuracy = median(acc);
      s.macro_f1 = median(f1);
      s.distance_std = median(sd);
      s.rho = median(rho);
    }
    report.medians.push_back(s);
  }
  return report;
}

std::string report_to_text(const CompareReport& report) {
  std::ostringstream out;
  out << "seed\tloss\taccuracy\tmacro_f1\tdistance_std\tspearman_rho\tstatus\n";
  for (const auto& r : report.rows) {
    out << r.seed << '\t' << to_string(r.mode) << '\t';
    if (r.ok)
      out << fixed(r.accuracy, 2) << '\t' << fixed(r.macro_f1, 3) << '\t' << fixed(r.distance_std, 4) << '\t'
          << fixed(r.rho, 4) << "\tok\n";
    else
      out << "-\t-\t-\t-\tfailed: " << r.error << '\n';
  }
  out << "\nmedian\tloss\taccuracy\tmacro_f1\tdistance_std\tspearman_rho\truns\n";
  for (const auto& s : report.medians)
    out << "median\t" << to_string(s.mode) << '\t' << fixed(s.accuracy, 2) << '\t' << fixed(s.macro_f1, 3) << '\t'
        << fixed(s.distance_std, 4) << '\t' << fixed(s.rho, 4) << '\t' << s.runs << '\n';
  return out.str();
}

nlohmann::json report_to_json(const CompareReport& report) {
  nlohmann::json j;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : report.rows) {
    nlohmann::json row{{"seed", r.seed}, {"loss", to_string(r.mode)}, {"ok", r.ok}};
    if (r.ok) {
      row["accuracy"] = r.accuracy;
      row["macro_f1"] = r.macro_f1;
      row["distance_std"] = r.distance_std;
      row["spearman_rho"] = r.rho;
    } else {
      row["error"] = r.error;
    }
    j["rows"].push_back(row);
  }
  j["medians"] = nlohmann::json::array();
  for (const auto& s : report.medians)
    j["medians"].push_back({{"loss", to_string(s.mode)},
                            {"runs", s.runs},
                            {"accuracy", s.accuracy},
                            {"macro_f1", s.macro_f1},
                            {"distance_std", s.distance_std},
                            {"spearman_rho", s.rho}});
  return j;
}

}  // namespace gcl
