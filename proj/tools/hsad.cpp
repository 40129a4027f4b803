// hsad: command-line driver for trace synthesis, featurization, detector
// training, evaluation and ablation suites.
//
// Exit codes: 0 success, 2 configuration/usage error, 3 data/format error.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "hsad/hsad.hpp"

namespace {

constexpr const char* kToolVersion = "1.0.0";
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

unsigned thread_budget() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("HSAD_THREADS")) {
    try {
      const long cap = std::stol(env);
      if (cap >= 1) n = std::min(n, static_cast<unsigned>(cap));
    } catch (const std::exception&) {
      throw hsad::ConfigError("HSAD_THREADS must be a positive integer");
    }
  }
  return n;
}

// Writes to a sibling temp file, then renames over the destination.
void write_atomically(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw hsad::DataError("cannot open " + tmp + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw hsad::DataError("write to " + tmp + " failed");
  }
  std::filesystem::rename(tmp, path);
}

class Run {
 public:
  explicit Run(CLI::App* cmd) : cmd_(cmd), start_(std::chrono::steady_clock::now()) {}

  std::string input(const std::string& path) {
    std::string bytes = hsad::io::read_file(path);
    digests_[path] = hsad::io::sha256_hex(bytes);
    return bytes;
  }

  void output(const std::string& path, const std::string& bytes, std::uint64_t seed) {
    write_atomically(path, bytes);
    hsad::Json flags = hsad::Json::object();
    for (const CLI::Option* opt : cmd_->get_options()) {
      if (opt->get_name() == "--help") continue;
      std::string name = opt->get_name();
      while (!name.empty() && name.front() == '-') name.erase(name.begin());
      if (opt->count() > 0) {
        const auto& res = opt->results();
        flags[name] = res.size() == 1 ? hsad::Json(res.front()) : hsad::Json(res);
      } else {
        flags[name] = opt->get_default_str();
      }
    }
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    const hsad::Json manifest{{"command", cmd_->get_name()}, {"flags", flags},
                              {"input_digests", digests_},   {"output", path},
                              {"output_digest", hsad::io::sha256_hex(bytes)},
                              {"seed", seed},                {"tool_version", kToolVersion},
                              {"wall_time_s", wall}};
    write_atomically(path + ".manifest.json", manifest.dump(2) + "\n");
  }

 private:
  CLI::App* cmd_;
  std::chrono::steady_clock::time_point start_;
  hsad::Json digests_ = hsad::Json::object();
};

hsad::FeatureSet load_features(Run& run, const std::string& path) {
  std::istringstream in(run.input(path));
  return hsad::read_features(in);
}

hsad::TraceFile load_traces(Run& run, const std::string& path, std::string* digest = nullptr) {
  const std::string bytes = run.input(path);
  if (digest) *digest = hsad::io::sha256_hex(bytes);
  std::istringstream in(bytes);
  return hsad::read_traces(in);
}

struct TrainFlags {
  hsad::TrainConfig cfg;
  std::string hidden = "1024,512,256";

  void add_to(CLI::App* cmd) {
    cmd->add_option("--epochs", cfg.epochs, "Training epochs")->capture_default_str();
    cmd->add_option("--lr", cfg.initial_lr, "Initial learning rate")->capture_default_str();
    cmd->add_option("--batch-size", cfg.batch_size, "Mini-batch size")->capture_default_str();
    cmd->add_option("--weight-decay", cfg.weight_decay, "Decoupled weight decay")->capture_default_str();
    cmd->add_option("--l1", cfg.l1_lambda, "L1 penalty on the first layer weights")->capture_default_str();
    cmd->add_option("--dropout", cfg.dropout_rate, "Dropout rate")->capture_default_str();
    cmd->add_option("--hidden", hidden, "Comma separated hidden widths")->capture_default_str();
    cmd->add_flag("--any-width", cfg.allow_any_width, "Allow a final hidden width other than 256");
  }

  hsad::TrainConfig resolve() {
    cfg.hidden_sizes.clear();
    for (auto part : hsad::detail::split(hidden, ',')) {
      cfg.hidden_sizes.push_back(hsad::detail::parse_number<int>(part, "hidden width"));
    }
    cfg.validate();
    return cfg;
  }
};

struct SelectionFlags {
  std::string nodes = "all";
  std::string layers = "all";
  std::string mode = "fft-max";
  bool absolute = false;
  std::string obs_point = "A_end";
  std::optional<double> tau;

  void add_to(CLI::App* cmd, bool with_mode) {
    cmd->add_option("--nodes", nodes, "Nodes: all or comma list of ah,rh,mh,h")->capture_default_str();
    cmd->add_option("--layers", layers, "Layers: all, 1-based list, or random:K[:seed=S]")
        ->capture_default_str();
    if (with_mode) cmd->add_option("--mode", mode, "fft-max or time-max")->capture_default_str();
    cmd->add_flag("--abs", absolute, "time-max over |x| instead of the signed maximum");
    cmd->add_option("--obs-point", obs_point, "Observation point to featurize")->capture_default_str();
    cmd->add_option("--tau", tau, "Derive labels as sim <= tau from trace sim scores");
  }

  hsad::FeaturizeOptions resolve() const {
    hsad::FeaturizeOptions opt;
    opt.selection.layers = hsad::parse_layer_selection(layers);
    opt.selection.nodes = hsad::parse_node_list(nodes);
    opt.mode = hsad::parse_feature_mode(mode);
    opt.absolute = absolute;
    opt.obs_point = hsad::parse_obs_point(obs_point);
    opt.tau = tau;
    opt.threads = thread_budget();
    return opt;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hidden-state spectral hallucination detection toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  // synth
  hsad::SyntheticSpec synth;
  int anomaly_count = 8;
  std::vector<int> anomaly_list;
  std::string synth_points = "A_end";
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic traces with a known spectral anomaly");
  synth_cmd->add_option("--layers", synth.num_layers, "Layers")->capture_default_str();
  synth_cmd->add_option("--dim", synth.hidden_dim, "Hidden dimension")->capture_default_str();
  synth_cmd->add_option("--count", synth.record_count, "Items to generate")->capture_default_str();
  auto* count_opt = synth_cmd->add_option("--anomaly-dims", anomaly_count, "Anomaly on dimensions 0..K-1")
                        ->capture_default_str();
  synth_cmd->add_option("--anomaly-dim-list", anomaly_list, "Explicit anomaly dimensions")
      ->delimiter(',')
      ->excludes(count_opt);
  synth_cmd->add_option("--anomaly-bin", synth.anomaly_bin, "Anomaly frequency bin")->capture_default_str();
  synth_cmd->add_option("--amplitude", synth.anomaly_amplitude, "Anomaly amplitude")->capture_default_str();
  synth_cmd->add_option("--pos-frac", synth.positive_fraction, "Fraction of label-1 items")->capture_default_str();
  synth_cmd->add_option("--offset-range", synth.offset_range, "Per-column constant offsets in [-R, R]")
      ->capture_default_str();
  synth_cmd->add_option("--obs-points", synth_points, "Observation points: comma list or all")
      ->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "Random seed")->capture_default_str();
  synth_cmd->add_option("--out", synth_out, "Output HST1 file")->required();

  // featurize
  std::string feat_traces, feat_out;
  SelectionFlags feat_sel;
  auto* feat_cmd = app.add_subcommand("featurize", "Compute spectral features from traces");
  feat_cmd->add_option("--traces", feat_traces, "Input HST1 file")->required();
  feat_cmd->add_option("--out", feat_out, "Output HSF1 file")->required();
  feat_sel.add_to(feat_cmd, true);

  // split
  std::string split_in, split_train, split_test;
  double split_fraction = 0.3;
  std::uint64_t split_seed = 0;
  auto* split_cmd = app.add_subcommand("split", "Split a feature file into train and test files");
  split_cmd->add_option("--features", split_in, "Input HSF1 file")->required();
  split_cmd->add_option("--train-out", split_train, "Train HSF1 output")->required();
  split_cmd->add_option("--test-out", split_test, "Test HSF1 output")->required();
  split_cmd->add_option("--test-fraction", split_fraction, "Test fraction")->capture_default_str();
  split_cmd->add_option("--seed", split_seed, "Shuffle seed")->capture_default_str();

  // train
  std::string train_in, train_out;
  TrainFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "Train the detector on labeled features");
  train_cmd->add_option("--features", train_in, "Labeled HSF1 file")->required();
  train_cmd->add_option("--out", train_out, "Output HSM1 model")->required();
  train_flags.add_to(train_cmd);
  train_cmd->add_option("--seed", train_flags.cfg.seed, "Random seed")->capture_default_str();

  // eval
  std::string eval_in, eval_model, eval_report;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a detector on labeled features");
  eval_cmd->add_option("--features", eval_in, "Labeled HSF1 test file")->required();
  eval_cmd->add_option("--model", eval_model, "HSM1 model")->required();
  eval_cmd->add_option("--report", eval_report, "Output JSON report")->required();

  // ablate
  std::string ablate_suite, ablate_traces, ablate_out;
  SelectionFlags ablate_sel;
  TrainFlags ablate_train;
  double ablate_fraction = 0.3;
  std::uint64_t ablate_seed = 0;
  auto* ablate_cmd = app.add_subcommand("ablate", "Run an ablation suite end to end");
  ablate_cmd->add_option("--suite", ablate_suite, "time-vs-freq, layers, nodes or obs-points")
      ->required()
      ->check(CLI::IsMember({"time-vs-freq", "layers", "nodes", "obs-points"}));
  ablate_cmd->add_option("--traces", ablate_traces, "Input HST1 file")->required();
  ablate_cmd->add_option("--out", ablate_out, "Output JSON table")->required();
  ablate_sel.add_to(ablate_cmd, false);
  ablate_train.add_to(ablate_cmd);
  ablate_cmd->add_option("--test-fraction", ablate_fraction, "Test fraction")->capture_default_str();
  ablate_cmd->add_option("--seed", ablate_seed, "Base seed; condition i uses seed + i")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*synth_cmd) {
      Run run(synth_cmd);
      if (!anomaly_list.empty()) {
        synth.anomaly_dims = anomaly_list;
      } else {
        if (anomaly_count < 0) throw hsad::ConfigError("--anomaly-dims must be non-negative");
        synth.anomaly_dims.resize(static_cast<std::size_t>(anomaly_count));
        std::iota(synth.anomaly_dims.begin(), synth.anomaly_dims.end(), 0);
      }
      synth.obs_points.clear();
      if (synth_points == "all") {
        synth.obs_points.assign(hsad::kAllObsPoints.begin(), hsad::kAllObsPoints.end());
      } else {
        for (auto p : hsad::detail::split(synth_points, ',')) synth.obs_points.push_back(hsad::parse_obs_point(p));
      }
      const auto traces = hsad::generate_synthetic(synth);
      std::ostringstream os;
      hsad::write_traces(traces.header, traces.records, os);
      run.output(synth_out, os.str(), synth.seed);
      std::cout << "wrote " << traces.records.size() << " records to " << synth_out << "\n";
    } else if (*feat_cmd) {
      Run run(feat_cmd);
      const auto opt = feat_sel.resolve();
      std::string digest;
      const auto traces = load_traces(run, feat_traces, &digest);
      const auto features = hsad::featurize(traces, opt, digest);
      std::ostringstream os;
      hsad::write_features(features, os);
      run.output(feat_out, os.str(), opt.selection.layers.seed);
      std::cout << "wrote " << features.records.size() << " feature records (dim " << features.header.dim
                << ", N " << features.header.signal_length << ") to " << feat_out << "\n";
    } else if (*split_cmd) {
      Run run(split_cmd);
      const auto features = load_features(run, split_in);
      const auto idx = hsad::split_indices(features.records.size(), split_fraction, split_seed);
      std::ostringstream train_os, test_os;
      hsad::write_features(hsad::subset(features, idx.train), train_os);
      hsad::write_features(hsad::subset(features, idx.test), test_os);
      run.output(split_train, train_os.str(), split_seed);
      run.output(split_test, test_os.str(), split_seed);
      std::cout << "train " << idx.train.size() << ", test " << idx.test.size() << "\n";
    } else if (*train_cmd) {
      Run run(train_cmd);
      const auto cfg = train_flags.resolve();
      const auto features = load_features(run, train_in);
      const auto result = hsad::train(hsad::to_labeled_matrix(features), cfg);
      std::ostringstream os;
      hsad::write_model(result.model, os);
      run.output(train_out, os.str(), cfg.seed);
      std::cout << "final train loss " << result.epoch_loss.back() << "\n";
    } else if (*eval_cmd) {
      Run run(eval_cmd);
      const auto features = load_features(run, eval_in);
      std::istringstream model_in(run.input(eval_model));
      const auto model = hsad::read_model(model_in);
      const auto report = hsad::evaluate_model(model, features);
      run.output(eval_report, report.to_json().dump(2) + "\n", model.seed);
      std::cout << "acc " << report.acc << "  auroc " << report.auroc << "\n";
    } else if (*ablate_cmd) {
      Run run(ablate_cmd);
      const auto suite = hsad::parse_ablation_suite(ablate_suite);
      const auto base = ablate_sel.resolve();
      hsad::PipelineConfig cfg{ablate_train.resolve(), ablate_fraction, ablate_seed};
      std::string digest;
      const auto traces = load_traces(run, ablate_traces, &digest);
      const auto rows = hsad::run_ablation(suite, traces, base, cfg, ablate_seed, digest);
      hsad::Json table{{"suite", ablate_suite}, {"rows", hsad::Json::array()}};
      for (const auto& row : rows) {
        table["rows"].push_back(row.to_json());
        std::cout << row.condition << "\tauroc " << row.result.report.auroc << "\tacc " << row.result.report.acc
                  << "\n";
      }
      run.output(ablate_out, table.dump(2) + "\n", ablate_seed);
    }
  } catch (const hsad::Error& e) {
    std::cerr << "hsad: " << e.what() << "\n";
    return e.category() == hsad::Error::Category::config ? kExitConfig : kExitData;
  } catch (const std::exception& e) {
    std::cerr << "hsad: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
