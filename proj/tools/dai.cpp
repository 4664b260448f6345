// dai: synthesize encrypted real-time-video traffic, recover its cipher
// field layout, extract QoS windows, and train/evaluate QoE predictors.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dai/decipher.hpp"
#include "dai/errors.hpp"
#include "dai/qoe.hpp"
#include "dai/qos.hpp"
#include "dai/streamgen.hpp"
#include "dai/traffic.hpp"

namespace fs = std::filesystem;

namespace {

struct ExperimentConfig {
  std::uint64_t seed = 1;
  int per_condition_s = 120;
  int window_ms = 2000;
  std::vector<dai::gen::NetworkCondition> grid = dai::gen::default_grid();
  dai::gen::GenConfig base;
  dai::decipher::Thresholds thresholds;
};

int line_of_byte(const std::string& text, std::size_t byte) {
  int line = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
    }
  }
  return line;
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    throw dai::DataError("cannot open file: " + path.string());
  }
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  const std::string text = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw dai::DataError("config parse error in " + path.string() + " line " +
                         std::to_string(line_of_byte(text, e.byte)) + ": " +
                         e.what());
  }
  try {
    ExperimentConfig cfg;
    cfg.seed = j.value("seed", cfg.seed);
    cfg.per_condition_s = j.value("per_condition_s", cfg.per_condition_s);
    if (j.contains("grid")) {
      cfg.grid.clear();
      for (const auto& c : j["grid"]) {
        dai::gen::NetworkCondition cond;
        cond.bandwidth_kbps = c.value("bandwidth_kbps", cond.bandwidth_kbps);
        cond.loss_rate = c.value("loss_rate", cond.loss_rate);
        cond.delay_ms = c.value("delay_ms", cond.delay_ms);
        cond.jitter_ms = c.value("jitter_ms", cond.jitter_ms);
        cfg.grid.push_back(cond);
      }
    }
    if (j.contains("layout")) {
      cfg.base.layout.pt_pos =
          j["layout"].value("pt_pos", cfg.base.layout.pt_pos);
      cfg.base.layout.seq_high_pos =
          j["layout"].value("seq_high_pos", cfg.base.layout.seq_high_pos);
    }
    if (j.contains("encoder")) {
      const auto& e = j["encoder"];
      cfg.base.encoder.mtu = e.value("mtu", cfg.base.encoder.mtu);
      cfg.base.encoder.frame_size_cv =
          e.value("frame_size_cv", cfg.base.encoder.frame_size_cv);
      if (e.contains("gears")) {
        cfg.base.encoder.gears.clear();
        for (const auto& g : e["gears"]) {
          cfg.base.encoder.gears.push_back(
              dai::gen::GearSpec{g.at("bitrate_kbps").get<int>(),
                                 g.at("framerate_fps").get<int>(),
                                 g.at("width_px").get<int>()});
        }
      }
    }
    cfg.base.fec_base = j.value("fec_base", cfg.base.fec_base);
    cfg.base.fec_gain = j.value("fec_gain", cfg.base.fec_gain);
    cfg.base.chatter_fraction =
        j.value("chatter_fraction", cfg.base.chatter_fraction);
    cfg.window_ms = j.value("window_ms", cfg.window_ms);
    if (j.contains("discover")) {
      const auto& d = j["discover"];
      cfg.thresholds.pt_r_accept =
          d.value("pt_r_accept", cfg.thresholds.pt_r_accept);
      cfg.thresholds.pt_min_span =
          d.value("pt_min_span", cfg.thresholds.pt_min_span);
      cfg.thresholds.seq_winner_min =
          d.value("seq_winner_min", cfg.thresholds.seq_winner_min);
      cfg.thresholds.seq_runner_max =
          d.value("seq_runner_max", cfg.thresholds.seq_runner_max);
      cfg.thresholds.key_accept =
          d.value("key_accept", cfg.thresholds.key_accept);
    }
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw dai::DataError("config schema error in " + path.string() + ": " +
                         e.what());
  }
}

dai::Capture load_media_flow(const fs::path& pcap_path) {
  const auto result = dai::read_pcap(pcap_path);
  if (result.capture.empty()) {
    throw dai::NoFlowsError("no UDP flows in " + pcap_path.string());
  }
  auto flows = dai::split_flows(result.capture);
  const auto media = dai::select_media_flow(flows);
  return std::move(flows.at(media));
}

std::string condition_stem(std::size_t index) {
  std::ostringstream os;
  os << "cond_" << std::setw(2) << std::setfill('0') << index;
  return os.str();
}

int cmd_gen(const std::string& config_path, const std::string& out_dir,
            std::uint64_t seed_override, bool have_seed, bool force) {
  ExperimentConfig cfg;
  if (!config_path.empty()) {
    cfg = load_experiment_config(config_path);
  }
  if (have_seed) {
    cfg.seed = seed_override;
  }
  const fs::path out(out_dir);
  if (fs::exists(out) && !fs::is_empty(out) && !force) {
    throw dai::UsageError("output directory " + out.string() +
                          " is not empty (use --force to overwrite)");
  }
  fs::create_directories(out);

  nlohmann::json manifest;
  manifest["seed"] = cfg.seed;
  manifest["per_condition_s"] = cfg.per_condition_s;
  nlohmann::json conditions = nlohmann::json::array();
  for (std::size_t i = 0; i < cfg.grid.size(); ++i) {
    dai::gen::GenConfig gen_cfg = cfg.base;
    gen_cfg.condition = cfg.grid[i];
    gen_cfg.duration_s = cfg.per_condition_s;
    gen_cfg.seed = dai::gen::derive_condition_seed(cfg.seed, i);
    auto [capture, truth] = dai::gen::generate_stream(gen_cfg);

    const std::string stem = condition_stem(i);
    dai::write_pcap(capture, out / (stem + ".pcap"));
    dai::gen::save_ground_truth(truth, out / (stem + ".truth.json"));
    dai::gen::write_packets_csv(truth, out / (stem + ".packets.csv"));

    conditions.push_back({{"index", i},
                          {"bandwidth_kbps", cfg.grid[i].bandwidth_kbps},
                          {"loss_rate", cfg.grid[i].loss_rate},
                          {"delay_ms", cfg.grid[i].delay_ms},
                          {"jitter_ms", cfg.grid[i].jitter_ms},
                          {"seed", gen_cfg.seed},
                          {"pcap", stem + ".pcap"},
                          {"truth", stem + ".truth.json"},
                          {"packets", stem + ".packets.csv"}});
    std::cerr << "generated " << stem << ".pcap (" << capture.size()
              << " packets)\n";
  }
  manifest["conditions"] = std::move(conditions);
  std::ofstream mf(out / "manifest.json", std::ios::trunc);
  mf << manifest.dump(2) << '\n';
  std::cout << "wrote " << cfg.grid.size() << " captures to " << out.string()
            << '\n';
  return 0;
}

int cmd_discover(const std::vector<std::string>& pcaps,
                 const std::vector<double>& losses,
                 const std::string& out_path, const std::string& config_path) {
  if (pcaps.size() != losses.size()) {
    throw dai::UsageError("got " + std::to_string(pcaps.size()) +
                          " pcaps but " + std::to_string(losses.size()) +
                          " loss rates");
  }
  dai::decipher::Thresholds thresholds;
  if (!config_path.empty()) {
    thresholds = load_experiment_config(config_path).thresholds;
  }
  dai::decipher::CalibrationSet cal;
  for (std::size_t i = 0; i < pcaps.size(); ++i) {
    cal.entries.emplace_back(losses[i], load_media_flow(pcaps[i]));
  }
  const auto map = dai::decipher::discover(cal, 16, thresholds);

  // Diagnostics table: the data behind the frequency/correlation figures.
  std::size_t base = 0;
  for (std::size_t i = 1; i < cal.entries.size(); ++i) {
    if (cal.entries[i].first < cal.entries[base].first) {
      base = i;
    }
  }
  const auto profile = dai::decipher::byte_frequency(cal.entries[base].second);
  std::cout << "pos  modal  freq      corr(loss)  xor_score\n";
  for (std::size_t p = 0; p < profile.positions.size(); ++p) {
    const double corr =
        p < map.correlations.size() ? map.correlations[p] : 0.0;
    const double xs = p < map.xor_scores.size() ? map.xor_scores[p] : 0.0;
    std::cout << std::setw(3) << (p + 1) << "  " << std::setw(5)
              << static_cast<int>(profile.positions[p].modal_value) << "  "
              << std::fixed << std::setprecision(6)
              << profile.positions[p].modal_freq << "  " << std::setw(10)
              << std::setprecision(4) << corr << "  " << std::setw(9) << xs
              << '\n';
  }
  std::cout << "pt_position=" << map.pt_position
            << " video_pt_cipher=" << static_cast<int>(map.video_pt_cipher)
            << " seq_positions=[" << map.seq_high_position << ","
            << map.seq_low_position << "]"
            << " seq_key=0x" << std::hex << map.seq_key << std::dec << '\n';
  dai::decipher::save_field_map(map, out_path);
  return 0;
}

int cmd_extract(const std::string& pcap_path, const std::string& map_path,
                const std::string& out_path, int window_ms,
                const std::string& config_path) {
  dai::decipher::Thresholds thresholds;
  if (!config_path.empty()) {
    const auto cfg = load_experiment_config(config_path);
    thresholds = cfg.thresholds;
    if (window_ms == 0) {
      window_ms = cfg.window_ms;
    }
  }
  if (window_ms == 0) {
    window_ms = 2000;
  }
  if (window_ms < 0) {
    throw dai::UsageError("--window-ms must be positive");
  }
  const auto flow = load_media_flow(pcap_path);
  auto map = dai::decipher::load_field_map(map_path);
  std::vector<dai::qos::QosWindow> windows;
  try {
    windows = dai::qos::extract_windows(flow, map,
                                        static_cast<std::int64_t>(window_ms) *
                                            1000);
  } catch (const dai::StaleFieldMapError&) {
    // Same platform layout, different stream: re-derive the per-stream
    // cipher values and retry.
    std::cerr << "field map values do not fit this stream; re-deriving "
                 "per-stream key from the layout\n";
    map = dai::decipher::rekey(flow, map, thresholds);
    windows = dai::qos::extract_windows(
        flow, map, static_cast<std::int64_t>(window_ms) * 1000);
  }
  dai::qos::write_qos_csv(windows, out_path);
  std::cout << "wrote " << windows.size() << " windows to " << out_path
            << '\n';
  return 0;
}

std::vector<dai::qoe::Sample> load_dataset(
    const std::vector<std::string>& qos_paths,
    const std::vector<std::string>& truth_paths) {
  if (qos_paths.size() != truth_paths.size()) {
    throw dai::UsageError("got " + std::to_string(qos_paths.size()) +
                          " qos files but " +
                          std::to_string(truth_paths.size()) +
                          " truth files");
  }
  if (qos_paths.empty()) {
    throw dai::UsageError("need at least one qos/truth file pair");
  }
  std::vector<dai::qoe::Sample> dataset;
  for (std::size_t i = 0; i < qos_paths.size(); ++i) {
    auto windows = dai::qos::read_qos_csv(qos_paths[i]);
    // Alignment is by timestamp, not row order.
    std::sort(windows.begin(), windows.end(),
              [](const dai::qos::QosWindow& a, const dai::qos::QosWindow& b) {
                return a.t_start_us < b.t_start_us;
              });
    const auto truth = dai::gen::load_ground_truth(truth_paths[i]);
    auto samples = dai::qoe::build_dataset(windows, truth);
    dataset.insert(dataset.end(), samples.begin(), samples.end());
  }
  return dataset;
}

int cmd_train(const std::vector<std::string>& qos_paths,
              const std::vector<std::string>& truth_paths,
              const std::string& target_name, const std::string& out_path,
              std::uint64_t seed, const dai::qoe::ForestParams& params) {
  const auto target = dai::qoe::target_from_string(target_name);
  const auto dataset = load_dataset(qos_paths, truth_paths);
  const auto model = dai::qoe::train_forest(dataset, target, params, seed);
  if (model.single_class) {
    std::cerr << "warning: training data contains a single " << target_name
              << " gear; the model is trivial\n";
  }
  dai::qoe::save_model(model, out_path);
  std::cout << "trained " << target_name << " model on " << dataset.size()
            << " windows -> " << out_path << '\n';
  return 0;
}

const std::array<dai::qoe::QoeGear, 4> kReportGearOrder = {
    dai::qoe::QoeGear::High, dai::qoe::QoeGear::Medium, dai::qoe::QoeGear::Low,
    dai::qoe::QoeGear::VeryLow};

int cmd_eval(const std::vector<std::string>& model_paths,
             const std::vector<std::string>& qos_paths,
             const std::vector<std::string>& truth_paths,
             const std::string& report_path, const std::string& preds_path) {
  if (model_paths.empty()) {
    throw dai::UsageError("need at least one --model");
  }
  const auto dataset = load_dataset(qos_paths, truth_paths);
  if (dataset.empty()) {
    throw dai::DataError("evaluation dataset is empty");
  }

  std::ofstream report(report_path, std::ios::trunc);
  if (!report) {
    throw dai::DataError("cannot open for writing: " + report_path);
  }
  report << "target,micro_f1,macro_f1";
  for (const char* name : dai::qoe::kFeatureNames) {
    report << ",imp_" << name;
  }
  for (auto t : kReportGearOrder) {
    for (auto p : kReportGearOrder) {
      report << ",cm_" << dai::qoe::to_string(t) << '_'
             << dai::qoe::to_string(p);
    }
  }
  report << '\n';

  for (const auto& model_path : model_paths) {
    const auto model = dai::qoe::load_model_file(model_path);
    std::vector<dai::qoe::QoeGear> preds, truth;
    preds.reserve(dataset.size());
    truth.reserve(dataset.size());
    for (const auto& s : dataset) {
      preds.push_back(dai::qoe::predict(model, s.x));
      truth.push_back(dai::qoe::label_for(s.y, model.target));
    }
    const double micro = dai::qoe::micro_f1(preds, truth);
    const double macro = dai::qoe::macro_f1(preds, truth);
    const auto cm = dai::qoe::confusion_matrix(preds, truth);

    report << dai::qoe::to_string(model.target) << ',' << std::setprecision(12)
           << micro << ',' << macro;
    for (double imp : model.feature_importances) {
      report << ',' << imp;
    }
    for (auto t : kReportGearOrder) {
      for (auto p : kReportGearOrder) {
        report << ','
               << cm[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
      }
    }
    report << '\n';

    fs::path pp(preds_path);
    if (model_paths.size() > 1) {
      pp = pp.parent_path() /
           (pp.stem().string() + "_" + dai::qoe::to_string(model.target) +
            pp.extension().string());
    }
    std::ofstream pf(pp, std::ios::trunc);
    if (!pf) {
      throw dai::DataError("cannot open for writing: " + pp.string());
    }
    pf << "t_start_us,predicted,truth\n";
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      pf << dataset[i].t_start_us << ',' << dai::qoe::to_string(preds[i])
         << ',' << dai::qoe::to_string(truth[i]) << '\n';
    }
    std::cout << dai::qoe::to_string(model.target) << ": micro_f1=" << micro
              << " macro_f1=" << macro << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DaI pipeline: generate, discover, extract, train, eval"};
  app.require_subcommand(1);

  // gen
  std::string gen_config, gen_out;
  std::uint64_t gen_seed = 0;
  bool gen_force = false;
  auto* gen = app.add_subcommand("gen", "synthesize the experiment grid");
  gen->add_option("--config", gen_config, "experiment config JSON");
  gen->add_option("--out", gen_out, "output directory")->required();
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "seed override");
  gen->add_flag("--force", gen_force, "overwrite a non-empty directory");

  // discover
  std::vector<std::string> disc_pcaps;
  std::vector<double> disc_losses;
  std::string disc_out, disc_config;
  auto* disc = app.add_subcommand(
      "discover", "recover the cipher field layout from calibration pcaps");
  disc->add_option("--pcap", disc_pcaps, "calibration pcap (repeatable)")
      ->required();
  disc->add_option("--loss", disc_losses,
                   "applied loss rate per pcap (repeatable)")
      ->required();
  disc->add_option("--out", disc_out, "field map JSON output")->required();
  disc->add_option("--config", disc_config,
                   "experiment config (discovery thresholds)");

  // extract
  std::string ext_pcap, ext_map, ext_out, ext_config;
  int ext_window_ms = 0;
  auto* ext = app.add_subcommand("extract", "extract QoS windows to CSV");
  ext->add_option("--pcap", ext_pcap, "capture to analyze")->required();
  ext->add_option("--fieldmap", ext_map, "field map JSON")->required();
  ext->add_option("--out", ext_out, "QoS CSV output")->required();
  ext->add_option("--window-ms", ext_window_ms,
                  "window length, ms (default 2000)");
  ext->add_option("--config", ext_config,
                  "experiment config (window and thresholds)");

  // train
  std::vector<std::string> train_qos, train_truth;
  std::string train_target, train_out;
  std::uint64_t train_seed = 1;
  dai::qoe::ForestParams params;
  auto* train = app.add_subcommand("train", "train a QoE gear classifier");
  train->add_option("--qos", train_qos, "QoS CSV (repeatable)")->required();
  train->add_option("--truth", train_truth, "ground truth JSON (repeatable)")
      ->required();
  train->add_option("--target", train_target, "bitrate|framerate|resolution")
      ->required();
  train->add_option("--out", train_out, "model JSON output")->required();
  train->add_option("--seed", train_seed, "training seed");
  train->add_option("--trees", params.n_trees, "number of trees");
  train->add_option("--max-depth", params.max_depth, "maximum tree depth");
  train->add_option("--min-leaf", params.min_samples_leaf,
                    "minimum samples per leaf");

  // eval
  std::vector<std::string> eval_models, eval_qos, eval_truth;
  std::string eval_report, eval_preds;
  auto* eval = app.add_subcommand("eval", "evaluate models, write reports");
  eval->add_option("--model", eval_models, "model JSON (repeatable)")
      ->required();
  eval->add_option("--qos", eval_qos, "QoS CSV (repeatable)")->required();
  eval->add_option("--truth", eval_truth, "ground truth JSON (repeatable)")
      ->required();
  eval->add_option("--report", eval_report, "report CSV output")->required();
  eval->add_option("--preds", eval_preds, "predictions CSV output")
      ->required();

  try {
    app.parse(argc, argv);
    if (gen->parsed()) {
      return cmd_gen(gen_config, gen_out, gen_seed, !gen_seed_opt->empty(),
                     gen_force);
    }
    if (disc->parsed()) {
      return cmd_discover(disc_pcaps, disc_losses, disc_out, disc_config);
    }
    if (ext->parsed()) {
      return cmd_extract(ext_pcap, ext_map, ext_out, ext_window_ms,
                         ext_config);
    }
    if (train->parsed()) {
      return cmd_train(train_qos, train_truth, train_target, train_out,
                       train_seed, params);
    }
    if (eval->parsed()) {
      return cmd_eval(eval_models, eval_qos, eval_truth, eval_report,
                      eval_preds);
    }
  } catch (const CLI::ParseError& e) {
    if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp") {
      return app.exit(e);
    }
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const dai::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const dai::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const dai::AnalysisError& e) {
    std::cerr << "analysis error: " << e.what() << '\n';
    return 4;
  }
  return 0;
}
