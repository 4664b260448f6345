// End-to-end checks of the dai binary: exit codes, file outputs, and
// determinism of the written artifacts.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

const std::string kBin = DAI_BIN;

int run(const std::string& args) {
  const std::string cmd = kBin + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void spit(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << text;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / "dai_cli_test";
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string calibration_config(double fec_gain = 2.0) {
  std::ostringstream os;
  os << "{\n  \"seed\": 7,\n  \"per_condition_s\": 12,\n  \"fec_gain\": "
     << fec_gain << ",\n  \"grid\": [\n";
  const double losses[] = {0.0, 0.02, 0.04, 0.06, 0.08, 0.10};
  for (int i = 0; i < 6; ++i) {
    os << "    {\"bandwidth_kbps\": 100000, \"loss_rate\": " << losses[i]
       << "}" << (i + 1 < 6 ? "," : "") << "\n";
  }
  os << "  ]\n}\n";
  return os.str();
}

}  // namespace

TEST_CASE("the full pipeline runs green and deterministically") {
  TempDir tmp;
  const auto cfg = tmp.path / "cal.json";
  spit(cfg, calibration_config());

  // gen: refuses to clobber, honors --force, reproduces bytes.
  const auto out = (tmp.path / "runs").string();
  CHECK(run("gen --config " + cfg.string() + " --out " + out) == 0);
  CHECK(fs::exists(tmp.path / "runs/manifest.json"));
  CHECK(fs::exists(tmp.path / "runs/cond_00.pcap"));
  CHECK(fs::exists(tmp.path / "runs/cond_05.truth.json"));
  CHECK(fs::exists(tmp.path / "runs/cond_05.packets.csv"));
  CHECK(run("gen --config " + cfg.string() + " --out " + out) == 2);
  const std::string pcap_before = slurp(tmp.path / "runs/cond_03.pcap");
  CHECK(run("gen --config " + cfg.string() + " --out " + out + " --force") ==
        0);
  CHECK(slurp(tmp.path / "runs/cond_03.pcap") == pcap_before);

  // discover: mismatched loss list is a usage error; the calibration set
  // produces a field map.
  std::string pcaps, losses;
  const double loss_values[] = {0.0, 0.02, 0.04, 0.06, 0.08, 0.10};
  for (int i = 0; i < 6; ++i) {
    pcaps += " --pcap " + (tmp.path / "runs").string() + "/cond_0" +
             std::to_string(i) + ".pcap";
    losses += " --loss " + std::to_string(loss_values[i]);
  }
  const auto fieldmap = (tmp.path / "fieldmap.json").string();
  CHECK(run("discover" + pcaps + " --loss 0.0 --out " + fieldmap) == 2);
  CHECK(run("discover" + pcaps + losses + " --out " + fieldmap) == 0);
  CHECK(fs::exists(fieldmap));

  const std::string fieldmap_before = slurp(fieldmap);
  CHECK(run("discover" + pcaps + losses + " --out " + fieldmap) == 0);
  CHECK(slurp(fieldmap) == fieldmap_before);

  // extract: same-stream map applies directly; a different stream gets
  // re-keyed rather than failing.
  for (int i = 0; i < 3; ++i) {
    const std::string idx = std::to_string(i);
    CHECK(run("extract --pcap " + out + "/cond_0" + idx + ".pcap --fieldmap " +
              fieldmap + " --out " + (tmp.path / ("qos_" + idx + ".csv")).string()) == 0);
    CHECK(fs::exists(tmp.path / ("qos_" + idx + ".csv")));
  }

  // train on two captures, eval on the third.
  const std::string train_files =
      " --qos " + (tmp.path / "qos_0.csv").string() + " --qos " +
      (tmp.path / "qos_1.csv").string() + " --truth " + out +
      "/cond_00.truth.json --truth " + out + "/cond_01.truth.json";
  const auto model = (tmp.path / "model.json").string();
  CHECK(run("train" + train_files + " --target bitrate --out " + model +
            " --seed 5 --trees 40") == 0);
  CHECK(fs::exists(model));

  const std::string eval_files = " --qos " + (tmp.path / "qos_2.csv").string() +
                                 " --truth " + out + "/cond_02.truth.json";
  const auto report = (tmp.path / "report.csv").string();
  const auto preds = (tmp.path / "preds.csv").string();
  CHECK(run("eval --model " + model + eval_files + " --report " + report +
            " --preds " + preds) == 0);
  const std::string report_text = slurp(report);
  CHECK(report_text.find("bitrate,") != std::string::npos);
  CHECK(slurp(preds).find("t_start_us,predicted,truth") == 0);

  // Shuffling the QoS rows must not change the report: alignment is by
  // timestamp.
  {
    std::ifstream in(tmp.path / "qos_2.csv");
    std::string header, line;
    std::getline(in, header);
    std::vector<std::string> rows;
    while (std::getline(in, line)) {
      if (!line.empty()) rows.push_back(line);
    }
    in.close();
    std::reverse(rows.begin(), rows.end());
    std::ofstream outf(tmp.path / "qos_2.csv", std::ios::trunc);
    outf << header << '\n';
    for (const auto& r : rows) outf << r << '\n';
  }
  CHECK(run("eval --model " + model + eval_files + " --report " + report +
            " --preds " + preds) == 0);
  CHECK(slurp(report) == report_text);
}

TEST_CASE("gen without a config uses the default 27-condition grid") {
  TempDir tmp;
  const auto cfg = tmp.path / "short.json";
  spit(cfg, "{\n  \"per_condition_s\": 2\n}\n");
  const auto out = (tmp.path / "grid").string();
  CHECK(run("gen --config " + cfg.string() + " --out " + out) == 0);
  CHECK(fs::exists(tmp.path / "grid/cond_26.pcap"));
  CHECK_FALSE(fs::exists(tmp.path / "grid/cond_27.pcap"));
  const auto manifest = slurp(tmp.path / "grid/manifest.json");
  CHECK(manifest.find("\"index\": 26") != std::string::npos);
}

TEST_CASE("training on single-gear data warns and still writes a model") {
  TempDir tmp;
  const auto cfg = tmp.path / "one.json";
  spit(cfg,
       "{\n  \"seed\": 3,\n  \"per_condition_s\": 10,\n"
       "  \"grid\": [{\"bandwidth_kbps\": 100000, \"loss_rate\": 0.0}],\n"
       "  \"encoder\": {\"gears\": [{\"bitrate_kbps\": 900, "
       "\"framerate_fps\": 30, \"width_px\": 1280}]}\n}\n");
  const auto out = (tmp.path / "one_runs").string();
  REQUIRE(run("gen --config " + cfg.string() + " --out " + out) == 0);
  // A same-stream field map comes from a quick discover over this pcap
  // repeated at one loss rate -- not valid calibration, so build the QoS
  // CSV through extract with a map discovered from scratch instead.
  const auto fieldmap = (tmp.path / "fm.json").string();
  std::string pcaps, losses;
  pcaps = " --pcap " + out + "/cond_00.pcap";
  losses = " --loss 0.0";
  // Single-loss calibration is rejected; reuse the main pipeline's map by
  // generating a proper calibration set.
  const auto cal_cfg = tmp.path / "cal.json";
  spit(cal_cfg, calibration_config());
  const auto cal_out = (tmp.path / "cal_runs").string();
  REQUIRE(run("gen --config " + cal_cfg.string() + " --out " + cal_out) == 0);
  std::string cal_pcaps, cal_losses;
  const double loss_values[] = {0.0, 0.02, 0.04, 0.06, 0.08, 0.10};
  for (int i = 0; i < 6; ++i) {
    cal_pcaps += " --pcap " + cal_out + "/cond_0" + std::to_string(i) + ".pcap";
    cal_losses += " --loss " + std::to_string(loss_values[i]);
  }
  REQUIRE(run("discover" + cal_pcaps + cal_losses + " --out " + fieldmap) == 0);
  const auto qos = (tmp.path / "one.csv").string();
  REQUIRE(run("extract --pcap " + out + "/cond_00.pcap --fieldmap " +
              fieldmap + " --out " + qos) == 0);

  const std::string cmd = kBin + " train --qos " + qos + " --truth " + out +
                          "/cond_00.truth.json --target resolution --out " +
                          (tmp.path / "m.json").string() + " 2> " +
                          (tmp.path / "warn.txt").string();
  const int status = std::system(cmd.c_str());
  CHECK(WEXITSTATUS(status) == 0);
  CHECK(slurp(tmp.path / "warn.txt").find("single") != std::string::npos);
  CHECK(fs::exists(tmp.path / "m.json"));
}

TEST_CASE("exit codes follow the error taxonomy") {
  TempDir tmp;

  // Usage errors -> 2.
  CHECK(run("extract --pcap missing.pcap") == 2);  // missing required flags
  CHECK(run("nonsense") == 2);

  // Malformed config JSON -> 3, message carries the line number.
  const auto bad_cfg = tmp.path / "bad.json";
  spit(bad_cfg, "{\n  \"seed\": 1,\n  broken\n}\n");
  {
    const std::string cmd = kBin + " gen --config " + bad_cfg.string() +
                            " --out " + (tmp.path / "x").string() +
                            " 2> " + (tmp.path / "err.txt").string();
    const int status = std::system(cmd.c_str());
    CHECK(WEXITSTATUS(status) == 3);
    const auto err = slurp(tmp.path / "err.txt");
    CHECK(err.find("line 3") != std::string::npos);
  }

  // Missing data file -> 3.
  CHECK(run("extract --pcap " + (tmp.path / "no.pcap").string() +
            " --fieldmap " + (tmp.path / "no.json").string() + " --out " +
            (tmp.path / "o.csv").string()) == 3);

  // Analysis failure -> 4: a flat FEC ratio defeats PT localization.
  const auto cfg = tmp.path / "flat.json";
  spit(cfg, calibration_config(0.0));
  const auto out = (tmp.path / "flat_runs").string();
  REQUIRE(run("gen --config " + cfg.string() + " --out " + out) == 0);
  std::string pcaps, losses;
  const double loss_values[] = {0.0, 0.02, 0.04, 0.06, 0.08, 0.10};
  for (int i = 0; i < 6; ++i) {
    pcaps += " --pcap " + out + "/cond_0" + std::to_string(i) + ".pcap";
    losses += " --loss " + std::to_string(loss_values[i]);
  }
  CHECK(run("discover" + pcaps + losses + " --out " +
            (tmp.path / "fm.json").string()) == 4);

  // A pcap without any UDP flow: no flows to analyze.
  const auto empty_pcap = tmp.path / "empty.pcap";
  {
    std::ofstream f(empty_pcap, std::ios::binary);
    const unsigned char header[] = {0xd4, 0xc3, 0xb2, 0xa1, 2, 0, 4, 0,
                                    0,    0,    0,    0,    0, 0, 0, 0,
                                    0xff, 0xff, 0,    0,    1, 0, 0, 0};
    f.write(reinterpret_cast<const char*>(header), sizeof(header));
  }
  CHECK(run("discover --pcap " + empty_pcap.string() +
            " --loss 0.0 --out " + (tmp.path / "fm2.json").string()) == 4);
}
