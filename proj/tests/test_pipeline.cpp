#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "stereo_traj/pipeline.hpp"

using namespace stereo_traj;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot =
    fs::temp_directory_path() / ("stereo_traj_pipeline_" + std::to_string(::getpid()));

struct Result {
  int code = -1;
  std::string err;
};

// Runs the CLI with `args`, capturing stderr.
Result cli(const std::string& args) {
  fs::create_directories(kRoot);
  const fs::path err = kRoot / "stderr.txt";
  const std::string cmd =
      std::string("\"") + STEREO_TRAJ_CLI + "\" " + args + " > /dev/null 2> \"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(err);
  std::stringstream ss;
  ss << in.rdbuf();
  r.err = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  EXPECT_TRUE(in) << p;
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

// Relative paths of all regular files under `dir`, sorted.
std::vector<std::string> files_under(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), dir).string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void expect_same_tree(const fs::path& a, const fs::path& b) {
  const auto fa = files_under(a), fb = files_under(b);
  ASSERT_EQ(fa, fb);
  for (const auto& f : fa) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

// One synthetic input shared by the tests in this file.
const fs::path& scene_dir() {
  static const fs::path dir = [] {
    const fs::path d = kRoot / "scene";
    fs::remove_all(d);
    const Result r = cli("synth --out " + q(d) +
                         " --seed 7 --frames 8 --objects 2 --motion arc --pixel-sigma 0.5"
                         " --pose-rot-sigma 1 --pose-trans-sigma 0.01 --scale-min 3 --scale-max 3");
    EXPECT_EQ(r.code, 0) << r.err;
    return d;
  }();
  return dir;
}

}  // namespace

TEST(Cli, SynthWritesTheInputLayout) {
  const fs::path& d = scene_dir();
  EXPECT_TRUE(fs::exists(d / "masks" / mask_file(0, Side::left)));
  EXPECT_TRUE(fs::exists(d / "masks" / mask_file(7, Side::right)));
  EXPECT_TRUE(fs::exists(d / "flow" / temporal_flow_file(6)));
  EXPECT_FALSE(fs::exists(d / "flow" / temporal_flow_file(7)));
  EXPECT_TRUE(fs::exists(d / "flow" / stereo_flow_file(7)));
  EXPECT_NO_THROW(load_reconstruction((d / "object_recon.json").string()));
  EXPECT_NO_THROW(load_reconstruction((d / "background_recon.json").string()));
  const auto scene = read_json_file(d / "scene.json");
  EXPECT_DOUBLE_EQ(scene.at("object_scale").get<double>(), 3.0);
}

TEST(Cli, RunEqualsChainedCommandsByteForByte) {
  const fs::path& in = scene_dir();
  const fs::path run = kRoot / "run", chain = kRoot / "chain";
  fs::remove_all(run);
  fs::remove_all(chain);
  const std::string refine_flags = " --nominal-baseline 0.5";
  ASSERT_EQ(cli("run --input " + q(in) + " --out " + q(run) + refine_flags).code, 0);

  const RunLayout p(in, chain);
  fs::create_directories(chain);
  Result r = cli("track --masks " + q(p.masks) + " --flow " + q(p.flow) + " --out " + q(p.tracks));
  ASSERT_EQ(r.code, 0) << r.err;
  r = cli("refine --input " + q(p.object_in) + " --output " + q(p.object_out) + " --report " +
          q(p.object_report) + refine_flags);
  ASSERT_EQ(r.code, 0) << r.err;
  r = cli("refine --input " + q(p.background_in) + " --output " + q(p.background_out) +
          " --report " + q(p.background_report) + refine_flags);
  ASSERT_EQ(r.code, 0) << r.err;
  r = cli("trajectory --object " + q(p.object_out) + " --background " + q(p.background_out) +
          " --csv " + q(p.csv) + " --ply " + q(p.ply) + " --json " + q(p.json));
  ASSERT_EQ(r.code, 0) << r.err;

  expect_same_tree(run, chain);
  EXPECT_EQ(files_under(run / "tracks").size(), 8u);
}

TEST(Cli, RerunIsDeterministicAcrossThreadCounts) {
  const fs::path& in = scene_dir();
  const fs::path a = kRoot / "det_a", b = kRoot / "det_b";
  fs::remove_all(a);
  fs::remove_all(b);
  ASSERT_EQ(cli("run --input " + q(in) + " --out " + q(a) + " --nominal-baseline 0.5").code, 0);
  ASSERT_EQ(cli("--threads 4 run --input " + q(in) + " --out " + q(b) + " --nominal-baseline 0.5")
                .code,
            0);
  expect_same_tree(a, b);
}

TEST(Cli, TracksFollowBothObjects) {
  const fs::path& in = scene_dir();
  const fs::path out = kRoot / "tracks_only";
  fs::remove_all(out);
  ASSERT_EQ(cli("track --masks " + q(in / "masks") + " --flow " + q(in / "flow") + " --out " +
                q(out))
                .code,
            0);
  // Ground-truth label k+1 belongs to object k; identities must not switch.
  std::map<int, std::string> owner;
  for (int f = 0; f < 8; ++f) {
    const auto j = read_json_file(out / track_file(f));
    EXPECT_EQ(j.at("frame").get<int>(), f);
    for (const auto& [id, t] : j.at("tracks").items()) {
      const int label = t.at("left").at("label").get<int>();
      if (!owner.count(label)) owner[label] = id;
      EXPECT_EQ(owner[label], id) << "frame " << f << " label " << label;
      ASSERT_FALSE(t.at("right").is_null()) << "frame " << f;
      EXPECT_EQ(t.at("right").at("label").get<int>(), label);
    }
  }
  EXPECT_EQ(owner.size(), 2u);
}

TEST(Cli, EvalScoresTheRun) {
  const fs::path& in = scene_dir();
  const fs::path out = kRoot / "eval_run";
  fs::remove_all(out);
  ASSERT_EQ(cli("run --input " + q(in) + " --out " + q(out) + " --nominal-baseline 0.5").code, 0);
  const fs::path score = out / "score.json";
  ASSERT_EQ(cli("eval --trajectory " + q(out / "trajectory.json") + " --scene " +
                q(in / "scene.json") + " --output " + q(score))
                .code,
            0);
  const auto j = read_json_file(score);
  EXPECT_LT(j.at("relative_rmse").get<double>(), 0.05);
  EXPECT_EQ(j.at("per_frame").size(), 8u);
}

TEST(Cli, ConfigFileIsOverriddenByFlags) {
  const fs::path& in = scene_dir();
  const fs::path cfg = kRoot / "refine.ini";
  std::ofstream(cfg) << "[refine]\nnominal-baseline = 0.7\nhuber-width = 2.0\n";
  const fs::path obj = in / "object_recon.json";
  const fs::path from_cfg = kRoot / "cfg.json", from_flag = kRoot / "flag.json";
  ASSERT_EQ(cli("--config " + q(cfg) + " refine --input " + q(obj) + " --output " + q(from_cfg))
                .code,
            0);
  ASSERT_EQ(cli("--config " + q(cfg) + " refine --input " + q(obj) + " --output " +
                q(from_flag) + " --nominal-baseline 0.25")
                .code,
            0);
  EXPECT_NEAR(median_baseline(load_reconstruction(from_cfg.string())), 0.7, 1e-12);
  EXPECT_NEAR(median_baseline(load_reconstruction(from_flag.string())), 0.25, 1e-12);
}

TEST(Cli, ExitCodes) {
  const fs::path& in = scene_dir();
  // Parse errors.
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
  EXPECT_EQ(cli("refine --input x.json").code, 2);
  EXPECT_EQ(cli("--threads 0 eval --trajectory a --scene b").code, 2);
  EXPECT_EQ(cli("track --masks a --flow b --out c --overlap dice").code, 2);
  const fs::path bad = kRoot / "bad.json";
  std::ofstream(bad) << "{\"kind\": \"object\", \"cameras\": [";
  EXPECT_EQ(cli("refine --input " + q(bad) + " --output " + q(kRoot / "o.json")).code, 2);

  // I/O: missing flow file, named in the message.
  const fs::path broken = kRoot / "broken";
  fs::remove_all(broken);
  fs::copy(in, broken, fs::copy_options::recursive);
  fs::remove(broken / "flow" / temporal_flow_file(3));
  const Result r = cli("track --masks " + q(broken / "masks") + " --flow " +
                       q(broken / "flow") + " --out " + q(kRoot / "broken_tracks"));
  EXPECT_EQ(r.code, 5);
  EXPECT_NE(r.err.find(temporal_flow_file(3)), std::string::npos) << r.err;
  EXPECT_EQ(cli("refine --input " + q(kRoot / "nope.json") + " --output x.json").code, 5);

  // Infeasible: no frames in common.
  Reconstruction obj = load_reconstruction((in / "object_recon.json").string());
  Reconstruction bg = load_reconstruction((in / "background_recon.json").string());
  std::erase_if(obj.cameras, [](const CameraRecord& c) { return c.frame > 2; });
  std::erase_if(bg.cameras, [](const CameraRecord& c) { return c.frame <= 2; });
  for (auto* rec : {&obj, &bg}) {
    for (auto& p : rec->points) {
      std::erase_if(p.observations, [&](const Observation& o) { return !rec->camera(o.camera_id); });
    }
    std::erase_if(rec->points, [](const PointRecord& p) { return p.observations.size() < 2; });
  }
  save_reconstruction(obj, (kRoot / "early.json").string());
  save_reconstruction(bg, (kRoot / "late.json").string());
  const Result nc = cli("trajectory --object " + q(kRoot / "early.json") + " --background " +
                        q(kRoot / "late.json") + " --csv " + q(kRoot / "nc.csv"));
  EXPECT_EQ(nc.code, 4);
  EXPECT_NE(nc.err.find("NoCommonFrames"), std::string::npos) << nc.err;
}

TEST(Cli, DebugLogsAreJsonLines) {
  const fs::path& in = scene_dir();
  const Result r = cli("--log-level debug refine --input " + q(in / "background_recon.json") +
                       " --output " + q(kRoot / "bg.json"));
  ASSERT_EQ(r.code, 0);
  std::istringstream lines(r.err);
  std::string line;
  int count = 0;
  bool saw_stats = false;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("level"));
    EXPECT_TRUE(j.contains("event"));
    saw_stats |= j.at("event") == "refine.stats";
    ++count;
  }
  EXPECT_GE(count, 2);
  EXPECT_TRUE(saw_stats);
}
