#pragma once

// File-level pipeline stages used by the stereo-traj tool.
//
// Directory layout shared by synth, track and run:
//   masks/frame_NNNN_left.pgm, masks/frame_NNNN_right.pgm   instance labels
//   flow/ln_NNNN.flo    left NNNN -> left NNNN+1
//   flow/lr_NNNN.flo    left NNNN -> right NNNN
//   object_recon.json, background_recon.json
//   scene.json          ground truth (synth only)
//
// `run` writes tracks/, the refined reconstructions with their reports and
// the trajectory exports under one output directory.

#include "json.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <string>
#include <vector>

#include "stereo_traj/errors.hpp"
#include "stereo_traj/flow.hpp"
#include "stereo_traj/log.hpp"
#include "stereo_traj/mask.hpp"
#include "stereo_traj/recon.hpp"
#include "stereo_traj/refine.hpp"
#include "stereo_traj/synth.hpp"
#include "stereo_traj/tracking.hpp"
#include "stereo_traj/trajectory.hpp"

namespace stereo_traj {

namespace fs = std::filesystem;

inline std::string frame_name(const char* pattern, int frame) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, frame);
  return buf;
}

inline std::string mask_file(int frame, Side side) {
  return frame_name(side == Side::left ? "frame_%04d_left.pgm" : "frame_%04d_right.pgm", frame);
}
inline std::string temporal_flow_file(int frame) { return frame_name("ln_%04d.flo", frame); }
inline std::string stereo_flow_file(int frame) { return frame_name("lr_%04d.flo", frame); }
inline std::string track_file(int frame) { return frame_name("frame_%04d.json", frame); }

inline void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

template <typename Json>
void write_json_file(const Json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(1) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

inline nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

/// Frame indices with a left mask file, ascending. They must be contiguous.
inline std::vector<int> discover_frames(const fs::path& masks_dir) {
  if (!fs::is_directory(masks_dir)) throw IoError("no mask directory " + masks_dir.string());
  static const std::regex pattern(R"(frame_(\d+)_left\.pgm)");
  std::vector<int> frames;
  for (const auto& entry : fs::directory_iterator(masks_dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern)) frames.push_back(std::stoi(m[1].str()));
  }
  std::sort(frames.begin(), frames.end());
  if (frames.empty()) throw IoError("no left masks in " + masks_dir.string());
  for (std::size_t k = 1; k < frames.size(); ++k) {
    if (frames[k] != frames[k - 1] + 1) {
      throw FrameOrderError("mask frames are not contiguous: " + std::to_string(frames[k - 1]) +
                            " then " + std::to_string(frames[k]));
    }
  }
  return frames;
}

// ---------------------------------------------------------------------------
// track

struct TrackOptions {
  fs::path masks_dir;
  fs::path flow_dir;
  fs::path out_dir;  // receives one JSON file per frame
  TrackingConfig tracking;
};

struct TrackSummary {
  int frames = 0;
  int tracks = 0;
  std::size_t stereo_links = 0;
};

namespace detail {

inline nlohmann::ordered_json mask_ref(const InstanceMask& m) {
  return {{"file", mask_file(m.frame_index(), m.side())}, {"label", m.instance_label()}};
}

inline nlohmann::ordered_json track_frame_json(const TrackerState& state) {
  nlohmann::ordered_json tracks = nlohmann::ordered_json::object();
  for (const auto& t : state.tracks) {
    const auto l = t.left.find(state.frame);
    if (l == t.left.end()) continue;
    nlohmann::ordered_json entry;
    entry["left"] = mask_ref(l->second);
    const auto r = t.right.find(state.frame);
    entry["right"] = r == t.right.end() ? nlohmann::ordered_json(nullptr) : mask_ref(r->second);
    tracks[std::to_string(t.id)] = std::move(entry);
  }
  nlohmann::ordered_json j;
  j["frame"] = state.frame;
  j["tracks"] = std::move(tracks);
  return j;
}

inline std::vector<InstanceMask> load_detections(const fs::path& dir, int frame, Side side,
                                                 std::size_t min_area) {
  return extract_instances(read_pgm((dir / mask_file(frame, side)).string()), frame, side,
                           min_area);
}

}  // namespace detail

inline TrackSummary cmd_track(const TrackOptions& opt, Logger& log = Logger::silent()) {
  const StageTimer timer;
  const std::vector<int> frames = discover_frames(opt.masks_dir);
  ensure_directory(opt.out_dir);
  const TrackingConfig& cfg = opt.tracking;
  TrackSummary summary;

  TrackerState state;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const int f = frames[k];
    auto left = detail::load_detections(opt.masks_dir, f, Side::left, cfg.min_mask_area);
    if (k == 0) {
      state = start_tracking(f, left);
    } else {
      FlowField ln = read_flo((opt.flow_dir / temporal_flow_file(f - 1)).string());
      ln.between(f - 1, Side::left, f, Side::left);
      state = step_temporal(std::move(state), ln, left, cfg);
    }
    auto right = detail::load_detections(opt.masks_dir, f, Side::right, cfg.min_mask_area);
    FlowField lr = read_flo((opt.flow_dir / stereo_flow_file(f)).string());
    lr.between(f, Side::left, f, Side::right);
    state = associate_stereo(std::move(state), lr, right, cfg);

    const auto j = detail::track_frame_json(state);
    for (const auto& [id, entry] : j["tracks"].items()) {
      summary.stereo_links += static_cast<std::size_t>(!entry["right"].is_null());
    }
    write_json_file(j, opt.out_dir / track_file(f));
    log.debug("track.frame", {{"frame", f},
                              {"left_detections", left.size()},
                              {"right_detections", right.size()},
                              {"active", state.count(TrackStatus::active)},
                              {"lost", state.count(TrackStatus::lost)}});
  }
  summary.frames = static_cast<int>(frames.size());
  summary.tracks = state.next_id - 1;
  log.info("track.done", {{"frames", summary.frames},
                          {"tracks", summary.tracks},
                          {"stereo_links", summary.stereo_links},
                          {"seconds", timer.seconds()}});
  return summary;
}

// ---------------------------------------------------------------------------
// refine

struct RefineOptions {
  fs::path input;
  fs::path output;
  fs::path report;  // optional
  RefineConfig refine;
};

inline RefineResult refine_stage(const Reconstruction& recon, const RefineConfig& cfg,
                                 const std::string& name, Logger& log) {
  const StageTimer timer;
  RefineResult result = refine_reconstruction(recon, cfg);
  const RefineReport& r = result.report;
  if (!r.solver.converged) {
    log.warn("refine.not_converged", {{"input", name}, {"iterations", r.solver.iterations}});
  }
  log.debug("refine.stats", {{"input", name},
                             {"applied_scale", r.applied_scale},
                             {"stereo_observations", r.stereo_observations},
                             {"mono_observations", r.mono_observations},
                             {"initial_rms_px", r.solver.initial_breakdown.rms()},
                             {"final_rms_px", r.solver.final_breakdown.rms()},
                             {"final_stereo_rms_px", r.solver.final_breakdown.stereo_rms()},
                             {"excluded_blocks", r.solver.excluded_blocks.size()},
                             {"cost_history", r.solver.cost_history}});
  log.info("refine.done", {{"input", name},
                           {"iterations", r.solver.iterations},
                           {"termination", to_string(r.solver.termination)},
                           {"final_cost", r.solver.final_cost},
                           {"seconds", timer.seconds()}});
  return result;
}

inline RefineResult cmd_refine(const RefineOptions& opt, Logger& log = Logger::silent()) {
  const Reconstruction recon = load_reconstruction(opt.input.string());
  RefineResult result = refine_stage(recon, opt.refine, opt.input.filename().string(), log);
  save_reconstruction(result.reconstruction, opt.output.string());
  if (!opt.report.empty()) write_json_file(to_json(result.report), opt.report);
  return result;
}

// ---------------------------------------------------------------------------
// trajectory

struct TrajectoryOptions {
  fs::path object;
  fs::path background;
  fs::path csv;
  fs::path ply;   // optional
  fs::path json;  // optional; needed by eval
  double scale_tolerance = kScaleMismatchTolerance;
};

inline Trajectory trajectory_stage(const Reconstruction& obj, const Reconstruction& bg,
                                   double scale_tolerance, Logger& log) {
  const StageTimer timer;
  const std::vector<FramePair> pairs = pair_frames(obj, bg);
  Trajectory traj = compose_trajectory(obj, bg, pairs, scale_tolerance);
  log.info("trajectory.done", {{"frames", traj.frames.size()},
                               {"points", traj.num_points()},
                               {"seconds", timer.seconds()}});
  return traj;
}

inline void write_trajectory_outputs(const Trajectory& traj, const TrajectoryOptions& opt) {
  write_trajectory_csv(traj, opt.csv.string());
  if (!opt.ply.empty()) write_trajectory_ply(traj, opt.ply.string());
  if (!opt.json.empty()) write_trajectory_json(traj, opt.json.string());
}

inline Trajectory cmd_trajectory(const TrajectoryOptions& opt, Logger& log = Logger::silent()) {
  const Reconstruction obj = load_reconstruction(opt.object.string());
  const Reconstruction bg = load_reconstruction(opt.background.string());
  Trajectory traj = trajectory_stage(obj, bg, opt.scale_tolerance, log);
  write_trajectory_outputs(traj, opt);
  return traj;
}

// ---------------------------------------------------------------------------
// run

struct RunOptions {
  fs::path input_dir;
  fs::path out_dir;
  TrackingConfig tracking;
  RefineConfig refine;
  double scale_tolerance = kScaleMismatchTolerance;
};

/// Paths that `run` reads and writes; also what the chained commands use.
struct RunLayout {
  fs::path masks, flow, object_in, background_in;
  fs::path tracks, object_out, object_report, background_out, background_report;
  fs::path csv, ply, json;

  RunLayout(const fs::path& in, const fs::path& out)
      : masks(in / "masks"),
        flow(in / "flow"),
        object_in(in / "object_recon.json"),
        background_in(in / "background_recon.json"),
        tracks(out / "tracks"),
        object_out(out / "object_refined.json"),
        object_report(out / "object_report.json"),
        background_out(out / "background_refined.json"),
        background_report(out / "background_report.json"),
        csv(out / "trajectory.csv"),
        ply(out / "trajectory.ply"),
        json(out / "trajectory.json") {}
};

inline Trajectory cmd_run(const RunOptions& opt, Logger& log = Logger::silent()) {
  const StageTimer timer;
  const RunLayout p(opt.input_dir, opt.out_dir);
  ensure_directory(opt.out_dir);

  cmd_track({p.masks, p.flow, p.tracks, opt.tracking}, log);

  const Reconstruction obj_in = load_reconstruction(p.object_in.string());
  const Reconstruction bg_in = load_reconstruction(p.background_in.string());
  const RefineResult obj = refine_stage(obj_in, opt.refine, p.object_in.filename().string(), log);
  save_reconstruction(obj.reconstruction, p.object_out.string());
  write_json_file(to_json(obj.report), p.object_report);
  const RefineResult bg = refine_stage(bg_in, opt.refine, p.background_in.filename().string(), log);
  save_reconstruction(bg.reconstruction, p.background_out.string());
  write_json_file(to_json(bg.report), p.background_report);

  Trajectory traj =
      trajectory_stage(obj.reconstruction, bg.reconstruction, opt.scale_tolerance, log);
  write_trajectory_outputs(traj, {{}, {}, p.csv, p.ply, p.json, opt.scale_tolerance});
  log.info("run.done", {{"seconds", timer.seconds()}});
  return traj;
}

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
  fs::path out_dir;
  std::uint64_t seed = 1;
  SceneConfig scene;
  NoiseConfig noise;
};

/// Scene with `count` objects staggered in depth, all following `family`.
inline SceneConfig standard_scene(int count, MotionFamily family, int frames = 12) {
  static const Eigen::Vector3d starts[] = {
      {2.0, 0.5, 12.0}, {-3.0, 0.3, 16.0}, {5.0, 0.4, 20.0}, {-6.0, 0.2, 24.0}};
  static const Eigen::Vector3d velocities[] = {
      {-0.15, 0.0, 0.4}, {0.1, 0.0, 0.5}, {-0.2, 0.0, 0.3}, {0.25, 0.0, 0.45}};
  if (count < 1 || count > 4) throw ParseError("object count must be between 1 and 4");
  SceneConfig c;
  c.frames = frames;
  c.objects.clear();
  for (int k = 0; k < count; ++k) {
    ObjectMotionConfig m;
    m.family = family;
    m.start = starts[k];
    m.velocity = velocities[k];
    c.objects.push_back(m);
  }
  return c;
}

inline void write_rendered(const SceneGroundTruth& scene, const RenderedScene& r,
                           const fs::path& out) {
  ensure_directory(out / "masks");
  ensure_directory(out / "flow");
  for (int f = 0; f < scene.frames(); ++f) {
    write_pgm(r.images.left[f], (out / "masks" / mask_file(f, Side::left)).string());
    write_pgm(r.images.right[f], (out / "masks" / mask_file(f, Side::right)).string());
    write_flo(r.images.flow_lr[f], (out / "flow" / stereo_flow_file(f)).string());
    if (f + 1 < scene.frames()) {
      write_flo(r.images.flow_ln[f], (out / "flow" / temporal_flow_file(f)).string());
    }
  }
  save_reconstruction(r.reconstructions.object, (out / "object_recon.json").string());
  save_reconstruction(r.reconstructions.background, (out / "background_recon.json").string());
  nlohmann::json scene_json = to_json(scene);
  scene_json["object_scale"] = r.reconstructions.object_gauge.scale;
  scene_json["outlier_cameras"] = r.reconstructions.outlier_cameras;
  write_json_file(scene_json, out / "scene.json");
}

inline SceneGroundTruth cmd_synth(const SynthOptions& opt, Logger& log = Logger::silent()) {
  const StageTimer timer;
  const SceneGroundTruth scene = generate_scene(opt.scene, opt.seed);
  const RenderedScene rendered = render_observations(scene, opt.noise, opt.seed);
  write_rendered(scene, rendered, opt.out_dir);
  log.info("synth.done", {{"frames", scene.frames()},
                          {"objects", scene.objects.size()},
                          {"object_points", rendered.reconstructions.object.points.size()},
                          {"background_points", rendered.reconstructions.background.points.size()},
                          {"object_scale", rendered.reconstructions.object_gauge.scale},
                          {"seconds", timer.seconds()}});
  return scene;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  fs::path trajectory;  // JSON export
  fs::path scene;
  fs::path output;      // optional; stdout otherwise
  std::size_t object = 0;
};

inline TrajectoryScore cmd_eval(const EvalOptions& opt, Logger& log = Logger::silent()) {
  const Trajectory traj = read_trajectory_json(opt.trajectory.string());
  const SceneGroundTruth scene = scene_from_json(read_json_file(opt.scene));
  TrajectoryScore score = score_trajectory(traj, scene, opt.object);
  if (!opt.output.empty()) write_json_file(to_json(score), opt.output);
  log.info("eval.done", {{"rmse", score.rmse}, {"relative_rmse", score.relative_rmse()}});
  return score;
}

}  // namespace stereo_traj
