// stereo-traj: command-line front end.
//
//   stereo-traj [--config FILE] [--log-level L] [--threads N] <command> [flags]
//
// Exit codes: 0 ok, 2 parse/usage, 3 numerical, 4 infeasible, 5 io, 1 other.

#include "CLI11.hpp"

#include <iostream>
#include <string>

#include "stereo_traj/stereo_traj.hpp"

namespace st = stereo_traj;

namespace {

int exit_code(st::ErrorFamily f) {
  switch (f) {
    case st::ErrorFamily::parse: return 2;
    case st::ErrorFamily::numerical: return 3;
    case st::ErrorFamily::infeasible: return 4;
    case st::ErrorFamily::io: return 5;
  }
  return 1;
}

struct TrackingFlags {
  st::TrackingConfig cfg;
  std::string measure = "iou";

  void add(CLI::App* app) {
    app->add_option("--min-overlap", cfg.min_overlap, "Minimum overlap for an association")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    app->add_option("--max-lost", cfg.max_lost, "Frames a track may stay unmatched")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    app->add_option("--min-mask-area", cfg.min_mask_area, "Smallest detection kept, in pixels")
        ->capture_default_str();
    app->add_option("--overlap", measure, "Overlap measure")
        ->check(CLI::IsMember({"iou", "iop"}))
        ->capture_default_str();
  }

  st::TrackingConfig get(unsigned threads) const {
    st::TrackingConfig c = cfg;
    c.measure = measure == "iop" ? st::OverlapMeasure::intersection_over_prediction
                                 : st::OverlapMeasure::iou;
    c.threads = threads;
    return c;
  }
};

struct RefineFlags {
  st::RefineConfig cfg;

  void add(CLI::App* app) {
    app->add_option("--nominal-baseline", cfg.nominal_baseline, "Rig baseline in output units")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app->add_option("--huber-width", cfg.huber_width, "Huber loss width in pixels")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app->add_option("--y-tolerance", cfg.y_tolerance, "Max row difference of a stereo pair (px)")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app->add_option("--max-iterations", cfg.solver.max_iterations, "Solver iteration budget")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    app->add_option("--function-tolerance", cfg.solver.function_tolerance,
                    "Stop below this relative cost decrease")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    app->add_option("--gradient-tolerance", cfg.solver.gradient_tolerance,
                    "Stop below this gradient max-norm")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
  }

  st::RefineConfig get(unsigned threads) const {
    st::RefineConfig c = cfg;
    c.solver.threads = threads;
    return c;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Object trajectory reconstruction from stereo image sequences", "stereo-traj"};
  app.set_config("--config", "", "INI file of key = value defaults; flags override it");
  app.require_subcommand(1);

  std::string log_level = "warn";
  unsigned threads = 1;
  app.add_option("--log-level", log_level, "error, warn, info or debug (JSON lines on stderr)")
      ->check(CLI::IsMember({"error", "warn", "info", "debug"}))
      ->capture_default_str();
  app.add_option("--threads", threads, "Upper bound on worker threads")
      ->check(CLI::Range(1u, 256u))
      ->capture_default_str();

  // synth
  st::SynthOptions synth;
  int synth_objects = 1;
  int synth_frames = 12;
  std::string motion = "linear";
  st::SceneConfig scene_overrides;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic scene and its inputs");
  synth_cmd->add_option("--out", synth.out_dir, "Output directory")->required();
  synth_cmd->add_option("--seed", synth.seed, "Random seed")->capture_default_str();
  synth_cmd->add_option("--frames", synth_frames, "Number of frames")
      ->check(CLI::Range(2, 10000))
      ->capture_default_str();
  synth_cmd->add_option("--objects", synth_objects, "Number of moving objects")
      ->check(CLI::Range(1, 4))
      ->capture_default_str();
  synth_cmd->add_option("--motion", motion, "Object motion family")
      ->check(CLI::IsMember({"linear", "arc", "piecewise"}))
      ->capture_default_str();
  synth_cmd->add_option("--baseline", scene_overrides.baseline, "True rig baseline")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  synth_cmd->add_option("--background-points", scene_overrides.background_points)
      ->check(CLI::Range(8, 1000000))
      ->capture_default_str();
  synth_cmd->add_option("--object-points", scene_overrides.object_points)
      ->check(CLI::Range(4, 1000000))
      ->capture_default_str();
  synth_cmd->add_option("--pixel-sigma", synth.noise.pixel_sigma, "Observation noise (px)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  synth_cmd->add_option("--pose-rot-sigma", synth.noise.pose_rot_sigma, "Pose noise (deg)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  synth_cmd->add_option("--pose-trans-sigma", synth.noise.pose_trans_sigma,
                        "Pose noise (fraction of extent)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  synth_cmd->add_option("--point-sigma", synth.noise.point_sigma,
                        "Point noise (fraction of extent)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  synth_cmd->add_option("--scale-min", synth.noise.scale_min, "Object scale, lower bound")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  synth_cmd->add_option("--scale-max", synth.noise.scale_max, "Object scale, upper bound")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  synth_cmd->add_option("--outliers", synth.noise.outlier_camera_count,
                        "Object cameras given a 90 degree rotation error")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();

  // track
  st::TrackOptions track;
  TrackingFlags track_flags;
  auto* track_cmd = app.add_subcommand("track", "Stereo mask tracking");
  track_cmd->add_option("--masks", track.masks_dir, "Directory of PGM label masks")->required();
  track_cmd->add_option("--flow", track.flow_dir, "Directory of .flo flow fields")->required();
  track_cmd->add_option("--out", track.out_dir, "Directory for per-frame track files")
      ->required();
  track_flags.add(track_cmd);

  // refine
  st::RefineOptions refine;
  RefineFlags refine_flags;
  auto* refine_cmd = app.add_subcommand("refine", "Stereo refinement of one reconstruction");
  refine_cmd->add_option("--input", refine.input, "Reconstruction JSON")->required();
  refine_cmd->add_option("--output", refine.output, "Refined reconstruction JSON")->required();
  refine_cmd->add_option("--report", refine.report, "Refinement report JSON");
  refine_flags.add(refine_cmd);

  // trajectory
  st::TrajectoryOptions traj;
  auto* traj_cmd = app.add_subcommand("trajectory", "Object trajectory in the background frame");
  traj_cmd->add_option("--object", traj.object, "Refined object reconstruction")->required();
  traj_cmd->add_option("--background", traj.background, "Refined background reconstruction")
      ->required();
  traj_cmd->add_option("--csv", traj.csv, "CSV output")->required();
  traj_cmd->add_option("--ply", traj.ply, "PLY output");
  traj_cmd->add_option("--json", traj.json, "JSON output (input of eval)");
  traj_cmd->add_option("--scale-tolerance", traj.scale_tolerance,
                       "Allowed relative baseline mismatch")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  // run
  st::RunOptions run;
  TrackingFlags run_tracking;
  RefineFlags run_refine;
  auto* run_cmd = app.add_subcommand("run", "Full pipeline: track, refine twice, trajectory");
  run_cmd->add_option("--input", run.input_dir, "Input directory (masks/, flow/, recons)")
      ->required();
  run_cmd->add_option("--out", run.out_dir, "Output directory")->required();
  run_cmd->add_option("--scale-tolerance", run.scale_tolerance,
                      "Allowed relative baseline mismatch")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  run_tracking.add(run_cmd);
  run_refine.add(run_cmd);

  // eval
  st::EvalOptions eval;
  auto* eval_cmd = app.add_subcommand("eval", "Score a trajectory against a synthetic scene");
  eval_cmd->add_option("--trajectory", eval.trajectory, "Trajectory JSON")->required();
  eval_cmd->add_option("--scene", eval.scene, "scene.json written by synth")->required();
  eval_cmd->add_option("--output", eval.output, "Score JSON (stdout if omitted)");
  eval_cmd->add_option("--object", eval.object, "Scene object index")->capture_default_str();

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

  st::Logger log(st::log_level_from_string(log_level));
  try {
    if (*synth_cmd) {
      synth.scene = st::standard_scene(synth_objects, st::motion_family_from_string(motion),
                                       synth_frames);
      synth.scene.baseline = scene_overrides.baseline;
      synth.scene.background_points = scene_overrides.background_points;
      synth.scene.object_points = scene_overrides.object_points;
      st::cmd_synth(synth, log);
    } else if (*track_cmd) {
      track.tracking = track_flags.get(threads);
      st::cmd_track(track, log);
    } else if (*refine_cmd) {
      refine.refine = refine_flags.get(threads);
      st::cmd_refine(refine, log);
    } else if (*traj_cmd) {
      st::cmd_trajectory(traj, log);
    } else if (*run_cmd) {
      run.tracking = run_tracking.get(threads);
      run.refine = run_refine.get(threads);
      st::cmd_run(run, log);
    } else if (*eval_cmd) {
      const st::TrajectoryScore score = st::cmd_eval(eval, log);
      if (eval.output.empty()) std::cout << st::to_json(score).dump(1) << '\n';
    }
  } catch (const st::Error& e) {
    log.debug("failed", {{"exit_code", exit_code(e.family())}, {"message", e.what()}});
    std::cerr << "stereo-traj: " << e.what() << '\n';
    return exit_code(e.family());
  } catch (const std::exception& e) {
    std::cerr << "stereo-traj: unexpected error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
