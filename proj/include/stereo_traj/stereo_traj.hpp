#pragma once

#include "stereo_traj/assignment.hpp"
#include "stereo_traj/errors.hpp"
#include "stereo_traj/flow.hpp"
#include "stereo_traj/geometry.hpp"
#include "stereo_traj/log.hpp"
#include "stereo_traj/mask.hpp"
#include "stereo_traj/parallel.hpp"
#include "stereo_traj/pipeline.hpp"
#include "stereo_traj/problem.hpp"
#include "stereo_traj/recon.hpp"
#include "stereo_traj/refine.hpp"
#include "stereo_traj/solver.hpp"
#include "stereo_traj/stereo.hpp"
#include "stereo_traj/synth.hpp"
#include "stereo_traj/tracking.hpp"
#include "stereo_traj/trajectory.hpp"
