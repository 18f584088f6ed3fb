#pragma once

#include "mv3d/autodiff.hpp"
#include "mv3d/box_csv.hpp"
#include "mv3d/config.hpp"
#include "mv3d/error.hpp"
#include "mv3d/eval.hpp"
#include "mv3d/fusenet.hpp"
#include "mv3d/geom3d.hpp"
#include "mv3d/gradcheck.hpp"
#include "mv3d/grid_io.hpp"
#include "mv3d/kitti_io.hpp"
#include "mv3d/pipeline.hpp"
#include "mv3d/proposal.hpp"
#include "mv3d/rng.hpp"
#include "mv3d/roi.hpp"
#include "mv3d/scenegen.hpp"
#include "mv3d/tensor.hpp"
#include "mv3d/train.hpp"
#include "mv3d/view_encode.hpp"
