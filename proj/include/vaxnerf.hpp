#pragma once

#include "vaxnerf/adam.hpp"
#include "vaxnerf/camera.hpp"
#include "vaxnerf/checkpoint.hpp"
#include "vaxnerf/config.hpp"
#include "vaxnerf/encoding.hpp"
#include "vaxnerf/error.hpp"
#include "vaxnerf/eval.hpp"
#include "vaxnerf/hull.hpp"
#include "vaxnerf/image.hpp"
#include "vaxnerf/metrics.hpp"
#include "vaxnerf/mlp.hpp"
#include "vaxnerf/model.hpp"
#include "vaxnerf/parallel.hpp"
#include "vaxnerf/pipeline.hpp"
#include "vaxnerf/render.hpp"
#include "vaxnerf/rng.hpp"
#include "vaxnerf/sampling.hpp"
#include "vaxnerf/scene_io.hpp"
#include "vaxnerf/synthetic.hpp"
#include "vaxnerf/training.hpp"
