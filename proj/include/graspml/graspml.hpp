#pragma once

#include "graspml/checkpoint.hpp"
#include "graspml/config_maps.hpp"
#include "graspml/dataset.hpp"
#include "graspml/eval.hpp"
#include "graspml/experiment.hpp"
#include "graspml/geometry.hpp"
#include "graspml/grid.hpp"
#include "graspml/image_io.hpp"
#include "graspml/losses.hpp"
#include "graspml/model.hpp"
#include "graspml/optimizer.hpp"
#include "graspml/oracle.hpp"
#include "graspml/random.hpp"
#include "graspml/render.hpp"
#include "graspml/shapes.hpp"
#include "graspml/toy.hpp"
