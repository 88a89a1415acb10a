#pragma once

#include "dadkit/config.hpp"
#include "dadkit/core.hpp"
#include "dadkit/distill.hpp"
#include "dadkit/error.hpp"
#include "dadkit/eval.hpp"
#include "dadkit/geometry.hpp"
#include "dadkit/gradcheck.hpp"
#include "dadkit/grid.hpp"
#include "dadkit/io.hpp"
#include "dadkit/model.hpp"
#include "dadkit/objective.hpp"
#include "dadkit/parallel.hpp"
#include "dadkit/sampler.hpp"
#include "dadkit/synth.hpp"
#include "dadkit/train.hpp"
