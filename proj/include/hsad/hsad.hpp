#pragma once

#include "hsad/binary_io.hpp"
#include "hsad/detector.hpp"
#include "hsad/error.hpp"
#include "hsad/evaluation.hpp"
#include "hsad/features.hpp"
#include "hsad/model_io.hpp"
#include "hsad/pipeline.hpp"
#include "hsad/signal.hpp"
#include "hsad/spectral.hpp"
#include "hsad/trace.hpp"
