#pragma once

#include "samdwich/adapter.hpp"
#include "samdwich/base64.hpp"
#include "samdwich/checkpoint.hpp"
#include "samdwich/config.hpp"
#include "samdwich/dataset.hpp"
#include "samdwich/encoders.hpp"
#include "samdwich/experiment.hpp"
#include "samdwich/io.hpp"
#include "samdwich/keyframes.hpp"
#include "samdwich/losses.hpp"
#include "samdwich/memory.hpp"
#include "samdwich/metrics.hpp"
#include "samdwich/model_params.hpp"
#include "samdwich/moments.hpp"
#include "samdwich/optim.hpp"
#include "samdwich/rng.hpp"
#include "samdwich/supervision.hpp"
#include "samdwich/synth.hpp"
#include "samdwich/tensor.hpp"
#include "samdwich/training.hpp"
