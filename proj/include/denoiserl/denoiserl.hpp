#pragma once

#include "denoiserl/common.hpp"
#include "denoiserl/config.hpp"
#include "denoiserl/metrics.hpp"
#include "denoiserl/objective.hpp"
#include "denoiserl/optimizer.hpp"
#include "denoiserl/policy.hpp"
#include "denoiserl/pool.hpp"
#include "denoiserl/rollout.hpp"
#include "denoiserl/task.hpp"
#include "denoiserl/trainer.hpp"
#include "denoiserl/vocab.hpp"
