#pragma once

#include "touchbind/ablation.hpp"
#include "touchbind/anchor.hpp"
#include "touchbind/checkpoint.hpp"
#include "touchbind/common.hpp"
#include "touchbind/config.hpp"
#include "touchbind/datagen.hpp"
#include "touchbind/encoder.hpp"
#include "touchbind/eval.hpp"
#include "touchbind/objective.hpp"
#include "touchbind/prompts.hpp"
#include "touchbind/sampler.hpp"
#include "touchbind/trainer.hpp"
