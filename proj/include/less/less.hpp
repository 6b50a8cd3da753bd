#pragma once

#include "less/rollout.hpp"
#include "less/segmentation.hpp"
#include "less/registry.hpp"
#include "less/shaping.hpp"
#include "less/grpo.hpp"
#include "less/analysis.hpp"
#include "less/simulator.hpp"
#include "less/report.hpp"
