#pragma once

#include "cgprune/client.hpp"
#include "cgprune/error.hpp"
#include "cgprune/eval.hpp"
#include "cgprune/features.hpp"
#include "cgprune/graph.hpp"
#include "cgprune/learner.hpp"
#include "cgprune/pipeline.hpp"
#include "cgprune/pruner.hpp"
#include "cgprune/synth.hpp"
