#pragma once

#include "hhch/clustering.hpp"
#include "hhch/config.hpp"
#include "hhch/core.hpp"
#include "hhch/geometry.hpp"
#include "hhch/io.hpp"
#include "hhch/model.hpp"
#include "hhch/objective.hpp"
#include "hhch/retrieval.hpp"
#include "hhch/synth.hpp"
#include "hhch/trainer.hpp"
