#pragma once

#include "channel.hpp"
#include "core.hpp"
#include "experiment.hpp"
#include "flows.hpp"
#include "io.hpp"
#include "mapping.hpp"
#include "metrics.hpp"
#include "nn.hpp"
#include "samplers.hpp"
#include "stats.hpp"
