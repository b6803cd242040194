#pragma once

#include "sgi/adapt.hpp"
#include "sgi/env.hpp"
#include "sgi/graph.hpp"
#include "sgi/grprop.hpp"
#include "sgi/harness.hpp"
#include "sgi/infer.hpp"
