#pragma once

// Everything in one include.

#include "lcsa/checkpoint.hpp"
#include "lcsa/config.hpp"
#include "lcsa/core.hpp"
#include "lcsa/grid.hpp"
#include "lcsa/harness.hpp"
#include "lcsa/idm.hpp"
#include "lcsa/labeling.hpp"
#include "lcsa/neural.hpp"
#include "lcsa/ngsim.hpp"
#include "lcsa/svm.hpp"
#include "lcsa/synthetic.hpp"
