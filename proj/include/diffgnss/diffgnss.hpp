#pragma once

// Umbrella header for the whole library.

#include "diffgnss/errors.hpp"
#include "diffgnss/config.hpp"
#include "diffgnss/log.hpp"
#include "diffgnss/geo.hpp"
#include "diffgnss/gnss_model.hpp"
#include "diffgnss/wls.hpp"
#include "diffgnss/dnls.hpp"
#include "diffgnss/neuralnet.hpp"
#include "diffgnss/data.hpp"
#include "diffgnss/simulate.hpp"
#include "diffgnss/labels.hpp"
#include "diffgnss/eval.hpp"
#include "diffgnss/train.hpp"
#include "diffgnss/gradcheck.hpp"
#include "diffgnss/cli.hpp"
