#pragma once

#include "swinfe/bench.hpp"
#include "swinfe/boxes.hpp"
#include "swinfe/checkpoint.hpp"
#include "swinfe/config.hpp"
#include "swinfe/errors.hpp"
#include "swinfe/experiment.hpp"
#include "swinfe/gradcheck.hpp"
#include "swinfe/head.hpp"
#include "swinfe/metrics.hpp"
#include "swinfe/model.hpp"
#include "swinfe/neck.hpp"
#include "swinfe/ops.hpp"
#include "swinfe/optim.hpp"
#include "swinfe/params.hpp"
#include "swinfe/random.hpp"
#include "swinfe/swin.hpp"
#include "swinfe/synth.hpp"
#include "swinfe/tape.hpp"
#include "swinfe/tensor.hpp"
#include "swinfe/train.hpp"
