#pragma once

#include "errors.hpp"
#include "rng.hpp"
#include "tensor.hpp"
#include "autodiff.hpp"
#include "models.hpp"
#include "datasets.hpp"
#include "objectives.hpp"
#include "attacks.hpp"
#include "landscape.hpp"
#include "optim.hpp"
#include "serialize.hpp"
#include "checkpoint.hpp"
#include "trainer.hpp"
#include "config.hpp"
#include "plot.hpp"
#include "cli.hpp"
