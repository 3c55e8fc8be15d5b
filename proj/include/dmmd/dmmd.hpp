#pragma once

#include "dmmd/autodiff.hpp"
#include "dmmd/backbone.hpp"
#include "dmmd/config.hpp"
#include "dmmd/data.hpp"
#include "dmmd/dissimilarity.hpp"
#include "dmmd/eval.hpp"
#include "dmmd/losses.hpp"
#include "dmmd/optimizer.hpp"
#include "dmmd/tensor.hpp"
#include "dmmd/trainer.hpp"
