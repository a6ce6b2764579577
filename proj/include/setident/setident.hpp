#pragma once

#include "setident/error.hpp"
#include "setident/tensor.hpp"
#include "setident/nn.hpp"
#include "setident/attention.hpp"
#include "setident/data.hpp"
#include "setident/tokenizer.hpp"
#include "setident/generator.hpp"
#include "setident/training.hpp"
#include "setident/eval.hpp"
