#pragma once

#include "flowmine/causality.hpp"
#include "flowmine/checkpoint.hpp"
#include "flowmine/config.hpp"
#include "flowmine/encoder.hpp"
#include "flowmine/error.hpp"
#include "flowmine/eval.hpp"
#include "flowmine/flow_model.hpp"
#include "flowmine/message.hpp"
#include "flowmine/miner.hpp"
#include "flowmine/pipeline.hpp"
#include "flowmine/random.hpp"
#include "flowmine/tokenizer.hpp"
#include "flowmine/trace.hpp"
