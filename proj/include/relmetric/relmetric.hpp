#pragma once

#include "relmetric/error.hpp"
#include "relmetric/log.hpp"
#include "relmetric/tensor.hpp"
#include "relmetric/tape.hpp"
#include "relmetric/ops.hpp"
#include "relmetric/optim.hpp"
#include "relmetric/table_codec.hpp"
#include "relmetric/corpus.hpp"
#include "relmetric/vocabulary.hpp"
#include "relmetric/config.hpp"
#include "relmetric/context_encoder.hpp"
#include "relmetric/relmetric_net.hpp"
#include "relmetric/model.hpp"
#include "relmetric/scoring.hpp"
#include "relmetric/checkpoint.hpp"
#include "relmetric/trainer.hpp"
#include "relmetric/heatmap.hpp"
