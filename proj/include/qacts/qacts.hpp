#pragma once

#include "qacts/adam.hpp"
#include "qacts/checkpoint.hpp"
#include "qacts/corpus.hpp"
#include "qacts/encoder.hpp"
#include "qacts/entity.hpp"
#include "qacts/experiment.hpp"
#include "qacts/metrics.hpp"
#include "qacts/model.hpp"
#include "qacts/pipeline.hpp"
#include "qacts/rng.hpp"
#include "qacts/tape.hpp"
#include "qacts/tensor.hpp"
#include "qacts/trainer.hpp"
#include "qacts/util.hpp"
#include "qacts/vocab.hpp"
