#pragma once

// Convenience umbrella for the whole library.

#include "metreg/adam.hpp"
#include "metreg/checkpoint.hpp"
#include "metreg/dataset.hpp"
#include "metreg/encoder.hpp"
#include "metreg/errors.hpp"
#include "metreg/experiment.hpp"
#include "metreg/linalg.hpp"
#include "metreg/matrix.hpp"
#include "metreg/metrics.hpp"
#include "metreg/nn_predict.hpp"
#include "metreg/rm_loss.hpp"
#include "metreg/rng.hpp"
#include "metreg/trainer.hpp"
