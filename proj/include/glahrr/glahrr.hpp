#pragma once

#include "glahrr/checkpoint.hpp"
#include "glahrr/dataset.hpp"
#include "glahrr/image_io.hpp"
#include "glahrr/losses.hpp"
#include "glahrr/metrics.hpp"
#include "glahrr/model.hpp"
#include "glahrr/optim.hpp"
#include "glahrr/synthesis.hpp"
#include "glahrr/training.hpp"
