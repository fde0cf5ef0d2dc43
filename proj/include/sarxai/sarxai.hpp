#pragma once

#include "sarxai/error.hpp"
#include "sarxai/tensor.hpp"
#include "sarxai/kernels.hpp"
#include "sarxai/random.hpp"
#include "sarxai/parallel.hpp"
#include "sarxai/nn.hpp"
#include "sarxai/dataset.hpp"
#include "sarxai/model.hpp"
#include "sarxai/binary.hpp"
#include "sarxai/weights_io.hpp"
#include "sarxai/attribution.hpp"
#include "sarxai/attribution_io.hpp"
#include "sarxai/image_io.hpp"
#include "sarxai/heatmap.hpp"
#include "sarxai/xaimetrics.hpp"
#include "sarxai/dataio.hpp"
