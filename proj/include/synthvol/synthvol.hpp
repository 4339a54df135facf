#pragma once

#include "synthvol/acquire.hpp"
#include "synthvol/bench.hpp"
#include "synthvol/deform.hpp"
#include "synthvol/error.hpp"
#include "synthvol/field.hpp"
#include "synthvol/filter.hpp"
#include "synthvol/generator.hpp"
#include "synthvol/geometry.hpp"
#include "synthvol/hyper.hpp"
#include "synthvol/intensity.hpp"
#include "synthvol/metrics.hpp"
#include "synthvol/net/checkpoint.hpp"
#include "synthvol/net/layers.hpp"
#include "synthvol/net/tensor.hpp"
#include "synthvol/net/train.hpp"
#include "synthvol/net/unet.hpp"
#include "synthvol/nifti.hpp"
#include "synthvol/phantom.hpp"
#include "synthvol/random.hpp"
#include "synthvol/ranges.hpp"
#include "synthvol/volume.hpp"
