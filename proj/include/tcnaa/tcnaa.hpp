#pragma once

#include "tcnaa/augment.hpp"
#include "tcnaa/binary_io.hpp"
#include "tcnaa/checkpoint.hpp"
#include "tcnaa/config.hpp"
#include "tcnaa/csi_data.hpp"
#include "tcnaa/dsp.hpp"
#include "tcnaa/gradcheck.hpp"
#include "tcnaa/model.hpp"
#include "tcnaa/report.hpp"
#include "tcnaa/rng.hpp"
#include "tcnaa/tensor.hpp"
#include "tcnaa/train.hpp"
