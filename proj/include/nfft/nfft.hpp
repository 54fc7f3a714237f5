#pragma once

#include "nfft/cgemm.hpp"
#include "nfft/conv_core.hpp"
#include "nfft/error.hpp"
#include "nfft/fft2d.hpp"
#include "nfft/numa_model.hpp"
#include "nfft/pipeline.hpp"
#include "nfft/transform.hpp"
