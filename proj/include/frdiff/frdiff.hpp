#pragma once

#include "adam.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "diffusion.hpp"
#include "error.hpp"
#include "fft.hpp"
#include "freqdehaze.hpp"
#include "gradcheck.hpp"
#include "gradsuite.hpp"
#include "hazedata.hpp"
#include "image.hpp"
#include "io.hpp"
#include "layers.hpp"
#include "metrics.hpp"
#include "objectives.hpp"
#include "spectral.hpp"
#include "tensor.hpp"
#include "trainer.hpp"
