// mcvad/mcvad.hpp

// Copyright 2026 The mcvad Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "mcvad/arraysim.hpp"
#include "mcvad/autograd.hpp"
#include "mcvad/beamform.hpp"
#include "mcvad/combinator.hpp"
#include "mcvad/errors.hpp"
#include "mcvad/fft.hpp"
#include "mcvad/frontend.hpp"
#include "mcvad/io.hpp"
#include "mcvad/rng.hpp"
#include "mcvad/segeval.hpp"
#include "mcvad/signal_io.hpp"
#include "mcvad/spectral.hpp"
#include "mcvad/tcn.hpp"
#include "mcvad/tensor.hpp"
#include "mcvad/trainer.hpp"
