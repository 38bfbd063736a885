/*
 * Copyright 2026 The EFDMVC Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Umbrella header.

#pragma once

#include "efdmvc/checkpoint.hpp"
#include "efdmvc/config.hpp"
#include "efdmvc/dataset.hpp"
#include "efdmvc/error.hpp"
#include "efdmvc/evaluation.hpp"
#include "efdmvc/experiment.hpp"
#include "efdmvc/federation.hpp"
#include "efdmvc/losses.hpp"
#include "efdmvc/model.hpp"
#include "efdmvc/random.hpp"
#include "efdmvc/tensor.hpp"
