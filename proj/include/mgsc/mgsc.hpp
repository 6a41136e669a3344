// Copyright 2026 The MGSC Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "mgsc/analysis_metrics.hpp"
#include "mgsc/asr_objective.hpp"
#include "mgsc/consistency_losses.hpp"
#include "mgsc/data_harness.hpp"
#include "mgsc/error.hpp"
#include "mgsc/experiment.hpp"
#include "mgsc/loss_balancer.hpp"
#include "mgsc/tensor.hpp"
#include "mgsc/toy_seq2seq.hpp"
