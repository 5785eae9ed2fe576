// Copyright 2026 The SkipDecode Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "skipdecode/baselines.hpp"
#include "skipdecode/checkpoint.hpp"
#include "skipdecode/common.hpp"
#include "skipdecode/corpus.hpp"
#include "skipdecode/generation.hpp"
#include "skipdecode/kvcache.hpp"
#include "skipdecode/model.hpp"
#include "skipdecode/reference.hpp"
#include "skipdecode/sampling.hpp"
#include "skipdecode/schedule.hpp"
#include "skipdecode/tensor.hpp"
#include "skipdecode/training.hpp"
