// Copyright 2026 The fedrd Authors. All Rights Reserved.
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
// =============================================================================

#pragma once

#include "fedrd/aggregation.hpp"
#include "fedrd/barrier.hpp"
#include "fedrd/batch_io.hpp"
#include "fedrd/errors.hpp"
#include "fedrd/fl_harness.hpp"
#include "fedrd/linalg.hpp"
#include "fedrd/mm_general.hpp"
#include "fedrd/mm_symmetric.hpp"
#include "fedrd/model.hpp"
#include "fedrd/region.hpp"
#include "fedrd/seed.hpp"
#include "fedrd/transform.hpp"
