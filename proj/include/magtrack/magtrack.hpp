/*
 * Copyright 2026 The magtrack Authors. All rights reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "magtrack/association.hpp"
#include "magtrack/config.hpp"
#include "magtrack/domain.hpp"
#include "magtrack/eval.hpp"
#include "magtrack/io.hpp"
#include "magtrack/matching.hpp"
#include "magtrack/motion.hpp"
#include "magtrack/sim.hpp"
#include "magtrack/socket.hpp"
#include "magtrack/stream.hpp"
