// Copyright (C) 2026 The RetentiveKV Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "retentivekv/error.hpp"
#include "retentivekv/numerics.hpp"
#include "retentivekv/kv_cache.hpp"
#include "retentivekv/retention.hpp"
#include "retentivekv/state_space.hpp"
#include "retentivekv/retrieval.hpp"
#include "retentivekv/policies.hpp"
#include "retentivekv/harness.hpp"
#include "retentivekv/config.hpp"
#include "retentivekv/report.hpp"
#include "retentivekv/selftest.hpp"
