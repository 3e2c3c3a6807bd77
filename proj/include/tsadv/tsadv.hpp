#pragma once

#include "tsadv/error.hpp"
#include "tsadv/series.hpp"
#include "tsadv/forecasters.hpp"
#include "tsadv/remote.hpp"
#include "tsadv/attack.hpp"
#include "tsadv/metrics.hpp"
#include "tsadv/harness.hpp"
