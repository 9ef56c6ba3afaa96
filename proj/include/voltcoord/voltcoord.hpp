#pragma once

#include "voltcoord/comms.hpp"
#include "voltcoord/coordination.hpp"
#include "voltcoord/fixtures.hpp"
#include "voltcoord/flex.hpp"
#include "voltcoord/grid.hpp"
#include "voltcoord/grid_io.hpp"
#include "voltcoord/local_control.hpp"
#include "voltcoord/power_flow.hpp"
#include "voltcoord/scenario.hpp"
