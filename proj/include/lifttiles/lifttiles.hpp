#pragma once

#include "lifttiles/error.hpp"
#include "lifttiles/model.hpp"
#include "lifttiles/pneusim.hpp"
#include "lifttiles/simulation.hpp"
#include "lifttiles/controller.hpp"
#include "lifttiles/planner.hpp"
#include "lifttiles/shapes.hpp"
#include "lifttiles/gateway.hpp"
