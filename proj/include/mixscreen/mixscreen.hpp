#pragma once

#include "mixscreen/asymptotics.hpp"
#include "mixscreen/common.hpp"
#include "mixscreen/dictionary_fit.hpp"
#include "mixscreen/io.hpp"
#include "mixscreen/model.hpp"
#include "mixscreen/rng.hpp"
#include "mixscreen/screening.hpp"
#include "mixscreen/simulation.hpp"
#include "mixscreen/special_math.hpp"
