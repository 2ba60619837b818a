#pragma once

#include "hmcda/core.hpp"
#include "hmcda/model.hpp"
#include "hmcda/obs.hpp"
#include "hmcda/cov.hpp"
#include "hmcda/integrators.hpp"
#include "hmcda/hmc.hpp"
#include "hmcda/filters.hpp"
#include "hmcda/experiment.hpp"
#include "hmcda/records_io.hpp"
