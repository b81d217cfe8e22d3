#pragma once

#include "error.hpp"
#include "parallel.hpp"
#include "basis.hpp"
#include "family.hpp"
#include "design.hpp"
#include "solver.hpp"
#include "select.hpp"
#include "truth.hpp"
#include "twostep.hpp"
#include "bands.hpp"
#include "simlab.hpp"
#include "io.hpp"
