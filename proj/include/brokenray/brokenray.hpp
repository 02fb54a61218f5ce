#pragma once

#include "dual.hpp"
#include "error.hpp"
#include "expression.hpp"
#include "geometry.hpp"
#include "integrator.hpp"
#include "hamiltonian.hpp"
#include "boundary.hpp"
#include "ray.hpp"
#include "tracer.hpp"
#include "verify.hpp"
#include "symbols.hpp"
#include "scenario.hpp"
#include "io.hpp"
