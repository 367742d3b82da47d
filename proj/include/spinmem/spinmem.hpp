#pragma once

#include "spinmem/errors.hpp"
#include "spinmem/special.hpp"
#include "spinmem/quadrature.hpp"
#include "spinmem/basis.hpp"
#include "spinmem/core_model.hpp"
#include "spinmem/closed_form.hpp"
#include "spinmem/kernel_cache.hpp"
#include "spinmem/bfgs.hpp"
#include "spinmem/optimizer.hpp"
#include "spinmem/gaussian_laplace.hpp"
#include "spinmem/ode.hpp"
#include "spinmem/oracle_sim.hpp"
#include "spinmem/io.hpp"
