#pragma once

#include "dgp/errors.hpp"
#include "dgp/kernel.hpp"
#include "dgp/linalg.hpp"
#include "dgp/mvn.hpp"
#include "dgp/random.hpp"
#include "dgp/types.hpp"
