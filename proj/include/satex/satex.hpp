#pragma once

#include "satex/archive.hpp"
#include "satex/cnf.hpp"
#include "satex/harness.hpp"
#include "satex/info.hpp"
#include "satex/proof.hpp"
#include "satex/recipes.hpp"
#include "satex/registry.hpp"
#include "satex/runtime.hpp"
