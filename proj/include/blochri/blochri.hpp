#pragma once

#include "blochri/error.hpp"
#include "blochri/lattice.hpp"
#include "blochri/dynamics.hpp"
#include "blochri/parallel.hpp"
#include "blochri/shortcut.hpp"
#include "blochri/interferometer.hpp"
