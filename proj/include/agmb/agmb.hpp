#pragma once

#include <agmb/cost.hpp>
#include <agmb/gradcheck_suites.hpp>
#include <agmb/io.hpp>
#include <agmb/metrics.hpp>
#include <agmb/model.hpp>
#include <agmb/synth.hpp>
