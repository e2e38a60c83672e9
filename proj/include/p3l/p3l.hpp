#pragma once

#include "p3l/activations.hpp"
#include "p3l/analysis.hpp"
#include "p3l/config.hpp"
#include "p3l/datasets.hpp"
#include "p3l/errors.hpp"
#include "p3l/finite_model.hpp"
#include "p3l/kernel.hpp"
#include "p3l/mf_model.hpp"
#include "p3l/runner.hpp"
#include "p3l/trajectory.hpp"
#include "p3l/wasserstein.hpp"
