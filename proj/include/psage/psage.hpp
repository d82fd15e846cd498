// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "psage/error.hpp"
#include "psage/rng.hpp"
#include "psage/matrix.hpp"
#include "psage/ops.hpp"
#include "psage/grad_check.hpp"
#include "psage/geo_graph.hpp"
#include "psage/delaunay.hpp"
#include "psage/dataset.hpp"
#include "psage/synth.hpp"
#include "psage/gnn_layers.hpp"
#include "psage/model.hpp"
#include "psage/checkpoint.hpp"
#include "psage/training.hpp"
#include "psage/config.hpp"
#include "psage/gradient_suite.hpp"
