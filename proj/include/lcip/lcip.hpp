#pragma once

// Everything in one include.

#include "lcip/autodiff.hpp"
#include "lcip/common.hpp"
#include "lcip/csv.hpp"
#include "lcip/experiment.hpp"
#include "lcip/features.hpp"
#include "lcip/frenet.hpp"
#include "lcip/ingest.hpp"
#include "lcip/model.hpp"
#include "lcip/pipeline.hpp"
#include "lcip/refpath.hpp"
#include "lcip/scene.hpp"
#include "lcip/segment.hpp"
#include "lcip/svm.hpp"
#include "lcip/synth.hpp"
