#pragma once

// Umbrella header: split conformal prediction over embedding-space
// classifiers, with transductive prototype refinement on pooled
// calibration + test features.

#include "sconf/adam.hpp"
#include "sconf/classifier.hpp"
#include "sconf/commands.hpp"
#include "sconf/config.hpp"
#include "sconf/conformal.hpp"
#include "sconf/embeddings.hpp"
#include "sconf/errors.hpp"
#include "sconf/evaluation.hpp"
#include "sconf/matrix.hpp"
#include "sconf/pipelines.hpp"
#include "sconf/reports.hpp"
#include "sconf/rng.hpp"
#include "sconf/synth.hpp"
#include "sconf/transduction.hpp"
#include "sconf/version.hpp"
