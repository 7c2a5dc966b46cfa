// whispr/whispr.hpp: everything at once.
#pragma once

#include "whispr/augment.hpp"
#include "whispr/charlm.hpp"
#include "whispr/common.hpp"
#include "whispr/config.hpp"
#include "whispr/corpus.hpp"
#include "whispr/ctc.hpp"
#include "whispr/encoder.hpp"
#include "whispr/features.hpp"
#include "whispr/optim.hpp"
#include "whispr/params.hpp"
#include "whispr/probe.hpp"
#include "whispr/pseudo.hpp"
#include "whispr/scoring.hpp"
#include "whispr/trainer.hpp"
