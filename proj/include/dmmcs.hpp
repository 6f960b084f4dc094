#pragma once

#include "dmmcs/corpus.hpp"
#include "dmmcs/decoding.hpp"
#include "dmmcs/embeddings.hpp"
#include "dmmcs/error.hpp"
#include "dmmcs/eval.hpp"
#include "dmmcs/harness.hpp"
#include "dmmcs/lm.hpp"
#include "dmmcs/log.hpp"
#include "dmmcs/manifest.hpp"
#include "dmmcs/pipe_model.hpp"
#include "dmmcs/requests.hpp"
#include "dmmcs/synth.hpp"
#include "dmmcs/tag_stats.hpp"
