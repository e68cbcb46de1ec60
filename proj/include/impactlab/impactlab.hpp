#pragma once

#include "impactlab/error.hpp"
#include "impactlab/matrix.hpp"
#include "impactlab/lob.hpp"
#include "impactlab/classify.hpp"
#include "impactlab/response.hpp"
#include "impactlab/svd.hpp"
#include "impactlab/statfit.hpp"
#include "impactlab/overlap.hpp"
#include "impactlab/kv.hpp"
#include "impactlab/synth.hpp"
#include "impactlab/io.hpp"
#include "impactlab/pipeline.hpp"
