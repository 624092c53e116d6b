#pragma once

#include "eqssl/affine.hpp"
#include "eqssl/augment.hpp"
#include "eqssl/checkpoint.hpp"
#include "eqssl/clustering.hpp"
#include "eqssl/config_json.hpp"
#include "eqssl/data.hpp"
#include "eqssl/encoder.hpp"
#include "eqssl/errors.hpp"
#include "eqssl/evalkit.hpp"
#include "eqssl/ftl.hpp"
#include "eqssl/image.hpp"
#include "eqssl/metrics.hpp"
#include "eqssl/optim.hpp"
#include "eqssl/png_io.hpp"
#include "eqssl/rng.hpp"
#include "eqssl/trainer.hpp"
