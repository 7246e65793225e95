#pragma once

#include "xqreid/datamodel.hpp"
#include "xqreid/error.hpp"
#include "xqreid/eval.hpp"
#include "xqreid/ingest.hpp"
#include "xqreid/matcher.hpp"
#include "xqreid/normalize.hpp"
#include "xqreid/synth.hpp"
#include "xqreid/xqda.hpp"
