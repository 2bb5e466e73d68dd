#pragma once

#include "cmi/artifact.hpp"
#include "cmi/attack_math.hpp"
#include "cmi/backend.hpp"
#include "cmi/canonical_json.hpp"
#include "cmi/cmi_engine.hpp"
#include "cmi/config.hpp"
#include "cmi/embedding_guidance.hpp"
#include "cmi/errors.hpp"
#include "cmi/eval_retrieval.hpp"
#include "cmi/io.hpp"
#include "cmi/parallel.hpp"
#include "cmi/tensor.hpp"
#include "cmi/text.hpp"
#include "cmi/toy_corpus.hpp"
