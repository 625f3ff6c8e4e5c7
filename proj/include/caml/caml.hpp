#pragma once

#include "caml/checkpoint.hpp"
#include "caml/corpus.hpp"
#include "caml/dataset.hpp"
#include "caml/error.hpp"
#include "caml/explain.hpp"
#include "caml/gradcheck.hpp"
#include "caml/linear_baseline.hpp"
#include "caml/metrics.hpp"
#include "caml/model.hpp"
#include "caml/numerics.hpp"
#include "caml/porter_stemmer.hpp"
#include "caml/synthetic.hpp"
#include "caml/training.hpp"
