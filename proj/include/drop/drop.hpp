#pragma once

// Umbrella header: the whole pipeline in one include.

#include "drop/checkpoint.hpp"
#include "drop/config.hpp"
#include "drop/export.hpp"
#include "drop/image_io.hpp"
#include "drop/losses.hpp"
#include "drop/memory_bank.hpp"
#include "drop/model.hpp"
#include "drop/retrieval.hpp"
#include "drop/synthetic.hpp"
#include "drop/trainer.hpp"
