#pragma once

#include "exsampling/audio.hpp"
#include "exsampling/classifier.hpp"
#include "exsampling/error.hpp"
#include "exsampling/labels.hpp"
#include "exsampling/mapping.hpp"
#include "exsampling/note.hpp"
#include "exsampling/osc.hpp"
#include "exsampling/pitch.hpp"
#include "exsampling/sampler.hpp"
#include "exsampling/service.hpp"
#include "exsampling/spectral.hpp"
