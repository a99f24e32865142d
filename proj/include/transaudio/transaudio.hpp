#pragma once

#include "transaudio/alignment.hpp"
#include "transaudio/asm.hpp"
#include "transaudio/attack.hpp"
#include "transaudio/attack_spec.hpp"
#include "transaudio/ctc.hpp"
#include "transaudio/dsp.hpp"
#include "transaudio/error.hpp"
#include "transaudio/experiment.hpp"
#include "transaudio/frontend.hpp"
#include "transaudio/metrics.hpp"
#include "transaudio/model.hpp"
#include "transaudio/parallel.hpp"
#include "transaudio/rng.hpp"
#include "transaudio/serialize.hpp"
#include "transaudio/synth.hpp"
#include "transaudio/train.hpp"
#include "transaudio/transcriber.hpp"
#include "transaudio/vocab.hpp"
#include "transaudio/waveform.hpp"
