#pragma once

#include "prefx/corpus.hpp"
#include "prefx/pipeline.hpp"
#include "prefx/synth.hpp"

namespace prefx::tu {

inline TemporalSplit synth_split(uint32_t sessions, uint32_t topics, uint64_t seed) {
  SynthParams p;
  p.sessions = sessions;
  p.topics = topics;
  p.seed = seed;
  auto records = synth_log(p);
  auto sessions_v = split_sessions(records);
  return temporal_split(sessions_v, kSynthTrainEnd, kSynthDevEnd, seed);
}

inline PipelineConfig small_config(int id, uint64_t seed = 1) {
  PipelineConfig c = ablation_config(id, seed);
  c.index.max_leaf_size = 16;
  c.train.threads = 2;
  c.index.threads = 2;
  return c;
}

}  // namespace prefx::tu
