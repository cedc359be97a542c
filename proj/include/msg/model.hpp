#pragma once

#include <random>
#include <vector>

#include "msg/encoder.hpp"
#include "msg/generator.hpp"
#include "msg/multihop.hpp"

namespace msg {

// Everything computed from the question and document before decoding.
template <class T>
struct SourceEncoding {
  EncoderOutput<T> enc;
  std::vector<HopState<T>> hops;
  AggregatedDoc<T> agg;
  SourceMemory<T> mem;
  DecoderState<T> init;
};

template <class T>
SourceEncoding<T> encode_source(ad::Graph<T>& g, const ModelParams& mp, const Config& cfg, const ExampleView& ex,
                                std::mt19937_64* rng = nullptr);

template <class T>
struct Unroll {
  SourceEncoding<T> source;
  std::vector<StepOutput<T>> steps;
};

// Feeds ex.decoder_input and records one StepOutput per target token.
template <class T>
Unroll<T> teacher_forced(ad::Graph<T>& g, const ModelParams& mp, const Config& cfg, const ExampleView& ex,
                         const StepOptions& opt);

}  // namespace msg
