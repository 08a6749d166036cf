// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace qmimo {

using Rng = std::mt19937_64;

// Stream tags, kept distinct so no two uses of a seed collide.
enum class Stream : std::uint64_t {
    ChannelInit = 1,
    ChannelSample = 2,
    ParamInit = 3,
    Shuffle = 4,
    TrainNoise = 5,
    EvalNoise = 6,
    Payload = 7,
    Falsify = 8,
    SnrMix = 9,
};

// Independent generator for a (seed, stream, counters...) tuple. Every random
// draw goes through here so results do not depend on evaluation order.
inline Rng make_rng(std::uint64_t seed, Stream stream, std::initializer_list<std::uint64_t> counters = {}) {
    std::vector<std::uint32_t> words;
    auto push = [&](std::uint64_t v) {
        words.push_back(static_cast<std::uint32_t>(v));
        words.push_back(static_cast<std::uint32_t>(v >> 32));
    };
    push(seed);
    push(static_cast<std::uint64_t>(stream));
    for (std::uint64_t v : counters) push(v);
    std::seed_seq seq(words.begin(), words.end());
    return Rng(seq);
}

}  // namespace qmimo
