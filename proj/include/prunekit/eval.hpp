#pragma once

#include "common.hpp"
#include "model.hpp"
#include "pruner.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace prunekit {

//
// Perplexity + wall-clock latency of dense vs pruned models. Timing is plain
// CPU wall time; only orderings are meaningful, and that is all tests assert.
//

constexpr int kDefaultPplWindow = 128;
constexpr int kDefaultBenchSeqLen = 256;
constexpr int kDefaultBenchRuns = 20;

struct EvalReport {
    double perplexity = 0.0;
    int64_t token_count = 0; // scored (predicted) positions
    int64_t params = 0;
    double prefill_seconds = 0.0;
    double decode_seconds = 0.0;
    int runs = 0;
};

using ForwardFn = std::function<Matrix(std::span<const uint32_t>)>;

// exp(mean NLL of the next token) over non-overlapping windows; a trailing
// partial window still scores if it holds at least 2 tokens. Log-softmax in
// 64-bit with max subtraction.
inline double perplexity_with(const ForwardFn & fwd, std::span<const uint32_t> tokens, int window,
                              int64_t * scored_out = nullptr) {
    require(window >= 2, "perplexity: window must be >= 2");
    require(tokens.size() >= 2, "perplexity: need at least 2 tokens");

    double nll = 0.0;
    int64_t scored = 0;
    for (size_t start = 0; start < tokens.size(); start += (size_t) window) {
        const size_t len = std::min((size_t) window, tokens.size() - start);
        if (len < 2) {
            break;
        }
        const Matrix logits = fwd(tokens.subspan(start, len));
        for (size_t t = 0; t + 1 < len; t++) {
            const double * row = logits.row_ptr((int) t);
            double m = row[0];
            for (int v = 1; v < logits.cols; v++) {
                m = std::max(m, row[v]);
            }
            double sum = 0.0;
            for (int v = 0; v < logits.cols; v++) {
                sum += std::exp(row[v] - m);
            }
            const uint32_t next = tokens[start + t + 1];
            nll -= row[next] - m - std::log(sum);
            scored++;
        }
    }
    if (scored_out != nullptr) {
        *scored_out = scored;
    }
    return std::exp(nll / (double) scored);
}

inline double perplexity(const Model & model, std::span<const uint32_t> tokens,
                         int window = kDefaultPplWindow, int64_t * scored_out = nullptr) {
    return perplexity_with([&](std::span<const uint32_t> w) { return forward(model, w); }, tokens,
                           window, scored_out);
}

// prefill: one full-sequence forward at seq_len; decode: gen_tokens sequential
// single-token extensions, recomputing the whole sequence each step (no KV
// cache). Means over `runs`, one untimed warm-up first.
inline std::pair<double, double> bench_latency(const Model & model, int seq_len, int gen_tokens,
                                               int runs) {
    require(runs >= 1, "bench_latency: runs must be >= 1");
    require(seq_len >= 1, "bench_latency: seq_len must be >= 1");

    std::vector<uint32_t> tokens((size_t) seq_len);
    for (int i = 0; i < seq_len; i++) {
        tokens[i] = (uint32_t) (i % model.config.vocab_size);
    }

    using clock = std::chrono::steady_clock;
    (void) forward(model, tokens); // warm-up

    double prefill = 0.0;
    for (int r = 0; r < runs; r++) {
        const auto t0 = clock::now();
        (void) forward(model, tokens);
        const auto t1 = clock::now();
        prefill += std::chrono::duration<double>(t1 - t0).count();
    }
    prefill /= runs;

    double decode = 0.0;
    for (int r = 0; r < runs; r++) {
        std::vector<uint32_t> seq = tokens;
        const auto t0 = clock::now();
        for (int g = 0; g < gen_tokens; g++) {
            const Matrix logits = forward(model, seq);
            const double * last = logits.row_ptr(logits.rows - 1);
            int best = 0;
            for (int v = 1; v < logits.cols; v++) {
                if (last[v] > last[best]) {
                    best = v;
                }
            }
            seq.push_back((uint32_t) best);
        }
        const auto t1 = clock::now();
        decode += std::chrono::duration<double>(t1 - t0).count();
    }
    decode /= runs;

    return {prefill, decode};
}

} // namespace prunekit
