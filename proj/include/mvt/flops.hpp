#pragma once

#include <cstdint>

#include "mvt/config.hpp"

namespace mvt {

/// Matrix-product FLOPs of one transformer block, counting a multiply-add as
/// two FLOPs. Elementwise work (LN, softmax, GELU, residual adds) is excluded.
///
/// For `segments` independent groups of `tokens` rows of width D:
///   qkv      = segments · 3 · 2·tokens·D²
///   scores   = segments · 2·tokens²·D        (Q·Kᵀ over all heads)
///   values   = segments · 2·tokens²·D        (softmax · V)
///   out_proj = segments · 2·tokens·D²
///   mlp      = segments · 2 · 2·tokens·D·rD
struct BlockFlops {
  std::int64_t qkv = 0;
  std::int64_t scores = 0;
  std::int64_t values = 0;
  std::int64_t out_proj = 0;
  std::int64_t mlp = 0;

  std::int64_t attention() const { return scores + values; }
  std::int64_t total() const { return qkv + scores + values + out_proj + mlp; }
};

BlockFlops block_flops(std::int64_t tokens, std::int64_t segments, std::int64_t width, std::int64_t mlp_ratio);

/// Forward FLOPs for one object. With n = wh+1 tokens per view, a local block
/// covers L segments of n tokens and a global block one segment of L·n tokens.
struct FlopReport {
  BlockFlops local_block;
  BlockFlops global_block;
  std::int64_t embed = 0;  // 2·L·wh·Cp²·D
  std::int64_t head = 0;   // 2·D·K (+ 2·D² with the MLP head)
  std::int64_t local_total = 0;
  std::int64_t global_total = 0;
  std::int64_t total = 0;
};

FlopReport attention_flops(const MVTConfig& config);

}  // namespace mvt
