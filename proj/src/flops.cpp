#include "mvt/flops.hpp"

namespace mvt {

BlockFlops block_flops(std::int64_t tokens, std::int64_t segments, std::int64_t width, std::int64_t mlp_ratio) {
  BlockFlops f;
  const std::int64_t d = width;
  f.qkv = segments * 3 * 2 * tokens * d * d;
  f.scores = segments * 2 * tokens * tokens * d;
  f.values = segments * 2 * tokens * tokens * d;
  f.out_proj = segments * 2 * tokens * d * d;
  f.mlp = segments * 2 * 2 * tokens * d * (mlp_ratio * d);
  return f;
}

FlopReport attention_flops(const MVTConfig& c) {
  c.validate();
  const std::int64_t n = c.tokens_per_view(), views = c.views, d = c.hidden;
  FlopReport r;
  r.local_block = block_flops(n, views, d, c.mlp_ratio);
  r.global_block = block_flops(views * n, 1, d, c.mlp_ratio);
  r.embed = 2 * views * c.patches_per_view() * c.patch_dim() * d;
  r.head = 2 * d * c.classes + (c.mlp_head ? 2 * d * d : 0);
  r.local_total = c.local_blocks * r.local_block.total();
  r.global_total = c.global_blocks * r.global_block.total();
  r.total = r.embed + r.local_total + r.global_total + r.head;
  return r;
}

}  // namespace mvt
