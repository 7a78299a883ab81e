#include "lagr/steerable.hpp"

namespace lagr {

IrrepsLayout::IrrepsLayout(std::initializer_list<std::pair<int, int>> blocks)
    : IrrepsLayout(std::vector<std::pair<int, int>>(blocks)) {}

IrrepsLayout::IrrepsLayout(std::vector<std::pair<int, int>> blocks) : blocks_(std::move(blocks)) {
  for (const auto& [l, mult] : blocks_) {
    if (l != 0 && l != 1) throw std::invalid_argument("irreps layout: degree " + std::to_string(l) + " > 1");
    if (mult <= 0) throw std::invalid_argument("irreps layout: multiplicity must be positive");
  }
}

IrrepsLayout IrrepsLayout::canonical(const Irreps& irreps) {
  std::vector<std::pair<int, int>> blocks;
  if (irreps.scalars > 0) blocks.emplace_back(0, irreps.scalars);
  if (irreps.vectors > 0) blocks.emplace_back(1, irreps.vectors);
  return IrrepsLayout(std::move(blocks));
}

int IrrepsLayout::dim() const {
  int d = 0;
  for (const auto& [l, mult] : blocks_) d += mult * (2 * l + 1);
  return d;
}

Irreps IrrepsLayout::irreps() const {
  Irreps ir;
  for (const auto& [l, mult] : blocks_) (l == 0 ? ir.scalars : ir.vectors) += mult;
  return ir;
}

std::vector<int> IrrepsLayout::canonical_order() const {
  const Irreps ir = irreps();
  std::vector<int> order(static_cast<std::size_t>(ir.dim()));
  int pos = 0, scalar = 0, vector = 0;
  for (const auto& [l, mult] : blocks_) {
    if (l == 0) {
      for (int c = 0; c < mult; ++c) order[scalar++] = pos + c;
      pos += mult;
    } else {
      for (int k = 0; k < 3; ++k) {
        for (int c = 0; c < mult; ++c) order[ir.vector_offset(k) + vector + c] = pos + k * mult + c;
      }
      vector += mult;
      pos += 3 * mult;
    }
  }
  return order;
}

}  // namespace lagr
