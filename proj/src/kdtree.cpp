#include "mlidar/kdtree.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

namespace mlidar {

namespace {
constexpr std::uint32_t kLeafSize = 12;
}

KdTree::KdTree(std::span<const Vec3> points) : points_(points) {
  index_.resize(points.size());
  std::iota(index_.begin(), index_.end(), 0u);
  if (!index_.empty()) {
    nodes_.reserve(2 * points.size() / kLeafSize + 2);
    build(0, static_cast<std::uint32_t>(index_.size()));
  }
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.emplace_back();
  if (end - begin <= kLeafSize) {
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    return id;
  }
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (std::uint32_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[index_[i]]);
    hi = hi.cwiseMax(points_[index_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(index_.begin() + begin, index_.begin() + mid, index_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     const double va = points_[a][axis];
                     const double vb = points_[b][axis];
                     return va < vb || (va == vb && a < b);
                   });
  const double split = points_[index_[mid]][axis];
  const std::int32_t left = build(begin, mid);
  const std::int32_t right = build(mid, end);
  Node& n = nodes_[id];
  n.axis = static_cast<std::int8_t>(axis);
  n.split = split;
  n.left = left;
  n.right = right;
  return id;
}

template <typename Visitor>
void KdTree::search(std::int32_t node_id, const Vec3& q, Visitor& visit, double& bound2) const {
  const Node& node = nodes_[node_id];
  if (node.axis < 0) {
    for (std::uint32_t i = node.begin; i < node.end; ++i) {
      const std::uint32_t idx = index_[i];
      const double d2 = (points_[idx] - q).squaredNorm();
      if (d2 <= bound2) visit(idx, d2, bound2);
    }
    return;
  }
  const double diff = q[node.axis] - node.split;
  const std::int32_t near = diff < 0.0 ? node.left : node.right;
  const std::int32_t far = diff < 0.0 ? node.right : node.left;
  search(near, q, visit, bound2);
  if (diff * diff <= bound2) search(far, q, visit, bound2);
}

std::vector<Neighbor> KdTree::knn(const Vec3& query, std::size_t k) const {
  std::vector<Neighbor> out;
  if (k == 0 || index_.empty()) return out;
  auto worse = [](const Neighbor& a, const Neighbor& b) {
    return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
  };
  std::priority_queue<Neighbor, std::vector<Neighbor>, decltype(worse)> heap(worse);
  double bound2 = std::numeric_limits<double>::infinity();
  auto visit = [&](std::uint32_t idx, double d2, double& b2) {
    const Neighbor cand{idx, d2};
    if (heap.size() < k) {
      heap.push(cand);
    } else if (worse(cand, heap.top())) {
      heap.pop();
      heap.push(cand);
    } else {
      return;
    }
    if (heap.size() == k) b2 = heap.top().dist2;
  };
  search(0, query, visit, bound2);
  out.resize(heap.size());
  for (std::size_t i = out.size(); i-- > 0;) {
    out[i] = heap.top();
    heap.pop();
  }
  return out;
}

std::vector<Neighbor> KdTree::knn_with_ties(const Vec3& query, std::size_t k, double rel_tol) const {
  std::vector<Neighbor> out = knn(query, k);
  if (out.size() < k) return out;
  const double r = std::sqrt(out.back().dist2) * (1.0 + rel_tol);
  radius(query, r, out);
  std::sort(out.begin(), out.end(), [](const Neighbor& a, const Neighbor& b) {
    return a.dist2 != b.dist2 ? a.dist2 < b.dist2 : a.index < b.index;
  });
  return out;
}

bool KdTree::nearest(const Vec3& query, double max_dist2, Neighbor& out) const {
  if (index_.empty()) return false;
  bool found = false;
  double bound2 = max_dist2;
  auto visit = [&](std::uint32_t idx, double d2, double& b2) {
    if (!found || d2 < out.dist2 || (d2 == out.dist2 && idx < out.index)) {
      out = {idx, d2};
      found = true;
      b2 = d2;
    }
  };
  search(0, query, visit, bound2);
  return found;
}

void KdTree::radius(const Vec3& query, double r, std::vector<Neighbor>& out) const {
  out.clear();
  if (index_.empty()) return;
  double bound2 = r * r;
  auto visit = [&](std::uint32_t idx, double d2, double&) { out.push_back({idx, d2}); };
  search(0, query, visit, bound2);
}

}  // namespace mlidar
