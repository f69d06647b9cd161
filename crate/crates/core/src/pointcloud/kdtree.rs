use nalgebra::Point3;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Static kd-tree for exact nearest-neighbor queries.
///
/// Ties in distance resolve to the lowest point index, so results are
/// identical to an exhaustive scan.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Vec<Point3<f64>>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl NeighborIndex {
    /// Returns `None` for an empty point list.
    pub fn build(points: &[Point3<f64>]) -> Option<Self> {
        if points.is_empty() {
            return None;
        }
        let mut index = NeighborIndex {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        index.build_node(0, points.len());
        Some(index)
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let axis = self.widest_axis(start, end);
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    fn widest_axis(&self, start: usize, end: usize) -> usize {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
            .unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    /// Index of the closest stored point.
    pub fn nearest(&self, query: &Point3<f64>) -> usize {
        self.nearest_with_distance(query).0
    }

    /// Index of the closest stored point and its squared distance.
    pub fn nearest_with_distance(&self, query: &Point3<f64>) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, query, &mut best);
        best
    }

    /// The `k` closest stored points as `(index, squared distance)`, nearest
    /// first; ties ordered by index.
    pub fn nearest_k(&self, query: &Point3<f64>, k: usize) -> Vec<(usize, f64)> {
        let mut best = Vec::with_capacity(k + 1);
        if k > 0 {
            self.search_k(0, query, k, &mut best);
        }
        best
    }

    fn search_k(&self, node: usize, q: &Point3<f64>, k: usize, best: &mut Vec<(usize, f64)>) {
        let worse = |a: &(usize, f64), b: &(usize, f64)| a.1 > b.1 || (a.1 == b.1 && a.0 > b.0);
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let cand = (i, (self.points[i] - q).norm_squared());
                    if best.len() == k && !worse(&best[k - 1], &cand) {
                        continue;
                    }
                    let at = best
                        .iter()
                        .position(|b| worse(b, &cand))
                        .unwrap_or(best.len());
                    best.insert(at, cand);
                    best.truncate(k);
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search_k(near, q, k, best);
                if best.len() < k || diff * diff <= best[k - 1].1 {
                    self.search_k(far, q, k, best);
                }
            }
        }
    }

    fn search(&self, node: usize, q: &Point3<f64>, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = (self.points[i] - q).norm_squared();
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, best);
                // `<=` so an equidistant point with a lower index is still found
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(points: &[Point3<f64>], q: &Point3<f64>) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = (p - q).norm_squared();
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    #[test]
    fn k_nearest_matches_sorted_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let pts: Vec<_> = (0..400)
            .map(|_| {
                Point3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let index = NeighborIndex::build(&pts).unwrap();
        for _ in 0..50 {
            let q = Point3::new(
                rng.random_range(-6.0..6.0),
                rng.random_range(-6.0..6.0),
                0.0,
            );
            for k in [1, 5, 17] {
                let mut all: Vec<(usize, f64)> = pts
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, (p - q).norm_squared()))
                    .collect();
                all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                all.truncate(k);
                assert_eq!(index.nearest_k(&q, k), all);
            }
        }
        let grid: Vec<_> = (0..9)
            .map(|i| Point3::new((i % 3) as f64, (i / 3) as f64, 0.0))
            .collect();
        let g = NeighborIndex::build(&grid).unwrap();
        let got: Vec<usize> = g
            .nearest_k(&Point3::new(1.0, 1.0, 0.0), 5)
            .iter()
            .map(|x| x.0)
            .collect();
        assert_eq!(got, vec![4, 1, 3, 5, 7]);
        assert_eq!(g.nearest_k(&Point3::origin(), 20).len(), 9);
    }

    #[test]
    fn exact_hit_returns_that_index() {
        let pts: Vec<_> = (0..50)
            .map(|i| Point3::new(i as f64, (i * i) as f64, 0.5))
            .collect();
        let index = NeighborIndex::build(&pts).unwrap();
        for (i, p) in pts.iter().enumerate() {
            assert_eq!(index.nearest(p), i);
        }
    }

    #[test]
    fn equidistant_points_resolve_to_lower_index() {
        let pts = vec![
            Point3::new(5.0, 5.0, 5.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(-1.0, 0.0, 0.0),
        ];
        let index = NeighborIndex::build(&pts).unwrap();
        assert_eq!(index.nearest(&Point3::origin()), 1);
        // many duplicates spread across leaves
        let mut dup: Vec<_> = (0..40)
            .map(|i| Point3::new(i as f64 + 10.0, 0.0, 0.0))
            .collect();
        dup.extend((0..40).map(|_| Point3::new(0.0, 0.0, 0.0)));
        let index = NeighborIndex::build(&dup).unwrap();
        assert_eq!(index.nearest(&Point3::new(0.0, 1.0, 0.0)), 40);
    }

    #[test]
    fn matches_linear_scan_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<_> = (0..1000)
            .map(|_| {
                Point3::new(
                    rng.random_range(-100.0..100.0),
                    rng.random_range(-100.0..100.0),
                    rng.random_range(-100.0..100.0),
                )
            })
            .collect();
        let index = NeighborIndex::build(&pts).unwrap();
        for _ in 0..100 {
            let q = Point3::new(
                rng.random_range(-120.0..120.0),
                rng.random_range(-120.0..120.0),
                rng.random_range(-120.0..120.0),
            );
            assert_eq!(index.nearest(&q), brute_force(&pts, &q));
        }
    }

    #[test]
    fn matches_linear_scan_on_integer_grid_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<_> = (0..500)
            .map(|_| {
                Point3::new(
                    rng.random_range(0..6) as f64,
                    rng.random_range(0..6) as f64,
                    rng.random_range(0..3) as f64,
                )
            })
            .collect();
        let index = NeighborIndex::build(&pts).unwrap();
        for _ in 0..200 {
            let q = Point3::new(
                rng.random_range(0..12) as f64 * 0.5,
                rng.random_range(0..12) as f64 * 0.5,
                rng.random_range(0..6) as f64 * 0.5,
            );
            assert_eq!(index.nearest(&q), brute_force(&pts, &q));
        }
    }

    #[test]
    fn empty_build_is_none() {
        assert!(NeighborIndex::build(&[]).is_none());
    }
}
