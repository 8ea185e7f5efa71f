use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PatchGrid;
use crate::error::{KatError, Result};

pub const MAX_ITERATIONS: usize = 300;

pub type Point = (f64, f64);

fn dist2(a: Point, b: Point) -> f64 {
    let (dx, dy) = (a.0 - b.0, a.1 - b.1);
    dx * dx + dy * dy
}

fn nearest(p: Point, centers: &[Point]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, &c) in centers.iter().enumerate() {
        let d = dist2(p, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Within-cluster sum of squared distances to the nearest center.
pub fn inertia(points: &[Point], centers: &[Point]) -> f64 {
    points.iter().map(|&p| nearest(p, centers).1).sum()
}

fn plus_plus_init(points: &[Point], k: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..points.len())]);
    let mut d2: Vec<f64> = points.iter().map(|&p| dist2(p, centers[0])).collect();
    while centers.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // every point already coincides with a center
            Err(_) => rng.random_range(0..points.len()),
        };
        let c = points[next];
        centers.push(c);
        for (d, &p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, c));
        }
    }
    centers
}

/// Lloyd's algorithm on the grid coordinates with k-means++ seeding.
///
/// Stops when assignments no longer change or after [`MAX_ITERATIONS`].
/// A cluster that loses all its points is moved onto the point lying
/// farthest from its current center.
pub fn kmeans_cluster(grid: &PatchGrid, k: usize, seed: u64) -> Result<Vec<Point>> {
    let points = grid.points();
    if k == 0 {
        return Err(KatError::param("k-means needs at least one cluster"));
    }
    if k > points.len() {
        return Err(KatError::param(format!(
            "k-means with {k} clusters over {} points",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_init(&points, k, &mut rng);
    let mut assignment = vec![usize::MAX; points.len()];

    for _ in 0..MAX_ITERATIONS {
        let mut changed = false;
        for (a, &p) in assignment.iter_mut().zip(&points) {
            let (c, _) = nearest(p, &centers);
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }

        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for (&a, &p) in assignment.iter().zip(&points) {
            sums[a].0 += p.0;
            sums[a].1 += p.1;
            sums[a].2 += 1;
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s.2 > 0 {
                *c = (s.0 / s.2 as f64, s.1 / s.2 as f64);
            }
        }
        for empty in (0..k).filter(|&c| sums[c].2 == 0) {
            let far = (0..points.len())
                .max_by(|&i, &j| {
                    let di = dist2(points[i], centers[assignment[i]]);
                    let dj = dist2(points[j], centers[assignment[j]]);
                    di.total_cmp(&dj).then(j.cmp(&i))
                })
                .expect("non-empty point set");
            centers[empty] = points[far];
            assignment[far] = empty;
        }
    }
    Ok(centers)
}
