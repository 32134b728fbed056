//! Permutohedral lattice for approximate high-dimensional Gaussian filtering
//! (splat, blur along each lattice direction, slice).
//!
//! Features are expected pre-scaled so the target kernel is
//! `exp(-|f_i - f_j|^2 / 2)`. The output approximates that kernel up to a
//! roughly constant factor; callers that need absolute kernel sums calibrate
//! against a few exact sums.

use std::collections::HashMap;

#[derive(Debug, Clone, Copy)]
struct Neighbours {
    prev: Option<usize>,
    next: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct PermutohedralLattice {
    dims: usize,
    points: usize,
    vertices: usize,
    /// Lattice vertex of each point's simplex corners, `points × (dims + 1)`.
    offsets: Vec<usize>,
    barycentric: Vec<f64>,
    /// Blur neighbours per direction, `(dims + 1) × vertices`.
    neighbours: Vec<Neighbours>,
}

impl PermutohedralLattice {
    /// Builds the lattice for `features.len() / dims` points.
    pub fn new(features: &[f64], dims: usize) -> Self {
        assert!(dims > 0 && features.len().is_multiple_of(dims), "features must be points x dims");
        let d = dims;
        let n = features.len() / d;
        let d1 = d + 1;

        let inv_std_dev = (2.0f64 / 3.0).sqrt() * d1 as f64;
        let scale: Vec<f64> = (0..d)
            .map(|i| inv_std_dev / (((i + 1) * (i + 2)) as f64).sqrt())
            .collect();
        // Canonical simplex: canonical[k][j] for remainder k.
        let mut canonical = vec![0i32; d1 * d1];
        for k in 0..=d {
            for j in 0..=(d - k) {
                canonical[k * d1 + j] = k as i32;
            }
            for j in (d - k + 1)..=d {
                canonical[k * d1 + j] = k as i32 - d1 as i32;
            }
        }

        let mut table: HashMap<Vec<i32>, usize> = HashMap::new();
        let mut keys: Vec<Vec<i32>> = Vec::new();
        let mut offsets = vec![0usize; n * d1];
        let mut barycentric_out = vec![0f64; n * d1];

        let mut elevated = vec![0f64; d1];
        let mut rem0 = vec![0i32; d1];
        let mut rank = vec![0i32; d1];
        let mut bary = vec![0f64; d + 2];
        let mut key = vec![0i32; d];

        for p in 0..n {
            let f = &features[p * d..(p + 1) * d];
            // Elevate onto the hyperplane sum(x) = 0 in d+1 dimensions.
            let mut sm = 0.0;
            for j in (1..=d).rev() {
                let cf = f[j - 1] * scale[j - 1];
                elevated[j] = sm - j as f64 * cf;
                sm += cf;
            }
            elevated[0] = sm;

            // Closest remainder-0 lattice point.
            let mut sum = 0i32;
            for i in 0..=d {
                let v = elevated[i] / d1 as f64;
                let up = v.ceil() * d1 as f64;
                let down = v.floor() * d1 as f64;
                rem0[i] = if up - elevated[i] < elevated[i] - down { up as i32 } else { down as i32 };
                sum += rem0[i];
            }
            sum /= d1 as i32;

            // Rank the differential.
            rank.iter_mut().for_each(|r| *r = 0);
            for i in 0..d {
                let di = elevated[i] - rem0[i] as f64;
                for j in (i + 1)..=d {
                    if di < elevated[j] - rem0[j] as f64 {
                        rank[i] += 1;
                    } else {
                        rank[j] += 1;
                    }
                }
            }
            // Wrap points that fell off the plane.
            for i in 0..=d {
                rank[i] += sum;
                if rank[i] < 0 {
                    rank[i] += d1 as i32;
                    rem0[i] += d1 as i32;
                } else if rank[i] > d as i32 {
                    rank[i] -= d1 as i32;
                    rem0[i] -= d1 as i32;
                }
            }

            bary.iter_mut().for_each(|b| *b = 0.0);
            for i in 0..=d {
                let v = (elevated[i] - rem0[i] as f64) / d1 as f64;
                let r = rank[i] as usize;
                bary[d - r] += v;
                bary[d - r + 1] -= v;
            }
            bary[0] += 1.0 + bary[d + 1];

            for remainder in 0..=d {
                for i in 0..d {
                    key[i] = rem0[i] + canonical[remainder * d1 + rank[i] as usize];
                }
                let next = keys.len();
                let idx = *table.entry(key.clone()).or_insert_with(|| {
                    keys.push(key.clone());
                    next
                });
                offsets[p * d1 + remainder] = idx;
                barycentric_out[p * d1 + remainder] = bary[remainder];
            }
        }

        let m = keys.len();
        let mut neighbours = Vec::with_capacity(d1 * m);
        let mut n1 = vec![0i32; d];
        let mut n2 = vec![0i32; d];
        for j in 0..=d {
            for k in keys.iter() {
                for i in 0..d {
                    n1[i] = k[i] - 1;
                    n2[i] = k[i] + 1;
                }
                if j < d {
                    n1[j] = k[j] + d as i32;
                    n2[j] = k[j] - d as i32;
                }
                neighbours.push(Neighbours {
                    prev: table.get(&n1).copied(),
                    next: table.get(&n2).copied(),
                });
            }
        }

        PermutohedralLattice {
            dims: d,
            points: n,
            vertices: m,
            offsets,
            barycentric: barycentric_out,
            neighbours,
        }
    }

    pub fn vertices(&self) -> usize {
        self.vertices
    }

    /// Filters `values` (`points × channels`, point-major).
    pub fn filter(&self, values: &[f64], channels: usize) -> Vec<f64> {
        assert_eq!(values.len(), self.points * channels, "values must be points x channels");
        let d1 = self.dims + 1;
        let vc = channels;
        // Slot 0 is a zero sentinel for missing neighbours.
        let mut grid = vec![0f64; (self.vertices + 1) * vc];
        for p in 0..self.points {
            for r in 0..d1 {
                let o = self.offsets[p * d1 + r] + 1;
                let w = self.barycentric[p * d1 + r];
                for k in 0..vc {
                    grid[o * vc + k] += w * values[p * vc + k];
                }
            }
        }

        let mut scratch = vec![0f64; grid.len()];
        for j in 0..d1 {
            for i in 0..self.vertices {
                let nb = self.neighbours[j * self.vertices + i];
                let prev = nb.prev.map_or(0, |v| v + 1);
                let next = nb.next.map_or(0, |v| v + 1);
                for k in 0..vc {
                    scratch[(i + 1) * vc + k] =
                        grid[(i + 1) * vc + k] + 0.5 * (grid[prev * vc + k] + grid[next * vc + k]);
                }
            }
            std::mem::swap(&mut grid, &mut scratch);
        }

        let alpha = 1.0 / (1.0 + 2f64.powi(-(self.dims as i32)));
        let mut out = vec![0f64; self.points * vc];
        for p in 0..self.points {
            for r in 0..d1 {
                let o = self.offsets[p * d1 + r] + 1;
                let w = self.barycentric[p * d1 + r] * alpha;
                for k in 0..vc {
                    out[p * vc + k] += w * grid[o * vc + k];
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn barycentric_weights_sum_to_one() {
        let feats: Vec<f64> = (0..40).map(|i| (i as f64 * 0.731).sin() * 3.0).collect();
        let lat = PermutohedralLattice::new(&feats, 5);
        for p in 0..8 {
            let s: f64 = lat.barycentric[p * 6..(p + 1) * 6].iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "{s}");
            assert!(lat.barycentric[p * 6..(p + 1) * 6].iter().all(|&w| w >= -1e-12));
        }
    }

    #[test]
    fn filter_is_linear_and_smooths() {
        // Points on a 1-D line; filtering a constant gives a smooth profile
        // that is larger in the middle than at the ends.
        let feats: Vec<f64> = (0..30).map(|i| i as f64 * 0.3).collect();
        let lat = PermutohedralLattice::new(&feats, 1);
        let ones = vec![1.0; 30];
        let out = lat.filter(&ones, 1);
        assert!(out[15] > out[0]);
        let twice = lat.filter(&vec![2.0; 30], 1);
        for (a, b) in out.iter().zip(&twice) {
            assert!((2.0 * a - b).abs() < 1e-9);
        }
    }
}
