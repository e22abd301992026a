//! Randomly shifted Richtmyer lattice with the baker's (tent) transform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PRIMES: [u32; 64] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107,
    109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193, 197, 199, 211, 223, 227, 229,
    233, 239, 241, 251, 257, 263, 269, 271, 277, 281, 283, 293, 307, 311,
];

fn nth_prime(j: usize) -> u32 {
    if j < PRIMES.len() {
        return PRIMES[j];
    }
    let mut count = PRIMES.len();
    let mut cand = PRIMES[PRIMES.len() - 1] + 2;
    loop {
        if (2..).take_while(|d: &u32| d * d <= cand).all(|d| !cand.is_multiple_of(d)) {
            if count == j {
                return cand;
            }
            count += 1;
        }
        cand += 2;
    }
}

/// Point set of `shifts` independent random shifts of an `points`-point lattice in `dim` dimensions.
#[derive(Debug, Clone)]
pub struct ShiftedLattice {
    generators: Vec<f64>,
    shifts: Vec<Vec<f64>>,
    points: usize,
}

impl ShiftedLattice {
    pub fn new(dim: usize, shifts: usize, points: usize, seed: u64) -> Self {
        let generators = (0..dim).map(|j| (nth_prime(j) as f64).sqrt().fract()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shifts = (0..shifts).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect();
        ShiftedLattice { generators, shifts, points }
    }

    pub fn n_shifts(&self) -> usize {
        self.shifts.len()
    }

    pub fn n_points(&self) -> usize {
        self.points
    }

    pub fn dim(&self) -> usize {
        self.generators.len()
    }

    /// Fill `out` with point `k` (0-based) of shift `r`, mapped into `[0, 1]`.
    #[inline]
    pub fn point(&self, r: usize, k: usize, out: &mut [f64]) {
        let kk = (k + 1) as f64;
        for ((o, &g), &s) in out.iter_mut().zip(&self.generators).zip(&self.shifts[r]) {
            let x = (kk * g + s).fract();
            *o = (2.0 * x - 1.0).abs();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primes_extend_past_table() {
        assert_eq!(nth_prime(0), 2);
        assert_eq!(nth_prime(63), 311);
        assert_eq!(nth_prime(64), 313);
    }

    #[test]
    fn lattice_integrates_smooth_function() {
        // E[u1 * u2] = 1/4 for independent uniforms.
        let lat = ShiftedLattice::new(2, 4, 2048, 7);
        let mut u = [0.0; 2];
        let mut acc = 0.0;
        for r in 0..4 {
            for k in 0..2048 {
                lat.point(r, k, &mut u);
                acc += u[0] * u[1];
            }
        }
        assert!((acc / (4.0 * 2048.0) - 0.25).abs() < 1e-4);
    }
}
