//! Inputs shared by the criterion benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use osmag_nav::grid::{Cell, CellState};
use osmag_nav::{MetricPoint, OccupancyGrid};

/// Square grid with each cell occupied with probability `density`; the two
/// opposite corners are always free.
pub fn random_grid(side: usize, density: f64, seed: u64) -> OccupancyGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = OccupancyGrid::new(0.1, MetricPoint::new(0.0, 0.0), side, side).expect("valid size");
    for y in 0..side as i32 {
        for x in 0..side as i32 {
            if rng.random_bool(density) {
                g.set(Cell { x, y }, CellState::Occupied);
            }
        }
    }
    let far = side as i32 - 1;
    g.set(Cell { x: 0, y: 0 }, CellState::Free);
    g.set(Cell { x: far, y: far }, CellState::Free);
    g
}
