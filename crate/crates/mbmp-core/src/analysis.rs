//! Control-overhead mathematics for the two query styles.
//!
//! The bounded 2-hop query flood reaches roughly `m + m^2` listeners in
//! expectation (`m` = mean tx-range neighbor count), the enlarged-radius
//! single broadcast about `4 m`; their expected ratio theta decides which
//! variant is cheaper at a given density. This module evaluates theta
//! three ways: analytically over a density field, as a closed-form lower
//! bound, and by Monte Carlo over concrete placements.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{Arena, Position, Topology};

/// Node density over the arena: constant, or an empirical grid estimated
/// from a concrete topology.
#[derive(Debug, Clone)]
pub enum DensityField {
    Uniform { rho: f64 },
    Grid { cell_side: f64, cols: usize, rows: usize, rho: Vec<f64>, arena: Arena },
}

impl DensityField {
    pub fn uniform(rho: f64) -> Self {
        DensityField::Uniform { rho }
    }

    /// Estimates density on a grid of cell area `(r/10)^2` by counting
    /// nodes within `r` of each cell center, divided by the disc area
    /// clipped to the arena (otherwise boundary cells read falsely low).
    pub fn from_topology(topo: &Topology, r: f64) -> Self {
        Self::from_topology_with_cell(topo, r, r / 10.0)
    }

    pub fn from_topology_with_cell(topo: &Topology, r: f64, cell_side: f64) -> Self {
        let arena = topo.arena;
        let cols = (arena.width / cell_side).ceil().max(1.0) as usize;
        let rows = (arena.height / cell_side).ceil().max(1.0) as usize;
        let mut rho = Vec::with_capacity(cols * rows);
        for j in 0..rows {
            for i in 0..cols {
                let center = Position {
                    x: (i as f64 + 0.5) * cell_side,
                    y: (j as f64 + 0.5) * cell_side,
                };
                let count =
                    topo.positions.iter().filter(|p| p.distance(center) <= r).count() as f64;
                let area = clipped_disc_area(center, r, arena);
                rho.push(if area > 0.0 { count / area } else { 0.0 });
            }
        }
        DensityField::Grid { cell_side, cols, rows, rho, arena }
    }

    /// Integral of the density over the arena; approximately the node
    /// count for an empirical field.
    pub fn total_mass(&self, arena: Arena) -> f64 {
        match self {
            DensityField::Uniform { rho } => rho * arena.area(),
            DensityField::Grid { cell_side, rho, .. } => {
                let d = cell_side * cell_side;
                rho.iter().sum::<f64>() * d
            }
        }
    }
}

/// Area of the disc around `center` with radius `r` that lies inside the
/// arena rectangle. Midpoint-rule integration over x; exact enough for
/// density estimation (relative error well below 1e-4 at 256 slices).
fn clipped_disc_area(center: Position, r: f64, arena: Arena) -> f64 {
    let x_lo = (center.x - r).max(0.0);
    let x_hi = (center.x + r).min(arena.width);
    if x_hi <= x_lo {
        return 0.0;
    }
    const SLICES: usize = 256;
    let dx = (x_hi - x_lo) / SLICES as f64;
    let mut area = 0.0;
    for k in 0..SLICES {
        let x = x_lo + (k as f64 + 0.5) * dx;
        let half = (r * r - (x - center.x).powi(2)).max(0.0).sqrt();
        let y_lo = (center.y - half).max(0.0);
        let y_hi = (center.y + half).min(arena.height);
        if y_hi > y_lo {
            area += (y_hi - y_lo) * dx;
        }
    }
    area
}

/// Expected overhead ratio of the 2-hop query flood to the enlarged
/// single broadcast, over a density field.
///
/// Per region i with density rho_i and request share q·rho_i·d, the
/// flood is heard `pi r^2 rho_i + (pi r^2 rho_i)^2` times (every
/// first-ring node rebroadcasts once, nobody suppresses duplicates) and
/// the wide broadcast `4 pi r^2 rho_i` times. The request rate `q`
/// multiplies numerator and denominator alike, so any constant value
/// leaves the ratio untouched.
pub fn theta_analytic(field: &DensityField, r: f64, q: f64) -> Result<f64> {
    let disc = std::f64::consts::PI * r * r;
    match field {
        DensityField::Uniform { rho } => {
            if !(*rho > 0.0) {
                return Err(Error::UndefinedRatio("density is zero everywhere".to_string()));
            }
            let m = disc * rho;
            let _ = q;
            Ok((1.0 + m) / 4.0)
        }
        DensityField::Grid { cell_side, rho, .. } => {
            let d = cell_side * cell_side;
            let mut num = 0.0;
            let mut den = 0.0;
            for &rho_i in rho {
                let m = disc * rho_i;
                let weight = q * rho_i * d;
                num += (m + m * m) * weight;
                den += 4.0 * m * weight;
            }
            if den <= 0.0 {
                return Err(Error::UndefinedRatio("density is zero everywhere".to_string()));
            }
            Ok(num / den)
        }
    }
}

/// Closed-form floor of the overhead ratio: `1/4 + pi r^2 n / (4 A)`.
/// Any density profile with the same node count over the same arena has
/// an analytic ratio at or above this (uniform density attains it).
pub fn theta_lower_bound(node_count: f64, arena_area: f64, r: f64) -> f64 {
    assert!(arena_area > 0.0, "arena area must be positive");
    0.25 + std::f64::consts::PI * r * r * node_count / (4.0 * arena_area)
}

/// World the Monte-Carlo estimator samples requesters from.
pub enum McInput<'a> {
    /// Fresh uniform placement each trial, distances on a torus so the
    /// comparison against the (edge-free) analytic value is clean.
    Uniform { rho: f64, arena: Arena },
    /// A fixed concrete placement; plain Euclidean distances.
    Fixed(&'a Topology),
}

#[derive(Debug, Clone, Serialize)]
pub struct ThetaEstimate {
    pub ratio: f64,
    pub stderr: f64,
    pub trials_used: u64,
    pub trials_excluded: u64,
}

/// Estimates the overhead ratio by simulating one admission query per
/// trial: count every reception of the 2-hop flood against every
/// reception of one double-radius broadcast. Each first-ring node
/// rebroadcasts exactly once and duplicate receptions all count, but a
/// rebroadcast's echo back to its sender or to the original requester
/// does not (the density-product accounting never credits those).
/// Requesters with no first-ring neighbor contribute (0, 0) and are
/// excluded. The estimate is the ratio of summed counts; its spread
/// comes from a 200-way bootstrap over the per-trial pairs.
pub fn theta_monte_carlo<R: Rng>(
    input: McInput<'_>,
    r: f64,
    trials: u32,
    rng: &mut R,
) -> Result<ThetaEstimate> {
    if trials == 0 {
        return Err(Error::Config(vec!["trials: must be >= 1".to_string()]));
    }

    let mut samples: Vec<(u64, u64)> = Vec::new();
    let mut excluded = 0u64;
    let mut fresh: Vec<Position> = Vec::new();
    for _ in 0..trials {
        let (positions, wrap): (&[Position], Option<(f64, f64)>) = match &input {
            McInput::Uniform { rho, arena } => {
                let n = (rho * arena.area()).round().max(1.0) as usize;
                fresh.clear();
                fresh.extend((0..n).map(|_| Position {
                    x: rng.gen_range(0.0..arena.width),
                    y: rng.gen_range(0.0..arena.height),
                }));
                (&fresh, Some((arena.width, arena.height)))
            }
            McInput::Fixed(topo) => (&topo.positions, None),
        };
        if positions.is_empty() {
            excluded += 1;
            continue;
        }
        let s = rng.gen_range(0..positions.len());
        let dist = |a: Position, b: Position| -> f64 {
            match wrap {
                Some((w, h)) => {
                    let dx = (a.x - b.x).abs().min(w - (a.x - b.x).abs());
                    let dy = (a.y - b.y).abs().min(h - (a.y - b.y).abs());
                    (dx * dx + dy * dy).sqrt()
                }
                None => a.distance(b),
            }
        };

        let mut first_ring: Vec<usize> = Vec::new();
        let mut power = 0u64;
        for (i, p) in positions.iter().enumerate() {
            if i == s {
                continue;
            }
            let d = dist(positions[s], *p);
            if d <= r {
                first_ring.push(i);
            }
            if d <= 2.0 * r {
                power += 1;
            }
        }
        if first_ring.is_empty() {
            excluded += 1;
            continue;
        }
        let mut multi = first_ring.len() as u64;
        for &v in &first_ring {
            multi += positions
                .iter()
                .enumerate()
                .filter(|(u, p)| *u != v && *u != s && dist(positions[v], **p) <= r)
                .count() as u64;
        }
        samples.push((multi, power));
    }

    if samples.is_empty() {
        return Err(Error::UndefinedRatio(
            "every trial drew a requester with no neighbors".to_string(),
        ));
    }
    let sum_multi: u64 = samples.iter().map(|s| s.0).sum();
    let sum_power: u64 = samples.iter().map(|s| s.1).sum();
    if sum_power == 0 {
        return Err(Error::UndefinedRatio("no receptions in any trial".to_string()));
    }
    let ratio = sum_multi as f64 / sum_power as f64;

    const BOOTSTRAP: usize = 200;
    let mut boots = Vec::with_capacity(BOOTSTRAP);
    for _ in 0..BOOTSTRAP {
        let mut bm = 0u64;
        let mut bp = 0u64;
        for _ in 0..samples.len() {
            let (m, p) = samples[rng.gen_range(0..samples.len())];
            bm += m;
            bp += p;
        }
        if bp > 0 {
            boots.push(bm as f64 / bp as f64);
        }
    }
    let mean = boots.iter().sum::<f64>() / boots.len() as f64;
    let var = boots.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / boots.len() as f64;

    Ok(ThetaEstimate {
        ratio,
        stderr: var.sqrt(),
        trials_used: samples.len() as u64,
        trials_excluded: excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RadioConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const R: f64 = 250.0;

    fn disc() -> f64 {
        std::f64::consts::PI * R * R
    }

    fn grid_field(rhos: &[f64], cell_side: f64) -> DensityField {
        DensityField::Grid {
            cell_side,
            cols: rhos.len(),
            rows: 1,
            rho: rhos.to_vec(),
            arena: Arena { width: cell_side * rhos.len() as f64, height: cell_side },
        }
    }

    #[test]
    fn uniform_ratio_is_one_at_mean_degree_three() {
        let rho = 3.0 / disc();
        let theta = theta_analytic(&DensityField::uniform(rho), R, 1.0).unwrap();
        assert!((theta - 1.0).abs() < 1e-12, "theta {theta}");
    }

    #[test]
    fn uniform_ratio_matches_the_closed_form_for_any_degree() {
        for m in [0.1, 1.0, 3.0, 9.366, 40.0] {
            let rho = m / disc();
            let theta = theta_analytic(&DensityField::uniform(rho), R, 1.0).unwrap();
            assert!((theta - (0.25 + m / 4.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn lower_bound_hits_one_at_the_breakeven_density() {
        let theta = theta_lower_bound(15.3, 1.0e6, R);
        assert!((theta - 1.001037).abs() < 1e-5, "theta {theta}");
        assert!((0.97..=1.03).contains(&theta));
    }

    #[test]
    fn lower_bound_limits_behave() {
        assert_eq!(theta_lower_bound(0.0, 1.0e6, R), 0.25);
        let a = theta_lower_bound(50.0, 1.0e6, R) - 0.25;
        let b = theta_lower_bound(50.0, 2.0e6, R) - 0.25;
        assert!((a - 2.0 * b).abs() < 1e-12, "doubling the arena halves the density term");
    }

    #[test]
    fn uniform_analytic_equals_the_bound_at_matching_count() {
        let arena = Arena { width: 3000.0, height: 2000.0 };
        for rho in [5.0e-6, 15.3e-6, 80.0e-6] {
            let theta = theta_analytic(&DensityField::uniform(rho), R, 1.0).unwrap();
            let bound = theta_lower_bound(rho * arena.area(), arena.area(), R);
            assert!((theta - bound).abs() < 1e-12);
        }
    }

    #[test]
    fn any_density_profile_sits_at_or_above_the_uniform_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..20 {
            let cells = rng.gen_range(4..40);
            let cell_side = 400.0;
            let rhos: Vec<f64> =
                (0..cells).map(|_| rng.gen_range(0.0..120.0e-6)).collect();
            let field = grid_field(&rhos, cell_side);
            let arena_area = cell_side * cell_side * cells as f64;
            let mass = field.total_mass(Arena { width: 0.0, height: 0.0 });
            let theta = match theta_analytic(&field, R, 1.0) {
                Ok(t) => t,
                // All-zero draw: no requests anywhere, nothing to compare.
                Err(Error::UndefinedRatio(_)) => continue,
                Err(e) => panic!("{e}"),
            };
            let bound = theta_lower_bound(mass, arena_area, R);
            assert!(theta >= bound - 1e-9, "theta {theta} < bound {bound}");
        }
    }

    #[test]
    fn request_rate_cancels_out() {
        let field = grid_field(&[10.0e-6, 55.0e-6, 23.0e-6, 80.0e-6], 500.0);
        let a = theta_analytic(&field, R, 1.0).unwrap();
        let b = theta_analytic(&field, R, 17.25).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn skew_between_two_cells_raises_the_ratio_strictly() {
        let mean = 40.0e-6;
        let uniform = theta_analytic(&grid_field(&[mean, mean], 500.0), R, 1.0).unwrap();
        let skewed =
            theta_analytic(&grid_field(&[20.0e-6, 60.0e-6], 500.0), R, 1.0).unwrap();
        assert!(skewed > uniform + 1e-6, "{skewed} vs {uniform}");
    }

    #[test]
    fn zero_density_is_an_undefined_ratio() {
        assert!(matches!(
            theta_analytic(&DensityField::uniform(0.0), R, 1.0),
            Err(Error::UndefinedRatio(_))
        ));
        assert!(matches!(
            theta_analytic(&grid_field(&[0.0, 0.0], 500.0), R, 1.0),
            Err(Error::UndefinedRatio(_))
        ));
    }

    #[test]
    fn empirical_field_mass_tracks_the_node_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let arena = Arena { width: 4000.0, height: 4000.0 };
        let topo = Topology {
            positions: (0..200)
                .map(|_| Position {
                    x: rng.gen_range(0.0..arena.width),
                    y: rng.gen_range(0.0..arena.height),
                })
                .collect(),
            radio: RadioConfig::default(),
            arena,
        };
        let field = DensityField::from_topology(&topo, R);
        let mass = field.total_mass(arena);
        assert!((mass - 200.0).abs() < 10.0, "mass {mass}");
    }

    #[test]
    fn empirical_theta_is_stable_under_grid_refinement() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let arena = Arena { width: 3000.0, height: 3000.0 };
        let topo = Topology {
            positions: (0..150)
                .map(|_| Position {
                    x: rng.gen_range(0.0..arena.width),
                    y: rng.gen_range(0.0..arena.height),
                })
                .collect(),
            radio: RadioConfig::default(),
            arena,
        };
        let coarse = DensityField::from_topology_with_cell(&topo, R, R / 10.0);
        let fine =
            DensityField::from_topology_with_cell(&topo, R, R / 10.0 / std::f64::consts::SQRT_2);
        let t_coarse = theta_analytic(&coarse, R, 1.0).unwrap();
        let t_fine = theta_analytic(&fine, R, 1.0).unwrap();
        assert!(
            ((t_coarse - t_fine) / t_coarse).abs() < 0.01,
            "coarse {t_coarse} fine {t_fine}"
        );
    }

    #[test]
    fn symmetric_triangle_gives_an_exact_deterministic_ratio() {
        // Equilateral triangle, side 100: every requester has 2 first-
        // ring neighbors, each rebroadcast heard by the one remaining
        // third party, and 2 nodes in double range.
        // theta = (2 + 2) / 2 = 2, with zero spread.
        let topo = Topology {
            positions: vec![
                Position { x: 0.0, y: 0.0 },
                Position { x: 100.0, y: 0.0 },
                Position { x: 50.0, y: 86.6 },
            ],
            radio: RadioConfig::default(),
            arena: Arena { width: 1000.0, height: 1000.0 },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let est = theta_monte_carlo(McInput::Fixed(&topo), R, 500, &mut rng).unwrap();
        assert_eq!(est.ratio, 2.0);
        assert_eq!(est.stderr, 0.0);
        assert_eq!(est.trials_used, 500);
        assert_eq!(est.trials_excluded, 0);
    }

    #[test]
    fn isolated_requesters_are_excluded_not_counted() {
        // Two nodes too far apart to hear each other: every trial lands
        // on a neighborless requester.
        let topo = Topology {
            positions: vec![Position { x: 0.0, y: 0.0 }, Position { x: 900.0, y: 0.0 }],
            radio: RadioConfig::default(),
            arena: Arena { width: 2000.0, height: 2000.0 },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(matches!(
            theta_monte_carlo(McInput::Fixed(&topo), R, 50, &mut rng),
            Err(Error::UndefinedRatio(_))
        ));

        // A pair plus one far loner: loner trials are excluded, pair
        // trials still produce the estimate.
        let topo2 = Topology {
            positions: vec![
                Position { x: 0.0, y: 0.0 },
                Position { x: 100.0, y: 0.0 },
                Position { x: 1800.0, y: 0.0 },
            ],
            radio: RadioConfig::default(),
            arena: Arena { width: 2000.0, height: 2000.0 },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let est = theta_monte_carlo(McInput::Fixed(&topo2), R, 300, &mut rng).unwrap();
        assert!(est.trials_excluded > 0);
        assert_eq!(est.trials_used + est.trials_excluded, 300);
        // Pair requester: 1 first-ring neighbor whose rebroadcast
        // reaches nobody new: theta = (1 + 0) / 1 = 1.
        assert_eq!(est.ratio, 1.0);
    }

    #[test]
    fn uniform_monte_carlo_agrees_with_the_analytic_value() {
        let rho = 47.7e-6;
        let arena = Arena { width: 4000.0, height: 4000.0 };
        let analytic = theta_analytic(&DensityField::uniform(rho), R, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let est =
            theta_monte_carlo(McInput::Uniform { rho, arena }, R, 3000, &mut rng).unwrap();
        assert!(est.stderr > 0.0);
        assert!(
            (est.ratio - analytic).abs() <= 3.0 * est.stderr,
            "mc {} vs analytic {analytic}, stderr {}",
            est.ratio,
            est.stderr
        );
    }

    #[test]
    fn clustered_placement_exceeds_the_uniform_bound() {
        // 60 nodes crammed into a 300 m blob inside a big arena: the
        // flood overhead explodes while the bound stays near 1/4.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let arena = Arena { width: 4000.0, height: 4000.0 };
        let topo = Topology {
            positions: (0..60)
                .map(|_| Position {
                    x: 2000.0 + rng.gen_range(-150.0..150.0),
                    y: 2000.0 + rng.gen_range(-150.0..150.0),
                })
                .collect(),
            radio: RadioConfig::default(),
            arena,
        };
        let bound = theta_lower_bound(60.0, arena.area(), R);
        let est = theta_monte_carlo(McInput::Fixed(&topo), R, 400, &mut rng).unwrap();
        assert!(est.ratio >= bound, "mc {} vs bound {bound}", est.ratio);
    }

    #[test]
    fn zero_trials_is_a_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let arena = Arena { width: 1000.0, height: 1000.0 };
        assert!(theta_monte_carlo(McInput::Uniform { rho: 1.0e-5, arena }, R, 0, &mut rng)
            .is_err());
    }
}
