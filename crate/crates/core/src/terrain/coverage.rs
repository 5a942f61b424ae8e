use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::propagation::{ItmLite, PropagationModel, PropagationParams, RadioClass, Transmitter};
use super::{ElevationGrid, GridPoint};
use crate::error::{param, Error, Result};

/// Rasterised partition of the grid into sub-prefectures, each belonging to
/// one prefecture. Membership is decided by cell centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSet {
    assignment: Vec<usize>,
    prefecture_of: Vec<usize>,
    n_prefectures: usize,
    cell_counts: Vec<usize>,
    centroids: Vec<GridPoint>,
}

impl RegionSet {
    /// `assignment[cell]` is the sub-prefecture of each grid cell;
    /// `prefecture_of[s]` the prefecture of sub-prefecture `s`.
    pub fn new(grid: &ElevationGrid, assignment: Vec<usize>, prefecture_of: Vec<usize>) -> Result<Self> {
        if assignment.len() != grid.len() {
            return Err(Error::Partition(format!(
                "{} cell labels for a grid of {} cells",
                assignment.len(),
                grid.len()
            )));
        }
        let n_sub = prefecture_of.len();
        if n_sub == 0 {
            return Err(Error::Partition("no sub-prefectures".into()));
        }
        let mut cell_counts = vec![0usize; n_sub];
        let mut sx = vec![0.0; n_sub];
        let mut sy = vec![0.0; n_sub];
        for (cell, &s) in assignment.iter().enumerate() {
            if s >= n_sub {
                return Err(Error::Partition(format!(
                    "cell {cell} assigned to unknown sub-prefecture {s}"
                )));
            }
            let c = grid.center(cell);
            cell_counts[s] += 1;
            sx[s] += c.x;
            sy[s] += c.y;
        }
        if let Some(s) = cell_counts.iter().position(|&n| n == 0) {
            return Err(Error::Partition(format!("sub-prefecture {s} has an empty footprint")));
        }
        let n_prefectures = prefecture_of.iter().max().map_or(0, |m| m + 1);
        let mut used = vec![false; n_prefectures];
        for &p in &prefecture_of {
            used[p] = true;
        }
        if let Some(p) = used.iter().position(|u| !u) {
            return Err(Error::Partition(format!("prefecture {p} has no sub-prefecture")));
        }
        let centroids = (0..n_sub)
            .map(|s| {
                let n = cell_counts[s] as f64;
                GridPoint::new(sx[s] / n, sy[s] / n)
            })
            .collect();
        Ok(Self {
            assignment,
            prefecture_of,
            n_prefectures,
            cell_counts,
            centroids,
        })
    }

    /// One sub-prefecture in one prefecture covering the whole grid.
    pub fn single(grid: &ElevationGrid) -> Result<Self> {
        Self::new(grid, vec![0; grid.len()], vec![0])
    }

    pub fn n_subprefectures(&self) -> usize {
        self.prefecture_of.len()
    }

    pub fn n_prefectures(&self) -> usize {
        self.n_prefectures
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn subprefecture_of_cell(&self, cell: usize) -> usize {
        self.assignment[cell]
    }

    pub fn prefecture_of(&self, subpref: usize) -> usize {
        self.prefecture_of[subpref]
    }

    pub fn prefectures(&self) -> &[usize] {
        &self.prefecture_of
    }

    pub fn cell_count(&self, subpref: usize) -> usize {
        self.cell_counts[subpref]
    }

    pub fn centroid(&self, subpref: usize) -> GridPoint {
        self.centroids[subpref]
    }

    pub fn subprefectures_in(&self, prefecture: usize) -> impl Iterator<Item = usize> + '_ {
        self.prefecture_of
            .iter()
            .enumerate()
            .filter(move |(_, p)| **p == prefecture)
            .map(|(s, _)| s)
    }
}

/// Coverage shares and transmitter distances for one sub-prefecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageShares {
    pub subpref_id: usize,
    pub share_local_community: f64,
    pub share_any_community: f64,
    pub share_national: f64,
    pub share_private: f64,
    pub share_ethnic_match: f64,
    /// Distance (km) from the centroid to the nearest transmitter of each
    /// class; `None` when the roster has no transmitter of that class.
    pub dist_community_km: Option<f64>,
    pub dist_national_km: Option<f64>,
    pub dist_private_km: Option<f64>,
    pub dist_international_km: Option<f64>,
}

impl CoverageShares {
    pub fn distance_km(&self, class: RadioClass) -> Option<f64> {
        match class {
            RadioClass::Community => self.dist_community_km,
            RadioClass::National => self.dist_national_km,
            RadioClass::Private => self.dist_private_km,
            RadioClass::International => self.dist_international_km,
        }
    }
}

/// Cells whose field from `tx` reaches the model threshold.
pub fn coverage_mask(grid: &ElevationGrid, tx: &Transmitter, model: &impl PropagationModel) -> Vec<bool> {
    let mut mask = vec![false; grid.len()];
    let range_cells = model.max_range_km(tx) * 1000.0 / grid.cell_size();
    let (lo_i, hi_i) = window(tx.position.x, range_cells, grid.nx());
    let (lo_j, hi_j) = window(tx.position.y, range_cells, grid.ny());
    let threshold = model.threshold();
    for j in lo_j..=hi_j {
        for i in lo_i..=hi_i {
            let c = GridPoint::new(i as f64, j as f64);
            if tx.position.distance_cells(&c) > range_cells {
                continue;
            }
            if model.field_strength(grid, tx, &c) >= threshold {
                mask[grid.index(i, j)] = true;
            }
        }
    }
    mask
}

fn window(center: f64, radius: f64, n: usize) -> (usize, usize) {
    if !radius.is_finite() {
        return (0, n - 1);
    }
    let lo = (center - radius).floor().max(0.0) as usize;
    let hi = ((center + radius).ceil().max(0.0) as usize).min(n - 1);
    (lo.min(n - 1), hi)
}

/// Share of each sub-prefecture's cells at or above the threshold.
pub fn coverage_share(
    grid: &ElevationGrid,
    tx: &Transmitter,
    regions: &RegionSet,
    params: &PropagationParams,
) -> Result<Vec<f64>> {
    let model = ItmLite::new(params.clone())?;
    tx.validate(grid)?;
    check_regions(grid, regions)?;
    let mask = coverage_mask(grid, tx, &model);
    Ok(shares_from_mask(&mask, regions))
}

fn check_regions(grid: &ElevationGrid, regions: &RegionSet) -> Result<()> {
    if regions.assignment().len() != grid.len() {
        return Err(Error::Partition(
            "region set was built for a different grid".into(),
        ));
    }
    Ok(())
}

fn shares_from_mask(mask: &[bool], regions: &RegionSet) -> Vec<f64> {
    let mut hits = vec![0usize; regions.n_subprefectures()];
    for (cell, covered) in mask.iter().enumerate() {
        if *covered {
            hits[regions.subprefecture_of_cell(cell)] += 1;
        }
    }
    hits.iter()
        .enumerate()
        .map(|(s, h)| *h as f64 / regions.cell_count(s) as f64)
        .collect()
}

/// Coverage shares by radio class for every sub-prefecture, using the
/// ITM-lite model built from `params`.
///
/// `language_of_subpref[s]` is the majority language of sub-prefecture `s`;
/// each transmitter carries its own broadcast language.
pub fn aggregate_coverage(
    grid: &ElevationGrid,
    txs: &[Transmitter],
    regions: &RegionSet,
    params: &PropagationParams,
    language_of_subpref: &[usize],
) -> Result<Vec<CoverageShares>> {
    let model = ItmLite::new(params.clone())?;
    aggregate_coverage_with(grid, txs, regions, &model, language_of_subpref)
}

/// As [`aggregate_coverage`] but with any propagation model.
pub fn aggregate_coverage_with(
    grid: &ElevationGrid,
    txs: &[Transmitter],
    regions: &RegionSet,
    model: &impl PropagationModel,
    language_of_subpref: &[usize],
) -> Result<Vec<CoverageShares>> {
    check_regions(grid, regions)?;
    let n_sub = regions.n_subprefectures();
    if language_of_subpref.len() != n_sub {
        return param(format!(
            "{} majority languages for {} sub-prefectures",
            language_of_subpref.len(),
            n_sub
        ));
    }
    for tx in txs {
        tx.validate(grid)?;
        if tx.home_prefecture >= regions.n_prefectures() {
            return param(format!(
                "transmitter {} belongs to unknown prefecture {}",
                tx.id, tx.home_prefecture
            ));
        }
    }

    let masks: Vec<Vec<bool>> = txs.par_iter().map(|tx| coverage_mask(grid, tx, model)).collect();

    let union_of = |select: &dyn Fn(&Transmitter) -> bool| -> Vec<bool> {
        let mut u = vec![false; grid.len()];
        for (tx, m) in txs.iter().zip(&masks) {
            if select(tx) {
                u.iter_mut().zip(m).for_each(|(a, b)| *a |= *b);
            }
        }
        u
    };
    let any_comm = shares_from_mask(&union_of(&|t| t.radio_class == RadioClass::Community), regions);
    let national = shares_from_mask(&union_of(&|t| t.radio_class == RadioClass::National), regions);
    let private = shares_from_mask(&union_of(&|t| t.radio_class == RadioClass::Private), regions);

    // Local coverage: only the union of the sub-prefecture's own prefecture's
    // community transmitters counts.
    let mut local_hits = vec![0usize; n_sub];
    for p in 0..regions.n_prefectures() {
        let own: Vec<usize> = txs
            .iter()
            .enumerate()
            .filter(|(_, t)| t.radio_class == RadioClass::Community && t.home_prefecture == p)
            .map(|(k, _)| k)
            .collect();
        if own.is_empty() {
            continue;
        }
        for (cell, &s) in regions.assignment().iter().enumerate() {
            if regions.prefecture_of(s) == p && own.iter().any(|&k| masks[k][cell]) {
                local_hits[s] += 1;
            }
        }
    }

    // Per-transmitter shares for the language-match measure.
    let mut ethnic = vec![0.0f64; n_sub];
    for (tx, m) in txs.iter().zip(&masks) {
        if tx.radio_class != RadioClass::Community {
            continue;
        }
        for (s, share) in shares_from_mask(m, regions).into_iter().enumerate() {
            if language_of_subpref[s] == tx.language && share > ethnic[s] {
                ethnic[s] = share;
            }
        }
    }

    let km = grid.cell_size() / 1000.0;
    let nearest = |s: usize, class: RadioClass| -> Option<f64> {
        let c = regions.centroid(s);
        txs.iter()
            .filter(|t| t.radio_class == class)
            .map(|t| t.position.distance_cells(&c) * km)
            .min_by(f64::total_cmp)
    };

    Ok((0..n_sub)
        .map(|s| CoverageShares {
            subpref_id: s,
            share_local_community: local_hits[s] as f64 / regions.cell_count(s) as f64,
            share_any_community: any_comm[s],
            share_national: national[s],
            share_private: private[s],
            share_ethnic_match: ethnic[s],
            dist_community_km: nearest(s, RadioClass::Community),
            dist_national_km: nearest(s, RadioClass::National),
            dist_private_km: nearest(s, RadioClass::Private),
            dist_international_km: nearest(s, RadioClass::International),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terrain::{synth_terrain, PropagationMode};
    use proptest::prelude::*;

    fn tx(id: usize, x: f64, y: f64, power_kw: f64, class: RadioClass, pref: usize) -> Transmitter {
        Transmitter {
            id,
            position: GridPoint::new(x, y),
            mast_height: 40.0,
            power_kw,
            radio_class: class,
            home_prefecture: pref,
            language: 0,
        }
    }

    /// Left half prefecture 0 (one sub-prefecture), right half prefecture 1
    /// (top and bottom sub-prefectures).
    fn two_prefectures(grid: &ElevationGrid) -> RegionSet {
        let (nx, ny) = (grid.nx(), grid.ny());
        let assignment = (0..grid.len())
            .map(|c| {
                let (i, j) = (c % nx, c / nx);
                if i < nx / 2 {
                    0
                } else if j < ny / 2 {
                    1
                } else {
                    2
                }
            })
            .collect();
        RegionSet::new(grid, assignment, vec![0, 1, 1]).unwrap()
    }

    #[test]
    fn partition_violations_are_errors() {
        let grid = ElevationGrid::flat(4, 4, 100.0, 0.0).unwrap();
        assert!(matches!(
            RegionSet::new(&grid, vec![0; 16], vec![0, 0]),
            Err(Error::Partition(_))
        ));
        assert!(RegionSet::new(&grid, vec![0; 15], vec![0]).is_err());
        assert!(RegionSet::new(&grid, vec![3; 16], vec![0]).is_err());
        assert!(RegionSet::new(&grid, vec![0; 16], vec![1]).is_err());
        assert!(RegionSet::single(&grid).is_ok());
    }

    #[test]
    fn vanishing_power_covers_nothing() {
        let grid = synth_terrain(2, 30, 30, 1000.0, 1.0).unwrap();
        let regions = two_prefectures(&grid);
        let t = tx(0, 15.0, 15.0, 1e-12, RadioClass::Community, 0);
        let shares = coverage_share(&grid, &t, &regions, &PropagationParams::default()).unwrap();
        assert!(shares.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn unbounded_threshold_covers_everything() {
        let grid = synth_terrain(2, 30, 30, 1000.0, 3.0).unwrap();
        let regions = two_prefectures(&grid);
        let t = tx(0, 1.0, 1.0, 1e-6, RadioClass::Community, 0);
        let p = PropagationParams {
            threshold: f64::NEG_INFINITY,
            ..PropagationParams::default()
        };
        let shares = coverage_share(&grid, &t, &regions, &p).unwrap();
        assert!(shares.iter().all(|s| *s == 1.0));
    }

    #[test]
    fn flat_disc_matches_area_ratio() {
        let n = 101;
        let cell = 1000.0;
        let grid = ElevationGrid::flat(n, n, cell, 0.0).unwrap();
        let regions = RegionSet::single(&grid).unwrap();
        let p = PropagationParams {
            mode: PropagationMode::FreeSpace,
            ..PropagationParams::default()
        };
        let t = tx(0, 50.0, 50.0, 1e-4, RadioClass::Community, 0);
        let radius_cells = p.free_space_range_km(t.power_kw) * 1000.0 / cell;
        assert!(radius_cells > 10.0 && radius_cells < 50.0);
        let share = coverage_share(&grid, &t, &regions, &p).unwrap()[0];
        let disc = std::f64::consts::PI * radius_cells * radius_cells / (n * n) as f64;
        let boundary_layer = 2.0 * std::f64::consts::PI * radius_cells / (n * n) as f64;
        assert!((share - disc).abs() <= boundary_layer, "{share} vs {disc}");
    }

    #[test]
    fn neighbour_coverage_is_not_local() {
        // Transmitter of prefecture 1 sits inside prefecture 0's footprint.
        let grid = ElevationGrid::flat(40, 40, 1000.0, 0.0).unwrap();
        let regions = two_prefectures(&grid);
        let t = tx(0, 10.0, 20.0, 1.0, RadioClass::Community, 1);
        let cov = aggregate_coverage(&grid, &[t], &regions, &PropagationParams::default(), &[0, 0, 0])
            .unwrap();
        assert_eq!(cov[0].share_local_community, 0.0);
        assert!(cov[0].share_any_community > 0.0);
        assert!(cov[1].share_local_community > 0.0);
    }

    #[test]
    fn own_transmitter_covering_everything() {
        let grid = ElevationGrid::flat(20, 20, 500.0, 0.0).unwrap();
        let regions = RegionSet::single(&grid).unwrap();
        let t = tx(0, 10.0, 10.0, 1.0, RadioClass::Community, 0);
        let cov = aggregate_coverage(&grid, &[t], &regions, &PropagationParams::default(), &[0]).unwrap();
        assert_eq!(cov[0].share_local_community, 1.0);
        assert_eq!(cov[0].share_any_community, 1.0);
        assert_eq!(cov[0].share_ethnic_match, 1.0);
        assert_eq!(cov[0].share_national, 0.0);
        assert_eq!(cov[0].dist_national_km, None);
        assert!(cov[0].dist_community_km.unwrap() < 1.0);
    }

    #[test]
    fn unknown_home_prefecture_rejected() {
        let grid = ElevationGrid::flat(20, 20, 500.0, 0.0).unwrap();
        let regions = RegionSet::single(&grid).unwrap();
        let t = tx(0, 10.0, 10.0, 1.0, RadioClass::Community, 4);
        assert!(aggregate_coverage(&grid, &[t], &regions, &PropagationParams::default(), &[0]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn local_never_exceeds_any_and_threshold_is_monotone(
            seed in 0u64..500, x1 in 0.0..29.0f64, y1 in 0.0..29.0f64,
            x2 in 0.0..29.0f64, y2 in 0.0..29.0f64, bump in 0.5..20.0f64,
        ) {
            let grid = synth_terrain(seed, 30, 30, 2000.0, 1.5).unwrap();
            let regions = two_prefectures(&grid);
            let txs = vec![
                tx(0, x1, y1, 0.05, RadioClass::Community, 0),
                tx(1, x2, y2, 0.05, RadioClass::Community, 1),
            ];
            let p = PropagationParams::default();
            let lo = aggregate_coverage(&grid, &txs, &regions, &p, &[0, 0, 1]).unwrap();
            let hi_p = PropagationParams { threshold: p.threshold + bump, ..p.clone() };
            let hi = aggregate_coverage(&grid, &txs, &regions, &hi_p, &[0, 0, 1]).unwrap();
            for (a, b) in lo.iter().zip(&hi) {
                prop_assert!(a.share_local_community <= a.share_any_community);
                prop_assert!(b.share_local_community <= a.share_local_community);
                prop_assert!(b.share_any_community <= a.share_any_community);
                prop_assert!(b.share_ethnic_match <= a.share_ethnic_match);
            }
        }
    }
}
