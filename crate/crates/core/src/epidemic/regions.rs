use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::metrics::{fractionalization, GroupShares};
use crate::rng::stream_rng;
use crate::terrain::{
    CoverageShares, ElevationGrid, GridPoint, RadioClass, RegionSet, Transmitter,
};

/// Knobs of the synthetic administrative geography.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionConfig {
    pub n_prefectures: usize,
    pub n_subprefectures: usize,
    /// Groups of prefectures above the prefecture level.
    pub n_natural_regions: usize,
    pub n_languages: usize,
    pub mean_population: f64,
    /// Log-scale standard deviation of sub-prefecture populations.
    pub population_dispersion: f64,
    /// Probability that a prefecture's majority language is its region's.
    pub prefecture_follows_region: f64,
    /// Probability that a sub-prefecture's majority language is its prefecture's.
    pub subprefecture_follows_prefecture: f64,
    /// Range of the majority-language share inside a sub-prefecture.
    pub majority_share_min: f64,
    pub majority_share_max: f64,
    /// Epicentre location as fractions of the grid extent.
    pub epicenter_fx: f64,
    pub epicenter_fy: f64,
}

impl Default for RegionConfig {
    fn default() -> Self {
        Self {
            n_prefectures: 34,
            n_subprefectures: 341,
            n_natural_regions: 8,
            n_languages: 4,
            mean_population: 33_000.0,
            population_dispersion: 0.6,
            prefecture_follows_region: 0.8,
            subprefecture_follows_prefecture: 0.85,
            majority_share_min: 0.75,
            majority_share_max: 0.98,
            epicenter_fx: 0.85,
            epicenter_fy: 0.8,
        }
    }
}

impl RegionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_prefectures == 0 {
            return param("at least one prefecture is required");
        }
        if self.n_prefectures > self.n_subprefectures {
            return param(format!(
                "{} prefectures cannot hold only {} sub-prefectures",
                self.n_prefectures, self.n_subprefectures
            ));
        }
        if self.n_natural_regions == 0 || self.n_languages == 0 {
            return param("need at least one natural region and one language");
        }
        if !(self.mean_population > 0.0) || !(self.population_dispersion >= 0.0) {
            return param("population parameters must be positive");
        }
        for (name, p) in [
            ("prefecture_follows_region", self.prefecture_follows_region),
            ("subprefecture_follows_prefecture", self.subprefecture_follows_prefecture),
            ("epicenter_fx", self.epicenter_fx),
            ("epicenter_fy", self.epicenter_fy),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return param(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if !(0.0 < self.majority_share_min
            && self.majority_share_min <= self.majority_share_max
            && self.majority_share_max <= 1.0)
        {
            return param("majority shares must satisfy 0 < min <= max <= 1");
        }
        Ok(())
    }
}

/// Partition plus demographic attributes, before any radio coverage is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionLayout {
    pub regions: RegionSet,
    pub natural_region_of_prefecture: Vec<usize>,
    pub population: Vec<f64>,
    pub language_shares: Vec<Vec<f64>>,
    pub majority_language: Vec<usize>,
    pub epicenter: usize,
    pub n_languages: usize,
}

impl RegionLayout {
    pub fn n_subprefectures(&self) -> usize {
        self.population.len()
    }

    pub fn region_of_subprefecture(&self, s: usize) -> usize {
        self.natural_region_of_prefecture[self.regions.prefecture_of(s)]
    }

    /// Population-weighted language shares of a set of sub-prefectures.
    pub fn pooled_shares(&self, members: impl IntoIterator<Item = usize>) -> Result<GroupShares> {
        let mut counts = vec![0.0; self.n_languages];
        for s in members {
            for (c, sh) in counts.iter_mut().zip(&self.language_shares[s]) {
                *c += sh * self.population[s];
            }
        }
        GroupShares::from_counts(&counts)
    }

    /// Mean fractionalization at each level: (country, region, prefecture,
    /// sub-prefecture). Higher levels pool their members' populations.
    pub fn fractionalization_by_level(&self) -> Result<[f64; 4]> {
        let n = self.n_subprefectures();
        let country = fractionalization(&self.pooled_shares(0..n)?);
        let mean_over = |groups: Vec<Vec<usize>>| -> Result<f64> {
            let groups: Vec<_> = groups.into_iter().filter(|g| !g.is_empty()).collect();
            let mut total = 0.0;
            for g in &groups {
                total += fractionalization(&self.pooled_shares(g.iter().copied())?);
            }
            Ok(total / groups.len() as f64)
        };
        let n_regions = self.natural_region_of_prefecture.iter().max().map_or(0, |m| m + 1);
        let mut by_region = vec![Vec::new(); n_regions];
        let mut by_pref = vec![Vec::new(); self.regions.n_prefectures()];
        for s in 0..n {
            by_region[self.region_of_subprefecture(s)].push(s);
            by_pref[self.regions.prefecture_of(s)].push(s);
        }
        let region = mean_over(by_region)?;
        let prefecture = mean_over(by_pref)?;
        let sub = mean_over((0..n).map(|s| vec![s]).collect())?;
        Ok([country, region, prefecture, sub])
    }
}

/// Seeded Voronoi geography.
///
/// Prefectures are Voronoi cells of random seed cells; each prefecture gets a
/// number of sub-prefectures proportional to its area (at least one) whose
/// footprints are Voronoi cells of seeds drawn inside it, so sub-prefectures
/// nest in prefectures. Natural regions group prefectures around seed
/// prefectures. Languages cascade down the hierarchy: each region has a home
/// language, prefectures and sub-prefectures usually inherit their parent's
/// majority language, and every sub-prefecture keeps a minority share.
pub fn build_regions(seed: u64, cfg: &RegionConfig, grid: &ElevationGrid) -> Result<RegionLayout> {
    cfg.validate()?;
    let n_cells = grid.len();
    if cfg.n_subprefectures > n_cells {
        return param(format!(
            "{} sub-prefectures do not fit into {n_cells} cells",
            cfg.n_subprefectures
        ));
    }
    let mut rng = stream_rng(seed, 0x5EED_0001);

    let pref_seeds: Vec<usize> = sample(&mut rng, n_cells, cfg.n_prefectures).into_vec();
    let pref_of_cell = nearest_seed(grid, (0..n_cells).collect::<Vec<_>>().as_slice(), &pref_seeds);
    let mut cells_of_pref = vec![Vec::new(); cfg.n_prefectures];
    for (cell, &p) in pref_of_cell.iter().enumerate() {
        cells_of_pref[p].push(cell);
    }

    let alloc = allocate(
        cfg.n_subprefectures,
        &cells_of_pref.iter().map(Vec::len).collect::<Vec<_>>(),
    );
    let mut assignment = vec![0usize; n_cells];
    let mut prefecture_of = Vec::with_capacity(cfg.n_subprefectures);
    for (p, cells) in cells_of_pref.iter().enumerate() {
        let picks = sample(&mut rng, cells.len(), alloc[p]).into_vec();
        let seeds: Vec<usize> = picks.iter().map(|&k| cells[k]).collect();
        let local = nearest_seed(grid, cells, &seeds);
        let base = prefecture_of.len();
        for (cell, l) in cells.iter().zip(local) {
            assignment[*cell] = base + l;
        }
        prefecture_of.extend(std::iter::repeat_n(p, alloc[p]));
    }
    let regions = RegionSet::new(grid, assignment, prefecture_of)?;
    let n_sub = regions.n_subprefectures();

    // Natural regions around seed prefectures, relabelled densely.
    let pref_centroids: Vec<GridPoint> = cells_of_pref
        .iter()
        .map(|cells| {
            let n = cells.len() as f64;
            let (sx, sy) = cells.iter().fold((0.0, 0.0), |(x, y), c| {
                let p = grid.center(*c);
                (x + p.x, y + p.y)
            });
            GridPoint::new(sx / n, sy / n)
        })
        .collect();
    let n_regions = cfg.n_natural_regions.min(cfg.n_prefectures);
    let region_seeds = sample(&mut rng, cfg.n_prefectures, n_regions).into_vec();
    let natural_region_of_prefecture: Vec<usize> = pref_centroids
        .iter()
        .map(|c| {
            (0..n_regions)
                .min_by(|&a, &b| {
                    c.distance_cells(&pref_centroids[region_seeds[a]])
                        .total_cmp(&c.distance_cells(&pref_centroids[region_seeds[b]]))
                })
                .unwrap_or(0)
        })
        .collect();

    let n_lang = cfg.n_languages;
    let offset = rng.random_range(0..n_lang);
    let region_language: Vec<usize> = (0..n_regions).map(|r| (r + offset) % n_lang).collect();
    let other_language = |rng: &mut rand_chacha::ChaCha8Rng, not: usize| -> usize {
        if n_lang == 1 {
            return 0;
        }
        let k = rng.random_range(0..n_lang - 1);
        if k >= not {
            k + 1
        } else {
            k
        }
    };
    let pref_language: Vec<usize> = (0..cfg.n_prefectures)
        .map(|p| {
            let home = region_language[natural_region_of_prefecture[p]];
            if rng.random::<f64>() < cfg.prefecture_follows_region {
                home
            } else {
                other_language(&mut rng, home)
            }
        })
        .collect();

    let mut majority_language = Vec::with_capacity(n_sub);
    let mut language_shares = Vec::with_capacity(n_sub);
    for s in 0..n_sub {
        let parent = pref_language[regions.prefecture_of(s)];
        let major = if rng.random::<f64>() < cfg.subprefecture_follows_prefecture {
            parent
        } else {
            other_language(&mut rng, parent)
        };
        let m = if n_lang == 1 {
            1.0
        } else {
            rng.random_range(cfg.majority_share_min..=cfg.majority_share_max)
        };
        let weights: Vec<f64> = (0..n_lang)
            .map(|l| {
                if l == major {
                    0.0
                } else {
                    // the parent's language tends to be the main minority
                    rng.random::<f64>() + if l == parent { 1.0 } else { 0.0 }
                }
            })
            .collect();
        let wsum: f64 = weights.iter().sum();
        let shares: Vec<f64> = (0..n_lang)
            .map(|l| {
                if l == major {
                    m
                } else if wsum > 0.0 {
                    (1.0 - m) * weights[l] / wsum
                } else {
                    0.0
                }
            })
            .collect();
        majority_language.push(major);
        language_shares.push(shares);
    }

    let pop_noise = Normal::new(0.0, 1.0).expect("unit normal");
    let sigma = cfg.population_dispersion;
    let population: Vec<f64> = (0..n_sub)
        .map(|_| {
            let z: f64 = pop_noise.sample(&mut rng);
            (cfg.mean_population * (sigma * z - 0.5 * sigma * sigma).exp())
                .round()
                .max(100.0)
        })
        .collect();

    let target = GridPoint::new(
        cfg.epicenter_fx * (grid.nx() - 1) as f64,
        cfg.epicenter_fy * (grid.ny() - 1) as f64,
    );
    let epicenter = regions.subprefecture_of_cell(grid.index(
        target.x.round() as usize,
        target.y.round() as usize,
    ));

    Ok(RegionLayout {
        regions,
        natural_region_of_prefecture,
        population,
        language_shares,
        majority_language,
        epicenter,
        n_languages: n_lang,
    })
}

fn nearest_seed(grid: &ElevationGrid, cells: &[usize], seeds: &[usize]) -> Vec<usize> {
    let seed_pts: Vec<GridPoint> = seeds.iter().map(|&c| grid.center(c)).collect();
    cells
        .iter()
        .map(|&c| {
            let p = grid.center(c);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, q) in seed_pts.iter().enumerate() {
                let d = (p.x - q.x).powi(2) + (p.y - q.y).powi(2);
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Proportional allocation with a floor of one and a cap of `sizes[i]`.
fn allocate(total: usize, sizes: &[usize]) -> Vec<usize> {
    let all: usize = sizes.iter().sum();
    let mut alloc = vec![1usize; sizes.len()];
    let quota: Vec<f64> = sizes.iter().map(|&s| total as f64 * s as f64 / all as f64).collect();
    let mut assigned = sizes.len();
    while assigned < total {
        let pick = (0..sizes.len())
            .filter(|&i| alloc[i] < sizes[i])
            .max_by(|&a, &b| (quota[a] - alloc[a] as f64).total_cmp(&(quota[b] - alloc[b] as f64)))
            .expect("capacity checked by caller");
        alloc[pick] += 1;
        assigned += 1;
    }
    alloc
}

/// Knobs of the synthetic transmitter roster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RosterConfig {
    /// Share of prefectures hosting their own community station.
    pub community_prefecture_share: f64,
    /// Median community power; individual stations are lognormal around it.
    pub community_power_kw: f64,
    /// Log-scale standard deviation of community station power.
    pub community_power_dispersion: f64,
    pub community_mast_m: f64,
    pub n_national: usize,
    pub national_power_kw: f64,
    pub national_mast_m: f64,
    pub n_private: usize,
    pub private_power_kw: f64,
    pub private_mast_m: f64,
    pub n_international: usize,
    pub international_power_kw: f64,
    pub international_mast_m: f64,
}

impl Default for RosterConfig {
    fn default() -> Self {
        Self {
            community_prefecture_share: 0.75,
            community_power_kw: 1.0e-3,
            community_power_dispersion: 0.0,
            community_mast_m: 40.0,
            n_national: 30,
            national_power_kw: 2.0e-3,
            national_mast_m: 60.0,
            n_private: 90,
            private_power_kw: 5.0e-4,
            private_mast_m: 30.0,
            n_international: 10,
            international_power_kw: 2.0e-3,
            international_mast_m: 60.0,
        }
    }
}

/// Places a synthetic roster: community stations sit in the most populous
/// sub-prefecture of a random subset of prefectures and broadcast in that
/// sub-prefecture's majority language; other classes sit in random
/// sub-prefecture centroids.
pub fn synth_roster(seed: u64, cfg: &RosterConfig, layout: &RegionLayout) -> Result<Vec<Transmitter>> {
    if !(0.0..=1.0).contains(&cfg.community_prefecture_share) {
        return param("community_prefecture_share must lie in [0, 1]");
    }
    if !(cfg.community_power_dispersion >= 0.0) {
        return param("community_power_dispersion must be >= 0");
    }
    let regions = &layout.regions;
    let mut rng = stream_rng(seed, 0x5EED_0002);
    let n_pref = regions.n_prefectures();
    let n_comm = (cfg.community_prefecture_share * n_pref as f64).round() as usize;
    let mut txs = Vec::new();
    let push = |txs: &mut Vec<Transmitter>, s: usize, class: RadioClass, power: f64, mast: f64| {
        txs.push(Transmitter {
            id: txs.len(),
            position: regions.centroid(s),
            mast_height: mast,
            power_kw: power,
            radio_class: class,
            home_prefecture: regions.prefecture_of(s),
            language: layout.majority_language[s],
        });
    };
    let mut hosts = sample(&mut rng, n_pref, n_comm).into_vec();
    hosts.sort_unstable();
    let spread = Normal::new(0.0, cfg.community_power_dispersion)
        .map_err(|e| crate::Error::Parameter(e.to_string()))?;
    for p in hosts {
        let capital = regions
            .subprefectures_in(p)
            .max_by(|&a, &b| layout.population[a].total_cmp(&layout.population[b]))
            .expect("prefectures are non-empty");
        let power = cfg.community_power_kw * spread.sample(&mut rng).exp();
        push(&mut txs, capital, RadioClass::Community, power, cfg.community_mast_m);
    }
    let n_sub = regions.n_subprefectures();
    for (count, class, power, mast) in [
        (cfg.n_national, RadioClass::National, cfg.national_power_kw, cfg.national_mast_m),
        (cfg.n_private, RadioClass::Private, cfg.private_power_kw, cfg.private_mast_m),
        (
            cfg.n_international,
            RadioClass::International,
            cfg.international_power_kw,
            cfg.international_mast_m,
        ),
    ] {
        for _ in 0..count {
            let s = rng.random_range(0..n_sub);
            push(&mut txs, s, class, power, mast);
        }
    }
    Ok(txs)
}

/// A sub-prefecture with everything the panel needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubPrefecture {
    pub id: usize,
    pub prefecture_id: usize,
    pub region_id: usize,
    pub population: f64,
    pub area_km2: f64,
    pub centroid: GridPoint,
    pub distance_to_epicenter_km: f64,
    pub language_shares: Vec<f64>,
    pub majority_language: usize,
    pub coverage: CoverageShares,
    /// Whether the majority language matches the language of the home
    /// prefecture's community radio; `None` without such a radio.
    pub lang_match_local: Option<bool>,
}

impl SubPrefecture {
    pub fn has_local_radio(&self) -> bool {
        self.lang_match_local.is_some()
    }
}

/// Joins the layout with coverage shares computed for `txs`.
pub fn attach_coverage(
    layout: &RegionLayout,
    grid: &ElevationGrid,
    txs: &[Transmitter],
    coverage: &[CoverageShares],
) -> Result<Vec<SubPrefecture>> {
    let regions = &layout.regions;
    let n = layout.n_subprefectures();
    if coverage.len() != n {
        return param(format!("{} coverage rows for {n} sub-prefectures", coverage.len()));
    }
    let km = grid.cell_size() / 1000.0;
    let cell_km2 = km * km;
    let epi = regions.centroid(layout.epicenter);
    Ok((0..n)
        .map(|s| {
            let p = regions.prefecture_of(s);
            let local: Vec<&Transmitter> = txs
                .iter()
                .filter(|t| t.radio_class == RadioClass::Community && t.home_prefecture == p)
                .collect();
            let lang_match_local = if local.is_empty() {
                None
            } else {
                Some(local.iter().any(|t| t.language == layout.majority_language[s]))
            };
            SubPrefecture {
                id: s,
                prefecture_id: p,
                region_id: layout.natural_region_of_prefecture[p],
                population: layout.population[s],
                area_km2: regions.cell_count(s) as f64 * cell_km2,
                centroid: regions.centroid(s),
                distance_to_epicenter_km: regions.centroid(s).distance_cells(&epi) * km,
                language_shares: layout.language_shares[s].clone(),
                majority_language: layout.majority_language[s],
                coverage: coverage[s].clone(),
                lang_match_local,
            }
        })
        .collect())
}
