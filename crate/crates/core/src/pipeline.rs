//! Scenario in, artifacts out.
//!
//! Each command writes its files into the output directory together with a
//! manifest (`<command>.manifest.json`) listing the scenario hash, the seed
//! and a SHA-256 of every file written. Nothing time- or host-dependent goes
//! into a manifest, so a rerun with the same scenario reproduces it byte for
//! byte.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::econ::output::{read_event_study_csv, write_coef_csv, write_event_study_csv};
use crate::econ::{
    binned_peer_effects, did, event_study, event_study_heterogeneous, micro_ols, pretrend_test, two_sls, Dataset,
    EventStudyEntry, EventStudyResult, ResultsReport,
};
use crate::epidemic::io::{read_panel, write_panel, write_survey};
use crate::epidemic::{attach_coverage, build_regions, simulate_panel, simulate_survey, synth_roster, Panel, RegionLayout, SubPrefecture};
use crate::error::{Error, Result};
use crate::game::equilibrium_weights;
use crate::metrics::{fractionalization, prevented_cases, CounterfactualResult};
use crate::montecarlo::{replications, summarize, McSummary};
use crate::rng::derive_seed;
use crate::scenario::{hex, RosterSource, Scenario};
use crate::terrain::io::{read_grid_binary, read_grid_csv, read_transmitters, write_coverage, write_transmitters};
use crate::terrain::{aggregate_coverage, synth_terrain, CoverageShares, ElevationGrid, Transmitter};

// Stream tags separating the random draws of each stage.
const TERRAIN_STREAM: u64 = 0x7E22;
const REGIONS_STREAM: u64 = 0x2E61;
const ROSTER_STREAM: u64 = 0x2057;
const PANEL_STREAM: u64 = 0x9A1E;
const SURVEY_STREAM: u64 = 0x5A;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub scenario_hash: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub outputs: Vec<OutputFile>,
}

/// Geography, roster and coverage of a scenario.
#[derive(Debug, Clone)]
pub struct World {
    pub grid: ElevationGrid,
    pub layout: RegionLayout,
    pub transmitters: Vec<Transmitter>,
    pub coverage: Vec<CoverageShares>,
    pub subprefectures: Vec<SubPrefecture>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn load_grid(path: &Path) -> Result<ElevationGrid> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        read_grid_csv(open(path)?)
    } else {
        read_grid_binary(open(path)?)
    }
}

pub fn build_world(s: &Scenario) -> Result<World> {
    let seed = s.run.seed;
    let t = &s.terrain;
    let grid = match &t.grid_path {
        Some(p) => load_grid(p)?,
        None => synth_terrain(derive_seed(seed, TERRAIN_STREAM), t.nx, t.ny, t.cell_size, t.ruggedness)?,
    };
    let layout = build_regions(derive_seed(seed, REGIONS_STREAM), &s.regions, &grid)?;
    let transmitters = match s.roster.source {
        RosterSource::Synthetic => synth_roster(derive_seed(seed, ROSTER_STREAM), &s.roster.synthetic, &layout)?,
        RosterSource::Inline => s.roster.transmitters.clone(),
        RosterSource::File => {
            let p = s
                .roster
                .path
                .as_ref()
                .ok_or_else(|| Error::Config("roster.path is required for a file roster".into()))?;
            read_transmitters(open(p)?)?
        }
    };
    let coverage = aggregate_coverage(
        &grid,
        &transmitters,
        &layout.regions,
        &s.propagation,
        &layout.majority_language,
    )?;
    let subprefectures = attach_coverage(&layout, &grid, &transmitters, &coverage)?;
    Ok(World {
        grid,
        layout,
        transmitters,
        coverage,
        subprefectures,
    })
}

/// Collects the files of one command and stamps the manifest.
struct Artifacts<'a> {
    dir: &'a Path,
    outputs: Vec<OutputFile>,
}

impl<'a> Artifacts<'a> {
    fn new(dir: &'a Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir, outputs: Vec::new() })
    }

    fn write(&mut self, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<PathBuf> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        let path = self.dir.join(name);
        let mut f = BufWriter::new(File::create(&path)?);
        f.write_all(&buf)?;
        f.flush()?;
        self.outputs.push(OutputFile {
            path: name.to_string(),
            sha256: hex(&Sha256::digest(&buf)),
            bytes: buf.len() as u64,
        });
        Ok(path)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        self.write(name, |buf| {
            serde_json::to_writer_pretty(&mut *buf, value)?;
            buf.push(b'\n');
            Ok(())
        })
    }

    fn finish(mut self, command: &str, s: &Scenario) -> Result<RunManifest> {
        let mut versions = BTreeMap::new();
        versions.insert("coorad-core".to_string(), env!("CARGO_PKG_VERSION").to_string());
        let manifest = RunManifest {
            command: command.to_string(),
            scenario_hash: s.hash()?,
            seed: s.run.seed,
            versions,
            outputs: std::mem::take(&mut self.outputs),
        };
        self.json(&format!("{command}.manifest.json"), &manifest)?;
        Ok(manifest)
    }
}

/// Coverage shares per sub-prefecture, plus the roster used.
pub fn cmd_coverage(s: &Scenario) -> Result<RunManifest> {
    s.validate()?;
    let world = build_world(s)?;
    let mut out = Artifacts::new(&s.run.out_dir)?;
    out.write("coverage.csv", |b| write_coverage(b, &world.coverage))?;
    out.write("transmitters.csv", |b| write_transmitters(b, &world.transmitters))?;
    out.finish("coverage", s)
}

/// Simulated panel and micro survey, plus the game weights behind the
/// structural channel.
pub fn cmd_simulate(s: &Scenario) -> Result<RunManifest> {
    s.validate()?;
    let world = build_world(s)?;
    let cfg = s.epidemic_config()?;
    let panel = simulate_panel(
        &world.subprefectures,
        &s.timeline,
        &cfg,
        world.layout.epicenter,
        derive_seed(s.run.seed, PANEL_STREAM),
    )?;
    let survey = simulate_survey(&world.subprefectures, &s.survey, derive_seed(s.run.seed, SURVEY_STREAM))?;
    let weights = equilibrium_weights(&s.game.primitives())?;
    let mut out = Artifacts::new(&s.run.out_dir)?;
    out.write("panel.csv", |b| write_panel(b, &panel))?;
    out.write("survey.csv", |b| write_survey(b, &survey))?;
    out.write("coverage.csv", |b| write_coverage(b, &world.coverage))?;
    out.json("game_weights.json", &weights)?;
    out.finish("simulate", s)
}

/// Event study, DiD and pre-trend test on a panel file, and the micro
/// regressions when a survey file is given.
pub fn cmd_estimate(s: &Scenario, panel_path: &Path, survey_path: Option<&Path>) -> Result<RunManifest> {
    s.validate()?;
    let panel = read_panel(open(panel_path)?)?;
    let data = Dataset::from_panel(&panel)?;
    let est = &s.estimation;
    let inference = s.inference();
    let esr = event_study(&data, &est.event_study, inference, est.ci_level)?;
    let pretrend = pretrend_test(&esr, None, est.pretrend)?;
    let did_fit = did(&data, &est.event_study, inference)?;

    let mut report = ResultsReport::from_event_study(&esr);
    report.diagnostics.insert("pretrend_wald".into(), pretrend.wald);
    report.diagnostics.insert("pretrend_p_value".into(), pretrend.p_value);
    let did_name = format!("{}:post", est.event_study.treatment);
    if let (Some(b), Some(se)) = (did_fit.coef(&did_name), did_fit.se(&did_name)) {
        report.diagnostics.insert("did_estimate".into(), b);
        report.diagnostics.insert("did_se".into(), se);
    }

    let mut out = Artifacts::new(&s.run.out_dir)?;
    out.json("results.json", &report)?;
    out.write("coefficients.csv", |b| write_coef_csv(b, &report))?;
    let mut paths = vec![esr.clone()];
    if let Some(split) = &est.split {
        let (one, zero) = event_study_heterogeneous(&data, &est.event_study, split, inference, est.ci_level)?;
        paths.push(one);
        paths.push(zero);
    }
    out.write("event_study.csv", |b| write_event_study_csv(b, &paths.iter().collect::<Vec<_>>()))?;
    out.json("did.json", &ResultsReport::from_fit(&did_fit, est.ci_level)?)?;
    out.json("pretrend.json", &pretrend)?;

    if let Some(sp) = survey_path {
        let rows = crate::epidemic::io::read_survey(open(sp)?)?;
        let micro = Dataset::from_survey(&rows)?;
        let iv = two_sls(&micro, &est.iv)?;
        let mut ols_regs = est.iv.endogenous.clone();
        ols_regs.extend(est.iv.exogenous.iter().cloned());
        let ols = micro_ols(&micro, &est.iv.outcome, &ols_regs, est.iv.cluster.as_deref())?;
        let peer = binned_peer_effects(&micro, &est.peer)?;
        let mut micro_report = BTreeMap::new();
        micro_report.insert("ols", ResultsReport::from_fit(&ols, est.ci_level)?);
        micro_report.insert("iv", ResultsReport::from_fit(&iv, est.ci_level)?);
        micro_report.insert("peer_bins", ResultsReport::from_fit(&peer, est.ci_level)?);
        out.json("micro_results.json", &micro_report)?;
    }
    out.finish("estimate", s)
}

/// Rebuilds an event-study path from `results.json` or `event_study.csv`.
pub fn load_event_study(path: &Path, treatment: &str) -> Result<EventStudyResult> {
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if !is_json {
        return read_event_study_csv(open(path)?)?
            .into_iter()
            .find(|p| p.treatment == treatment)
            .ok_or_else(|| Error::Missing(format!("no '{treatment}' path in {}", path.display())));
    }
    let report: ResultsReport = serde_json::from_reader(open(path)?)?;
    let prefix = format!("{treatment}@");
    let mut entries: Vec<EventStudyEntry> = report
        .coef
        .iter()
        .filter_map(|(k, c)| {
            let tau = k.strip_prefix(&prefix)?.parse::<i64>().ok()?;
            Some(EventStudyEntry {
                tau,
                beta: c.est,
                se: c.se,
                ci_low: c.ci_low,
                ci_high: c.ci_high,
                omitted: c.est == 0.0 && c.se == 0.0,
            })
        })
        .collect();
    if entries.is_empty() {
        return Err(Error::Missing(format!("no '{treatment}@τ' coefficients in {}", path.display())));
    }
    entries.sort_by_key(|e| e.tau);
    Ok(EventStudyResult {
        treatment: treatment.to_string(),
        entries,
        vcov: None,
        n: report.n,
        n_clusters: report.n_clusters.unwrap_or(0),
        inference: "file".into(),
        bootstrap_failures: 0,
        ci_level: report.diagnostics.get("ci_level").copied().unwrap_or(0.95),
    })
}

pub fn counterfactual(s: &Scenario, esr: &EventStudyResult, panel: &Panel) -> Result<CounterfactualResult> {
    let c = &s.counterfactual;
    prevented_cases(esr, panel, c.coverage_gap, c.untreated, c.method, c.window.map(|[a, b]| (a, b)))
}

pub fn cmd_counterfactual(s: &Scenario, results_path: &Path, panel_path: &Path) -> Result<RunManifest> {
    s.validate()?;
    let esr = load_event_study(results_path, &s.estimation.event_study.treatment)?;
    let panel = read_panel(open(panel_path)?)?;
    let result = counterfactual(s, &esr, &panel)?;
    let mut out = Artifacts::new(&s.run.out_dir)?;
    out.json("counterfactual.json", &result)?;
    out.finish("counterfactual", s)
}

pub fn run_montecarlo(s: &Scenario) -> Result<McSummary> {
    s.validate()?;
    let world = build_world(s)?;
    let reps = replications(s, &world.subprefectures, world.layout.epicenter)?;
    summarize(s, &reps)
}

pub fn cmd_montecarlo(s: &Scenario) -> Result<RunManifest> {
    let summary = run_montecarlo(s)?;
    let mut out = Artifacts::new(&s.run.out_dir)?;
    out.json("montecarlo.json", &summary)?;
    out.finish("montecarlo", s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionalizationRow {
    pub level: String,
    pub id: usize,
    pub population: f64,
    pub fractionalization: f64,
}

/// Fractionalization of every location at every level of the hierarchy.
pub fn fractionalization_table(layout: &RegionLayout) -> Result<Vec<FractionalizationRow>> {
    let n = layout.n_subprefectures();
    let n_regions = layout.natural_region_of_prefecture.iter().max().map_or(0, |m| m + 1);
    let mut groups: Vec<(&str, Vec<Vec<usize>>)> = vec![
        ("country", vec![(0..n).collect()]),
        ("region", vec![Vec::new(); n_regions]),
        ("prefecture", vec![Vec::new(); layout.regions.n_prefectures()]),
        ("subprefecture", (0..n).map(|s| vec![s]).collect()),
    ];
    for s in 0..n {
        groups[1].1[layout.region_of_subprefecture(s)].push(s);
        groups[2].1[layout.regions.prefecture_of(s)].push(s);
    }
    let mut rows = Vec::new();
    for (level, members) in groups {
        for (id, m) in members.into_iter().enumerate().filter(|(_, m)| !m.is_empty()) {
            rows.push(FractionalizationRow {
                level: level.to_string(),
                id,
                population: m.iter().map(|&s| layout.population[s]).sum(),
                fractionalization: fractionalization(&layout.pooled_shares(m)?),
            });
        }
    }
    Ok(rows)
}

pub fn cmd_fractionalization(s: &Scenario) -> Result<RunManifest> {
    s.validate()?;
    let world = build_world(s)?;
    let rows = fractionalization_table(&world.layout)?;
    let means = world.layout.fractionalization_by_level()?;
    let summary: BTreeMap<&str, f64> = ["country", "region", "prefecture", "subprefecture"]
        .into_iter()
        .zip(means)
        .collect();
    let mut out = Artifacts::new(&s.run.out_dir)?;
    out.write("fractionalization.csv", |b| {
        let mut w = csv::Writer::from_writer(b);
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    })?;
    out.json("fractionalization_summary.json", &summary)?;
    out.finish("fractionalization", s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dir: &Path) -> Scenario {
        let mut s = Scenario::default();
        s.run.out_dir = dir.to_path_buf();
        s.terrain.nx = 40;
        s.terrain.ny = 40;
        s.terrain.cell_size = 6000.0;
        s.regions.n_prefectures = 8;
        s.regions.n_subprefectures = 40;
        s.regions.n_natural_regions = 3;
        s.roster.synthetic.n_national = 4;
        s.roster.synthetic.n_private = 6;
        s.roster.synthetic.n_international = 2;
        s.survey.n_respondents = 400;
        s.survey.n_clusters = 20;
        s.estimation.bootstrap_reps = 50;
        s.montecarlo.reps = 3;
        s.montecarlo.bootstrap_reps = 50;
        s
    }

    #[test]
    fn simulate_estimate_counterfactual_chain() {
        let dir = tempfile::tempdir().unwrap();
        let s = small(dir.path());
        let m = cmd_simulate(&s).unwrap();
        let names: Vec<&str> = m.outputs.iter().map(|o| o.path.as_str()).collect();
        assert_eq!(names, ["panel.csv", "survey.csv", "coverage.csv", "game_weights.json"]);
        let panel = dir.path().join("panel.csv");
        cmd_estimate(&s, &panel, Some(&dir.path().join("survey.csv"))).unwrap();
        for f in ["results.json", "event_study.csv", "did.json", "micro_results.json", "estimate.manifest.json"] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        // both result formats give the same path
        let from_json = load_event_study(&dir.path().join("results.json"), "cov_local").unwrap();
        let from_csv = load_event_study(&dir.path().join("event_study.csv"), "cov_local").unwrap();
        assert_eq!(from_json.entries, from_csv.entries);
        cmd_counterfactual(&s, &dir.path().join("results.json"), &panel).unwrap();
        let cf: serde_json::Value =
            serde_json::from_reader(File::open(dir.path().join("counterfactual.json")).unwrap()).unwrap();
        assert!(cf["share"].as_f64().unwrap() >= 0.0);
    }

    #[test]
    fn manifests_are_reproducible() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = cmd_coverage(&small(a.path())).unwrap();
        let mb = cmd_coverage(&small(b.path())).unwrap();
        assert_eq!(ma, mb);
        let ra = fs::read(a.path().join("coverage.manifest.json")).unwrap();
        let rb = fs::read(b.path().join("coverage.manifest.json")).unwrap();
        assert_eq!(ra, rb);
        // the manifest hash is the hash of the file on disk
        let bytes = fs::read(a.path().join("coverage.csv")).unwrap();
        assert_eq!(ma.outputs[0].sha256, hex(&Sha256::digest(&bytes)));
    }

    #[test]
    fn empty_inline_roster_gives_zero_shares() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = small(dir.path());
        s.roster.source = RosterSource::Inline;
        let w = build_world(&s).unwrap();
        assert!(w.coverage.iter().all(|c| c.share_local_community == 0.0 && c.share_national == 0.0));
    }

    #[test]
    fn fractionalization_rows_cover_every_level() {
        let dir = tempfile::tempdir().unwrap();
        let s = small(dir.path());
        let w = build_world(&s).unwrap();
        let rows = fractionalization_table(&w.layout).unwrap();
        assert_eq!(rows.iter().filter(|r| r.level == "country").count(), 1);
        assert_eq!(rows.iter().filter(|r| r.level == "subprefecture").count(), 40);
        assert!(rows.iter().all(|r| (0.0..1.0).contains(&r.fractionalization)));
    }

    #[test]
    fn montecarlo_runs_on_a_small_world() {
        let dir = tempfile::tempdir().unwrap();
        let s = small(dir.path());
        let sum = run_montecarlo(&s).unwrap();
        assert_eq!(sum.reps, 3);
        assert!(sum.per_tau.iter().any(|t| t.omitted));
    }
}
