//! Command-line driver: configs, reports and field dumps.
//!
//! Every command writes one JSON report with a top-level `schema_version`.
//! Exit codes: 0 for success or an expected negative result, 2 for a bad
//! configuration, 3 for a numerical failure or a violated theorem.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bands::{
    smooth_frame, spectrum_on_grid, transition_loop_sphere, transition_loops_torus, BandGroup,
    TriCheck,
};
use crate::error::{Error, Result};
use crate::gauge::{
    extend_to_disk, normal_form_loop, normal_form_residual, regauge, skew_normal_form,
    solve_equator_gauge, winding_obstruction, NormalFormSpec, SkewWindings,
};
use crate::invariants::{
    analyze_field, BrokenGroup, FieldAnalysis, GroupAnalysis, InvariantReport, SkippedGroup,
    Tolerances,
};
use crate::models::{build, tri_path, ModelSpec, PathVerdict, TriPath};
use crate::numkit::{winding_number, CMatrix};
use crate::phasespace::{Grid, Manifold};

pub const SCHEMA_VERSION: &str = "1.0";
/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "PHASETOP_THREADS";
/// Bound on the sphere antipodal / torus skew residual of transition loops.
pub const SYMMETRY_TOL: f64 = 1e-8;

fn default_grid() -> [usize; 2] {
    [32, 64]
}

/// Random ensemble parameters for `random-suite`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub count: usize,
    pub manifold: Manifold,
    #[serde(default = "default_n_a")]
    pub n_a: usize,
    #[serde(default = "default_cutoff")]
    pub frequency_cutoff: u32,
}

fn default_n_a() -> usize {
    4
}

fn default_cutoff() -> u32 {
    2
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            count: 50,
            manifold: Manifold::Sphere,
            n_a: 4,
            frequency_cutoff: 2,
        }
    }
}

/// One run's configuration, read from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default = "default_grid")]
    pub grid: [usize; 2],
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Overrides the model's seed, or the first seed of a suite.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Band group for `deform` and `gauge-demo`, zero-based and inclusive.
    #[serde(default)]
    pub bands: Option<[usize; 2]>,
    /// Requested Chern number for `gauge-demo`; defaults to the measured one.
    #[serde(default)]
    pub target_c: Option<i64>,
    #[serde(default)]
    pub suite: Option<SuiteConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: None,
            grid: default_grid(),
            tolerances: Tolerances::default(),
            seed: None,
            bands: None,
            target_c: None,
            suite: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn for_model(model: ModelSpec) -> Self {
        RunConfig {
            model: Some(model),
            ..Self::default()
        }
    }

    /// The model with the seed override applied.
    pub fn model(&self) -> Result<ModelSpec> {
        let model = self
            .model
            .clone()
            .ok_or_else(|| Error::Config("config has no model".into()))?;
        Ok(match self.seed {
            Some(s) => model.with_seed(s),
            None => model,
        })
    }

    pub fn build_grid(&self, manifold: Manifold) -> Result<Grid> {
        Grid::build(manifold, self.grid[0], self.grid[1])
    }

    pub fn validate(&self) -> Result<()> {
        self.tolerances.validate()?;
        let [n_lat, n_lon] = self.grid;
        if n_lat < 8 || n_lon < 8 || n_lat % 2 != 0 || n_lon % 2 != 0 {
            return Err(Error::Config(format!(
                "grid {n_lat}x{n_lon}: both sizes must be even and >= 8"
            )));
        }
        if let Some([lo, hi]) = self.bands {
            if lo > hi {
                return Err(Error::Config(format!("bands [{lo}, {hi}] are reversed")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ToolInfo {
    pub name: &'static str,
    pub version: &'static str,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Ok,
    /// A negative result the run was set up to find, such as an obstruction
    /// or a gap closing.
    ExpectedFailure,
    TheoremViolation,
    NumericalFailure,
    ConfigError,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok | Status::ExpectedFailure => 0,
            Status::ConfigError => 2,
            Status::TheoremViolation | Status::NumericalFailure => 3,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ErrorInfo {
    pub kind: String,
    pub message: String,
}

impl From<&Error> for ErrorInfo {
    fn from(e: &Error) -> Self {
        let kind = format!("{e:?}");
        let kind = kind.split('(').next().unwrap_or("Unknown").to_lowercase();
        ErrorInfo {
            kind,
            message: e.to_string(),
        }
    }
}

/// Top-level report written by every command.
#[derive(Clone, Debug, Serialize)]
pub struct ReportDocument {
    pub schema_version: &'static str,
    pub tool: ToolInfo,
    pub command: &'static str,
    pub config: serde_json::Value,
    pub status: Status,
    pub result: Option<serde_json::Value>,
    pub error: Option<ErrorInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing_seconds: Option<f64>,
}

impl ReportDocument {
    pub fn exit_code(&self) -> i32 {
        self.status.exit_code()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AnalyzeResult {
    pub manifold: Manifold,
    pub grid: [usize; 2],
    pub control: bool,
    pub tri: TriCheck,
    pub kramers_residual: Option<f64>,
    pub groups: Vec<InvariantReport>,
    pub composites: Vec<InvariantReport>,
    pub skipped: Vec<SkippedGroup>,
    pub broken: Vec<BrokenGroup>,
    pub chern_sum: Option<i64>,
    pub additivity_ok: bool,
    pub theorems_hold: bool,
}

/// Full analysis of one configured model, kept for dumps.
pub struct AnalyzeOutcome {
    pub status: Status,
    pub result: AnalyzeResult,
    pub analysis: FieldAnalysis,
}

pub fn analyze(cfg: &RunConfig) -> Result<AnalyzeOutcome> {
    cfg.validate()?;
    let model = cfg.model()?;
    let field = build(&model)?;
    let grid = cfg.build_grid(model.manifold())?;
    let analysis = analyze_field(&field, &grid, &cfg.tolerances)?;
    let reports = |gs: &[GroupAnalysis]| gs.iter().map(|g| g.report.clone()).collect::<Vec<_>>();
    let theorems_hold = analysis.theorems_hold();
    let result = AnalyzeResult {
        manifold: grid.manifold,
        grid: cfg.grid,
        control: model.is_control(),
        tri: analysis.tri,
        kramers_residual: analysis.kramers_residual,
        groups: reports(&analysis.groups),
        composites: reports(&analysis.composites),
        skipped: analysis.skipped.clone(),
        broken: analysis.broken.clone(),
        chern_sum: analysis.chern_sum,
        additivity_ok: analysis.additivity_ok,
        theorems_hold,
    };
    let status = if !analysis.tri.pass {
        Status::NumericalFailure
    } else if theorems_hold {
        Status::Ok
    } else {
        Status::TheoremViolation
    };
    Ok(AnalyzeOutcome {
        status,
        result,
        analysis,
    })
}

/// Write `curvature_*.csv`, `pfaffian_*.csv` and `census_*.csv` per group.
pub fn write_dumps(dir: &Path, outcome: &AnalyzeOutcome) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for g in outcome
        .analysis
        .groups
        .iter()
        .chain(&outcome.analysis.composites)
    {
        let [lo, hi] = g.report.bands;
        let tag = format!("{lo}-{hi}");
        let grid = &g.grid;

        let path = dir.join(format!("curvature_{tag}.csv"));
        let mut out = String::from("lat,lon,flux\n");
        for (p, flux) in g.curvature.flux.iter().enumerate() {
            let pl = &grid.plaquettes()[p];
            out.push_str(&format!("{},{},{:.12e}\n", pl.lat, pl.lon, flux));
        }
        fs::write(&path, out)?;
        written.push(path);

        if let Some(m) = &g.mfield {
            let path = dir.join(format!("pfaffian_{tag}.csv"));
            let mut out = String::from("vertex,lat,lon,abs_pf\n");
            for (v, pf) in m.pfaffians.iter().enumerate() {
                if let Some(pf) = pf {
                    let (i, j) = grid.lat_lon(v);
                    out.push_str(&format!("{v},{i},{j},{:.12e}\n", pf.norm()));
                }
            }
            fs::write(&path, out)?;
            written.push(path);
        }
        if let Some(census) = &g.census {
            let path = dir.join(format!("census_{tag}.csv"));
            let mut out = String::from("plaquette,lat,lon,index\n");
            for e in &census.entries {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    e.plaquette, e.lat, e.lon, e.index
                ));
            }
            fs::write(&path, out)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Per-group verdicts in a random suite.
#[derive(Clone, Debug, Serialize)]
pub struct SuiteGroup {
    pub bands: [usize; 2],
    pub rank: usize,
    pub c_plaquette: i64,
    pub c_winding: i64,
    pub k: Option<i64>,
    pub k_census: Option<i64>,
    pub parity_ok: bool,
    pub km_relation_ok: bool,
    pub cross_method_ok: bool,
    pub evenness_ok: bool,
    pub symmetry_residual: f64,
    pub symmetry_ok: bool,
    pub refined: bool,
}

impl SuiteGroup {
    fn from_report(r: &InvariantReport) -> Self {
        SuiteGroup {
            bands: r.bands,
            rank: r.rank,
            c_plaquette: r.c_plaquette,
            c_winding: r.c_winding,
            k: r.k,
            k_census: r.k_census,
            parity_ok: r.parity_ok,
            km_relation_ok: r.km_relation_ok,
            cross_method_ok: r.c_plaquette == r.c_winding,
            evenness_ok: r.residuals.curvature_evenness <= r.residuals.evenness_tol,
            symmetry_residual: r.residuals.transition_symmetry,
            symmetry_ok: r.residuals.transition_symmetry <= SYMMETRY_TOL,
            refined: r.grid.refined,
        }
    }

    pub fn holds(&self) -> bool {
        self.parity_ok
            && self.km_relation_ok
            && self.cross_method_ok
            && self.evenness_ok
            && self.symmetry_ok
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteModel {
    pub seed: u64,
    pub tri_pass: bool,
    pub groups: Vec<SuiteGroup>,
    pub composites: Vec<SuiteGroup>,
    pub skipped: Vec<SkippedGroup>,
    pub chern_sum: Option<i64>,
    pub additivity_ok: bool,
    pub error: Option<ErrorInfo>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SuiteTally {
    pub models: usize,
    /// Models whose analysis ran to completion.
    pub analyzed_models: usize,
    /// Models still under-resolved after the automatic refinement.
    pub unresolved_models: usize,
    /// TRI failures and any other pipeline error.
    pub failed_models: usize,
    pub gapless_models: usize,
    pub groups: usize,
    pub parity_ok: usize,
    pub even_rank_groups: usize,
    pub km_relation_ok: usize,
    pub cross_method_ok: usize,
    pub evenness_ok: usize,
    pub symmetry_ok: usize,
    pub chern_sum_zero: usize,
    pub additivity_ok: usize,
    pub max_symmetry_residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteResult {
    pub suite: SuiteConfig,
    pub first_seed: u64,
    pub grid: [usize; 2],
    pub tally: SuiteTally,
    /// Every analyzed group and model satisfies the theorems.
    pub theorems_hold: bool,
    /// `theorems_hold` and no model failed or stayed under-resolved.
    pub all_hold: bool,
    pub models: Vec<SuiteModel>,
}

pub fn random_suite(cfg: &RunConfig) -> Result<SuiteResult> {
    cfg.validate()?;
    let suite = cfg.suite.clone().unwrap_or_default();
    if suite.count == 0 {
        return Err(Error::Config("suite count must be at least 1".into()));
    }
    let first_seed = cfg.seed.unwrap_or(0);
    let grid = cfg.build_grid(suite.manifold)?;
    let mut tally = SuiteTally::default();
    let mut models = Vec::with_capacity(suite.count);
    for i in 0..suite.count as u64 {
        let seed = first_seed + i;
        let spec = ModelSpec::RandomTri {
            manifold: suite.manifold,
            n_a: suite.n_a,
            frequency_cutoff: suite.frequency_cutoff,
            seed,
        };
        tally.models += 1;
        let run = build(&spec).and_then(|f| analyze_field(&f, &grid, &cfg.tolerances));
        let model = match run {
            Ok(a) => {
                tally.analyzed_models += 1;
                let groups: Vec<SuiteGroup> = a
                    .groups
                    .iter()
                    .map(|g| SuiteGroup::from_report(&g.report))
                    .collect();
                let composites: Vec<SuiteGroup> = a
                    .composites
                    .iter()
                    .map(|g| SuiteGroup::from_report(&g.report))
                    .collect();
                if groups.is_empty() {
                    tally.gapless_models += 1;
                }
                for g in groups.iter().chain(&composites) {
                    tally.groups += 1;
                    tally.parity_ok += g.parity_ok as usize;
                    if g.rank % 2 == 0 {
                        tally.even_rank_groups += 1;
                        tally.km_relation_ok += (g.km_relation_ok && g.k.is_some()) as usize;
                    }
                    tally.cross_method_ok += g.cross_method_ok as usize;
                    tally.evenness_ok += g.evenness_ok as usize;
                    tally.symmetry_ok += g.symmetry_ok as usize;
                    tally.max_symmetry_residual =
                        tally.max_symmetry_residual.max(g.symmetry_residual);
                }
                tally.chern_sum_zero += a.chern_sum.is_none_or(|s| s == 0) as usize;
                tally.additivity_ok += a.additivity_ok as usize;
                if !a.tri.pass {
                    tally.failed_models += 1;
                }
                SuiteModel {
                    seed,
                    tri_pass: a.tri.pass,
                    groups,
                    composites,
                    skipped: a.skipped.clone(),
                    chern_sum: a.chern_sum,
                    additivity_ok: a.additivity_ok,
                    error: None,
                }
            }
            Err(e) => {
                if e.is_resolution() {
                    tally.unresolved_models += 1;
                } else {
                    tally.failed_models += 1;
                }
                SuiteModel {
                    seed,
                    tri_pass: false,
                    groups: Vec::new(),
                    composites: Vec::new(),
                    skipped: Vec::new(),
                    chern_sum: None,
                    additivity_ok: false,
                    error: Some(ErrorInfo::from(&e)),
                }
            }
        };
        models.push(model);
    }
    let t = &tally;
    let theorems_hold = t.parity_ok == t.groups
        && t.km_relation_ok == t.even_rank_groups
        && t.cross_method_ok == t.groups
        && t.evenness_ok == t.groups
        && t.symmetry_ok == t.groups
        && t.chern_sum_zero == t.analyzed_models
        && t.additivity_ok == t.analyzed_models;
    let all_hold = theorems_hold && t.failed_models == 0 && t.unresolved_models == 0;
    Ok(SuiteResult {
        suite,
        first_seed,
        grid: cfg.grid,
        tally,
        theorems_hold,
        all_hold,
        models,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DeformResult {
    pub from: ModelSpec,
    pub to: ModelSpec,
    pub steps: usize,
    pub path: TriPath,
}

pub fn deform(from: &RunConfig, to: &RunConfig, steps: usize) -> Result<DeformResult> {
    from.validate()?;
    let (a, b) = (from.model()?, to.model()?);
    if a.manifold() != b.manifold() {
        return Err(Error::Config(
            "deformation endpoints live on different manifolds".into(),
        ));
    }
    let (h0, h1) = (build(&a)?, build(&b)?);
    let grid = from.build_grid(a.manifold())?;
    let [lo, hi] = match from.bands {
        Some(b) => b,
        None => {
            let spectrum = spectrum_on_grid(&h0, &grid)?;
            let group = crate::bands::find_gapped_groups(&spectrum, from.tolerances.gap_floor)
                .into_iter()
                .next()
                .ok_or_else(|| {
                    Error::GapClosed("the first endpoint has no gapped band group".into())
                })?;
            [group.lo, group.hi]
        }
    };
    let path = tri_path(&h0, &h1, lo, hi, steps, &grid, &from.tolerances)?;
    Ok(DeformResult {
        from: a,
        to: b,
        steps,
        path,
    })
}

/// Complex matrix as rows of `[re, im]` pairs.
pub fn matrix_json(m: &CMatrix) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| {
            (0..m.ncols())
                .map(|j| [m[(i, j)].re, m[(i, j)].im])
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct ExtensionInfo {
    pub success: bool,
    pub sweeps: Option<usize>,
    pub max_step: Option<f64>,
    pub boundary_step: Option<f64>,
    pub jitters: Option<usize>,
    pub normal_form_residual: Option<f64>,
    pub error: Option<ErrorInfo>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SphereGauge {
    pub transition_loop: Vec<Vec<Vec<[f64; 2]>>>,
    pub normal_form: Vec<Vec<Vec<[f64; 2]>>>,
    pub continuity_pi: f64,
    pub continuity_two_pi: f64,
    pub rerouted: bool,
    pub extension: ExtensionInfo,
}

#[derive(Clone, Debug, Serialize)]
pub struct TorusGauge {
    pub transition_loops: [Vec<Vec<Vec<[f64; 2]>>>; 2],
    pub normal_forms: [Vec<Vec<Vec<[f64; 2]>>>; 2],
    pub congruence_residual: f64,
    pub windings: SkewWindings,
    pub bookkeeping_ok: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GaugeResult {
    pub manifold: Manifold,
    pub bands: [usize; 2],
    pub rank: usize,
    pub measured_c: i64,
    pub target_c: i64,
    /// `wn det W` on the sphere, `wn det W(.,0) - wn det W(.,pi)` on the torus.
    pub obstruction: i64,
    pub extendable: bool,
    pub sphere: Option<SphereGauge>,
    pub torus: Option<TorusGauge>,
}

pub fn gauge_demo(cfg: &RunConfig) -> Result<GaugeResult> {
    cfg.validate()?;
    let model = cfg.model()?;
    let field = build(&model)?;
    let grid = cfg.build_grid(model.manifold())?;
    let spectrum = spectrum_on_grid(&field, &grid)?;
    let group = match cfg.bands {
        Some([lo, hi]) => BandGroup::measured(&spectrum, lo, hi)?,
        None => crate::bands::find_gapped_groups(&spectrum, cfg.tolerances.gap_floor)
            .into_iter()
            .next()
            .ok_or_else(|| Error::GapClosed("no gapped band group".into()))?,
    };
    if group.min_gap <= cfg.tolerances.gap_floor {
        return Err(Error::GapClosed(format!(
            "bands [{}, {}] are not gapped",
            group.lo, group.hi
        )));
    }
    let frame = smooth_frame(&spectrum, &grid, &group)?;
    let rank = group.rank();
    let loops = |lps: &[&crate::bands::TransitionLoop]| {
        lps.iter()
            .map(|l| l.samples.iter().map(matrix_json).collect())
            .collect::<Vec<Vec<_>>>()
    };
    match grid.manifold {
        Manifold::Sphere => {
            let u = transition_loop_sphere(&frame, &grid, &field.tr)?;
            let measured_c = winding_number(&u.det_loop()?)?;
            let target_c = cfg.target_c.unwrap_or(measured_c);
            if (target_c - rank as i64).rem_euclid(2) != 0 {
                return Err(Error::Config(format!(
                    "target c = {target_c} has the wrong parity for rank {rank}"
                )));
            }
            let v = normal_form_loop(NormalFormSpec {
                c: target_c,
                rank,
                samples: u.len(),
            })?;
            let w = solve_equator_gauge(&u, &v)?;
            let obstruction = winding_obstruction(&w)?;
            let extension = if obstruction != 0 {
                ExtensionInfo {
                    success: false,
                    sweeps: None,
                    max_step: None,
                    boundary_step: None,
                    jitters: None,
                    normal_form_residual: None,
                    error: None,
                }
            } else {
                match extend_to_disk(&w, &grid, cfg.seed.unwrap_or(0)) {
                    Ok(ext) => {
                        let residual =
                            normal_form_residual(&regauge(&frame, &ext)?, &grid, &field.tr, &v)?;
                        ExtensionInfo {
                            success: true,
                            sweeps: Some(ext.sweeps),
                            max_step: Some(ext.max_step),
                            boundary_step: Some(ext.boundary_step),
                            jitters: Some(ext.jitters),
                            normal_form_residual: Some(residual),
                            error: None,
                        }
                    }
                    Err(e @ Error::Extension(_)) => ExtensionInfo {
                        success: false,
                        sweeps: None,
                        max_step: None,
                        boundary_step: None,
                        jitters: None,
                        normal_form_residual: None,
                        error: Some(ErrorInfo::from(&e)),
                    },
                    Err(e) => return Err(e),
                }
            };
            let mut ls = loops(&[&u, &v]);
            let normal_form = ls.pop().expect("two loops");
            let transition_loop = ls.pop().expect("two loops");
            Ok(GaugeResult {
                manifold: grid.manifold,
                bands: [group.lo, group.hi],
                rank,
                measured_c,
                target_c,
                obstruction,
                extendable: obstruction == 0,
                sphere: Some(SphereGauge {
                    transition_loop,
                    normal_form,
                    continuity_pi: w.continuity_pi,
                    continuity_two_pi: w.continuity_two_pi,
                    rerouted: w.rerouted,
                    extension,
                }),
                torus: None,
            })
        }
        Manifold::Torus => {
            let (plus, minus) = transition_loops_torus(&frame, &grid, &field.tr)?;
            let measured_c = crate::invariants::chern_winding_torus(&plus, &minus)?;
            let target_c = cfg.target_c.unwrap_or(measured_c);
            let nf = skew_normal_form(&plus, &minus, target_c)?;
            let obstruction = nf.windings.obstruction();
            let [vp, vm] = &nf.targets;
            let mut ls = loops(&[&plus, &minus, vp, vm]);
            let nf_minus = ls.pop().expect("four loops");
            let nf_plus = ls.pop().expect("four loops");
            let u_minus = ls.pop().expect("four loops");
            let u_plus = ls.pop().expect("four loops");
            Ok(GaugeResult {
                manifold: grid.manifold,
                bands: [group.lo, group.hi],
                rank,
                measured_c,
                target_c,
                obstruction,
                extendable: obstruction == 0,
                sphere: None,
                torus: Some(TorusGauge {
                    transition_loops: [u_plus, u_minus],
                    normal_forms: [nf_plus, nf_minus],
                    congruence_residual: nf.residual,
                    windings: nf.windings,
                    bookkeeping_ok: nf.windings.bookkeeping_ok(),
                }),
            })
        }
    }
}

/// `LATxLON`, e.g. `32x64`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridArg(pub [usize; 2]);

impl FromStr for GridArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected LATxLON, got {s:?}"))?;
        let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}"));
        Ok(GridArg([parse(a)?, parse(b)?]))
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "phasetop",
    version,
    about = "Topological invariants of time-reversal-invariant band bundles"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analyze every gapped band group of one model.
    Analyze(RunArgs),
    /// Check the classification theorems on a random ensemble.
    RandomSuite(RunArgs),
    /// Follow a linear TRI path between two models (pass --config twice).
    Deform(RunArgs),
    /// Bring a band group's transition matrices to normal form.
    GaugeDemo(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON config file.
    #[arg(long)]
    pub config: Vec<PathBuf>,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for CSV field dumps (analyze).
    #[arg(long)]
    pub dump: Option<PathBuf>,
    /// Grid size as LATxLON.
    #[arg(long)]
    pub grid: Option<GridArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Path samples (deform) or ensemble size (random-suite).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Add wall-clock timing to the report.
    #[arg(long)]
    pub timing: bool,
}

impl RunArgs {
    fn load(&self, index: usize) -> Result<RunConfig> {
        let mut cfg = match self.config.get(index) {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(GridArg(g)) = self.grid {
            cfg.grid = g;
        }
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        Ok(cfg)
    }

    fn expect_configs(&self, range: std::ops::RangeInclusive<usize>, command: &str) -> Result<()> {
        if range.contains(&self.config.len()) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "{command} takes {} --config file(s), got {}",
                if range.start() == range.end() {
                    range.start().to_string()
                } else {
                    format!("{range:?}")
                },
                self.config.len()
            )))
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("results serialize")
}

/// Run one parsed command and build its report. Dumps are written here;
/// the report itself is returned for the caller to place.
pub fn execute(command: &Command) -> ReportDocument {
    let start = Instant::now();
    let (name, args) = match command {
        Command::Analyze(a) => ("analyze", a),
        Command::RandomSuite(a) => ("random-suite", a),
        Command::Deform(a) => ("deform", a),
        Command::GaugeDemo(a) => ("gauge-demo", a),
    };
    let mut config = serde_json::Value::Null;
    let outcome: Result<(Status, serde_json::Value)> = (|| match command {
        Command::Analyze(a) => {
            a.expect_configs(1..=1, name)?;
            let cfg = a.load(0)?;
            config = to_value(&cfg);
            let out = analyze(&cfg)?;
            if let Some(dir) = &a.dump {
                write_dumps(dir, &out)?;
            }
            Ok((out.status, to_value(&out.result)))
        }
        Command::RandomSuite(a) => {
            a.expect_configs(0..=1, name)?;
            let mut cfg = a.load(0)?;
            if let Some(n) = a.steps {
                cfg.suite.get_or_insert_with(SuiteConfig::default).count = n;
            }
            config = to_value(&cfg);
            let r = random_suite(&cfg)?;
            let status = if !r.theorems_hold {
                Status::TheoremViolation
            } else if !r.all_hold {
                Status::NumericalFailure
            } else {
                Status::Ok
            };
            Ok((status, to_value(&r)))
        }
        Command::Deform(a) => {
            a.expect_configs(2..=2, name)?;
            let (from, to) = (a.load(0)?, a.load(1)?);
            config = serde_json::json!({ "from": to_value(&from), "to": to_value(&to) });
            let r = deform(&from, &to, a.steps.unwrap_or(11))?;
            let status = match r.path.verdict {
                PathVerdict::GappedConstantC => Status::Ok,
                PathVerdict::GapCloses => Status::ExpectedFailure,
            };
            Ok((status, to_value(&r)))
        }
        Command::GaugeDemo(a) => {
            a.expect_configs(1..=1, name)?;
            let cfg = a.load(0)?;
            config = to_value(&cfg);
            let r = gauge_demo(&cfg)?;
            let extension_failed = r
                .sphere
                .as_ref()
                .is_some_and(|s| r.extendable && !s.extension.success);
            let torus_failed = r.torus.as_ref().is_some_and(|t| !t.bookkeeping_ok);
            let status = if extension_failed || torus_failed {
                Status::NumericalFailure
            } else if r.extendable {
                Status::Ok
            } else {
                Status::ExpectedFailure
            };
            Ok((status, to_value(&r)))
        }
    })();
    let (status, result, error) = match outcome {
        Ok((s, r)) => (s, Some(r), None),
        Err(e) => {
            let status = if e.exit_code() == 2 {
                Status::ConfigError
            } else {
                Status::NumericalFailure
            };
            (status, None, Some(ErrorInfo::from(&e)))
        }
    };
    ReportDocument {
        schema_version: SCHEMA_VERSION,
        tool: ToolInfo {
            name: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
        },
        command: name,
        config,
        status,
        result,
        error,
        timing_seconds: args.timing.then(|| start.elapsed().as_secs_f64()),
    }
}

/// Thread cap from `PHASETOP_THREADS`, if set.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::Config(format!(
                "{THREADS_ENV}={v:?} is not a positive integer"
            ))),
        },
        Err(_) => Ok(None),
    }
}

/// Entry point for the binary. Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    match thread_cap() {
        Ok(Some(n)) => {
            // fails only if a pool already exists, which then keeps its size
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
        Ok(None) => {}
        Err(e) => {
            eprintln!("phasetop: {e}");
            return 2;
        }
    }
    let report = execute(&cli.command);
    let out = match &cli.command {
        Command::Analyze(a)
        | Command::RandomSuite(a)
        | Command::Deform(a)
        | Command::GaugeDemo(a) => a.out.clone(),
    };
    let text = report.to_json();
    let written = match out {
        Some(path) => fs::write(&path, &text).map_err(|e| format!("{}: {e}", path.display())),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| e.to_string()),
    };
    if let Err(e) = written {
        eprintln!("phasetop: cannot write report: {e}");
        return 3;
    }
    if let Some(e) = &report.error {
        eprintln!("phasetop: {}", e.message);
    }
    report.exit_code()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_arg_parses() {
        assert_eq!("32x64".parse::<GridArg>().unwrap(), GridArg([32, 64]));
        assert_eq!("16X32".parse::<GridArg>().unwrap(), GridArg([16, 32]));
        assert!("32".parse::<GridArg>().is_err());
        assert!("ax4".parse::<GridArg>().is_err());
    }

    #[test]
    fn config_defaults_and_rejects_unknown_fields() {
        let cfg = RunConfig::from_json(r#"{"model": {"type": "RotorSpin", "two_j": 1}}"#).unwrap();
        assert_eq!(cfg.grid, [32, 64]);
        assert_eq!(cfg.tolerances, Tolerances::default());
        assert!(matches!(
            RunConfig::from_json(r#"{"modle": {}}"#),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_json(r#"{"model": {"type": "Nope"}}"#),
            Err(Error::Config(_))
        ));
        let bad_grid = RunConfig {
            grid: [9, 16],
            ..cfg.clone()
        };
        assert!(matches!(bad_grid.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn seed_override_reaches_the_model() {
        let cfg = RunConfig {
            seed: Some(7),
            ..RunConfig::for_model(ModelSpec::RandomTri {
                manifold: Manifold::Sphere,
                n_a: 4,
                frequency_cutoff: 2,
                seed: 1,
            })
        };
        assert!(matches!(
            cfg.model().unwrap(),
            ModelSpec::RandomTri { seed: 7, .. }
        ));
    }

    #[test]
    fn status_exit_codes() {
        assert_eq!(Status::Ok.exit_code(), 0);
        assert_eq!(Status::ExpectedFailure.exit_code(), 0);
        assert_eq!(Status::ConfigError.exit_code(), 2);
        assert_eq!(Status::TheoremViolation.exit_code(), 3);
        assert_eq!(Status::NumericalFailure.exit_code(), 3);
    }

    #[test]
    fn error_kind_is_the_variant_name() {
        let info = ErrorInfo::from(&Error::GapClosed("x".into()));
        assert_eq!(info.kind, "gapclosed");
    }
}
