//! Experiment driver: a config file describes one experiment (grid, potential,
//! mixture, propagator, cutoff scales, tolerances); each subcommand runs its
//! scope and emits a pass/fail report, plus an observable time series for the
//! evolving scopes. Identical config and seed give byte-identical outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use hartree_core::cutoff::CutoffProfile;
use hartree_core::grid::{GridSpec, SpectralField};
use hartree_core::hierarchy::{
    gaussian, interaction_trace_reference, trace_routes, Ensemble,
};
use hartree_core::potential::Potential;
use hartree_core::solver::{PropagatorConfig, RunStatus};
use hartree_core::virial::{
    displacement_interaction_reference, displacement_interaction_term, fd2_series,
    glassey_envelope, hessian_identity_residual, variance, variance_rate, virial_record,
    VirialRecord,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// exit code 2: the config file, an override, or a field value is unusable
    #[error("config error: {0}")]
    Config(String),
    /// exit code 3: the run itself failed or refused
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn runtime_err(err: impl std::fmt::Display) -> CliError {
    CliError::Runtime(err.to_string())
}

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridSection,
    pub potential: PotentialSection,
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub propagator: Option<PropagatorSection>,
    #[serde(default)]
    pub cutoff_r_list: Vec<f64>,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dim: usize,
    pub n: usize,
    pub len: f64,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum PotentialSection {
    Zero,
    Power { exponent: f64, strength: f64 },
    Table { radii: Vec<f64>, values: Vec<f64> },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub radial: bool,
    pub members: Vec<MemberSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberSection {
    pub weight: f64,
    pub width: f64,
    #[serde(default)]
    pub center: Option<Vec<f64>>,
    #[serde(default)]
    pub momentum: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagatorSection {
    pub dt: f64,
    pub t_end: f64,
    pub mu: f64,
    pub record_every: usize,
    #[serde(default)]
    pub gradient_threshold: Option<f64>,
    #[serde(default = "default_dt_floor")]
    pub dt_floor: f64,
}

fn default_dt_floor() -> f64 {
    1e-9
}

impl ExperimentConfig {
    /// Every tolerance a scope consumes must be spelled out in the config;
    /// silent defaults would let a weakened file pass unnoticed.
    fn tol(&self, name: &str) -> Result<f64, CliError> {
        self.tolerances
            .get(name)
            .copied()
            .ok_or_else(|| config_err(format!("tolerances.{name}: missing (required by this subcommand)")))
    }

    fn grid(&self) -> Result<GridSpec, CliError> {
        GridSpec::new(self.grid.dim, self.grid.n, self.grid.len)
            .map_err(|e| config_err(format!("grid: {e}")))
    }

    fn potential(&self) -> Result<Potential, CliError> {
        match &self.potential {
            PotentialSection::Zero => Ok(Potential::zero()),
            PotentialSection::Power { exponent, strength } => {
                Potential::power(*exponent, *strength)
                    .map_err(|e| config_err(format!("potential: {e}")))
            }
            PotentialSection::Table { radii, values } => {
                Potential::table(radii.clone(), values.clone())
                    .map_err(|e| config_err(format!("potential: {e}")))
            }
        }
    }

    fn ensemble(&self, grid: GridSpec) -> Result<Ensemble, CliError> {
        let d = grid.dim();
        let mut members = Vec::with_capacity(self.ensemble.members.len());
        for (i, m) in self.ensemble.members.iter().enumerate() {
            let zeros = vec![0.0; d];
            let center = m.center.as_ref().unwrap_or(&zeros);
            let momentum = m.momentum.as_ref().unwrap_or(&zeros);
            let field = gaussian(grid, m.width, center, momentum).map_err(|e| {
                config_err(format!("ensemble.members[{i}]: {e}"))
            })?;
            members.push((m.weight, field));
        }
        Ensemble::new(members, self.ensemble.radial)
            .map_err(|e| config_err(format!("ensemble: {e}")))
    }

    fn propagator(&self) -> Result<PropagatorConfig, CliError> {
        let p = self
            .propagator
            .as_ref()
            .ok_or_else(|| config_err("propagator: missing (required by this subcommand)"))?;
        let cfg = PropagatorConfig {
            dt: p.dt,
            t_end: p.t_end,
            mu: p.mu,
            record_every: p.record_every,
            gradient_threshold: p.gradient_threshold,
            dt_floor: p.dt_floor,
        };
        cfg.validate()
            .map_err(|e| config_err(format!("propagator: {e}")))?;
        Ok(cfg)
    }
}

/// Parse the file, apply `key.path=value` overrides onto the raw tree, then
/// deserialize with field-path error reporting ("grid.n", not a byte offset).
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let mut tree: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    for entry in overrides {
        apply_override(&mut tree, entry)?;
    }
    serde_path_to_error::deserialize(tree).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.inner().to_string();
        // a missing field is reported at the parent; extend the path so the
        // message names the absent leaf
        let full = match inner.strip_prefix("missing field `").and_then(|s| s.split('`').next()) {
            Some(field) if path == "." => field.to_string(),
            Some(field) => format!("{path}.{field}"),
            None => path,
        };
        config_err(format!("{full}: {inner}"))
    })
}

fn apply_override(tree: &mut serde_json::Value, entry: &str) -> Result<(), CliError> {
    let (path, raw) = entry
        .split_once('=')
        .ok_or_else(|| config_err(format!("override '{entry}': expected key.path=value")))?;
    // JSON literal when it parses, bare string otherwise
    let leaf: serde_json::Value =
        serde_json::from_str(raw).unwrap_or(serde_json::Value::String(raw.to_string()));
    let segments: Vec<&str> = path.split('.').collect();
    let mut node = tree;
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        match node {
            serde_json::Value::Object(map) => {
                if last {
                    map.insert(seg.to_string(), leaf);
                    return Ok(());
                }
                node = map.get_mut(*seg).ok_or_else(|| {
                    config_err(format!("override '{path}': no such key '{seg}'"))
                })?;
            }
            serde_json::Value::Array(items) => {
                let idx: usize = seg.parse().map_err(|_| {
                    config_err(format!("override '{path}': '{seg}' is not an array index"))
                })?;
                let slot = items.get_mut(idx).ok_or_else(|| {
                    config_err(format!("override '{path}': index {idx} out of range"))
                })?;
                if last {
                    *slot = leaf;
                    return Ok(());
                }
                node = slot;
            }
            _ => {
                return Err(config_err(format!(
                    "override '{path}': '{seg}' does not address an object or array"
                )))
            }
        }
    }
    unreachable!("split('.') yields at least one segment")
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct Check {
    pub anchor: String,
    /// absent when the quantity does not exist (divergent norm, no detection)
    pub value: Option<f64>,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub overall: bool,
    pub checks: BTreeMap<String, Check>,
}

impl Report {
    fn from_checks(checks: BTreeMap<String, Check>) -> Report {
        Report {
            overall: checks.values().all(|c| c.pass),
            checks,
        }
    }
}

struct Checks(BTreeMap<String, Check>);

impl Checks {
    fn new() -> Self {
        Checks(BTreeMap::new())
    }

    fn push(&mut self, name: impl Into<String>, anchor: &str, value: Option<f64>, tol: f64, pass: bool) {
        let name = name.into();
        let previous = self.0.insert(
            name.clone(),
            Check {
                anchor: anchor.to_string(),
                value,
                tol,
                pass,
            },
        );
        debug_assert!(previous.is_none(), "duplicate check name {name}");
    }

    /// residual-style check: pass iff value ≤ tol
    fn residual(&mut self, name: impl Into<String>, anchor: &str, value: f64, tol: f64) {
        self.push(name, anchor, Some(value), tol, value <= tol);
    }
}

/// Scale suffix for column and check names; trailing zeros dropped so R=4.0
/// reads "4".
fn scale_tag(r: f64) -> String {
    let mut s = format!("{r}");
    if let Some(stripped) = s.strip_suffix(".0") {
        s = stripped.to_string();
    }
    s.replace('.', "p")
}

// ---------------------------------------------------------------------------
// series
// ---------------------------------------------------------------------------

/// One trajectory of records plus the series-level second differences that
/// single snapshots cannot carry.
pub struct Series {
    pub scales: Vec<f64>,
    pub records: Vec<VirialRecord>,
    pub fd2_v1: Vec<Option<f64>>,
    pub fd2_trunc: Vec<Vec<Option<f64>>>,
}

impl Series {
    fn collect(records: Vec<VirialRecord>, scales: &[f64], tau: f64) -> Series {
        let v1: Vec<f64> = records.iter().map(|r| r.v1).collect();
        let fd2_v1 = fd2_series(&v1, tau);
        let fd2_trunc = (0..scales.len())
            .map(|i| {
                let series: Vec<f64> = records.iter().map(|r| r.locals[i].trunc_v).collect();
                fd2_series(&series, tau)
            })
            .collect();
        Series {
            scales: scales.to_vec(),
            records,
            fd2_v1,
            fd2_trunc,
        }
    }

    fn csv(&self) -> String {
        let mut out = String::new();
        out.push_str("t,mass,E1,kinetic,interaction,V1,V1_dot,FD2_V1,virial_rhs");
        for &r in &self.scales {
            let tag = scale_tag(r);
            for col in ["truncV", "FD2_truncV", "locrhs", "II", "IIIa", "IIIb", "IV", "bound"] {
                let _ = write!(out, ",{col}_{tag}");
            }
        }
        out.push('\n');
        let cell = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        for (k, rec) in self.records.iter().enumerate() {
            let _ = write!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                rec.t,
                rec.mass,
                rec.e1,
                rec.kinetic,
                rec.interaction,
                rec.v1,
                rec.v1_dot,
                cell(self.fd2_v1[k]),
                rec.rhs_virial
            );
            for (i, local) in rec.locals.iter().enumerate() {
                let _ = write!(
                    out,
                    ",{},{},{}",
                    local.trunc_v,
                    cell(self.fd2_trunc[i][k]),
                    local.rhs_localized
                );
                match &local.terms {
                    Some(t) => {
                        let _ = write!(
                            out,
                            ",{},{},{},{},{}",
                            t.term_ii, t.term_iiia, t.term_iiib, t.term_iv, t.bound
                        );
                    }
                    None => out.push_str(",,,,,"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Shared short-range pairing constant: the survey maximum over the config's
/// scales with a 25% margin.
fn pair_constant(
    profile: &CutoffProfile,
    dim: usize,
    scales: &[f64],
    seed: u64,
) -> Result<f64, CliError> {
    let mut worst = 0.0f64;
    for &r in scales {
        let survey = profile
            .displacement_survey(dim, r, 10_000, seed)
            .map_err(runtime_err)?;
        worst = worst.max(survey.max_ratio);
    }
    Ok(worst * 1.25)
}

fn evolve_series(config: &ExperimentConfig) -> Result<(Series, hartree_core::solver::StepOutcome), CliError> {
    let grid = config.grid()?;
    let potential = config.potential()?;
    let ensemble = config.ensemble(grid)?;
    let cfg = config.propagator()?;
    let profile = CutoffProfile::new();
    let scales = config.cutoff_r_list.clone();
    let pair_c = pair_constant(&profile, grid.dim(), &scales, config.seed)?;
    let mu = cfg.mu;
    let tau = cfg.record_interval();
    let mut rows: Vec<VirialRecord> = Vec::new();
    let mut observer_err: Option<CliError> = None;
    let (_, outcome) = ensemble
        .evolve(&potential, cfg, |t, snap| {
            if observer_err.is_some() {
                return;
            }
            match virial_record(snap, &potential, mu, &profile, &scales, t, pair_c) {
                Ok(rec) => rows.push(rec),
                Err(e) => observer_err = Some(runtime_err(e)),
            }
        })
        .map_err(runtime_err)?;
    if let Some(e) = observer_err {
        return Err(e);
    }
    Ok((Series::collect(rows, &scales, tau), outcome))
}

// ---------------------------------------------------------------------------
// subcommand runners
// ---------------------------------------------------------------------------

pub struct RunOutput {
    pub report: Report,
    pub series: Option<Series>,
}

pub fn simulate(config: &ExperimentConfig) -> Result<RunOutput, CliError> {
    let mass_tol = config.tol("mass_drift")?;
    let energy_tol = config.tol("energy_drift")?;
    let virial_tol = config.tol("virial_identity")?;
    let localized_tol = if config.cutoff_r_list.is_empty() {
        0.0
    } else {
        config.tol("localized_identity")?
    };

    let (series, _) = evolve_series(config)?;
    let records = &series.records;
    let mut checks = Checks::new();

    let mass_drift = records
        .iter()
        .map(|r| (r.mass - 1.0).abs())
        .fold(0.0f64, f64::max);
    checks.residual("mass_conservation", "conservation.mass", mass_drift, mass_tol);

    let e0 = records[0].e1;
    let energy_drift = records
        .iter()
        .map(|r| (r.e1 - e0).abs())
        .fold(0.0f64, f64::max)
        / e0.abs().max(f64::MIN_POSITIVE);
    checks.residual("energy_conservation", "conservation.energy", energy_drift, energy_tol);

    let mut identity = 0.0f64;
    for (k, f) in series.fd2_v1.iter().enumerate() {
        if let Some(f) = f {
            identity = identity.max((f - records[k].rhs_virial).abs());
        }
    }
    checks.residual("virial_identity", "virial.identity", identity, virial_tol);

    for (i, &r) in series.scales.iter().enumerate() {
        let mut residual = 0.0f64;
        for (k, f) in series.fd2_trunc[i].iter().enumerate() {
            if let Some(f) = f {
                residual = residual.max((f - records[k].locals[i].rhs_localized).abs());
            }
        }
        checks.residual(
            format!("localized_identity_R{}", scale_tag(r)),
            "virial.localized",
            residual,
            localized_tol,
        );
    }

    Ok(RunOutput {
        report: Report::from_checks(checks.0),
        series: Some(series),
    })
}

/// Fixed slack between the envelope root and the required detection time;
/// the envelope bounds the variance, it is not a blowup-time formula.
const DETECTION_SLACK: f64 = 2.0;

pub fn blowup(config: &ExperimentConfig) -> Result<RunOutput, CliError> {
    let envelope_tol = config.tol("envelope_domination")?;
    let bound_tol = if config.cutoff_r_list.is_empty() {
        0.0
    } else {
        config.tol("bound_slack")?
    };

    let cfg = config.propagator()?;
    if cfg.mu != -1.0 {
        return Err(runtime_err("blowup requires a focusing flow (mu = -1)"));
    }
    if cfg.gradient_threshold.is_none() {
        return Err(config_err("propagator.gradient_threshold: missing (required by blowup)"));
    }
    let grid = config.grid()?;
    let potential = config.potential()?;
    let ensemble = config.ensemble(grid)?;
    let e1_0 = ensemble.energy_e1(&potential, cfg.mu).map_err(runtime_err)?;
    if e1_0 >= 0.0 {
        return Err(runtime_err(format!(
            "refusing: E1(0) = {e1_0} is not negative, the envelope argument does not apply"
        )));
    }
    let envelope = glassey_envelope(variance(&ensemble), variance_rate(&ensemble), e1_0);
    let root = envelope
        .root
        .expect("negative energy and positive variance give a positive root");

    let (series, outcome) = evolve_series(config)?;
    let records = &series.records;
    let mut checks = Checks::new();
    checks.push("energy_negative", "blowup.energy", Some(e1_0), 0.0, e1_0 < 0.0);
    checks.push("envelope_root", "blowup.root", Some(root), 0.0, root.is_finite());

    let detected = outcome.status == RunStatus::BlowupDetected;
    let in_time = detected && outcome.time <= DETECTION_SLACK * root;
    checks.push(
        "blowup_detected",
        "blowup.detection",
        detected.then_some(outcome.time),
        DETECTION_SLACK * root,
        in_time,
    );

    let domination = records
        .iter()
        .map(|r| r.v1 - envelope.value(r.t))
        .fold(f64::NEG_INFINITY, f64::max);
    checks.residual("envelope_domination", "blowup.envelope", domination, envelope_tol);

    for (i, &r) in series.scales.iter().enumerate() {
        let tag = scale_tag(r);
        let mut worst_gap = f64::NEG_INFINITY;
        let mut worst_ii = f64::NEG_INFINITY;
        let mut have_terms = true;
        for (k, rec) in records.iter().enumerate() {
            let terms = match &rec.locals[i].terms {
                Some(t) => t,
                None => {
                    have_terms = false;
                    break;
                }
            };
            worst_ii = worst_ii.max(terms.term_ii);
            if let Some(f) = series.fd2_trunc[i][k] {
                worst_gap = worst_gap.max(f - terms.bound);
            }
        }
        if have_terms {
            checks.residual(format!("localized_bound_R{tag}"), "bound.localized", worst_gap, bound_tol);
            checks.residual(format!("screening_sign_R{tag}"), "bound.screening", worst_ii, 0.0);
        } else {
            checks.push(format!("localized_bound_R{tag}"), "bound.localized", None, bound_tol, false);
        }
    }

    Ok(RunOutput {
        report: Report::from_checks(checks.0),
        series: Some(series),
    })
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum IdentityScope {
    Full,
    CutoffOnly,
}

fn band_limited_field(grid: GridSpec, rng: &mut ChaCha8Rng) -> SpectralField {
    let n = grid.points_per_axis();
    let cap = 5.min(n / 2 - 1);
    let hat: Vec<Complex64> = (0..grid.total_points())
        .map(|i| {
            let ax = grid.axes(i);
            if ax.iter().take(grid.dim()).all(|&k| k.min(n - k) <= cap) {
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            } else {
                Complex64::ZERO
            }
        })
        .collect();
    let raw = SpectralField::from_spectrum(grid, hat).expect("spectrum length matches grid");
    let norm = (raw.values().iter().map(|v| v.norm_sqr()).sum::<f64>() * grid.cell_volume()).sqrt();
    let unit: Vec<Complex64> = raw.values().iter().map(|v| v / norm).collect();
    SpectralField::from_values(grid, unit).expect("values length matches grid")
}

pub fn check_identities(config: &ExperimentConfig, scope: IdentityScope) -> Result<RunOutput, CliError> {
    let pins_tol = config.tol("cutoff_pins")?;
    let profile = CutoffProfile::new();
    let grid = config.grid()?;
    let mut checks = Checks::new();

    // cutoff scope: taper pins, switch shape, displacement sampling
    let mut inner = 0.0f64;
    let mut flat = 0.0f64;
    let mut ode = 0.0f64;
    for i in 0..=1000 {
        let s = i as f64 / 1000.0;
        inner = inner.max((profile.taper(s) - s).abs());
        ode = ode.max((profile.taper_d2(4.0 * s) + profile.bump(4.0 * s)).abs());
    }
    for s in [3.0, 3.25, 4.0, 7.5, 40.0, 1e4] {
        flat = flat.max((profile.taper(s) - 2.0).abs());
    }
    checks.residual("taper_inner", "cutoff.taper", inner, pins_tol);
    checks.residual("taper_flat", "cutoff.taper", flat, pins_tol);
    checks.residual("taper_curvature", "cutoff.taper", ode, pins_tol);

    let switch_scales: &[f64] = if config.cutoff_r_list.is_empty() {
        &[1.0, 10.0, 100.0]
    } else {
        &config.cutoff_r_list
    };
    let mut switch_defect = 0.0f64;
    for &r_scale in switch_scales {
        let mut prev = 0.0f64;
        for i in 0..=400 {
            let r = 2.0 * r_scale.sqrt() * i as f64 / 400.0;
            let f = profile.radial_switch(r, r_scale);
            switch_defect = switch_defect.max((-f).max(f - 1.0)).max(prev - f);
            prev = f;
        }
    }
    checks.residual("switch_shape", "cutoff.switch", switch_defect, pins_tol);

    for &r_scale in switch_scales {
        let survey = profile
            .displacement_survey(grid.dim().max(2), r_scale, 10_000, config.seed)
            .map_err(runtime_err)?;
        let finite = survey.max_ratio.is_finite();
        checks.push(
            format!("displacement_survey_R{}", scale_tag(r_scale)),
            "cutoff.displacement",
            Some(survey.violations as f64),
            0.0,
            survey.violations == 0 && finite,
        );
    }

    if scope == IdentityScope::CutoffOnly {
        return Ok(RunOutput {
            report: Report::from_checks(checks.0),
            series: None,
        });
    }

    // algebraic identities on the config's grid and mixture
    let identity_tol = config.tol("identity_residual")?;
    let trace_tol = config.tol("trace_agreement")?;
    let hermitian_tol = config.tol("hermitian_residual")?;
    let potential = config.potential()?;
    let ensemble = config.ensemble(grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut worst_trace = 0.0f64;
    for _ in 0..20 {
        let g = band_limited_field(grid, &mut rng);
        let h = band_limited_field(grid, &mut rng);
        let routes = trace_routes(&g, &h).map_err(runtime_err)?;
        for i in 0..3 {
            for j in i + 1..3 {
                worst_trace = worst_trace.max((routes[i] - routes[j]).norm());
            }
        }
    }
    checks.residual("trace_routes", "kernel.trace", worst_trace, trace_tol);

    let indices: Vec<usize> = (0..32).map(|_| rng.gen_range(0..grid.total_points())).collect();
    checks.residual(
        "hermitian_residual",
        "kernel.hermitian",
        ensemble.hermitian_residual(&indices),
        hermitian_tol,
    );
    checks.residual(
        "partial_trace",
        "kernel.consistency",
        ensemble.partial_trace_residual(&indices),
        identity_tol,
    );
    if ensemble.is_radial() {
        checks.residual(
            "radial_symmetry",
            "kernel.radial",
            ensemble.radial_residual(200, config.seed),
            identity_tol,
        );
    }

    // resolution-limited, not epsilon-limited: the taper shell must span
    // several cells, so this residual gets its own budget
    if !config.cutoff_r_list.is_empty() {
        let hessian_tol = config.tol("hessian_identity")?;
        for &r_scale in &config.cutoff_r_list {
            checks.residual(
                format!("hessian_identity_R{}", scale_tag(r_scale)),
                "virial.localized",
                hessian_identity_residual(&ensemble, &profile, r_scale),
                hessian_tol,
            );
        }
    }

    // brute-force cross checks exist only at coarse resolution
    if grid.points_per_axis() <= 16 && !potential.is_zero() {
        let reference_tol = config.tol("reference_agreement")?;
        let fast = ensemble.interaction_trace(&potential).map_err(runtime_err)?;
        let brute = interaction_trace_reference(&ensemble, &potential).map_err(runtime_err)?;
        checks.residual(
            "interaction_reference",
            "kernel.interaction",
            (fast - brute).abs() / brute.abs().max(f64::MIN_POSITIVE),
            reference_tol,
        );
        if let Some(&r_scale) = config.cutoff_r_list.first() {
            let fast = displacement_interaction_term(&ensemble, &potential, -1.0, &profile, r_scale)
                .map_err(runtime_err)?;
            let brute =
                displacement_interaction_reference(&ensemble, &potential, -1.0, &profile, r_scale)
                    .map_err(runtime_err)?;
            checks.residual(
                "displacement_reference",
                "bound.displacement",
                (fast - brute).abs() / brute.abs().max(f64::MIN_POSITIVE),
                reference_tol,
            );
        }
    }

    Ok(RunOutput {
        report: Report::from_checks(checks.0),
        series: None,
    })
}

pub fn check_potential(config: &ExperimentConfig) -> Result<RunOutput, CliError> {
    if config.cutoff_r_list.is_empty() {
        return Err(config_err("cutoff_r_list: at least one scale is required"));
    }
    let grid = config.grid()?;
    let potential = config.potential()?;
    let report = potential
        .check_hypotheses(grid.dim(), &config.cutoff_r_list)
        .map_err(runtime_err)?;

    let mut checks = Checks::new();
    let worst_defect = report
        .rows
        .iter()
        .map(|r| r.defect_max)
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(
        "defect_sign",
        "hypothesis.defect",
        Some(worst_defect),
        0.0,
        report.defect_ok,
    );

    for row in &report.rows {
        let tag = scale_tag(row.r_scale);
        checks.push(
            format!("tail_sup_R{tag}"),
            "hypothesis.tail",
            Some(row.tail_sup),
            0.0,
            row.tail_sup.is_finite(),
        );
        for (label, norm) in [("inner", &row.inner_ratio), ("outer", &row.outer_ratio)] {
            checks.push(
                format!("{label}_ratio_R{tag}"),
                "hypothesis.integrability",
                norm.finite(),
                0.0,
                true,
            );
        }
    }

    // decay across the scale list; divergent entries carry no trend
    let decreasing = |values: Vec<Option<f64>>| -> bool {
        values
            .windows(2)
            .all(|w| match (w[0], w[1]) {
                (Some(a), Some(b)) => b < a,
                _ => true,
            })
    };
    if report.rows.len() >= 2 {
        let tails = report.rows.windows(2).all(|w| w[1].tail_sup < w[0].tail_sup);
        checks.push("tail_monotone", "hypothesis.tail", None, 0.0, tails);
        let inner_ok = decreasing(report.rows.iter().map(|r| r.inner_ratio.finite()).collect());
        let outer_ok = decreasing(report.rows.iter().map(|r| r.outer_ratio.finite()).collect());
        checks.push("inner_ratio_monotone", "hypothesis.integrability", None, 0.0, inner_ok);
        checks.push("outer_ratio_monotone", "hypothesis.integrability", None, 0.0, outer_ok);
    }

    Ok(RunOutput {
        report: Report::from_checks(checks.0),
        series: None,
    })
}

// ---------------------------------------------------------------------------
// output
// ---------------------------------------------------------------------------

pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| runtime_err(format!("{}: {e}", dir.display())))?;
    let report_path = dir.join("report.json");
    let body = serde_json::to_string_pretty(&out.report).map_err(runtime_err)?;
    fs::write(&report_path, body + "\n")
        .map_err(|e| runtime_err(format!("{}: {e}", report_path.display())))?;
    if let Some(series) = &out.series {
        let csv_path = dir.join("series.csv");
        fs::write(&csv_path, series.csv())
            .map_err(|e| runtime_err(format!("{}: {e}", csv_path.display())))?;
    }
    Ok(())
}
