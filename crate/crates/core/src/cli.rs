//! Batch front-end: JSON run configurations, validation, orchestration and
//! report emission.
//!
//! A run is `validate` followed by `run`. `run` is pure: it returns the
//! report and every artifact in memory, and `write_outputs` puts them on
//! disk. Reports carry the schema tag [`SCHEMA`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::caps::Caps;
use crate::combinatorics::{self, CountingParams};
use crate::error::{Result, RgError};
use crate::expansion::{
    all_activities, avoidance_oracle, cluster_sum, epsilon_l, iterated_block_sum, kp_condition_check,
    numerator_decomposition, polymer_weights, random_polymer_system,
};
use crate::gibbs::{hypothesis_check, HypothesisSpec, SigmaPolicy, TauPolicy, VolumeSpec};
use crate::jacobian::{
    band_bound_rhs, band_profile, finite_difference_oracle, jacobian_matrix, linearization_bound, pen_schedule,
    translate_family, JacobianMatrix,
};
use crate::kernel::{Kernel, KernelBlocks};
use crate::lattice::{BlockGeometry, BlockScheme, Boundary, Lattice, LatticeSpec, Site, SiteSet};
use crate::rg::{renormalize, rg_flow};
use crate::rng::Stream;
use crate::spin::Interaction;

pub const SCHEMA: &str = "blockrg.report/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    Renormalize,
    Flow,
    Jacobian,
    BandScan,
    HypothesisCheck,
    Expand,
    KpCheck,
    Count,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Renormalize => "renormalize",
            Subcommand::Flow => "flow",
            Subcommand::Jacobian => "jacobian",
            Subcommand::BandScan => "band-scan",
            Subcommand::HypothesisCheck => "hypothesis-check",
            Subcommand::Expand => "expand",
            Subcommand::KpCheck => "kp-check",
            Subcommand::Count => "count",
        }
    }

    fn section(self) -> &'static str {
        match self {
            Subcommand::Renormalize => "renormalize",
            Subcommand::Flow => "flow",
            Subcommand::Jacobian => "jacobian",
            Subcommand::BandScan => "band_scan",
            Subcommand::HypothesisCheck => "hypothesis_check",
            Subcommand::Expand => "expand",
            Subcommand::KpCheck => "kp_check",
            Subcommand::Count => "count",
        }
    }

    fn needs_lattice(self) -> bool {
        self != Subcommand::Count
    }

    fn needs_interaction(self) -> bool {
        !matches!(self, Subcommand::Count | Subcommand::KpCheck)
    }

    fn needs_kernel(self) -> bool {
        self.needs_interaction()
    }

    fn needs_scheme(self) -> bool {
        matches!(self, Subcommand::BandScan | Subcommand::Expand)
    }
}

/// The interaction block: a nearest-neighbour generator or explicit couplings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InteractionSpec {
    NearestNeighbor {
        beta: f64,
        #[serde(default)]
        field: f64,
    },
    Couplings(Interaction),
}

impl InteractionSpec {
    pub fn build(&self, geometry: crate::lattice::Geometry) -> Interaction {
        match self {
            InteractionSpec::NearestNeighbor { beta, field } => Interaction::nearest_neighbor(geometry, *beta, *field),
            InteractionSpec::Couplings(j) => j.clone(),
        }
    }
}

/// A family of spin sets on some volume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilySpec {
    /// Exactly these sets.
    Sets(Vec<SiteSet>),
    /// Every translate of these shapes.
    Shapes(Vec<SiteSet>),
    /// Every subset with between 1 and `k` sites.
    AllUpTo(usize),
    /// Single sites and nearest-neighbour pairs.
    Bonds,
}

const MAX_FAMILY: usize = 200_000;

impl FamilySpec {
    pub fn resolve(&self, lattice: &Lattice) -> Result<Vec<SiteSet>> {
        match self {
            FamilySpec::Sets(sets) => sets
                .iter()
                .map(|s| {
                    lattice
                        .canonical_set(s)
                        .filter(|c| c.len() == s.len())
                        .ok_or_else(|| RgError::invalid(format!("set {} is not in the volume", s.encode(lattice.dim()))))
                })
                .collect(),
            FamilySpec::Shapes(shapes) => Ok(translate_family(lattice, shapes)),
            FamilySpec::AllUpTo(k) => {
                let n = lattice.len();
                let mut total = 0usize;
                let mut binom = 1usize;
                for j in 1..=(*k).min(n) {
                    binom = binom.saturating_mul(n + 1 - j) / j;
                    total = total.saturating_add(binom);
                }
                crate::error::check_cap("family sets", total, MAX_FAMILY)?;
                let mut out = Vec::with_capacity(total);
                let mut cur = Vec::new();
                fn rec(start: usize, k: usize, lat: &Lattice, cur: &mut Vec<Site>, out: &mut Vec<SiteSet>) {
                    if !cur.is_empty() {
                        out.push(SiteSet::new(cur.iter().copied()));
                    }
                    if cur.len() == k {
                        return;
                    }
                    for i in start..lat.len() {
                        cur.push(lat.site(i));
                        rec(i + 1, k, lat, cur, out);
                        cur.pop();
                    }
                }
                rec(0, *k, lattice, &mut cur, &mut out);
                out.sort();
                Ok(out)
            }
            FamilySpec::Bonds => {
                let origin = Site([0, 0]);
                let mut shapes = vec![SiteSet::singleton(origin)];
                for v in lattice.geometry().bond_vectors() {
                    shapes.push(SiteSet::new([origin, Site(*v)]));
                }
                Ok(translate_family(lattice, &shapes))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenormalizeParams {
    /// Couplings at or below this magnitude are left out of the report.
    pub drop_tol: f64,
}

impl Default for RenormalizeParams {
    fn default() -> Self {
        RenormalizeParams { drop_tol: 1e-12 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowParams {
    pub steps: usize,
    pub drop_tol: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            steps: 2,
            drop_tol: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JacobianParams {
    /// Sets on the image volume.
    pub z: FamilySpec,
    /// Sets on the original volume.
    pub w: FamilySpec,
    /// Seeded entries re-checked by central differences.
    pub fd_check: usize,
    pub fd_h: f64,
}

impl Default for JacobianParams {
    fn default() -> Self {
        JacobianParams {
            z: FamilySpec::AllUpTo(1),
            w: FamilySpec::Bonds,
            fd_check: 0,
            fd_h: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub alpha: f64,
    pub beta: f64,
    pub m: f64,
    pub p: u32,
    pub x: f64,
    pub l_values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandScanParams {
    pub z: FamilySpec,
    pub w: FamilySpec,
    /// `sup_y Σ_{Y∋y} |K(Y)|` for the linearization bound.
    pub k_sup: f64,
    pub schedule: Option<ScheduleSpec>,
}

impl Default for BandScanParams {
    fn default() -> Self {
        BandScanParams {
            z: FamilySpec::AllUpTo(2),
            w: FamilySpec::Bonds,
            k_sup: 1.0,
            schedule: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HypothesisParams {
    /// Volumes to scan; empty means the configured lattice.
    pub volumes: Vec<VolumeSpec>,
    /// Boundary policies; empty means the configured lattice's boundary.
    pub boundaries: Vec<TauPolicy>,
    pub sigma_prime: SigmaPolicy,
    pub pair_budget: Option<usize>,
}

impl Default for HypothesisParams {
    fn default() -> Self {
        HypothesisParams {
            volumes: Vec::new(),
            boundaries: Vec::new(),
            sigma_prime: SigmaPolicy::Auto { samples: 64 },
            pair_budget: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpandParams {
    /// Block-spin configuration as an image mask (bit set = spin −1).
    pub sigma_prime: u64,
    pub n_max: usize,
    pub m: f64,
    /// Optional `W` for the numerator decomposition.
    pub w: Option<SiteSet>,
}

impl Default for ExpandParams {
    fn default() -> Self {
        ExpandParams {
            sigma_prime: 0,
            n_max: 3,
            m: 2.0,
            w: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolymerSpec {
    pub sites: SiteSet,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomPolymers {
    pub trials: usize,
    pub count: usize,
    pub max_size: usize,
    /// Load of the busiest site as a fraction of `ln M`.
    pub fill: f64,
}

impl Default for RandomPolymers {
    fn default() -> Self {
        RandomPolymers {
            trials: 10,
            count: 6,
            max_size: 3,
            fill: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KpCheckParams {
    /// Hard-core distance on the bar lattice (the configured lattice).
    pub a: u32,
    pub m: f64,
    pub polymers: Vec<PolymerSpec>,
    pub random: Option<RandomPolymers>,
    /// Avoided set; defaults to the first bar site.
    pub y: Option<SiteSet>,
}

impl Default for KpCheckParams {
    fn default() -> Self {
        KpCheckParams {
            a: 1,
            m: 2.0,
            polymers: Vec::new(),
            random: None,
            y: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CountParams {
    pub params: Option<CountingParams>,
    pub n_max: usize,
    pub eps: Option<f64>,
    pub delta_p: Option<f64>,
}

impl Default for CountParams {
    fn default() -> Self {
        CountParams {
            params: None,
            n_max: 10,
            eps: None,
            delta_p: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub subcommand: Subcommand,
    #[serde(default)]
    pub lattice: Option<LatticeSpec>,
    #[serde(default)]
    pub interaction: Option<InteractionSpec>,
    #[serde(default)]
    pub kernel: Option<Kernel>,
    #[serde(default)]
    pub scheme: Option<BlockScheme>,
    #[serde(default)]
    pub caps: Caps,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Report file name inside the output directory.
    #[serde(default = "default_report_name")]
    pub report: String,
    #[serde(default)]
    pub renormalize: RenormalizeParams,
    #[serde(default)]
    pub flow: FlowParams,
    #[serde(default)]
    pub jacobian: JacobianParams,
    #[serde(default)]
    pub band_scan: BandScanParams,
    #[serde(default)]
    pub hypothesis_check: HypothesisParams,
    #[serde(default)]
    pub expand: ExpandParams,
    #[serde(default)]
    pub kp_check: KpCheckParams,
    #[serde(default)]
    pub count: CountParams,
}

fn default_report_name() -> String {
    "report.json".to_string()
}

/// One schema or consistency violation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl Diagnostic {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Parse a JSON config, reporting the path of the first schema violation.
pub fn parse_config(text: &str) -> std::result::Result<RunConfig, Diagnostic> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { "$".to_string() } else { path };
        Diagnostic::new(path, e.into_inner().to_string())
    })
}

impl RunConfig {
    /// Whether this run draws random numbers.
    pub fn samples(&self) -> bool {
        match self.subcommand {
            Subcommand::HypothesisCheck => true,
            Subcommand::Jacobian => self.jacobian.fd_check > 0,
            Subcommand::KpCheck => self.kp_check.random.is_some(),
            _ => false,
        }
    }

    /// The config with defaults resolved and only the active section kept.
    pub fn effective(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let keep = self.subcommand.section();
        if let Value::Object(map) = &mut v {
            for s in [
                "renormalize",
                "flow",
                "jacobian",
                "band_scan",
                "hypothesis_check",
                "expand",
                "kp_check",
                "count",
            ] {
                if s != keep {
                    map.remove(s);
                }
            }
        }
        v
    }
}

/// Every violation in a parsed config. Builds nothing larger than the
/// lattice description itself.
pub fn validate(config: &RunConfig) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let cmd = config.subcommand;
    if config.samples() && config.seed.is_none() {
        out.push(Diagnostic::new("seed", format!("{} draws random samples and needs a seed", cmd.name())));
    }
    let mut lattice = None;
    match (&config.lattice, cmd.needs_lattice()) {
        (None, true) => out.push(Diagnostic::new("lattice", format!("required for {}", cmd.name()))),
        (Some(spec), _) => match Lattice::new(spec) {
            Ok(l) => lattice = Some(l),
            Err(e) => out.push(Diagnostic::new("lattice", e.to_string())),
        },
        _ => {}
    }
    if cmd.needs_interaction() {
        match &config.interaction {
            None => out.push(Diagnostic::new("interaction", format!("required for {}", cmd.name()))),
            Some(spec) => {
                if let Some(ls) = &config.lattice {
                    let j = spec.build(ls.geometry);
                    if j.dim() != ls.geometry.dim() {
                        out.push(Diagnostic::new(
                            "interaction.couplings.dim",
                            format!("dimension {} does not match the {}-dimensional lattice", j.dim(), ls.geometry.dim()),
                        ));
                    } else if let Some(l) = &lattice {
                        if let Err(e) = j.on_lattice(l) {
                            out.push(Diagnostic::new("interaction", e.to_string()));
                        }
                    }
                }
            }
        }
    }
    if cmd.needs_kernel() {
        match &config.kernel {
            None => out.push(Diagnostic::new("kernel", format!("required for {}", cmd.name()))),
            Some(k) => {
                if let Some(l) = &lattice {
                    if let Err(e) = KernelBlocks::new(l, k) {
                        out.push(Diagnostic::new("kernel", e.to_string()));
                    }
                }
                if let (Some(s), true) = (&config.scheme, cmd.needs_scheme()) {
                    let kb = k.b().unwrap_or(1);
                    if kb != s.b {
                        out.push(Diagnostic::new(
                            "kernel.b",
                            format!("kernel block size {kb} differs from scheme.b = {}", s.b),
                        ));
                    }
                }
            }
        }
    }
    if cmd.needs_scheme() {
        match (&config.scheme, &config.lattice) {
            (None, _) => out.push(Diagnostic::new("scheme", format!("required for {}", cmd.name()))),
            (Some(s), Some(ls)) => {
                for d in s.diagnostics(ls) {
                    out.push(Diagnostic::new("scheme", d));
                }
            }
            _ => {}
        }
    }
    match cmd {
        Subcommand::Flow if config.flow.drop_tol < 0.0 => {
            out.push(Diagnostic::new("flow.drop_tol", "must be non-negative"));
        }
        Subcommand::Jacobian if config.jacobian.fd_check > 0 && !(config.jacobian.fd_h > 0.0) => {
            out.push(Diagnostic::new("jacobian.fd_h", "must be positive"));
        }
        Subcommand::BandScan => {
            if let Some(s) = &config.band_scan.schedule {
                if s.p < 2 {
                    out.push(Diagnostic::new("band_scan.schedule.p", "must be at least 2"));
                }
                if !(s.m > 1.0) {
                    out.push(Diagnostic::new("band_scan.schedule.m", "must exceed 1"));
                }
                if !(s.x > 0.0 && s.x < 1.0) {
                    out.push(Diagnostic::new("band_scan.schedule.x", "must lie in (0, 1)"));
                }
            }
        }
        Subcommand::HypothesisCheck => {
            let h = &config.hypothesis_check;
            for (k, v) in h.volumes.iter().enumerate() {
                if let Some(ls) = &config.lattice {
                    if v.geometry != ls.geometry {
                        out.push(Diagnostic::new(
                            format!("hypothesis_check.volumes[{k}].geometry"),
                            "must match the lattice geometry",
                        ));
                    }
                }
            }
        }
        Subcommand::Expand if !(config.expand.m > 1.0) => {
            out.push(Diagnostic::new("expand.m", "must exceed 1"));
        }
        Subcommand::KpCheck => {
            let p = &config.kp_check;
            if !(p.m > 1.0) {
                out.push(Diagnostic::new("kp_check.m", "must exceed 1"));
            }
            if p.a == 0 {
                out.push(Diagnostic::new("kp_check.a", "must be at least 1"));
            }
            if p.polymers.is_empty() && p.random.is_none() {
                out.push(Diagnostic::new("kp_check", "give polymers or a random section"));
            }
            if let Some(l) = &lattice {
                for (k, poly) in p.polymers.iter().enumerate() {
                    if poly.sites.is_empty() || l.canonical_set(&poly.sites).map(|c| c.len()) != Some(poly.sites.len()) {
                        out.push(Diagnostic::new(format!("kp_check.polymers[{k}].sites"), "not a set of bar sites"));
                    }
                }
            }
        }
        Subcommand::Count => match &config.count.params {
            None => out.push(Diagnostic::new("count.params", "required for count")),
            Some(p) => {
                if let Err(e) = p.validate() {
                    out.push(Diagnostic::new("count.params", e.to_string()));
                }
                if config.count.n_max == 0 {
                    out.push(Diagnostic::new("count.n_max", "must be positive"));
                }
            }
        },
        _ => {}
    }
    out
}

/// Parse and validate in one step.
pub fn validate_text(text: &str) -> Vec<Diagnostic> {
    match parse_config(text) {
        Ok(c) => validate(&c),
        Err(d) => vec![d],
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CapUse {
    pub used: usize,
    pub cap: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub schema: &'static str,
    pub subcommand: Subcommand,
    pub config: Value,
    pub result: Value,
    /// Set when an expansion or series failed to converge.
    pub divergent: bool,
    pub wall_time_s: f64,
    pub cap_utilization: BTreeMap<String, CapUse>,
    pub artifacts: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: RunReport,
    pub artifacts: Vec<Artifact>,
}

impl RunOutput {
    pub fn artifact(&self, name: &str) -> Option<&str> {
        self.artifacts.iter().find(|a| a.name == name).map(|a| a.contents.as_str())
    }
}

/// Exit status of the command-line tool for a library error.
pub fn exit_code(e: &RgError) -> i32 {
    match e {
        RgError::Invalid(_) => 2,
        RgError::CapExceeded { .. } => 3,
        RgError::Divergent(_) => 4,
        RgError::Numerical(_) => 5,
    }
}

pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENT: i32 = 4;

struct Ctx<'a> {
    config: &'a RunConfig,
    usage: BTreeMap<String, CapUse>,
    artifacts: Vec<Artifact>,
    divergent: bool,
}

impl Ctx<'_> {
    fn used(&mut self, what: &str, used: usize, cap: usize) {
        let e = self.usage.entry(what.to_string()).or_insert(CapUse { used: 0, cap });
        e.used = e.used.max(used);
    }

    fn emit(&mut self, name: &str, contents: String) {
        self.artifacts.push(Artifact {
            name: name.to_string(),
            contents,
        });
    }

    fn lattice(&self) -> Result<Lattice> {
        let spec = self.config.lattice.as_ref().ok_or_else(|| RgError::invalid("missing lattice"))?;
        Lattice::new(spec)
    }

    fn interaction(&self) -> Result<Interaction> {
        let spec = self.config.lattice.as_ref().ok_or_else(|| RgError::invalid("missing lattice"))?;
        Ok(self
            .config
            .interaction
            .as_ref()
            .ok_or_else(|| RgError::invalid("missing interaction"))?
            .build(spec.geometry))
    }

    fn kernel(&self) -> Result<Kernel> {
        self.config.kernel.ok_or_else(|| RgError::invalid("missing kernel"))
    }

    fn scheme(&self) -> Result<BlockScheme> {
        self.config.scheme.ok_or_else(|| RgError::invalid("missing scheme"))
    }

    fn seed(&self) -> Result<u64> {
        self.config.seed.ok_or_else(|| RgError::invalid("missing seed"))
    }
}

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(&r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

fn couplings_csv(j: &Interaction) -> String {
    csv_text(
        &["set", "value"],
        j.iter().map(|(x, v)| vec![x.encode(j.dim()), format!("{v:e}")]),
    )
}

/// Execute a validated config.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    let diags = validate(config);
    if let Some(d) = diags.first() {
        return Err(RgError::invalid(d.to_string()));
    }
    let start = Instant::now();
    let mut ctx = Ctx {
        config,
        usage: BTreeMap::new(),
        artifacts: Vec::new(),
        divergent: false,
    };
    let result = match config.subcommand {
        Subcommand::Renormalize => run_renormalize(&mut ctx)?,
        Subcommand::Flow => run_flow(&mut ctx)?,
        Subcommand::Jacobian => run_jacobian(&mut ctx)?,
        Subcommand::BandScan => run_band_scan(&mut ctx)?,
        Subcommand::HypothesisCheck => run_hypothesis(&mut ctx)?,
        Subcommand::Expand => run_expand(&mut ctx)?,
        Subcommand::KpCheck => run_kp_check(&mut ctx)?,
        Subcommand::Count => run_count(&mut ctx)?,
    };
    let mut names: Vec<String> = vec![config.report.clone()];
    names.extend(ctx.artifacts.iter().map(|a| a.name.clone()));
    Ok(RunOutput {
        report: RunReport {
            schema: SCHEMA,
            subcommand: config.subcommand,
            config: config.effective(),
            result,
            divergent: ctx.divergent,
            wall_time_s: start.elapsed().as_secs_f64(),
            cap_utilization: ctx.usage,
            artifacts: names,
        },
        artifacts: ctx.artifacts,
    })
}

/// Write the report and artifacts into `dir`, creating it if needed.
pub fn write_outputs(out: &RunOutput, report_name: &str, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let text = serde_json::to_string_pretty(&out.report).map_err(std::io::Error::other)?;
    std::fs::write(dir.join(report_name), text + "\n")?;
    for a in &out.artifacts {
        std::fs::write(dir.join(&a.name), &a.contents)?;
    }
    Ok(())
}

fn run_renormalize(ctx: &mut Ctx) -> Result<Value> {
    let lat = ctx.lattice()?;
    let j = ctx.interaction()?;
    let k = ctx.kernel()?;
    let caps = ctx.config.caps;
    let r = renormalize(&lat, &j, &k, &caps)?;
    ctx.used("image sites", r.image.len(), caps.max_image_sites);
    let (jp, dropped) = r.interaction(ctx.config.renormalize.drop_tol);
    ctx.emit("couplings.csv", couplings_csv(&jp));
    Ok(json!({
        "lattice": lat.info(),
        "image": r.image.info(),
        "interaction": jp,
        "largest_dropped": dropped,
        "log_z_min": r.log_z.iter().copied().fold(f64::INFINITY, f64::min),
        "log_z_max": r.log_z.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }))
}

fn run_flow(ctx: &mut Ctx) -> Result<Value> {
    let lat = ctx.lattice()?;
    let j = ctx.interaction()?;
    let k = ctx.kernel()?;
    let caps = ctx.config.caps;
    let p = &ctx.config.flow;
    let steps = rg_flow(&lat, &j, &k, p.steps, p.drop_tol, &caps)?;
    if let Some(s) = steps.get(1) {
        ctx.used("image sites", s.lattice.sites, caps.max_image_sites);
    }
    let rows: Vec<Vec<String>> = steps
        .iter()
        .map(|s| {
            vec![
                s.step.to_string(),
                s.lattice.sites.to_string(),
                s.interaction.len().to_string(),
                format!("{:e}", s.norm),
                format!("{:e}", s.truncation_error),
            ]
        })
        .collect();
    ctx.emit(
        "flow.csv",
        csv_text(&["step", "sites", "couplings", "norm", "truncation_error"], rows),
    );
    Ok(json!({ "steps": steps }))
}

fn jacobian_sets(
    ctx: &mut Ctx,
    lat: &Lattice,
    k: &Kernel,
    z: &FamilySpec,
    w: &FamilySpec,
) -> Result<(Vec<SiteSet>, Vec<SiteSet>)> {
    let blocks = KernelBlocks::new(lat, k)?;
    let caps = ctx.config.caps;
    ctx.used("image sites", blocks.image().len(), caps.max_image_sites);
    Ok((z.resolve(blocks.image())?, w.resolve(lat)?))
}

fn run_jacobian(ctx: &mut Ctx) -> Result<Value> {
    let lat = ctx.lattice()?;
    let j = ctx.interaction()?;
    let k = ctx.kernel()?;
    let caps = ctx.config.caps;
    let p = ctx.config.jacobian.clone();
    let (zs, ws) = jacobian_sets(ctx, &lat, &k, &p.z, &p.w)?;
    let m = jacobian_matrix(&lat, &j, &k, &zs, &ws, &caps)?;
    let geom = ctx.config.scheme.map(|s| BlockGeometry::new(&lat, &s)).transpose()?;
    ctx.emit("jacobian.csv", m.to_csv(&lat, geom.as_ref())?);
    let mut fd = Vec::new();
    if p.fd_check > 0 {
        let mut rng = Stream::new(ctx.seed()?, "jacobian-fd");
        for i in rng.choose(m.entries.len(), p.fd_check) {
            let e = &m.entries[i];
            let v = finite_difference_oracle(&lat, &j, &k, &e.z, &e.w, p.fd_h, &caps)?;
            fd.push(json!({
                "z": e.z, "w": e.w, "value": e.value, "finite_difference": v,
                "abs_diff": (v - e.value).abs(),
            }));
        }
    }
    let max_fd = fd
        .iter()
        .map(|v| v["abs_diff"].as_f64().unwrap_or(f64::NAN))
        .fold(0.0, f64::max);
    Ok(json!({
        "rows": zs.len(),
        "columns": ws.len(),
        "max_abs": max_abs(&m),
        "finite_difference": fd,
        "finite_difference_max_abs_diff": max_fd,
    }))
}

fn max_abs(m: &JacobianMatrix) -> f64 {
    m.entries.iter().map(|e| e.value.abs()).fold(0.0, f64::max)
}

fn run_band_scan(ctx: &mut Ctx) -> Result<Value> {
    let lat = ctx.lattice()?;
    let j = ctx.interaction()?;
    let k = ctx.kernel()?;
    let scheme = ctx.scheme()?;
    let caps = ctx.config.caps;
    let p = ctx.config.band_scan.clone();
    let geom = BlockGeometry::new(&lat, &scheme)?;
    let (zs, ws) = jacobian_sets(ctx, &lat, &k, &p.z, &p.w)?;
    let m = jacobian_matrix(&lat, &j, &k, &zs, &ws, &caps)?;
    ctx.emit("jacobian.csv", m.to_csv(&lat, Some(&geom))?);
    let profile = band_profile(&m, &lat, &geom)?;
    ctx.emit(
        "band.csv",
        csv_text(
            &["bin", "max_abs", "row_count"],
            profile
                .bins
                .iter()
                .zip(&profile.row_counts)
                .enumerate()
                .map(|(n, (b, c))| vec![n.to_string(), format!("{b:e}"), c.to_string()]),
        ),
    );
    let (inversions, worst) = profile.inversions_from(1);
    let bound = if profile.alpha.is_some() {
        match linearization_bound(&profile, p.k_sup, lat.dim()) {
            Ok(b) => Some(b),
            Err(RgError::Divergent(_)) => {
                ctx.divergent = true;
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let mut schedule = Vec::new();
    if let Some(s) = &p.schedule {
        for &l in &s.l_values {
            let bp = pen_schedule(l, s.alpha, s.beta, scheme.a as f64, s.m, s.p, s.x);
            schedule.push((l, bp, band_bound_rhs(&bp)?));
        }
        ctx.emit(
            "schedule.csv",
            csv_text(
                &["l", "s", "q", "k_cut", "case1", "case2", "total"],
                schedule.iter().map(|(l, bp, r)| {
                    vec![
                        format!("{l}"),
                        format!("{:e}", bp.s),
                        format!("{:e}", bp.q),
                        format!("{:e}", bp.k_cut),
                        format!("{:e}", r.case1),
                        format!("{:e}", r.case2),
                        format!("{:e}", r.total),
                    ]
                }),
            ),
        );
    }
    let schedule: Vec<Value> = schedule
        .into_iter()
        .map(|(l, bp, r)| json!({"l": l, "params": bp, "rhs": r}))
        .collect();
    Ok(json!({
        "rows": zs.len(),
        "columns": ws.len(),
        "profile": profile,
        "inversions_from_bin_1": inversions,
        "worst_inversion": worst,
        "linearization_bound": bound,
        "schedule": schedule,
    }))
}

fn run_hypothesis(ctx: &mut Ctx) -> Result<Value> {
    let ls = ctx.config.lattice.clone().ok_or_else(|| RgError::invalid("missing lattice"))?;
    let p = ctx.config.hypothesis_check.clone();
    let volumes = if p.volumes.is_empty() {
        vec![VolumeSpec {
            geometry: ls.geometry,
            extent: ls.extent.clone(),
        }]
    } else {
        p.volumes
    };
    let boundaries = if p.boundaries.is_empty() {
        vec![match ls.boundary {
            Boundary::Periodic => TauPolicy::Periodic,
            Boundary::Free => TauPolicy::Free,
            Boundary::Fixed { .. } => TauPolicy::AllPlus,
        }]
    } else {
        p.boundaries
    };
    let spec = HypothesisSpec {
        interaction: ctx.interaction()?,
        kernel: ctx.kernel()?,
        volumes,
        boundaries,
        sigma_prime: p.sigma_prime,
        pair_budget: p.pair_budget,
    };
    let caps = ctx.config.caps;
    let r = hypothesis_check(&spec, ctx.seed()?, &caps)?;
    let lat_dim = ls.geometry.dim();
    ctx.emit(
        "correlations.csv",
        csv_text(
            &["volume", "tau", "sigma_prime", "i", "j", "dist", "corr"],
            r.samples.iter().map(|s| {
                vec![
                    s.volume.to_string(),
                    s.tau_id.to_string(),
                    s.sigma_prime_id.to_string(),
                    s.i.encode(lat_dim),
                    s.j.encode(lat_dim),
                    format!("{}", s.dist),
                    format!("{:e}", s.corr),
                ]
            }),
        ),
    );
    let status = if r.all_zero { "zero correlations" } else { "fitted" };
    let mut v = serde_json::to_value(&r).expect("report serializes");
    if let Value::Object(m) = &mut v {
        m.remove("samples");
        m.insert("status".into(), json!(status));
        m.insert("sample_count".into(), json!(r.samples.len()));
    }
    Ok(v)
}

fn run_expand(ctx: &mut Ctx) -> Result<Value> {
    let lat = ctx.lattice()?;
    let j = ctx.interaction()?;
    let k = ctx.kernel()?;
    let scheme = ctx.scheme()?;
    let caps = ctx.config.caps;
    let p = ctx.config.expand.clone();
    let r = iterated_block_sum(&lat, &j, &k, p.sigma_prime, &scheme, &caps)?;
    let acts = all_activities(&r)?;
    ctx.used("activities", acts.len(), caps.max_polymers);
    let e = r.expectation()?;
    let moments = |s: &[SiteSet]| e.moments(s);
    let geom = r.geometry();
    let weights = polymer_weights(&acts, &moments, geom, p.n_max, &caps)?;
    ctx.used("polymers", weights.polymers.len(), caps.max_polymers);
    let cs = cluster_sum(&weights, geom, &caps)?;
    let lz = r.direct_log_partition()?;
    let reconstruction = if cs > 0.0 { ((cs.ln() - r.f_final) - lz).exp() - 1.0 } else { f64::NAN };
    let kp = kp_condition_check(&weights.pairs(), p.m, geom)?;
    if !kp.pass {
        ctx.divergent = true;
    }
    let numerator = match &p.w {
        Some(w) => {
            let w = lat
                .canonical_set(w)
                .ok_or_else(|| RgError::invalid("expand.w is not in the volume"))?;
            let d = numerator_decomposition(&acts, &moments, &weights, &lat, geom, &w, p.n_max, &caps)?;
            let direct = r.direct_numerator(&w)? / (lz + r.f_final).exp();
            Some(json!({"w": w, "decomposition": d, "ratio": d.ratio(), "direct": direct}))
        }
        None => None,
    };
    let dim = lat.dim();
    let lr: Vec<Value> = r
        .long_range()
        .into_iter()
        .map(|(a, c)| json!({"set": a.encode(dim), "coefficient": c}))
        .collect();
    ctx.emit(
        "polymers.csv",
        csv_text(
            &["polymer", "w", "v", "hypergraphs"],
            weights.polymers.iter().map(|q| {
                vec![
                    q.n.encode(dim),
                    format!("{:e}", q.w),
                    format!("{:e}", q.v),
                    q.hypergraphs.to_string(),
                ]
            }),
        ),
    );
    let stages: Vec<Value> = r
        .stages
        .iter()
        .map(|s| json!({"stage": s.stage, "terms": s.f.terms().len(), "long_range": s.lr.terms().len(), "short_range": s.sr.terms().len()}))
        .collect();
    Ok(json!({
        "stages": stages,
        "f_final": r.f_final,
        "pruned_mass": r.pruned_mass,
        "long_range": lr,
        "activities": acts.iter().map(|a| json!({"set": a.b.encode(dim), "bar": a.bar.encode(dim), "sup_norm": a.sup_norm, "allowable": a.allowable})).collect::<Vec<_>>(),
        "epsilon_l": epsilon_l(&acts),
        "modified_normalization": e.normalization()?,
        "polymer_count": weights.polymers.len(),
        "truncation_tail": weights.truncation_tail,
        "cluster_sum": cs,
        "log_partition": lz,
        "reconstruction_rel_error": reconstruction,
        "kp": kp,
        "numerator": numerator,
    }))
}

fn run_kp_check(ctx: &mut Ctx) -> Result<Value> {
    let bar = ctx.lattice()?;
    let caps = ctx.config.caps;
    let p = ctx.config.kp_check.clone();
    let geom = BlockGeometry::from_bar(bar.clone(), p.a);
    let y = match &p.y {
        Some(y) => bar
            .canonical_set(y)
            .ok_or_else(|| RgError::invalid("kp_check.y is not in the volume"))?,
        None => SiteSet::singleton(bar.site(0)),
    };
    let mut systems: Vec<Vec<(SiteSet, f64)>> = Vec::new();
    if !p.polymers.is_empty() {
        systems.push(
            p.polymers
                .iter()
                .map(|q| (bar.canonical_set(&q.sites).unwrap_or_else(|| q.sites.clone()), q.weight))
                .collect(),
        );
    }
    if let Some(rp) = &p.random {
        let mut rng = Stream::new(ctx.seed()?, "kp-check");
        for _ in 0..rp.trials {
            systems.push(random_polymer_system(&geom, &mut rng, rp.count, rp.max_size, p.m, rp.fill)?);
        }
    }
    let mut rows = Vec::new();
    let mut out = Vec::new();
    for (t, sys) in systems.iter().enumerate() {
        ctx.used("polymers", sys.len(), caps.max_polymers);
        let kp = kp_condition_check(sys, p.m, &geom)?;
        let av = avoidance_oracle(sys, &y, p.m, &geom, &caps)?;
        rows.push(vec![
            t.to_string(),
            sys.len().to_string(),
            kp.pass.to_string(),
            format!("{:e}", kp.min_margin),
            format!("{:e}", av.ratio),
            format!("{:e}", av.bound),
            av.pass.to_string(),
        ]);
        out.push(json!({"polymers": sys.iter().map(|(s, w)| json!({"sites": s, "weight": w})).collect::<Vec<_>>(), "kp_pass": kp.pass, "min_margin": kp.min_margin, "avoidance": av}));
    }
    ctx.emit(
        "kp.csv",
        csv_text(
            &["system", "polymers", "kp_pass", "min_margin", "ratio", "bound", "avoidance_pass"],
            rows,
        ),
    );
    let all_implied = out
        .iter()
        .all(|v| !v["kp_pass"].as_bool().unwrap_or(false) || v["avoidance"]["pass"].as_bool().unwrap_or(false));
    Ok(json!({"y": y, "systems": out, "bound_holds_whenever_kp_passes": all_implied}))
}

fn run_count(ctx: &mut Ctx) -> Result<Value> {
    let p = ctx.config.count.clone();
    let params = p.params.ok_or_else(|| RgError::invalid("missing count.params"))?;
    let rec = combinatorics::recursion_coeffs(&params, p.n_max)?;
    let lag = combinatorics::lagrange_coeffs(&params, p.n_max)?;
    ctx.emit("coefficients.csv", rec.to_csv());
    let rb = combinatorics::radius_and_bound(&params, p.n_max)?;
    let eps_sym = combinatorics::epsilon_threshold_symbolic(&params)?;
    let eps_star = combinatorics::epsilon_threshold(&params)?;
    let mut tail = Value::Null;
    let mut delta = Value::Null;
    if let Some(eps) = p.eps {
        let x = combinatorics::series_ratio(&params, eps)?;
        tail = match combinatorics::tail_sum(&params, eps) {
            Ok(t) => json!({"ratio": x, "sum": t}),
            Err(RgError::Divergent(msg)) => {
                ctx.divergent = true;
                json!({"ratio": x, "sum": Value::Null, "divergent": msg})
            }
            Err(e) => return Err(e),
        };
        if let (Some(bp), false) = (p.delta_p, ctx.divergent) {
            delta = json!(combinatorics::delta_tail(&params, eps, bp)?);
        }
    }
    Ok(json!({
        "params": params,
        "coefficients": rec.0.iter().map(|c| c.to_string()).collect::<Vec<_>>(),
        "lagrange_agrees": rec == lag,
        "radius": rb.radius.to_string(),
        "radius_value": combinatorics::to_f64(&rb.radius),
        "bound_at_n_max": rb.bound_n.to_string(),
        "epsilon_threshold": eps_star,
        "epsilon_threshold_symbolic": eps_sym.to_string(),
        "tail": tail,
        "delta": delta,
    }))
}
