//! Run configuration: TOML parsing, validation and built-in presets.

use std::path::PathBuf;

use serde::Deserialize;

use crate::analysis::SUPPORT_THRESHOLD;
use crate::error::{Error, Result};
use crate::fem::Discretization;
use crate::functional::{FunctionalSpec, GroupSpec, Inner, Outer};
use crate::mesh::{build_disk_mesh, build_rectangle_mesh, build_square_mesh, Mesh};
use crate::optimizer::{BetaSchedule, Init, Scheme, SolverConfig, StepConfig, Tolerances};

pub const PRESETS: [&str; 5] = ["figure-1", "figure-1-product", "figure-2", "figure-3", "square-smoke"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DomainSpec {
    Square { n: usize },
    Rectangle { width: f64, height: f64, nx: usize, ny: usize },
    Disk { rings: usize },
}

impl DomainSpec {
    pub fn build(&self) -> Result<Mesh> {
        match *self {
            DomainSpec::Square { n } => build_square_mesh(n),
            DomainSpec::Rectangle { width, height, nx, ny } => build_rectangle_mesh(width, height, nx, ny),
            DomainSpec::Disk { rings } => build_disk_mesh(rings),
        }
    }

    pub fn discretize(&self) -> Result<Discretization> {
        Discretization::new(self.build()?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec {
    Random,
    Checkpoint(PathBuf),
    Bumps(Vec<[f64; 2]>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub threshold: f64,
    pub cluster_tol: f64,
    /// Raster width of the PGM partition image.
    pub raster: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            threshold: SUPPORT_THRESHOLD,
            cluster_tol: 1e-3,
            raster: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub domain: DomainSpec,
    /// `k_i` per group.
    pub partition: Vec<usize>,
    pub functional: FunctionalSpec,
    /// Solver settings; `init` is filled in from `init_spec` and `seed`.
    pub solver: SolverConfig,
    pub init_spec: InitSpec,
    pub seed: Option<u64>,
    pub output: PathBuf,
    /// Reference checkpoint enabling the projection term.
    pub projection: Option<PathBuf>,
    pub analysis: AnalysisConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: Option<String>,
    seed: Option<u64>,
    output: Option<PathBuf>,
    projection: Option<PathBuf>,
    domain: RawDomain,
    partition: RawPartition,
    functional: RawFunctional,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    init: RawInit,
    #[serde(default)]
    analysis: RawAnalysis,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDomain {
    kind: String,
    n: Option<usize>,
    rings: Option<usize>,
    width: Option<f64>,
    height: Option<f64>,
    nx: Option<usize>,
    ny: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPartition {
    k: Vec<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFunctional {
    outer: String,
    p: Option<f64>,
    groups: Vec<RawGroup>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGroup {
    k: Option<usize>,
    inner: String,
    p: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    scheme: Option<String>,
    beta0: Option<f64>,
    beta_factor: Option<f64>,
    stages: Option<usize>,
    q: Option<f64>,
    step: Option<f64>,
    backtrack: Option<f64>,
    armijo: Option<f64>,
    grad_tol: Option<f64>,
    energy_tol: Option<f64>,
    fixed_point_tol: Option<f64>,
    penalty_share: Option<f64>,
    max_iter: Option<usize>,
    eigen_tol: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInit {
    kind: Option<String>,
    path: Option<PathBuf>,
    centers: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnalysis {
    threshold: Option<f64>,
    cluster_tol: Option<f64>,
    raster: Option<usize>,
}

fn parse_inner(name: &str, p: Option<f64>) -> Result<Inner> {
    match name {
        "pnorm" => Ok(Inner::PNorm(p.unwrap_or(1.0))),
        "product" => Ok(Inner::Product),
        "sum" => Ok(Inner::Sum),
        "power-sum" => Ok(Inner::PowerSum(p.unwrap_or(1.0))),
        other => Err(Error::Config(format!(
            "unknown inner function {other:?} (expected pnorm, product, sum or power-sum)"
        ))),
    }
}

fn parse_outer(name: &str, p: Option<f64>) -> Result<Outer> {
    match name {
        "sum" => Ok(Outer::Sum),
        "product" => Ok(Outer::Product),
        "power-sum" => Ok(Outer::PowerSum(p.unwrap_or(1.0))),
        "pnorm" => Ok(Outer::PNorm(p.unwrap_or(1.0))),
        other => Err(Error::Config(format!(
            "unknown outer function {other:?} (expected sum, product, power-sum or pnorm)"
        ))),
    }
}

fn inner_name(inner: &Inner) -> (&'static str, Option<f64>) {
    match *inner {
        Inner::PNorm(p) => ("pnorm", Some(p)),
        Inner::Product => ("product", None),
        Inner::Sum => ("sum", None),
        Inner::PowerSum(p) => ("power-sum", Some(p)),
    }
}

fn outer_name(outer: &Outer) -> (&'static str, Option<f64>) {
    match *outer {
        Outer::Sum => ("sum", None),
        Outer::Product => ("product", None),
        Outer::PowerSum(p) => ("power-sum", Some(p)),
        Outer::PNorm(p) => ("pnorm", Some(p)),
    }
}

impl RunConfig {
    /// Parses a TOML document. Syntax errors carry line and column.
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let domain = match raw.domain.kind.as_str() {
            "square" => DomainSpec::Square {
                n: raw.domain.n.unwrap_or(32),
            },
            "rectangle" => DomainSpec::Rectangle {
                width: raw.domain.width.unwrap_or(1.0),
                height: raw.domain.height.unwrap_or(1.0),
                nx: raw.domain.nx.unwrap_or(32),
                ny: raw.domain.ny.unwrap_or(32),
            },
            "disk" => DomainSpec::Disk {
                rings: raw.domain.rings.unwrap_or(32),
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown domain kind {other:?} (expected square, rectangle or disk)"
                )))
            }
        };
        let groups = raw
            .functional
            .groups
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let k = g.k.or_else(|| raw.partition.k.get(i).copied()).unwrap_or(0);
                Ok(GroupSpec {
                    k,
                    inner: parse_inner(&g.inner, g.p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let functional = FunctionalSpec {
            outer: parse_outer(&raw.functional.outer, raw.functional.p)?,
            groups,
        };

        let d = SolverConfig::default();
        let s = &raw.solver;
        let scheme = match s.scheme.as_deref().unwrap_or("fixed-point") {
            "fixed-point" => Scheme::FixedPoint,
            "projected-gradient" => Scheme::ProjectedGradient,
            other => {
                return Err(Error::Config(format!(
                    "unknown scheme {other:?} (expected fixed-point or projected-gradient)"
                )))
            }
        };
        let solver = SolverConfig {
            scheme,
            schedule: BetaSchedule {
                initial: s.beta0.unwrap_or(d.schedule.initial),
                factor: s.beta_factor.unwrap_or(d.schedule.factor),
                max_stages: s.stages.unwrap_or(d.schedule.max_stages),
            },
            step: StepConfig {
                initial: s.step.unwrap_or(d.step.initial),
                backtrack: s.backtrack.unwrap_or(d.step.backtrack),
                armijo: s.armijo.unwrap_or(d.step.armijo),
            },
            tol: Tolerances {
                gradient: s.grad_tol.unwrap_or(d.tol.gradient),
                energy: s.energy_tol.unwrap_or(d.tol.energy),
                fixed_point: s.fixed_point_tol.unwrap_or(d.tol.fixed_point),
                penalty_share: s.penalty_share.unwrap_or(d.tol.penalty_share),
                max_iter: s.max_iter.unwrap_or(d.tol.max_iter),
            },
            init: d.init.clone(),
            q: s.q.unwrap_or(d.q),
            eigen_tol: s.eigen_tol.unwrap_or(d.eigen_tol),
            projection: None,
        };
        let init_spec = match raw.init.kind.as_deref().unwrap_or("random") {
            "random" => InitSpec::Random,
            "checkpoint" => InitSpec::Checkpoint(
                raw.init
                    .path
                    .clone()
                    .ok_or_else(|| Error::Config("checkpoint init needs `path`".into()))?,
            ),
            "bumps" => InitSpec::Bumps(raw.init.centers.clone().unwrap_or_default()),
            other => {
                return Err(Error::Config(format!(
                    "unknown init kind {other:?} (expected random, checkpoint or bumps)"
                )))
            }
        };
        let da = AnalysisConfig::default();
        let name = raw.name.unwrap_or_else(|| "run".into());
        let mut cfg = RunConfig {
            output: raw.output.unwrap_or_else(|| PathBuf::from("out").join(&name)),
            name,
            domain,
            partition: raw.partition.k,
            functional,
            solver,
            init_spec,
            seed: raw.seed,
            projection: raw.projection,
            analysis: AnalysisConfig {
                threshold: raw.analysis.threshold.unwrap_or(da.threshold),
                cluster_tol: raw.analysis.cluster_tol.unwrap_or(da.cluster_tol),
                raster: raw.analysis.raster.unwrap_or(da.raster),
            },
        };
        cfg.sync_init();
        Ok(cfg)
    }

    /// Copies the init choice and seed into the solver configuration.
    pub fn sync_init(&mut self) {
        let seed = self.seed.unwrap_or(0);
        self.solver.init = match &self.init_spec {
            InitSpec::Random => Init::Random { seed },
            InitSpec::Checkpoint(p) => Init::Checkpoint(p.clone()),
            InitSpec::Bumps(c) => Init::Bumps {
                centers: c.clone(),
                seed,
            },
        };
        self.solver.projection = self.projection.clone();
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self.sync_init();
        self
    }

    /// Every invariant violation, without running anything. Empty when valid.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self.domain {
            DomainSpec::Square { n } if n == 0 => out.push("domain.n must be positive".into()),
            DomainSpec::Disk { rings } if rings == 0 => out.push("domain.rings must be positive".into()),
            DomainSpec::Rectangle { width, height, nx, ny } => {
                if !(width > 0.0 && height > 0.0) {
                    out.push("rectangle width and height must be positive".into());
                }
                if nx == 0 || ny == 0 {
                    out.push("rectangle nx and ny must be positive".into());
                }
            }
            _ => {}
        }
        if self.partition.is_empty() {
            out.push("partition.k must list at least one group".into());
        }
        if self.partition.iter().any(|&k| k == 0) {
            out.push("every partition.k entry must be positive".into());
        }
        if self.functional.groups.len() != self.partition.len() {
            out.push(format!(
                "functional has {} groups but partition.k has {}",
                self.functional.groups.len(),
                self.partition.len()
            ));
        }
        for (i, (g, k)) in self.functional.groups.iter().zip(&self.partition).enumerate() {
            if g.k != *k {
                out.push(format!("group {i}: functional k = {} disagrees with partition k = {k}", g.k));
            }
            if let Inner::PNorm(p) | Inner::PowerSum(p) = g.inner {
                if !(p > 0.0) {
                    out.push(format!("group {i}: exponent p = {p} must be positive"));
                }
            }
        }
        if let Outer::PNorm(p) | Outer::PowerSum(p) = self.functional.outer {
            if !(p > 0.0) {
                out.push(format!("outer exponent p = {p} must be positive"));
            }
        }
        let s = &self.solver;
        if !(s.q > 0.5) {
            out.push(format!("q = {} must exceed 1/2", s.q));
        }
        if s.scheme == Scheme::FixedPoint && s.q != 1.0 {
            out.push("the fixed-point scheme requires q = 1".into());
        }
        if s.scheme == Scheme::FixedPoint && self.projection.is_some() {
            out.push("projection requires scheme = \"projected-gradient\"".into());
        }
        if let Some(p) = &self.projection {
            if !p.exists() {
                out.push(format!("projection checkpoint {} does not exist", p.display()));
            }
        }
        if let InitSpec::Checkpoint(p) = &self.init_spec {
            if !p.exists() {
                out.push(format!("init checkpoint {} does not exist", p.display()));
            }
        }
        if !(s.schedule.factor > 1.0) {
            out.push(format!("beta_factor = {} must exceed 1", s.schedule.factor));
        }
        if !(s.schedule.initial >= 0.0) {
            out.push(format!("beta0 = {} must be nonnegative", s.schedule.initial));
        }
        if s.schedule.max_stages == 0 {
            out.push("stages must be positive".into());
        }
        let tols = [
            ("grad_tol", s.tol.gradient),
            ("energy_tol", s.tol.energy),
            ("fixed_point_tol", s.tol.fixed_point),
            ("penalty_share", s.tol.penalty_share),
            ("eigen_tol", s.eigen_tol),
        ];
        for (name, v) in tols {
            if !(v > 0.0) {
                out.push(format!("{name} = {v} must be positive"));
            }
        }
        if s.tol.max_iter == 0 {
            out.push("max_iter must be positive".into());
        }
        if !(s.step.initial > 0.0) {
            out.push("step must be positive".into());
        }
        if !(s.step.backtrack > 0.0 && s.step.backtrack < 1.0) {
            out.push("backtrack must lie in (0, 1)".into());
        }
        if !(s.step.armijo > 0.0 && s.step.armijo < 1.0) {
            out.push("armijo must lie in (0, 1)".into());
        }
        match &self.init_spec {
            InitSpec::Random if self.seed.is_none() => out.push("random init requires a seed".into()),
            InitSpec::Bumps(c) if c.len() != self.partition.len() => {
                out.push(format!("{} bump centers for {} groups", c.len(), self.partition.len()))
            }
            _ => {}
        }
        if !(self.analysis.threshold > 0.0 && self.analysis.threshold < 1.0) {
            out.push("analysis.threshold must lie in (0, 1)".into());
        }
        if !(self.analysis.cluster_tol > 0.0) {
            out.push("analysis.cluster_tol must be positive".into());
        }
        if self.analysis.raster < 2 {
            out.push("analysis.raster must be at least 2".into());
        }
        out
    }

    /// Echo as TOML; parsing it back yields an equal configuration.
    pub fn to_toml(&self) -> String {
        let mut t = String::new();
        t.push_str(&format!("name = {:?}\n", self.name));
        if let Some(seed) = self.seed {
            t.push_str(&format!("seed = {seed}\n"));
        }
        t.push_str(&format!("output = {:?}\n", self.output.display().to_string()));
        if let Some(p) = &self.projection {
            t.push_str(&format!("projection = {:?}\n", p.display().to_string()));
        }
        t.push_str("\n[domain]\n");
        match self.domain {
            DomainSpec::Square { n } => t.push_str(&format!("kind = \"square\"\nn = {n}\n")),
            DomainSpec::Rectangle { width, height, nx, ny } => t.push_str(&format!(
                "kind = \"rectangle\"\nwidth = {width:?}\nheight = {height:?}\nnx = {nx}\nny = {ny}\n"
            )),
            DomainSpec::Disk { rings } => t.push_str(&format!("kind = \"disk\"\nrings = {rings}\n")),
        }
        t.push_str(&format!("\n[partition]\nk = {:?}\n", self.partition));
        let (outer, op) = outer_name(&self.functional.outer);
        t.push_str(&format!("\n[functional]\nouter = {outer:?}\n"));
        if let Some(p) = op {
            t.push_str(&format!("p = {p:?}\n"));
        }
        for g in &self.functional.groups {
            let (inner, ip) = inner_name(&g.inner);
            t.push_str(&format!("\n[[functional.groups]]\nk = {}\ninner = {inner:?}\n", g.k));
            if let Some(p) = ip {
                t.push_str(&format!("p = {p:?}\n"));
            }
        }
        let s = &self.solver;
        let scheme = match s.scheme {
            Scheme::FixedPoint => "fixed-point",
            Scheme::ProjectedGradient => "projected-gradient",
        };
        t.push_str(&format!(
            "\n[solver]\nscheme = {scheme:?}\nbeta0 = {:?}\nbeta_factor = {:?}\nstages = {}\nq = {:?}\n\
             step = {:?}\nbacktrack = {:?}\narmijo = {:?}\ngrad_tol = {:?}\nenergy_tol = {:?}\n\
             fixed_point_tol = {:?}\npenalty_share = {:?}\nmax_iter = {}\neigen_tol = {:?}\n",
            s.schedule.initial,
            s.schedule.factor,
            s.schedule.max_stages,
            s.q,
            s.step.initial,
            s.step.backtrack,
            s.step.armijo,
            s.tol.gradient,
            s.tol.energy,
            s.tol.fixed_point,
            s.tol.penalty_share,
            s.tol.max_iter,
            s.eigen_tol,
        ));
        t.push_str("\n[init]\n");
        match &self.init_spec {
            InitSpec::Random => t.push_str("kind = \"random\"\n"),
            InitSpec::Checkpoint(p) => t.push_str(&format!("kind = \"checkpoint\"\npath = {:?}\n", p.display().to_string())),
            InitSpec::Bumps(c) => {
                let list: Vec<String> = c.iter().map(|p| format!("[{:?}, {:?}]", p[0], p[1])).collect();
                t.push_str(&format!("kind = \"bumps\"\ncenters = [{}]\n", list.join(", ")));
            }
        }
        let a = &self.analysis;
        t.push_str(&format!(
            "\n[analysis]\nthreshold = {:?}\ncluster_tol = {:?}\nraster = {}\n",
            a.threshold, a.cluster_tol, a.raster
        ));
        t
    }
}

/// Built-in configuration by name, see [`PRESETS`].
pub fn preset(name: &str) -> Result<RunConfig> {
    let text = preset_text(name).ok_or_else(|| {
        Error::Config(format!("unknown preset {name:?}; available: {}", PRESETS.join(", ")))
    })?;
    RunConfig::from_toml(&text)
}

/// TOML source of a preset.
pub fn preset_text(name: &str) -> Option<String> {
    let t = match name {
        "figure-1" => FIGURE_1,
        "figure-1-product" => FIGURE_1_PRODUCT,
        "figure-2" => FIGURE_2,
        "figure-3" => FIGURE_3,
        "square-smoke" => SQUARE_SMOKE,
        _ => return None,
    };
    // disk presets share one solver block
    Some(if t.contains("[solver]") {
        t.to_string()
    } else {
        format!("{t}{DISK_SOLVER}")
    })
}

const DISK_SOLVER: &str = r#"
[solver]
scheme = "fixed-point"
beta0 = 1000.0
beta_factor = 4.0
stages = 8
penalty_share = 2e-4
"#;

const FIGURE_1: &str = r#"
name = "figure-1"
seed = 1

[domain]
kind = "disk"
rings = 32

[partition]
k = [2, 2]

[functional]
outer = "sum"

[[functional.groups]]
inner = "sum"

[[functional.groups]]
inner = "sum"
"#;

const FIGURE_1_PRODUCT: &str = r#"
name = "figure-1-product"
seed = 1

[domain]
kind = "disk"
rings = 32

[partition]
k = [2, 2]

[functional]
outer = "product"

[[functional.groups]]
inner = "product"

[[functional.groups]]
inner = "product"

# eigenvalue weights of the product are about 1e4, so beta starts that much higher
[solver]
scheme = "fixed-point"
beta0 = 1.0e7
beta_factor = 4.0
stages = 8
penalty_share = 2e-4
"#;

const FIGURE_2: &str = r#"
name = "figure-2"
seed = 1

[domain]
kind = "disk"
rings = 24

[partition]
k = [2, 2]

[functional]
outer = "sum"

[[functional.groups]]
inner = "product"

[[functional.groups]]
inner = "power-sum"
p = 2.0
"#;

const FIGURE_3: &str = r#"
name = "figure-3"
seed = 1

[domain]
kind = "disk"
rings = 24

[partition]
k = [2, 1]

[functional]
outer = "pnorm"
p = 20.0

[[functional.groups]]
inner = "pnorm"
p = 20.0

[[functional.groups]]
inner = "pnorm"
p = 20.0
"#;

const SQUARE_SMOKE: &str = r#"
name = "square-smoke"
seed = 7

[domain]
kind = "square"
n = 16

[partition]
k = [1, 1]

[functional]
outer = "sum"

[[functional.groups]]
inner = "sum"

[[functional.groups]]
inner = "sum"

[solver]
beta0 = 100.0
stages = 4
"#;
