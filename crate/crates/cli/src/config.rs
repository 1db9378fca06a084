//! Sectioned TOML run configuration. Parsing never stops at the first bad
//! key: every problem is collected so a single run reports all of them.

use std::f64::consts::PI;
use std::fmt::Display;
use std::path::{Path, PathBuf};

use metamorph::experiments::{target_discs, template_discs, DeskSetup, GatedSetup};
use metamorph::harness::{EvolvingSequence, PhantomSpec};
use metamorph::{Geometry, GridSpec, KernelSpec, RegParams, SolveConfig, SolveMode};
use serde::de::DeserializeOwned;
use toml::{Table, Value};

use crate::Command;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Metamorphosis,
    Lddmm,
    Fbp,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IoPaths {
    pub phantom: Option<PathBuf>,
    pub template: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub gates: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    /// Paths as written in the config, and resolved.
    pub images: Vec<(String, PathBuf)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub sigmas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub taus: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub desk: DeskSetup,
    pub angle_range: (f64, f64),
    pub det_extent: Option<f64>,
    pub method: Method,
    pub fbp_cutoff: f64,
    pub phantom: PhantomSpec,
    pub gated: GatedSetup,
    pub sweep: Sweep,
    pub io: IoPaths,
}

impl RunConfig {
    pub fn grid(&self) -> GridSpec {
        self.desk.grid().expect("validated at load time")
    }

    pub fn geometry(&self) -> Geometry {
        let grid = self.grid();
        let (lo, hi) = self.angle_range;
        let extent = self.det_extent.unwrap_or_else(|| Geometry::covering_extent(&grid));
        Geometry::new(Geometry::uniform_angles(self.desk.n_angles, lo, hi), self.desk.n_det, extent)
            .expect("validated at load time")
    }
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("grid", &["half_width", "n"]),
    ("time", &["steps"]),
    ("kernel", &["sigma", "truncation"]),
    ("reg", &["gamma", "tau"]),
    ("geometry", &["n_angles", "n_det", "angle_min", "angle_max", "det_extent"]),
    ("noise", &["psnr_db", "seed"]),
    ("solver", &["mode", "max_iters", "step_v", "step_zeta", "rel_tol", "backtracking", "max_halvings", "fbp_cutoff"]),
    ("phantom", &["preset", "background", "shapes"]),
    ("gated", &["n_gates", "angles_per_gate", "angle_seed", "sequence"]),
    ("sweep", &["sigmas", "gammas", "taus"]),
    ("io", &["phantom", "template", "target", "data", "gates", "reference", "images"]),
];

/// The message of a core validation error without its category prefix.
fn detail(e: metamorph::Error) -> String {
    match e {
        metamorph::Error::Config(m) | metamorph::Error::InvalidInput(m) => m,
        other => other.to_string(),
    }
}

struct Fields<'a> {
    root: &'a Table,
    base: &'a Path,
    problems: Vec<String>,
}

impl<'a> Fields<'a> {
    fn raw(&self, section: &str, key: &str) -> Option<&'a Value> {
        self.root.get(section).and_then(Value::as_table).and_then(|t| t.get(key))
    }

    fn complain(&mut self, section: &str, key: &str, msg: impl Display) {
        self.problems.push(format!("{section}.{key}: {msg}"));
    }

    fn typed<T: DeserializeOwned>(&mut self, section: &str, key: &str, what: &str) -> Option<T> {
        let v = self.raw(section, key)?;
        match v.clone().try_into::<T>() {
            Ok(x) => Some(x),
            Err(e) => {
                let msg = e.message().replace('\n', " ");
                self.complain(section, key, format!("expected {what} ({})", msg.trim()));
                None
            }
        }
    }

    fn float(&mut self, section: &str, key: &str, default: f64) -> f64 {
        match self.raw(section, key) {
            None => default,
            Some(Value::Float(x)) => *x,
            Some(Value::Integer(i)) => *i as f64,
            Some(other) => {
                self.complain(section, key, format!("expected a number, got {}", other.type_str()));
                default
            }
        }
    }

    fn count(&mut self, section: &str, key: &str, default: usize) -> usize {
        match self.raw(section, key) {
            None => default,
            Some(Value::Integer(i)) if *i >= 0 => *i as usize,
            Some(other) => {
                self.complain(section, key, format!("expected a non-negative integer, got {other}"));
                default
            }
        }
    }

    fn seed(&mut self, section: &str, key: &str, default: u64) -> u64 {
        self.count(section, key, default as usize) as u64
    }

    fn floats(&mut self, section: &str, key: &str, default: &[f64]) -> Vec<f64> {
        match self.raw(section, key) {
            None => default.to_vec(),
            Some(Value::Array(items)) => {
                let mut out = Vec::new();
                for item in items {
                    match item {
                        Value::Float(x) => out.push(*x),
                        Value::Integer(i) => out.push(*i as f64),
                        other => self.complain(section, key, format!("expected numbers, found {other}")),
                    }
                }
                out
            }
            Some(other) => {
                self.complain(section, key, format!("expected an array of numbers, got {}", other.type_str()));
                default.to_vec()
            }
        }
    }

    fn path(&mut self, key: &str) -> Option<PathBuf> {
        let s: String = self.typed("io", key, "a path string")?;
        Some(self.base.join(s))
    }

    fn check(&mut self, section: &str, key: &str, ok: bool, msg: impl Display) {
        if !ok {
            self.complain(section, key, msg);
        }
    }
}

fn unknown_keys(root: &Table, problems: &mut Vec<String>) {
    for (name, value) in root {
        let Some((_, keys)) = SECTIONS.iter().find(|(s, _)| s == name) else {
            problems.push(format!("{name}: unknown section"));
            continue;
        };
        match value.as_table() {
            Some(t) => {
                for key in t.keys().filter(|k| !keys.contains(&k.as_str())) {
                    problems.push(format!("{name}.{key}: unknown key"));
                }
            }
            None => problems.push(format!("{name}: expected a section")),
        }
    }
}

fn preset(name: &str, l: f64) -> Option<PhantomSpec> {
    Some(match name {
        "target" => target_discs(),
        "template" => template_discs(0.0),
        "template_background" => template_discs(0.2),
        "shepp" => PhantomSpec::shepp_like(l),
        "triangles" => PhantomSpec::triangle_pair(l, 1.0),
        "empty" => PhantomSpec::default(),
        _ => return None,
    })
}

/// Parses `text`, resolving relative paths against `base`, and checks the
/// result against the needs of `cmd`. `seed` overrides `noise.seed`.
pub fn load(text: &str, base: &Path, cmd: Command, seed: Option<u64>) -> Result<RunConfig, Vec<String>> {
    let root: Table = text.parse().map_err(|e: toml::de::Error| vec![format!("config: {}", e.message())])?;
    let mut problems = Vec::new();
    unknown_keys(&root, &mut problems);
    let mut f = Fields { root: &root, base, problems };
    let d = DeskSetup::default();

    let half_width = f.float("grid", "half_width", d.half_width);
    let n = f.count("grid", "n", d.n);
    f.check("grid", "half_width", half_width.is_finite() && half_width > 0.0, "must be positive");
    f.check("grid", "n", n >= 2, "must be at least 2");
    let steps = f.count("time", "steps", d.steps);
    f.check("time", "steps", steps >= 1, "must be at least 1");

    let sigma = f.float("kernel", "sigma", d.kernel.sigma);
    let truncation = f.float("kernel", "truncation", d.kernel.truncation);
    let kernel = KernelSpec { sigma, truncation };
    if let Err(e) = kernel.validate() {
        f.problems.push(format!("kernel: {}", detail(e)));
    }
    let params = RegParams { gamma: f.float("reg", "gamma", d.params.gamma), tau: f.float("reg", "tau", d.params.tau) };
    if let Err(e) = params.validate() {
        f.problems.push(format!("reg: {}", detail(e)));
    }

    let n_angles = f.count("geometry", "n_angles", d.n_angles);
    let n_det = f.count("geometry", "n_det", d.n_det);
    let angle_range = (f.float("geometry", "angle_min", 0.0), f.float("geometry", "angle_max", PI));
    f.check("geometry", "n_angles", n_angles >= 1, "must be at least 1");
    f.check("geometry", "n_det", n_det >= 1, "must be at least 1");
    f.check(
        "geometry",
        "angle_max",
        angle_range.0.is_finite() && angle_range.1.is_finite() && angle_range.1 > angle_range.0,
        "must exceed angle_min",
    );
    let det_extent = f.raw("geometry", "det_extent").map(|_| f.float("geometry", "det_extent", 1.0));
    if let Some(e) = det_extent {
        f.check("geometry", "det_extent", e.is_finite() && e > 0.0, "must be positive");
    }

    let psnr_db = f.float("noise", "psnr_db", d.psnr_db);
    f.check("noise", "psnr_db", psnr_db.is_finite() || psnr_db == f64::INFINITY, "must be finite or inf");
    let noise_seed = match seed {
        Some(s) => s,
        None => f.seed("noise", "seed", d.noise_seed),
    };

    let mode: String = f.typed("solver", "mode", "a string").unwrap_or_else(|| "metamorphosis".into());
    let method = match mode.as_str() {
        "metamorphosis" => Method::Metamorphosis,
        "lddmm" => Method::Lddmm,
        "fbp" => Method::Fbp,
        other => {
            f.complain("solver", "mode", format!("unknown mode {other:?}, expected metamorphosis, lddmm or fbp"));
            Method::Metamorphosis
        }
    };
    let solve = SolveConfig {
        max_iters: f.count("solver", "max_iters", d.solve.max_iters),
        step_v: f.float("solver", "step_v", d.solve.step_v),
        step_zeta: f.float("solver", "step_zeta", d.solve.step_zeta),
        backtracking: f.typed("solver", "backtracking", "a boolean").unwrap_or(d.solve.backtracking),
        max_halvings: f.count("solver", "max_halvings", d.solve.max_halvings as usize) as u32,
        rel_tol: f.float("solver", "rel_tol", d.solve.rel_tol),
        mode: if method == Method::Lddmm { SolveMode::Lddmm } else { SolveMode::Metamorphosis },
    };
    if let Err(e) = solve.validate() {
        f.problems.push(format!("solver: {}", detail(e)));
    }
    let fbp_cutoff = f.float("solver", "fbp_cutoff", 1.0);
    f.check("solver", "fbp_cutoff", fbp_cutoff > 0.0 && fbp_cutoff <= 1.0, "must lie in (0, 1]");

    let desk = DeskSetup { n, half_width, steps, n_angles, n_det, psnr_db, noise_seed, kernel, params, solve };
    let grid = GridSpec::square(half_width, n).ok();

    let mut phantom = PhantomSpec {
        background: f.float("phantom", "background", 0.0),
        shapes: f.typed("phantom", "shapes", "a list of shapes").unwrap_or_default(),
    };
    if let Some(name) = f.typed::<String>("phantom", "preset", "a string") {
        match preset(&name, half_width) {
            Some(p) if phantom.shapes.is_empty() => phantom = PhantomSpec { background: p.background + phantom.background, ..p },
            Some(_) => f.complain("phantom", "preset", "cannot be combined with explicit shapes"),
            None => f.complain(
                "phantom",
                "preset",
                format!("unknown preset {name:?}, expected target, template, template_background, shepp, triangles or empty"),
            ),
        }
    }
    if let Some(g) = grid.as_ref().filter(|_| cmd == Command::Phantom) {
        if let Err(e) = phantom.validate(g) {
            f.problems.push(format!("phantom: {}", detail(e)));
        }
    }

    let dg = GatedSetup::default();
    let sequence: EvolvingSequence = f.typed("gated", "sequence", "an evolving sequence").unwrap_or(dg.sequence);
    let gated = GatedSetup {
        desk: desk.clone(),
        n_gates: f.count("gated", "n_gates", dg.n_gates),
        angles_per_gate: f.count("gated", "angles_per_gate", dg.angles_per_gate),
        angle_seed: f.seed("gated", "angle_seed", dg.angle_seed),
        sequence,
    };
    if cmd == Command::Gated {
        f.check("gated", "n_gates", gated.n_gates >= 1 && gated.n_gates <= steps, format!("must lie in 1..={steps}"));
        f.check("gated", "angles_per_gate", gated.angles_per_gate >= 1, "must be at least 1");
    }
    if let Some(g) = grid.as_ref().filter(|_| cmd == Command::Gated) {
        for t in [0.0, 1.0] {
            if let Err(e) = gated.sequence.frame(t).validate(g) {
                f.problems.push(format!("gated.sequence at t = {t}: {}", detail(e)));
            }
        }
    }

    let sweep = Sweep {
        sigmas: f.floats("sweep", "sigmas", &[0.3, 2.0, 10.0]),
        gammas: f.floats("sweep", "gammas", &[]),
        taus: f.floats("sweep", "taus", &[]),
    };
    for &s in &sweep.sigmas {
        if let Err(e) = KernelSpec::with_truncation(s, truncation) {
            f.problems.push(format!("sweep.sigmas: {}", detail(e)));
        }
    }
    for (key, list) in [("gammas", &sweep.gammas), ("taus", &sweep.taus)] {
        f.check("sweep", key, list.iter().all(|x| x.is_finite() && *x >= 0.0), "entries must be non-negative");
    }
    f.check("sweep", "taus", sweep.gammas.is_empty() == sweep.taus.is_empty(), "gammas and taus go together");

    let io = IoPaths {
        phantom: f.path("phantom"),
        template: f.path("template"),
        target: f.path("target"),
        data: f.path("data"),
        gates: f.path("gates"),
        reference: f.path("reference"),
        images: f
            .typed::<Vec<String>>("io", "images", "a list of path strings")
            .unwrap_or_default()
            .into_iter()
            .map(|s| (s.clone(), base.join(s)))
            .collect(),
    };
    let cfg = RunConfig { desk, angle_range, det_extent, method, fbp_cutoff, phantom, gated, sweep, io };
    requirements(&cfg, cmd, &mut f.problems);
    if f.problems.is_empty() {
        Ok(cfg)
    } else {
        Err(f.problems)
    }
}

fn requirements(cfg: &RunConfig, cmd: Command, problems: &mut Vec<String>) {
    let mut need = |key: &str, p: &Option<PathBuf>| match p {
        None => problems.push(format!("io.{key}: required by this command")),
        Some(p) if !p.exists() => problems.push(format!("io.{key}: {} does not exist", p.display())),
        Some(_) => {}
    };
    let io = &cfg.io;
    match cmd {
        Command::Phantom | Command::Sweep => {}
        Command::Project => need("phantom", &io.phantom),
        Command::Reconstruct => {
            if cfg.method != Method::Fbp {
                need("template", &io.template);
            }
            need("data", &io.data);
        }
        Command::Gated => {
            if io.gates.is_some() {
                need("gates", &io.gates);
            }
        }
        Command::Metrics => {
            need("reference", &io.reference);
            if io.images.is_empty() {
                problems.push("io.images: required by this command".into());
            }
            for (_, p) in &io.images {
                if !p.exists() {
                    problems.push(format!("io.images: {} does not exist", p.display()));
                }
            }
        }
    }
    let optional: &[(&str, &Option<PathBuf>)] = match cmd {
        Command::Reconstruct => &[("target", &io.target)],
        Command::Gated | Command::Sweep => &[("template", &io.template), ("target", &io.target)],
        _ => &[],
    };
    for (key, p) in optional {
        if let Some(p) = p {
            if !p.exists() {
                problems.push(format!("io.{key}: {} does not exist", p.display()));
            }
        }
    }
    if cmd == Command::Sweep && io.template.is_some() != io.target.is_some() {
        problems.push("io.target: sweep needs both template and target, or neither".into());
    }
}
