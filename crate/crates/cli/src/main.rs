//! `schottky-vir`: command-line front end for the Schottky/Virasoro library.

mod parse;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use num_complex::Complex64 as C;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use schottky_vir::differentials::{LimitPointConfig, Surface, TruncationPolicy};
use schottky_vir::modular::{
    form_law_residuals, frame_residuals, random_sp, verify_automorphy, SpElement,
};
use schottky_vir::schottky::validate;
use schottky_vir::variations::{identity_values, FdConfig, IdentityValues, Nabla};
use schottky_vir::virgraphs::{apply_dn_at, enumerate_graphs, graph_count, verify_recursion};
use schottky_vir::{circle_points, Error, SchottkyParams};

#[derive(Parser)]
#[command(name = "schottky-vir", version, about = "Schottky surfaces, differentials and Virasoro n-point functions")]
struct Cli {
    /// JSON config: Schottky parameters plus optional "policy" and "seed".
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    max_word_length: Option<usize>,
    #[arg(long, global = true)]
    tail_tol: Option<f64>,
    /// Relative finite-difference step for parameter derivatives.
    #[arg(long, global = true)]
    fd_step: Option<f64>,
    /// Accuracy order of the central stencil: 2, 4 (one Richardson step) or 6.
    #[arg(long, global = true)]
    fd_order: Option<usize>,
    /// Radius of the circle random points are drawn from.
    #[arg(long, global = true, default_value_t = 6.0)]
    radius: f64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check that the Schottky discs are disjoint.
    Validate,
    /// ω, s, ν and τ at a pair of points.
    Differentials {
        /// "x,y"; random when omitted.
        #[arg(long)]
        at: Option<String>,
    },
    /// Period matrix with a quadrature cross-check.
    PeriodMatrix {
        #[arg(long, default_value_t = 1e-12)]
        quadrature_tol: f64,
    },
    /// Rauch and variational identities.
    CheckIdentities {
        /// "x,y,y1,y2"; random when omitted.
        #[arg(long)]
        points: Option<String>,
        #[arg(long, default_value_t = 1)]
        samples: usize,
        #[arg(long, value_enum, default_value_t = FrameArg::Both)]
        frame: FrameArg,
    },
    /// Virasoro graph census with cycle/chain decompositions.
    Graphs {
        #[arg(long)]
        n: usize,
    },
    /// 𝒟_n applied to a moduli function.
    VirasoroNpoint {
        #[arg(long)]
        n: usize,
        /// Central charge; defaults to the lattice rank.
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        points: Option<String>,
        /// lattice:sqrt2 | lattice:e8 | lattice:file=<gram.json> | poly:<json>
        #[arg(long, default_value = "lattice:sqrt2")]
        theta: String,
    },
    /// Recursion from 𝒟_n to 𝒟_{n+1} (uses n + 1 points).
    RecursionCheck {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        c: Option<f64>,
        #[arg(long)]
        points: Option<String>,
        #[arg(long, default_value = "lattice:sqrt2")]
        theta: String,
    },
    /// Symplectic frame identities, form laws and automorphy over random elements.
    ModularCheck {
        #[arg(long)]
        g: Option<usize>,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long)]
        c: Option<f64>,
        #[arg(long, default_value_t = 6)]
        word_length: usize,
        #[arg(long, default_value = "lattice:sqrt2")]
        theta: String,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FrameArg {
    Bers,
    Moduli,
    Both,
}

enum Failure {
    Config(String),
    Numeric(Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(s) => write!(f, "{s}"),
            Failure::Numeric(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParams(_)
            | Error::DiscsIntersect { .. }
            | Error::OutsideSewingDomain { .. }
            | Error::DegenerateHandle(_)
            | Error::Lattice(_) => Failure::Config(e.to_string()),
            e => Failure::Numeric(e),
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

/// Effective run configuration after flags are applied.
struct RunConfig {
    params: Option<SchottkyParams>,
    policy: TruncationPolicy,
    seed: u64,
    radius: f64,
    fd: FdConfig,
}

impl RunConfig {
    fn load(cli: &Cli) -> Outcome<Self> {
        let mut policy = TruncationPolicy::default();
        let mut seed = 0;
        let mut params = None;
        if let Some(path) = &cli.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            let v: Value = serde_json::from_str(&text)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            if let Some(p) = v.get("policy") {
                policy = serde_json::from_value(p.clone())
                    .map_err(|e| Failure::Config(format!("policy: {e}")))?;
            }
            if let Some(s) = v.get("seed") {
                seed = s
                    .as_u64()
                    .ok_or_else(|| Failure::Config("seed must be a nonnegative integer".into()))?;
            }
            params = Some(SchottkyParams::from_json(&text)?);
        }
        if let Some(s) = cli.seed {
            seed = s;
        }
        if let Some(l) = cli.max_word_length {
            policy.max_word_length = l;
        }
        if let Some(t) = cli.tail_tol {
            policy.tail_tol = t;
        }
        let mut fd = FdConfig::default();
        if let Some(h) = cli.fd_step {
            if !(h > 0.0 && h < 1.0) {
                return Err(Failure::Config("--fd-step must lie in (0, 1)".into()));
            }
            fd.rel_step = h;
        }
        if let Some(o) = cli.fd_order {
            fd.order = o;
            fd.stencil().map_err(|e| Failure::Config(e.to_string()))?;
        }
        Ok(RunConfig {
            params,
            policy,
            seed,
            radius: cli.radius,
            fd,
        })
    }

    fn params(&self) -> Outcome<&SchottkyParams> {
        self.params
            .as_ref()
            .ok_or_else(|| Failure::Config("this command needs --config".into()))
    }

    fn surface(&self) -> Outcome<Surface> {
        Ok(Surface::new(self.params()?.clone(), self.policy)?)
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    fn hash(&self) -> Value {
        match &self.params {
            None => Value::Null,
            Some(p) => {
                let canon = json!({ "params": p, "policy": self.policy, "seed": self.seed });
                Value::String(hex::encode(Sha256::digest(canon.to_string().as_bytes())))
            }
        }
    }
}

/// One residual with its declared tolerance.
struct Check {
    name: String,
    value: f64,
    tol: f64,
    pass: bool,
}

impl Check {
    fn below(name: &str, value: f64, tol: f64) -> Self {
        Check {
            name: name.into(),
            value,
            tol,
            pass: value < tol,
        }
    }
}

struct Report {
    body: Map<String, Value>,
    checks: Vec<Check>,
    surface: Option<Value>,
}

impl Report {
    fn new() -> Self {
        Report {
            body: Map::new(),
            checks: Vec::new(),
            surface: None,
        }
    }

    fn put(&mut self, k: &str, v: Value) {
        self.body.insert(k.into(), v);
    }
}

fn mat(m: &DMatrix<C>) -> Value {
    json!((0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect::<Vec<_>>())
        .collect::<Vec<_>>())
}

fn imat(m: &DMatrix<i64>) -> Value {
    json!((0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect::<Vec<_>>())
        .collect::<Vec<_>>())
}

fn rel(a: C, b: C) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn truncation(surface: &Surface, x: C, y: C) -> Value {
    let p = surface.policy();
    let shells = surface.shell_profile(x, y).ok();
    let ratio = shells.as_ref().and_then(|s| {
        let first = s.iter().copied().find(|v| *v > 0.0)?;
        Some(s.last()? / first)
    });
    json!({
        "max_word_length": p.max_word_length,
        "tail_tol": p.tail_tol,
        "mode": p.mode,
        "group_elements": surface.group_len(),
        "last_shell_ratio": ratio,
    })
}

fn pick_points(given: &Option<String>, n: usize, cfg: &RunConfig, rng: &mut ChaCha8Rng) -> Outcome<Vec<C>> {
    match given {
        Some(s) => {
            let pts = parse::points(s).map_err(Failure::Config)?;
            if pts.len() != n {
                return Err(Failure::Config(format!("expected {n} points, got {}", pts.len())));
            }
            Ok(pts)
        }
        None => Ok(circle_points(rng, n, cfg.radius)),
    }
}

fn central_charge(c: Option<f64>, sup: &parse::Supplier) -> Outcome<C> {
    c.or(sup.rank().map(|r| r as f64))
        .map(|c| C::new(c, 0.0))
        .ok_or_else(|| Failure::Config("--c is required for polynomial suppliers".into()))
}

fn cmd_validate(cfg: &RunConfig, r: &mut Report) -> Outcome<()> {
    let rep = validate(cfg.params()?)?;
    r.put("valid", json!(rep.is_ok()));
    r.put("min_margin", json!(rep.min_margin));
    r.put("violations", json!(rep.violations));
    if !rep.is_ok() {
        let v = &rep.violations[0];
        return Err(Error::DiscsIntersect {
            a: v.a,
            b: v.b,
            margin: v.margin,
        }
        .into());
    }
    let s = cfg.surface()?;
    r.put("handles", json!(s.handle_data()));
    r.surface = Some(truncation(&s, C::new(cfg.radius, 0.0), C::new(0.0, cfg.radius)));
    Ok(())
}

fn cmd_differentials(cfg: &RunConfig, at: &Option<String>, r: &mut Report) -> Outcome<()> {
    let s = cfg.surface()?;
    let pts = pick_points(at, 2, cfg, &mut cfg.rng())?;
    let (x, y) = (pts[0], pts[1]);
    let w = s.omega(x, y)?.value;
    let wt = s.omega(y, x)?.value;
    r.put("x", json!(x));
    r.put("y", json!(y));
    r.put("omega", json!(w));
    r.put("s", json!(s.projective_connection(x)?.value));
    r.put("nu", json!(s.nu_all(x)?));
    r.put("tau", mat(&s.period_matrix()?.tau));
    r.checks.push(Check::below("omega_symmetry", rel(w, wt), 1e-9));
    r.surface = Some(truncation(&s, x, y));
    Ok(())
}

fn cmd_period_matrix(cfg: &RunConfig, qtol: f64, r: &mut Report) -> Outcome<()> {
    let s = cfg.surface()?;
    let pm = s.period_matrix()?;
    let quad = s.period_matrix_quadrature(qtol)?;
    let gap = pm
        .tau
        .iter()
        .zip(quad.iter())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    let eig = pm.im_omega_min_eig();
    r.put("tau", mat(&pm.tau));
    r.put("omega", mat(&pm.omega()));
    r.put("im_omega_min_eig", json!(eig));
    r.put(
        "index_set",
        json!(pm.index_set_k.iter().map(|&(a, b)| [a + 1, b + 1]).collect::<Vec<_>>()),
    );
    r.checks.push(Check::below("asymmetry", pm.asymmetry, 1e-9));
    r.checks.push(Check::below("quadrature_gap", gap, 1e-8));
    r.checks.push(Check {
        name: "im_omega_deficit".into(),
        value: (-eig).max(0.0),
        tol: 0.0,
        pass: eig > 0.0,
    });
    r.surface = Some(truncation(&s, C::new(cfg.radius, 0.0), C::new(0.0, cfg.radius)));
    Ok(())
}

fn operator_gap(a: &IdentityValues, b: &IdentityValues) -> f64 {
    let mut pairs: Vec<(C, C)> = Vec::new();
    for (u, v) in a.rauch.iter().zip(&b.rauch).chain(a.nabla_nu.iter().zip(&b.nabla_nu)) {
        pairs.push((u.0, v.0));
    }
    pairs.push((a.nabla_omega.0, b.nabla_omega.0));
    pairs.push((a.nabla_s.0, b.nabla_s.0));
    pairs.iter().map(|&(u, v)| rel(u, v)).fold(0.0, f64::max)
}

fn cmd_identities(
    cfg: &RunConfig,
    points: &Option<String>,
    samples: usize,
    frame: FrameArg,
    r: &mut Report,
) -> Outcome<()> {
    let s = cfg.surface()?;
    let fd = cfg.fd;
    let mut rng = cfg.rng();
    let samples = if points.is_some() { 1 } else { samples.max(1) };
    let lp = LimitPointConfig::default_for(&s, 2);
    let mut worst = [0.0f64; 5];
    let mut out = Vec::new();
    let mut first = None;
    for _ in 0..samples {
        let p = pick_points(points, 4, cfg, &mut rng)?;
        first.get_or_insert((p[0], p[1]));
        let mut entry = json!({ "x": p[0], "y": p[1], "y1": p[2], "y2": p[3] });
        let mut vals = Vec::new();
        for (name, on) in [
            ("bers", frame != FrameArg::Moduli),
            ("moduli", frame != FrameArg::Bers),
        ] {
            if !on {
                continue;
            }
            let nab = if name == "bers" {
                Nabla::bers(&s, &lp, p[0])?
            } else {
                Nabla::moduli(&s, p[0], &fd)?
            };
            let v = identity_values(&s, &nab, p[1], p[2], p[3], &fd)?;
            let res = v.residuals();
            for (k, x) in [res.rauch, res.nabla_nu, res.nabla_omega, res.nabla_s].into_iter().enumerate() {
                worst[k] = worst[k].max(x);
            }
            entry[name] = json!(res);
            vals.push(v);
        }
        if vals.len() == 2 {
            let gap = operator_gap(&vals[0], &vals[1]);
            worst[4] = worst[4].max(gap);
            entry["frame_agreement"] = json!(gap);
        }
        out.push(entry);
    }
    r.put("samples", json!(out));
    let names = ["rauch", "nabla_nu", "nabla_omega", "nabla_s"];
    for (k, n) in names.iter().enumerate() {
        r.checks.push(Check::below(n, worst[k], 1e-6));
    }
    if frame == FrameArg::Both {
        r.checks.push(Check::below("frame_agreement", worst[4], 1e-6));
    }
    let (x, y) = first.unwrap();
    r.surface = Some(truncation(&s, x, y));
    Ok(())
}

fn cmd_graphs(n: usize, r: &mut Report) -> Outcome<()> {
    let graphs = enumerate_graphs(n).map_err(|e| Failure::Config(e.to_string()))?;
    let one = |v: &[usize]| v.iter().map(|i| i + 1).collect::<Vec<_>>();
    let list: Vec<Value> = graphs
        .iter()
        .map(|g| {
            json!({
                "mapping": g.mapping().iter().map(|m| m.map(|j| j + 1)).collect::<Vec<_>>(),
                "cycles": g.cycles().iter().map(|c| one(c)).collect::<Vec<_>>(),
                "chains": g.chains().iter().map(|c| one(c)).collect::<Vec<_>>(),
            })
        })
        .collect();
    r.put("n", json!(n));
    r.put("count", json!(graphs.len()));
    r.put("graphs", json!(list));
    let expected = graph_count(n);
    r.checks.push(Check {
        name: "census_mismatch".into(),
        value: (graphs.len() as f64 - expected as f64).abs(),
        tol: 0.0,
        pass: graphs.len() as u64 == expected,
    });
    Ok(())
}

fn cmd_npoint(
    cfg: &RunConfig,
    n: usize,
    c: Option<f64>,
    points: &Option<String>,
    theta: &str,
    r: &mut Report,
) -> Outcome<()> {
    let s = cfg.surface()?;
    let sup = parse::supplier(theta, s.genus()).map_err(Failure::Config)?;
    let c = central_charge(c, &sup)?;
    let pts = pick_points(points, n, cfg, &mut cfg.rng())?;
    let dn = apply_dn_at(&s, &pts, c, sup.get())?;
    r.put("points", json!(pts));
    r.put("c", json!(c.re));
    r.put("supplier", json!(sup.describe()));
    r.put("G_n", json!(dn.total));
    r.put("per_graph", json!(dn.per_graph));
    r.put("graph_count", json!(dn.per_graph.len()));
    if n >= 2 {
        let rev: Vec<C> = pts.iter().rev().copied().collect();
        let back = apply_dn_at(&s, &rev, c, sup.get())?.total;
        r.checks.push(Check::below("permutation_symmetry", rel(back, dn.total), 1e-7));
    }
    let (x, y) = match pts.len() {
        0 => (C::new(cfg.radius, 0.0), C::new(0.0, cfg.radius)),
        1 => (pts[0], -pts[0]),
        _ => (pts[0], pts[1]),
    };
    r.surface = Some(truncation(&s, x, y));
    Ok(())
}

fn cmd_recursion(
    cfg: &RunConfig,
    n: usize,
    c: Option<f64>,
    points: &Option<String>,
    theta: &str,
    r: &mut Report,
) -> Outcome<()> {
    let s = cfg.surface()?;
    let sup = parse::supplier(theta, s.genus()).map_err(Failure::Config)?;
    let c = central_charge(c, &sup)?;
    let pts = pick_points(points, n + 1, cfg, &mut cfg.rng())?;
    let rep = verify_recursion(&s, c, sup.get(), &pts, &cfg.fd)?;
    r.put("points", json!(pts));
    r.put("n", json!(n));
    r.put("c", json!(c.re));
    r.put("supplier", json!(sup.describe()));
    r.put("lhs", json!(rep.lhs));
    r.put("rhs", json!(rep.rhs));
    r.checks.push(Check::below("recursion", rep.residual, 1e-4));
    let y = if pts.len() > 1 { pts[1] } else { -pts[0] };
    r.surface = Some(truncation(&s, pts[0], y));
    Ok(())
}

fn sp_json(sp: &SpElement) -> Value {
    json!({ "A": imat(&sp.a), "B": imat(&sp.b), "C": imat(&sp.c), "D": imat(&sp.d) })
}

#[allow(clippy::too_many_arguments)]
fn cmd_modular(
    cfg: &RunConfig,
    g: Option<usize>,
    samples: usize,
    n: usize,
    c: Option<f64>,
    word_length: usize,
    theta: &str,
    r: &mut Report,
) -> Outcome<()> {
    let s = cfg.surface()?;
    if let Some(g) = g {
        if g != s.genus() {
            return Err(Failure::Config(format!("--g {g} does not match config genus {}", s.genus())));
        }
    }
    if n > 2 {
        return Err(Failure::Config("automorphy check supports n <= 2".into()));
    }
    let sup = parse::supplier(theta, s.genus()).map_err(Failure::Config)?;
    let c = central_charge(c, &sup)?;
    let omega = s.period_matrix()?.omega();
    let mut rng = cfg.rng();
    let names = [
        ("n_formula", 1e-10),
        ("nc_symmetry", 1e-10),
        ("omega_tilde_symmetry", 1e-10),
        ("nm_identity", 1e-10),
        ("logdet_derivative", 1e-7),
        ("omega_law", 1e-7),
        ("s_law", 1e-7),
        ("automorphy", 1e-4),
    ];
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    let mut min_eig = f64::INFINITY;
    let mut out = Vec::new();
    for _ in 0..samples {
        let sp = random_sp(s.genus(), word_length, &mut rng);
        let pts = circle_points(&mut rng, 2, cfg.radius);
        let fr = frame_residuals(&omega, &sp)?;
        let law = form_law_residuals(&s, &sp, pts[0], pts[1])?;
        let auto = verify_automorphy(&s, &sp, c, sup.get(), &pts[..n])?;
        min_eig = min_eig.min(fr.im_omega_tilde_min_eig);
        let vals = [
            fr.n_formula,
            fr.nc_symmetry,
            fr.omega_tilde_symmetry,
            fr.nm_identity,
            fr.logdet_derivative,
            law.omega_law,
            law.s_law,
            auto.residual,
        ];
        let mut res = Map::new();
        for (k, v) in vals.iter().enumerate() {
            cols[k].push(*v);
            res.insert(names[k].0.into(), json!(v));
        }
        out.push(json!({
            "sp": sp_json(&sp),
            "points": &pts[..n.max(2)],
            "det_m": auto.det_m,
            "im_omega_tilde_min_eig": fr.im_omega_tilde_min_eig,
            "residuals": res,
        }));
    }
    let mut summary = Map::new();
    for (k, (name, tol)) in names.iter().enumerate() {
        let mx = cols[k].iter().copied().fold(0.0, f64::max);
        summary.insert((*name).into(), json!({ "max": mx, "median": median(&cols[k]) }));
        r.checks.push(Check::below(name, mx, *tol));
    }
    r.checks.push(Check {
        name: "im_omega_tilde_deficit".into(),
        value: (-min_eig).max(0.0),
        tol: 0.0,
        pass: min_eig > 0.0,
    });
    r.put("genus", json!(s.genus()));
    r.put("n", json!(n));
    r.put("c", json!(c.re));
    r.put("supplier", json!(sup.describe()));
    r.put("word_length", json!(word_length));
    r.put("per_sample", json!(out));
    r.put("summary", json!(summary));
    r.surface = Some(truncation(&s, C::new(cfg.radius, 0.0), C::new(0.0, cfg.radius)));
    Ok(())
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Validate => "validate",
        Command::Differentials { .. } => "differentials",
        Command::PeriodMatrix { .. } => "period-matrix",
        Command::CheckIdentities { .. } => "check-identities",
        Command::Graphs { .. } => "graphs",
        Command::VirasoroNpoint { .. } => "virasoro-npoint",
        Command::RecursionCheck { .. } => "recursion-check",
        Command::ModularCheck { .. } => "modular-check",
    }
}

fn dispatch(cli: &Cli, cfg: &RunConfig, r: &mut Report) -> Outcome<()> {
    match &cli.command {
        Command::Validate => cmd_validate(cfg, r),
        Command::Differentials { at } => cmd_differentials(cfg, at, r),
        Command::PeriodMatrix { quadrature_tol } => cmd_period_matrix(cfg, *quadrature_tol, r),
        Command::CheckIdentities {
            points,
            samples,
            frame,
        } => cmd_identities(cfg, points, *samples, *frame, r),
        Command::Graphs { n } => cmd_graphs(*n, r),
        Command::VirasoroNpoint { n, c, points, theta } => cmd_npoint(cfg, *n, *c, points, theta, r),
        Command::RecursionCheck { n, c, points, theta } => cmd_recursion(cfg, *n, *c, points, theta, r),
        Command::ModularCheck {
            g,
            samples,
            n,
            c,
            word_length,
            theta,
        } => cmd_modular(cfg, *g, *samples, *n, *c, *word_length, theta, r),
    }
}

fn emit(cli: &Cli, v: &Value) -> Result<(), String> {
    let text = serde_json::to_string_pretty(v).map_err(|e| e.to_string())? + "\n";
    match &cli.output {
        Some(p) => std::fs::write(p, text).map_err(|e| format!("{}: {e}", p.display())),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| e.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let name = command_name(&cli.command);
    let cfg = match RunConfig::load(&cli) {
        Ok(c) => c,
        Err(f) => {
            eprintln!("error: {f}");
            let _ = emit(&cli, &json!({ "command": name, "error": f.to_string(), "exit_code": f.code() }));
            return ExitCode::from(f.code());
        }
    };
    let mut r = Report::new();
    let result = dispatch(&cli, &cfg, &mut r);

    let mut out = r.body;
    out.insert("command".into(), json!(name));
    out.insert("config_hash".into(), cfg.hash());
    if cfg.params.is_some() {
        out.insert("seed".into(), json!(cfg.seed));
    }
    out.insert("truncation".into(), r.surface.unwrap_or(Value::Null));
    let mut residuals = Map::new();
    let mut tolerances = Map::new();
    let mut failed = Vec::new();
    for ch in &r.checks {
        residuals.insert(ch.name.clone(), json!(ch.value));
        tolerances.insert(ch.name.clone(), json!(ch.tol));
        if !ch.pass {
            failed.push(ch.name.clone());
        }
    }
    out.insert("residuals".into(), Value::Object(residuals));
    out.insert("tolerances".into(), Value::Object(tolerances));
    let code = match &result {
        Err(f) => {
            eprintln!("error: {f}");
            out.insert("error".into(), json!(f.to_string()));
            f.code()
        }
        Ok(()) if !failed.is_empty() => {
            eprintln!("residuals above tolerance: {}", failed.join(", "));
            1
        }
        Ok(()) => 0,
    };
    out.insert("failed".into(), json!(failed));
    out.insert("ok".into(), json!(code == 0));
    out.insert("exit_code".into(), json!(code));
    if let Err(e) = emit(&cli, &Value::Object(out)) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    ExitCode::from(code)
}
