use std::path::{Path, PathBuf};
use std::sync::Arc;

use degenlap::catalog::{self, Fixture, VerifyBudgets, FIXTURE_NAMES};
use degenlap::diagnostics::{continuity_map, ContinuityClass, ContinuitySettings, HolderOutcome};
use degenlap::distortion::{distortion_report, shell_points, MappingSpec, DEFAULT_FD_STEP};
use degenlap::energy::{solve_dirichlet, GridDomain, GridFunction, MatrixField, SolverConfig};
use degenlap::io::{format_float, grid_header, read_csv, write_csv, write_grid_csv, write_grid_pgm, write_json, write_pgm, write_text_csv};
use degenlap::weights::{a1_constant, ap_constant, balance_check, balance_exponent, rh_constant, tau_exponent, SamplingPlan, SingularSet, Weight};
use degenlap::{BoxDomain, MetricSpace, SCHEMA};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::CliError;

/// Largest grid resolution per axis for three-dimensional solves.
pub const MAX_CELLS_3D: usize = 48;

/// Relative slack when matching solution-file coordinates to the grid.
const COORD_TOLERANCE: f64 = 1e-9;

fn out_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out.join(name)
}

pub fn prepare_output(cfg: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", cfg.out.display())))?;
    write_json(&out_path(cfg, "resolved-config.json"), cfg)?;
    Ok(())
}

/// The weight, coefficients and region a run works on.
struct Problem {
    fixture: Option<Fixture>,
    space: MetricSpace,
    weight: Weight,
    matrix: MatrixField,
    domain: BoxDomain,
    p: f64,
}

impl Problem {
    fn from_config(cfg: &RunConfig) -> Result<Problem, CliError> {
        if let Some(name) = &cfg.fixture {
            let fx = catalog::fixture(name)?;
            if cfg.dim.is_some_and(|d| d != fx.dim()) {
                return Err(CliError::Config(format!("fixture `{name}` lives in dimension {}", fx.dim())));
            }
            let domain = match (cfg.lo, cfg.hi) {
                (None, None) => fx.domain.clone(),
                (lo, hi) => BoxDomain::cube(fx.dim(), lo.unwrap_or(fx.domain.lo[0]), hi.unwrap_or(fx.domain.hi[0]))?,
            };
            return Ok(Problem {
                space: fx.space.clone(),
                weight: fx.weight.clone(),
                matrix: fx.matrix.clone(),
                domain,
                p: cfg.p.unwrap_or(fx.claims.p),
                fixture: Some(fx),
            });
        }
        let (space, dim) = match cfg.geometry.as_str() {
            "heisenberg" => {
                if cfg.dim.is_some_and(|d| d != 3) {
                    return Err(CliError::Config("the Heisenberg group has dimension 3".into()));
                }
                (MetricSpace::heisenberg(), 3)
            }
            _ => {
                let d = cfg.dim.unwrap_or(2);
                (MetricSpace::euclidean(d)?, d)
            }
        };
        let weight = Weight::parse(cfg.weight.as_deref().unwrap_or("const:1"), dim)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let matrix = match weight.constant_value() {
            Some(c) if c == 1.0 => MatrixField::identity(space.horizontal_dim()),
            _ => MatrixField::scalar(space.horizontal_dim(), weight.clone()),
        };
        Ok(Problem {
            fixture: None,
            space,
            weight,
            matrix,
            domain: BoxDomain::cube(dim, cfg.lo.unwrap_or(-1.0), cfg.hi.unwrap_or(1.0))?,
            p: cfg.p.unwrap_or(2.0),
        })
    }

    fn dim(&self) -> usize {
        self.domain.dim()
    }

    fn plan(&self, cfg: &RunConfig) -> SamplingPlan {
        SamplingPlan::new(self.domain.clone()).with_balls(cfg.balls).with_budget(cfg.budget).with_seed(cfg.seed)
    }

    /// Grid on the problem's box; three-dimensional grids are capped at
    /// [`MAX_CELLS_3D`] cells per axis.
    fn grid(&self, cfg: &RunConfig) -> Result<(Arc<GridDomain>, GridInfo), CliError> {
        let n = self.dim();
        let (lo, hi) = (self.domain.lo[0], self.domain.hi[0]);
        if self.domain.lo.iter().chain(&self.domain.hi).any(|v| *v != lo && *v != hi) {
            return Err(CliError::Config("grids need a cube domain".into()));
        }
        let cells = if n == 3 { cfg.cells.min(MAX_CELLS_3D) } else { cfg.cells };
        let d = GridDomain::cube(n, lo, hi, cells, cfg.mask.clone())?;
        let info = GridInfo {
            dim: n,
            lo,
            hi,
            cells,
            h: d.h(),
            nodes: d.len(),
            downsampled_from: (cells != cfg.cells).then_some(cfg.cells),
        };
        Ok((Arc::new(d), info))
    }
}

#[derive(Serialize)]
struct GridInfo {
    dim: usize,
    lo: f64,
    hi: f64,
    cells: usize,
    h: f64,
    nodes: usize,
    /// Requested resolution when the memory cap lowered it.
    downsampled_from: Option<usize>,
}

fn flags_of(label: &str, unbounded: bool, flags: &mut Vec<String>) {
    if unbounded {
        flags.push(format!("unbounded-suspected:{label}"));
    }
}

pub fn run_weights(cfg: &RunConfig) -> Result<(), CliError> {
    let pb = Problem::from_config(cfg)?;
    let plan = pb.plan(cfg);
    let mut report = ap_constant(&pb.weight, pb.p, &pb.space, &plan)?;
    if let Some(t) = cfg.t {
        report.merge(rh_constant(&pb.weight, t, &pb.space, &plan)?);
    }
    let a1_claimed = pb
        .fixture
        .as_ref()
        .is_some_and(|f| f.claims.classes.contains(&catalog::ClassClaim::A1));
    if cfg.a1.unwrap_or(a1_claimed) {
        report.merge(a1_constant(&pb.weight, &pb.space, &plan)?);
    }

    let n = pb.space.dim();
    let q_dim = pb.space.homogeneous_dim();
    let tau = tau_exponent(pb.p, n, q_dim).map_err(|e| e.to_string());
    let balance = if cfg.balance {
        let q = match cfg.q {
            Some(q) => Ok(q),
            None => balance_exponent(pb.p, n, q_dim, 0.0).map(|b| b.q).map_err(|e| e.to_string()),
        };
        Some(match q {
            Ok(q) => {
                let w = pb.weight.powf(1.0 - pb.p);
                match balance_check(&w, &pb.weight, pb.p, q, &pb.space, &plan) {
                    Ok(r) => serde_json::to_value(r).map_err(degenlap::Error::from)?,
                    Err(e @ degenlap::Error::PreconditionViolation(_)) => json!({"q": q, "error": e.to_string()}),
                    Err(e) => return Err(e.into()),
                }
            }
            Err(e) => json!({"error": e}),
        })
    } else {
        None
    };

    let mut flags = Vec::new();
    let e = &report.estimates;
    for (label, est) in [("A_p", &e.ap), ("A_1", &e.a1), ("RH_t", &e.rh), ("doubling", &e.doubling)] {
        flags_of(label, est.as_ref().is_some_and(|c| c.unbounded_suspected), &mut flags);
    }
    if let Some(b) = &balance {
        flags_of("balance", b.get("unbounded_suspected").and_then(Value::as_bool).unwrap_or(false), &mut flags);
    }

    let doc = json!({
        "schema": SCHEMA,
        "fixture": cfg.fixture,
        "report": report,
        "tau": match &tau { Ok(t) => json!(t), Err(e) => json!({"error": e}) },
        "balance": balance,
        "flags": flags,
    });
    write_json(&out_path(cfg, "weights.json"), &doc)?;

    let mut header = vec!["class".to_string(), "radius".into(), "ratio".into()];
    header.extend((0..n).map(|a| format!("c{a}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_text_csv(
        &out_path(cfg, "worst-cases.csv"),
        &header,
        report.worst_cases.iter().map(|w| {
            let mut row = vec![w.class.clone(), format_float(w.radius), format_float(w.ratio)];
            row.extend(w.center.iter().map(|v| format_float(*v)));
            row
        }),
    )?;
    Ok(())
}

/// Boundary data by name. `None` asks for the problem's default.
fn boundary_function(pb: &Problem, name: Option<&str>) -> Result<(String, Box<dyn Fn(&[f64]) -> f64>), CliError> {
    let fx_solution = pb.fixture.as_ref().and_then(|f| f.solution.as_ref());
    let name = match name {
        Some(n) => n.to_string(),
        None if fx_solution.is_some() => "fixture".into(),
        None if pb.dim() == 2 => "x2-y2".into(),
        None => "odd-sqrt".into(),
    };
    let f: Box<dyn Fn(&[f64]) -> f64> = match name.as_str() {
        "fixture" => {
            let s = fx_solution
                .ok_or_else(|| CliError::Config("boundary `fixture` needs a fixture with a closed-form solution".into()))?
                .value
                .clone();
            Box::new(move |x| {
                let v = s(x);
                if v.is_finite() { v } else { 0.0 }
            })
        }
        "x2-y2" => Box::new(|x| x[0] * x[0] - x[1] * x[1]),
        "affine" => Box::new(|x| 1.0 + x.iter().enumerate().map(|(i, v)| v / (i + 2) as f64).sum::<f64>()),
        "radial-sqrt" => Box::new(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt().sqrt()),
        "x" => Box::new(|x| x[0]),
        "odd-sqrt" => Box::new(|x| {
            let z = *x.last().expect("non-empty point");
            z.signum() * z.abs().sqrt()
        }),
        other => {
            return Err(CliError::Config(format!(
                "unknown boundary `{other}` (fixture, x2-y2, affine, radial-sqrt, x, odd-sqrt)"
            )))
        }
    };
    if name == "x2-y2" && pb.dim() < 2 {
        return Err(CliError::Config("boundary `x2-y2` needs two dimensions".into()));
    }
    Ok((name, f))
}

pub fn run_solve(cfg: &RunConfig) -> Result<(), CliError> {
    let pb = Problem::from_config(cfg)?;
    let (d, info) = pb.grid(cfg)?;
    let (boundary, f) = boundary_function(&pb, cfg.boundary.as_deref())?;
    let psi = GridFunction::from_fn(d.clone(), f);
    let solver = SolverConfig {
        tolerance: cfg.tolerance,
        max_iterations: cfg.max_iterations,
        seed: cfg.seed,
        ..SolverConfig::new(pb.p)
    };
    let (u, report) = solve_dirichlet(&pb.space, &pb.matrix, &psi, &solver)?;
    write_grid_csv(&out_path(cfg, "solution.csv"), &u)?;
    let doc = json!({
        "schema": SCHEMA,
        "fixture": cfg.fixture,
        "weight": pb.weight.name(),
        "matrix": pb.matrix.name(),
        "boundary": boundary,
        "grid": info,
        "max_error_vs_boundary_function": u.max_interior_diff(&psi),
        "report": report,
    });
    write_json(&out_path(cfg, "solve-report.json"), &doc)?;
    if cfg.pgm && info.dim >= 2 {
        write_grid_pgm(&out_path(cfg, "heatmap.pgm"), &u)?;
    }
    Ok(())
}

fn load_solution(path: &Path, d: &Arc<GridDomain>) -> Result<GridFunction, CliError> {
    let (header, rows) = read_csv(path)?;
    let n = d.dim();
    let mismatch = |m: String| CliError::Config(format!("grid/solution mismatch in {}: {m}", path.display()));
    if header != grid_header(n) {
        return Err(mismatch(format!("header {header:?}, expected {:?}", grid_header(n))));
    }
    if rows.len() != d.len() {
        return Err(mismatch(format!("{} rows for a grid of {} nodes", rows.len(), d.len())));
    }
    let tol = COORD_TOLERANCE * (1.0 + d.hi().iter().chain(d.lo()).fold(0.0f64, |m, v| m.max(v.abs())));
    let mut values = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let x = d.coords(i);
        if x.iter().zip(row).any(|(a, b)| (a - b).abs() > tol) {
            return Err(mismatch(format!("row {i} is at {:?}, grid node at {x:?}", &row[..n])));
        }
        values.push(row[n]);
    }
    Ok(GridFunction::from_values(d.clone(), values)?)
}

fn regular_probes(domain: &BoxDomain, m: usize) -> Vec<Vec<f64>> {
    let n = domain.dim();
    let total = m.pow(n as u32);
    (0..total)
        .map(|mut k| {
            (0..n)
                .map(|a| {
                    let i = k % m;
                    k /= m;
                    let (lo, hi) = (domain.lo[a], domain.hi[a]);
                    lo + (i as f64 + 0.5) * (hi - lo) / m as f64
                })
                .collect()
        })
        .collect()
}

pub fn run_diagnose(cfg: &RunConfig) -> Result<(), CliError> {
    let pb = Problem::from_config(cfg)?;
    let (d, info) = pb.grid(cfg)?;
    let (u, source) = match &cfg.solution {
        Some(path) => (load_solution(path, &d)?, path.display().to_string()),
        None => {
            let u = pb
                .fixture
                .as_ref()
                .and_then(|f| f.sample_solution(d.clone()))
                .ok_or_else(|| CliError::Config("diagnose needs --solution or a fixture with a closed-form solution".into()))?;
            (u, "fixture".to_string())
        }
    };
    let probe_grid = match (&cfg.probes, &pb.fixture, cfg.probe_grid) {
        (_, _, Some(m)) => Some(m),
        (None, None, None) => Some(9),
        _ => None,
    };
    let probes = match (&cfg.probes, probe_grid) {
        (Some(p), _) => p.clone(),
        (None, Some(m)) => regular_probes(&pb.domain, m),
        (None, None) => {
            let (on, off) = pb.fixture.as_ref().expect("fixture").probes();
            on.into_iter().chain(off).collect()
        }
    };
    if let Some(bad) = probes.iter().find(|x| x.len() != pb.dim()) {
        return Err(CliError::Config(format!("probe {bad:?} has the wrong dimension")));
    }
    let settings = ContinuitySettings {
        harnack_constant: cfg.harnack_constant,
        seed: cfg.seed,
        ..ContinuitySettings::new(cfg.r0)
    };
    let report = continuity_map(&u, &pb.weight, &pb.space, &probes, &settings)?;
    let doc = json!({
        "schema": SCHEMA,
        "fixture": cfg.fixture,
        "solution": source,
        "grid": info,
        "report": report,
    });
    write_json(&out_path(cfg, "diagnostics.json"), &doc)?;

    let mut header: Vec<String> = (0..pb.dim()).map(|a| format!("x{a}")).collect();
    header.extend(["mk", "gamma", "alpha", "jump_ratio", "decays", "discontinuous_suspected"].map(String::from));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(
        &out_path(cfg, "continuity.csv"),
        &header,
        report.probes.iter().map(|r| {
            let jump = match r.holder {
                HolderOutcome::Unresolved { jump_ratio } | HolderOutcome::NoDecay { jump_ratio, .. } => jump_ratio,
                _ => f64::NAN,
            };
            let mut row = r.point.clone();
            row.extend([
                r.mk,
                r.gamma,
                r.holder.alpha().unwrap_or(f64::NAN),
                jump,
                f64::from(u8::from(r.holder.decays())),
                f64::from(u8::from(r.class == ContinuityClass::DiscontinuousSuspected)),
            ]);
            row
        }),
    )?;
    if cfg.pgm && pb.dim() == 2 && cfg.probes.is_none() {
        if let Some(m) = probe_grid {
            // White: predicted continuous and decaying; black: suspected
            // discontinuous without decay; grey: the two disagree.
            let mut gray = vec![0u8; m * m];
            for (k, r) in report.probes.iter().enumerate() {
                let (col, row) = (k % m, k / m);
                let suspected = r.class == ContinuityClass::DiscontinuousSuspected;
                gray[(m - 1 - row) * m + col] = match (suspected, r.holder.decays()) {
                    (false, true) => 255,
                    (true, false) => 0,
                    _ => 128,
                };
            }
            write_pgm(&out_path(cfg, "continuity.pgm"), m, m, &gray)?;
        }
    }
    Ok(())
}

fn parse_numbers(spec: &str, s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| CliError::Config(format!("map `{spec}`: bad number `{v}`"))))
        .collect()
}

fn mapping(cfg: &RunConfig) -> Result<MappingSpec, CliError> {
    let n = cfg.dim.unwrap_or(3);
    let spec = match (&cfg.map, &cfg.fixture) {
        (Some(m), _) => m.clone(),
        (None, Some(f)) => {
            return catalog::fixture(f)?
                .map
                .ok_or_else(|| CliError::Config(format!("fixture `{f}` has no mapping")));
        }
        (None, None) => "radial-exponential".into(),
    };
    let (kind, arg) = spec.split_once(':').unwrap_or((spec.as_str(), ""));
    Ok(match kind {
        "radial-exponential" => MappingSpec::radial_exponential(n, cfg.epsilon)?,
        "identity" => MappingSpec::identity(n),
        "diag" => {
            let d = parse_numbers(&spec, arg)?;
            MappingSpec::linear(nalgebra_diag(&d))?
        }
        "linear" => {
            let v = parse_numbers(&spec, arg)?;
            let m = (v.len() as f64).sqrt().round() as usize;
            if m * m != v.len() || m == 0 {
                return Err(CliError::Config(format!("map `{spec}` needs a square number of entries")));
            }
            MappingSpec::linear(degenlap::distortion::DMatrix::from_row_slice(m, m, &v))?
        }
        _ => {
            return Err(CliError::Config(format!(
                "unknown map `{spec}` (radial-exponential, identity, diag:..., linear:...)"
            )))
        }
    })
}

fn nalgebra_diag(d: &[f64]) -> degenlap::distortion::DMatrix<f64> {
    let n = d.len();
    degenlap::distortion::DMatrix::from_fn(n, n, |i, j| if i == j { d[i] } else { 0.0 })
}

pub fn run_distortion(cfg: &RunConfig) -> Result<(), CliError> {
    let map = mapping(cfg)?;
    if cfg.dim.is_some_and(|d| d != map.dim()) {
        return Err(CliError::Config(format!("map `{}` lives in dimension {}", map.name(), map.dim())));
    }
    let n = map.dim();
    let points = shell_points(n, 0.01, 0.5, cfg.points, cfg.seed);
    let mut report = distortion_report(&map, &points, cfg.directions, DEFAULT_FD_STEP, cfg.seed)?;
    if cfg.residual_cells > 0 && matches!(map.singular_set(), Some(SingularSet::Point { .. })) {
        report.residuals = Some(catalog::radial_map_residual(&map, cfg.residual_cells)?);
    }
    // Closed forms K_O = 1/(ε|x|^ε) and K_I = K_O^{n-1} for the radial map.
    let formula_error = map.params().get("epsilon").map(|&eps| {
        report
            .points
            .iter()
            .map(|p| {
                let r = p.point.iter().map(|v| v * v).sum::<f64>().sqrt();
                let ko = 1.0 / (eps * r.powf(eps));
                (p.k_o / ko - 1.0).abs().max((p.k_i / ko.powi(n as i32 - 1) - 1.0).abs())
            })
            .fold(0.0, f64::max)
    });

    let mut header: Vec<String> = (0..n).map(|a| format!("x{a}")).collect();
    header.extend(["norm", "det", "adj_norm", "k_o", "k_i", "g_min", "g_max", "det_g", "fd_gap"].map(String::from));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(
        &out_path(cfg, "distortion-points.csv"),
        &header,
        report.points.iter().map(|p| {
            let mut row = p.point.clone();
            row.extend([p.norm, p.det, p.adj_norm, p.k_o, p.k_i, p.g_min, p.g_max, p.det_g, p.fd_gap.unwrap_or(f64::NAN)]);
            row
        }),
    )?;
    let mut summary = serde_json::to_value(&report).map_err(degenlap::Error::from)?;
    if let Value::Object(m) = &mut summary {
        m.remove("points");
        m.insert("point_count".into(), json!(report.points.len()));
        m.insert("max_formula_error".into(), json!(formula_error));
    }
    write_json(&out_path(cfg, "distortion.json"), &summary)?;
    Ok(())
}

pub fn run_catalog(cfg: &RunConfig) -> Result<(), CliError> {
    match &cfg.fixture {
        Some(name) => {
            let budgets = VerifyBudgets {
                balls: cfg.balls,
                budget: cfg.budget,
                ellipticity_samples: cfg.ellipticity_samples,
                grid_cells: cfg.cells,
                seed: cfg.seed,
            };
            let report = catalog::verify_fixture(name, &budgets)?;
            write_json(&out_path(cfg, "fixture-report.json"), &report)?;
        }
        None => {
            let entries = FIXTURE_NAMES
                .iter()
                .map(|n| {
                    let fx = catalog::fixture(n)?;
                    Ok(json!({
                        "name": fx.name,
                        "weight": fx.weight.name(),
                        "matrix": fx.matrix.name(),
                        "domain": fx.domain,
                        "has_solution": fx.solution.is_some(),
                        "map": fx.map.as_ref().map(|m| m.name().to_string()),
                        "claims": fx.claims,
                    }))
                })
                .collect::<Result<Vec<_>, degenlap::Error>>()?;
            write_json(&out_path(cfg, "catalog.json"), &json!({"schema": SCHEMA, "fixtures": entries}))?;
        }
    }
    Ok(())
}
