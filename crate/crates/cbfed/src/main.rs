use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cbfed::config::{parse_key_values, RunConfig};
use cbfed::fespace::{build_dofmap, edge_quadrature, triangle_quadrature};
use cbfed::forms::{damping_monotonicity_slack, inf_sup_value};
use cbfed::manufactured::{convergence_table, write_csv};
use cbfed::mesh::{BoundaryTag, TriMesh};
use cbfed::plot::convergence_svg;
use cbfed::solver::{solve_cbfed, stokes_patch_error, DiscreteState, IterationReport};
use cbfed::CbfedError;

const EXIT_CONFIG: u8 = 1;
const EXIT_SOLVER: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Parser)]
#[command(
    name = "cbfed",
    about = "Mixed finite element solver for convective Brinkman-Forchheimer \
             flow with slip friction on part of the boundary"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem on a single grid and write the solution fields.
    Solve(CommonArgs),
    /// Run a convergence study over a list of grids (CSV + SVG output).
    Convergence(CommonArgs),
    /// Run the property and diagnostic suites.
    Check(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in case: ex1, ex2, or ex3.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated grid sizes, e.g. 5,10,20.
    #[arg(long)]
    grids: Option<String>,
    /// Reference grid size.
    #[arg(long)]
    nref: Option<usize>,
    /// Seed for the randomized checks.
    #[arg(long)]
    seed: Option<u64>,
}

fn resolve_config(args: &CommonArgs) -> Result<RunConfig, CbfedError> {
    let mut map: BTreeMap<String, String> = match &args.config {
        Some(path) => parse_key_values(&fs::read_to_string(path)?)?,
        None => BTreeMap::new(),
    };
    if let Some(p) = &args.preset {
        map.insert("preset".into(), p.clone());
    }
    if let Some(o) = &args.out {
        map.insert("out".into(), o.display().to_string());
    }
    if let Some(g) = &args.grids {
        map.insert("grids".into(), g.clone());
    }
    if let Some(n) = args.nref {
        map.insert("n_ref".into(), n.to_string());
    }
    if let Some(s) = args.seed {
        map.insert("seed".into(), s.to_string());
    }
    RunConfig::from_keys(map)
}

fn write_report(dir: &PathBuf, report: &IterationReport) -> Result<(), CbfedError> {
    let mut f = fs::File::create(dir.join("report.jsonl"))?;
    report.write_json_lines(&mut f)?;
    Ok(())
}

fn write_fields(
    dir: &PathBuf,
    mesh: &TriMesh,
    dm: &cbfed::fespace::DofMap,
    cfg: &RunConfig,
    state: &DiscreteState,
) -> Result<(), CbfedError> {
    use std::io::Write;

    let mut f = fs::File::create(dir.join("solution.csv"))?;
    writeln!(f, "x,y,u_x,u_y,p")?;
    for (v, vert) in mesh.vertices.iter().enumerate() {
        writeln!(
            f,
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            vert[0],
            vert[1],
            state.u[dm.ux(v)],
            state.u[dm.uy(v)],
            state.p[v]
        )?;
    }

    // slip boundary table: multiplier and the approximate tangential traction
    let mut lambda_at = vec![0.0; dm.n_vertices];
    for (k, &v) in dm.multiplier_nodes.iter().enumerate() {
        lambda_at[v] = state.lambda[k];
    }
    let mut gamma1: Vec<usize> = mesh.boundary_vertices(BoundaryTag::Gamma1).into_iter().collect();
    gamma1.sort_by(|&a, &b| mesh.vertices[a][0].partial_cmp(&mesh.vertices[b][0]).unwrap());
    let mut g = fs::File::create(dir.join("gamma1.csv"))?;
    writeln!(g, "x,u_tau,lambda,omega_lambda")?;
    for v in gamma1 {
        let u_tau = state.u[dm.ux(v)];
        let lam = lambda_at[v];
        writeln!(
            g,
            "{:.17e},{:.17e},{:.17e},{:.17e}",
            mesh.vertices[v][0],
            u_tau,
            lam,
            cfg.params.friction.omega(u_tau.abs()) * lam
        )?;
    }
    Ok(())
}

fn cmd_solve(cfg: &RunConfig) -> Result<u8, CbfedError> {
    let n = cfg.grids[0];
    let mesh = TriMesh::unit_square(n)?;
    let dm = build_dofmap(&mesh);
    fs::create_dir_all(&cfg.out_dir)?;

    let case = cfg.case.clone();
    let forcing = move |p: [f64; 2]| match &case {
        Some(c) => c.forcing(p),
        None => [0.0, 0.0],
    };
    match solve_cbfed(&mesh, &dm, &cfg.params, &cfg.solver, &forcing, &cfg.opts) {
        Ok((state, report)) => {
            write_report(&cfg.out_dir, &report)?;
            write_fields(&cfg.out_dir, &mesh, &dm, cfg, &state)?;
            if !report.converged {
                eprintln!("solver hit the outer iteration cap");
                return Ok(EXIT_SOLVER);
            }
            println!(
                "grid {n}x{n}: converged in {} outer iterations",
                report.outer_iters()
            );
            Ok(0)
        }
        Err((e, report)) => {
            write_report(&cfg.out_dir, &report)?;
            eprintln!("solver failure: {e}");
            Ok(EXIT_SOLVER)
        }
    }
}

fn cmd_convergence(cfg: &RunConfig) -> Result<u8, CbfedError> {
    let Some(case) = &cfg.case else {
        return Err(CbfedError::Config(
            "convergence studies need a preset case (manufactured forcing)".into(),
        ));
    };
    let study = match convergence_table(case, &cfg.solver, &cfg.opts) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("solver failure: {e}");
            return Ok(EXIT_SOLVER);
        }
    };
    fs::create_dir_all(&cfg.out_dir)?;
    let name = case.id.name();
    let mut csv = fs::File::create(cfg.out_dir.join(format!("table_{name}.csv")))?;
    write_csv(&study.rows, &mut csv)?;
    fs::write(
        cfg.out_dir.join(format!("convergence_{name}.svg")),
        convergence_svg(&format!("convergence {name}"), &study.rows),
    )?;
    let mut stdout = std::io::stdout();
    write_csv(&study.rows, &mut stdout)?;
    Ok(0)
}

fn reference_triangle_integral(p: u32, q: u32) -> f64 {
    // int over the unit reference triangle of x^p y^q = p! q! / (p+q+2)!
    let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
    fact(p) * fact(q) / fact(p + q + 2)
}

fn check_quadrature(cfg: &RunConfig) -> Result<(), String> {
    let rule = triangle_quadrature(cfg.opts.volume_degree)
        .map_err(|e| format!("volume rule: {e}"))?;
    // assembly needs degree-6 exactness regardless of the configured rule
    for p in 0..=6u32 {
        for q in 0..=(6 - p) {
            let num: f64 = rule
                .points
                .iter()
                .zip(&rule.weights)
                .map(|(l, w)| w * l[1].powi(p as i32) * l[2].powi(q as i32))
                .sum();
            let exact = reference_triangle_integral(p, q);
            if (num - exact).abs() > 1e-12 {
                return Err(format!(
                    "volume rule of degree {} misses x^{p} y^{q}: {num:.15e} vs {exact:.15e}",
                    cfg.opts.volume_degree
                ));
            }
        }
    }
    let edge = edge_quadrature(cfg.opts.edge_degree).map_err(|e| format!("edge rule: {e}"))?;
    for k in 0..=5u32 {
        let num: f64 = edge
            .points
            .iter()
            .zip(&edge.weights)
            .map(|(l, w)| w * l[1].powi(k as i32))
            .sum();
        let exact = 1.0 / f64::from(k + 1);
        if (num - exact).abs() > 1e-13 {
            return Err(format!("edge rule misses t^{k}: {num:.15e} vs {exact:.15e}"));
        }
    }
    Ok(())
}

fn check_monotonicity(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for r in [1.0, 2.0, 3.0, 4.0, 5.0] {
        for _ in 0..10_000 {
            let x = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            let y = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            let (weak, strong) = damping_monotonicity_slack(x, y, r);
            if weak < -1e-12 || strong < -1e-12 {
                return Err(format!(
                    "negative slack at r={r}, x={x:?}, y={y:?}: weak {weak:.3e}, strong {strong:.3e}"
                ));
            }
            if r == 1.0 && strong.abs() > 1e-12 * (1.0 + strong.abs()) {
                // r = 1 reduces both sides to |x - y|^2 exactly
                return Err(format!("r=1 equality violated: slack {strong:.3e}"));
            }
        }
    }
    Ok(())
}

fn check_inf_sup() -> Result<(), String> {
    let mut values = Vec::new();
    for n in [4usize, 8, 16] {
        let mesh = TriMesh::unit_square(n).map_err(|e| e.to_string())?;
        let dm = build_dofmap(&mesh);
        let v = inf_sup_value(&mesh, &dm);
        if !(v > 0.0) {
            return Err(format!("inf-sup value not positive at n={n}: {v:.3e}"));
        }
        values.push(v);
    }
    let (first, last) = (values[0], values[2]);
    if last <= 0.5 * first {
        return Err(format!(
            "inf-sup degraded by more than 50% over the sweep: {values:?}"
        ));
    }
    println!("  inf-sup values (n = 4, 8, 16): {values:?}");
    Ok(())
}

fn cmd_check(cfg: &RunConfig) -> u8 {
    let checks: Vec<(&str, Result<(), String>)> = vec![
        ("monotonicity inequalities", check_monotonicity(cfg.seed)),
        ("quadrature exactness", check_quadrature(cfg)),
        (
            "patch test",
            stokes_patch_error(4)
                .map_err(|e| e.to_string())
                .and_then(|e| {
                    if e <= 1e-9 {
                        Ok(())
                    } else {
                        Err(format!("nodal max error {e:.3e}"))
                    }
                }),
        ),
        ("inf-sup diagnostic", check_inf_sup()),
    ];
    let mut failed = false;
    for (name, result) in checks {
        match result {
            Ok(()) => println!("PASS {name}"),
            Err(msg) => {
                failed = true;
                println!("FAIL {name}: {msg}");
            }
        }
    }
    if failed {
        EXIT_CHECK
    } else {
        0
    }
}

fn run() -> u8 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help/version requests are not errors
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_CONFIG,
            };
            let _ = e.print();
            return code;
        }
    };
    let args = match &cli.cmd {
        Command::Solve(a) | Command::Convergence(a) | Command::Check(a) => a,
    };
    let cfg = match resolve_config(args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_CONFIG;
        }
    };
    let outcome = match &cli.cmd {
        Command::Solve(_) => cmd_solve(&cfg),
        Command::Convergence(_) => cmd_convergence(&cfg),
        Command::Check(_) => Ok(cmd_check(&cfg)),
    };
    match outcome {
        Ok(code) => code,
        Err(e @ CbfedError::Config(_)) => {
            eprintln!("config error: {e}");
            EXIT_CONFIG
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_SOLVER
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(run())
}
