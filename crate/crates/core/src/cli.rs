//! The `pcabp` command line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{
    duality_check, estimate_pc, estimate_qc, fit_decay, parse_grid, sweep_infection, sweep_theta, PcSettings, SweepResult, CSV_HEADER,
    DEFAULT_HORIZON, DEFAULT_THRESHOLD,
};
use crate::audit::{osss_inequality_check, pivotal_difference_check, revealment_estimate, russo_check, Mode};
use crate::bp::{bernoulli_initial, bp_step, BpBoundary, UpdateFamily};
use crate::correspondence::{bp_to_ca, ca_to_bp, pca_to_inhom_bp, verify_equivalence, verify_equivalence_exhaustive, CorrespondencePair};
use crate::error::{Error, Result};
use crate::geometry::{classify, half_space_normal, stable_interior_check, unstable_set_2d, HalfSpace};
use crate::lattice::Window;
use crate::model::Model;
use crate::pca::{simulate, Boundary, Configuration};
use crate::rates::{LinearCurve, ParamCurve, RatesMeasure};
use crate::upset::UpFamily;

#[derive(Parser, Debug)]
#[command(name = "pcabp", version, about = "Attractive PCA and bootstrap percolation workbench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Model file (TOML).
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct BracketArgs {
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    pub horizon: i64,
    /// Periodic window width for measures; the light cone is used when it fits.
    #[arg(long, default_value_t = 2 * DEFAULT_HORIZON)]
    pub width: i64,
    #[arg(long, default_value_t = 10_000)]
    pub replicas: u64,
    #[arg(long, default_value_t = 0.005)]
    pub tolerance: f64,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
}

impl BracketArgs {
    fn settings(&self, seed: u64) -> PcSettings {
        PcSettings {
            horizon: self.horizon,
            width: self.width,
            replicas: self.replicas,
            tolerance: self.tolerance,
            threshold: self.threshold,
            seed,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryArg {
    Zero,
    One,
    Periodic,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuditMode {
    Exhaustive,
    Mc,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// One run from all ones (measures) or from Bernoulli infection (bootstrap).
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Death-curve parameter applied to the measure.
        #[arg(long)]
        p: Option<f64>,
        /// Initial infection density for bootstrap models.
        #[arg(long, default_value_t = 0.1)]
        q: f64,
        #[arg(long, default_value_t = 64)]
        t: i64,
        /// Window side length.
        #[arg(long, default_value_t = 129)]
        width: i64,
        #[arg(long, value_enum, default_value_t = BoundaryArg::Zero)]
        boundary: BoundaryArg,
    },
    /// theta_n(p) or P(origin healthy at t) over a parameter grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma list of parameters, decimal or a/b.
        #[arg(long)]
        grid: String,
        /// Comma list of horizons.
        #[arg(long)]
        horizons: String,
        /// Monte Carlo replicas; exact enumeration when absent (measures only).
        #[arg(long)]
        replicas: Option<u64>,
        /// Also fit exponential decay per grid point.
        #[arg(long)]
        fit: bool,
    },
    /// Bracket p_c along the death curve of the measure.
    EstimatePc {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        bracket: BracketArgs,
    },
    /// Bracket q_c of a bootstrap family (or the image of a single-family measure).
    EstimateQc {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        bracket: BracketArgs,
        /// Compare with 1 - p_c of the corresponding CA.
        #[arg(long)]
        duality: bool,
    },
    /// Map between the CA and bootstrap sides.
    Correspond {
        #[command(flatten)]
        common: Common,
    },
    /// Supercritical or subcritical, with geometric certificates.
    Classify {
        #[command(flatten)]
        common: Common,
    },
    /// Pivotality, Russo, revealment and variance checks on the cone.
    Audit {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 2)]
        n: i64,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long, value_enum, default_value_t = AuditMode::Exhaustive)]
        mode: AuditMode,
        #[arg(long, default_value_t = 100_000)]
        replicas: u64,
    },
    /// PCA trajectories against bootstrap closures on space-time blocks.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        p: Option<f64>,
        /// Half-width of the spatial window.
        #[arg(long, default_value_t = 3)]
        radius: i64,
        #[arg(long, default_value_t = 6)]
        t: i64,
        /// Number of seeded blocks.
        #[arg(long, default_value_t = 100)]
        blocks: u64,
        /// Enumerate every field on the block instead.
        #[arg(long)]
        exhaustive: bool,
    },
}

/// Sets the worker count from `PCABP_THREADS`.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("PCABP_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| Error::Parse(format!("PCABP_THREADS = {v}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Domain(e.to_string()))?;
    }
    Ok(())
}

fn write(dir: &Path, name: &str, body: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), body)?;
    Ok(())
}

fn measure(c: &Common) -> Result<RatesMeasure> {
    match Model::load(&c.model)? {
        Model::Measure(m) => Ok(m),
        Model::Bootstrap(_) => Err(Error::Domain("this command needs a measure model".into())),
    }
}

fn at(m: RatesMeasure, p: Option<f64>) -> Result<RatesMeasure> {
    match p {
        Some(p) => LinearCurve::full(m).at(p),
        None => Ok(m),
    }
}

/// The single family other than the empty one.
fn single_family(m: &RatesMeasure) -> Result<UpFamily> {
    let fs: Vec<&UpFamily> = m.atoms().iter().map(|(f, _)| f).filter(|f| !f.is_empty_family()).collect();
    match fs.as_slice() {
        [f] => Ok((*f).clone()),
        _ => Err(Error::Domain("measure must have exactly one family besides the empty one".into())),
    }
}

fn bootstrap_family(c: &Common) -> Result<UpdateFamily> {
    match Model::load(&c.model)? {
        Model::Bootstrap(x) => Ok(x),
        Model::Measure(m) => ca_to_bp(&single_family(&m)?),
    }
}

fn list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad list entry {t}"))))
        .collect()
}

fn fmt_sites(sites: &[Vec<i64>]) -> String {
    sites
        .iter()
        .map(|v| format!("({})", v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ")))
        .collect::<Vec<_>>()
        .join(" ")
}

fn fmt_family(u: &UpFamily) -> String {
    let nb = u.neighborhood();
    let sets: Vec<String> = u.minimal_sets().iter().map(|s| format!("{{{}}}", fmt_sites(&nb.sites_of(*s)))).collect();
    format!("[{}]", sets.join(" "))
}

/// Runs one command; returns the text printed to stdout.
pub fn run(cli: Cli) -> Result<String> {
    let mut out = String::new();
    match cli.command {
        Command::Simulate { common, p, q, t, width, boundary } => {
            if width < 1 || t < 0 {
                return Err(Error::Domain("width and t must be positive".into()));
            }
            let lo = -(width / 2);
            let mut csv = format!("{CSV_HEADER} simulate\nt,count,density\n");
            match Model::load(&common.model)? {
                Model::Measure(m) => {
                    let mu = at(m, p)?;
                    let nb = mu.neighborhood();
                    let w = Window::new(vec![lo; nb.d], vec![lo + width - 1; nb.d])?;
                    let b = match boundary {
                        BoundaryArg::Zero => Boundary::AllZero,
                        BoundaryArg::One => Boundary::AllOne,
                        BoundaryArg::Periodic => Boundary::Periodic,
                    };
                    let init = Configuration::ones(&nb, w.clone(), b)?;
                    let tr = simulate(&mu, &init, t, common.seed)?;
                    for s in 0..=t {
                        let ones = tr.row(s).iter().filter(|v| **v).count();
                        writeln!(csv, "{},{},{}", s, ones, ones as f64 / w.volume() as f64).unwrap();
                    }
                    write(&common.out, "simulate.csv", &csv)?;
                    write(&common.out, "trajectory.rle", &tr.export_rle(common.seed, &mu))?;
                    let last = tr.row(t).iter().filter(|v| **v).count();
                    writeln!(out, "ones at t={t}: {last} of {}", w.volume()).unwrap();
                }
                Model::Bootstrap(x) => {
                    let d = x.dim();
                    let w = Window::new(vec![lo; d], vec![lo + width - 1; d])?;
                    let b = match boundary {
                        BoundaryArg::Zero => BpBoundary::healthy(d),
                        BoundaryArg::One => BpBoundary::infected(d),
                        BoundaryArg::Periodic => return Err(Error::Domain("bootstrap runs have fixed faces".into())),
                    };
                    let mut st = bernoulli_initial(&w, b, q, common.seed)?;
                    writeln!(csv, "0,{},{}", st.count(), st.count() as f64 / w.volume() as f64).unwrap();
                    for s in 1..=t {
                        let next = bp_step(&st, &x)?;
                        let fixed = next == st;
                        st = next;
                        writeln!(csv, "{},{},{}", s, st.count(), st.count() as f64 / w.volume() as f64).unwrap();
                        if fixed {
                            break;
                        }
                    }
                    write(&common.out, "simulate.csv", &csv)?;
                    writeln!(out, "infected: {} of {}", st.count(), w.volume()).unwrap();
                }
            }
        }
        Command::Sweep { common, grid, horizons, replicas, fit } => {
            let grid = parse_grid(&grid)?;
            let hs: Vec<i64> = list(&horizons)?;
            let r: SweepResult = match Model::load(&common.model)? {
                Model::Measure(m) => sweep_theta(&LinearCurve::full(m), &grid, &hs, replicas, common.seed)?,
                Model::Bootstrap(x) => sweep_infection(&x, &grid, &hs, replicas.unwrap_or(10_000), common.seed)?,
            };
            write(&common.out, "sweep.csv", &r.to_csv())?;
            writeln!(out, "{} rows", r.rows.len()).unwrap();
            if fit {
                let mut csv = format!("{CSV_HEADER} fit\nparam,c,C,r2,t_min,t_max,used,decaying\n");
                let mut ps: Vec<f64> = r.rows.iter().map(|r| r.param).collect();
                ps.dedup();
                for p in ps {
                    match fit_decay(&r.decay_points(p)) {
                        Ok(f) => {
                            writeln!(csv, "{},{},{},{},{},{},{},{}", p, f.c, f.big_c, f.r2, f.t_min, f.t_max, f.used, f.decaying()).unwrap();
                            writeln!(out, "{p}: c = {}, C = {}, R2 = {}", f.c, f.big_c, f.r2).unwrap();
                        }
                        Err(e) => writeln!(out, "{p}: {e}").unwrap(),
                    }
                }
                write(&common.out, "fit.csv", &csv)?;
            }
        }
        Command::EstimatePc { common, bracket } => {
            let e = estimate_pc(&LinearCurve::full(measure(&common)?), &bracket.settings(common.seed))?;
            write(&common.out, "estimate_pc.csv", &e.to_csv())?;
            write(&common.out, "estimate_pc.txt", &e.to_string())?;
            out.push_str(&e.to_string());
        }
        Command::EstimateQc { common, bracket, duality } => {
            let s = bracket.settings(common.seed);
            if duality {
                let u = single_family(&measure(&common)?)?;
                let r = duality_check(&u, &s)?;
                write(&common.out, "estimate_pc.csv", &r.pc.to_csv())?;
                write(&common.out, "estimate_qc.csv", &r.qc.to_csv())?;
                write(&common.out, "duality.txt", &r.to_string())?;
                out.push_str(&r.to_string());
                if !r.overlap {
                    return Err(Error::Domain(format!("brackets do not overlap\n{r}")));
                }
            } else {
                let e = estimate_qc(&bootstrap_family(&common)?, &s)?;
                write(&common.out, "estimate_qc.csv", &e.to_csv())?;
                write(&common.out, "estimate_qc.txt", &e.to_string())?;
                out.push_str(&e.to_string());
            }
        }
        Command::Correspond { common } => {
            let mut csv = format!("{CSV_HEADER} correspond\n");
            match Model::load(&common.model)? {
                Model::Measure(m) => {
                    csv.push_str("weight,ca_family,bp_family\n");
                    let chi = pca_to_inhom_bp(&m)?;
                    for ((u, w), (x, _)) in m.atoms().iter().zip(chi.atoms()) {
                        writeln!(csv, "{},{},{}", w, fmt_family(u), x).unwrap();
                        writeln!(out, "{w}: {} -> {x}", fmt_family(u)).unwrap();
                    }
                }
                Model::Bootstrap(x) => {
                    let (nb, u) = bp_to_ca(&x)?;
                    csv.push_str("dimension,range,memoryless,ca_family\n");
                    writeln!(csv, "{},{},{},{}", nb.d, nb.r, nb.memoryless, fmt_family(&u)).unwrap();
                    writeln!(out, "{x} -> d={} r={} memoryless={} {}", nb.d, nb.r, nb.memoryless, fmt_family(&u)).unwrap();
                }
            }
            write(&common.out, "correspond.csv", &csv)?;
        }
        Command::Classify { common } => {
            let x = bootstrap_family(&common)?;
            let mut csv = format!("{CSV_HEADER} classify\nkey,value\nfamily,{x}\n");
            let c = classify(&x);
            match &c {
                Ok(c) => writeln!(csv, "class,{c}").unwrap(),
                Err(e) => writeln!(csv, "class,{e}").unwrap(),
            }
            match half_space_normal(&x) {
                HalfSpace::Normal(u) => writeln!(csv, "half_space_normal,{}", u.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")).unwrap(),
                HalfSpace::Witness(w) => {
                    let parts: Vec<String> = w.iter().map(|(v, c)| format!("{c}*{}", fmt_sites(std::slice::from_ref(v)))).collect();
                    writeln!(csv, "zero_combination,{}", parts.join(" + ")).unwrap()
                }
            }
            if x.dim() == 2 {
                let arcs = unstable_set_2d(&x)?;
                let a: Vec<String> = arcs
                    .arcs
                    .iter()
                    .map(|a| format!("({} {})->({} {})", a.from[0], a.from[1], a.to[0], a.to[1]))
                    .collect();
                writeln!(csv, "unstable_full,{}", arcs.full).unwrap();
                writeln!(csv, "unstable_arcs,{}", a.join(" ")).unwrap();
                if let Ok(si) = stable_interior_check(&x) {
                    if let Some((a, b)) = si.opposite {
                        writeln!(csv, "opposite_stable,({} {}) ({} {})", a[0], a[1], b[0], b[1]).unwrap();
                    }
                    writeln!(csv, "closure_of_interior,{}", si.closure_of_interior).unwrap();
                }
            }
            write(&common.out, "classify.csv", &csv)?;
            out.push_str(&csv);
            c?;
        }
        Command::Audit { common, n, p, mode, replicas } => {
            let base = measure(&common)?;
            let mu = at(base.clone(), p)?;
            let pr = p.unwrap_or_else(|| LinearCurve::full(base.clone()).interval().1.min(1.0));
            let mut txt = String::new();
            let mut csv = format!("{CSV_HEADER} audit\nx,t,delta,stderr,bound\n");
            let xs = |x: &[i64]| x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
            match mode {
                AuditMode::Exhaustive => {
                    let r = russo_check(&base, n, pr, Mode::Exhaustive)?;
                    writeln!(txt, "russo p={} lhs={} rhs={} gap={} identity={:?}", r.p, r.lhs, r.rhs, r.gap, r.identity).unwrap();
                    let o = osss_inequality_check(&mu, n)?;
                    writeln!(txt, "theta_n={} variance={} bound={} pass={}", o.theta_n, o.variance, o.bound, o.pass).unwrap();
                    writeln!(txt, "revealment bound={} pass={} decision_errors={}", o.revealment_bound, o.revealment_pass, o.decision_errors).unwrap();
                    let d = pivotal_difference_check(&mu, n)?;
                    writeln!(txt, "pivotal difference pairs={} gap_pairs={} violations={} monotone_violations={}", d.pairs, d.gap_pairs, d.violations, d.monotone_violations).unwrap();
                    for ((x, t), dl) in o.sites.iter().zip(&o.delta) {
                        writeln!(csv, "{},{},{},0,{}", xs(x), t, dl, o.revealment_bound).unwrap();
                    }
                }
                AuditMode::Mc => {
                    let lo_hi = LinearCurve::full(base.clone()).interval();
                    let step = 0.02;
                    if pr - step >= lo_hi.0 && pr + step <= lo_hi.1 && pr > 0.0 {
                        let r = russo_check(&base, n, pr, Mode::MonteCarlo { replicas, seed: common.seed, step })?;
                        writeln!(txt, "russo p={} lhs={} +- {} rhs={} +- {} gap={}", r.p, r.lhs, r.lhs_se.unwrap(), r.rhs, r.rhs_se.unwrap(), r.gap).unwrap();
                    } else {
                        writeln!(txt, "russo skipped: p={pr} too close to the interval ends").unwrap();
                    }
                    let rv = revealment_estimate(&mu, n, replicas, common.seed)?;
                    writeln!(txt, "revealment bound={} +- {} pass={}", rv.bound, rv.bound_se, rv.pass.iter().all(|v| *v)).unwrap();
                    for ((x, t), e) in rv.sites.iter().zip(&rv.delta) {
                        writeln!(csv, "{},{},{},{},{}", xs(x), t, e.mean, e.stderr, rv.bound).unwrap();
                    }
                }
            }
            write(&common.out, "audit.txt", &txt)?;
            write(&common.out, "audit.csv", &csv)?;
            out.push_str(&txt);
        }
        Command::Verify { common, p, radius, t, blocks, exhaustive } => {
            let mu = at(measure(&common)?, p)?;
            let d = mu.neighborhood().d;
            let pair = CorrespondencePair::new(mu)?;
            let w = Window::centered(d, radius);
            let r = if exhaustive {
                verify_equivalence_exhaustive(&pair, &w, t)?
            } else {
                let seeds: Vec<u64> = (0..blocks).map(|i| crate::field::replica_seed(common.seed, i)).collect();
                verify_equivalence(&pair, &w, t, &seeds)?
            };
            let csv = format!(
                "{CSV_HEADER} verify\ninstances,cells,bound_cells,mismatch\n{},{},{},{}\n",
                r.instances,
                r.cells,
                r.bound_cells,
                r.mismatch.as_ref().map_or("none".to_string(), |m| format!("{m:?}").replace(',', ";"))
            );
            write(&common.out, "verify.csv", &csv)?;
            writeln!(out, "{r}").unwrap();
            if !r.passed() {
                return Err(Error::Domain(format!("equivalence failed: {r}")));
            }
        }
    }
    Ok(out)
}
