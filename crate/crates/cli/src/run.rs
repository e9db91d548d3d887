//! Experiment orchestration and output writing.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use majority_tree::analytics::{
    center_trace, energy_audit, mass_transport_audit, resampling_difference, threshold_pair, EnergyAudit, Identity,
    LargerNeighbors, NearestAtMost, TransportRule,
};
use majority_tree::engine::{check_commutation, run, BoundaryCondition, Mode};
use majority_tree::estimators::{
    alpha_estimate, chain_time_cdf, continuity_check, ends_statistics, never_flip_probability, pc_bracket, theta_curve,
    PairWindow, SamplerPolicy,
};
use majority_tree::exactness::{bracketing_violations, tail_check};
use majority_tree::randomness::SeedManifest;
use majority_tree::{Ball, VertexId};
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Kind, Policy, Rule};

pub const ARTIFACT: &str = "majority-tree";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "MAJORITY_TREE_OUT";

/// Lower bound of the consensus threshold on the 3-regular tree, `(2 - sqrt 3) / 4`.
pub const PC_LOWER: f64 = 0.066_987_298_107_780_68;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] majority_tree::Error),
}

/// Exit status of a finished experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// A mathematical invariant failed.
    Violation,
}

impl Status {
    pub fn code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::Violation => 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub status: Status,
    pub files: Vec<PathBuf>,
    pub summary: BTreeMap<String, Value>,
}

/// Exit code for a run result: 0 success, 2 invariant violation, 1 operational error.
pub fn exit_code(result: &Result<Outcome, RunError>) -> i32 {
    match result {
        Ok(o) => o.status.code(),
        Err(_) => 1,
    }
}

struct Table {
    name: &'static str,
    header: &'static str,
    rows: Vec<String>,
}

impl Table {
    fn new(name: &'static str, header: &'static str) -> Self {
        Table { name, header, rows: Vec::new() }
    }
}

struct Report {
    tables: Vec<Table>,
    summary: BTreeMap<String, Value>,
    violations: u64,
}

impl Report {
    fn new() -> Self {
        Report { tables: Vec::new(), summary: BTreeMap::new(), violations: 0 }
    }

    fn note(&mut self, key: &str, value: impl Into<Value>) {
        self.summary.insert(key.to_string(), value.into());
    }
}

/// Run one experiment and write its CSV files and `manifest.json` into `out_dir`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<Outcome, RunError> {
    let started = Instant::now();
    let manifest = SeedManifest::new(config.seed);
    let report = match config.kind {
        Kind::Simulate => simulate(config, &manifest)?,
        Kind::Commutation => commutation(config, &manifest)?,
        Kind::Theta => theta(config, &manifest)?,
        Kind::Alpha => alpha(config, &manifest)?,
        Kind::Trace => trace(config, &manifest)?,
        Kind::Resample => resample(config, &manifest)?,
        Kind::Chains => chains(config, &manifest)?,
        Kind::Audit => audit(config, &manifest)?,
        Kind::Tailcheck => tailcheck(config, &manifest)?,
        Kind::Neverflip => neverflip(config, &manifest)?,
    };
    let status = if report.violations > 0 { Status::Violation } else { Status::Ok };
    fs::create_dir_all(out_dir).map_err(|source| RunError::Io { path: out_dir.to_path_buf(), source })?;
    let stamp = format!(
        "# artifact={ARTIFACT} version={VERSION} kind={} manifest={}",
        config.kind,
        serde_json::to_string(&manifest).expect("manifests serialize")
    );
    let mut files = Vec::new();
    for t in &report.tables {
        let path = out_dir.join(format!("{}.csv", t.name));
        let mut text = format!("{stamp}\n{}\n", t.header);
        for r in &t.rows {
            text.push_str(r);
            text.push('\n');
        }
        fs::write(&path, text).map_err(|source| RunError::Io { path: path.clone(), source })?;
        files.push(path);
    }
    let doc = json!({
        "artifact": ARTIFACT,
        "version": VERSION,
        "kind": config.kind,
        "config": config,
        "seed_manifest": manifest,
        "outputs": report.tables.iter().map(|t| format!("{}.csv", t.name)).collect::<Vec<_>>(),
        "summary": report.summary,
        "violations": report.violations,
        "exit_status": status.code(),
        "wall_time_seconds": started.elapsed().as_secs_f64(),
    });
    let path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&doc).expect("json values serialize") + "\n";
    fs::write(&path, text).map_err(|source| RunError::Io { path: path.clone(), source })?;
    files.push(path);
    Ok(Outcome { status, files, summary: report.summary })
}

fn p_grid(config: &ExperimentConfig) -> Vec<f64> {
    if let Some(p) = config.p {
        return vec![p];
    }
    let h = config.grid_step.unwrap_or(0.02);
    let steps = (1.0 / h).round() as usize;
    (1..steps).map(|k| k as f64 * h).collect()
}

fn f(x: f64) -> String {
    format!("{x:.6}")
}

fn simulate(config: &ExperimentConfig, manifest: &SeedManifest) -> Result<Report, RunError> {
    let radius = config.radius.unwrap_or(6);
    let horizon = config.horizon.unwrap_or(8.0);
    let mode = config.p.map_or(Mode::Median, Mode::Discrete);
    let traj = run::<f64>(manifest, &Ball::around_root(radius), BoundaryCondition::FrozenInitial, mode, horizon)?;
    let d = traj.domain();
    let mut last_flip = vec![f64::NAN; d.inner_len()];
    for fl in &traj.flips {
        last_flip[fl.vertex as usize] = fl.time;
    }
    let mut t = Table::new("simulate", "vertex,initial_value,final_origin,final_value,last_flip_time,spin");
    for i in 0..d.inner_len() as u32 {
        let fin = traj.final_state[i as usize];
        let s = traj.spin(fin);
        let spin = config.p.map(|p| traj.land.project(fin, p).to_string()).unwrap_or_default();
        let lf = if last_flip[i as usize].is_nan() { String::new() } else { format!("{:.9}", last_flip[i as usize]) };
        t.rows.push(format!(
            "{},{:.17},{},{:.17},{},{}",
            d.id(i),
            traj.land.value(i),
            s.origin_vertex().map(|v| v.to_string()).unwrap_or_default(),
            s.value,
            lf,
            spin
        ));
    }
    let audit = energy_audit(&traj.flips);
    let mut r = Report::new();
    r.tables.push(t);
    r.note("vertices", d.inner_len());
    r.note("events", traj.events);
    r.note("flips", audit.flips);
    r.note("energy_violations", audit.violations);
    r.violations = audit.violations;
    Ok(r)
}

fn commutation(config: &ExperimentConfig, manifest: &SeedManifest) -> Result<Report, RunError> {
    let replicas = config.replicas.unwrap_or(100);
    let ball = Ball::around_root(config.radius.unwrap_or(8));
    let horizon = config.horizon.unwrap_or(4.0);
    let grid = match (config.p, config.grid_step) {
        (None, None) => (1..=9).map(|k| k as f64 / 10.0).collect(),
        _ => p_grid(config),
    };
    let mut t = Table::new("commutation", "replica,p,holds,median_flips,discrete_flips,first_discrepancy");
    let mut violations = 0u64;
    for i in 0..replicas as u64 {
        let m = manifest.replica(i);
        for &p in &grid {
            let rep = check_commutation::<f64>(&m, &ball, p, horizon)?;
            if !rep.holds {
                violations += 1;
            }
            let what = rep.discrepancy.map(|d| format!("{} {}", d.vertex, d.what)).unwrap_or_default();
            t.rows.push(format!(
                "{i},{p:.4},{},{},{},{}",
                rep.holds,
                rep.median_flips,
                rep.discrete_flips,
                what.replace(',', ";")
            ));
        }
    }
    let mut r = Report::new();
    r.tables.push(t);
    r.note("checks", replicas * grid.len());
    r.note("violations", violations);
    r.violations = violations;
    Ok(r)
}

fn theta(config: &ExperimentConfig, manifest: &SeedManifest) -> Result<Report, RunError> {
    let replicas = config.replicas.unwrap_or(10_000);
    let horizon = config.horizon.unwrap_or(32.0);
    let radius = config.radius.unwrap_or(14);
    let policy = match config.policy.unwrap_or(Policy::Certified) {
        Policy::Certified => SamplerPolicy::Certified { radii: config.radii.clone().unwrap_or_else(|| vec![radius]) },
        Policy::Window => SamplerPolicy::Window { radius },
    };
    let grid = {
        let h = config.grid_step.unwrap_or(0.02);
        let steps = (1.0 / h).round() as usize;
        (1..steps).map(|k| k as f64 * h).collect::<Vec<_>>()
    };
    let limit = config.limit.unwrap_or(0.02);
    let curve = theta_curve::<f64>(manifest, replicas, horizon, &policy, &grid, limit)?;
    let mut t = Table::new("theta", "p,estimate,ci_halfwidth,replicas,undetermined,boundary_contact,lower,upper");
    let mut symmetry_worst: f64 = 0.0;
    for &p in &grid {
        let e = curve.theta(p)?;
        t.rows.push(format!("{p:.4},{}", e.csv_fields()));
        let mirror = curve.theta(1.0 - p)?;
        let z = (e.estimate + mirror.estimate - 1.0).abs() / (e.sigma().powi(2) + mirror.sigma().powi(2)).sqrt().max(1e-12);
        symmetry_worst = symmetry_worst.max(z);
    }
    let mut r = Report::new();
    r.tables.push(t);
    r.note("policy", policy.label());
    r.note("certified", policy.is_certified());
    r.note("undetermined", curve.undetermined);
    r.note("unsettled_fraction", curve.unsettled_fraction());
    r.note("worst_undetermined_fraction", curve.worst_undetermined(&grid));
    r.note("mass_outside_pc_lower", curve.mass_outside(PC_LOWER));
    r.note("symmetry_worst_sigma", symmetry_worst);
    match pc_bracket(&curve, config.epsilon.unwrap_or(0.01)) {
        Ok((lo, hi)) => r.note("pc_bracket", json!([lo, hi])),
        Err(e) => r.note("pc_bracket", e.to_string()),
    }
    let c = continuity_check(&curve, config.grid_step.unwrap_or(0.02))?;
    r.note("max_increment", c.max_increment);
    r.note("max_increment_at", c.at);
    Ok(r)
}

fn alpha(config: &ExperimentConfig, manifest: &SeedManifest) -> Result<Report, RunError> {
    let p = config.p.unwrap_or(0.3);
    let replicas = config.replicas.unwrap_or(20_000);
    let horizon = config.horizon.unwrap_or(8.0);
    let window = PairWindow::Tube { margin: config.margin.unwrap_or(8) };
    let certified = config.policy.unwrap_or(Policy::Certified) == Policy::Certified;
    let limit = config.limit.unwrap_or(0.1);
    let mut t = Table::new("alpha", "distance,p_a,p_b,p_ab,alpha,ci_halfwidth,replicas,undetermined");
    for &d in config.distances.as_deref().unwrap_or(&[2, 4, 6, 8]) {
        let a = alpha_estimate::<f64>(manifest, p, d, replicas, horizon, &window, certified, limit)?;
        t.rows.push(format!(
            "{d},{},{},{},{},{},{},{}",
            f(a.p_a),
            f(a.p_b),
            f(a.p_ab),
            f(a.alpha),
            f(a.halfwidth),
            a.replicas,
            f(a.undetermined)
        ));
    }
    let mut r = Report::new();
    r.tables.push(t);
    r.note("certified", certified);
    Ok(r)
}

fn trace(config: &ExperimentConfig, manifest: &SeedManifest) -> Result<Report, RunError> {
    let replicas = config.replicas.unwrap_or(200);
    let ball = Ball::around_root(config.radius.unwrap_or(12));
    let horizon = config.horizon.unwrap_or(16.0);
    let mut t = Table::new("trace", "replica,trace_size,difference_size,equal,touches_boundary");
    let mut violations = 0;
    for i in 0..replicas as u64 {
        let m = manifest.replica(i);
        let tr = center_trace::<f64>(&m, &ball, horizon)?;
        let pair = threshold_pair::<f64>(&m, &ball, horizon)?;
        let equal = tr.members == pair.difference;
        if !equal {
            violations += 1;
        }
        t.rows.push(format!("{i},{},{},{equal},{}", tr.members.len(), pair.difference.len(), tr.touches_boundary));
    }
    let mut r = Report::new();
    r.tables.push(t);
    r.note("violations", violations);
    r.violations = violations;
    Ok(r)
}

fn resample(config: &ExperimentConfig, manifest: &SeedManifest) -> Result<Report, RunError> {
    let replicas = config.replicas.unwrap_or(1000);
    let ball = Ball::around_root(config.radius.unwrap_or(12));
    let horizon = config.horizon.unwrap_or(32.0);
    let p = config.p.unwrap_or(0.5);
    let target = config.target.unwrap_or_else(VertexId::root);
    let clock = config.resample_clock.unwrap_or(false).then_some(1);
    let mut t = Table::new("resample", "replica,difference_size,touches_boundary");
    let mut touching = 0;
    for i in 0..replicas as u64 {
        let m = manifest.replica(i);
        let d = resampling_difference::<f64>(&m, &ball, p, horizon, &target, (1, -1), clock)?;
        touching += d.touches_boundary as usize;
        t.rows.push(format!("{i},{},{}", d.difference.len(), d.touches_boundary));
    }
    let mut r = Report::new();
    r.tables.push(t);
    r.note("boundary_contact_fraction", touching as f64 / replicas.max(1) as f64);
    Ok(r)
}

fn chains(config: &ExperimentConfig, manifest: &SeedManifest) -> Result<Report, RunError> {
    let p = config.p.unwrap_or(0.5);
    let depth = config.depth.unwrap_or(8);
    let replicas = config.replicas.unwrap_or(1000);
    let radius = config.radius.unwrap_or(12);
    let times = config.times.clone().unwrap_or_else(|| vec![0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0]);
    let cdf = chain_time_cdf::<f64>(manifest, p, depth, &times, replicas, radius)?;
    let mut t = Table::new("chains", "t,estimate,ci_halfwidth,replicas,undetermined,boundary_contact,lower,upper");
    for (time, e) in &cdf {
        t.rows.push(format!("{time:.4},{}", e.csv_fields()));
    }
    let mut r = Report::new();
    r.tables.push(t);
    r.note("monotone", cdf.windows(2).all(|w| w[0].1.estimate <= w[1].1.estimate));
    if let Some(radii) = &config.radii {
        let horizon = config.horizon.unwrap_or(64.0);
        let mut e = Table::new("ends", "radius,replicas,spanning,with_triple_point,fraction");
        for &rad in radii {
            let s = ends_statistics::<f64>(manifest, p, rad, horizon, replicas)?;
            e.rows.push(format!(
                "{rad},{},{},{},{}",
                s.replicas,
                s.spanning,
                s.with_triple_point,
                s.fraction().map(f).unwrap_or_default()
            ));
        }
        r.tables.push(e);
    }
    Ok(r)
}

fn audit(config: &ExperimentConfig, manifest: &SeedManifest) -> Result<Report, RunError> {
    let runs = config.runs.unwrap_or(20);
    let ball = Ball::around_root(config.radius.unwrap_or(8));
    let horizon = config.horizon.unwrap_or(16.0);
    let mut energy = EnergyAudit::default();
    let mut bracketing = 0;
    for i in 0..runs as u64 {
        let m = manifest.replica(i);
        let traj = run::<f64>(&m, &ball, BoundaryCondition::FrozenInitial, Mode::Median, horizon)?;
        energy = energy.merge(energy_audit(&traj.flips));
        bracketing += bracketing_violations::<f64>(&m, &ball, horizon)?;
    }
    let mut t = Table::new("audit", "check,value,passed");
    t.rows.push(format!("energy_flips,{},true", energy.flips));
    t.rows.push(format!("energy_violations,{},{}", energy.violations, energy.violations == 0));
    t.rows.push(format!("bracketing_violations,{bracketing},{}", bracketing == 0));
    let mut violations = energy.violations + bracketing;
    if let Some(rule) = config.rule {
        let rule: Box<dyn TransportRule> = match rule {
            Rule::Identity => Box::new(Identity),
            Rule::LargerNeighbors => Box::new(LargerNeighbors),
            Rule::Nearest => Box::new(NearestAtMost { level: 0.5 }),
        };
        let w = config.window.unwrap_or(4);
        let a = mass_transport_audit(rule.as_ref(), w, config.replicas.unwrap_or(2000), manifest, 1.0, config.limit.unwrap_or(0.01))?;
        t.rows.push(format!("transport_{}_out,{},true", a.rule, f(a.mass_out.mean)));
        t.rows.push(format!("transport_{}_in,{},true", a.rule, f(a.mass_in.mean)));
        t.rows.push(format!("transport_{}_miss_rate,{},true", a.rule, f(a.miss_rate)));
        t.rows.push(format!("transport_{}_balanced,{},{}", a.rule, a.balanced(), a.balanced()));
        if !a.balanced() {
            violations += 1;
        }
    }
    let mut r = Report::new();
    r.tables.push(t);
    r.note("violations", violations);
    r.violations = violations;
    Ok(r)
}

fn tailcheck(config: &ExperimentConfig, manifest: &SeedManifest) -> Result<Report, RunError> {
    let replicas = config.replicas.unwrap_or(10_000);
    let pairs: Vec<(f64, usize)> = match (config.horizon, config.k) {
        (Some(t), Some(k)) => vec![(t, k)],
        (None, None) => vec![(1.0, 20), (0.5, 15)],
        _ => {
            return Err(majority_tree::Error::InvalidArgument("tailcheck needs both horizon and k, or neither".into()).into())
        }
    };
    let mut t = Table::new("tailcheck", "T,k,replicas,hits,empirical,bound,vacuous,passes");
    let mut violations = 0;
    for (time, k) in pairs {
        let c = tail_check(manifest, time, k, replicas);
        if !c.passes() {
            violations += 1;
        }
        t.rows.push(format!(
            "{time:.4},{k},{},{},{},{},{},{}",
            c.replicas,
            c.hits,
            f(c.empirical),
            f(c.bound),
            c.vacuous,
            c.passes()
        ));
    }
    let mut r = Report::new();
    r.tables.push(t);
    r.note("violations", violations);
    r.violations = violations;
    Ok(r)
}

fn neverflip(config: &ExperimentConfig, manifest: &SeedManifest) -> Result<Report, RunError> {
    let q = config.p.unwrap_or(0.5);
    let replicas = config.replicas.unwrap_or(2000);
    let radius = config.radius.unwrap_or(10);
    let times = config.times.clone().unwrap_or_else(|| vec![16.0, 32.0]);
    let est = never_flip_probability::<f64>(manifest, q, &times, replicas, radius)?;
    let mut t = Table::new("neverflip", "T,estimate,ci_halfwidth,replicas,undetermined,boundary_contact,lower,upper");
    for (time, e) in &est {
        t.rows.push(format!("{time:.4},{}", e.csv_fields()));
    }
    let mut r = Report::new();
    r.tables.push(t);
    Ok(r)
}
