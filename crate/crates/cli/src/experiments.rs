use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use fm_kinetics::diagnostics::{default_fd_step, memorization_proxy, AsymmetryReport};
use fm_kinetics::ot::{chisq_tail_bound, gaussian_mgf, AffineGrowthConstants, ExpTailConstants, GaussianTransport};
use fm_kinetics::tails::{
    compare_tail_models, domination_report, survival_function, TailFitOptions, DOMINATION_DELTA,
};
use fm_kinetics::transport::{batch_energies, endpoint, format_float, integrate, map_indexed, EnergyTable};
use fm_kinetics::{
    AffineSchedule, Dataset, EmpiricalField, KernelKind, PopulationGaussianField, SourceKernel,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Config, Experiment};
use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub version: &'static str,
    pub config_sha256: String,
    pub experiment: &'static str,
    pub seed_override: Option<u64>,
}

impl Metadata {
    fn new(cfg: &Config) -> Self {
        Self {
            version: fm_kinetics::VERSION,
            config_sha256: cfg.hash.clone(),
            experiment: cfg.experiment.name(),
            seed_override: cfg.seed_override,
        }
    }

    fn comments(&self) -> Vec<String> {
        let mut c = vec![
            format!("fm-kinetics {}", self.version),
            format!("config-sha256 {}", self.config_sha256),
            format!("experiment {}", self.experiment),
        ];
        if let Some(s) = self.seed_override {
            c.push(format!("seed-override {s}"));
        }
        c
    }
}

struct Out<'a> {
    dir: &'a Path,
    meta: Metadata,
    written: Vec<PathBuf>,
}

impl Out<'_> {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.dir.join(name);
        self.written.push(path.clone());
        Ok(BufWriter::new(File::create(path)?))
    }

    fn json(&mut self, name: &str, mut body: Value) -> Result<(), CliError> {
        body["metadata"] = serde_json::to_value(&self.meta).expect("metadata serializes");
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, &body).map_err(std::io::Error::from)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

/// Runs the configured experiment and returns the files it wrote.
pub fn run(cfg: &Config, workers: usize) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    let mut out = Out {
        dir: &cfg.output_dir,
        meta: Metadata::new(cfg),
        written: Vec::new(),
    };
    match cfg.experiment {
        Experiment::Sample => sample(cfg, workers, &mut out)?,
        Experiment::Energy => energy(cfg, workers, &mut out)?,
        Experiment::Tails => tails(cfg, workers, &mut out)?,
        Experiment::Gradcheck => gradcheck(cfg, &mut out)?,
        Experiment::OtCompare => ot_compare(cfg, workers, &mut out)?,
        Experiment::Bounds => bounds(cfg, &mut out)?,
    }
    Ok(out.written)
}

fn dataset(cfg: &Config) -> &Dataset {
    cfg.dataset.as_ref().expect("validated at load")
}

fn kernel(cfg: &Config) -> SourceKernel {
    cfg.kernel.expect("validated at load")
}

fn field(cfg: &Config) -> Result<EmpiricalField, CliError> {
    Ok(EmpiricalField::new(dataset(cfg).clone(), cfg.schedule.clone(), kernel(cfg))?)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn write_row(w: &mut impl Write, index: usize, cols: &[&[f64]]) -> Result<(), CliError> {
    write!(w, "{index}")?;
    for x in cols.iter().flat_map(|c| c.iter()) {
        write!(w, ",{}", format_float(*x))?;
    }
    writeln!(w)?;
    Ok(())
}

fn header(prefixes: &[&str], d: usize) -> String {
    let mut cols = vec!["sample_index".to_string()];
    for p in prefixes {
        cols.extend((0..d).map(|j| format!("{p}_{j}")));
    }
    cols.join(",")
}

fn sample(cfg: &Config, workers: usize, out: &mut Out) -> Result<(), CliError> {
    let f = field(cfg)?;
    let k = kernel(cfg);
    let d = k.dim();
    let rows = map_indexed(cfg.count, workers, |j| {
        let x0 = k.sample_point(cfg.seed, j as u64);
        let y = endpoint(&f, &x0, &cfg.integrator).map_err(|e| e.with_sample(j))?;
        Ok((x0, y))
    })?;
    let mut w = out.create("endpoints.csv")?;
    for c in out.meta.comments() {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "{}", header(&["x0", "y"], d))?;
    for (j, (x0, y)) in rows.iter().enumerate() {
        write_row(&mut w, j, &[x0, y])?;
    }
    w.flush()?;
    drop(w);
    let ends: Vec<Vec<f64>> = rows.into_iter().map(|r| r.1).collect();
    let stats = memorization_proxy(dataset(cfg), &ends)?;
    out.json(
        "memorization.json",
        json!({ "t_end": cfg.integrator.t_end, "nearest_distance": stats }),
    )
}

fn energy_table(cfg: &Config, workers: usize) -> Result<EnergyTable, CliError> {
    let f = field(cfg)?;
    Ok(batch_energies(&f, &kernel(cfg), &cfg.integrator, cfg.seed, cfg.count, &cfg.probe_times, workers)?)
}

fn energy(cfg: &Config, workers: usize, out: &mut Out) -> Result<(), CliError> {
    let table = energy_table(cfg, workers)?;
    let mut w = out.create("energies.csv")?;
    table.write_csv(&mut w, &out.meta.comments())?;
    w.flush()?;
    Ok(())
}

fn tails(cfg: &Config, workers: usize, out: &mut Out) -> Result<(), CliError> {
    let table = match &cfg.tails.input {
        Some(p) => EnergyTable::read_csv(BufReader::new(File::open(p)?))?,
        None => energy_table(cfg, workers)?,
    };
    let column = &cfg.tails.column;
    let (samples, probe_t) = if column == "E_T" {
        (table.energies(), None)
    } else {
        let t: f64 = column["K_t@".len()..].parse().expect("validated at load");
        let k = table
            .probe_times
            .iter()
            .position(|&p| p == t)
            .ok_or_else(|| CliError::Config(format!("energy table has no column {column}")))?;
        (table.kinetic_column(k), Some(t))
    };
    let sf = survival_function(&samples)?;
    let opts = TailFitOptions::with_quantile(cfg.tails.quantile);
    let cmp = compare_tail_models(&sf, &opts)?;

    let mut w = out.create("survival.csv")?;
    sf.write_csv(&mut w, &out.meta.comments())?;
    w.flush()?;
    drop(w);

    let best = match cmp.preferred {
        fm_kinetics::tails::TailModel::Exponential => cmp.exponential,
        fm_kinetics::tails::TailModel::Polynomial => cmp.polynomial,
    };
    let mut fit = serde_json::to_value(best).expect("fit serializes");
    fit["column"] = json!(column);
    fit["sample_size"] = json!(sf.sample_size());
    fit["comparison"] = serde_json::to_value(cmp).expect("fit serializes");
    out.json("fit.json", fit)?;

    out.json("domination.json", domination(cfg, &samples, &sf, probe_t, cmp.exponential.slope))
}

/// Exponential bound for Gaussian-source rectified flow, when it applies.
fn domination(
    cfg: &Config,
    samples: &[f64],
    sf: &fm_kinetics::tails::SurvivalFunction,
    probe_t: Option<f64>,
    exp_slope: f64,
) -> Value {
    let applicable = matches!(cfg.schedule, AffineSchedule::RectifiedFlow)
        && matches!(cfg.kernel.map(|k| k.kind()), Some(KernelKind::StandardGaussian))
        && cfg.dataset.is_some();
    if !applicable {
        return json!({
            "applicable": false,
            "reason": "the explicit exponential bound covers rectified flow with a Gaussian source only",
        });
    }
    let horizon = cfg.integrator.t_end;
    let t = probe_t.unwrap_or(0.0);
    let consts = match ExpTailConstants::new(dataset(cfg), t, horizon) {
        Ok(c) => c,
        Err(e) => return json!({ "applicable": false, "reason": e.to_string() }),
    };
    let (u_min, rate, report) = match probe_t {
        None => (
            consts.u_horizon,
            consts.c_horizon,
            domination_report(sf, |u| consts.energy_bound(u).unwrap_or(1.0), consts.u_horizon, DOMINATION_DELTA),
        ),
        Some(_) => (
            consts.u_t,
            consts.c_t,
            domination_report(sf, |u| consts.kinetic_bound(u).unwrap_or(1.0), consts.u_t, DOMINATION_DELTA),
        ),
    };
    let max_sample = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    json!({
        "applicable": true,
        "constants": consts,
        "u_min": u_min,
        "max_sample": max_sample,
        "report": report,
        "bound_rate": rate,
        "fitted_rate": -exp_slope,
        "decays_at_least_as_fast": -exp_slope >= rate,
    })
}

fn gradcheck(cfg: &Config, out: &mut Out) -> Result<(), CliError> {
    let f = field(cfg)?;
    let k = kernel(cfg);
    let mut reports = Vec::new();
    for &t in &cfg.gradcheck.times {
        for j in 0..cfg.gradcheck.probes {
            let z = k.sample_point(cfg.seed, j as u64);
            let h = cfg.gradcheck.fd_step.unwrap_or_else(|| default_fd_step(&z));
            reports.push(AsymmetryReport::for_empirical(&f, t, &z, h)?);
        }
    }
    let max_asym = reports.iter().map(|r| r.asym_norm).fold(0.0, f64::max);
    out.json(
        "gradcheck.json",
        json!({ "schedule": cfg.schedule.name(), "max_asym_norm": max_asym, "reports": reports }),
    )
}

fn ot_compare(cfg: &Config, workers: usize, out: &mut Out) -> Result<(), CliError> {
    let target = cfg.target.clone().expect("validated at load");
    let gt = GaussianTransport::new(target.clone())?;
    let field = PopulationGaussianField::new(target);
    let d = gt.dim();
    let source = SourceKernel::standard_gaussian(d)?;
    let rows = map_indexed(cfg.count, workers, |j| {
        let x0 = source.sample_point(cfg.seed, j as u64);
        let traj = integrate(&field, &x0, &cfg.integrator).map_err(|e| e.with_sample(j))?;
        let y = gt.monge_map(&x0)?;
        let gap = dist(traj.endpoint(), &y);
        Ok((x0, traj.endpoint().to_vec(), y, gap, traj.integrated_energy))
    })?;
    let mut w = out.create("ot_compare.csv")?;
    for c in out.meta.comments() {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "{},discrepancy,E_T", header(&["x0", "rf", "monge"], d))?;
    for (j, (x0, rf, y, gap, e)) in rows.iter().enumerate() {
        write_row(&mut w, j, &[x0, rf, y, &[*gap, *e]])?;
    }
    w.flush()?;
    drop(w);
    let n = rows.len() as f64;
    let cost = rows.iter().map(|r| dist(&r.0, &r.2).powi(2)).sum::<f64>() / n;
    let mean_gap = rows.iter().map(|r| r.3).sum::<f64>() / n;
    let max_gap = rows.iter().map(|r| r.3).fold(0.0, f64::max);
    let mean_energy = rows.iter().map(|r| r.4).sum::<f64>() / n;
    out.json(
        "ot_summary.json",
        json!({
            "t_end": cfg.integrator.t_end,
            "steps": cfg.integrator.steps,
            "count": cfg.count,
            "w2_squared": gt.w2_squared(),
            "mc_transport_cost": cost,
            "mean_path_energy": mean_energy,
            "mean_discrepancy": mean_gap,
            "max_discrepancy": max_gap,
            "rho": gt.rho(),
            "C": gt.tail_constant(),
        }),
    )
}

fn bounds(cfg: &Config, out: &mut Out) -> Result<(), CliError> {
    let mut body = json!({});
    let horizon = cfg.integrator.t_end;
    if let Some(data) = &cfg.dataset {
        let mut times = vec![0.0];
        times.extend(cfg.probe_times.iter().copied().filter(|&t| t > 0.0));
        let tail_consts: Vec<ExpTailConstants> = times
            .iter()
            .map(|&t| ExpTailConstants::new(data, t, horizon))
            .collect::<Result<_, _>>()?;
        body["max_norm"] = json!(data.max_norm());
        body["exponential_tail"] = json!(tail_consts);
        body["growth"] = json!(AffineGrowthConstants::new(&cfg.schedule, data, horizon)?);
        body["schedule"] = json!(cfg.schedule.name());
    }
    if let Some(target) = &cfg.target {
        let gt = GaussianTransport::new(target.clone())?;
        body["gaussian"] = json!({
            "dim": gt.dim(),
            "rho": gt.rho(),
            "C": gt.tail_constant(),
            "w2_squared": gt.w2_squared(),
        });
    }

    let w = SourceKernel::standard_gaussian(1)?;
    let draws: Vec<f64> = (0..cfg.count).map(|j| w.sample_point(cfg.seed, j as u64)[0]).collect();
    let n = draws.len() as f64;
    let mut mgf_rows = Vec::new();
    for (a, b) in [(0.0, 0.25), (1.0, 0.1), (2.0, 0.3)] {
        let vals: Vec<f64> = draws.iter().map(|w| (a * w + b * w * w).exp()).collect();
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        mgf_rows.push(json!({
            "a": a,
            "b": b,
            "formula": gaussian_mgf(a, b)?,
            "monte_carlo": mean,
            "std_error": (var / n).sqrt(),
        }));
    }
    body["gaussian_mgf"] = json!(mgf_rows);

    let d = 16;
    let k = SourceKernel::standard_gaussian(d)?;
    let hits = (0..cfg.count)
        .filter(|&j| {
            let x = k.sample_point(cfg.seed.wrapping_add(1), j as u64);
            x.iter().map(|v| v * v).sum::<f64>() / d as f64 >= 2.0
        })
        .count();
    body["chisq_tail"] = json!({
        "s": 2.0,
        "d": d,
        "bound": chisq_tail_bound(2.0, d)?,
        "monte_carlo": hits as f64 / n,
    });
    out.json("bounds.json", body)
}
