//! The adaptive loop: solve, estimate, mark, refine.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::assembly::{apply_dirichlet, assemble, delta_load, PointSource};
use crate::elements::{DofMap, SchemeSpec, StabParams};
use crate::error::{AfemError, Result};
use crate::estimator::{estimate, IndicatorField};
use crate::exact::{stokeslet, weighted_error, StokesletSpec, WeightedError};
use crate::field::DiscreteField;
use crate::mesh::{DomainKind, DomainSpec, Mesh, Point, Vector};
use crate::quadrature::WeightSpec;
use crate::solver::solve_saddle;

pub const DEFAULT_THETA: f64 = 0.5;
pub const DEFAULT_MAX_ITERS: usize = 25;
pub const DEFAULT_NDOF_CAP: usize = 200_000;
pub const DEFAULT_SUBDIVISIONS: usize = 2;
/// Smallest element diameter, relative to the domain diameter, that the loop
/// will create. Below it vertex coordinates near the sources keep too few
/// significant digits for the element geometry.
pub const MIN_RELATIVE_DIAMETER: f64 = 1e-10;

/// Files written by a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OutputPaths {
    pub csv: Option<PathBuf>,
    /// Final mesh.
    pub mesh: Option<PathBuf>,
    /// Indicators on the final mesh.
    pub indicators: Option<PathBuf>,
}

/// A validated experiment description.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub domain: DomainSpec,
    pub scheme: SchemeSpec,
    pub alpha: f64,
    pub sources: Vec<PointSource>,
    pub theta: f64,
    pub max_iters: usize,
    pub ndof_cap: usize,
    /// Impose the Stokeslet of the single source on the boundary and measure
    /// the true error.
    pub exact: bool,
    pub outputs: OutputPaths,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct RawConfig {
    domain: DomainKind,
    #[serde(default)]
    subdivisions: Option<usize>,
    scheme: String,
    alpha: f64,
    sources: Vec<String>,
    #[serde(default)]
    theta: Option<f64>,
    #[serde(default)]
    max_iters: Option<usize>,
    #[serde(default)]
    ndof_cap: Option<usize>,
    #[serde(default)]
    exact: bool,
    #[serde(default)]
    tau_div: Option<f64>,
    #[serde(default)]
    tau_t: Option<f64>,
    #[serde(default)]
    tau_s: Option<f64>,
    #[serde(default)]
    ell: Option<u8>,
    #[serde(default)]
    out_csv: Option<PathBuf>,
    #[serde(default)]
    dump_mesh: Option<PathBuf>,
    #[serde(default)]
    dump_indicators: Option<PathBuf>,
}

fn config_error<T>(msg: impl Into<String>) -> Result<T> {
    Err(AfemError::Config(msg.into()))
}

fn parse_source(line: &str) -> Result<PointSource> {
    let nums: Vec<f64> = line
        .split_whitespace()
        .map(|w| w.parse::<f64>().map_err(|_| AfemError::Config(format!("bad number `{w}` in source `{line}`"))))
        .collect::<Result<_>>()?;
    match nums[..] {
        [x, y, fx, fy] => Ok(PointSource::new(x, y, fx, fy)),
        _ => config_error(format!("source `{line}` must be `x y Fx Fy`")),
    }
}

impl RunConfig {
    /// Parses and validates a TOML configuration.
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| AfemError::Config(e.to_string()))?;
        let domain = DomainSpec::new(raw.domain, raw.subdivisions.unwrap_or(DEFAULT_SUBDIVISIONS))
            .map_err(|e| AfemError::Config(e.to_string()))?;

        let stab_keys = raw.tau_div.is_some() || raw.tau_t.is_some() || raw.tau_s.is_some();
        let scheme = match raw.scheme.as_str() {
            "taylor-hood" | "mini" => {
                if stab_keys || raw.ell.is_some() {
                    return config_error(format!("scheme `{}` takes no stabilization keys", raw.scheme));
                }
                if raw.scheme == "mini" {
                    SchemeSpec::mini()
                } else {
                    SchemeSpec::taylor_hood()
                }
            }
            name @ ("stabilized" | "stab-p1p0" | "stab-p1p1") => {
                let implied = match name {
                    "stab-p1p0" => Some(0),
                    "stab-p1p1" => Some(1),
                    _ => None,
                };
                let ell = match (implied, raw.ell) {
                    (Some(a), Some(b)) if a != b => {
                        return config_error(format!("scheme `{name}` conflicts with ell = {b}"));
                    }
                    (Some(a), _) => a,
                    (None, Some(b)) => b,
                    (None, None) => 0,
                };
                let d = StabParams::default();
                let stab = StabParams {
                    tau_div: raw.tau_div.unwrap_or(d.tau_div),
                    tau_t: raw.tau_t.unwrap_or(d.tau_t),
                    tau_s: raw.tau_s.unwrap_or(d.tau_s),
                };
                SchemeSpec::stabilized(ell, stab).map_err(|e| AfemError::Config(e.to_string()))?
            }
            other => return config_error(format!("unknown scheme `{other}`")),
        };

        let sources = raw.sources.iter().map(|s| parse_source(s)).collect::<Result<Vec<_>>>()?;
        let config = RunConfig {
            domain,
            scheme,
            alpha: raw.alpha,
            sources,
            theta: raw.theta.unwrap_or(DEFAULT_THETA),
            max_iters: raw.max_iters.unwrap_or(DEFAULT_MAX_ITERS),
            ndof_cap: raw.ndof_cap.unwrap_or(DEFAULT_NDOF_CAP),
            exact: raw.exact,
            outputs: OutputPaths { csv: raw.out_csv, mesh: raw.dump_mesh, indicators: raw.dump_indicators },
        };
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return config_error(format!("theta = {} is outside (0, 1]", self.theta));
        }
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return config_error(format!("alpha = {} is outside (0, 2)", self.alpha));
        }
        if self.sources.is_empty() {
            return config_error("at least one source is required");
        }
        if self.max_iters == 0 {
            return config_error("max-iters must be positive");
        }
        if self.exact && self.sources.len() != 1 {
            return config_error("the exact solution is available for a single source only");
        }
        self.weight().map_err(|e| AfemError::Config(e.to_string()))?;
        Ok(())
    }

    /// `|x - z|^alpha` for one source, the piecewise weight otherwise.
    pub fn weight(&self) -> Result<WeightSpec> {
        WeightSpec::for_sources(self.alpha, self.sources.iter().map(|s| s.z).collect(), &self.domain)
    }
}

/// One row per adaptive iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub ndof: usize,
    pub estimator: f64,
    pub error: Option<WeightedError>,
    pub eoc_estimator: Option<f64>,
    pub eoc_error: Option<f64>,
}

impl IterationRecord {
    /// Estimator over total error.
    pub fn effectivity(&self) -> Option<f64> {
        self.error.map(|e| self.estimator / e.total)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<IterationRecord>,
}

pub const CSV_HEADER: [&str; 9] =
    ["iter", "ndof", "estimator", "err_u", "err_p", "err_total", "eoc_est", "eoc_err", "effectivity"];

impl ConvergenceTable {
    fn push(&mut self, row: IterationRecord) {
        if let Some(last) = self.rows.last() {
            assert!(row.ndof > last.ndof, "Ndof must increase");
        }
        self.rows.push(row);
        let rates = compute_rates(self);
        let last = self.rows.last_mut().unwrap();
        let (est, err) = *rates.last().unwrap();
        last.eoc_estimator = est;
        last.eoc_error = err;
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| AfemError::Io(std::io::Error::other(e));
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.iteration.to_string(),
                r.ndof.to_string(),
                r.estimator.to_string(),
                opt(r.error.map(|e| e.err_u)),
                opt(r.error.map(|e| e.err_p)),
                opt(r.error.map(|e| e.total)),
                opt(r.eoc_estimator),
                opt(r.eoc_error),
                opt(r.effectivity()),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| AfemError::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Elements with `eta_T > theta * max eta`.
pub fn mark(field: &IndicatorField, theta: f64) -> Vec<usize> {
    assert!(theta > 0.0 && theta <= 1.0, "theta = {theta} is outside (0, 1]");
    let threshold = theta * field.max();
    field.values().iter().enumerate().filter(|(_, &eta)| eta > threshold).map(|(t, _)| t).collect()
}

/// Rate between two `(Ndof, quantity)` pairs; `None` when a quantity is not
/// positive.
pub fn rate(n0: usize, q0: f64, n1: usize, q1: f64) -> Option<f64> {
    (q0 > 0.0 && q1 > 0.0 && n1 != n0).then(|| -(q1 / q0).ln() / (n1 as f64 / n0 as f64).ln())
}

/// `(estimator EOC, error EOC)` of every row; the first row has none.
pub fn compute_rates(table: &ConvergenceTable) -> Vec<(Option<f64>, Option<f64>)> {
    let mut out = vec![(None, None); table.rows.len()];
    for k in 1..table.rows.len() {
        let (a, b) = (&table.rows[k - 1], &table.rows[k]);
        let est = rate(a.ndof, a.estimator, b.ndof, b.estimator);
        let err = match (a.error, b.error) {
            (Some(ea), Some(eb)) => rate(a.ndof, ea.total, b.ndof, eb.total),
            _ => None,
        };
        out[k] = (est, err);
    }
    out
}

/// Why the loop ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    NothingMarked,
    NdofCap,
    /// The next mesh would contain an element below [`MIN_RELATIVE_DIAMETER`].
    Resolution,
}

/// Everything a finished run produced.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub table: ConvergenceTable,
    /// Last mesh on which the problem was solved.
    pub mesh: Mesh,
    pub indicators: IndicatorField,
    pub stop: StopReason,
}

/// Runs the adaptive loop and returns the convergence table.
pub fn run_afem(config: &RunConfig) -> Result<ConvergenceTable> {
    Ok(run_afem_detailed(config)?.table)
}

/// Runs the adaptive loop and writes the configured output files.
pub fn run_afem_detailed(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let weight = config.weight()?;
    let exact = config.exact.then(|| StokesletSpec { z: config.sources[0].z, force: config.sources[0].force });
    let family = config.scheme.family;

    let mut mesh = Mesh::initial(&config.domain);
    if DofMap::count(family, &mesh) > config.ndof_cap {
        return config_error("the initial mesh already exceeds the Ndof cap");
    }
    let mut table = ConvergenceTable::default();
    let mut iteration = 0;
    let (indicators, stop) = loop {
        let step = solve_and_estimate(config, &mesh, &weight, exact.as_ref()).map_err(|e| {
            let dump = failure_dump(config, &mesh, iteration);
            log::error!("iteration {iteration} failed; mesh written to {}", dump.display());
            AfemError::Iteration { iteration, source: Box::new(e) }
        })?;
        let (ndof, indicators, error) = step;
        table.push(IterationRecord {
            iteration,
            ndof,
            estimator: indicators.global(),
            error,
            eoc_estimator: None,
            eoc_error: None,
        });
        log::info!(
            "iter {iteration}: ndof {ndof}, estimator {:.4e}{}",
            indicators.global(),
            error.map(|e| format!(", error {:.4e}", e.total)).unwrap_or_default()
        );

        if iteration + 1 >= config.max_iters {
            break (indicators, StopReason::MaxIterations);
        }
        let marked = mark(&indicators, config.theta);
        if marked.is_empty() {
            break (indicators, StopReason::NothingMarked);
        }
        let next = mesh.bisect(&marked)?;
        if DofMap::count(family, &next) > config.ndof_cap {
            break (indicators, StopReason::NdofCap);
        }
        let h_min = (0..next.num_elements()).map(|t| next.diameter(t)).fold(f64::INFINITY, f64::min);
        if h_min < MIN_RELATIVE_DIAMETER * config.domain.diameter() {
            break (indicators, StopReason::Resolution);
        }
        mesh = next;
        iteration += 1;
    };

    write_outputs(config, &table, &mesh, &indicators)?;
    Ok(RunOutcome { table, mesh, indicators, stop })
}

fn solve_and_estimate(
    config: &RunConfig,
    mesh: &Mesh,
    weight: &WeightSpec,
    exact: Option<&StokesletSpec>,
) -> Result<(usize, IndicatorField, Option<WeightedError>)> {
    let scheme = &config.scheme;
    let clock = std::time::Instant::now();
    let dofs = DofMap::new(scheme, mesh);
    let mut system = assemble(mesh, scheme, &dofs);
    system.load = delta_load(mesh, scheme, &dofs, &config.sources)?;
    let g = match exact {
        Some(spec) => dofs.boundary_values(|x: &Point| stokeslet(spec, x).map(|(u, _)| u).unwrap_or(Vector::zeros())),
        None => vec![0.0; dofs.boundary_velocity_dofs().len()],
    };
    let constrained = apply_dirichlet(&system, &dofs, &g)?;
    let assembled = clock.elapsed();
    let solution = solve_saddle(&constrained)?;
    let solved = clock.elapsed();
    let field = DiscreteField::new(mesh, scheme, &dofs, &solution);
    let indicators = estimate(&field, weight, &config.sources);
    let estimated = clock.elapsed();
    let error = exact.map(|spec| weighted_error(&field, spec, weight));
    log::debug!(
        "assembly {:?}, solve {:?}, estimate {:?}, error {:?}",
        assembled,
        solved - assembled,
        estimated - solved,
        clock.elapsed() - estimated
    );
    Ok((dofs.ndof(), indicators, error))
}

fn failure_dump(config: &RunConfig, mesh: &Mesh, iteration: usize) -> PathBuf {
    let path = match &config.outputs.mesh {
        Some(p) => p.with_extension(format!("failed-{iteration}.txt")),
        None => std::env::temp_dir().join(format!("afem-failed-{iteration}.mesh")),
    };
    if let Err(e) = std::fs::write(&path, mesh.dump()) {
        log::error!("could not write {}: {e}", path.display());
    }
    path
}

fn write_outputs(config: &RunConfig, table: &ConvergenceTable, mesh: &Mesh, indicators: &IndicatorField) -> Result<()> {
    let out = &config.outputs;
    if let Some(p) = &out.csv {
        std::fs::write(p, table.to_csv()?)?;
    }
    if let Some(p) = &out.mesh {
        std::fs::write(p, mesh.dump())?;
    }
    if let Some(p) = &out.indicators {
        std::fs::write(p, indicators.dump())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elements::Family;

    fn field(values: Vec<f64>) -> IndicatorField {
        IndicatorField::new(values, Family::TaylorHood, WeightSpec::single(1.0, Point::new(0.5, 0.5)))
    }

    #[test]
    fn marking_examples() {
        assert_eq!(mark(&field(vec![1.0, 0.6, 0.4]), 0.5), vec![0, 1]);
        assert!(mark(&field(vec![0.0; 4]), 0.5).is_empty());
        assert_eq!(mark(&field(vec![2.0; 3]), 0.5), vec![0, 1, 2]);
        assert_eq!(mark(&field(vec![1.0, 0.999]), 1.0), Vec::<usize>::new());
    }

    #[test]
    fn rate_examples() {
        let c = 3.7;
        assert!((rate(100, c / 100.0, 200, c / 200.0).unwrap() - 1.0).abs() < 1e-14);
        assert!((rate(100, c / 10.0, 400, c / 20.0).unwrap() - 0.5).abs() < 1e-14);
        assert_eq!(rate(100, 2.0, 300, 2.0), Some(0.0));
        assert_eq!(rate(100, 0.0, 300, 2.0), None);
    }

    fn config(text: &str) -> Result<RunConfig> {
        RunConfig::from_toml(text)
    }

    const EXAMPLE: &str = r#"
        domain = "unit-square"
        scheme = "taylor-hood"
        alpha = 1.5
        sources = ["0.5 0.5 1 1"]
    "#;

    #[test]
    fn parses_defaults() {
        let c = config(EXAMPLE).unwrap();
        assert_eq!(c.theta, 0.5);
        assert_eq!(c.max_iters, 25);
        assert_eq!(c.ndof_cap, 200_000);
        assert_eq!(c.sources, vec![PointSource::new(0.5, 0.5, 1.0, 1.0)]);
        assert!(!c.exact);
    }

    #[test]
    fn stabilized_keys() {
        let c = config(
            r#"
            domain = "l-shape"
            scheme = "stabilized"
            ell = 1
            tau-t = 0.1
            alpha = 1.0
            sources = ["-0.5 0.5 1 0"]
        "#,
        )
        .unwrap();
        assert_eq!(c.scheme.family, Family::StabP1P1);
        assert_eq!(c.scheme.stab.unwrap().tau_s, 1.0 / 12.0);
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            EXAMPLE.replace("1.5", "2.0"),
            EXAMPLE.replace("1.5", "0.0"),
            format!("{EXAMPLE}theta = 0.0\n"),
            format!("{EXAMPLE}theta = 1.5\n"),
            format!("{EXAMPLE}tau-s = 0.1\n"),
            format!("{EXAMPLE}colour = 1\n"),
            EXAMPLE.replace("0.5 0.5 1 1", "0.5 0.5 1"),
            EXAMPLE.replace("0.5 0.5 1 1", "1.0 0.5 1 1"),
            EXAMPLE.replace("taylor-hood", "stab-p1p1"),
            EXAMPLE.replace("\"0.5 0.5 1 1\"", "\"0.25 0.25 1 1\", \"0.75 0.75 1 1\"") + "exact = true\n",
        ];
        for text in &bad {
            assert!(matches!(config(text), Err(AfemError::Config(_))), "accepted:\n{text}");
        }
    }

    #[test]
    fn csv_has_empty_error_fields_without_exact_solution() {
        let mut c = config(EXAMPLE).unwrap();
        c.max_iters = 2;
        let table = run_afem(&c).unwrap();
        let csv = table.to_csv().unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first.len(), 9);
        assert_eq!(first[0], "0");
        assert!(first[3..].iter().all(|f| f.is_empty()));
        let second: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert!(!second[6].is_empty() && second[7].is_empty());
    }

    #[test]
    fn zero_force_stops_after_first_iteration() {
        let c = config(&EXAMPLE.replace("0.5 0.5 1 1", "0.5 0.5 0 0")).unwrap();
        let out = run_afem_detailed(&c).unwrap();
        assert_eq!(out.table.rows.len(), 1);
        assert_eq!(out.table.rows[0].estimator, 0.0);
        assert_eq!(out.stop, StopReason::NothingMarked);
    }

    #[test]
    fn ndof_cap_stops_the_loop() {
        let mut c = config(EXAMPLE).unwrap();
        c.ndof_cap = 400;
        let out = run_afem_detailed(&c).unwrap();
        assert_eq!(out.stop, StopReason::NdofCap);
        assert!(out.table.rows.iter().all(|r| r.ndof <= 400));
        c.ndof_cap = 10;
        assert!(run_afem(&c).is_err());
    }
}
