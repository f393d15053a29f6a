//! Correlation sweeps over cutoff, measurement count, noise and method.
//!
//! A sweep is a list of cells `(ν, m, noise, method, repetition)`. Each cell
//! reconstructs one randomly chosen digit of every class and yields ten
//! [`CorrelationRecord`]s. Measurement seeds do not depend on the method, so
//! every method of a `(ν, m, noise, rep, digit)` case sees the same `A` and `y`.

use std::cmp::Ordering;
use std::fmt;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{pick_one_per_class, LabeledSample};
use crate::error::{Error, Result};
use crate::forward::simulate;
use crate::generator::GeneratorModel;
use crate::image::GrayImage;
use crate::l1::{delta_grid, solve_bp, tune_delta, BpdnConfig};
use crate::recon::{reconstruct, ReconConfig};
use crate::seed::{self, Stream};
use crate::speckle::{diffraction_limited_image, validate_cutoff};

pub use crate::metrics::pearson;

pub const CSV_HEADER: &str = "nu,m,noise,method,digit,rep,r,converged";
pub const AGGREGATE_HEADER: &str = "nu,m,noise,method,mean_r,std_r,count,undefined";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Bp,
    Bpdn,
    Gan,
    Diffraction,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Bp, Method::Bpdn, Method::Gan, Method::Diffraction];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Bp => "bp",
            Method::Bpdn => "bpdn",
            Method::Gan => "gan",
            Method::Diffraction => "diffraction",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::arg(format!("unknown method '{s}' (expected bp, bpdn, gan or diffraction)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRecord {
    pub nu: f64,
    pub m: usize,
    pub noise: f64,
    pub method: Method,
    pub digit: u8,
    pub rep: usize,
    /// `None` when the correlation is undefined or the pipeline failed.
    pub r: Option<f64>,
    pub converged: bool,
}

impl CorrelationRecord {
    /// A row whose pipeline raised an error rather than producing an estimate.
    pub fn is_failure(&self) -> bool {
        self.r.is_none() && !self.converged
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub nus: Vec<f64>,
    pub ms: Vec<usize>,
    pub noises: Vec<f64>,
    pub methods: Vec<Method>,
    pub repetitions: usize,
    pub seed: u64,
    pub recon: ReconConfig,
    pub solver: BpdnConfig,
    /// Size of the log-spaced δ grid searched by BPDN cells.
    pub delta_points: usize,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            nus: vec![0.1, 0.2, 0.3, 0.5, 0.7],
            ms: vec![10, 40, 70, 100, 200, 300, 400, 500, 750],
            noises: vec![0.0, 0.05, 0.10, 0.20],
            methods: Method::ALL.to_vec(),
            repetitions: 1,
            seed: 0,
            recon: ReconConfig::default(),
            solver: BpdnConfig::default(),
            delta_points: 8,
        }
    }
}

impl SweepGrid {
    /// Simulated analog of the five-repetition measurement-count study.
    pub fn repeated_counts() -> Self {
        Self {
            ms: vec![10, 40, 70, 100, 200, 300, 400, 750],
            noises: vec![0.0],
            repetitions: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nus.is_empty() || self.ms.is_empty() || self.noises.is_empty() || self.methods.is_empty() {
            return Err(Error::arg("sweep grid lists must be non-empty"));
        }
        if self.repetitions == 0 {
            return Err(Error::arg("repetitions must be at least 1"));
        }
        for &nu in &self.nus {
            validate_cutoff(nu)?;
        }
        if self.ms.contains(&0) {
            return Err(Error::arg("measurement counts must be positive"));
        }
        if let Some(n) = self.noises.iter().find(|n| !(**n >= 0.0 && n.is_finite())) {
            return Err(Error::arg(format!("noise level {n} must be finite and >= 0")));
        }
        if self.methods.contains(&Method::Bpdn) && self.delta_points == 0 {
            return Err(Error::arg("bpdn needs at least one delta grid point"));
        }
        Ok(())
    }

    /// All cells in canonical order: ν, m, noise, method, repetition.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &nu in &self.nus {
            for &m in &self.ms {
                for &noise in &self.noises {
                    for &method in &self.methods {
                        for rep in 0..self.repetitions {
                            cells.push(Cell {
                                nu,
                                m,
                                noise,
                                method,
                                rep,
                            });
                        }
                    }
                }
            }
        }
        cells
    }

    /// `|ν|·|m|·|noise|·|methods|·10·repetitions`.
    pub fn expected_records(&self) -> usize {
        self.nus.len() * self.ms.len() * self.noises.len() * self.methods.len() * 10 * self.repetitions
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub nu: f64,
    pub m: usize,
    pub noise: f64,
    pub method: Method,
    pub rep: usize,
}

impl Cell {
    /// File-name-safe identifier, used for completion markers.
    pub fn key(&self) -> String {
        format!(
            "{}_nu{}_m{}_noise{}_rep{}",
            self.method, self.nu, self.m, self.noise, self.rep
        )
    }

    /// Seed of the `(ν, m, noise, rep, digit)` case, shared by every method.
    pub fn case_seed(&self, master: u64, digit: u8) -> u64 {
        seed::derive(
            master,
            &[
                self.nu.to_bits(),
                self.m as u64,
                self.noise.to_bits(),
                self.rep as u64,
                u64::from(digit),
            ],
        )
    }

    pub fn image_name(&self, digit: u8) -> String {
        let rep = if self.rep == 0 {
            String::new()
        } else {
            format!("_rep{}", self.rep)
        };
        format!(
            "{}_nu{}_m{}_noise{}_d{digit}{rep}.png",
            self.method, self.nu, self.m, self.noise
        )
    }
}

/// Inputs shared by every cell of a sweep.
pub struct SweepContext<'a> {
    pub model: Option<&'a GeneratorModel>,
    /// One sample per class, per repetition.
    pub picks: Vec<Vec<LabeledSample>>,
    pub image_dir: Option<PathBuf>,
}

impl<'a> SweepContext<'a> {
    pub fn new(grid: &SweepGrid, model: Option<&'a GeneratorModel>, samples: &[LabeledSample]) -> Result<Self> {
        grid.validate()?;
        if grid.methods.contains(&Method::Gan) && model.is_none() {
            return Err(Error::MissingArtifact("the gan method needs generator weights".into()));
        }
        let picks = (0..grid.repetitions)
            .map(|rep| pick_one_per_class(samples, seed::derive(grid.seed, &[Stream::Selection as u64, rep as u64])))
            .collect::<Result<Vec<_>>>()?;
        if let (Some(model), Some(first)) = (model, picks.first().and_then(|p| p.first())) {
            if model.output_len() != first.image.len() {
                return Err(Error::Shape(format!(
                    "generator emits {} pixels, dataset images have {}",
                    model.output_len(),
                    first.image.len()
                )));
            }
        }
        Ok(Self {
            model,
            picks,
            image_dir: None,
        })
    }
}

/// Reconstruction and its convergence flag for one digit.
fn run_case(grid: &SweepGrid, ctx: &SweepContext<'_>, cell: &Cell, digit: u8, truth: &GrayImage) -> Result<(GrayImage, bool)> {
    if cell.method == Method::Diffraction {
        // Independent of m and of measurement noise.
        return Ok((diffraction_limited_image(truth, cell.nu)?, true));
    }
    let seed = cell.case_seed(grid.seed, digit);
    let acq = simulate(truth, cell.m, cell.nu, cell.noise, seed)?;
    let y = acq.signal.values();
    let side = truth.width();
    match cell.method {
        Method::Bp => {
            let report = solve_bp(&acq.matrix, y, &grid.solver)?;
            Ok((GrayImage::new(side, side, report.solution)?, report.converged))
        }
        Method::Bpdn => {
            let choice = tune_delta(&acq.matrix, y, truth, &delta_grid(y, grid.delta_points), &grid.solver)?;
            Ok((GrayImage::new(side, side, choice.report.solution)?, choice.report.converged))
        }
        Method::Gan => {
            let model = ctx
                .model
                .ok_or_else(|| Error::MissingArtifact("the gan method needs generator weights".into()))?;
            let cfg = ReconConfig {
                seed: seed::derive(seed, &[Stream::Latent as u64]),
                ..grid.recon.clone()
            };
            let res = reconstruct(model, &acq.matrix, y, &cfg)?;
            Ok((res.image, true))
        }
        Method::Diffraction => unreachable!(),
    }
}

/// Run one cell: ten records ordered by digit class.
pub fn run_cell(grid: &SweepGrid, ctx: &SweepContext<'_>, cell: &Cell) -> Result<Vec<CorrelationRecord>> {
    let picks = ctx
        .picks
        .get(cell.rep)
        .ok_or_else(|| Error::arg(format!("repetition {} outside the grid", cell.rep)))?;
    let mut records = Vec::with_capacity(picks.len());
    for sample in picks {
        let record = |r, converged| CorrelationRecord {
            nu: cell.nu,
            m: cell.m,
            noise: cell.noise,
            method: cell.method,
            digit: sample.label,
            rep: cell.rep,
            r,
            converged,
        };
        match run_case(grid, ctx, cell, sample.label, &sample.image) {
            Ok((image, converged)) => {
                if let Some(dir) = &ctx.image_dir {
                    image.clipped().save_png(&dir.join(cell.image_name(sample.label)))?;
                }
                records.push(record(pearson(image.pixels(), sample.image.pixels()), converged));
            }
            Err(e @ (Error::Io { .. } | Error::MissingArtifact(_))) => return Err(e),
            Err(e) => {
                log::warn!("{} digit {} failed: {e}", cell.key(), sample.label);
                records.push(record(None, false));
            }
        }
    }
    Ok(records)
}

/// Run `cells` in parallel. `on_done` is called once per finished cell, in
/// completion order; the returned vector follows the order of `cells`.
pub fn run_cells<F>(grid: &SweepGrid, ctx: &SweepContext<'_>, cells: &[Cell], on_done: F) -> Result<Vec<Vec<CorrelationRecord>>>
where
    F: Fn(&Cell, &[CorrelationRecord]) -> Result<()> + Sync,
{
    let done = AtomicUsize::new(0);
    cells
        .par_iter()
        .map(|cell| {
            let records = run_cell(grid, ctx, cell)?;
            on_done(cell, &records)?;
            let n = done.fetch_add(1, AtomicOrdering::Relaxed) + 1;
            log::info!("[{n}/{}] {}", cells.len(), cell.key());
            Ok(records)
        })
        .collect()
}

/// Every cell of `grid`, flattened in canonical order.
pub fn run_sweep(grid: &SweepGrid, model: Option<&GeneratorModel>, samples: &[LabeledSample]) -> Result<Vec<CorrelationRecord>> {
    let ctx = SweepContext::new(grid, model, samples)?;
    let per_cell = run_cells(grid, &ctx, &grid.cells(), |_, _| Ok(()))?;
    Ok(per_cell.into_iter().flatten().collect())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn records_to_csv(records: &[CorrelationRecord]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.nu,
            r.m,
            r.noise,
            r.method,
            r.digit,
            r.rep,
            fmt_opt(r.r),
            r.converged
        );
    }
    out
}

fn field<T: FromStr>(value: &str, name: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Format(format!("line {line}: bad {name} '{value}'")))
}

/// Parse a records CSV written by [`records_to_csv`].
pub fn parse_records_csv(text: &str) -> Result<Vec<CorrelationRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        other => {
            return Err(Error::Format(format!(
                "expected header '{CSV_HEADER}', found {:?}",
                other.map(|(_, h)| h)
            )))
        }
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let line_no = i + 1;
            let f: Vec<&str> = line.trim().split(',').collect();
            let [nu, m, noise, method, digit, rep, r, converged] = f[..] else {
                return Err(Error::Format(format!("line {line_no}: expected 8 fields")));
            };
            Ok(CorrelationRecord {
                nu: field(nu, "nu", line_no)?,
                m: field(m, "m", line_no)?,
                noise: field(noise, "noise", line_no)?,
                method: method.parse()?,
                digit: field(digit, "digit", line_no)?,
                rep: field(rep, "rep", line_no)?,
                r: if r.is_empty() { None } else { Some(field(r, "r", line_no)?) },
                converged: field(converged, "converged", line_no)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub nu: f64,
    pub m: usize,
    pub noise: f64,
    pub method: Method,
    /// `None` when every record of the group is undefined.
    pub mean: Option<f64>,
    /// Population standard deviation over defined records.
    pub std: Option<f64>,
    pub count: usize,
    pub undefined: usize,
}

fn group_order(a: &CorrelationRecord, b: &CorrelationRecord) -> Ordering {
    a.method
        .cmp(&b.method)
        .then(a.nu.total_cmp(&b.nu))
        .then(a.m.cmp(&b.m))
        .then(a.noise.total_cmp(&b.noise))
}

/// Mean and standard deviation of r per `(ν, m, noise, method)`.
///
/// Groups come out sorted by method, ν, m, noise. Values are summed in sorted
/// order, so the result does not depend on the order of `records`.
pub fn aggregate(records: &[CorrelationRecord]) -> Vec<AggregateRow> {
    let mut sorted: Vec<&CorrelationRecord> = records.iter().collect();
    sorted.sort_by(|a, b| group_order(a, b));
    sorted
        .chunk_by(|a, b| group_order(a, b) == Ordering::Equal)
        .map(|group| {
            let mut rs: Vec<f64> = group.iter().filter_map(|r| r.r).collect();
            rs.sort_by(f64::total_cmp);
            let n = rs.len();
            let (mean, std) = if n == 0 {
                (None, None)
            } else {
                let mean = rs.iter().sum::<f64>() / n as f64;
                let var = rs.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n as f64;
                (Some(mean), Some(var.sqrt()))
            };
            let first = group[0];
            AggregateRow {
                nu: first.nu,
                m: first.m,
                noise: first.noise,
                method: first.method,
                mean,
                std,
                count: n,
                undefined: group.len() - n,
            }
        })
        .collect()
}

pub fn aggregate_to_csv(rows: &[AggregateRow]) -> String {
    let mut out = format!("{AGGREGATE_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.nu,
            r.m,
            r.noise,
            r.method,
            fmt_opt(r.mean),
            fmt_opt(r.std),
            r.count,
            r.undefined
        );
    }
    out
}

/// Measurement count of conventional pixel-by-pixel imaging: `m = n`.
pub fn nyquist_line(n: usize) -> usize {
    assert!(n >= 1, "image must have at least one pixel");
    n
}

pub fn is_sub_nyquist(m: usize, n: usize) -> bool {
    m < nyquist_line(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(method: Method, r: Option<f64>) -> CorrelationRecord {
        CorrelationRecord {
            nu: 0.2,
            m: 100,
            noise: 0.0,
            method,
            digit: 3,
            rep: 0,
            r,
            converged: true,
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("lasso".parse::<Method>().is_err());
    }

    #[test]
    fn default_cardinalities() {
        let g = SweepGrid::default();
        assert_eq!(g.cells().len(), 5 * 9 * 4 * 4);
        let noiseless = SweepGrid {
            noises: vec![0.0],
            methods: vec![Method::Bp, Method::Gan, Method::Diffraction],
            ..SweepGrid::default()
        };
        assert_eq!(noiseless.expected_records(), 5 * 9 * 10 * 3);
        assert_eq!(SweepGrid::repeated_counts().cells().len(), 5 * 8 * 4 * 5);
    }

    #[test]
    fn grid_validation() {
        assert!(SweepGrid::default().validate().is_ok());
        for bad in [
            SweepGrid { nus: vec![], ..SweepGrid::default() },
            SweepGrid { nus: vec![1.5], ..SweepGrid::default() },
            SweepGrid { ms: vec![0], ..SweepGrid::default() },
            SweepGrid { noises: vec![-0.1], ..SweepGrid::default() },
            SweepGrid { repetitions: 0, ..SweepGrid::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn aggregate_hand_computed() {
        let records = vec![
            rec(Method::Bp, Some(0.5)),
            rec(Method::Bp, Some(0.7)),
            rec(Method::Bp, Some(0.9)),
            rec(Method::Bp, None),
        ];
        let rows = aggregate(&records);
        assert_eq!(rows.len(), 1);
        assert!((rows[0].mean.unwrap() - 0.7).abs() < 1e-15);
        assert!((rows[0].std.unwrap() - (0.08f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!((rows[0].count, rows[0].undefined), (3, 1));

        let single = aggregate(&[rec(Method::Gan, Some(0.42))]);
        assert_eq!((single[0].mean, single[0].std), (Some(0.42), Some(0.0)));
        let all_undefined = aggregate(&[rec(Method::Gan, None)]);
        assert_eq!(all_undefined[0].mean, None);
    }

    #[test]
    fn csv_round_trip() {
        let records = vec![rec(Method::Bpdn, Some(0.123456789)), rec(Method::Diffraction, None)];
        let text = records_to_csv(&records);
        assert!(text.starts_with(CSV_HEADER));
        assert_eq!(parse_records_csv(&text).unwrap(), records);
        assert!(parse_records_csv("nu,m\n").is_err());
    }

    #[test]
    fn nyquist() {
        assert_eq!(nyquist_line(784), 784);
        assert_eq!(nyquist_line(4), 4);
        assert!(is_sub_nyquist(70, 784));
        assert!(!is_sub_nyquist(784, 784));
    }

    #[test]
    fn image_names() {
        let cell = Cell {
            nu: 0.2,
            m: 100,
            noise: 0.05,
            method: Method::Gan,
            rep: 0,
        };
        assert_eq!(cell.image_name(3), "gan_nu0.2_m100_noise0.05_d3.png");
        assert_eq!(Cell { rep: 2, ..cell }.image_name(3), "gan_nu0.2_m100_noise0.05_d3_rep2.png");
    }
}
