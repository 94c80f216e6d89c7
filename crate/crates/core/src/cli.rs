//! Command-line front end: configuration files, matrix stream files and the
//! subcommands of the `knn-qcd` binary.

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::corrstats::{summary_statistic, DataMatrix};
use crate::datagen::{self, StreamSpec};
use crate::error::{Error, Result};
use crate::glr::{threshold_for_mtfa, ExpFamily, GaussianMean, GlrConfig, GlrDetector, VFamily};
use crate::harness::{self, fmt_sig, Mode, RunConfig, RunSettings};
use crate::misspec::{self, FamilyMember, ParametricBand};
use crate::svg::{self, Series};
use crate::vmaxfam::{self, FamilyParams, JParam};

/// Exit code when the detector declared a change.
pub const EXIT_STOPPED: i32 = 2;
/// Exit code for any error.
pub const EXIT_ERROR: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "knn-qcd", version, about = "Quickest detection of changes in maximal kNN coherence")]
pub struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file (stdout when omitted).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Also write an SVG chart next to `--out`.
    #[arg(long, global = true)]
    pub svg: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the detector over a matrix stream file.
    Detect {
        /// JSON-lines matrix stream.
        input: PathBuf,
    },
    /// Threshold sweep of delay and false-alarm time.
    Simulate {
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
    },
    /// Tilted-integral table and its roots.
    Kappa,
    /// False-alarm and delay bounds as JSON.
    Bounds,
    /// Density and distribution function of the statistic over a grid.
    Density {
        /// Parameter value (overrides the config).
        #[arg(long)]
        j: Option<f64>,
    },
    /// Write a matrix stream file from the stream section.
    Gen {
        /// Number of matrices.
        #[arg(long, default_value_t = 100)]
        steps: u64,
    },
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    match s {
        "statistic_level" => Ok(Mode::StatisticLevel),
        "matrix_level" => Ok(Mode::MatrixLevel),
        _ => Err(format!("unknown mode {s:?}; expected statistic_level or matrix_level")),
    }
}

/// Which exponential family a misspecification analysis uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    #[default]
    VFamily,
    Gaussian,
}

fn default_kappa_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 * 0.1).collect()
}

/// The `kappa` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KappaSettings {
    #[serde(default)]
    pub model: Model,
    /// Parameter of the true pre-change law.
    pub true_theta0: f64,
    /// Alternatives to tabulate.
    pub theta_values: Vec<f64>,
    #[serde(default = "default_kappa_grid")]
    pub kappa_grid: Vec<f64>,
}

/// The `bounds` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSettings {
    #[serde(default)]
    pub model: Model,
    /// Parameter of the true pre-change law.
    pub true_theta0: f64,
    /// Parameter of the true post-change law.
    pub true_theta1: f64,
    /// Radius of a band of pre-change laws around the nominal one.
    #[serde(default)]
    pub band_radius: Option<f64>,
    /// Target mean time to false alarm for threshold selection.
    #[serde(default)]
    pub beta: Option<f64>,
}

fn default_density_j() -> f64 {
    1.0
}

fn default_density_points() -> usize {
    200
}

/// The `density` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySettings {
    #[serde(default = "default_density_j")]
    pub j: f64,
    #[serde(default = "default_density_points")]
    pub points: usize,
}

impl Default for DensitySettings {
    fn default() -> Self {
        Self { j: default_density_j(), points: default_density_points() }
    }
}

/// A configuration file. Every section is optional; each subcommand checks
/// for the ones it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub family: Option<FamilyParams>,
    #[serde(default)]
    pub glr: Option<GlrConfig>,
    #[serde(default)]
    pub stream: Option<StreamSpec>,
    #[serde(default)]
    pub run: Option<RunSettings>,
    #[serde(default)]
    pub kappa: Option<KappaSettings>,
    #[serde(default)]
    pub bounds: Option<BoundsSettings>,
    #[serde(default)]
    pub density: Option<DensitySettings>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    fn family(&self) -> Result<FamilyParams> {
        self.family.ok_or_else(|| Error::config("missing family section"))
    }

    fn glr(&self) -> Result<GlrConfig> {
        self.glr.ok_or_else(|| Error::config("missing glr section"))
    }

    fn stream(&self) -> Result<&StreamSpec> {
        self.stream.as_ref().ok_or_else(|| Error::config("missing stream section"))
    }
}

/// One line of a matrix stream file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixRecord {
    pub m: u64,
    pub n: usize,
    pub p: usize,
    pub rows: Vec<Vec<f64>>,
}

impl MatrixRecord {
    pub fn from_matrix(m: u64, x: &DataMatrix) -> Self {
        Self { m, n: x.n(), p: x.p(), rows: x.rows().map(<[f64]>::to_vec).collect() }
    }
}

/// Reads a matrix stream file, checking indices and shapes line by line.
pub struct MatrixStreamReader<R> {
    lines: io::Lines<R>,
    line: usize,
    last_m: u64,
    shape: Option<(usize, usize)>,
}

impl<R: BufRead> MatrixStreamReader<R> {
    pub fn new(reader: R) -> Self {
        Self { lines: reader.lines(), line: 0, last_m: 0, shape: None }
    }

    fn parse(&mut self, text: &str) -> Result<(u64, DataMatrix)> {
        let line = self.line;
        let bad = |msg: String| Error::Input { line, msg };
        let rec: MatrixRecord = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        if self.last_m == 0 && rec.m != 1 {
            return Err(bad(format!("first index must be 1, got {}", rec.m)));
        }
        if rec.m <= self.last_m {
            return Err(bad(format!("index {} does not increase (previous {})", rec.m, self.last_m)));
        }
        match self.shape {
            Some(s) if s != (rec.n, rec.p) => {
                return Err(bad(format!("shape {}x{} differs from earlier {}x{}", rec.n, rec.p, s.0, s.1)));
            }
            _ => self.shape = Some((rec.n, rec.p)),
        }
        if rec.rows.len() != rec.n {
            return Err(bad(format!("{} rows, expected {}", rec.rows.len(), rec.n)));
        }
        if let Some(r) = rec.rows.iter().position(|r| r.len() != rec.p) {
            return Err(bad(format!("row {} has {} entries, expected {}", r + 1, rec.rows[r].len(), rec.p)));
        }
        let x = DataMatrix::from_rows(&rec.rows).map_err(|e| bad(e.to_string()))?;
        self.last_m = rec.m;
        Ok((rec.m, x))
    }
}

impl<R: BufRead> Iterator for MatrixStreamReader<R> {
    type Item = Result<(u64, DataMatrix)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(Error::Input { line: self.line + 1, msg: e.to_string() })),
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            return Some(self.parse(&text));
        }
    }
}

/// Write `bytes` to `path` through a temporary sibling and a rename, so a
/// failed run never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = fs::write(&tmp, bytes).and_then(|_| fs::rename(&tmp, path));
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

fn emit(out: Option<&Path>, bytes: &[u8], stdout: &mut dyn Write) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, bytes),
        None => Ok(stdout.write_all(bytes)?),
    }
}

fn svg_path(cli: &Cli) -> Result<Option<PathBuf>> {
    match (cli.svg, &cli.out) {
        (false, _) => Ok(None),
        (true, Some(out)) => Ok(Some(out.with_extension("svg"))),
        (true, None) => Err(Error::config("--svg needs --out")),
    }
}

fn load_config(cli: &Cli) -> Result<ConfigFile> {
    let path = cli.config.as_ref().ok_or_else(|| Error::config("--config is required"))?;
    ConfigFile::load(path)
}

/// Run a parsed command line; returns the process exit code.
pub fn run(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let result = match &cli.command {
        Command::Detect { input } => cmd_detect(cli, input, stdout),
        Command::Simulate { mode } => cmd_simulate(cli, *mode, stdout, stderr).map(|_| 0),
        Command::Kappa => cmd_kappa(cli, stdout).map(|_| 0),
        Command::Bounds => cmd_bounds(cli, stdout).map(|_| 0),
        Command::Density { j } => cmd_density(cli, *j, stdout).map(|_| 0),
        Command::Gen { steps } => cmd_gen(cli, *steps, stdout).map(|_| 0),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_ERROR
        }
    }
}

/// Parse `args` (including the program name) and run.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli, stdout, stderr),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { 0 };
            let _ = write!(stderr, "{e}");
            code
        }
    }
}

fn cmd_detect(cli: &Cli, input: &Path, stdout: &mut dyn Write) -> Result<i32> {
    let cfg = load_config(cli)?;
    let fp = cfg.family()?;
    let glr = cfg.glr()?;
    let mut det = GlrDetector::new(VFamily::new(fp), glr)?;
    let file = fs::File::open(input).map_err(|e| Error::config(format!("cannot open {}: {e}", input.display())))?;
    let mut trace = String::from("m,v,statistic\n");
    let mut stopped = None;
    for item in MatrixStreamReader::new(BufReader::new(file)) {
        let (m, x) = item?;
        if (x.n(), x.p()) != (fp.n(), fp.p()) {
            return Err(Error::Input {
                line: det.state().observations() + 1,
                msg: format!("matrix is {}x{}, family expects {}x{}", x.n(), x.p(), fp.n(), fp.p()),
            });
        }
        let v = summary_statistic(&x, fp.delta())?;
        let t = det.step(v);
        let stat = det.statistic();
        writeln!(stdout, "m={m} v={} stat={}", fmt_sig(v), fmt_sig(stat))?;
        trace.push_str(&format!("{m},{},{}\n", fmt_sig(v), fmt_sig(stat)));
        if t.is_some() {
            stopped = Some(m);
            break;
        }
    }
    if let Some(out) = &cli.out {
        write_atomic(out, trace.as_bytes())?;
    }
    match stopped {
        Some(m) => {
            writeln!(stdout, "STOP at m={m}")?;
            Ok(EXIT_STOPPED)
        }
        None => {
            let final_stat = if det.state().observations() == 0 { f64::NEG_INFINITY } else { det.statistic() };
            writeln!(stdout, "final_statistic={}", fmt_sig(final_stat))?;
            writeln!(stdout, "NO STOP")?;
            Ok(0)
        }
    }
}

fn cmd_simulate(cli: &Cli, mode: Option<Mode>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let file = load_config(cli)?;
    let mut run = file.run.clone().unwrap_or_default();
    if let Some(m) = mode {
        run.mode = m;
    }
    if let Some(s) = cli.seed {
        run.seed = s;
    }
    let cfg = RunConfig { family: file.family()?, glr: file.glr()?, stream: file.stream.clone(), run };
    let thresholds = if cfg.run.thresholds.is_empty() { vec![cfg.glr.threshold_a] } else { cfg.run.thresholds.clone() };
    let svg_out = svg_path(cli)?;
    let rows = harness::sweep(&cfg, &thresholds)?;

    let mut csv = Vec::new();
    harness::write_tradeoff_csv(&mut csv, &rows)?;
    emit(cli.out.as_deref(), &csv, stdout)?;
    if let Some(path) = svg_out {
        let points = rows.iter().map(|r| (r.mtfa_mean.ln(), r.edd_mean)).collect();
        let name = match rows[0].kl_ij {
            Some(kl) => format!("delay vs log MTFA (1/KL = {:.3})", 1.0 / kl),
            None => "delay vs log MTFA".to_string(),
        };
        let chart = svg::line_chart(
            "Detection trade-off",
            "log mean time to false alarm",
            "mean detection delay",
            &[Series { name, points }],
        );
        write_atomic(&path, chart.as_bytes())?;
    }
    for r in &rows {
        if r.censored_fraction > 0.0 {
            writeln!(
                stderr,
                "warning: A = {}: {:.1}% of false-alarm trials censored; mtfa_mean is a lower estimate",
                r.threshold_a,
                100.0 * r.censored_fraction
            )?;
        }
        if r.edd_censored_fraction > 0.0 {
            writeln!(
                stderr,
                "warning: A = {}: {:.1}% of delay trials censored",
                r.threshold_a,
                100.0 * r.edd_censored_fraction
            )?;
        }
    }
    if let Some(slope) = harness::tradeoff_slope(&rows) {
        writeln!(stderr, "slope of delay vs log MTFA: {slope:.4}")?;
    }
    Ok(())
}

fn cmd_kappa(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    let file = load_config(cli)?;
    let ks = file.kappa.clone().ok_or_else(|| Error::config("missing kappa section"))?;
    let theta0 = file.glr()?.theta0;
    let rows = match ks.model {
        Model::VFamily => {
            let fam = VFamily::new(file.family()?);
            harness::kappa_curve(
                &fam,
                theta0,
                &FamilyMember::new(&fam, ks.true_theta0),
                &ks.theta_values,
                &ks.kappa_grid,
            )?
        }
        Model::Gaussian => harness::kappa_curve(
            &GaussianMean,
            theta0,
            &FamilyMember::new(&GaussianMean, ks.true_theta0),
            &ks.theta_values,
            &ks.kappa_grid,
        )?,
    };
    let mut csv = Vec::new();
    harness::write_kappa_csv(&mut csv, &rows)?;
    emit(cli.out.as_deref(), &csv, stdout)
}

/// The JSON document written by `bounds`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsOutput {
    pub model: Model,
    pub theta0: f64,
    pub epsilon: f64,
    pub true_theta0: f64,
    pub true_theta1: f64,
    pub kappa: misspec::KappaReport,
    /// Closed-form exponent, Gaussian model only.
    pub kappa_g_closed_form: Option<f64>,
    pub bounds: Option<misspec::BoundReport>,
    pub threshold_selection: Option<ThresholdSelection>,
}

/// Thresholds for a target mean time to false alarm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdSelection {
    pub beta: f64,
    /// `log beta`, valid when the pre-change law is known.
    pub known_model: f64,
    /// Smallest threshold whose misspecified lower bound reaches `beta`.
    pub misspecified: Option<f64>,
}

fn bounds_for<F: ExpFamily>(fam: &F, model: Model, glr: &GlrConfig, bs: &BoundsSettings) -> Result<BoundsOutput> {
    let g_pre = FamilyMember::new(fam, bs.true_theta0);
    let g_post = FamilyMember::new(fam, bs.true_theta1);
    let band = bs.band_radius.map(|radius| ParametricBand { radius });
    let kappa = misspec::kappa_report(fam, glr, &g_pre, band.as_ref())?;
    let kappa_g_closed_form = match model {
        Model::Gaussian => {
            let regions = glr.regions(fam)?;
            regions
                .boundaries()
                .into_iter()
                .map(|b| misspec::kappa_gaussian(b, glr.theta0, bs.true_theta0))
                .collect::<Result<Option<Vec<f64>>>>()?
                .map(|ks| ks.into_iter().fold(f64::INFINITY, f64::min))
        }
        Model::VFamily => None,
    };
    let effective = kappa.kappa_star.or(kappa.kappa_g);
    let bounds = effective.map(|k| misspec::bound_report(fam, glr, k, bs.true_theta1, &g_post)).transpose()?;
    let threshold_selection = match bs.beta {
        Some(beta) => {
            let i_min = misspec::i_min(fam, glr)?;
            Some(ThresholdSelection {
                beta,
                known_model: threshold_for_mtfa(beta, None, None)?,
                misspecified: effective.map(|k| threshold_for_mtfa(beta, Some(k), Some(i_min))).transpose()?,
            })
        }
        None => None,
    };
    Ok(BoundsOutput {
        model,
        theta0: glr.theta0,
        epsilon: glr.epsilon,
        true_theta0: bs.true_theta0,
        true_theta1: bs.true_theta1,
        kappa,
        kappa_g_closed_form,
        bounds,
        threshold_selection,
    })
}

fn cmd_bounds(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    let file = load_config(cli)?;
    let bs = file.bounds.clone().ok_or_else(|| Error::config("missing bounds section"))?;
    let glr = file.glr()?;
    let report = match bs.model {
        Model::VFamily => bounds_for(&VFamily::new(file.family()?), bs.model, &glr, &bs)?,
        Model::Gaussian => bounds_for(&GaussianMean, bs.model, &glr, &bs)?,
    };
    let mut json = serde_json::to_vec_pretty(&report)?;
    json.push(b'\n');
    emit(cli.out.as_deref(), &json, stdout)
}

fn cmd_density(cli: &Cli, j: Option<f64>, stdout: &mut dyn Write) -> Result<()> {
    let file = load_config(cli)?;
    let fp = file.family()?;
    let ds = file.density.clone().unwrap_or_default();
    let j = JParam::new(j.unwrap_or(ds.j))?;
    if ds.points < 2 {
        return Err(Error::config("density.points must be at least 2"));
    }
    let mut csv = String::from("rho,pdf,cdf\n");
    let mut curve = Vec::with_capacity(ds.points);
    for i in 1..=ds.points {
        let rho = i as f64 / ds.points as f64;
        let pdf = vmaxfam::pdf_v(&fp, j, rho)?;
        let cdf = vmaxfam::cdf_v(&fp, j, rho)?;
        csv.push_str(&format!("{},{},{}\n", fmt_sig(rho), fmt_sig(pdf), fmt_sig(cdf)));
        curve.push((rho, pdf));
    }
    let svg_out = svg_path(cli)?;
    emit(cli.out.as_deref(), csv.as_bytes(), stdout)?;
    if let Some(path) = svg_out {
        let chart = svg::line_chart(
            "Density of the summary statistic",
            "rho",
            "pdf",
            &[Series { name: format!("J = {}", j.get()), points: curve }],
        );
        write_atomic(&path, chart.as_bytes())?;
    }
    Ok(())
}

fn cmd_gen(cli: &Cli, steps: u64, stdout: &mut dyn Write) -> Result<()> {
    let file = load_config(cli)?;
    let mut spec = file.stream()?.clone();
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    let sampler_owner = datagen::stream(&spec)?;
    let sampler = sampler_owner.sampler();
    let mut buf = Vec::new();
    for m in 1..=steps {
        let x = sampler.matrix(m)?;
        serde_json::to_writer(&mut buf, &MatrixRecord::from_matrix(m, &x))?;
        buf.push(b'\n');
    }
    emit(cli.out.as_deref(), &buf, stdout)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(ConfigFile::parse(r#"{"family": {"n": 10, "p": 100}, "extra": 1}"#).is_err());
        assert!(ConfigFile::parse(r#"{"family": {"n": 10, "p": 100, "q": 1}}"#).is_err());
        assert!(ConfigFile::parse(r#"{"glr": {"theta0": 1, "epsilon": 1.5, "threshold_a": 4, "foo": 0}}"#).is_err());
        assert!(ConfigFile::parse(r#"{"run": {"trials": 3}}"#).is_err());
        let ok = ConfigFile::parse(
            r#"{"family": {"n": 10, "p": 100}, "glr": {"theta0": 1, "epsilon": 1.5, "threshold_a": "inf"}}"#,
        )
        .unwrap();
        assert_eq!(ok.glr.unwrap().threshold_a, f64::INFINITY);
        assert_eq!(ok.family.unwrap().delta(), 1);
    }

    #[test]
    fn stream_reader_checks_lines() {
        let good = "{\"m\":1,\"n\":3,\"p\":2,\"rows\":[[1,2],[2,1],[0,0]]}\n\n{\"m\":2,\"n\":3,\"p\":2,\"rows\":[[1,0],[0,1],[1,1]]}\n";
        let items: Vec<_> = MatrixStreamReader::new(good.as_bytes()).collect();
        assert_eq!(items.len(), 2);
        assert!(items.iter().all(|r| r.is_ok()));

        let cases = [
            "{\"m\":2,\"n\":3,\"p\":2,\"rows\":[[1,2],[2,1],[0,0]]}",
            "{\"m\":1,\"n\":3,\"p\":2,\"rows\":[[1,2],[2,1]]}",
            "{\"m\":1,\"n\":3,\"p\":2,\"rows\":[[1,2],[2,1],[0]]}",
            "{\"m\":1,\"n\":3,\"p\":2,\"rows\":[[1,2],[2,1],[0,0]],\"x\":1}",
            "not json",
        ];
        for c in cases {
            let first = MatrixStreamReader::new(c.as_bytes()).next().unwrap();
            assert!(matches!(first, Err(Error::Input { line: 1, .. })), "{c}");
        }
        let repeat = "{\"m\":1,\"n\":3,\"p\":2,\"rows\":[[1,2],[2,1],[0,0]]}\n{\"m\":1,\"n\":3,\"p\":2,\"rows\":[[1,2],[2,1],[0,0]]}\n";
        let r: Vec<_> = MatrixStreamReader::new(repeat.as_bytes()).collect();
        assert!(matches!(r[1], Err(Error::Input { line: 2, .. })));
    }

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
        assert!(write_atomic(&dir.path().join("missing/x.csv"), b"z").is_err());
    }

    #[test]
    fn mode_flag_values() {
        assert_eq!(parse_mode("matrix_level").unwrap(), Mode::MatrixLevel);
        assert!(parse_mode("fast").is_err());
    }
}
