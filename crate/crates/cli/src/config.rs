//! INI-style experiment configuration.
//!
//! ```text
//! [problem]
//! ; deblur | least_squares | penalty
//! kind = deblur
//! ; or image = observed.pgm
//! synthetic = 32x32
//! ; or kernel = kernel.txt
//! kernel_size = 5
//! kernel_sigma = 1
//! boundary = replicate
//! noise = 0
//!
//! [blocks]
//! ; or sizes = 512,512
//! count = 4
//! probabilities = uniform
//!
//! [schedule]
//! ; or a = ... and b = ...
//! delta = 0.25
//! r = 0.5
//! ; omit both for γ0 = η0 = sqrt(0.5·d/μ)
//! gamma0 = 0.9
//! eta0 = 0.001
//!
//! [run]
//! iterations = 100000
//! seed = 1
//! ; or a comma list
//! checkpoints = default
//! snapshots = 100,1000
//!
//! [mode]
//! ; rbirg | full_irg | two_loop
//! mode = rbirg
//!
//! [two_loop]
//! etas = 1,0.1,0.01
//! inner_iterations = 20000
//! step0 = 0.4
//! warm_start = true
//!
//! [output]
//! directory = out
//! ```
//!
//! Relative paths are resolved against the config file's directory.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use rbirg_core::imaging::Boundary;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum ImageSource {
    File(PathBuf),
    Synthetic { width: usize, height: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelSource {
    File(PathBuf),
    Gaussian { size: usize, sigma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemConfig {
    Deblur {
        image: ImageSource,
        kernel: KernelSource,
        boundary: Boundary,
        noise: f64,
    },
    LeastSquares {
        matrix: PathBuf,
        rhs: PathBuf,
    },
    Penalty {
        instance: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlocksConfig {
    Count(usize),
    Sizes(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exponents {
    Delta(f64),
    Explicit { a: f64, b: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    /// `(γ0, η0)`; `None` selects the default split for the problem.
    pub steps: Option<(f64, f64)>,
    pub exponents: Exponents,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub iterations: u64,
    pub seed: u64,
    /// `None` means log-spaced checkpoints.
    pub checkpoints: Option<Vec<u64>>,
    pub snapshots: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Rbirg,
    FullIrg,
    TwoLoop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoLoopConfig {
    pub etas: Vec<f64>,
    pub inner_iterations: u64,
    pub step0: f64,
    pub warm_start: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub blocks: BlocksConfig,
    /// `None` means uniform.
    pub probabilities: Option<Vec<f64>>,
    pub schedule: ScheduleConfig,
    pub run: RunConfig,
    pub mode: Mode,
    pub two_loop: Option<TwoLoopConfig>,
    pub output: PathBuf,
}

const SECTIONS: [(&str, &[&str]); 7] = [
    (
        "problem",
        &[
            "kind",
            "image",
            "synthetic",
            "kernel",
            "kernel_size",
            "kernel_sigma",
            "boundary",
            "noise",
            "matrix",
            "rhs",
            "instance",
        ],
    ),
    ("blocks", &["count", "sizes", "probabilities"]),
    ("schedule", &["gamma0", "eta0", "delta", "a", "b", "r"]),
    ("run", &["iterations", "seed", "checkpoints", "snapshots"]),
    ("mode", &["mode"]),
    ("two_loop", &["etas", "inner_iterations", "step0", "warm_start"]),
    ("output", &["directory"]),
];

fn config_err(field: &str, message: impl Display) -> CliError {
    CliError::Config {
        field: field.to_string(),
        message: message.to_string(),
    }
}

/// Key lookup over one parsed file, with field names for error messages.
struct Fields {
    values: BTreeMap<String, String>,
}

impl Fields {
    fn from_ini(ini: &Ini) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(config_err(k, "key outside of any section"));
                }
                continue;
            };
            let Some((_, keys)) = SECTIONS.iter().find(|(s, _)| *s == section) else {
                return Err(config_err(section, "unknown section"));
            };
            for (k, v) in props.iter() {
                let field = format!("{section}.{k}");
                if !keys.contains(&k) {
                    return Err(config_err(&field, "unknown key"));
                }
                if values.insert(field.clone(), v.trim().to_string()).is_some() {
                    return Err(config_err(&field, "given more than once"));
                }
            }
        }
        Ok(Self { values })
    }

    fn raw(&self, field: &str) -> Option<&str> {
        self.values.get(field).map(String::as_str)
    }

    fn has(&self, field: &str) -> bool {
        self.values.contains_key(field)
    }

    fn required(&self, field: &str) -> Result<&str, CliError> {
        self.raw(field).ok_or_else(|| config_err(field, "missing"))
    }

    fn parse<T: FromStr>(&self, field: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        self.raw(field)
            .map(|v| v.parse::<T>().map_err(|e| config_err(field, format!("{v:?}: {e}"))))
            .transpose()
    }

    fn list<T: FromStr>(&self, field: &str) -> Result<Option<Vec<T>>, CliError>
    where
        T::Err: Display,
    {
        self.raw(field).map(|v| parse_list(field, v)).transpose()
    }
}

fn parse_list<T: FromStr>(field: &str, v: &str) -> Result<Vec<T>, CliError>
where
    T::Err: Display,
{
    let items: Vec<T> = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| config_err(field, format!("{s:?}: {e}"))))
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err(config_err(field, "empty list"));
    }
    Ok(items)
}

fn positive(field: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(config_err(field, format!("must be positive, got {v}")))
    }
}

fn parse_boundary(field: &str, v: &str) -> Result<Boundary, CliError> {
    match v {
        "zero" => Ok(Boundary::Zero),
        "replicate" => Ok(Boundary::Replicate),
        other => Err(config_err(field, format!("expected zero or replicate, got {other:?}"))),
    }
}

fn boundary_name(b: Boundary) -> &'static str {
    match b {
        Boundary::Zero => "zero",
        Boundary::Replicate => "replicate",
    }
}

fn parse_size(field: &str, v: &str) -> Result<(usize, usize), CliError> {
    let (w, h) = v
        .split_once('x')
        .ok_or_else(|| config_err(field, format!("expected WIDTHxHEIGHT, got {v:?}")))?;
    let parse = |s: &str| {
        s.trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| config_err(field, format!("bad dimension {s:?}")))
    };
    Ok((parse(w)?, parse(h)?))
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let ini = Ini::load_from_str(text).map_err(|e| config_err("config", e))?;
        let f = Fields::from_ini(&ini)?;

        let problem = match f.required("problem.kind")? {
            "deblur" => {
                let image = match (f.raw("problem.image"), f.raw("problem.synthetic")) {
                    (Some(p), None) => ImageSource::File(PathBuf::from(p)),
                    (None, Some(s)) => {
                        let (width, height) = parse_size("problem.synthetic", s)?;
                        ImageSource::Synthetic { width, height }
                    }
                    (Some(_), Some(_)) => {
                        return Err(config_err("problem.image", "give image or synthetic, not both"))
                    }
                    (None, None) => {
                        return Err(config_err("problem.image", "missing (or set problem.synthetic)"))
                    }
                };
                let kernel = match f.raw("problem.kernel") {
                    Some(p) => {
                        if f.has("problem.kernel_size") || f.has("problem.kernel_sigma") {
                            return Err(config_err(
                                "problem.kernel",
                                "kernel file conflicts with kernel_size/kernel_sigma",
                            ));
                        }
                        KernelSource::File(PathBuf::from(p))
                    }
                    None => KernelSource::Gaussian {
                        size: f.parse("problem.kernel_size")?.unwrap_or(5),
                        sigma: positive(
                            "problem.kernel_sigma",
                            f.parse("problem.kernel_sigma")?.unwrap_or(1.0),
                        )?,
                    },
                };
                let boundary = match f.raw("problem.boundary") {
                    Some(v) => parse_boundary("problem.boundary", v)?,
                    None => Boundary::Replicate,
                };
                let noise: f64 = f.parse("problem.noise")?.unwrap_or(0.0);
                if !(noise >= 0.0 && noise.is_finite()) {
                    return Err(config_err("problem.noise", format!("must be >= 0, got {noise}")));
                }
                ProblemConfig::Deblur {
                    image,
                    kernel,
                    boundary,
                    noise,
                }
            }
            "least_squares" => ProblemConfig::LeastSquares {
                matrix: PathBuf::from(f.required("problem.matrix")?),
                rhs: PathBuf::from(f.required("problem.rhs")?),
            },
            "penalty" => ProblemConfig::Penalty {
                instance: f.required("problem.instance")?.to_string(),
            },
            other => {
                return Err(config_err(
                    "problem.kind",
                    format!("expected deblur, least_squares or penalty, got {other:?}"),
                ))
            }
        };

        let blocks = match (f.parse::<usize>("blocks.count")?, f.list::<usize>("blocks.sizes")?) {
            (Some(_), Some(_)) => return Err(config_err("blocks.sizes", "conflicts with blocks.count")),
            (Some(0), None) => return Err(config_err("blocks.count", "must be >= 1")),
            (Some(d), None) => BlocksConfig::Count(d),
            (None, Some(s)) => BlocksConfig::Sizes(s),
            (None, None) => BlocksConfig::Count(1),
        };
        let probabilities = match f.raw("blocks.probabilities") {
            None | Some("uniform") => None,
            Some(v) => Some(parse_list::<f64>("blocks.probabilities", v)?),
        };

        let steps = match (f.parse::<f64>("schedule.gamma0")?, f.parse::<f64>("schedule.eta0")?) {
            (Some(g), Some(e)) => Some((positive("schedule.gamma0", g)?, positive("schedule.eta0", e)?)),
            (None, None) => None,
            (Some(_), None) => return Err(config_err("schedule.eta0", "required when gamma0 is set")),
            (None, Some(_)) => return Err(config_err("schedule.gamma0", "required when eta0 is set")),
        };
        let exponents = match (
            f.parse::<f64>("schedule.delta")?,
            f.parse::<f64>("schedule.a")?,
            f.parse::<f64>("schedule.b")?,
        ) {
            (Some(d), None, None) => Exponents::Delta(d),
            (None, Some(a), Some(b)) => Exponents::Explicit { a, b },
            (None, None, None) => Exponents::Delta(0.25),
            (Some(_), _, _) => return Err(config_err("schedule.delta", "conflicts with schedule.a/b")),
            (None, None, Some(_)) => return Err(config_err("schedule.a", "missing (b is set)")),
            (None, Some(_), None) => return Err(config_err("schedule.b", "missing (a is set)")),
        };
        let r = f.parse("schedule.r")?.unwrap_or(0.5);

        let iterations: u64 = f.parse("run.iterations")?.ok_or_else(|| config_err("run.iterations", "missing"))?;
        if iterations == 0 {
            return Err(config_err("run.iterations", "must be >= 1"));
        }
        let checkpoints = match f.raw("run.checkpoints") {
            None | Some("default") => None,
            Some(v) => Some(parse_list::<u64>("run.checkpoints", v)?),
        };
        let run = RunConfig {
            iterations,
            seed: f.parse("run.seed")?.unwrap_or(0),
            checkpoints,
            snapshots: match f.raw("run.snapshots") {
                None | Some("none") => Vec::new(),
                Some(v) => parse_list("run.snapshots", v)?,
            },
        };

        let mode = match f.raw("mode.mode").unwrap_or("rbirg") {
            "rbirg" => Mode::Rbirg,
            "full_irg" => Mode::FullIrg,
            "two_loop" => Mode::TwoLoop,
            other => {
                return Err(config_err(
                    "mode.mode",
                    format!("expected rbirg, full_irg or two_loop, got {other:?}"),
                ))
            }
        };
        let two_loop = if f.has("two_loop.etas") {
            Some(TwoLoopConfig {
                etas: f.list("two_loop.etas")?.unwrap_or_default(),
                inner_iterations: f.parse("two_loop.inner_iterations")?.unwrap_or(20_000),
                step0: positive("two_loop.step0", f.parse("two_loop.step0")?.unwrap_or(0.4))?,
                warm_start: f.parse("two_loop.warm_start")?.unwrap_or(true),
            })
        } else {
            for k in ["inner_iterations", "step0", "warm_start"] {
                let field = format!("two_loop.{k}");
                if f.has(&field) {
                    return Err(config_err("two_loop.etas", format!("missing ({field} is set)")));
                }
            }
            None
        };
        if mode == Mode::TwoLoop && two_loop.is_none() {
            return Err(config_err("two_loop.etas", "missing (mode is two_loop)"));
        }

        let output = PathBuf::from(f.raw("output.directory").unwrap_or("out"));

        let cfg = Self {
            problem,
            blocks,
            probabilities,
            schedule: ScheduleConfig { steps, exponents, r },
            run,
            mode,
            two_loop,
            output,
        };
        cfg.check_snapshots()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err("config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Checkpoints actually recorded by a run.
    pub fn resolved_checkpoints(&self) -> Vec<u64> {
        match &self.run.checkpoints {
            Some(c) => {
                let mut c: Vec<u64> = c.iter().copied().filter(|&k| k <= self.run.iterations).collect();
                c.sort_unstable();
                c.dedup();
                c
            }
            None => rbirg_core::solver::log_checkpoints(self.run.iterations),
        }
    }

    fn check_snapshots(&self) -> Result<(), CliError> {
        if self.run.snapshots.is_empty() {
            return Ok(());
        }
        if !matches!(self.problem, ProblemConfig::Deblur { .. }) {
            return Err(config_err("run.snapshots", "only deblur problems produce snapshots"));
        }
        let cps = self.resolved_checkpoints();
        if let Some(k) = self.run.snapshots.iter().find(|k| !cps.contains(k)) {
            return Err(config_err("run.snapshots", format!("iteration {k} is not a checkpoint")));
        }
        Ok(())
    }

    pub fn to_ini_string(&self) -> String {
        let mut ini = Ini::new();
        {
            let mut s = ini.with_section(Some("problem"));
            match &self.problem {
                ProblemConfig::Deblur {
                    image,
                    kernel,
                    boundary,
                    noise,
                } => {
                    s.set("kind", "deblur");
                    match image {
                        ImageSource::File(p) => s.set("image", p.to_string_lossy()),
                        ImageSource::Synthetic { width, height } => {
                            s.set("synthetic", format!("{width}x{height}"))
                        }
                    };
                    match kernel {
                        KernelSource::File(p) => s.set("kernel", p.to_string_lossy()),
                        KernelSource::Gaussian { size, sigma } => s
                            .set("kernel_size", size.to_string())
                            .set("kernel_sigma", sigma.to_string()),
                    };
                    s.set("boundary", boundary_name(*boundary))
                        .set("noise", noise.to_string());
                }
                ProblemConfig::LeastSquares { matrix, rhs } => {
                    s.set("kind", "least_squares")
                        .set("matrix", matrix.to_string_lossy())
                        .set("rhs", rhs.to_string_lossy());
                }
                ProblemConfig::Penalty { instance } => {
                    s.set("kind", "penalty").set("instance", instance.as_str());
                }
            }
        }
        {
            let mut s = ini.with_section(Some("blocks"));
            match &self.blocks {
                BlocksConfig::Count(d) => s.set("count", d.to_string()),
                BlocksConfig::Sizes(v) => s.set("sizes", join(v)),
            };
            match &self.probabilities {
                None => s.set("probabilities", "uniform"),
                Some(p) => s.set("probabilities", join(p)),
            };
        }
        {
            let mut s = ini.with_section(Some("schedule"));
            if let Some((g, e)) = self.schedule.steps {
                s.set("gamma0", g.to_string()).set("eta0", e.to_string());
            }
            match self.schedule.exponents {
                Exponents::Delta(d) => s.set("delta", d.to_string()),
                Exponents::Explicit { a, b } => s.set("a", a.to_string()).set("b", b.to_string()),
            };
            s.set("r", self.schedule.r.to_string());
        }
        ini.with_section(Some("run"))
            .set("iterations", self.run.iterations.to_string())
            .set("seed", self.run.seed.to_string())
            .set(
                "checkpoints",
                self.run.checkpoints.as_deref().map(join).unwrap_or_else(|| "default".into()),
            )
            .set(
                "snapshots",
                if self.run.snapshots.is_empty() { "none".into() } else { join(&self.run.snapshots) },
            );
        let mode = match self.mode {
            Mode::Rbirg => "rbirg",
            Mode::FullIrg => "full_irg",
            Mode::TwoLoop => "two_loop",
        };
        ini.with_section(Some("mode")).set("mode", mode);
        if let Some(t) = &self.two_loop {
            ini.with_section(Some("two_loop"))
                .set("etas", join(&t.etas))
                .set("inner_iterations", t.inner_iterations.to_string())
                .set("step0", t.step0.to_string())
                .set("warm_start", t.warm_start.to_string());
        }
        ini.with_section(Some("output"))
            .set("directory", self.output.to_string_lossy());
        let mut buf = Vec::new();
        ini.write_to(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("ini output is UTF-8")
    }
}
