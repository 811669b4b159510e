//! Experiment configuration files.
//!
//! ```ini
//! [problem]
//! # kind: placement, bandwidth or quadratic
//! kind = placement
//! # one "x y" pair per agent, separated by semicolons
//! targets = 3 5; 6 9; 9 8
//! weights = 100
//!
//! [graph]
//! kind = ring
//! self_weight = 0.5
//!
//! [run]
//! alpha = auto
//! gamma = auto
//! l0 = 10
//! levels = auto
//! rounds = 100
//! mode = quantized
//!
//! [output]
//! dir = out
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ini::Ini;
use qagt_core::engine::Mode;
use qagt_core::RegularityConstants;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSpec {
    Placement {
        targets: Vec<[f64; 2]>,
        weights: Vec<f64>,
    },
    Bandwidth {
        agents: usize,
        reg: f64,
    },
    Quadratic {
        agents: usize,
        dim_x: usize,
        dim_agg: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum GraphSpec {
    Complete,
    Ring { self_weight: f64 },
    File { path: PathBuf },
}

/// A value that is either fixed or resolved by the tuner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Auto<T> {
    Auto,
    Fixed(T),
}

impl<T: Copy> Auto<T> {
    pub fn fixed(&self) -> Option<T> {
        match self {
            Auto::Auto => None,
            Auto::Fixed(v) => Some(*v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeSpec {
    Quantized,
    Exact,
    Both,
}

impl ModeSpec {
    pub fn modes(self) -> Vec<Mode> {
        match self {
            ModeSpec::Quantized => vec![Mode::Quantized],
            ModeSpec::Exact => vec![Mode::Exact],
            ModeSpec::Both => vec![Mode::Quantized, Mode::Exact],
        }
    }

    fn label(self) -> &'static str {
        match self {
            ModeSpec::Quantized => "quantized",
            ModeSpec::Exact => "exact",
            ModeSpec::Both => "both",
        }
    }
}

impl std::str::FromStr for ModeSpec {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quantized" => Ok(ModeSpec::Quantized),
            "exact" => Ok(ModeSpec::Exact),
            "both" => Ok(ModeSpec::Both),
            other => Err(CliError::Config(format!(
                "mode must be quantized, exact or both, got `{other}`"
            ))),
        }
    }
}

/// Initial decisions: explicit, or drawn uniformly from a box.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Explicit(Vec<f64>),
    Random { seed: u64, lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub alpha: Auto<f64>,
    pub gamma: Auto<f64>,
    pub l0: f64,
    pub levels: Auto<u64>,
    pub rounds: usize,
    pub mode: ModeSpec,
    /// `None` means the origin.
    pub x0: Option<InitialState>,
    pub strict_saturation: bool,
    pub stop_tol: f64,
    pub margin: f64,
    pub gamma_j: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub write_trajectory: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    /// Optimum reported elsewhere, compared against the oracle in summaries.
    pub reported_x_star: Option<Vec<f64>>,
    pub graph: GraphSpec,
    pub run: RunSpec,
    pub constants: Option<RegularityConstants>,
    pub output: OutputSpec,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn parse_list(key: &str, text: &str) -> Result<Vec<f64>> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| bad(format!("`{key}`: `{t}` is not a number"))))
        .collect()
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
}

fn fmt_f(x: f64) -> String {
    format!("{x:?}")
}

struct Section<'a> {
    name: &'static str,
    props: Option<&'a ini::Properties>,
    allowed: &'static [&'static str],
}

impl<'a> Section<'a> {
    fn new(ini: &'a Ini, name: &'static str, allowed: &'static [&'static str]) -> Result<Self> {
        let props = ini.section(Some(name));
        if let Some(p) = props {
            for (k, _) in p.iter() {
                if !allowed.contains(&k) {
                    return Err(bad(format!("unknown key `{k}` in [{name}]")));
                }
            }
        }
        Ok(Self { name, props, allowed })
    }

    fn get(&self, key: &str) -> Option<&'a str> {
        debug_assert!(self.allowed.contains(&key));
        self.props.and_then(|p| p.get(key)).map(str::trim)
    }

    fn require(&self, key: &str) -> Result<&'a str> {
        self.get(key)
            .ok_or_else(|| bad(format!("missing `{key}` in [{}]", self.name)))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| bad(format!("[{}] `{key}`: cannot parse `{v}`", self.name)))
            })
            .transpose()
    }

    fn auto<T: std::str::FromStr>(&self, key: &str) -> Result<Auto<T>> {
        match self.get(key) {
            None | Some("auto") => Ok(Auto::Auto),
            Some(_) => Ok(Auto::Fixed(self.parse(key)?.expect("key present"))),
        }
    }

    fn flag(&self, key: &str) -> Result<Option<bool>> {
        self.get(key)
            .map(|v| match v {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(bad(format!("[{}] `{key}` must be true or false", self.name))),
            })
            .transpose()
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        // relative matrix paths are taken relative to the config file
        if let GraphSpec::File { path: m } = &mut cfg.graph {
            if m.is_relative() {
                if let Some(dir) = path.parent() {
                    *m = dir.join(&*m);
                }
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| bad(e.to_string()))?;
        for name in ini.sections().flatten() {
            if !["problem", "graph", "run", "constants", "output"].contains(&name) {
                return Err(bad(format!("unknown section [{name}]")));
            }
        }

        let p = Section::new(
            &ini,
            "problem",
            &["kind", "targets", "weights", "agents", "reg", "dim_x", "dim_agg", "seed", "reported_x_star"],
        )?;
        let problem = match p.require("kind")? {
            "placement" => {
                let targets = p
                    .require("targets")?
                    .split(';')
                    .filter(|t| !t.trim().is_empty())
                    .map(|pair| match parse_list("targets", pair)?.as_slice() {
                        [x, y] => Ok([*x, *y]),
                        _ => Err(bad(format!("`targets`: `{}` is not an x y pair", pair.trim()))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                let mut weights = parse_list("weights", p.get("weights").unwrap_or("100"))?;
                if weights.len() == 1 {
                    weights = vec![weights[0]; targets.len()];
                }
                if weights.len() != targets.len() {
                    return Err(bad("`weights` needs one value or one per target"));
                }
                ProblemSpec::Placement { targets, weights }
            }
            "bandwidth" => ProblemSpec::Bandwidth {
                agents: p.parse("agents")?.ok_or_else(|| bad("missing `agents` in [problem]"))?,
                reg: p.parse("reg")?.unwrap_or(0.0),
            },
            "quadratic" => ProblemSpec::Quadratic {
                agents: p.parse("agents")?.ok_or_else(|| bad("missing `agents` in [problem]"))?,
                dim_x: p.parse("dim_x")?.unwrap_or(2),
                dim_agg: p.parse("dim_agg")?.unwrap_or(1),
                seed: p.parse("seed")?.unwrap_or(0),
            },
            other => return Err(bad(format!("unknown problem kind `{other}`"))),
        };
        let reported_x_star = p
            .get("reported_x_star")
            .map(|v| parse_list("reported_x_star", v))
            .transpose()?;

        let g = Section::new(&ini, "graph", &["kind", "self_weight", "path"])?;
        let graph = match g.get("kind").unwrap_or("complete") {
            "complete" => GraphSpec::Complete,
            "ring" => GraphSpec::Ring {
                self_weight: g.parse("self_weight")?.unwrap_or(0.5),
            },
            "file" => GraphSpec::File {
                path: PathBuf::from(g.require("path")?),
            },
            other => return Err(bad(format!("unknown graph kind `{other}`"))),
        };

        let r = Section::new(
            &ini,
            "run",
            &[
                "alpha",
                "gamma",
                "l0",
                "levels",
                "rounds",
                "mode",
                "x0",
                "seed",
                "x0_box",
                "strict_saturation",
                "stop_tol",
                "margin",
                "gamma_j",
            ],
        )?;
        let x0 = match (r.get("x0"), r.parse::<u64>("seed")?) {
            (Some(_), Some(_)) => return Err(bad("[run] takes either `x0` or `seed`, not both")),
            (Some(v), None) => Some(InitialState::Explicit(parse_list("x0", v)?)),
            (None, Some(seed)) => {
                let (lo, hi) = match parse_list("x0_box", r.get("x0_box").unwrap_or("-5 5"))?.as_slice() {
                    [lo, hi] if lo < hi => (*lo, *hi),
                    _ => return Err(bad("`x0_box` must be `lo hi` with lo < hi")),
                };
                Some(InitialState::Random { seed, lo, hi })
            }
            (None, None) => None,
        };
        let run = RunSpec {
            alpha: r.auto("alpha")?,
            gamma: r.auto("gamma")?,
            l0: r.parse("l0")?.unwrap_or(1.0),
            levels: r.auto("levels")?,
            rounds: r.parse("rounds")?.unwrap_or(100),
            mode: r.get("mode").unwrap_or("quantized").parse()?,
            x0,
            strict_saturation: r.flag("strict_saturation")?.unwrap_or(false),
            stop_tol: r.parse("stop_tol")?.unwrap_or(0.0),
            margin: r.parse("margin")?.unwrap_or(0.5),
            gamma_j: r.parse("gamma_j")?.unwrap_or(0.1),
        };
        if run.rounds == 0 {
            return Err(bad("`rounds` must be at least 1"));
        }

        let c = Section::new(&ini, "constants", &["mu", "l1", "l2", "l3"])?;
        let constants = if c.props.is_some() {
            let get = |k: &str| -> Result<f64> {
                c.parse(k)?.ok_or_else(|| bad(format!("[constants] needs `{k}`")))
            };
            Some(RegularityConstants {
                mu: get("mu")?,
                l1: get("l1")?,
                l2: get("l2")?,
                l3: get("l3")?,
            })
        } else {
            None
        };

        let o = Section::new(&ini, "output", &["dir", "write_trajectory"])?;
        let output = OutputSpec {
            dir: PathBuf::from(o.get("dir").unwrap_or("out")),
            write_trajectory: o.flag("write_trajectory")?.unwrap_or(true),
        };

        Ok(Self {
            problem,
            reported_x_star,
            graph,
            run,
            constants,
            output,
        })
    }

    /// Serializes to the format read by [`ExperimentConfig::parse`].
    pub fn to_ini_string(&self) -> String {
        let mut out = String::from("[problem]\n");
        match &self.problem {
            ProblemSpec::Placement { targets, weights } => {
                let t: Vec<String> = targets.iter().map(|[x, y]| format!("{x:?} {y:?}")).collect();
                writeln!(out, "kind = placement\ntargets = {}", t.join("; ")).unwrap();
                writeln!(out, "weights = {}", fmt_list(weights)).unwrap();
            }
            ProblemSpec::Bandwidth { agents, reg } => {
                writeln!(out, "kind = bandwidth\nagents = {agents}\nreg = {}", fmt_f(*reg)).unwrap();
            }
            ProblemSpec::Quadratic {
                agents,
                dim_x,
                dim_agg,
                seed,
            } => {
                writeln!(
                    out,
                    "kind = quadratic\nagents = {agents}\ndim_x = {dim_x}\ndim_agg = {dim_agg}\nseed = {seed}"
                )
                .unwrap();
            }
        }
        if let Some(x) = &self.reported_x_star {
            writeln!(out, "reported_x_star = {}", fmt_list(x)).unwrap();
        }

        out.push_str("\n[graph]\n");
        match &self.graph {
            GraphSpec::Complete => out.push_str("kind = complete\n"),
            GraphSpec::Ring { self_weight } => {
                writeln!(out, "kind = ring\nself_weight = {}", fmt_f(*self_weight)).unwrap()
            }
            GraphSpec::File { path } => writeln!(out, "kind = file\npath = {}", path.display()).unwrap(),
        }

        let r = &self.run;
        let auto_f = |a: Auto<f64>| a.fixed().map_or("auto".to_string(), fmt_f);
        out.push_str("\n[run]\n");
        writeln!(out, "alpha = {}", auto_f(r.alpha)).unwrap();
        writeln!(out, "gamma = {}", auto_f(r.gamma)).unwrap();
        writeln!(out, "l0 = {}", fmt_f(r.l0)).unwrap();
        writeln!(out, "levels = {}", r.levels.fixed().map_or("auto".to_string(), |l| l.to_string())).unwrap();
        writeln!(out, "rounds = {}", r.rounds).unwrap();
        writeln!(out, "mode = {}", r.mode.label()).unwrap();
        match &r.x0 {
            Some(InitialState::Explicit(x)) => writeln!(out, "x0 = {}", fmt_list(x)).unwrap(),
            Some(InitialState::Random { seed, lo, hi }) => {
                writeln!(out, "seed = {seed}\nx0_box = {lo:?} {hi:?}").unwrap()
            }
            None => {}
        }
        writeln!(out, "strict_saturation = {}", r.strict_saturation).unwrap();
        writeln!(out, "stop_tol = {}", fmt_f(r.stop_tol)).unwrap();
        writeln!(out, "margin = {}", fmt_f(r.margin)).unwrap();
        writeln!(out, "gamma_j = {}", fmt_f(r.gamma_j)).unwrap();

        if let Some(c) = &self.constants {
            writeln!(
                out,
                "\n[constants]\nmu = {}\nl1 = {}\nl2 = {}\nl3 = {}",
                fmt_f(c.mu),
                fmt_f(c.l1),
                fmt_f(c.l2),
                fmt_f(c.l3)
            )
            .unwrap();
        }

        writeln!(
            out,
            "\n[output]\ndir = {}\nwrite_trajectory = {}",
            self.output.dir.display(),
            self.output.write_trajectory
        )
        .unwrap();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PLACEMENT: &str = "
[problem]
kind = placement
targets = 3 5; 6 9; 9 8; 6 2; 9 2
weights = 100

[graph]
kind = ring
self_weight = 0.4

[run]
alpha = 0.01
gamma = auto
l0 = 10
levels = 10
rounds = 50
mode = both
";

    #[test]
    fn parses_placement() {
        let cfg = ExperimentConfig::parse(PLACEMENT).unwrap();
        match &cfg.problem {
            ProblemSpec::Placement { targets, weights } => {
                assert_eq!(targets.len(), 5);
                assert_eq!(targets[1], [6.0, 9.0]);
                assert_eq!(weights, &vec![100.0; 5]);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(cfg.graph, GraphSpec::Ring { self_weight: 0.4 });
        assert_eq!(cfg.run.alpha, Auto::Fixed(0.01));
        assert_eq!(cfg.run.gamma, Auto::Auto);
        assert_eq!(cfg.run.levels, Auto::Fixed(10));
        assert_eq!(cfg.run.mode, ModeSpec::Both);
        assert_eq!(cfg.output.dir, PathBuf::from("out"));
    }

    #[test]
    fn round_trip() {
        let cfg = ExperimentConfig::parse(PLACEMENT).unwrap();
        assert_eq!(ExperimentConfig::parse(&cfg.to_ini_string()).unwrap(), cfg);

        let text = "[problem]\nkind = quadratic\nagents = 4\nseed = 9\nreported_x_star = 1 2\n\
                    [graph]\nkind = file\npath = m.txt\n\
                    [run]\nseed = 3\nx0_box = -1 2\nstrict_saturation = true\n\
                    [constants]\nmu = 1\nl1 = 2\nl2 = 0.5\nl3 = 0.1\n\
                    [output]\ndir = elsewhere\nwrite_trajectory = false\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(
            cfg.run.x0,
            Some(InitialState::Random {
                seed: 3,
                lo: -1.0,
                hi: 2.0
            })
        );
        assert_eq!(ExperimentConfig::parse(&cfg.to_ini_string()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        let cases = [
            "[problem]\nkind = nope\n",
            "[problem]\nkind = bandwidth\n",
            "[problem]\nkind = bandwidth\nagents = 3\n[run]\nrounds = 0\n",
            "[problem]\nkind = bandwidth\nagents = 3\n[run]\nmode = fast\n",
            "[problem]\nkind = bandwidth\nagents = 3\n[run]\ntypo = 1\n",
            "[problem]\nkind = bandwidth\nagents = 3\n[extra]\n",
            "[problem]\nkind = placement\ntargets = 1 2 3\n",
            "[problem]\nkind = bandwidth\nagents = 3\n[run]\nx0 = 1 2 3\nseed = 4\n",
            "[problem]\nkind = bandwidth\nagents = 3\n[constants]\nmu = 1\n",
        ];
        for text in cases {
            let err = ExperimentConfig::parse(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}");
        }
    }
}
