//! Shared argument structures and parameter-lattice resolution.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;

use riesz_lab::source::{alpha_threshold, PValue, Params, SourceMeasure};

#[derive(Args, Debug, Clone)]
pub struct ParamArgs {
    /// Dimension(s) n >= 3 (comma separated for a lattice sweep)
    #[arg(long, value_delimiter = ',', default_value = "3")]
    pub n: Vec<usize>,

    /// Exponent(s) p >= 2, or "inf" (comma separated)
    #[arg(long, value_delimiter = ',', default_value = "2")]
    pub p: Vec<String>,

    /// Exponent(s) q > 0 (comma separated)
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub q: Vec<f64>,

    /// Kernel exponent(s) alpha, or "auto" for the regime boundary
    /// ((n-p)/(p-2+q); 0 for p = n; -1 for p = inf)
    #[arg(long, value_delimiter = ',', default_value = "auto")]
    pub alpha: Vec<String>,

    /// JSON parameter file {"n": .., "p": .. | "inf", "q": .., "alpha": ..};
    /// overrides --n/--p/--q/--alpha
    #[arg(long)]
    pub params: Option<PathBuf>,
}

impl ParamArgs {
    /// Expands the flag lattice (or the params file) into concrete parameter
    /// sets, resolving "auto" alphas at each lattice point.
    pub fn resolve(&self) -> Result<Vec<Params>> {
        if let Some(path) = &self.params {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read params file {}", path.display()))?;
            let params: Params = serde_json::from_str(&text)
                .with_context(|| format!("bad params file {}", path.display()))?;
            return Ok(vec![params]);
        }
        let mut out = Vec::new();
        for &n in &self.n {
            for p_raw in &self.p {
                let p = parse_p(p_raw)?;
                for &q in &self.q {
                    for a_raw in &self.alpha {
                        let alpha = resolve_alpha(a_raw, n, p, q)?;
                        out.push(
                            Params::new(n, p, q, alpha)
                                .with_context(|| format!("invalid parameters n={n} p={p_raw} q={q} alpha={a_raw}"))?,
                        );
                    }
                }
            }
        }
        if out.is_empty() {
            bail!("empty parameter lattice");
        }
        Ok(out)
    }
}

pub fn parse_p(raw: &str) -> Result<PValue> {
    if raw == "inf" {
        Ok(PValue::Infinity)
    } else {
        let v: f64 = raw
            .parse()
            .with_context(|| format!("p must be a number or \"inf\", got {raw:?}"))?;
        Ok(PValue::Finite(v))
    }
}

fn resolve_alpha(raw: &str, n: usize, p: PValue, q: f64) -> Result<f64> {
    if raw == "auto" {
        match p {
            PValue::Infinity => Ok(-1.0),
            PValue::Finite(pv) if pv == n as f64 => Ok(0.0),
            _ => {
                let probe = Params::new(n, p, q, 0.0)?;
                Ok(alpha_threshold(&probe)?)
            }
        }
    } else {
        raw.parse()
            .with_context(|| format!("alpha must be a number or \"auto\", got {raw:?}"))
    }
}

#[derive(Args, Debug, Clone)]
pub struct CloudArgs {
    /// Number of low-discrepancy cloud points
    #[arg(long = "cloud-count", default_value_t = 1000)]
    pub cloud_count: usize,

    /// Seed for the deterministic cloud (and any sampling)
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Minimum distance between cloud points and atoms
    #[arg(long = "min-atom-distance", default_value_t = 1e-3)]
    pub min_atom_distance: f64,
}

impl CloudArgs {
    pub fn to_spec(&self) -> riesz_lab::cloud::SampleSpec {
        riesz_lab::cloud::SampleSpec {
            count: self.cloud_count,
            seed: self.seed,
            bbox: None,
            min_atom_distance: self.min_atom_distance,
            stress: true,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct SourceArg {
    /// Measure file: {"atoms": [{"A": w, "a": [..]}]} or
    /// {"grid": {"origin": [..], "h": .., "shape": [..], "values": [..]}}
    #[arg(long)]
    pub source: PathBuf,
}

impl SourceArg {
    pub fn load(&self) -> Result<SourceMeasure> {
        let text = std::fs::read_to_string(&self.source)
            .with_context(|| format!("cannot read measure file {}", self.source.display()))?;
        Ok(SourceMeasure::from_json(&text)?)
    }
}
