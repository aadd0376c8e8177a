//! JSON field files.
//!
//! ```json
//! {"kind": "accelerant", "r": 1, "N": 8, "domain": [-1, 1],
//!  "data": [[[[0.5, 0.0]]], ...], "meta": "h = 0.5"}
//! ```
//!
//! Every complex entry is an `[re, im]` pair and every block is a list of
//! rows. Accelerants hold 4N+1 blocks (r×r) on ξ_k = -1 + k/(2N), potentials
//! hold `[q_plus, q_minus]`, each N+1 blocks, and kernels hold (N+1)² blocks
//! in row-major (i, j) order. A potential may instead be given as N+1 full
//! 2r×2r blocks; the diagonal blocks must then be zero.

use std::fs;
use std::path::Path;

use kreinmap_core::{Accelerant, GridSpec, Kernel2D, Potential, Support, C64};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::exit::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Accelerant,
    Potential,
    Kernel,
}

/// One-sided limits h(0±) of an accelerant that jumps at 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroLimitsFile {
    pub plus: Vec<Vec<[f64; 2]>>,
    pub minus: Vec<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldFile {
    pub kind: Kind,
    pub r: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub domain: Value,
    pub data: Value,
    #[serde(default)]
    pub meta: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zero_limits: Option<ZeroLimitsFile>,
}

pub enum Field {
    Accelerant(Accelerant),
    Potential(Potential),
    Kernel(Kernel2D),
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

fn block_json(n: usize, b: &[C64]) -> Value {
    Value::Array(
        (0..n)
            .map(|a| {
                Value::Array(
                    (0..n)
                        .map(|c| {
                            let z = b[a * n + c];
                            serde_json::json!([z.re, z.im])
                        })
                        .collect(),
                )
            })
            .collect(),
    )
}

fn blocks_json(n: usize, values: &[C64]) -> Value {
    Value::Array(values.chunks(n * n).map(|b| block_json(n, b)).collect())
}

fn parse_complex(v: &Value, at: &str) -> Result<C64, CliError> {
    let pair = v
        .as_array()
        .filter(|p| p.len() == 2)
        .ok_or_else(|| bad(format!("{at}: expected an [re, im] pair")))?;
    let num = |x: &Value| {
        x.as_f64()
            .filter(|f| f.is_finite())
            .ok_or_else(|| bad(format!("{at}: entries must be finite numbers")))
    };
    Ok(C64::new(num(&pair[0])?, num(&pair[1])?))
}

fn parse_block(v: &Value, n: usize, at: &str, out: &mut Vec<C64>) -> Result<(), CliError> {
    let rows = v
        .as_array()
        .filter(|r| r.len() == n)
        .ok_or_else(|| bad(format!("{at}: expected {n} rows")))?;
    for (a, row) in rows.iter().enumerate() {
        let cols = row
            .as_array()
            .filter(|c| c.len() == n)
            .ok_or_else(|| bad(format!("{at}: row {a} needs {n} entries")))?;
        for z in cols {
            out.push(parse_complex(z, at)?);
        }
    }
    Ok(())
}

fn parse_blocks(v: &Value, count: usize, n: usize, what: &str) -> Result<Vec<C64>, CliError> {
    let list = v
        .as_array()
        .ok_or_else(|| bad(format!("{what}: expected a list of blocks")))?;
    if list.len() != count {
        return Err(bad(format!("{what}: expected {count} blocks, found {}", list.len())));
    }
    let mut out = Vec::with_capacity(count * n * n);
    for (k, b) in list.iter().enumerate() {
        parse_block(b, n, &format!("{what}[{k}]"), &mut out)?;
    }
    Ok(out)
}

fn domain_for(kind: Kind) -> Value {
    match kind {
        Kind::Accelerant => serde_json::json!([-1, 1]),
        Kind::Potential => serde_json::json!([0, 1]),
        Kind::Kernel => serde_json::json!([[0, 1], [0, 1]]),
    }
}

fn domain_matches(kind: Kind, v: &Value) -> bool {
    match kind {
        Kind::Kernel => serde_json::from_value::<[[f64; 2]; 2]>(v.clone()).ok() == Some([[0.0, 1.0]; 2]),
        Kind::Accelerant => serde_json::from_value::<[f64; 2]>(v.clone()).ok() == Some([-1.0, 1.0]),
        Kind::Potential => serde_json::from_value::<[f64; 2]>(v.clone()).ok() == Some([0.0, 1.0]),
    }
}

impl FieldFile {
    pub fn from_accelerant(h: &Accelerant, meta: impl Into<String>) -> Self {
        let r = h.r();
        FieldFile {
            kind: Kind::Accelerant,
            r,
            n: h.grid().cells(),
            domain: domain_for(Kind::Accelerant),
            data: blocks_json(r, h.values()),
            meta: meta.into(),
            zero_limits: h.zero_limits().map(|z| ZeroLimitsFile {
                plus: to_rows(r, &z.plus),
                minus: to_rows(r, &z.minus),
            }),
        }
    }

    pub fn from_potential(q: &Potential, meta: impl Into<String>) -> Self {
        let r = q.r();
        FieldFile {
            kind: Kind::Potential,
            r,
            n: q.grid().cells(),
            domain: domain_for(Kind::Potential),
            data: Value::Array(vec![blocks_json(r, q.q_plus_all()), blocks_json(r, q.q_minus_all())]),
            meta: meta.into(),
            zero_limits: None,
        }
    }

    /// `r` is the half block size, so the kernel blocks are 2r×2r.
    pub fn from_kernel(k: &Kernel2D, meta: impl Into<String>) -> Self {
        FieldFile {
            kind: Kind::Kernel,
            r: k.n() / 2,
            n: k.grid().cells(),
            domain: domain_for(Kind::Kernel),
            data: blocks_json(k.n(), k.values()),
            meta: meta.into(),
            zero_limits: None,
        }
    }

    pub fn to_field(&self) -> Result<Field, CliError> {
        let grid = GridSpec::new(self.n).map_err(|e| bad(e.to_string()))?;
        if self.r == 0 {
            return Err(bad("r must be at least 1"));
        }
        if !domain_matches(self.kind, &self.domain) {
            return Err(bad(format!(
                "domain {} does not match kind {:?} (expected {})",
                self.domain,
                self.kind,
                domain_for(self.kind)
            )));
        }
        if self.zero_limits.is_some() && self.kind != Kind::Accelerant {
            return Err(bad("zero_limits is only meaningful for accelerants"));
        }
        let r = self.r;
        let core = |e: kreinmap_core::Error| CliError::from(e);
        match self.kind {
            Kind::Accelerant => {
                let v = parse_blocks(&self.data, 4 * self.n + 1, r, "data")?;
                let mut h = Accelerant::new(r, grid, v).map_err(core)?;
                if let Some(z) = &self.zero_limits {
                    let mut p = Vec::new();
                    let mut m = Vec::new();
                    parse_block(&rows_value(&z.plus), r, "zero_limits.plus", &mut p)?;
                    parse_block(&rows_value(&z.minus), r, "zero_limits.minus", &mut m)?;
                    h = h.with_zero_limits(p, m).map_err(core)?;
                }
                Ok(Field::Accelerant(h))
            }
            Kind::Potential => {
                let list = self
                    .data
                    .as_array()
                    .ok_or_else(|| bad("data: expected a list"))?;
                if list.len() == 2 {
                    let p = parse_blocks(&list[0], self.n + 1, r, "data[0] (q_plus)")?;
                    let m = parse_blocks(&list[1], self.n + 1, r, "data[1] (q_minus)")?;
                    Ok(Field::Potential(
                        kreinmap_core::fields::assemble_potential(r, grid, p, m).map_err(core)?,
                    ))
                } else {
                    let full = parse_blocks(&self.data, self.n + 1, 2 * r, "data")?;
                    let mats: Vec<Vec<C64>> = full.chunks(4 * r * r).map(|c| c.to_vec()).collect();
                    Ok(Field::Potential(Potential::from_full(r, grid, &mats).map_err(core)?))
                }
            }
            Kind::Kernel => {
                let n = 2 * r;
                let v = parse_blocks(&self.data, grid.nodes() * grid.nodes(), n, "data")?;
                Ok(Field::Kernel(
                    Kernel2D::from_values(n, grid, Support::Full, v).map_err(core)?,
                ))
            }
        }
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| bad(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string(self).map_err(|e| CliError::Internal(e.to_string()))?;
        fs::write(path, text).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
    }
}

fn to_rows(r: usize, b: &[C64]) -> Vec<Vec<[f64; 2]>> {
    (0..r)
        .map(|a| (0..r).map(|c| [b[a * r + c].re, b[a * r + c].im]).collect())
        .collect()
}

fn rows_value(rows: &[Vec<[f64; 2]>]) -> Value {
    serde_json::to_value(rows).unwrap_or(Value::Null)
}

/// Reads a field and decimates it to `target` cells when given.
pub fn load(path: &Path, target: Option<usize>) -> Result<Field, CliError> {
    let field = FieldFile::read(path)?.to_field()?;
    let Some(target) = target else {
        return Ok(field);
    };
    let n = match &field {
        Field::Accelerant(h) => h.grid().cells(),
        Field::Potential(q) => q.grid().cells(),
        Field::Kernel(k) => k.grid().cells(),
    };
    if target == n {
        return Ok(field);
    }
    if target == 0 || n % target != 0 {
        return Err(bad(format!(
            "cannot resample N={n} to N={target}: only exact decimation to a divisor is supported"
        )));
    }
    let f = n / target;
    Ok(match field {
        Field::Accelerant(h) => Field::Accelerant(h.decimate(f)?),
        Field::Potential(q) => Field::Potential(q.decimate(f)?),
        Field::Kernel(_) => return Err(bad("kernel files cannot be resampled")),
    })
}
