use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str =
    "timestep,episode_return,critic_loss_real,actor_loss,alpha,model_nll_holdout,meta_loss,w_p25,w_p50,w_p75";

/// One row per finished episode. `None` fields are written empty.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsRecord {
    pub timestep: usize,
    pub episode_return: f64,
    pub critic_loss_real: Option<f64>,
    pub actor_loss: Option<f64>,
    pub alpha: Option<f64>,
    pub model_nll_holdout: Option<f64>,
    pub meta_loss: Option<f64>,
    pub weight_quartiles: Option<[f64; 3]>,
}

/// Plain decimal with nine significant digits, trailing zeros trimmed.
pub fn format_sig9(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.8e}", v);
    let (mant, exp) = sci.split_once('e').expect("scientific notation");
    let exp: i32 = exp.parse().expect("exponent");
    let neg = mant.starts_with('-');
    let digits: String = mant.chars().filter(|c| c.is_ascii_digit()).collect();
    let point = exp + 1;
    let mut out = if point <= 0 {
        format!("0.{}{}", "0".repeat((-point) as usize), digits)
    } else if point as usize >= digits.len() {
        format!("{}{}", digits, "0".repeat(point as usize - digits.len()))
    } else {
        format!("{}.{}", &digits[..point as usize], &digits[point as usize..])
    };
    if out.contains('.') {
        while out.ends_with('0') {
            out.pop();
        }
        if out.ends_with('.') {
            out.pop();
        }
    }
    if neg {
        out.insert(0, '-');
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(format_sig9).unwrap_or_default()
}

impl MetricsRecord {
    pub fn to_csv_row(&self) -> String {
        let q = self.weight_quartiles;
        [
            self.timestep.to_string(),
            format_sig9(self.episode_return),
            opt(self.critic_loss_real),
            opt(self.actor_loss),
            opt(self.alpha),
            opt(self.model_nll_holdout),
            opt(self.meta_loss),
            opt(q.map(|q| q[0])),
            opt(q.map(|q| q[1])),
            opt(q.map(|q| q[2])),
        ]
        .join(",")
    }
}

/// Linear-interpolation quantile of unsorted data.
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = p * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn quartiles(xs: &[f64]) -> Option<[f64; 3]> {
    if xs.is_empty() {
        return None;
    }
    Some([quantile(xs, 0.25), quantile(xs, 0.5), quantile(xs, 0.75)])
}

/// Creates `path` with the header when it does not exist yet.
pub fn ensure_metrics_file(path: &Path) -> Result<()> {
    if !path.exists() {
        let mut f = File::create(path)?;
        writeln!(f, "{METRICS_HEADER}")?;
    }
    Ok(())
}

pub fn append_metrics(path: &Path, rec: &MetricsRecord) -> Result<()> {
    let f = OpenOptions::new().append(true).open(path)?;
    let mut w = BufWriter::new(f);
    writeln!(w, "{}", rec.to_csv_row())?;
    w.flush()?;
    Ok(())
}

impl MetricsRecord {
    pub fn parse_row(line: &str) -> Result<Self> {
        let bad = || Error::Config(format!("malformed metrics row {line:?}"));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != METRICS_HEADER.split(',').count() {
            return Err(bad());
        }
        let num = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad())
            }
        };
        let q = [num(f[7])?, num(f[8])?, num(f[9])?];
        Ok(Self {
            timestep: f[0].parse().map_err(|_| bad())?,
            episode_return: num(f[1])?.ok_or_else(bad)?,
            critic_loss_real: num(f[2])?,
            actor_loss: num(f[3])?,
            alpha: num(f[4])?,
            model_nll_holdout: num(f[5])?,
            meta_loss: num(f[6])?,
            weight_quartiles: match q {
                [Some(a), Some(b), Some(c)] => Some([a, b, c]),
                _ => None,
            },
        })
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Config(format!("{} lacks the metrics header", path.display())));
    }
    lines.filter(|l| !l.is_empty()).map(MetricsRecord::parse_row).collect()
}
