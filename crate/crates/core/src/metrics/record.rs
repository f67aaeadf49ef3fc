use crate::error::{Error, Result, ResultExt};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

/// Who a metrics row describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Participant {
    Client(usize),
    Global,
}

impl fmt::Display for Participant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Participant::Client(i) => write!(f, "{i}"),
            Participant::Global => f.write_str("global"),
        }
    }
}

impl FromStr for Participant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "global" {
            return Ok(Participant::Global);
        }
        s.parse().map(Participant::Client).map_err(|_| format!("{s:?} is neither a client id nor \"global\""))
    }
}

/// One row of `metrics.csv`. Absent values are `None` and written as empty
/// cells.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub round: usize,
    pub local_step: usize,
    pub participant: Participant,
    pub loss: Option<f64>,
    pub eval_loss: Option<f64>,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub excess_risk: Option<f64>,
    pub agg_update_rank: Option<usize>,
    pub svd_tail_mass: Option<f64>,
    pub entropy_wup: Option<f64>,
    pub grad_spectral_norm: Option<f64>,
    pub weight_spectral_norm: Option<f64>,
    pub bound_direct: Option<f64>,
    pub bound_ffalora: Option<f64>,
}

pub const METRICS_COLUMNS: [&str; 16] = [
    "epoch",
    "round",
    "local_step",
    "client_id",
    "loss",
    "eval_loss",
    "accuracy",
    "macro_f1",
    "excess_risk",
    "agg_update_rank",
    "svd_tail_mass",
    "entropy_Wup",
    "grad_spectral_norm",
    "weight_spectral_norm",
    "bound_direct",
    "bound_ffalora",
];

impl MetricsRecord {
    pub fn new(epoch: usize, round: usize, local_step: usize, participant: Participant) -> Self {
        MetricsRecord {
            epoch,
            round,
            local_step,
            participant,
            loss: None,
            eval_loss: None,
            accuracy: None,
            macro_f1: None,
            excess_risk: None,
            agg_update_rank: None,
            svd_tail_mass: None,
            entropy_wup: None,
            grad_spectral_norm: None,
            weight_spectral_norm: None,
            bound_direct: None,
            bound_ffalora: None,
        }
    }

    pub fn is_global(&self) -> bool {
        self.participant == Participant::Global
    }

    fn cells(&self) -> Vec<String> {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            self.epoch.to_string(),
            self.round.to_string(),
            self.local_step.to_string(),
            self.participant.to_string(),
            f(self.loss),
            f(self.eval_loss),
            f(self.accuracy),
            f(self.macro_f1),
            f(self.excess_risk),
            self.agg_update_rank.map(|r| r.to_string()).unwrap_or_default(),
            f(self.svd_tail_mass),
            f(self.entropy_wup),
            f(self.grad_spectral_norm),
            f(self.weight_spectral_norm),
            f(self.bound_direct),
            f(self.bound_ffalora),
        ]
    }

    /// Look up a numeric column by its header name.
    pub fn value(&self, column: &str) -> Option<f64> {
        match column {
            "epoch" => Some(self.epoch as f64),
            "round" => Some(self.round as f64),
            "local_step" => Some(self.local_step as f64),
            "loss" => self.loss,
            "eval_loss" => self.eval_loss,
            "accuracy" => self.accuracy,
            "macro_f1" => self.macro_f1,
            "excess_risk" => self.excess_risk,
            "agg_update_rank" => self.agg_update_rank.map(|r| r as f64),
            "svd_tail_mass" => self.svd_tail_mass,
            "entropy_Wup" => self.entropy_wup,
            "grad_spectral_norm" => self.grad_spectral_norm,
            "weight_spectral_norm" => self.weight_spectral_norm,
            "bound_direct" => self.bound_direct,
            "bound_ffalora" => self.bound_ffalora,
            _ => None,
        }
    }
}

/// Serialize records to CSV bytes (header first).
pub fn metrics_csv_bytes(records: &[MetricsRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_COLUMNS)?;
    for r in records {
        w.write_record(r.cells())?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let bytes = metrics_csv_bytes(records)?;
    let mut f = std::fs::File::create(path).context(|| format!("creating {}", path.display()))?;
    f.write_all(&bytes).context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Parse a metrics file; columns are located by header name.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut rdr = csv::Reader::from_path(path).context(|| format!("opening {}", path.display()))?;
    let header = rdr.headers().context(|| format!("reading {}", path.display()))?.clone();
    let mut pos = [0usize; 16];
    for (slot, col) in pos.iter_mut().zip(METRICS_COLUMNS) {
        *slot = header
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| Error::parse(path.display(), format!("missing column {col:?}")))?;
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let loc = || format!("{}:{line}", path.display());
        let rec = rec.map_err(|e| Error::parse(loc(), e))?;
        let cell = |j: usize| rec.get(pos[j]).unwrap_or("").trim();
        let int = |j: usize| -> Result<usize> {
            cell(j)
                .parse()
                .map_err(|_| Error::parse(loc(), format!("column {:?}: {:?} is not an integer", METRICS_COLUMNS[j], cell(j))))
        };
        let opt = |j: usize| -> Result<Option<f64>> {
            let c = cell(j);
            if c.is_empty() {
                return Ok(None);
            }
            c.parse()
                .map(Some)
                .map_err(|_| Error::parse(loc(), format!("column {:?}: {c:?} is not a number", METRICS_COLUMNS[j])))
        };
        let participant = cell(3).parse().map_err(|e: String| Error::parse(loc(), e))?;
        out.push(MetricsRecord {
            epoch: int(0)?,
            round: int(1)?,
            local_step: int(2)?,
            participant,
            loss: opt(4)?,
            eval_loss: opt(5)?,
            accuracy: opt(6)?,
            macro_f1: opt(7)?,
            excess_risk: opt(8)?,
            agg_update_rank: if cell(9).is_empty() { None } else { Some(int(9)?) },
            svd_tail_mass: opt(10)?,
            entropy_wup: opt(11)?,
            grad_spectral_norm: opt(12)?,
            weight_spectral_norm: opt(13)?,
            bound_direct: opt(14)?,
            bound_ffalora: opt(15)?,
        });
    }
    Ok(out)
}
